//! Built-in mechanical systems exposing metric and potential providers with
//! analytic derivatives.
//!
//! Four systems ship: a flat point mass (any dimension), the 1-D pendulum,
//! the planar double pendulum in relative joint angles, and the unit
//! 2-sphere metric. The sphere carries no potential and is not a mechanical
//! system; it is included because it is the smallest metric with nonzero
//! curvature and a known closed form, which makes it the reference case for
//! the curvature tests.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{MetricProvider, PotentialProvider};
use crate::tensor::{Tensor3, Tensor4};

/// A named mechanical system: dimension, mass metric, potential, parameters.
pub struct MechanicalModel {
    name: String,
    dim: usize,
    metric: MetricProvider,
    potential: PotentialProvider,
    params: BTreeMap<String, f64>,
    domain_note: String,
    /// Per-coordinate sampling box used by the invariant suites.
    domain: Vec<(f64, f64)>,
}

impl MechanicalModel {
    /// Assembles a model from custom providers; `domain` is the
    /// per-coordinate box used by the sampling helpers.
    pub fn from_parts(
        name: impl Into<String>,
        metric: MetricProvider,
        potential: PotentialProvider,
        domain: Vec<(f64, f64)>,
    ) -> Self {
        let dim = metric.dim();
        assert_eq!(domain.len(), dim, "domain box must match the dimension");
        Self {
            name: name.into(),
            dim,
            metric,
            potential,
            params: BTreeMap::new(),
            domain_note: String::new(),
            domain,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> &MetricProvider {
        &self.metric
    }

    /// Overrides the finite-difference step scale of the metric derivatives.
    pub fn set_fd_step(&mut self, step: f64) {
        self.metric.fd_step = step;
    }

    pub fn potential(&self) -> &PotentialProvider {
        &self.potential
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn domain_note(&self) -> &str {
        &self.domain_note
    }

    /// Uniform sample from the model's validity box.
    pub fn random_configuration<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.dim, |j, _| {
            let (lo, hi) = self.domain[j];
            rng.random_range(lo..hi)
        })
    }

    /// Deterministic low-discrepancy sample (golden-ratio lattice), used for
    /// construction-time self checks.
    pub fn lattice_configuration(&self, index: usize) -> DVector<f64> {
        // Kronecker sequence with per-coordinate irrational strides.
        const STRIDES: [f64; 8] = [
            0.618_033_988_749_894_9,
            0.414_213_562_373_095_1,
            0.317_837_245_195_782_2,
            0.259_921_049_894_873_16,
            0.221_074_406_000_120_9,
            0.192_540_978_790_736_2,
            0.170_998_575_101_818_25,
            0.153_574_643_965_576_67,
        ];
        DVector::from_fn(self.dim, |j, _| {
            let (lo, hi) = self.domain[j];
            let u = ((index + 1) as f64 * STRIDES[j % STRIDES.len()]).fract();
            lo + u * (hi - lo)
        })
    }
}

/// Parameter schema entry for one model in the catalog.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: &'static str,
    pub default: f64,
}

/// Catalog entry: model name, parameter schema, and whether the model is a
/// genuine mechanical system or a test metric.
#[derive(Debug, Clone)]
pub struct ModelDescriptor {
    pub name: &'static str,
    pub params: Vec<ParamSpec>,
    pub test_only: bool,
}

/// Stable catalog of built-in models with their parameter schemas.
pub fn list_models() -> Vec<ModelDescriptor> {
    vec![
        ModelDescriptor {
            name: "flat",
            params: vec![ParamSpec {
                name: "n",
                default: 2.0,
            }],
            test_only: false,
        },
        ModelDescriptor {
            name: "pendulum",
            params: vec![
                ParamSpec {
                    name: "m",
                    default: 1.0,
                },
                ParamSpec {
                    name: "l",
                    default: 1.0,
                },
                ParamSpec {
                    name: "g",
                    default: 9.81,
                },
            ],
            test_only: false,
        },
        ModelDescriptor {
            name: "double_pendulum",
            params: vec![
                ParamSpec {
                    name: "m1",
                    default: 1.0,
                },
                ParamSpec {
                    name: "m2",
                    default: 1.0,
                },
                ParamSpec {
                    name: "l1",
                    default: 1.0,
                },
                ParamSpec {
                    name: "l2",
                    default: 1.0,
                },
                ParamSpec {
                    name: "g",
                    default: 9.81,
                },
            ],
            test_only: false,
        },
        ModelDescriptor {
            name: "sphere",
            params: vec![],
            test_only: true,
        },
    ]
}

/// Builds a model by name, filling unspecified parameters with defaults.
///
/// Construction spot-checks positive definiteness of the metric on a
/// 100-point lattice over the validity box and, where analytic derivatives
/// are supplied, their agreement with the finite-difference path.
pub fn build_model(name: &str, params: &BTreeMap<String, f64>) -> Result<MechanicalModel> {
    let descriptor = list_models()
        .into_iter()
        .find(|d| d.name == name)
        .ok_or_else(|| {
            let known: Vec<_> = list_models().iter().map(|d| d.name).collect();
            Error::Model(format!(
                "unknown model {name:?}; available: {}",
                known.join(", ")
            ))
        })?;

    for key in params.keys() {
        if !descriptor.params.iter().any(|p| p.name == key) {
            return Err(Error::Model(format!(
                "model {name:?} has no parameter {key:?}"
            )));
        }
    }
    let mut resolved = BTreeMap::new();
    for spec in &descriptor.params {
        let value = params.get(spec.name).copied().unwrap_or(spec.default);
        if !value.is_finite() || value <= 0.0 {
            return Err(Error::Model(format!(
                "parameter {:?} of model {name:?} must be positive and finite, got {value}",
                spec.name
            )));
        }
        resolved.insert(spec.name.to_string(), value);
    }

    let model = match name {
        "flat" => flat_model(resolved)?,
        "pendulum" => pendulum_model(resolved),
        "double_pendulum" => double_pendulum_model(resolved),
        "sphere" => sphere_model(resolved),
        _ => unreachable!(),
    };
    validate_model(&model)?;
    Ok(model)
}

fn validate_model(model: &MechanicalModel) -> Result<()> {
    for i in 0..100 {
        let q = model.lattice_configuration(i);
        model.metric.eval(&q)?;
    }
    if model.metric.has_analytic_partials() {
        for i in 0..20 {
            let q = model.lattice_configuration(i * 5);
            let a = model.metric.mass_partials(&q);
            let f = model.metric.mass_partials_fd(&q);
            let n = model.dim;
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let scale = a[[j, k, l]].abs().max(1.0);
                        if (a[[j, k, l]] - f[[j, k, l]]).abs() > 1e-6 * scale {
                            return Err(Error::Model(format!(
                                "model {:?}: analytic and finite-difference mass derivatives \
                                 disagree at q = {:?} (component [{j},{k},{l}]: {} vs {})",
                                model.name,
                                q.as_slice(),
                                a[[j, k, l]],
                                f[[j, k, l]],
                            )));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn flat_model(params: BTreeMap<String, f64>) -> Result<MechanicalModel> {
    let n_real = params["n"];
    if n_real.fract() != 0.0 || n_real < 1.0 {
        return Err(Error::Model(format!(
            "parameter \"n\" of model \"flat\" must be a positive integer, got {n_real}"
        )));
    }
    let n = n_real as usize;
    let metric = MetricProvider::new(n, move |_q| DMatrix::identity(n, n))
        .with_partials(move |_q| Tensor3::zeros(n))
        .with_second_partials(move |_q| Tensor4::zeros(n));
    Ok(MechanicalModel {
        name: "flat".into(),
        dim: n,
        metric,
        potential: PotentialProvider::zero(),
        params,
        domain_note: "all of R^n".into(),
        domain: vec![(-3.0, 3.0); n],
    })
}

fn pendulum_model(params: BTreeMap<String, f64>) -> MechanicalModel {
    let (m, l, g) = (params["m"], params["l"], params["g"]);
    let ml2 = m * l * l;
    let mgl = m * g * l;
    let metric = MetricProvider::new(1, move |_q| DMatrix::from_element(1, 1, ml2))
        .with_partials(|_q| Tensor3::zeros(1))
        .with_second_partials(|_q| Tensor4::zeros(1));
    let potential = PotentialProvider::new(move |q: &DVector<f64>| -mgl * q[0].cos())
        .with_gradient(move |q| DVector::from_element(1, mgl * q[0].sin()))
        .with_hessian(move |q| DMatrix::from_element(1, 1, mgl * q[0].cos()));
    MechanicalModel {
        name: "pendulum".into(),
        dim: 1,
        metric,
        potential,
        params,
        domain_note: "all angles".into(),
        domain: vec![(-std::f64::consts::PI, std::f64::consts::PI)],
    }
}

/// Planar double pendulum with point masses, in relative joint angles:
/// `q1` is the first link's angle from the vertical, `q2` the second link's
/// angle relative to the first.
fn double_pendulum_model(params: BTreeMap<String, f64>) -> MechanicalModel {
    let (m1, m2, l1, l2, g) = (
        params["m1"],
        params["m2"],
        params["l1"],
        params["l2"],
        params["g"],
    );
    let metric = MetricProvider::new(2, move |q| {
        let c2 = q[1].cos();
        let m11 = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2.0 * m2 * l1 * l2 * c2;
        let m12 = m2 * l2 * l2 + m2 * l1 * l2 * c2;
        let m22 = m2 * l2 * l2;
        DMatrix::from_row_slice(2, 2, &[m11, m12, m12, m22])
    })
    .with_partials(move |q| {
        let s2 = q[1].sin();
        let mut dm = Tensor3::zeros(2);
        dm[[1, 0, 0]] = -2.0 * m2 * l1 * l2 * s2;
        dm[[1, 0, 1]] = -m2 * l1 * l2 * s2;
        dm[[1, 1, 0]] = dm[[1, 0, 1]];
        dm
    })
    .with_second_partials(move |q| {
        let c2 = q[1].cos();
        let mut d2m = Tensor4::zeros(2);
        d2m[[1, 1, 0, 0]] = -2.0 * m2 * l1 * l2 * c2;
        d2m[[1, 1, 0, 1]] = -m2 * l1 * l2 * c2;
        d2m[[1, 1, 1, 0]] = d2m[[1, 1, 0, 1]];
        d2m
    });
    let potential = PotentialProvider::new(move |q: &DVector<f64>| {
        -(m1 + m2) * g * l1 * q[0].cos() - m2 * g * l2 * (q[0] + q[1]).cos()
    })
    .with_gradient(move |q| {
        DVector::from_vec(vec![
            (m1 + m2) * g * l1 * q[0].sin() + m2 * g * l2 * (q[0] + q[1]).sin(),
            m2 * g * l2 * (q[0] + q[1]).sin(),
        ])
    })
    .with_hessian(move |q| {
        let a = m2 * g * l2 * (q[0] + q[1]).cos();
        let h11 = (m1 + m2) * g * l1 * q[0].cos() + a;
        DMatrix::from_row_slice(2, 2, &[h11, a, a, a])
    });
    MechanicalModel {
        name: "double_pendulum".into(),
        dim: 2,
        metric,
        potential,
        params,
        domain_note: "all joint angles (metric positive definite for every q2)".into(),
        domain: vec![
            (-std::f64::consts::PI, std::f64::consts::PI),
            (-std::f64::consts::PI, std::f64::consts::PI),
        ],
    }
}

fn sphere_model(params: BTreeMap<String, f64>) -> MechanicalModel {
    let metric = MetricProvider::new(2, |q| {
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, q[0].sin().powi(2)]))
    })
    .with_partials(|q| {
        let mut dm = Tensor3::zeros(2);
        dm[[0, 1, 1]] = (2.0 * q[0]).sin();
        dm
    })
    .with_second_partials(|q| {
        let mut d2m = Tensor4::zeros(2);
        d2m[[0, 0, 1, 1]] = 2.0 * (2.0 * q[0]).cos();
        d2m
    });
    MechanicalModel {
        name: "sphere".into(),
        dim: 2,
        metric,
        potential: PotentialProvider::zero(),
        params,
        domain_note: "test metric, not a mechanical system; q1 away from the poles".into(),
        domain: vec![(0.3, std::f64::consts::PI - 0.3), (-std::f64::consts::PI, std::f64::consts::PI)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::check_ricci_identity;
    use approx::assert_abs_diff_eq;
    use rand::{rngs::StdRng, SeedableRng};

    fn defaults(name: &str) -> MechanicalModel {
        build_model(name, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn flat_is_identity_metric_zero_potential() {
        let model = defaults("flat");
        assert_eq!(model.dim(), 2);
        let q = DVector::from_vec(vec![1.0, -2.0]);
        assert_eq!(model.metric().mass(&q), DMatrix::identity(2, 2));
        assert_eq!(model.potential().value(&q), 0.0);
        let geom = model.metric().eval(&q).unwrap();
        assert_eq!(geom.christoffel().max_abs(), 0.0);
        assert_eq!(geom.riemann().max_abs(), 0.0);
    }

    #[test]
    fn unit_pendulum_matches_hand_derivation() {
        let mut params = BTreeMap::new();
        params.insert("g".to_string(), 1.0);
        let model = build_model("pendulum", &params).unwrap();
        let q = DVector::from_vec(vec![0.5]);
        assert_eq!(model.metric().mass(&q)[(0, 0)], 1.0);
        assert_abs_diff_eq!(model.potential().value(&q), -0.5f64.cos(), epsilon = 1e-15);
    }

    #[test]
    fn double_pendulum_frozen_mass_table() {
        let model = defaults("double_pendulum");
        // values frozen from an independent symbolic derivation of the
        // two-link kinetic energy
        let m = model.metric().mass(&DVector::zeros(2));
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[5.0, 2.0, 2.0, 1.0]));

        let m = model
            .metric()
            .mass(&DVector::from_vec(vec![0.0, std::f64::consts::FRAC_PI_3]));
        assert_abs_diff_eq!(m[(0, 0)], 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m[(0, 1)], 1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(m[(1, 1)], 1.0, epsilon = 1e-14);

        assert_abs_diff_eq!(
            model.potential().value(&DVector::zeros(2)),
            -29.43,
            epsilon = 1e-12
        );
    }

    /// Independent kinematics oracle: kinetic energy via the metric must equal
    /// the kinetic energy computed from cartesian point-mass velocities.
    #[test]
    fn double_pendulum_kinetic_energy_matches_cartesian_oracle() {
        let model = defaults("double_pendulum");
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let q = model.random_configuration(&mut rng);
            let zeta = DVector::from_vec(vec![
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ]);
            let m = model.metric().mass(&q);
            let k_metric = 0.5 * (zeta.transpose() * &m * &zeta)[(0, 0)];

            // cartesian velocities of both point masses (unit m, l)
            let (q1, q2) = (q[0], q[1]);
            let (w1, w2) = (zeta[0], zeta[0] + zeta[1]);
            let v1 = (q1.cos() * w1, q1.sin() * w1);
            let v2 = (
                v1.0 + (q1 + q2).cos() * w2,
                v1.1 + (q1 + q2).sin() * w2,
            );
            let k_cartesian =
                0.5 * (v1.0 * v1.0 + v1.1 * v1.1) + 0.5 * (v2.0 * v2.0 + v2.1 * v2.1);
            assert_abs_diff_eq!(k_metric, k_cartesian, epsilon = 1e-12);
        }
    }

    #[test]
    fn double_pendulum_metric_positive_definite_for_all_q2() {
        let model = defaults("double_pendulum");
        for i in 0..=200 {
            let q2 = -std::f64::consts::PI + i as f64 * std::f64::consts::PI / 100.0;
            let q = DVector::from_vec(vec![0.0, q2]);
            let m = model.metric().mass(&q);
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            // det M = m2 l1^2 l2^2 (m1 + m2 sin^2 q2), frozen from the
            // symbolic oracle
            assert_abs_diff_eq!(det, 1.0 + q2.sin().powi(2), epsilon = 1e-12);
            assert!(model.metric().eval(&q).is_ok());
        }
    }

    #[test]
    fn ricci_residuals_small_on_random_points() {
        let mut rng = StdRng::seed_from_u64(42);
        for name in ["flat", "pendulum", "double_pendulum", "sphere"] {
            let model = defaults(name);
            for _ in 0..50 {
                let q = model.random_configuration(&mut rng);
                let res = check_ricci_identity(model.metric(), &q).unwrap();
                assert!(
                    res.max() <= 1e-12,
                    "model {name}: residual {} at q = {:?}",
                    res.max(),
                    q.as_slice()
                );
            }
        }
    }

    #[test]
    fn metric_inverse_contracts_to_identity() {
        let mut rng = StdRng::seed_from_u64(9);
        for name in ["flat", "pendulum", "double_pendulum", "sphere"] {
            let model = defaults(name);
            let n = model.dim();
            for _ in 0..20 {
                let q = model.random_configuration(&mut rng);
                let geom = model.metric().eval(&q).unwrap();
                let gap = (geom.metric() * geom.metric_inv() - DMatrix::identity(n, n)).amax();
                assert!(gap <= 1e-12, "model {name}: M M^-1 off identity by {gap}");
            }
        }
    }

    #[test]
    fn models_and_geometry_are_shareable_across_threads() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<MechanicalModel>();
        assert_send_sync::<crate::geometry::GeometryEval>();
        assert_send_sync::<crate::geometry::MetricProvider>();
        assert_send_sync::<crate::geometry::PotentialProvider>();
    }

    #[test]
    fn catalog_round_trips_through_build() {
        for entry in list_models() {
            let model = build_model(entry.name, &BTreeMap::new()).unwrap();
            assert_eq!(model.name(), entry.name);
            for spec in &entry.params {
                assert_eq!(model.params()[spec.name], spec.default);
            }
        }
        assert!(list_models().iter().any(|d| d.name == "double_pendulum"));
        assert!(list_models().iter().any(|d| d.name == "flat"));
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(build_model("rope", &BTreeMap::new()).is_err());

        let mut params = BTreeMap::new();
        params.insert("m1".to_string(), -1.0);
        assert!(build_model("double_pendulum", &params).is_err());

        let mut params = BTreeMap::new();
        params.insert("q".to_string(), 1.0);
        assert!(build_model("pendulum", &params).is_err());

        let mut params = BTreeMap::new();
        params.insert("n".to_string(), 2.5);
        assert!(build_model("flat", &params).is_err());
    }
}
