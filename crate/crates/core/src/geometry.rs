//! Metric geometry induced by a configuration-dependent mass matrix.
//!
//! The kinetic energy `K = (1/2) M_{kl}(q) zeta^k zeta^l` of a mechanical
//! system makes the mass matrix a Riemannian metric on configuration space.
//! This module evaluates everything derived from that metric at a point:
//! the inverse metric, the connection coefficients
//!
//! ```text
//! Gamma^j_ik = (1/2) M^{jl} (d_i M_{lk} + d_k M_{li} - d_l M_{ik}),
//! ```
//!
//! their partial derivatives, the curvature tensor
//!
//! ```text
//! R^j_ikl = d_l Gamma^j_ik - d_k Gamma^j_il
//!         + Gamma^p_ik Gamma^j_pl - Gamma^p_il Gamma^j_pk,
//! ```
//!
//! index raising/lowering, covariant time derivatives of covectors along a
//! trajectory, and the covariant Hessian of a potential.
//!
//! Derivatives of the mass matrix come from analytic callbacks when the model
//! provides them, otherwise from central finite differences with a relative
//! step. All outputs are plain dense arrays; everything is a pure function of
//! its inputs and an evaluated [`GeometryEval`] is immutable and shareable.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tensor::{Tensor3, Tensor4};

/// Default relative step for first finite differences of the mass matrix.
pub const FD_STEP_DEFAULT: f64 = 1e-6;
/// Default relative step when differencing quantities that already contain
/// one derivative (nested differencing loses half the digits).
pub const FD_STEP_SECOND_DEFAULT: f64 = 1e-4;

type MassFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
type MassPartialsFn = dyn Fn(&DVector<f64>) -> Tensor3 + Send + Sync;
type MassSecondPartialsFn = dyn Fn(&DVector<f64>) -> Tensor4 + Send + Sync;
type ScalarFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type HessianFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Source of the mass matrix `M(q)` and its derivatives.
///
/// `mass_partials(q)[[j, k, l]]` is `d_j M_{kl}`, and
/// `mass_second_partials(q)[[i, j, k, l]]` is `d_i d_j M_{kl}`; both are
/// optional and replaced by central differences when absent.
pub struct MetricProvider {
    dim: usize,
    mass: Arc<MassFn>,
    mass_partials: Option<Arc<MassPartialsFn>>,
    mass_second_partials: Option<Arc<MassSecondPartialsFn>>,
    /// Relative finite-difference step for first derivatives of `M`.
    pub fd_step: f64,
    /// Relative finite-difference step used when the connection itself has
    /// to be differenced numerically.
    pub fd_step_second: f64,
}

impl MetricProvider {
    pub fn new(dim: usize, mass: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        Self {
            dim,
            mass: Arc::new(mass),
            mass_partials: None,
            mass_second_partials: None,
            fd_step: FD_STEP_DEFAULT,
            fd_step_second: FD_STEP_SECOND_DEFAULT,
        }
    }

    /// A view of the same mass matrix with the analytic derivative callbacks
    /// dropped, so the finite-difference path can be exercised directly.
    pub fn without_analytic_derivatives(&self) -> MetricProvider {
        MetricProvider {
            dim: self.dim,
            mass: Arc::clone(&self.mass),
            mass_partials: None,
            mass_second_partials: None,
            fd_step: self.fd_step,
            fd_step_second: self.fd_step_second,
        }
    }

    pub fn with_partials(
        mut self,
        partials: impl Fn(&DVector<f64>) -> Tensor3 + Send + Sync + 'static,
    ) -> Self {
        self.mass_partials = Some(Arc::new(partials));
        self
    }

    pub fn with_second_partials(
        mut self,
        second: impl Fn(&DVector<f64>) -> Tensor4 + Send + Sync + 'static,
    ) -> Self {
        self.mass_second_partials = Some(Arc::new(second));
        self
    }

    pub fn with_fd_step(mut self, step: f64) -> Self {
        self.fd_step = step;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_analytic_partials(&self) -> bool {
        self.mass_partials.is_some()
    }

    /// Symmetrized mass matrix at `q`.
    pub fn mass(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let m = (self.mass)(q);
        0.5 * (&m + m.transpose())
    }

    /// `d_j M_{kl}`, analytic when provided, else central differences with
    /// step `fd_step * max(1, |q_j|)`.
    pub fn mass_partials(&self, q: &DVector<f64>) -> Tensor3 {
        if let Some(f) = &self.mass_partials {
            return f(q);
        }
        self.mass_partials_fd(q)
    }

    /// Finite-difference path for `d_j M_{kl}`, exposed so the analytic and
    /// numeric routes can be compared directly.
    pub fn mass_partials_fd(&self, q: &DVector<f64>) -> Tensor3 {
        let n = self.dim;
        let mut dm = Tensor3::zeros(n);
        for j in 0..n {
            let h = self.fd_step * q[j].abs().max(1.0);
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[j] += h;
            qm[j] -= h;
            let diff = (self.mass(&qp) - self.mass(&qm)) / (2.0 * h);
            for k in 0..n {
                for l in 0..n {
                    dm[[j, k, l]] = diff[(k, l)];
                }
            }
        }
        dm
    }

    /// Full geometry bundle at `q`.
    pub fn eval(&self, q: &DVector<f64>) -> Result<GeometryEval> {
        let n = self.dim;
        if q.len() != n {
            return Err(Error::DimensionMismatch {
                what: "configuration",
                expected: n,
                got: q.len(),
            });
        }
        let metric = self.mass(q);
        let metric_inv = invert_spd(&metric, q)?;
        let mass_partials = self.mass_partials(q);
        let christoffel = christoffel(&metric_inv, &mass_partials);
        let christoffel_partials = self.christoffel_partials(q, &metric_inv, &mass_partials)?;
        let riemann = riemann(&christoffel, &christoffel_partials);

        Ok(GeometryEval {
            q: q.clone(),
            metric,
            metric_inv,
            mass_partials,
            christoffel,
            christoffel_partials,
            riemann,
        })
    }

    /// Connection coefficients alone (used internally when differencing the
    /// connection itself).
    fn christoffel_at(&self, q: &DVector<f64>) -> Result<Tensor3> {
        let metric = self.mass(q);
        let metric_inv = invert_spd(&metric, q)?;
        let dm = self.mass_partials(q);
        Ok(christoffel(&metric_inv, &dm))
    }

    /// `d_k Gamma^j_{lm}`, indexed `[[k, j, l, m]]`.
    ///
    /// With analytic second partials of `M` the connection formula is
    /// differentiated by the chain rule, exact given `dM` and `d2M`;
    /// otherwise the connection is central-differenced, which avoids
    /// compounding finite-difference error through the metric inverse.
    fn christoffel_partials(
        &self,
        q: &DVector<f64>,
        metric_inv: &DMatrix<f64>,
        dm: &Tensor3,
    ) -> Result<Tensor4> {
        let n = self.dim;
        if let Some(d2f) = &self.mass_second_partials {
            let d2m = d2f(q);
            // d_m M^{jl} = -M^{jp} (d_m M_{pq}) M^{ql}
            let mut dminv = Tensor3::zeros(n);
            for m in 0..n {
                for j in 0..n {
                    for l in 0..n {
                        let mut s = 0.0;
                        for p in 0..n {
                            for qq in 0..n {
                                s -= metric_inv[(j, p)] * dm[[m, p, qq]] * metric_inv[(qq, l)];
                            }
                        }
                        dminv[[m, j, l]] = s;
                    }
                }
            }
            let mut dgamma = Tensor4::zeros(n);
            for m in 0..n {
                for j in 0..n {
                    for i in 0..n {
                        for k in 0..n {
                            let mut s = 0.0;
                            for l in 0..n {
                                let bracket = dm[[i, l, k]] + dm[[k, l, i]] - dm[[l, i, k]];
                                let dbracket =
                                    d2m[[m, i, l, k]] + d2m[[m, k, l, i]] - d2m[[m, l, i, k]];
                                s += 0.5
                                    * (dminv[[m, j, l]] * bracket + metric_inv[(j, l)] * dbracket);
                            }
                            dgamma[[m, j, i, k]] = s;
                        }
                    }
                }
            }
            Ok(dgamma)
        } else {
            let mut dgamma = Tensor4::zeros(n);
            for m in 0..n {
                let h = self.fd_step_second * q[m].abs().max(1.0);
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[m] += h;
                qm[m] -= h;
                let gp = self.christoffel_at(&qp)?;
                let gm = self.christoffel_at(&qm)?;
                for j in 0..n {
                    for i in 0..n {
                        for k in 0..n {
                            dgamma[[m, j, i, k]] = (gp[[j, i, k]] - gm[[j, i, k]]) / (2.0 * h);
                        }
                    }
                }
            }
            Ok(dgamma)
        }
    }
}

/// Scalar potential `V(q)` with optional analytic derivatives.
pub struct PotentialProvider {
    value: Box<ScalarFn>,
    gradient: Option<Box<GradientFn>>,
    hessian: Option<Box<HessianFn>>,
    fd_step: f64,
    fd_step_second: f64,
}

impl PotentialProvider {
    pub fn new(value: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Box::new(value),
            gradient: None,
            hessian: None,
            fd_step: FD_STEP_DEFAULT,
            fd_step_second: FD_STEP_SECOND_DEFAULT,
        }
    }

    /// Zero potential of any dimension.
    pub fn zero() -> Self {
        Self::new(|_q| 0.0)
            .with_gradient(|q| DVector::zeros(q.len()))
            .with_hessian(|q| DMatrix::zeros(q.len(), q.len()))
    }

    pub fn with_gradient(
        mut self,
        gradient: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Box::new(gradient));
        self
    }

    pub fn with_hessian(
        mut self,
        hessian: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.hessian = Some(Box::new(hessian));
        self
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn value(&self, q: &DVector<f64>) -> f64 {
        (self.value)(q)
    }

    /// Coordinate gradient `d_l V` as a covector.
    pub fn gradient(&self, q: &DVector<f64>) -> DVector<f64> {
        if let Some(g) = &self.gradient {
            return g(q);
        }
        let n = q.len();
        DVector::from_fn(n, |j, _| {
            let h = self.fd_step * q[j].abs().max(1.0);
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[j] += h;
            qm[j] -= h;
            (self.value(&qp) - self.value(&qm)) / (2.0 * h)
        })
    }

    /// Coordinate second partials `d_j d_k V`.
    pub fn hessian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        if let Some(h) = &self.hessian {
            return h(q);
        }
        let n = q.len();
        if self.gradient.is_some() {
            // one central difference of the analytic gradient
            let mut hess = DMatrix::zeros(n, n);
            for j in 0..n {
                let h = self.fd_step * q[j].abs().max(1.0);
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[j] += h;
                qm[j] -= h;
                let col = (self.gradient(&qp) - self.gradient(&qm)) / (2.0 * h);
                for k in 0..n {
                    hess[(j, k)] = col[k];
                }
            }
            return 0.5 * (&hess + hess.transpose());
        }
        // nested central differences of the value
        let mut hess = DMatrix::zeros(n, n);
        for j in 0..n {
            let hj = self.fd_step_second * q[j].abs().max(1.0);
            for k in 0..n {
                let hk = self.fd_step_second * q[k].abs().max(1.0);
                let mut qpp = q.clone();
                let mut qpm = q.clone();
                let mut qmp = q.clone();
                let mut qmm = q.clone();
                qpp[j] += hj;
                qpp[k] += hk;
                qpm[j] += hj;
                qpm[k] -= hk;
                qmp[j] -= hj;
                qmp[k] += hk;
                qmm[j] -= hj;
                qmm[k] -= hk;
                hess[(j, k)] = (self.value(&qpp) - self.value(&qpm) - self.value(&qmp)
                    + self.value(&qmm))
                    / (4.0 * hj * hk);
            }
        }
        0.5 * (&hess + hess.transpose())
    }
}

/// Immutable per-point geometry bundle `{M, M^-1, dM, Gamma, dGamma, R}`.
#[derive(Debug, Clone)]
pub struct GeometryEval {
    q: DVector<f64>,
    metric: DMatrix<f64>,
    metric_inv: DMatrix<f64>,
    /// `[[j, k, l]] = d_j M_{kl}`
    mass_partials: Tensor3,
    /// `[[j, i, k]] = Gamma^j_{ik}`, symmetric in `(i, k)`
    christoffel: Tensor3,
    /// `[[k, j, l, m]] = d_k Gamma^j_{lm}`
    christoffel_partials: Tensor4,
    /// `[[j, i, k, l]] = R^j_{ikl}`, antisymmetric in `(k, l)`
    riemann: Tensor4,
}

impl GeometryEval {
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn point(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn metric(&self) -> &DMatrix<f64> {
        &self.metric
    }

    pub fn metric_inv(&self) -> &DMatrix<f64> {
        &self.metric_inv
    }

    pub fn mass_partials(&self) -> &Tensor3 {
        &self.mass_partials
    }

    pub fn christoffel(&self) -> &Tensor3 {
        &self.christoffel
    }

    pub fn christoffel_partials(&self) -> &Tensor4 {
        &self.christoffel_partials
    }

    pub fn riemann(&self) -> &Tensor4 {
        &self.riemann
    }

    /// Raise an index: `phi^k = M^{kj} xi_j`.
    pub fn raise(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.metric_inv * xi
    }

    /// Lower an index: `phi_j = M_{jk} phi^k`.
    pub fn lower(&self, phi: &DVector<f64>) -> DVector<f64> {
        &self.metric * phi
    }

    /// Curvature contraction `(R_zeta . xi)_j = R^i_{klj} zeta^k zeta^l xi_i`.
    ///
    /// This index placement is the single convention used throughout the
    /// crate; every curvature term in the adjoint equations goes through it.
    pub fn curvature_force(&self, zeta: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(n, |j, _| {
            let mut s = 0.0;
            for i in 0..n {
                if xi[i] == 0.0 {
                    continue;
                }
                for k in 0..n {
                    for l in 0..n {
                        s += self.riemann[[i, k, l, j]] * zeta[k] * zeta[l] * xi[i];
                    }
                }
            }
            s
        })
    }

    /// Covariant time derivative of a covector along a trajectory:
    /// `(d xi / dt)_j = xidot_j - Gamma^k_{jl} xi_k zeta^l`.
    pub fn covariant_time_derivative_covector(
        &self,
        zeta: &DVector<f64>,
        xi: &DVector<f64>,
        xi_dot_coord: &DVector<f64>,
    ) -> DVector<f64> {
        xi_dot_coord - self.christoffel_transport(zeta, xi)
    }

    /// The connection correction `Gamma^k_{jl} xi_k zeta^l` as a covector in `j`.
    pub fn christoffel_transport(&self, zeta: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(n, |j, _| {
            let mut s = 0.0;
            for k in 0..n {
                for l in 0..n {
                    s += self.christoffel[[k, j, l]] * xi[k] * zeta[l];
                }
            }
            s
        })
    }

    /// Quadratic connection term `Gamma^j_{kl} zeta^k zeta^l` as a vector in `j`.
    pub fn christoffel_quadratic(&self, zeta: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(n, |j, _| {
            let mut s = 0.0;
            for k in 0..n {
                for l in 0..n {
                    s += self.christoffel[[j, k, l]] * zeta[k] * zeta[l];
                }
            }
            s
        })
    }

    /// Covariant Hessian `(grad^2 V)_{kl} = d_k d_l V - Gamma^j_{kl} d_j V`.
    pub fn covariant_hessian(&self, potential: &PotentialProvider) -> DMatrix<f64> {
        let n = self.dim();
        let grad = potential.gradient(&self.q);
        let hess = potential.hessian(&self.q);
        DMatrix::from_fn(n, n, |k, l| {
            let mut s = hess[(k, l)];
            for j in 0..n {
                s -= self.christoffel[[j, k, l]] * grad[j];
            }
            s
        })
    }
}

/// Residuals of the two metric-compatibility identities that tie the
/// connection to the derivatives of the metric and of its inverse.
#[derive(Debug, Clone, Copy)]
pub struct RicciResiduals {
    /// `max |d_j M_{kl} - Gamma^p_{jk} M_{lp} - Gamma^p_{jl} M_{kp}|`
    pub lower: f64,
    /// `max |d_j M^{kl} + Gamma^k_{jp} M^{pl} + Gamma^l_{jp} M^{pk}|`
    pub upper: f64,
}

impl RicciResiduals {
    pub fn max(&self) -> f64 {
        self.lower.max(self.upper)
    }
}

/// Evaluates both compatibility identities at `q`, with `dM` taken from the
/// provider's derivative path (analytic or finite differences).
pub fn check_ricci_identity(provider: &MetricProvider, q: &DVector<f64>) -> Result<RicciResiduals> {
    let geom = provider.eval(q)?;
    let n = provider.dim();
    let dm = geom.mass_partials();
    let m = geom.metric();
    let minv = geom.metric_inv();
    let gamma = geom.christoffel();

    let mut lower: f64 = 0.0;
    let mut upper: f64 = 0.0;
    for j in 0..n {
        for k in 0..n {
            for l in 0..n {
                let mut s = dm[[j, k, l]];
                for p in 0..n {
                    s -= gamma[[p, j, k]] * m[(l, p)] + gamma[[p, j, l]] * m[(k, p)];
                }
                lower = lower.max(s.abs());

                // d_j M^{kl} = -(M^-1 dM M^-1) exactly, given dM
                let mut dminv = 0.0;
                for p in 0..n {
                    for qq in 0..n {
                        dminv -= minv[(k, p)] * dm[[j, p, qq]] * minv[(qq, l)];
                    }
                }
                let mut t = dminv;
                for p in 0..n {
                    t += gamma[[k, j, p]] * minv[(p, l)] + gamma[[l, j, p]] * minv[(p, k)];
                }
                upper = upper.max(t.abs());
            }
        }
    }
    Ok(RicciResiduals { lower, upper })
}

fn invert_spd(m: &DMatrix<f64>, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    match m.clone().cholesky() {
        Some(chol) => Ok(chol.inverse()),
        None => Err(Error::DegenerateMetric {
            q: q.iter().copied().collect(),
        }),
    }
}

/// `Gamma^j_{ik}` from the inverse metric and `dM`, stored symmetrized in
/// `(i, k)`.
fn christoffel(metric_inv: &DMatrix<f64>, dm: &Tensor3) -> Tensor3 {
    let n = metric_inv.nrows();
    let raw = |j: usize, i: usize, k: usize| {
        let mut s = 0.0;
        for l in 0..n {
            s += 0.5 * metric_inv[(j, l)] * (dm[[i, l, k]] + dm[[k, l, i]] - dm[[l, i, k]]);
        }
        s
    };
    Tensor3::from_fn(n, |j, i, k| 0.5 * (raw(j, i, k) + raw(j, k, i)))
}

/// `R^j_{ikl}` from the connection and its partials.
fn riemann(gamma: &Tensor3, dgamma: &Tensor4) -> Tensor4 {
    let n = gamma.dim();
    Tensor4::from_fn(n, |j, i, k, l| {
        let mut s = dgamma[[l, j, i, k]] - dgamma[[k, j, i, l]];
        for p in 0..n {
            s += gamma[[p, i, k]] * gamma[[j, p, l]] - gamma[[p, i, l]] * gamma[[j, p, k]];
        }
        s
    })
}
