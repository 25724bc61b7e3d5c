//! Cost integrands `gamma(q, zeta, u)` and the optimality inversion.
//!
//! Three kinds ship, all built from metric contractions so they are invariant
//! under coordinate changes:
//!
//! * `quadratic_control`: `gamma = (1/2) M_{kl} u^k u^l`
//! * `quadratic_control_plus_velocity`:
//!   `gamma = (1/2) M_{kl} u^k u^l + (alpha/2) M_{kl} zeta^k zeta^l`
//! * `quartic_control`: `gamma = (1/4) (M_{kl} u^k u^l)^2`
//!
//! Partial derivatives with respect to `q` are taken as plain coordinate
//! partials; the covariant correction (forced by pairing the `zeta` and `u`
//! partials with covariant variations) is applied in exactly one place,
//! [`CostModel::grad_q_covariant`]. For the shipped kinds that correction
//! cancels the coordinate partial entirely, which is what collapses the
//! general adjoint equation onto the quadratic-cost one.
//!
//! The optimality condition `dgamma/du = xi` defines the control from the
//! adjoint covector. Quadratic kinds invert in closed form (`u = M^{-1} xi`,
//! covariantly the identity); the quartic kind solves
//! `(M_{kl} u^k u^l) u_j = xi_j`, which has the closed form
//! `u = r^{-1/3} M^{-1} xi` with `r = xi^T M^{-1} xi`, polished by a damped
//! Newton iteration warm-started from the previous step's control.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::GeometryEval;

/// Residual tolerance of the optimality inversion, relative to `1 + |xi|`.
pub const INVERSION_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 50;
const NEWTON_MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostKind {
    QuadraticControl,
    QuadraticControlPlusVelocity { alpha: f64 },
    QuarticControl,
}

/// A cost integrand together with its derivative family.
#[derive(Debug, Clone, Copy)]
pub struct CostModel {
    kind: CostKind,
}

pub const COST_KIND_NAMES: [&str; 3] = [
    "quadratic_control",
    "quadratic_control_plus_velocity",
    "quartic_control",
];

impl CostModel {
    pub fn new(kind: CostKind) -> Self {
        Self { kind }
    }

    pub fn quadratic() -> Self {
        Self::new(CostKind::QuadraticControl)
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    /// Resolves a config-level kind name plus named weights.
    pub fn from_config(kind: &str, weights: &BTreeMap<String, f64>) -> Result<Self> {
        let check_weights = |allowed: &[&str]| -> Result<()> {
            for key in weights.keys() {
                if !allowed.contains(&key.as_str()) {
                    return Err(Error::Model(format!(
                        "cost kind {kind:?} has no weight {key:?}"
                    )));
                }
            }
            Ok(())
        };
        match kind {
            "quadratic_control" => {
                check_weights(&[])?;
                Ok(Self::new(CostKind::QuadraticControl))
            }
            "quadratic_control_plus_velocity" => {
                check_weights(&["alpha"])?;
                let alpha = weights.get("alpha").copied().unwrap_or(1.0);
                if !alpha.is_finite() || alpha < 0.0 {
                    return Err(Error::Model(format!(
                        "weight \"alpha\" must be finite and nonnegative, got {alpha}"
                    )));
                }
                Ok(Self::new(CostKind::QuadraticControlPlusVelocity { alpha }))
            }
            "quartic_control" => {
                check_weights(&[])?;
                Ok(Self::new(CostKind::QuarticControl))
            }
            other => Err(Error::Model(format!(
                "unknown cost kind {other:?}; allowed kinds: {}",
                COST_KIND_NAMES.join(", ")
            ))),
        }
    }

    /// `gamma(q, zeta, u)` evaluated through the geometry bundle at `q`.
    pub fn gamma(&self, geom: &GeometryEval, zeta: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let uu = metric_square(geom, u);
        match self.kind {
            CostKind::QuadraticControl => 0.5 * uu,
            CostKind::QuadraticControlPlusVelocity { alpha } => {
                0.5 * uu + 0.5 * alpha * metric_square(geom, zeta)
            }
            CostKind::QuarticControl => 0.25 * uu * uu,
        }
    }

    /// Coordinate partial `(dgamma/dq^j)` holding the components of `zeta`
    /// and `u` fixed.
    pub fn grad_q_coord(
        &self,
        geom: &GeometryEval,
        zeta: &DVector<f64>,
        u: &DVector<f64>,
    ) -> DVector<f64> {
        let n = geom.dim();
        let dm_quad = |w: &DVector<f64>, j: usize| {
            let mut s = 0.0;
            for k in 0..n {
                for l in 0..n {
                    s += geom.mass_partials()[[j, k, l]] * w[k] * w[l];
                }
            }
            s
        };
        match self.kind {
            CostKind::QuadraticControl => DVector::from_fn(n, |j, _| 0.5 * dm_quad(u, j)),
            CostKind::QuadraticControlPlusVelocity { alpha } => {
                DVector::from_fn(n, |j, _| 0.5 * dm_quad(u, j) + 0.5 * alpha * dm_quad(zeta, j))
            }
            CostKind::QuarticControl => {
                let s = metric_square(geom, u);
                DVector::from_fn(n, |j, _| 0.5 * s * dm_quad(u, j))
            }
        }
    }

    /// `(dgamma/dzeta)_j`, a covector.
    pub fn grad_zeta(
        &self,
        geom: &GeometryEval,
        zeta: &DVector<f64>,
        _u: &DVector<f64>,
    ) -> DVector<f64> {
        match self.kind {
            CostKind::QuadraticControl | CostKind::QuarticControl => DVector::zeros(geom.dim()),
            CostKind::QuadraticControlPlusVelocity { alpha } => alpha * geom.lower(zeta),
        }
    }

    /// `(dgamma/du)_j`, a covector.
    pub fn grad_u(
        &self,
        geom: &GeometryEval,
        _zeta: &DVector<f64>,
        u: &DVector<f64>,
    ) -> DVector<f64> {
        match self.kind {
            CostKind::QuadraticControl | CostKind::QuadraticControlPlusVelocity { .. } => {
                geom.lower(u)
            }
            CostKind::QuarticControl => metric_square(geom, u) * geom.lower(u),
        }
    }

    /// `(d^2 gamma / du du)_{jk}`, used by the Newton inversion.
    pub fn hess_uu(
        &self,
        geom: &GeometryEval,
        _zeta: &DVector<f64>,
        u: &DVector<f64>,
    ) -> DMatrix<f64> {
        match self.kind {
            CostKind::QuadraticControl | CostKind::QuadraticControlPlusVelocity { .. } => {
                geom.metric().clone()
            }
            CostKind::QuarticControl => {
                let low = geom.lower(u);
                let s = metric_square(geom, u);
                2.0 * &low * low.transpose() + s * geom.metric()
            }
        }
    }

    /// Covariant `q`-gradient: the coordinate partial compensated for the
    /// covariant pairing of the `zeta` and `u` variations,
    /// `(dgamma/dq)_j - Gamma^l_{jk} zeta^k (dgamma/dzeta)_l
    ///  - Gamma^l_{jk} u^k (dgamma/du)_l`.
    pub fn grad_q_covariant(
        &self,
        geom: &GeometryEval,
        zeta: &DVector<f64>,
        u: &DVector<f64>,
    ) -> DVector<f64> {
        let coord = self.grad_q_coord(geom, zeta, u);
        let gz = self.grad_zeta(geom, zeta, u);
        let gu = self.grad_u(geom, zeta, u);
        coord - geom.christoffel_transport(zeta, &gz) - geom.christoffel_transport(u, &gu)
    }

    /// Solves the optimality condition `dgamma/du = xi` for the control.
    ///
    /// `u_guess` warm-starts the Newton polish; during an integration it is
    /// the control of the previous evaluation.
    pub fn control_from_adjoint(
        &self,
        geom: &GeometryEval,
        zeta: &DVector<f64>,
        xi: &DVector<f64>,
        u_guess: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        match self.kind {
            CostKind::QuadraticControl | CostKind::QuadraticControlPlusVelocity { .. } => {
                Ok(geom.raise(xi))
            }
            CostKind::QuarticControl => {
                let raised = geom.raise(xi);
                let r = xi.dot(&raised);
                if r <= 0.0 {
                    // xi = 0 is the only covector with vanishing M^-1 square
                    return Ok(DVector::zeros(geom.dim()));
                }
                let seed = r.powf(-1.0 / 3.0) * &raised;
                let tol = INVERSION_TOL * (1.0 + xi.norm());
                let residual_of = |u: &DVector<f64>| (self.grad_u(geom, zeta, u) - xi).amax();
                let start = if u_guess.len() == geom.dim() && residual_of(u_guess) < residual_of(&seed)
                {
                    u_guess.clone()
                } else {
                    seed
                };
                self.newton_invert(geom, zeta, xi, start, tol)
            }
        }
    }

    fn newton_invert(
        &self,
        geom: &GeometryEval,
        zeta: &DVector<f64>,
        xi: &DVector<f64>,
        mut u: DVector<f64>,
        tol: f64,
    ) -> Result<DVector<f64>> {
        let mut residual = self.grad_u(geom, zeta, &u) - xi;
        let mut norm = residual.amax();
        for iteration in 0..NEWTON_MAX_ITER {
            if norm <= tol {
                return Ok(u);
            }
            let hess = self.hess_uu(geom, zeta, &u);
            let step = hess.lu().solve(&residual).ok_or(Error::InversionFailure {
                iterations: iteration,
                residual: norm,
            })?;
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..NEWTON_MAX_HALVINGS {
                let candidate = &u - lambda * &step;
                let cand_res = self.grad_u(geom, zeta, &candidate) - xi;
                if cand_res.amax() < norm {
                    u = candidate;
                    residual = cand_res;
                    norm = residual.amax();
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                return Err(Error::InversionFailure {
                    iterations: iteration,
                    residual: norm,
                });
            }
        }
        if norm <= tol {
            Ok(u)
        } else {
            Err(Error::InversionFailure {
                iterations: NEWTON_MAX_ITER,
                residual: norm,
            })
        }
    }
}

fn metric_square(geom: &GeometryEval, w: &DVector<f64>) -> f64 {
    w.dot(&(geom.metric() * w))
}
