//! Single-shooting solver for the two-point boundary value problem of the
//! coupled state-adjoint system.
//!
//! Three boundary cases ship, each fixing `2n` of the `4n` initial values and
//! imposing `2n` terminal conditions on the flow:
//!
//! * case A, initial state prescribed: `q(0), zeta(0)` given; the free right
//!   endpoint forces `xi(T) = 0` and `pi(T) = 0`; unknowns `xi(0), pi(0)`.
//! * case B, endpoint positions prescribed: `q(0), q(T)` given, velocities
//!   free at both ends, which forces `xi(0) = xi(T) = 0`; unknowns
//!   `zeta(0), pi(0)`; residuals `q(T) - qT` and `xi(T)`.
//! * case C, fully clamped: `q, zeta` given at both ends; unknowns
//!   `xi(0), pi(0)`; residuals `q(T) - qT` and `zeta(T) - zetaT`.
//!
//! A damped Newton iteration drives the terminal residual to zero, with the
//! Jacobian assembled column by column from forward differences of the
//! residual map.

use nalgebra::DVector;

use crate::cost::CostModel;
use crate::dynamics::{
    integrate, integrate_coupled, AdjointState, CoupledSystem, Integrator, PhaseState, Trajectory,
};
use crate::error::{Error, Result};
use crate::models::MechanicalModel;

/// Which combination of endpoint data is prescribed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCase {
    /// `q(0), zeta(0)` given, endpoint free.
    InitialState,
    /// `q(0), q(T)` given, velocities free.
    EndpointPositions,
    /// `q(0), zeta(0), q(T), zeta(T)` all given.
    FullyClamped,
}

/// Boundary data for one solve.
#[derive(Debug, Clone)]
pub struct BoundarySpec {
    pub case: BoundaryCase,
    pub q0: DVector<f64>,
    pub zeta0: Option<DVector<f64>>,
    pub q_final: Option<DVector<f64>>,
    pub zeta_final: Option<DVector<f64>>,
}

impl BoundarySpec {
    pub fn initial_state(q0: DVector<f64>, zeta0: DVector<f64>) -> Self {
        Self {
            case: BoundaryCase::InitialState,
            q0,
            zeta0: Some(zeta0),
            q_final: None,
            zeta_final: None,
        }
    }

    pub fn endpoint_positions(q0: DVector<f64>, q_final: DVector<f64>) -> Self {
        Self {
            case: BoundaryCase::EndpointPositions,
            q0,
            zeta0: None,
            q_final: Some(q_final),
            zeta_final: None,
        }
    }

    pub fn fully_clamped(
        q0: DVector<f64>,
        zeta0: DVector<f64>,
        q_final: DVector<f64>,
        zeta_final: DVector<f64>,
    ) -> Self {
        Self {
            case: BoundaryCase::FullyClamped,
            q0,
            zeta0: Some(zeta0),
            q_final: Some(q_final),
            zeta_final: Some(zeta_final),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let check = |v: &DVector<f64>, what: &'static str| -> Result<()> {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: dim,
                    got: v.len(),
                });
            }
            Ok(())
        };
        check(&self.q0, "q0")?;
        let need = |field: &Option<DVector<f64>>, what: &'static str| -> Result<()> {
            match field {
                Some(v) => check(v, what),
                None => Err(Error::Model(format!(
                    "boundary case {:?} requires {what}",
                    self.case
                ))),
            }
        };
        match self.case {
            BoundaryCase::InitialState => need(&self.zeta0, "zeta0"),
            BoundaryCase::EndpointPositions => need(&self.q_final, "q_final"),
            BoundaryCase::FullyClamped => {
                need(&self.zeta0, "zeta0")?;
                need(&self.q_final, "q_final")?;
                need(&self.zeta_final, "zeta_final")
            }
        }
    }

    /// Initial `(q, zeta, xi, pi)` for a given unknown vector.
    fn initial_packed(&self, unknowns: &DVector<f64>) -> DVector<f64> {
        let n = self.q0.len();
        let (state, adjoint) = match self.case {
            BoundaryCase::InitialState | BoundaryCase::FullyClamped => (
                PhaseState::new(self.q0.clone(), self.zeta0.clone().unwrap()),
                AdjointState::new(
                    unknowns.rows(0, n).into_owned(),
                    unknowns.rows(n, n).into_owned(),
                ),
            ),
            BoundaryCase::EndpointPositions => (
                PhaseState::new(self.q0.clone(), unknowns.rows(0, n).into_owned()),
                AdjointState::new(DVector::zeros(n), unknowns.rows(n, n).into_owned()),
            ),
        };
        CoupledSystem::pack(&state, &adjoint)
    }

    /// Terminal residual for a given terminal `(q, zeta, xi, pi)`.
    fn terminal_residual(&self, y_final: &DVector<f64>) -> DVector<f64> {
        let n = self.q0.len();
        let (state, adjoint) = CoupledSystem::unpack(y_final);
        let mut r = DVector::zeros(2 * n);
        match self.case {
            BoundaryCase::InitialState => {
                r.rows_mut(0, n).copy_from(&adjoint.xi);
                r.rows_mut(n, n).copy_from(&adjoint.pi);
            }
            BoundaryCase::EndpointPositions => {
                r.rows_mut(0, n)
                    .copy_from(&(&state.q - self.q_final.as_ref().unwrap()));
                r.rows_mut(n, n).copy_from(&adjoint.xi);
            }
            BoundaryCase::FullyClamped => {
                r.rows_mut(0, n)
                    .copy_from(&(&state.q - self.q_final.as_ref().unwrap()));
                r.rows_mut(n, n)
                    .copy_from(&(&state.zeta - self.zeta_final.as_ref().unwrap()));
            }
        }
        r
    }
}

/// Numerical knobs of one shooting solve.
#[derive(Debug, Clone, Copy)]
pub struct ShootParams {
    pub t_horizon: f64,
    pub steps: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub integrator: Integrator,
}

impl ShootParams {
    pub fn new(t_horizon: f64, steps: usize) -> Self {
        Self {
            t_horizon,
            steps,
            tol: 1e-9,
            max_iter: 100,
            integrator: Integrator::Rk4,
        }
    }
}

/// Outcome of a shooting solve. `converged` implies
/// `residual_norm <= params.tol` in the max norm.
pub struct ShootReport {
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
    pub trajectory: Trajectory,
    pub cost: f64,
    /// Max-norm residual after each Newton iteration, starting with the
    /// residual of the initial guess.
    pub newton_history: Vec<f64>,
    /// The solved (or best found) unknown initial values.
    pub unknowns: DVector<f64>,
}

/// The map Newton differentiates: terminal residual of the coupled flow as a
/// function of the unknown initial values. Exposed for testing.
pub fn residual(
    model: &MechanicalModel,
    cost: &CostModel,
    boundary: &BoundarySpec,
    unknowns: &DVector<f64>,
    params: &ShootParams,
) -> Result<DVector<f64>> {
    boundary.validate(model.dim())?;
    let y0 = boundary.initial_packed(unknowns);
    let mut system = CoupledSystem::new(model, cost);
    let (_, ys) = integrate(
        |t, y| system.rhs(t, y),
        &y0,
        params.t_horizon,
        params.steps,
        params.integrator,
    )?;
    Ok(boundary.terminal_residual(ys.last().unwrap()))
}

/// Solves the boundary value problem by damped Newton iteration on the
/// unknown initial values.
///
/// Returns `Ok` with `converged = false` when the iteration budget runs out
/// or the damping cannot make progress; hard integration failures inside a
/// Newton step are reported as errors naming the iteration.
pub fn shoot(
    model: &MechanicalModel,
    cost: &CostModel,
    boundary: &BoundarySpec,
    params: &ShootParams,
    initial_guess: Option<DVector<f64>>,
) -> Result<ShootReport> {
    boundary.validate(model.dim())?;
    assert!(params.t_horizon > 0.0 && params.tol > 0.0);
    let n = model.dim();
    let mut x = initial_guess.unwrap_or_else(|| DVector::zeros(2 * n));
    if x.len() != 2 * n {
        return Err(Error::DimensionMismatch {
            what: "initial guess",
            expected: 2 * n,
            got: x.len(),
        });
    }

    let eval = |x: &DVector<f64>, iteration: usize| -> Result<DVector<f64>> {
        residual(model, cost, boundary, x, params).map_err(|e| match e {
            e @ Error::NonFiniteState { .. } => Error::ShootingIntegration {
                newton_iteration: iteration,
                source: Box::new(e),
            },
            other => other,
        })
    };

    let mut r = eval(&x, 0)?;
    let mut norm = r.amax();
    let mut history = vec![norm];
    let mut iterations = 0;

    while norm > params.tol && iterations < params.max_iter {
        iterations += 1;
        // forward-difference Jacobian, column by column
        let mut jac = nalgebra::DMatrix::zeros(2 * n, 2 * n);
        for i in 0..2 * n {
            let h = 1e-7 * (1.0 + x[i].abs());
            let mut xp = x.clone();
            xp[i] += h;
            let rp = eval(&xp, iterations)?;
            jac.column_mut(i).copy_from(&((rp - &r) / h));
        }
        let step = jac
            .lu()
            .solve(&(-&r))
            .ok_or(Error::SingularJacobian {
                iteration: iterations,
            })?;

        // damping: halve until the residual norm stops increasing
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let candidate = &x + lambda * &step;
            match eval(&candidate, iterations) {
                Ok(rc) => {
                    if rc.amax() < norm {
                        x = candidate;
                        r = rc;
                        norm = r.amax();
                        accepted = true;
                        break;
                    }
                }
                Err(Error::ShootingIntegration { .. }) => {
                    // a too-long step can blow up the integration; shrink
                }
                Err(other) => return Err(other),
            }
            lambda *= 0.5;
        }
        history.push(norm);
        if !accepted {
            break;
        }
    }

    let converged = norm <= params.tol;
    let (state0, adjoint0) = CoupledSystem::unpack(&boundary.initial_packed(&x));
    let trajectory = integrate_coupled(
        model,
        cost,
        &state0,
        &adjoint0,
        params.t_horizon,
        params.steps,
        params.integrator,
    )?;
    let cost_value = trajectory.cost();
    Ok(ShootReport {
        converged,
        iterations,
        residual_norm: norm,
        trajectory,
        cost: cost_value,
        newton_history: history,
        unknowns: x,
    })
}
