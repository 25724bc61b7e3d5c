//! Right-hand sides and integrators for the controlled mechanical system and
//! its adjoint.
//!
//! The controlled equations of motion in Riemannian form are
//!
//! ```text
//! dq^j/dt    = zeta^j
//! dzeta^j/dt = -Gamma^j_{kl} zeta^k zeta^l - M^{jl} d_l V + u^j .
//! ```
//!
//! The optimal control satisfies `dgamma/du = xi`, and the adjoint covector
//! `xi` obeys a second-order covariant equation that couples back through the
//! curvature tensor and the covariant Hessian of the potential. That equation
//! is integrated here in first-order form using the auxiliary covector
//!
//! ```text
//! pi := (d xi / dt) - dgamma/dzeta        (covariant time derivative)
//! ```
//!
//! which absorbs the `d/dt (dgamma/dzeta)` term and turns the free-endpoint
//! terminal conditions into plain `xi(T) = 0`, `pi(T) = 0`. In coordinates:
//!
//! ```text
//! dxi_j/dt = pi_j + (dgamma/dzeta)_j + Gamma^k_{jl} xi_k zeta^l
//! dpi_j/dt = -(R_zeta . xi)_j - (grad^2 V . xi)_j - (dgamma/dq)_j
//!            + Gamma^k_{jl} pi_k zeta^l ,
//! ```
//!
//! with every `q`-gradient covariant and the curvature contraction in the
//! convention of [`GeometryEval::curvature_force`]. The sign of the curvature
//! term is pinned by the quadratic-cost case, where `xi` equals the force
//! covector and the system must reproduce the second-order force evolution
//! `d^2 u/dt^2 = -R_zeta . u - grad^2 V . u` implemented independently in
//! [`ForceEvolution`]; the reduction test in this module checks the two
//! integrations against each other.
//!
//! The first multiplier of the kinematic constraint `dq/dt = zeta` is never
//! integrated: it is algebraically `-pi` and can be read off the output.

use nalgebra::DVector;

use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::geometry::GeometryEval;
use crate::models::MechanicalModel;

/// Configuration and contravariant velocity `(q, zeta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub q: DVector<f64>,
    pub zeta: DVector<f64>,
}

impl PhaseState {
    pub fn new(q: DVector<f64>, zeta: DVector<f64>) -> Self {
        Self { q, zeta }
    }
}

/// Adjoint covector and its covariant-rate offset `(xi, pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointState {
    pub xi: DVector<f64>,
    pub pi: DVector<f64>,
}

impl AdjointState {
    pub fn new(xi: DVector<f64>, pi: DVector<f64>) -> Self {
        Self { xi, pi }
    }

    pub fn zero(n: usize) -> Self {
        Self {
            xi: DVector::zeros(n),
            pi: DVector::zeros(n),
        }
    }
}

/// A solution sampled on a uniform time grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub states: Vec<PhaseState>,
    pub adjoints: Option<Vec<AdjointState>>,
    /// Contravariant control at each node.
    pub controls: Vec<DVector<f64>>,
    /// The same control with the index lowered.
    pub controls_cov: Vec<DVector<f64>>,
    /// Total mechanical energy `K + V` at each node.
    pub energy: Vec<f64>,
    /// Cumulative trapezoid quadrature of the cost integrand.
    pub running_cost: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Achieved cost `J`, the last entry of the running quadrature.
    pub fn cost(&self) -> f64 {
        *self.running_cost.last().unwrap_or(&0.0)
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.q.len())
    }
}

/// Integration method for the fixed output grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integrator {
    /// Classic fixed-step fourth-order Runge-Kutta.
    Rk4,
    /// Dormand-Prince 5(4) with adaptive substeps inside each grid interval.
    Rk45 { abs_tol: f64, rel_tol: f64 },
}

impl Integrator {
    pub fn rk45_default() -> Self {
        Integrator::Rk45 {
            abs_tol: 1e-9,
            rel_tol: 1e-9,
        }
    }
}

/// Total mechanical energy `K + V` with `K = (1/2) M_{kl} zeta^k zeta^l`.
pub fn energy(model: &MechanicalModel, state: &PhaseState) -> f64 {
    let m = model.metric().mass(&state.q);
    0.5 * state.zeta.dot(&(&m * &state.zeta)) + model.potential().value(&state.q)
}

/// Controlled equations of motion at one point:
/// `(dq/dt, dzeta/dt) = (zeta, -Gamma zeta zeta - M^{-1} dV + u)`.
pub fn forward_field(
    model: &MechanicalModel,
    geom: &GeometryEval,
    state: &PhaseState,
    u: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let grad_v = model.potential().gradient(&state.q);
    let dzeta = -geom.christoffel_quadratic(&state.zeta) - geom.raise(&grad_v) + u;
    (state.zeta.clone(), dzeta)
}

/// One evaluation of the coupled state-adjoint field. Returns the coordinate
/// time derivatives of `(q, zeta, xi, pi)` and the control realizing the
/// optimality condition at this point.
pub fn coupled_field(
    model: &MechanicalModel,
    cost: &CostModel,
    geom: &GeometryEval,
    state: &PhaseState,
    adjoint: &AdjointState,
    u_guess: &DVector<f64>,
) -> Result<CoupledDerivatives> {
    let u = cost.control_from_adjoint(geom, &state.zeta, &adjoint.xi, u_guess)?;
    let (dq, dzeta) = forward_field(model, geom, state, &u);

    let grad_zeta = cost.grad_zeta(geom, &state.zeta, &u);
    let dxi = &adjoint.pi + &grad_zeta + geom.christoffel_transport(&state.zeta, &adjoint.xi);

    let hess_v = geom.covariant_hessian(model.potential());
    let xi_raised = geom.raise(&adjoint.xi);
    let dpi = -geom.curvature_force(&state.zeta, &adjoint.xi)
        - &hess_v * xi_raised
        - cost.grad_q_covariant(geom, &state.zeta, &u)
        + geom.christoffel_transport(&state.zeta, &adjoint.pi);

    Ok(CoupledDerivatives {
        dq,
        dzeta,
        dxi,
        dpi,
        control: u,
    })
}

/// Output of [`coupled_field`].
pub struct CoupledDerivatives {
    pub dq: DVector<f64>,
    pub dzeta: DVector<f64>,
    pub dxi: DVector<f64>,
    pub dpi: DVector<f64>,
    pub control: DVector<f64>,
}

/// The coupled state-adjoint system packed for integration,
/// `y = [q; zeta; xi; pi]`, with the control warm-started across
/// evaluations.
pub struct CoupledSystem<'a> {
    model: &'a MechanicalModel,
    cost: &'a CostModel,
    u_warm: DVector<f64>,
}

impl<'a> CoupledSystem<'a> {
    pub fn new(model: &'a MechanicalModel, cost: &'a CostModel) -> Self {
        Self {
            model,
            cost,
            u_warm: DVector::zeros(model.dim()),
        }
    }

    pub fn pack(state: &PhaseState, adjoint: &AdjointState) -> DVector<f64> {
        let n = state.q.len();
        let mut y = DVector::zeros(4 * n);
        y.rows_mut(0, n).copy_from(&state.q);
        y.rows_mut(n, n).copy_from(&state.zeta);
        y.rows_mut(2 * n, n).copy_from(&adjoint.xi);
        y.rows_mut(3 * n, n).copy_from(&adjoint.pi);
        y
    }

    pub fn unpack(y: &DVector<f64>) -> (PhaseState, AdjointState) {
        let n = y.len() / 4;
        (
            PhaseState::new(y.rows(0, n).into_owned(), y.rows(n, n).into_owned()),
            AdjointState::new(
                y.rows(2 * n, n).into_owned(),
                y.rows(3 * n, n).into_owned(),
            ),
        )
    }

    pub fn rhs(&mut self, _t: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
        let (state, adjoint) = Self::unpack(y);
        let geom = self.model.metric().eval(&state.q)?;
        let d = coupled_field(self.model, self.cost, &geom, &state, &adjoint, &self.u_warm)?;
        self.u_warm = d.control;
        let n = state.q.len();
        let mut dy = DVector::zeros(4 * n);
        dy.rows_mut(0, n).copy_from(&d.dq);
        dy.rows_mut(n, n).copy_from(&d.dzeta);
        dy.rows_mut(2 * n, n).copy_from(&d.dxi);
        dy.rows_mut(3 * n, n).copy_from(&d.dpi);
        Ok(dy)
    }
}

/// Independent second-order evolution of the force covector for the
/// quadratic cost, `d^2 u/dt^2 = -R_zeta . u - grad^2 V . u`, integrated in
/// first-order form `y = [q; zeta; u_cov; v]` with `v` the covariant rate of
/// `u_cov`. The control driving the motion is `u_cov` with the index raised;
/// no optimality inversion and no cost-gradient machinery is involved, which
/// makes this the reference route for the reduction test.
pub struct ForceEvolution<'a> {
    model: &'a MechanicalModel,
}

impl<'a> ForceEvolution<'a> {
    pub fn new(model: &'a MechanicalModel) -> Self {
        Self { model }
    }

    pub fn rhs(&mut self, _t: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
        let n = y.len() / 4;
        let q = y.rows(0, n).into_owned();
        let zeta = y.rows(n, n).into_owned();
        let u_cov = y.rows(2 * n, n).into_owned();
        let v = y.rows(3 * n, n).into_owned();

        let geom = self.model.metric().eval(&q)?;
        let u = geom.raise(&u_cov);
        let grad_v = self.model.potential().gradient(&q);
        let dzeta = -geom.christoffel_quadratic(&zeta) - geom.raise(&grad_v) + &u;

        let du = &v + geom.christoffel_transport(&zeta, &u_cov);
        let hess = geom.covariant_hessian(self.model.potential());
        let dv = -geom.curvature_force(&zeta, &u_cov) - &hess * u
            + geom.christoffel_transport(&zeta, &v);

        let mut dy = DVector::zeros(4 * n);
        dy.rows_mut(0, n).copy_from(&zeta);
        dy.rows_mut(n, n).copy_from(&dzeta);
        dy.rows_mut(2 * n, n).copy_from(&du);
        dy.rows_mut(3 * n, n).copy_from(&dv);
        Ok(dy)
    }
}

/// Integrates `dy/dt = f(t, y)` from `t = 0` to `T`, returning the solution
/// on the uniform grid of `steps + 1` nodes. Deterministic for identical
/// inputs.
pub fn integrate(
    mut field: impl FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
    y0: &DVector<f64>,
    t_horizon: f64,
    steps: usize,
    method: Integrator,
) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    assert!(t_horizon > 0.0, "horizon must be positive");
    assert!(steps >= 1, "need at least one step");
    let h = t_horizon / steps as f64;
    let mut t_grid = Vec::with_capacity(steps + 1);
    let mut ys = Vec::with_capacity(steps + 1);
    let mut y = y0.clone();
    t_grid.push(0.0);
    ys.push(y.clone());

    for i in 0..steps {
        let t = i as f64 * h;
        y = match method {
            Integrator::Rk4 => rk4_step(&mut field, t, &y, h)?,
            Integrator::Rk45 { abs_tol, rel_tol } => {
                rk45_segment(&mut field, t, &y, h, abs_tol, rel_tol, i)?
            }
        };
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState {
                step: i + 1,
                time: t + h,
            });
        }
        t_grid.push((i + 1) as f64 * h);
        ys.push(y.clone());
    }
    Ok((t_grid, ys))
}

fn rk4_step(
    field: &mut impl FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
    t: f64,
    y: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    let k1 = field(t, y)?;
    let k2 = field(t + 0.5 * h, &(y + 0.5 * h * &k1))?;
    let k3 = field(t + 0.5 * h, &(y + 0.5 * h * &k2))?;
    let k4 = field(t + h, &(y + h * &k3))?;
    Ok(y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

/// Dormand-Prince 5(4) across one output interval, landing exactly on its
/// right endpoint.
#[allow(clippy::too_many_arguments)]
fn rk45_segment(
    field: &mut impl FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
    t_start: f64,
    y_start: &DVector<f64>,
    segment: f64,
    abs_tol: f64,
    rel_tol: f64,
    output_step: usize,
) -> Result<DVector<f64>> {
    let mut t = t_start;
    let t_end = t_start + segment;
    let mut y = y_start.clone();
    let mut h = segment;
    loop {
        if t >= t_end - 1e-14 * segment {
            return Ok(y);
        }
        h = h.min(t_end - t);
        if h < 1e-14 * segment.max(1.0) {
            return Err(Error::NonFiniteState {
                step: output_step,
                time: t,
            });
        }
        let (y5, err) = dopri_step(field, t, &y, h)?;
        let mut scale: f64 = 0.0;
        for i in 0..y.len() {
            let tol = abs_tol + rel_tol * y[i].abs().max(y5[i].abs());
            scale = scale.max(err[i].abs() / tol);
        }
        if scale <= 1.0 {
            t += h;
            y = y5;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState {
                    step: output_step,
                    time: t,
                });
            }
        }
        let factor = if scale > 0.0 {
            (0.9 * scale.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        h *= factor;
    }
}

fn dopri_step(
    field: &mut impl FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
    t: f64,
    y: &DVector<f64>,
    h: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let k1 = field(t, y)?;
    let k2 = field(t + h / 5.0, &(y + h / 5.0 * &k1))?;
    let k3 = field(
        t + 3.0 * h / 10.0,
        &(y + h * (3.0 / 40.0 * &k1 + 9.0 / 40.0 * &k2)),
    )?;
    let k4 = field(
        t + 4.0 * h / 5.0,
        &(y + h * (44.0 / 45.0 * &k1 - 56.0 / 15.0 * &k2 + 32.0 / 9.0 * &k3)),
    )?;
    let k5 = field(
        t + 8.0 * h / 9.0,
        &(y + h
            * (19372.0 / 6561.0 * &k1 - 25360.0 / 2187.0 * &k2 + 64448.0 / 6561.0 * &k3
                - 212.0 / 729.0 * &k4)),
    )?;
    let k6 = field(
        t + h,
        &(y + h
            * (9017.0 / 3168.0 * &k1 - 355.0 / 33.0 * &k2 + 46732.0 / 5247.0 * &k3
                + 49.0 / 176.0 * &k4
                - 5103.0 / 18656.0 * &k5)),
    )?;
    let y5 = y + h
        * (35.0 / 384.0 * &k1 + 500.0 / 1113.0 * &k3 + 125.0 / 192.0 * &k4
            - 2187.0 / 6784.0 * &k5
            + 11.0 / 84.0 * &k6);
    let k7 = field(t + h, &y5)?;
    let y4 = y + h
        * (5179.0 / 57600.0 * &k1 + 7571.0 / 16695.0 * &k3 + 393.0 / 640.0 * &k4
            - 92097.0 / 339200.0 * &k5
            + 187.0 / 2100.0 * &k6
            + 1.0 / 40.0 * &k7);
    Ok((y5.clone(), y5 - y4))
}

/// Forward simulation under a prescribed control law `u(t)`.
pub fn simulate_forward(
    model: &MechanicalModel,
    cost: &CostModel,
    initial: &PhaseState,
    control: impl Fn(f64) -> DVector<f64>,
    t_horizon: f64,
    steps: usize,
    method: Integrator,
) -> Result<Trajectory> {
    let n = model.dim();
    let mut y0 = DVector::zeros(2 * n);
    y0.rows_mut(0, n).copy_from(&initial.q);
    y0.rows_mut(n, n).copy_from(&initial.zeta);

    let field = |t: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
        let state = PhaseState::new(y.rows(0, n).into_owned(), y.rows(n, n).into_owned());
        let geom = model.metric().eval(&state.q)?;
        let (dq, dzeta) = forward_field(model, &geom, &state, &control(t));
        let mut dy = DVector::zeros(2 * n);
        dy.rows_mut(0, n).copy_from(&dq);
        dy.rows_mut(n, n).copy_from(&dzeta);
        Ok(dy)
    };
    let (t_grid, ys) = integrate(field, &y0, t_horizon, steps, method)?;

    let states: Vec<PhaseState> = ys
        .iter()
        .map(|y| PhaseState::new(y.rows(0, n).into_owned(), y.rows(n, n).into_owned()))
        .collect();
    let controls: Vec<DVector<f64>> = t_grid.iter().map(|&t| control(t)).collect();
    assemble(model, cost, t_grid, states, None, controls)
}

/// Integrates the coupled state-adjoint system and assembles the full
/// trajectory, with controls recovered through the optimality condition at
/// every node.
pub fn integrate_coupled(
    model: &MechanicalModel,
    cost: &CostModel,
    initial: &PhaseState,
    adjoint0: &AdjointState,
    t_horizon: f64,
    steps: usize,
    method: Integrator,
) -> Result<Trajectory> {
    let mut system = CoupledSystem::new(model, cost);
    let y0 = CoupledSystem::pack(initial, adjoint0);
    let (t_grid, ys) = integrate(|t, y| system.rhs(t, y), &y0, t_horizon, steps, method)?;

    let mut states = Vec::with_capacity(ys.len());
    let mut adjoints = Vec::with_capacity(ys.len());
    let mut controls = Vec::with_capacity(ys.len());
    let mut u_warm = DVector::zeros(model.dim());
    for y in &ys {
        let (state, adjoint) = CoupledSystem::unpack(y);
        let geom = model.metric().eval(&state.q)?;
        let u = cost.control_from_adjoint(&geom, &state.zeta, &adjoint.xi, &u_warm)?;
        u_warm = u.clone();
        states.push(state);
        adjoints.push(adjoint);
        controls.push(u);
    }
    assemble(model, cost, t_grid, states, Some(adjoints), controls)
}

fn assemble(
    model: &MechanicalModel,
    cost: &CostModel,
    t_grid: Vec<f64>,
    states: Vec<PhaseState>,
    adjoints: Option<Vec<AdjointState>>,
    controls: Vec<DVector<f64>>,
) -> Result<Trajectory> {
    let mut controls_cov = Vec::with_capacity(states.len());
    let mut energies = Vec::with_capacity(states.len());
    let mut gammas = Vec::with_capacity(states.len());
    for (state, u) in states.iter().zip(&controls) {
        let geom = model.metric().eval(&state.q)?;
        controls_cov.push(geom.lower(u));
        energies.push(energy(model, state));
        gammas.push(cost.gamma(&geom, &state.zeta, u));
    }
    let mut running = Vec::with_capacity(states.len());
    running.push(0.0);
    for i in 1..states.len() {
        let h = t_grid[i] - t_grid[i - 1];
        running.push(running[i - 1] + 0.5 * h * (gammas[i - 1] + gammas[i]));
    }
    Ok(Trajectory {
        t: t_grid,
        states,
        adjoints,
        controls,
        controls_cov,
        energy: energies,
        running_cost: running,
    })
}

/// An analytic covector field of time used by the identity checker.
pub struct CovectorTestField {
    pub xi: Box<dyn Fn(f64) -> DVector<f64>>,
    pub xi_dot: Box<dyn Fn(f64) -> DVector<f64>>,
    pub xi_ddot: Box<dyn Fn(f64) -> DVector<f64>>,
}

/// Checks the closed-form expression for the second covariant time
/// derivative of a covector along a trajectory,
///
/// ```text
/// (d^2 xi/dt^2)_j = xiddot_j - 2 Gamma^k_{jl} (dxi/dt)_k zeta^l
///                  - Gamma^k_{jl} xi_k (dzeta/dt)^l
///                  + (R^k_{lmj} - d_j Gamma^k_{lm}) xi_k zeta^l zeta^m ,
/// ```
///
/// where `(dzeta/dt)^l` is the covariant acceleration of the curve, against
/// applying the first covariant derivative twice, with the outer coordinate
/// rate taken by central differences between neighbouring grid nodes.
/// Returns the maximum absolute discrepancy over the interior nodes.
pub fn check_second_derivative_identity(
    model: &MechanicalModel,
    trajectory: &Trajectory,
    field: &CovectorTestField,
) -> Result<f64> {
    let n = model.dim();
    let len = trajectory.len();
    assert!(len >= 3, "need at least three nodes");
    let h = trajectory.t[1] - trajectory.t[0];

    // first covariant derivative of the test field at a node index
    let cov_rate = |i: usize| -> Result<DVector<f64>> {
        let state = &trajectory.states[i];
        let geom = model.metric().eval(&state.q)?;
        let t = trajectory.t[i];
        Ok(geom.covariant_time_derivative_covector(
            &state.zeta,
            &(field.xi)(t),
            &(field.xi_dot)(t),
        ))
    };

    let mut max_residual: f64 = 0.0;
    for i in 1..len - 1 {
        let t = trajectory.t[i];
        let state = &trajectory.states[i];
        let geom = model.metric().eval(&state.q)?;
        let xi = (field.xi)(t);
        let xi_ddot = (field.xi_ddot)(t);
        let w = cov_rate(i)?;

        // covariant acceleration of the curve: finite-difference coordinate
        // rate of zeta plus the connection term
        let dzeta = (&trajectory.states[i + 1].zeta - &trajectory.states[i - 1].zeta)
            / (2.0 * h)
            + geom.christoffel_quadratic(&state.zeta);

        let mut rhs = DVector::zeros(n);
        for j in 0..n {
            let mut s = xi_ddot[j];
            for k in 0..n {
                for l in 0..n {
                    s -= 2.0 * geom.christoffel()[[k, j, l]] * w[k] * state.zeta[l];
                    s -= geom.christoffel()[[k, j, l]] * xi[k] * dzeta[l];
                    for m in 0..n {
                        s += (geom.riemann()[[k, l, m, j]]
                            - geom.christoffel_partials()[[j, k, l, m]])
                            * xi[k]
                            * state.zeta[l]
                            * state.zeta[m];
                    }
                }
            }
            rhs[j] = s;
        }

        // outer covariant derivative with a finite-difference coordinate rate
        let w_dot = (cov_rate(i + 1)? - cov_rate(i - 1)?) / (2.0 * h);
        let lhs = geom.covariant_time_derivative_covector(&state.zeta, &w, &w_dot);

        max_residual = max_residual.max((rhs - lhs).amax());
    }
    Ok(max_residual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::CostModel;
    use crate::models::build_model;
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;

    fn model(name: &str) -> MechanicalModel {
        build_model(name, &BTreeMap::new()).unwrap()
    }

    fn unit_pendulum() -> MechanicalModel {
        let mut params = BTreeMap::new();
        params.insert("g".to_string(), 1.0);
        build_model("pendulum", &params).unwrap()
    }

    #[test]
    fn forward_field_examples() {
        // flat free motion: geodesics are straight lines
        let flat = model("flat");
        let geom = flat.metric().eval(&DVector::zeros(2)).unwrap();
        let state = PhaseState::new(DVector::zeros(2), DVector::from_vec(vec![1.0, 2.0]));
        let (dq, dzeta) = forward_field(&flat, &geom, &state, &DVector::zeros(2));
        assert_eq!(dq, state.zeta);
        assert_eq!(dzeta.amax(), 0.0);

        // unit pendulum at the horizontal: dzeta/dt = -1
        let pend = unit_pendulum();
        let q = DVector::from_vec(vec![std::f64::consts::FRAC_PI_2]);
        let geom = pend.metric().eval(&q).unwrap();
        let state = PhaseState::new(q, DVector::zeros(1));
        let (_, dzeta) = forward_field(&pend, &geom, &state, &DVector::zeros(1));
        assert_abs_diff_eq!(dzeta[0], -1.0, epsilon = 1e-14);

        // pure control on flat space
        let geom = flat.metric().eval(&DVector::zeros(2)).unwrap();
        let state = PhaseState::new(DVector::zeros(2), DVector::zeros(2));
        let (_, dzeta) = forward_field(&flat, &geom, &state, &DVector::from_vec(vec![3.0, 0.0]));
        assert_eq!(dzeta, DVector::from_vec(vec![3.0, 0.0]));
    }

    #[test]
    fn energy_examples() {
        let flat = model("flat");
        let s = PhaseState::new(DVector::zeros(2), DVector::from_vec(vec![3.0, 4.0]));
        assert_abs_diff_eq!(energy(&flat, &s), 12.5, epsilon = 1e-14);

        let pend = unit_pendulum();
        let s = PhaseState::new(DVector::zeros(1), DVector::zeros(1));
        assert_abs_diff_eq!(energy(&pend, &s), -1.0, epsilon = 1e-14);

        // frozen from the symbolic kinematics oracle
        let dp = model("double_pendulum");
        let s = PhaseState::new(
            DVector::from_vec(vec![0.3, 0.7]),
            DVector::from_vec(vec![0.4, -0.2]),
        );
        assert_abs_diff_eq!(energy(&dp, &s), -23.802880162228085, epsilon = 1e-12);
    }

    #[test]
    fn rk4_exact_on_free_flat_motion() {
        let flat = model("flat");
        let cost = CostModel::quadratic();
        let initial = PhaseState::new(
            DVector::from_vec(vec![0.5, -0.5]),
            DVector::from_vec(vec![1.0, 2.0]),
        );
        let traj = simulate_forward(
            &flat,
            &cost,
            &initial,
            |_t| DVector::zeros(2),
            2.0,
            20,
            Integrator::Rk4,
        )
        .unwrap();
        let end = traj.states.last().unwrap();
        assert_abs_diff_eq!(end.q[0], 0.5 + 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(end.q[1], -0.5 + 4.0, epsilon = 1e-12);
        assert_eq!(traj.cost(), 0.0);
    }

    #[test]
    fn pendulum_small_oscillation_period() {
        let pend = unit_pendulum();
        let cost = CostModel::quadratic();
        let q0 = 1e-3;
        let traj = simulate_forward(
            &pend,
            &cost,
            &PhaseState::new(DVector::from_element(1, q0), DVector::zeros(1)),
            |_t| DVector::zeros(1),
            8.0,
            8000,
            Integrator::Rk4,
        )
        .unwrap();
        // starting at rest, the second zero of zeta marks one full period
        let mut crossings = Vec::new();
        for i in 1..traj.len() {
            let a = traj.states[i - 1].zeta[0];
            let b = traj.states[i].zeta[0];
            if a != 0.0 && a.signum() != b.signum() {
                let frac = a / (a - b);
                crossings.push(traj.t[i - 1] + frac * (traj.t[i] - traj.t[i - 1]));
            }
        }
        assert!(crossings.len() >= 2);
        let period = crossings[1];
        let expected = 2.0 * std::f64::consts::PI;
        assert!(
            (period - expected).abs() / expected <= 1e-4,
            "period {period} vs {expected}"
        );
    }

    #[test]
    fn harmonic_covector_closed_form() {
        // xi'' = -xi integrated as a 2n system, closed form (cos t, sin t)
        let field = |_t: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![y[2], y[3], -y[0], -y[1]]))
        };
        let y0 = DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0]);
        let (_, ys) = integrate(field, &y0, std::f64::consts::PI, 1000, Integrator::Rk4).unwrap();
        let end = ys.last().unwrap();
        assert_abs_diff_eq!(end[0], -1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(end[1], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn rk45_matches_rk4_on_free_double_pendulum() {
        let dp = model("double_pendulum");
        let cost = CostModel::quadratic();
        let initial = PhaseState::new(
            DVector::from_vec(vec![0.4, -0.2]),
            DVector::from_vec(vec![0.0, 0.0]),
        );
        let a = simulate_forward(
            &dp,
            &cost,
            &initial,
            |_t| DVector::zeros(2),
            1.0,
            1000,
            Integrator::Rk4,
        )
        .unwrap();
        let b = simulate_forward(
            &dp,
            &cost,
            &initial,
            |_t| DVector::zeros(2),
            1.0,
            100,
            Integrator::rk45_default(),
        )
        .unwrap();
        let qa = &a.states.last().unwrap().q;
        let qb = &b.states.last().unwrap().q;
        assert_abs_diff_eq!((qa - qb).amax(), 0.0, epsilon = 1e-7);
    }

    #[test]
    fn free_double_pendulum_conserves_energy() {
        let dp = model("double_pendulum");
        let cost = CostModel::quadratic();
        let initial = PhaseState::new(
            DVector::from_vec(vec![1.0, 0.5]),
            DVector::from_vec(vec![0.0, 0.0]),
        );
        let traj = simulate_forward(
            &dp,
            &cost,
            &initial,
            |_t| DVector::zeros(2),
            2.0,
            2000,
            Integrator::Rk4,
        )
        .unwrap();
        let e0 = traj.energy[0];
        for &e in &traj.energy {
            assert!(((e - e0) / e0).abs() <= 1e-7);
        }
    }

    #[test]
    fn flat_quadratic_adjoint_is_affine() {
        let flat = model("flat");
        let cost = CostModel::quadratic();
        let initial = PhaseState::new(DVector::zeros(2), DVector::zeros(2));
        let adjoint0 = AdjointState::new(
            DVector::from_vec(vec![1.0, -2.0]),
            DVector::from_vec(vec![0.5, 0.25]),
        );
        let traj = integrate_coupled(
            &flat,
            &cost,
            &initial,
            &adjoint0,
            1.0,
            10,
            Integrator::Rk4,
        )
        .unwrap();
        let adj = traj.adjoints.as_ref().unwrap();
        for (i, a) in adj.iter().enumerate() {
            let t = traj.t[i];
            // xi(t) = xi0 + pi0 t exactly: the packed system is nilpotent
            assert_abs_diff_eq!(a.xi[0], 1.0 + 0.5 * t, epsilon = 1e-13);
            assert_abs_diff_eq!(a.xi[1], -2.0 + 0.25 * t, epsilon = 1e-13);
            assert_abs_diff_eq!(a.pi[0], 0.5, epsilon = 1e-13);
        }
    }

    #[test]
    fn flat_harmonic_potential_reduces_to_oscillator() {
        // V = |q|^2/2 on flat space: xi'' = -xi componentwise
        let model = harmonic_model();
        let cost = CostModel::quadratic();
        let initial = PhaseState::new(DVector::zeros(2), DVector::zeros(2));
        let adjoint0 = AdjointState::new(
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
        );
        let traj = integrate_coupled(
            &model,
            &cost,
            &initial,
            &adjoint0,
            std::f64::consts::PI,
            1000,
            Integrator::Rk4,
        )
        .unwrap();
        let adj = traj.adjoints.as_ref().unwrap().last().unwrap();
        // xi(t) = xi0 cos t + pi0 sin t
        assert_abs_diff_eq!(adj.xi[0], -1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(adj.xi[1], 0.0, epsilon = 1e-6);
    }

    /// Flat 2-D space with V = |q|^2 / 2, assembled directly.
    fn harmonic_model() -> MechanicalModel {
        use crate::geometry::{MetricProvider, PotentialProvider};
        use crate::tensor::{Tensor3, Tensor4};
        let metric = MetricProvider::new(2, |_q| nalgebra::DMatrix::identity(2, 2))
            .with_partials(|_q| Tensor3::zeros(2))
            .with_second_partials(|_q| Tensor4::zeros(2));
        let potential = PotentialProvider::new(|q: &DVector<f64>| 0.5 * q.norm_squared())
            .with_gradient(|q| q.clone())
            .with_hessian(|q| nalgebra::DMatrix::identity(q.len(), q.len()));
        MechanicalModel::from_parts("harmonic", metric, potential, vec![(-3.0, 3.0); 2])
    }

    #[test]
    fn reduction_to_force_evolution_on_double_pendulum() {
        // identical initial data integrated through the coupled adjoint
        // system and through the independent second-order force evolution;
        // for the quadratic cost these must coincide. This is the test that
        // pins the curvature sign.
        let dp = model("double_pendulum");
        let cost = CostModel::quadratic();
        let q0 = DVector::from_vec(vec![0.4, -0.3]);
        let zeta0 = DVector::from_vec(vec![0.3, 0.2]);
        let xi0 = DVector::from_vec(vec![0.2, -0.1]);
        let v0 = DVector::from_vec(vec![0.05, 0.15]);

        let mut coupled = CoupledSystem::new(&dp, &cost);
        let y0 = CoupledSystem::pack(
            &PhaseState::new(q0.clone(), zeta0.clone()),
            &AdjointState::new(xi0.clone(), v0.clone()),
        );
        let (_, ys_coupled) =
            integrate(|t, y| coupled.rhs(t, y), &y0, 1.0, 2000, Integrator::Rk4).unwrap();

        let mut force = ForceEvolution::new(&dp);
        let (_, ys_force) =
            integrate(|t, y| force.rhs(t, y), &y0, 1.0, 2000, Integrator::Rk4).unwrap();

        let mut max_dev: f64 = 0.0;
        for (a, b) in ys_coupled.iter().zip(&ys_force) {
            max_dev = max_dev.max((a - b).amax());
        }
        assert!(max_dev <= 1e-8, "deviation {max_dev}");
    }

    #[test]
    fn second_derivative_identity_flat_and_pendulum() {
        let flat = model("flat");
        let cost = CostModel::quadratic();
        let traj = simulate_forward(
            &flat,
            &cost,
            &PhaseState::new(DVector::zeros(2), DVector::from_vec(vec![0.7, -0.4])),
            |_t| DVector::zeros(2),
            1.0,
            1000,
            Integrator::Rk4,
        )
        .unwrap();
        // polynomial field: central differences are exact
        let field = CovectorTestField {
            xi: Box::new(|t| DVector::from_vec(vec![t * t, 1.0 + t])),
            xi_dot: Box::new(|t| DVector::from_vec(vec![2.0 * t, 1.0])),
            xi_ddot: Box::new(|_t| DVector::from_vec(vec![2.0, 0.0])),
        };
        let r = check_second_derivative_identity(&flat, &traj, &field).unwrap();
        assert!(r <= 1e-10, "flat residual {r}");

        let pend = unit_pendulum();
        let traj = simulate_forward(
            &pend,
            &cost,
            &PhaseState::new(DVector::from_element(1, 0.4), DVector::zeros(1)),
            |_t| DVector::zeros(1),
            1.0,
            1000,
            Integrator::Rk4,
        )
        .unwrap();
        let field = CovectorTestField {
            xi: Box::new(|t| DVector::from_element(1, 1.0 + t * t)),
            xi_dot: Box::new(|t| DVector::from_element(1, 2.0 * t)),
            xi_ddot: Box::new(|_t| DVector::from_element(1, 2.0)),
        };
        let r = check_second_derivative_identity(&pend, &traj, &field).unwrap();
        assert!(r <= 1e-10, "pendulum residual {r}");
    }

    #[test]
    fn second_derivative_identity_on_sphere_parallel() {
        let sphere = model("sphere");
        // synthetic trajectory along a parallel: q(t) = (1.0, t), zeta = (0, 1)
        let steps = 10000;
        let h = 1.0 / steps as f64;
        let t: Vec<f64> = (0..=steps).map(|i| i as f64 * h).collect();
        let states: Vec<PhaseState> = t
            .iter()
            .map(|&ti| {
                PhaseState::new(
                    DVector::from_vec(vec![1.0, ti]),
                    DVector::from_vec(vec![0.0, 1.0]),
                )
            })
            .collect();
        let zeros = vec![DVector::zeros(2); t.len()];
        let traj = Trajectory {
            t,
            states,
            adjoints: None,
            controls: zeros.clone(),
            controls_cov: zeros,
            energy: vec![0.0; steps + 1],
            running_cost: vec![0.0; steps + 1],
        };
        let field = CovectorTestField {
            xi: Box::new(|t| DVector::from_vec(vec![t.sin(), t.cos()])),
            xi_dot: Box::new(|t| DVector::from_vec(vec![t.cos(), -t.sin()])),
            xi_ddot: Box::new(|t| DVector::from_vec(vec![-t.sin(), -t.cos()])),
        };
        let r = check_second_derivative_identity(&sphere, &traj, &field).unwrap();
        assert!(r <= 1e-5, "sphere residual {r}");
    }

    #[test]
    fn covariant_product_rule_along_trajectory() {
        let dp = model("double_pendulum");
        let cost = CostModel::quadratic();
        let traj = simulate_forward(
            &dp,
            &cost,
            &PhaseState::new(
                DVector::from_vec(vec![0.5, -0.2]),
                DVector::from_vec(vec![0.3, 0.1]),
            ),
            |_t| DVector::zeros(2),
            1.0,
            1000,
            Integrator::Rk4,
        )
        .unwrap();
        let xi_of = |t: f64| DVector::from_vec(vec![t.sin(), t.cos()]);
        let xi_dot = |t: f64| DVector::from_vec(vec![t.cos(), -t.sin()]);
        let phi_of = |t: f64| DVector::from_vec(vec![t, 1.0 - t]);
        let phi_dot = |_t: f64| DVector::from_vec(vec![1.0, -1.0]);

        let h = traj.t[1] - traj.t[0];
        for i in (1..traj.len() - 1).step_by(97) {
            let t = traj.t[i];
            let state = &traj.states[i];
            let geom = dp.metric().eval(&state.q).unwrap();

            let dxi = geom.covariant_time_derivative_covector(&state.zeta, &xi_of(t), &xi_dot(t));
            // vector covariant rate: phidot^j + Gamma^j_{kl} phi^k zeta^l
            let n = 2;
            let mut dphi = phi_dot(t);
            let phi = phi_of(t);
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        dphi[j] += geom.christoffel()[[j, k, l]] * phi[k] * state.zeta[l];
                    }
                }
            }
            let analytic = dxi.dot(&phi_of(t)) + xi_of(t).dot(&dphi);

            let pairing = |t: f64| xi_of(t).dot(&phi_of(t));
            let fd = (pairing(t + h) - pairing(t - h)) / (2.0 * h);
            assert_abs_diff_eq!(analytic, fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn non_finite_states_abort_with_step_index() {
        let field = |_t: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
            Ok(DVector::from_element(1, y[0] * y[0]))
        };
        // y' = y^2 blows up at t = 1 from y(0) = 1
        let err = integrate(
            field,
            &DVector::from_element(1, 1.0),
            2.0,
            100,
            Integrator::Rk4,
        )
        .unwrap_err();
        match err {
            Error::NonFiniteState { step, .. } => assert!(step > 0),
            other => panic!("unexpected error {other}"),
        }
    }
}
