//! The three boundary cases on flat space, where each has a closed form.
//!
//! * free endpoint: the terminal conditions force the adjoint, and with it
//!   the control, to vanish identically; the system drifts.
//! * endpoint positions only: the optimal motion is the straight line at
//!   zero control, with the initial velocity as an unknown.
//! * fully clamped: the cubic rest-to-rest transfer.

use std::collections::BTreeMap;

use covoc::cost::CostModel;
use covoc::models::build_model;
use covoc::shooting::{shoot, BoundarySpec, ShootParams};
use nalgebra::DVector;

fn main() {
    let mut params = BTreeMap::new();
    params.insert("n".to_string(), 1.0);
    let model = build_model("flat", &params).unwrap();
    let cost = CostModel::quadratic();
    let params = ShootParams::new(1.0, 1000);
    let mut all_ok = true;

    // case A: initial state prescribed, endpoint free
    let bc = BoundarySpec::initial_state(
        DVector::from_element(1, 0.3),
        DVector::from_element(1, -0.7),
    );
    let report = shoot(&model, &cost, &bc, &params, None).unwrap();
    let max_u = report
        .trajectory
        .controls
        .iter()
        .fold(0.0f64, |m, u| m.max(u.amax()));
    let q_end = report.trajectory.states.last().unwrap().q[0];
    println!("case A (free endpoint):");
    println!("  max |u| = {max_u:.2e}, q(T) = {q_end:.6} (free drift to -0.4), J = {:.2e}", report.cost);
    all_ok &= report.converged && max_u <= 1e-9 && (q_end + 0.4).abs() <= 1e-9;

    // case B: endpoint positions, velocities free
    let bc = BoundarySpec::endpoint_positions(
        DVector::from_element(1, -0.5),
        DVector::from_element(1, 1.5),
    );
    let report = shoot(&model, &cost, &bc, &params, None).unwrap();
    let zeta0 = report.trajectory.states[0].zeta[0];
    println!("case B (endpoint positions):");
    println!("  solved zeta(0) = {zeta0:.9} (straight line needs 2.0), J = {:.2e}", report.cost);
    all_ok &= report.converged && (zeta0 - 2.0).abs() <= 1e-8 && report.cost.abs() <= 1e-12;

    // case C: fully clamped rest-to-rest
    let bc = BoundarySpec::fully_clamped(
        DVector::zeros(1),
        DVector::zeros(1),
        DVector::from_element(1, 1.0),
        DVector::zeros(1),
    );
    let report = shoot(&model, &cost, &bc, &params, None).unwrap();
    println!("case C (fully clamped):");
    println!(
        "  u(0) = {:.6}, u(T) = {:.6}, J = {:.6} (analytic 6, -6, 6)",
        report.trajectory.controls[0][0],
        report.trajectory.controls.last().unwrap()[0],
        report.cost
    );
    all_ok &= report.converged && (report.trajectory.controls[0][0] - 6.0).abs() <= 1e-6;

    println!("\n{}", if all_ok { "PASS" } else { "FAIL" });
    std::process::exit(i32::from(!all_ok));
}
