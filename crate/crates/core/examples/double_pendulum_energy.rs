//! Free swing of the double pendulum: energy conservation under RK4.

use std::collections::BTreeMap;

use covoc::cost::CostModel;
use covoc::dynamics::{simulate_forward, Integrator, PhaseState};
use covoc::models::build_model;
use nalgebra::DVector;

fn main() {
    let model = build_model("double_pendulum", &BTreeMap::new()).unwrap();
    let cost = CostModel::quadratic();

    let initial = PhaseState::new(
        DVector::from_vec(vec![std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4]),
        DVector::zeros(2),
    );
    let t_horizon = 10.0;
    let steps = 10_000;
    let traj = simulate_forward(
        &model,
        &cost,
        &initial,
        |_t| DVector::zeros(2),
        t_horizon,
        steps,
        Integrator::Rk4,
    )
    .unwrap();

    let e0 = traj.energy[0];
    println!("initial angles : ({:.4}, {:.4}) rad", initial.q[0], initial.q[1]);
    println!("initial energy : {e0:.10}");
    println!();
    println!("   t        q1        q2        energy        drift");
    let mut max_drift: f64 = 0.0;
    for i in (0..traj.len()).step_by(1000) {
        let drift = ((traj.energy[i] - e0) / e0).abs();
        max_drift = max_drift.max(drift);
        println!(
            "{:6.2}  {:+8.4}  {:+8.4}  {:12.8}  {:.2e}",
            traj.t[i], traj.states[i].q[0], traj.states[i].q[1], traj.energy[i], drift
        );
    }
    let final_drift = ((traj.energy.last().unwrap() - e0) / e0).abs();
    max_drift = max_drift.max(final_drift);

    println!();
    println!("max relative drift over T = {t_horizon}: {max_drift:.3e}");
    let ok = max_drift <= 1e-6;
    println!("{}", if ok { "PASS: energy conserved to 1e-6" } else { "FAIL" });
    std::process::exit(i32::from(!ok));
}
