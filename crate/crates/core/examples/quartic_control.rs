//! A cost that is not quadratic: the adjoint is no longer the force.
//!
//! With `gamma = (1/4)(M_{kl} u^k u^l)^2` the optimality condition gives
//! `xi = (M u . u) u^flat`, so on a line `xi = u^3`. The speed-up maneuver
//! q: 0 -> 1, zeta: 0 -> 2 over T = 1 has the constant extremal u = 2 with
//! xi = 8 and J = 4.

use std::collections::BTreeMap;

use covoc::cost::{CostKind, CostModel};
use covoc::models::build_model;
use covoc::shooting::{shoot, BoundarySpec, ShootParams};
use nalgebra::DVector;

fn main() {
    let mut params = BTreeMap::new();
    params.insert("n".to_string(), 1.0);
    let model = build_model("flat", &params).unwrap();
    let cost = CostModel::new(CostKind::QuarticControl);

    let boundary = BoundarySpec::fully_clamped(
        DVector::zeros(1),
        DVector::zeros(1),
        DVector::from_element(1, 1.0),
        DVector::from_element(1, 2.0),
    );
    let report = shoot(&model, &cost, &boundary, &ShootParams::new(1.0, 1000), None).unwrap();

    println!("converged : {} in {} iterations", report.converged, report.iterations);
    println!("cost J    : {:.9}   (analytic 4.0)\n", report.cost);

    println!("   t       u(t)        xi(t)      u^3");
    let traj = &report.trajectory;
    let adjoints = traj.adjoints.as_ref().unwrap();
    let mut worst: f64 = 0.0;
    for i in (0..traj.len()).step_by(200) {
        let u = traj.controls[i][0];
        let xi = adjoints[i].xi[0];
        worst = worst.max((xi - u * u * u).abs());
        println!("{:5.2}  {u:+10.6}  {xi:+10.6}  {:+10.6}", traj.t[i], u * u * u);
    }

    println!("\nmax |xi - u^3| at the printed nodes: {worst:.3e}");
    println!("the adjoint tracks the cube of the control, not the control itself");

    let ok = report.converged && (report.cost - 4.0).abs() <= 1e-6 && worst <= 1e-8;
    println!("{}", if ok { "PASS" } else { "FAIL" });
    std::process::exit(i32::from(!ok));
}
