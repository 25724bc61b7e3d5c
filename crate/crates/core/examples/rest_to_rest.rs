//! Minimum-effort rest-to-rest transfer on a line, solved by shooting.
//!
//! The case has a closed-form optimum: u(t) = 6 - 12 t, q(t) = 3t^2 - 2t^3,
//! J = 6. The solved trajectory is written next to the binary as
//! `rest_to_rest.csv`.

use std::collections::BTreeMap;

use covoc::models::build_model;
use covoc::output::write_trajectory;
use covoc::shooting::{shoot, BoundarySpec, ShootParams};
use covoc::cost::CostModel;
use nalgebra::DVector;

fn main() {
    let mut params = BTreeMap::new();
    params.insert("n".to_string(), 1.0);
    let model = build_model("flat", &params).unwrap();
    let cost = CostModel::quadratic();

    let boundary = BoundarySpec::fully_clamped(
        DVector::zeros(1),
        DVector::zeros(1),
        DVector::from_element(1, 1.0),
        DVector::zeros(1),
    );
    let report = shoot(&model, &cost, &boundary, &ShootParams::new(1.0, 5000), None).unwrap();

    println!("converged   : {} in {} Newton iterations", report.converged, report.iterations);
    println!("residual    : {:.3e}", report.residual_norm);
    println!("cost J      : {:.9}   (analytic 6.0)", report.cost);
    println!("unknowns    : xi(0) = {:.9}, pi(0) = {:.9}   (analytic 6, -12)",
        report.unknowns[0], report.unknowns[1]);

    println!("\n   t       u(t)      6 - 12 t");
    let traj = &report.trajectory;
    for i in (0..traj.len()).step_by(1000) {
        let t = traj.t[i];
        println!("{t:5.2}  {:+9.5}  {:+9.5}", traj.controls[i][0], 6.0 - 12.0 * t);
    }

    write_trajectory(traj, "rest_to_rest.csv").unwrap();
    println!("\ntrajectory written to rest_to_rest.csv");

    let ok = report.converged
        && (report.cost - 6.0).abs() <= 1e-6
        && (traj.controls[0][0] - 6.0).abs() <= 1e-6;
    println!("{}", if ok { "PASS" } else { "FAIL" });
    std::process::exit(i32::from(!ok));
}
