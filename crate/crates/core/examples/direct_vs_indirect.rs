//! Cross-check the shooting solver against the direct-transcription
//! optimizer on a double-pendulum point-to-point maneuver.

use std::collections::BTreeMap;

use covoc::cost::CostModel;
use covoc::direct::{agreement_gap, DirectProblem};
use covoc::models::build_model;
use covoc::shooting::{shoot, BoundarySpec, ShootParams};
use nalgebra::DVector;

fn main() {
    let model = build_model("double_pendulum", &BTreeMap::new()).unwrap();
    let cost = CostModel::quadratic();
    let boundary = BoundarySpec::fully_clamped(
        DVector::zeros(2),
        DVector::zeros(2),
        DVector::from_vec(vec![0.2, -0.1]),
        DVector::zeros(2),
    );

    println!("maneuver: (0, 0) -> (0.2, -0.1), rest to rest, T = 1\n");

    let indirect = shoot(&model, &cost, &boundary, &ShootParams::new(1.0, 2000), None).unwrap();
    println!(
        "indirect (shooting): converged = {}, {} iterations, J = {:.9}",
        indirect.converged, indirect.iterations, indirect.cost
    );

    let mut direct = DirectProblem::new(&model, &cost, &boundary, 1.0, 50).unwrap();
    let report = direct.optimize(150_000).unwrap();
    let (cost_integral, penalty) = direct.evaluate_parts().unwrap();
    println!(
        "direct (transcription): converged = {}, {} evaluations, J~ = {:.9}",
        report.converged, report.evaluations, report.cost
    );
    println!("  cost integral {cost_integral:.9}, terminal penalty {penalty:.3e}");

    let gap = agreement_gap(indirect.cost, report.cost);
    println!("\nrelative gap |J_indirect - J_direct| / (1 + J_indirect) = {gap:.3e}");

    println!("\n   t     u_1 indirect   u_1 direct");
    let times = direct.grid_times();
    for i in (0..times.len()).step_by(10) {
        // the indirect grid is 40x finer; sample it at the direct nodes
        let j = i * (indirect.trajectory.len() - 1) / (times.len() - 1);
        println!(
            "{:5.2}  {:+12.6}  {:+12.6}",
            times[i], indirect.trajectory.controls[j][0], direct.control_grid[i][0]
        );
    }

    let ok = indirect.converged && report.converged && gap <= 1e-2;
    println!("\n{}", if ok { "PASS: solvers agree to 1%" } else { "FAIL" });
    std::process::exit(i32::from(!ok));
}
