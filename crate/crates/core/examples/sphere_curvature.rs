//! Curvature of the unit-sphere test metric against its closed form.
//!
//! The sphere is the smallest metric with nonzero curvature, so it anchors
//! the sign and index conventions: with the curvature definition used by
//! this crate, the sectional curvature `R_1212 / det M` of the unit sphere
//! is `-1`.

use std::collections::BTreeMap;

use covoc::models::build_model;
use nalgebra::DVector;

fn main() {
    let sphere = build_model("sphere", &BTreeMap::new()).unwrap();
    println!("model: {} ({})", sphere.name(), sphere.domain_note());

    let q1 = std::f64::consts::FRAC_PI_4;
    let geom = sphere
        .metric()
        .eval(&DVector::from_vec(vec![q1, 0.0]))
        .unwrap();

    println!("\nconnection at q1 = pi/4 (closed form: -sin q1 cos q1 and cot q1):");
    println!("  Gamma^1_22 = {:+.12}  (expected -0.5)", geom.christoffel()[[0, 1, 1]]);
    println!("  Gamma^2_12 = {:+.12}  (expected +1.0)", geom.christoffel()[[1, 0, 1]]);

    println!("\nnonzero curvature components at q1 = pi/4:");
    let expected = [
        ((0usize, 1usize, 0usize, 1usize), -0.5),
        ((0, 1, 1, 0), 0.5),
        ((1, 0, 0, 1), 1.0),
        ((1, 0, 1, 0), -1.0),
    ];
    let mut worst: f64 = 0.0;
    for ((j, i, k, l), value) in expected {
        let got = geom.riemann()[[j, i, k, l]];
        worst = worst.max((got - value).abs());
        println!(
            "  R^{}_{}{}{} = {got:+.12}  (expected {value:+.1})",
            j + 1,
            i + 1,
            k + 1,
            l + 1
        );
    }

    println!("\nsectional curvature along the sphere:");
    let mut worst_sectional: f64 = 0.0;
    for q1 in [0.4, 0.9, 1.4, 2.2, 2.7] {
        let geom = sphere
            .metric()
            .eval(&DVector::from_vec(vec![q1, 0.0]))
            .unwrap();
        let mut r_1212 = 0.0;
        for m in 0..2 {
            r_1212 += geom.metric()[(0, m)] * geom.riemann()[[m, 1, 0, 1]];
        }
        let det = geom.metric()[(0, 0)] * geom.metric()[(1, 1)];
        let kappa = r_1212 / det;
        worst_sectional = worst_sectional.max((kappa + 1.0).abs());
        println!("  q1 = {q1:.1}: R_1212 / det M = {kappa:+.12}");
    }

    // the contraction entering the adjoint equation, frozen value (0, 1)
    let force = geom.curvature_force(
        &DVector::from_vec(vec![1.0, 0.0]),
        &DVector::from_vec(vec![0.0, 1.0]),
    );
    println!("\ncurvature force at pi/4 with zeta = (1,0), xi = (0,1): ({:+.9}, {:+.9})", force[0], force[1]);

    let ok = worst <= 1e-11 && worst_sectional <= 1e-10 && (force[1] - 1.0).abs() <= 1e-11;
    println!("\n{}", if ok { "PASS" } else { "FAIL" });
    std::process::exit(i32::from(!ok));
}
