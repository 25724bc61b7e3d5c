//! Evaluate the geometry bundle of a built-in model and verify the
//! compatibility identities at a few configurations.

use std::collections::BTreeMap;

use covoc::geometry::check_ricci_identity;
use covoc::models::build_model;
use nalgebra::DVector;

fn main() {
    let model = build_model("double_pendulum", &BTreeMap::new()).unwrap();
    println!("model: {} (n = {})", model.name(), model.dim());
    println!("params: {:?}", model.params());

    let q = DVector::from_vec(vec![0.3, 0.7]);
    let geom = model.metric().eval(&q).unwrap();

    println!("\nmass matrix at q = (0.3, 0.7):");
    println!("{:.6}", geom.metric());
    println!("inverse:");
    println!("{:.6}", geom.metric_inv());

    println!("connection coefficients (upper index first):");
    for j in 0..2 {
        for i in 0..2 {
            for k in i..2 {
                let v = geom.christoffel()[[j, i, k]];
                if v.abs() > 1e-14 {
                    println!("  Gamma^{}_{}{} = {v:+.6}", j + 1, i + 1, k + 1);
                }
            }
        }
    }

    println!("\ncompatibility of the connection with the metric derivatives:");
    let mut worst_analytic: f64 = 0.0;
    let mut worst_fd: f64 = 0.0;
    let fd_metric = model.metric().without_analytic_derivatives();
    for i in 0..20 {
        let q = model.lattice_configuration(i);
        worst_analytic = worst_analytic.max(check_ricci_identity(model.metric(), &q).unwrap().max());
        worst_fd = worst_fd.max(check_ricci_identity(&fd_metric, &q).unwrap().max());
    }
    println!("  max residual, analytic derivatives : {worst_analytic:.3e}");
    println!("  max residual, finite differences   : {worst_fd:.3e}");

    let ok = worst_analytic <= 1e-12 && worst_fd <= 1e-8;
    println!("\n{}", if ok { "PASS" } else { "FAIL" });
    std::process::exit(i32::from(!ok));
}
