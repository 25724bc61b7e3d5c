//! Command-line surface: five subcommands over a shared scenario config.
//!
//! Exit codes: 0 success, 1 configuration error, 2 solver non-convergence or
//! invariant violation.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use rand::{rngs::StdRng, SeedableRng};

use crate::cost::CostModel;
use crate::direct::{agreement_gap, resample_controls, DirectProblem};
use crate::dynamics::{simulate_forward, PhaseState, Trajectory};
use crate::error::Error;
use crate::geometry::check_ricci_identity;
use crate::models::MechanicalModel;
use crate::output::{
    write_report, write_trajectory, CheckReport, CompareReport, DirectRunReport, SimulateReport,
    SolveReport,
};
use crate::scenario::{parse_config, Scenario};
use crate::shooting::{shoot, BoundaryCase, ShootParams, ShootReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NO_CONVERGENCE: i32 = 2;

#[derive(Parser)]
#[command(
    name = "covoc",
    about = "Covariant optimal control for mechanical systems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the geometry invariant suite on the configured model.
    Check {
        #[arg(long)]
        config: PathBuf,
        /// Random configurations sampled per residual.
        #[arg(long, default_value_t = 100)]
        points: usize,
    },
    /// Integrate the forward dynamics under the configured control.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve the boundary value problem by shooting.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Optimize the control by direct transcription.
    Direct {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run both solvers and report their agreement.
    Compare {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Entry point shared by the binary and the tests.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Check { config, points } => with_scenario(&config, |s| cmd_check(s, points)),
        Command::Simulate { config } => with_scenario(&config, cmd_simulate),
        Command::Solve { config } => with_scenario(&config, cmd_solve),
        Command::Direct { config } => with_scenario(&config, cmd_direct),
        Command::Compare { config } => with_scenario(&config, cmd_compare),
    }
}

fn with_scenario(path: &Path, f: impl FnOnce(&Scenario) -> crate::Result<i32>) -> i32 {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return EXIT_CONFIG;
        }
    };
    let scenario = match parse_config(&text).and_then(|c| c.build()) {
        Ok(s) => s,
        Err(Error::Config(messages)) => {
            eprintln!("error: configuration invalid:");
            for m in &messages {
                eprintln!("  - {m}");
            }
            return EXIT_CONFIG;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match f(&scenario) {
        Ok(code) => code,
        Err(Error::Config(messages)) => {
            eprintln!("error: configuration invalid:");
            for m in &messages {
                eprintln!("  - {m}");
            }
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_NO_CONVERGENCE
        }
    }
}

fn cmd_check(scenario: &Scenario, points: usize) -> crate::Result<i32> {
    let model = &scenario.model;
    let metric = model.metric();
    let fd_metric = metric.without_analytic_derivatives();
    let n = model.dim();
    let mut rng = StdRng::seed_from_u64(0x636f_766f);

    let mut christoffel_asymmetry: f64 = 0.0;
    let mut riemann_rel: f64 = 0.0;
    let mut ricci: f64 = 0.0;
    let mut ricci_fd: f64 = 0.0;
    let mut fd_vs_analytic: f64 = 0.0;
    let mut stored_symmetric = true;

    for _ in 0..points {
        let q = model.random_configuration(&mut rng);
        let geom = metric.eval(&q)?;

        // symmetry of the unsymmetrized connection formula
        let dm = geom.mass_partials();
        let minv = geom.metric_inv();
        for j in 0..n {
            for i in 0..n {
                for k in 0..n {
                    if geom.christoffel()[[j, i, k]] != geom.christoffel()[[j, k, i]] {
                        stored_symmetric = false;
                    }
                    let mut raw_gap = 0.0;
                    for l in 0..n {
                        raw_gap += 0.5 * minv[(j, l)] * (dm[[l, k, i]] - dm[[l, i, k]]);
                    }
                    christoffel_asymmetry = christoffel_asymmetry.max(raw_gap.abs());
                }
            }
        }

        let scale = geom.riemann().max_abs();
        if scale > 0.0 {
            for j in 0..n {
                for i in 0..n {
                    for k in 0..n {
                        for l in 0..n {
                            let s = geom.riemann()[[j, i, k, l]] + geom.riemann()[[j, i, l, k]];
                            riemann_rel = riemann_rel.max(s.abs() / scale);
                        }
                    }
                }
            }
        }

        ricci = ricci.max(check_ricci_identity(metric, &q)?.max());
        ricci_fd = ricci_fd.max(check_ricci_identity(&fd_metric, &q)?.max());

        if metric.has_analytic_partials() {
            let a = metric.mass_partials(&q);
            let f = metric.mass_partials_fd(&q);
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let gap = (a[[j, k, l]] - f[[j, k, l]]).abs()
                            / a[[j, k, l]].abs().max(1.0);
                        fd_vs_analytic = fd_vs_analytic.max(gap);
                    }
                }
            }
        }
    }

    let ricci_bound = if metric.has_analytic_partials() {
        1e-12
    } else {
        1e-8
    };
    let passed = stored_symmetric
        && christoffel_asymmetry <= 1e-10
        && riemann_rel <= 1e-10
        && ricci <= ricci_bound
        && ricci_fd <= 1e-8
        && (!metric.has_analytic_partials() || fd_vs_analytic <= 1e-6);

    let report = CheckReport {
        command: "check",
        model: model.name().to_string(),
        points,
        christoffel_asymmetry,
        riemann_antisymmetry_rel: riemann_rel,
        ricci_residual: ricci,
        ricci_residual_fd: ricci_fd,
        fd_vs_analytic_rel: metric.has_analytic_partials().then_some(fd_vs_analytic),
        passed,
    };
    write_report(&report, &scenario.config.output.report_path)?;

    println!("geometry invariants for model {:?}", model.name());
    println!("  christoffel stored symmetric : {stored_symmetric}");
    println!("  christoffel raw asymmetry    : {christoffel_asymmetry:.3e}");
    println!("  riemann antisymmetry (rel)   : {riemann_rel:.3e}");
    println!("  ricci residual               : {ricci:.3e}  (bound {ricci_bound:.0e})");
    println!("  ricci residual (fd path)     : {ricci_fd:.3e}  (bound 1e-8)");
    if metric.has_analytic_partials() {
        println!("  fd vs analytic (rel)         : {fd_vs_analytic:.3e}  (bound 1e-6)");
    }
    println!("  => {}", if passed { "PASS" } else { "FAIL" });
    Ok(if passed { EXIT_OK } else { EXIT_NO_CONVERGENCE })
}

fn initial_state(scenario: &Scenario) -> PhaseState {
    let n = scenario.model.dim();
    PhaseState::new(
        scenario.boundary.q0.clone(),
        scenario
            .boundary
            .zeta0
            .clone()
            .unwrap_or_else(|| DVector::zeros(n)),
    )
}

fn cmd_simulate(scenario: &Scenario) -> crate::Result<i32> {
    let n = scenario.model.dim();
    let constant = scenario
        .config
        .control
        .as_ref()
        .map(|c| DVector::from_vec(c.constant.clone()))
        .unwrap_or_else(|| DVector::zeros(n));
    let trajectory = simulate_forward(
        &scenario.model,
        &scenario.cost,
        &initial_state(scenario),
        |_t| constant.clone(),
        scenario.config.horizon_t,
        scenario.config.steps_n,
        scenario.integrator,
    )?;

    let e0 = trajectory.energy[0];
    let drift = trajectory
        .energy
        .iter()
        .fold(0.0f64, |m, &e| m.max((e - e0).abs()))
        / e0.abs().max(1e-300);
    let report = SimulateReport {
        command: "simulate",
        model: scenario.model.name().to_string(),
        horizon_t: scenario.config.horizon_t,
        steps_n: scenario.config.steps_n,
        energy_initial: e0,
        energy_final: *trajectory.energy.last().unwrap(),
        energy_drift_rel: drift,
        cost: trajectory.cost(),
    };
    write_trajectory(&trajectory, &scenario.config.output.trajectory_path)?;
    write_report(&report, &scenario.config.output.report_path)?;
    println!(
        "simulated {} for T = {} ({} steps): energy drift {:.3e}, cost {:.6}",
        scenario.model.name(),
        scenario.config.horizon_t,
        scenario.config.steps_n,
        drift,
        trajectory.cost()
    );
    Ok(EXIT_OK)
}

fn shoot_params(scenario: &Scenario) -> ShootParams {
    ShootParams {
        t_horizon: scenario.config.horizon_t,
        steps: scenario.config.steps_n,
        tol: scenario.config.solver.tol,
        max_iter: scenario.config.solver.max_iter,
        integrator: scenario.integrator,
    }
}

fn optimality_residual(
    model: &MechanicalModel,
    cost: &CostModel,
    trajectory: &Trajectory,
) -> crate::Result<f64> {
    let adjoints = trajectory.adjoints.as_ref().expect("solved trajectory");
    let mut worst: f64 = 0.0;
    for ((state, control), adjoint) in trajectory
        .states
        .iter()
        .zip(&trajectory.controls)
        .zip(adjoints)
    {
        let geom = model.metric().eval(&state.q)?;
        let gu = cost.grad_u(&geom, &state.zeta, control);
        worst = worst.max((gu - &adjoint.xi).amax());
    }
    Ok(worst)
}

fn run_shoot(scenario: &Scenario) -> crate::Result<ShootReport> {
    let params = shoot_params(scenario);
    let guess = scenario
        .config
        .solver
        .initial_guess
        .as_ref()
        .map(|g| DVector::from_vec(g.clone()));
    shoot(
        &scenario.model,
        &scenario.cost,
        &scenario.boundary,
        &params,
        guess,
    )
}

fn cmd_solve(scenario: &Scenario) -> crate::Result<i32> {
    let report = run_shoot(scenario)?;
    let optimality = optimality_residual(&scenario.model, &scenario.cost, &report.trajectory)?;
    let n = scenario.model.dim();
    let pi0 = &report.trajectory.adjoints.as_ref().unwrap()[0].pi;
    let file = SolveReport {
        command: "solve",
        model: scenario.model.name().to_string(),
        boundary_case: scenario.config.boundary.case.clone(),
        horizon_t: scenario.config.horizon_t,
        steps_n: scenario.config.steps_n,
        converged: report.converged,
        iterations: report.iterations,
        residual_norm: report.residual_norm,
        tolerance: scenario.config.solver.tol,
        cost: report.cost,
        optimality_residual: optimality,
        unknowns: report.unknowns.iter().copied().collect(),
        rho0: (0..n).map(|j| -pi0[j]).collect(),
        newton_history: report.newton_history.clone(),
    };
    write_trajectory(&report.trajectory, &scenario.config.output.trajectory_path)?;
    write_report(&file, &scenario.config.output.report_path)?;
    println!(
        "solve {}: converged = {}, iterations = {}, residual = {:.3e}, J = {:.9}",
        scenario.model.name(),
        report.converged,
        report.iterations,
        report.residual_norm,
        report.cost
    );
    Ok(if report.converged {
        EXIT_OK
    } else {
        EXIT_NO_CONVERGENCE
    })
}

fn run_direct(scenario: &Scenario) -> crate::Result<(DirectProblem<'_>, crate::direct::DirectReport)> {
    let mut problem = DirectProblem::new(
        &scenario.model,
        &scenario.cost,
        &scenario.boundary,
        scenario.config.horizon_t,
        scenario.config.direct.steps_n,
    )?;
    problem.penalty_weight = scenario.config.direct.penalty_weight;
    let report = problem.optimize(scenario.config.direct.max_evals)?;
    Ok((problem, report))
}

fn direct_trajectory(scenario: &Scenario, problem: &DirectProblem<'_>) -> crate::Result<Trajectory> {
    let initial = PhaseState::new(scenario.boundary.q0.clone(), problem.zeta0.clone());
    simulate_forward(
        &scenario.model,
        &scenario.cost,
        &initial,
        |t| problem.control_at(t),
        scenario.config.horizon_t,
        scenario.config.direct.steps_n,
        crate::dynamics::Integrator::Rk4,
    )
}

fn cmd_direct(scenario: &Scenario) -> crate::Result<i32> {
    let (problem, report) = run_direct(scenario)?;
    let (cost_integral, terminal_penalty) = problem.evaluate_parts()?;
    let trajectory = direct_trajectory(scenario, &problem)?;
    let end = trajectory.states.last().unwrap();
    let (pos_err, vel_err) = match scenario.boundary.case {
        BoundaryCase::InitialState => (0.0, 0.0),
        BoundaryCase::EndpointPositions => (
            (&end.q - scenario.boundary.q_final.as_ref().unwrap()).amax(),
            0.0,
        ),
        BoundaryCase::FullyClamped => (
            (&end.q - scenario.boundary.q_final.as_ref().unwrap()).amax(),
            (&end.zeta - scenario.boundary.zeta_final.as_ref().unwrap()).amax(),
        ),
    };
    let file = DirectRunReport {
        command: "direct",
        model: scenario.model.name().to_string(),
        boundary_case: scenario.config.boundary.case.clone(),
        steps_n: scenario.config.direct.steps_n,
        penalty_weight: problem.penalty_weight,
        converged: report.converged,
        iterations: report.iterations,
        evaluations: report.evaluations,
        cost: report.cost,
        cost_integral,
        terminal_penalty,
        terminal_position_error: pos_err,
        terminal_velocity_error: vel_err,
    };
    write_trajectory(&trajectory, &scenario.config.output.trajectory_path)?;
    write_report(&file, &scenario.config.output.report_path)?;
    println!(
        "direct {}: converged = {}, evaluations = {}, J = {:.9}",
        scenario.model.name(),
        report.converged,
        report.evaluations,
        report.cost
    );
    Ok(if report.converged {
        EXIT_OK
    } else {
        EXIT_NO_CONVERGENCE
    })
}

fn cmd_compare(scenario: &Scenario) -> crate::Result<i32> {
    let indirect = run_shoot(scenario)?;
    let (problem, direct) = run_direct(scenario)?;

    let gap = agreement_gap(indirect.cost, direct.cost);
    let direct_times = problem.grid_times();
    let resampled = resample_controls(
        &indirect.trajectory.t,
        &indirect.trajectory.controls,
        &direct_times,
    );
    let mut control_gap: f64 = 0.0;
    for (a, b) in resampled.iter().zip(&problem.control_grid) {
        control_gap = control_gap.max((a - b).amax());
    }
    let agreement = indirect.converged && direct.converged && gap <= 1e-2;
    let file = CompareReport {
        command: "compare",
        model: scenario.model.name().to_string(),
        boundary_case: scenario.config.boundary.case.clone(),
        indirect_converged: indirect.converged,
        direct_converged: direct.converged,
        cost_indirect: indirect.cost,
        cost_direct: direct.cost,
        relative_gap: gap,
        max_control_gap: control_gap,
        agreement,
    };
    write_trajectory(&indirect.trajectory, &scenario.config.output.trajectory_path)?;
    write_report(&file, &scenario.config.output.report_path)?;
    println!(
        "compare {}: J_indirect = {:.9}, J_direct = {:.9}, gap = {:.3e}, agreement = {}",
        scenario.model.name(),
        indirect.cost,
        direct.cost,
        gap,
        agreement
    );
    Ok(if agreement { EXIT_OK } else { EXIT_NO_CONVERGENCE })
}
