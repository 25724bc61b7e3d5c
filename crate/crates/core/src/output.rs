//! Trajectory CSV and report serialization.
//!
//! The CSV layout is a fixed contract: one row per grid node, columns
//!
//! ```text
//! t, q_1..q_n, zeta_1..zeta_n, u_1..u_n, ucov_1..ucov_n,
//! xi_1..xi_n, pi_1..pi_n, energy, running_cost
//! ```
//!
//! written with 17 significant digits so that parsing the file back
//! reproduces every `f64` bit for bit, and byte-identical output for
//! identical inputs. Trajectories without adjoint data write zeros in the
//! `xi`/`pi` columns.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};

/// Renders the CSV contract into a string.
pub fn trajectory_csv(trajectory: &Trajectory) -> String {
    let n = trajectory.dim();
    let mut header = String::from("t");
    for group in ["q", "zeta", "u", "ucov", "xi", "pi"] {
        for j in 1..=n {
            let _ = write!(header, ",{group}_{j}");
        }
    }
    header.push_str(",energy,running_cost\n");

    let mut out = header;
    for i in 0..trajectory.len() {
        let _ = write!(out, "{:.16e}", trajectory.t[i]);
        let mut cell = |v: f64| {
            let _ = write!(out, ",{v:.16e}");
        };
        for j in 0..n {
            cell(trajectory.states[i].q[j]);
        }
        for j in 0..n {
            cell(trajectory.states[i].zeta[j]);
        }
        for j in 0..n {
            cell(trajectory.controls[i][j]);
        }
        for j in 0..n {
            cell(trajectory.controls_cov[i][j]);
        }
        match &trajectory.adjoints {
            Some(adjoints) => {
                for j in 0..n {
                    cell(adjoints[i].xi[j]);
                }
                for j in 0..n {
                    cell(adjoints[i].pi[j]);
                }
            }
            None => {
                for _ in 0..2 * n {
                    cell(0.0);
                }
            }
        }
        cell(trajectory.energy[i]);
        cell(trajectory.running_cost[i]);
        out.push('\n');
    }
    out
}

pub fn write_trajectory(trajectory: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, trajectory_csv(trajectory)).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses a trajectory CSV back into its numeric rows (header first).
pub fn parse_trajectory_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .unwrap_or_default()
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(str::parse::<f64>).collect();
        match row {
            Ok(r) => rows.push(r),
            Err(e) => {
                return Err(Error::Config(vec![format!(
                    "trajectory csv row {}: {e}",
                    i + 2
                )]))
            }
        }
    }
    Ok((header, rows))
}

/// Writes any serializable report as pretty JSON with a trailing newline.
pub fn write_report<T: Serialize>(report: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Geometry invariant suite results, one entry per residual.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub command: &'static str,
    pub model: String,
    pub points: usize,
    pub christoffel_asymmetry: f64,
    pub riemann_antisymmetry_rel: f64,
    pub ricci_residual: f64,
    pub ricci_residual_fd: f64,
    /// Max relative gap between analytic and finite-difference mass
    /// derivatives; absent when the model has no analytic derivatives.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fd_vs_analytic_rel: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub command: &'static str,
    pub model: String,
    #[serde(rename = "horizon_T")]
    pub horizon_t: f64,
    #[serde(rename = "steps_N")]
    pub steps_n: usize,
    pub energy_initial: f64,
    pub energy_final: f64,
    pub energy_drift_rel: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub command: &'static str,
    pub model: String,
    pub boundary_case: String,
    #[serde(rename = "horizon_T")]
    pub horizon_t: f64,
    #[serde(rename = "steps_N")]
    pub steps_n: usize,
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
    pub tolerance: f64,
    pub cost: f64,
    /// `max_t |dgamma/du - xi|` along the returned trajectory.
    pub optimality_residual: f64,
    /// Solved initial values of the shooting unknowns.
    pub unknowns: Vec<f64>,
    /// The eliminated first multiplier at `t = 0`, recoverable as `-pi(0)`.
    pub rho0: Vec<f64>,
    pub newton_history: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectRunReport {
    pub command: &'static str,
    pub model: String,
    pub boundary_case: String,
    #[serde(rename = "steps_N")]
    pub steps_n: usize,
    pub penalty_weight: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    /// Penalized objective at the returned control.
    pub cost: f64,
    /// The cost integral alone.
    pub cost_integral: f64,
    /// The weighted terminal penalty alone.
    pub terminal_penalty: f64,
    pub terminal_position_error: f64,
    pub terminal_velocity_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub command: &'static str,
    pub model: String,
    pub boundary_case: String,
    pub indirect_converged: bool,
    pub direct_converged: bool,
    pub cost_indirect: f64,
    pub cost_direct: f64,
    /// `|J_indirect - J_direct| / (1 + |J_indirect|)`
    pub relative_gap: f64,
    /// Max-norm gap between the two controls on the direct grid.
    pub max_control_gap: f64,
    pub agreement: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::CostModel;
    use crate::dynamics::{simulate_forward, Integrator, PhaseState};
    use crate::models::build_model;
    use nalgebra::DVector;
    use std::collections::BTreeMap;

    fn tiny_trajectory() -> Trajectory {
        let mut params = BTreeMap::new();
        params.insert("n".to_string(), 2.0);
        let model = build_model("flat", &params).unwrap();
        let cost = CostModel::quadratic();
        simulate_forward(
            &model,
            &cost,
            &PhaseState::new(DVector::zeros(2), DVector::from_vec(vec![1.0, -1.0])),
            |_t| DVector::from_vec(vec![0.25, 0.5]),
            1.0,
            4,
            Integrator::Rk4,
        )
        .unwrap()
    }

    #[test]
    fn header_matches_the_contract() {
        let csv = trajectory_csv(&tiny_trajectory());
        let header = csv.lines().next().unwrap();
        assert_eq!(
            header,
            "t,q_1,q_2,zeta_1,zeta_2,u_1,u_2,ucov_1,ucov_2,xi_1,xi_2,pi_1,pi_2,energy,running_cost"
        );
        assert!(csv.ends_with('\n'));
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let traj = tiny_trajectory();
        let csv = trajectory_csv(&traj);
        let (_, rows) = parse_trajectory_csv(&csv).unwrap();
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row[0].to_bits(), traj.t[i].to_bits());
            assert_eq!(row[1].to_bits(), traj.states[i].q[0].to_bits());
            assert_eq!(row[5].to_bits(), traj.controls[i][0].to_bits());
            assert_eq!(row[13].to_bits(), traj.energy[i].to_bits());
            assert_eq!(row[14].to_bits(), traj.running_cost[i].to_bits());
        }
    }

    #[test]
    fn identical_trajectories_serialize_identically() {
        let a = trajectory_csv(&tiny_trajectory());
        let b = trajectory_csv(&tiny_trajectory());
        assert_eq!(a.as_bytes(), b.as_bytes());
    }

    #[test]
    fn single_node_trajectory_is_header_plus_one_row() {
        let mut traj = tiny_trajectory();
        traj.t.truncate(1);
        traj.states.truncate(1);
        traj.controls.truncate(1);
        traj.controls_cov.truncate(1);
        traj.energy.truncate(1);
        traj.running_cost.truncate(1);
        let csv = trajectory_csv(&traj);
        assert_eq!(csv.lines().count(), 2);
    }
}
