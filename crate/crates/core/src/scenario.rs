//! Scenario configuration: a strict JSON schema describing one problem
//! instance, shared by every CLI command.
//!
//! Unknown keys are rejected and validation reports every problem it finds,
//! not just the first; scenario files double as regression fixtures, and a
//! silently ignored typo would invalidate them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::dynamics::Integrator;
use crate::error::{Error, Result};
use crate::models::{build_model, MechanicalModel};
use crate::shooting::{BoundaryCase, BoundarySpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelSection,
    pub cost: CostSection,
    #[serde(rename = "horizon_T")]
    pub horizon_t: f64,
    #[serde(rename = "steps_N")]
    pub steps_n: usize,
    pub boundary: BoundarySection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub direct: DirectSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub kind: String,
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    /// One of `A_initial_state`, `B_endpoint_positions`, `C_fully_clamped`.
    pub case: String,
    pub q0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta0: Option<Vec<f64>>,
    #[serde(rename = "qT", default, skip_serializing_if = "Option::is_none")]
    pub q_final: Option<Vec<f64>>,
    #[serde(rename = "zetaT", default, skip_serializing_if = "Option::is_none")]
    pub zeta_final: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_integrator")]
    pub integrator: String,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    /// Optional override of the all-zero starting point for the shooting
    /// unknowns (`2 n` values).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_guess: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectSection {
    /// Grid for the direct transcription; coarser than the solve grid by
    /// default because every gradient costs two integrations per node.
    #[serde(rename = "steps_N", default = "default_direct_steps")]
    pub steps_n: usize,
    #[serde(default = "default_penalty_weight")]
    pub penalty_weight: f64,
    #[serde(default = "default_max_evals")]
    pub max_evals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    /// Constant control applied during `simulate`.
    pub constant: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_trajectory_path")]
    pub trajectory_path: String,
    #[serde(default = "default_report_path")]
    pub report_path: String,
}

fn default_tol() -> f64 {
    1e-9
}
fn default_max_iter() -> usize {
    100
}
fn default_integrator() -> String {
    "rk4".into()
}
fn default_fd_step() -> f64 {
    1e-6
}
fn default_direct_steps() -> usize {
    50
}
fn default_penalty_weight() -> f64 {
    1e6
}
fn default_max_evals() -> usize {
    100_000
}
fn default_trajectory_path() -> String {
    "trajectory.csv".into()
}
fn default_report_path() -> String {
    "report.json".into()
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iter: default_max_iter(),
            integrator: default_integrator(),
            fd_step: default_fd_step(),
            initial_guess: None,
        }
    }
}

impl Default for DirectSection {
    fn default() -> Self {
        Self {
            steps_n: default_direct_steps(),
            penalty_weight: default_penalty_weight(),
            max_evals: default_max_evals(),
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            trajectory_path: default_trajectory_path(),
            report_path: default_report_path(),
        }
    }
}

pub const BOUNDARY_CASE_NAMES: [&str; 3] = [
    "A_initial_state",
    "B_endpoint_positions",
    "C_fully_clamped",
];

/// A fully instantiated scenario ready to run.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: MechanicalModel,
    pub cost: CostModel,
    pub boundary: BoundarySpec,
    pub integrator: Integrator,
}

/// Parses and fully validates a scenario. The error carries every problem
/// found, each message naming the offending field.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let mut deserializer = serde_json::Deserializer::from_str(text);
    let config: ScenarioConfig = serde_path_to_error::deserialize(&mut deserializer)
        .map_err(|e| Error::Config(vec![format!("{}: {}", e.path(), e.inner())]))?;
    let errors = config.validate();
    if errors.is_empty() {
        Ok(config)
    } else {
        Err(Error::Config(errors))
    }
}

impl ScenarioConfig {
    /// Collects every validation problem; empty means the config is sound.
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        let mut push = |msg: String| errors.push(msg);

        if !(self.horizon_t.is_finite() && self.horizon_t > 0.0) {
            push(format!(
                "horizon_T: must be positive and finite, got {}",
                self.horizon_t
            ));
        }
        if self.steps_n < 2 {
            push(format!("steps_N: must be at least 2, got {}", self.steps_n));
        }
        if !(self.solver.tol.is_finite() && self.solver.tol > 0.0) {
            push(format!(
                "solver.tol: must be positive and finite, got {}",
                self.solver.tol
            ));
        }
        if self.solver.max_iter == 0 {
            push("solver.max_iter: must be at least 1".into());
        }
        if !(self.solver.fd_step.is_finite() && self.solver.fd_step > 0.0) {
            push(format!(
                "solver.fd_step: must be positive and finite, got {}",
                self.solver.fd_step
            ));
        }
        if !matches!(self.solver.integrator.as_str(), "rk4" | "rk45") {
            push(format!(
                "solver.integrator: unknown integrator {:?}; allowed: rk4, rk45",
                self.solver.integrator
            ));
        }
        if self.direct.steps_n < 2 {
            push(format!(
                "direct.steps_N: must be at least 2, got {}",
                self.direct.steps_n
            ));
        }
        if !(self.direct.penalty_weight.is_finite() && self.direct.penalty_weight > 0.0) {
            push(format!(
                "direct.penalty_weight: must be positive and finite, got {}",
                self.direct.penalty_weight
            ));
        }
        if self.direct.max_evals == 0 {
            push("direct.max_evals: must be at least 1".into());
        }
        if self.output.trajectory_path.is_empty() {
            push("output.trajectory_path: must not be empty".into());
        }
        if self.output.report_path.is_empty() {
            push("output.report_path: must not be empty".into());
        }

        if let Err(e) = CostModel::from_config(&self.cost.kind, &self.cost.weights) {
            push(format!("cost: {e}"));
        }

        let model = match build_model(&self.model.name, &self.model.params) {
            Ok(m) => Some(m),
            Err(e) => {
                push(format!("model: {e}"));
                None
            }
        };

        if !BOUNDARY_CASE_NAMES.contains(&self.boundary.case.as_str()) {
            push(format!(
                "boundary.case: unknown case {:?}; allowed: {}",
                self.boundary.case,
                BOUNDARY_CASE_NAMES.join(", ")
            ));
        }

        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let mut check_vec = |field: &str, v: Option<&Vec<f64>>, required: bool| {
            match v {
                Some(values) => {
                    if !finite(values) {
                        push(format!("boundary.{field}: contains a non-finite value"));
                    } else if let Some(m) = &model {
                        if values.len() != m.dim() {
                            push(format!(
                                "boundary.{field}: expected {} components for model {:?}, got {}",
                                m.dim(),
                                m.name(),
                                values.len()
                            ));
                        }
                    }
                }
                None if required => {
                    push(format!(
                        "boundary.{field}: required by case {:?}",
                        self.boundary.case
                    ));
                }
                None => {}
            }
        };
        let (need_zeta0, need_qt, need_zetat) = match self.boundary.case.as_str() {
            "A_initial_state" => (true, false, false),
            "B_endpoint_positions" => (false, true, false),
            "C_fully_clamped" => (true, true, true),
            _ => (false, false, false),
        };
        check_vec("q0", Some(&self.boundary.q0), true);
        check_vec("zeta0", self.boundary.zeta0.as_ref(), need_zeta0);
        check_vec("qT", self.boundary.q_final.as_ref(), need_qt);
        check_vec("zetaT", self.boundary.zeta_final.as_ref(), need_zetat);

        if let Some(guess) = &self.solver.initial_guess {
            if !finite(guess) {
                errors.push("solver.initial_guess: contains a non-finite value".into());
            } else if let Some(m) = &model {
                if guess.len() != 2 * m.dim() {
                    errors.push(format!(
                        "solver.initial_guess: expected {} values, got {}",
                        2 * m.dim(),
                        guess.len()
                    ));
                }
            }
        }

        if let Some(control) = &self.control {
            if !finite(&control.constant) {
                errors.push("control.constant: contains a non-finite value".into());
            } else if let Some(m) = &model {
                if control.constant.len() != m.dim() {
                    errors.push(format!(
                        "control.constant: expected {} components, got {}",
                        m.dim(),
                        control.constant.len()
                    ));
                }
            }
        }
        errors
    }

    /// Instantiates the model, cost, and boundary data.
    pub fn build(&self) -> Result<Scenario> {
        let errors = self.validate();
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let mut model = build_model(&self.model.name, &self.model.params)?;
        model.set_fd_step(self.solver.fd_step);
        let cost = CostModel::from_config(&self.cost.kind, &self.cost.weights)?;
        let case = match self.boundary.case.as_str() {
            "A_initial_state" => BoundaryCase::InitialState,
            "B_endpoint_positions" => BoundaryCase::EndpointPositions,
            "C_fully_clamped" => BoundaryCase::FullyClamped,
            _ => unreachable!("validated above"),
        };
        let to_vec = |v: &Vec<f64>| nalgebra::DVector::from_vec(v.clone());
        let boundary = BoundarySpec {
            case,
            q0: to_vec(&self.boundary.q0),
            zeta0: self.boundary.zeta0.as_ref().map(to_vec),
            q_final: self.boundary.q_final.as_ref().map(to_vec),
            zeta_final: self.boundary.zeta_final.as_ref().map(to_vec),
        };
        let integrator = match self.solver.integrator.as_str() {
            "rk4" => Integrator::Rk4,
            _ => Integrator::rk45_default(),
        };
        Ok(Scenario {
            config: self.clone(),
            model,
            cost,
            boundary,
            integrator,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_case_a() -> String {
        r#"{
            "model": { "name": "flat", "params": { "n": 1 } },
            "cost": { "kind": "quadratic_control" },
            "horizon_T": 1.0,
            "steps_N": 100,
            "boundary": { "case": "A_initial_state", "q0": [0.0], "zeta0": [0.5] }
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config = parse_config(&minimal_case_a()).unwrap();
        assert_eq!(config.solver.tol, 1e-9);
        assert_eq!(config.solver.max_iter, 100);
        assert_eq!(config.solver.integrator, "rk4");
        assert_eq!(config.output.trajectory_path, "trajectory.csv");
        assert_eq!(config.direct.penalty_weight, 1e6);
        let scenario = config.build().unwrap();
        assert_eq!(scenario.model.dim(), 1);
    }

    #[test]
    fn negative_horizon_names_the_field() {
        let text = minimal_case_a().replace("\"horizon_T\": 1.0", "\"horizon_T\": -1.0");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("horizon_T"), "{err}");
    }

    #[test]
    fn unknown_cost_kind_lists_the_alternatives() {
        let text = minimal_case_a().replace("quadratic_control", "cubic");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("cubic"), "{err}");
        assert!(err.contains("quadratic_control_plus_velocity"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_path() {
        let text = minimal_case_a().replace("\"horizon_T\"", "\"horizon\"");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("horizon"), "{err}");
    }

    #[test]
    fn all_errors_are_collected_not_just_the_first() {
        let text = r#"{
            "model": { "name": "rope" },
            "cost": { "kind": "cubic" },
            "horizon_T": -2.0,
            "steps_N": 1,
            "boundary": { "case": "D_weird", "q0": [0.0] }
        }"#;
        let err = parse_config(text).unwrap_err();
        match err {
            Error::Config(messages) => {
                assert!(messages.len() >= 5, "messages: {messages:#?}");
                assert!(messages.iter().any(|m| m.contains("horizon_T")));
                assert!(messages.iter().any(|m| m.contains("steps_N")));
                assert!(messages.iter().any(|m| m.contains("rope")));
                assert!(messages.iter().any(|m| m.contains("cubic")));
                assert!(messages.iter().any(|m| m.contains("boundary.case")));
            }
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn dimension_mismatches_are_reported() {
        let text = minimal_case_a().replace("\"q0\": [0.0]", "\"q0\": [0.0, 1.0]");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("boundary.q0"), "{err}");
    }

    #[test]
    fn config_round_trip_is_idempotent() {
        let config = parse_config(&minimal_case_a()).unwrap();
        let json = config.to_json();
        let reparsed = parse_config(&json).unwrap();
        assert_eq!(config, reparsed);
    }

    #[test]
    fn case_b_requires_terminal_position() {
        let text = minimal_case_a().replace("A_initial_state", "B_endpoint_positions");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("boundary.qT"), "{err}");
    }
}
