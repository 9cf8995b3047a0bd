//! Scenario files: one JSON document naming a system, an ordered list of
//! checks, integrator overrides, a seed and output settings.

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};
use timekeeper::flow::IntegratorConfig;
use timekeeper::kahler::QuantumSystemSpec;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub system: SystemSpec,
    pub checks: Vec<CheckSpec>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// A system from the built-in registry.
    Builtin(String),
    Inline(InlineSystem),
    /// Path to a quantum system JSON file, relative to the scenario file.
    Quantum(PathBuf),
    QuantumInline(QuantumSystemSpec),
}

/// Canonical coordinates `(q1.., p1..)` named in `coordinates`; the domain
/// is where every `domain` expression is strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSystem {
    pub coordinates: Vec<String>,
    #[serde(default)]
    pub domain: Vec<String>,
    pub hamiltonian: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    /// Directory for the report and trajectory files; overridden by `--out`.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub trajectories: bool,
    #[serde(default)]
    pub format: Format,
}

impl Default for Outputs {
    fn default() -> Self {
        Self { dir: None, trajectories: true, format: Format::Json }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Text,
}

/// A parameter grid: explicit values or `count` equal intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Explicit(Vec<f64>),
    Uniform { start: f64, stop: f64, count: usize },
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            GridSpec::Explicit(v) => v.clone(),
            GridSpec::Uniform { start, stop, count } => {
                let n = (*count).max(1);
                let mut v: Vec<f64> =
                    (0..=n).map(|i| if i == n { *stop } else { start + (stop - start) * i as f64 / n as f64 }).collect();
                if *start < 0.0 && *stop > 0.0 && !v.contains(&0.0) {
                    v.push(0.0);
                    v.sort_by(f64::total_cmp);
                }
                v
            }
        }
    }

    fn validate(&self, what: &str) -> Result<(), CliError> {
        let v = self.values();
        if v.is_empty() || v.iter().any(|t| !t.is_finite()) || v.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Invalid(format!("{what}: grid must be finite and strictly increasing")));
        }
        Ok(())
    }
}

/// Phase-space states: explicit, or `random` points uniform in a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StatesSpec {
    Explicit(Vec<Vec<f64>>),
    Random { random: usize, low: Vec<f64>, high: Vec<f64> },
}

impl StatesSpec {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        match self {
            StatesSpec::Explicit(v) => v.clone(),
            StatesSpec::Random { random, low, high } => (0..*random)
                .map(|_| low.iter().zip(high).map(|(a, b)| rng.random_range(*a..=*b)).collect())
                .collect(),
        }
    }

    fn validate(&self, what: &str) -> Result<(), CliError> {
        match self {
            StatesSpec::Explicit(v) if v.is_empty() => Err(CliError::Invalid(format!("{what}: no states"))),
            StatesSpec::Random { random, low, high } => {
                if *random == 0 || low.len() != high.len() || low.iter().zip(high).any(|(a, b)| !(a <= b)) {
                    Err(CliError::Invalid(format!("{what}: random box needs low <= high and a positive count")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// A candidate clock: an expression, or a flow-time clock built at a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSpec {
    Expr(String),
    LocalClock { local_clock: LocalClockSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalClockSpec {
    pub at: Vec<f64>,
    pub radius: f64,
}

/// A quantum state as `[re, im]` pairs, or a real phase-space point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointSpec {
    Real(Vec<f64>),
    Complex(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockExpectation {
    #[default]
    Success,
    /// Construction must refuse with a stationary-point error.
    Stationary,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Presence {
    #[default]
    Present,
    Absent,
}

fn default_true() -> bool {
    true
}
fn tol_6() -> f64 {
    1e-6
}
fn tol_5() -> f64 {
    1e-5
}
fn tol_8() -> f64 {
    1e-8
}
fn tol_12() -> f64 {
    1e-12
}
fn floor_3() -> f64 {
    1e-3
}
fn one() -> f64 {
    1.0
}
fn delta_4() -> f64 {
    1e-4
}
fn dims() -> Vec<usize> {
    vec![2, 3, 5]
}
fn hundred() -> usize {
    100
}
fn two_hundred() -> usize {
    200
}
fn fifty() -> usize {
    50
}
fn twenty() -> usize {
    20
}
fn ten() -> usize {
    10
}
fn five() -> usize {
    5
}
fn three() -> usize {
    3
}
fn span_10() -> f64 {
    10.0
}
fn four_pi() -> f64 {
    4.0 * std::f64::consts::PI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    Timeliness {
        tau: TauSpec,
        starts: StatesSpec,
        grid: GridSpec,
        #[serde(default = "tol_6")]
        tol: f64,
    },
    LocalTimeliness {
        tau: TauSpec,
        samples: StatesSpec,
        #[serde(default = "tol_6")]
        tol: f64,
    },
    ConstructClock {
        points: StatesSpec,
        radius: f64,
        #[serde(default)]
        expect: ClockExpectation,
        #[serde(default = "two_hundred")]
        samples: usize,
        #[serde(default = "fifty")]
        pairs: usize,
        #[serde(default = "tol_6")]
        tol: f64,
    },
    Uniqueness {
        tau1: TauSpec,
        tau2: TauSpec,
        starts: StatesSpec,
        grid: GridSpec,
        #[serde(default = "tol_6")]
        tol: f64,
    },
    EnergyDescent {
        tau: TauSpec,
        x0: Vec<f64>,
        grid: GridSpec,
        #[serde(default)]
        h_inf: Option<f64>,
        #[serde(default = "tol_6")]
        tol: f64,
    },
    Incompleteness {
        tau: TauSpec,
        samples: StatesSpec,
        h_inf: f64,
        #[serde(default = "tol_6")]
        tol: f64,
    },
    Recurrence {
        #[serde(default)]
        x0: Option<PointSpec>,
        #[serde(default)]
        horizon: Option<f64>,
        #[serde(default = "tol_6")]
        eps: f64,
        #[serde(default)]
        expect: Presence,
        /// Expected return time, checked to `period_tol`.
        #[serde(default)]
        period: Option<f64>,
        #[serde(default = "tol_5")]
        period_tol: f64,
    },
    KahlerIdentities {
        #[serde(default = "dims")]
        dims: Vec<usize>,
        #[serde(default = "hundred")]
        samples: usize,
        #[serde(default = "tol_12")]
        tol: f64,
    },
    Schrodinger {
        #[serde(default = "dims")]
        dims: Vec<usize>,
        #[serde(default = "five")]
        per_dim: usize,
        #[serde(default = "span_10")]
        span: f64,
        #[serde(default = "tol_8")]
        tol: f64,
    },
    Killing {
        #[serde(default = "twenty")]
        expectation_count: usize,
        #[serde(default = "twenty")]
        tangent_samples: usize,
        #[serde(default = "delta_4")]
        delta: f64,
        #[serde(default = "tol_5")]
        tol: f64,
        #[serde(default = "floor_3")]
        weinberg_floor: f64,
        #[serde(default = "four_pi")]
        norm_span: f64,
        #[serde(default = "tol_8")]
        norm_tol: f64,
    },
    PauliDemo {
        #[serde(default = "ten")]
        random: usize,
        #[serde(default = "tol_6")]
        tol: f64,
        #[serde(default = "twenty")]
        bracket_samples: usize,
        #[serde(default = "three")]
        orbits: usize,
        /// Smallest accepted deviation at the recurrence time.
        #[serde(default = "one")]
        min_failure: f64,
        #[serde(default = "tol_5")]
        period_tol: f64,
    },
}

impl CheckSpec {
    pub fn name(&self) -> &'static str {
        match self {
            CheckSpec::Timeliness { .. } => "timeliness",
            CheckSpec::LocalTimeliness { .. } => "local_timeliness",
            CheckSpec::ConstructClock { .. } => "construct_clock",
            CheckSpec::Uniqueness { .. } => "uniqueness",
            CheckSpec::EnergyDescent { .. } => "energy_descent",
            CheckSpec::Incompleteness { .. } => "incompleteness",
            CheckSpec::Recurrence { .. } => "recurrence",
            CheckSpec::KahlerIdentities { .. } => "kahler_identities",
            CheckSpec::Schrodinger { .. } => "schrodinger",
            CheckSpec::Killing { .. } => "killing",
            CheckSpec::PauliDemo { .. } => "pauli_demo",
        }
    }

    pub fn is_quantum(&self) -> bool {
        matches!(
            self,
            CheckSpec::KahlerIdentities { .. }
                | CheckSpec::Schrodinger { .. }
                | CheckSpec::Killing { .. }
                | CheckSpec::PauliDemo { .. }
        )
    }

    /// Replaces the primary tolerance.
    pub fn set_tolerance(&mut self, value: f64) {
        match self {
            CheckSpec::Timeliness { tol, .. }
            | CheckSpec::LocalTimeliness { tol, .. }
            | CheckSpec::ConstructClock { tol, .. }
            | CheckSpec::Uniqueness { tol, .. }
            | CheckSpec::EnergyDescent { tol, .. }
            | CheckSpec::Incompleteness { tol, .. }
            | CheckSpec::KahlerIdentities { tol, .. }
            | CheckSpec::Schrodinger { tol, .. }
            | CheckSpec::Killing { tol, .. }
            | CheckSpec::PauliDemo { tol, .. } => *tol = value,
            CheckSpec::Recurrence { eps, .. } => *eps = value,
        }
    }

    pub fn set_horizon(&mut self, value: f64) {
        if let CheckSpec::Recurrence { horizon, .. } = self {
            *horizon = Some(value);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let what = self.name();
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CliError::Invalid(format!("{what}: {name} must be positive, got {v}")))
            }
        };
        match self {
            CheckSpec::Timeliness { starts, grid, tol, .. } => {
                positive("tol", *tol)?;
                starts.validate(what)?;
                grid.validate(what)
            }
            CheckSpec::LocalTimeliness { samples, tol, .. } => {
                positive("tol", *tol)?;
                samples.validate(what)
            }
            CheckSpec::ConstructClock { points, radius, tol, .. } => {
                positive("tol", *tol)?;
                positive("radius", *radius)?;
                points.validate(what)
            }
            CheckSpec::Uniqueness { starts, grid, tol, .. } => {
                positive("tol", *tol)?;
                starts.validate(what)?;
                grid.validate(what)
            }
            CheckSpec::EnergyDescent { grid, tol, .. } => {
                positive("tol", *tol)?;
                grid.validate(what)
            }
            CheckSpec::Incompleteness { samples, tol, .. } => {
                positive("tol", *tol)?;
                samples.validate(what)
            }
            CheckSpec::Recurrence { horizon, eps, period_tol, .. } => {
                positive("eps", *eps)?;
                positive("period_tol", *period_tol)?;
                if let Some(h) = horizon {
                    positive("horizon", *h)?;
                }
                Ok(())
            }
            CheckSpec::KahlerIdentities { dims, tol, .. } | CheckSpec::Schrodinger { dims, tol, .. } => {
                positive("tol", *tol)?;
                if dims.iter().any(|n| *n < 2) {
                    return Err(CliError::Invalid(format!("{what}: dimensions must be at least 2")));
                }
                Ok(())
            }
            CheckSpec::Killing { delta, tol, weinberg_floor, norm_span, norm_tol, .. } => {
                positive("delta", *delta)?;
                positive("tol", *tol)?;
                positive("weinberg_floor", *weinberg_floor)?;
                positive("norm_span", *norm_span)?;
                positive("norm_tol", *norm_tol)
            }
            CheckSpec::PauliDemo { tol, min_failure, period_tol, .. } => {
                positive("tol", *tol)?;
                positive("min_failure", *min_failure)?;
                positive("period_tol", *period_tol)
            }
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| CliError::Json(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.integrator.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
        for c in &self.checks {
            c.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let s = Scenario::from_json(
            r#"{"name": "x", "system": {"builtin": "pendulum"},
                "checks": [{"check": "timeliness", "tau": "q", "starts": [[0, 1]], "grid": [0, 1]}]}"#,
        )
        .unwrap();
        assert_eq!(s.seed, 0);
        assert_eq!(s.integrator, IntegratorConfig::default());
        match &s.checks[0] {
            CheckSpec::Timeliness { tol, .. } => assert_eq!(*tol, 1e-6),
            _ => unreachable!(),
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let bad_grid = r#"{"name": "x", "system": {"builtin": "pendulum"},
            "checks": [{"check": "timeliness", "tau": "q", "starts": [[0, 1]], "grid": [0, 2, 1]}]}"#;
        assert!(matches!(Scenario::from_json(bad_grid), Err(CliError::Invalid(_))));
        let bad_tol = r#"{"name": "x", "system": {"builtin": "pendulum"},
            "checks": [{"check": "local_timeliness", "tau": "q", "samples": [[0, 1]], "tol": -1}]}"#;
        assert!(matches!(Scenario::from_json(bad_tol), Err(CliError::Invalid(_))));
        let unknown = r#"{"name": "x", "system": {"builtin": "pendulum"}, "checks": [{"check": "nope"}]}"#;
        assert!(matches!(Scenario::from_json(unknown), Err(CliError::Json(_))));
    }

    #[test]
    fn uniform_grid_includes_zero() {
        let g = GridSpec::Uniform { start: -1.0, stop: 2.0, count: 2 };
        assert_eq!(g.values(), vec![-1.0, 0.0, 0.5, 2.0]);
        let g = GridSpec::Uniform { start: 0.0, stop: 1.0, count: 4 };
        assert_eq!(g.values(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }
}
