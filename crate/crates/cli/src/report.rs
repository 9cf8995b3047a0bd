//! Run reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckVerdict {
    Pass,
    Fail,
    /// The underlying operation returned an error.
    Error,
}

impl CheckVerdict {
    pub fn tag(self) -> &'static str {
        match self {
            CheckVerdict::Pass => "PASS",
            CheckVerdict::Fail => "FAIL",
            CheckVerdict::Error => "ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub index: usize,
    pub name: String,
    pub label: String,
    pub verdict: CheckVerdict,
    pub residuals: BTreeMap<String, f64>,
    pub escape_brackets: Vec<(f64, f64)>,
    pub message: Option<String>,
    pub details: serde_json::Value,
    /// Files written for this check, relative to the output directory.
    pub files: Vec<String>,
    pub timing_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub source: String,
    /// SHA-256 of the effective scenario (after command-line overrides).
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckRecord>,
}

impl RunReport {
    /// The report with every timing field zeroed.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for c in &mut r.checks {
            c.timing_ms = 0.0;
        }
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario {} ({})", self.scenario, self.source);
        let _ = writeln!(out, "seed {}  config {}  version {}", self.seed, &self.config_hash[..16], self.version);
        for c in &self.checks {
            let _ = write!(out, "[{}] {:>2} {:<18} {}", c.verdict.tag(), c.index, c.name, c.label);
            for (k, v) in &c.residuals {
                let _ = write!(out, "  {k}={v:.3e}");
            }
            for (a, b) in &c.escape_brackets {
                let _ = write!(out, "  escape=[{a:.9}, {b:.9}]");
            }
            if let Some(m) = &c.message {
                let _ = write!(out, "  ({m})");
            }
            out.push('\n');
        }
        let passed = self.checks.iter().filter(|c| c.verdict == CheckVerdict::Pass).count();
        let _ = writeln!(
            out,
            "{} of {} checks passed: {}",
            passed,
            self.checks.len(),
            if self.passed { "PASS" } else { "FAIL" }
        );
        out
    }
}
