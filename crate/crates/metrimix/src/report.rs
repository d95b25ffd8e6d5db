//! Machine-readable pass/fail reporting shared by model validation and the
//! verification CLI.

use serde::{Deserialize, Serialize};

/// One named check with its numerical evidence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckItem {
    pub name: String,
    pub passed: bool,
    /// Measured residual (signed where a margin is meaningful).
    pub residual: f64,
    /// Threshold the residual was compared against.
    pub threshold: f64,
    /// Human-readable evidence (eigenvalues, offending indices, ...).
    pub detail: String,
}

impl CheckItem {
    /// Passes iff `residual <= threshold`.
    pub fn bounded(name: impl Into<String>, residual: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: residual.is_finite() && residual <= threshold,
            residual,
            threshold,
            detail: detail.into(),
        }
    }

    /// Passes iff `margin >= -threshold` (one-sided lower bound).
    pub fn lower_bounded(name: impl Into<String>, margin: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: margin.is_finite() && margin >= -threshold,
            residual: margin,
            threshold,
            detail: detail.into(),
        }
    }
}

/// A collection of checks with an aggregate verdict.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Report {
    pub checks: Vec<CheckItem>,
}

impl Report {
    pub fn push(&mut self, item: CheckItem) {
        self.checks.push(item);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// One line per check, suitable for terminal output.
    pub fn render_lines(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!(
                "{tag} {name}: residual {res:.3e} vs threshold {thr:.3e} ({detail})\n",
                name = c.name,
                res = c.residual,
                thr = c.threshold,
                detail = c.detail
            ));
        }
        out
    }
}
