//! Per-inequality verification records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Relative slack floor below which a checked inequality fails.
pub const PASS_SLACK_REL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Emitted for metrics whose comparison constant is existential; never
    /// gates a suite.
    ReportedOnly,
}

/// Record of one checked inequality lhs <= rhs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// Unit annotation for both sides ("time", "probability", "dimensionless").
    pub unit: String,
    /// rhs - lhs.
    pub slack: f64,
    pub verdict: Verdict,
    /// Parameters the certificate was evaluated at, in deterministic order.
    pub context: BTreeMap<String, String>,
}

impl CertificateReport {
    /// Checked inequality lhs <= rhs with relative slack tolerance.
    pub fn check(name: impl Into<String>, lhs: f64, rhs: f64, unit: &str) -> Self {
        let slack = rhs - lhs;
        let verdict = if slack >= -PASS_SLACK_REL * rhs.abs().max(1.0) {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        Self {
            name: name.into(),
            lhs,
            rhs,
            unit: unit.into(),
            slack,
            verdict,
            context: BTreeMap::new(),
        }
    }

    /// Reported-only comparison: recorded, never failing.
    pub fn reported(name: impl Into<String>, lhs: f64, rhs: f64, unit: &str) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            unit: unit.into(),
            slack: rhs - lhs,
            verdict: Verdict::ReportedOnly,
            context: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.context.insert(key.into(), value.to_string());
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict != Verdict::Fail
    }
}

/// True when no pass/fail certificate in the batch failed.
pub fn all_pass(reports: &[CertificateReport]) -> bool {
    reports.iter().all(CertificateReport::passed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_thresholds() {
        assert_eq!(CertificateReport::check("a", 1.0, 1.0, "time").verdict, Verdict::Pass);
        // tiny negative slack within relative tolerance
        assert_eq!(
            CertificateReport::check("a", 1.0 + 1e-10, 1.0, "time").verdict,
            Verdict::Pass
        );
        assert_eq!(
            CertificateReport::check("a", 1.1, 1.0, "time").verdict,
            Verdict::Fail
        );
        let r = CertificateReport::reported("m", 5.0, 0.0, "dimensionless");
        assert_eq!(r.verdict, Verdict::ReportedOnly);
        assert!(r.passed());
    }
}
