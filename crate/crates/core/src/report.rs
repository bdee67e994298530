//! Serializable verdicts shared by the certificate and rollout checks.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

/// Violators kept per report unless the caller asks for more.
pub const DEFAULT_VIOLATOR_CAP: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn is_pass(self) -> bool {
        self == Verdict::Pass
    }

    pub fn and(self, other: Verdict) -> Verdict {
        Verdict::from_pass(self.is_pass() && other.is_pass())
    }
}

/// One failing sample: where, which inequality, and by how much.
#[derive(Clone, Debug, Serialize)]
pub struct Violator {
    pub index: usize,
    pub inequality: String,
    pub x: Vec<f64>,
    pub tau: u64,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs − rhs`; positive means violated beyond the slack.
    pub deficit: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub verdict: Verdict,
    pub samples: usize,
    pub skipped: usize,
    pub violations: usize,
    /// Smallest `rhs − lhs` seen over all evaluated samples.
    pub worst_slack: f64,
    pub slack_eta: f64,
    pub violators: Vec<Violator>,
    pub notes: Vec<String>,
    pub parameters: BTreeMap<String, Value>,
}

impl CheckReport {
    pub fn new(check: impl Into<String>, slack_eta: f64) -> Self {
        Self {
            check: check.into(),
            verdict: Verdict::Pass,
            samples: 0,
            skipped: 0,
            violations: 0,
            worst_slack: f64::INFINITY,
            slack_eta,
            violators: Vec::new(),
            notes: Vec::new(),
            parameters: BTreeMap::new(),
        }
    }

    /// Records `lhs ≤ rhs + η` for one sample. Returns whether it held.
    pub fn record(&mut self, cap: usize, index: usize, inequality: &str, x: &[f64], tau: u64, lhs: f64, rhs: f64) -> bool {
        let slack = rhs - lhs;
        if slack < self.worst_slack || self.worst_slack.is_nan() {
            self.worst_slack = slack;
        }
        let ok = lhs <= rhs + self.slack_eta;
        if !ok {
            self.violations += 1;
            self.verdict = Verdict::Fail;
            if self.violators.len() < cap {
                self.violators.push(Violator {
                    index,
                    inequality: inequality.to_string(),
                    x: x.to_vec(),
                    tau,
                    lhs,
                    rhs,
                    deficit: -slack,
                });
            }
        }
        ok
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) {
        self.parameters.insert(
            key.to_string(),
            serde_json::to_value(value).unwrap_or(Value::Null),
        );
    }

    pub fn fail(&mut self, reason: impl Into<String>) {
        self.verdict = Verdict::Fail;
        self.notes.push(reason.into());
    }

    pub fn passed(&self) -> bool {
        self.verdict.is_pass()
    }

    /// Finite `worst_slack` for JSON (no samples → 0).
    pub fn finish(mut self) -> Self {
        if !self.worst_slack.is_finite() {
            self.worst_slack = 0.0;
        }
        self
    }
}
