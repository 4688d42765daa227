//! Verified-inequality records shared by every check.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

use crate::sampler::SupSampler;

/// One checked inequality `lhs <= rhs`, passing when `rhs - lhs >= -error_budget`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CheckReport {
    pub check_id: String,
    pub paper_ref: String,
    pub params: BTreeMap<String, Value>,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
    pub error_budget: f64,
    pub seed: u64,
    pub sampler: Option<SupSampler>,
    /// Informational checks are reported but never fail a run.
    pub informational: bool,
}

impl CheckReport {
    pub fn new(
        check_id: impl Into<String>,
        paper_ref: impl Into<String>,
        lhs: f64,
        rhs: f64,
        error_budget: f64,
    ) -> Self {
        let margin = rhs - lhs;
        Self {
            check_id: check_id.into(),
            paper_ref: paper_ref.into(),
            params: BTreeMap::new(),
            lhs,
            rhs,
            margin,
            pass: margin >= -error_budget,
            error_budget,
            seed: 0,
            sampler: None,
            informational: false,
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn sampler(mut self, sampler: &SupSampler) -> Self {
        self.sampler = Some(sampler.clone());
        self
    }

    pub fn informational(mut self) -> Self {
        self.informational = true;
        self
    }

    /// Whether this report should fail a run.
    pub fn is_failure(&self) -> bool {
        !self.pass && !self.informational
    }

    /// Slack left before failing, `margin + error_budget`.
    pub fn headroom(&self) -> f64 {
        self.margin + self.error_budget
    }
}

/// The report with the least headroom, relabelled with `check_id`.
///
/// NaN headroom counts as the worst possible.
pub fn worst(reports: Vec<CheckReport>, check_id: &str) -> Option<CheckReport> {
    let count = reports.len();
    let mut w = reports.into_iter().min_by(|a, b| {
        let ha = if a.headroom().is_nan() { f64::NEG_INFINITY } else { a.headroom() };
        let hb = if b.headroom().is_nan() { f64::NEG_INFINITY } else { b.headroom() };
        ha.total_cmp(&hb)
    })?;
    w.check_id = check_id.to_string();
    w.params.insert("aggregated_over".into(), Value::from(count));
    Some(w)
}
