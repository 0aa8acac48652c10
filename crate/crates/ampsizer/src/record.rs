//! Shared evaluation-history records.
//!
//! One record per evaluated design, written as one JSON line in the run's
//! history file. Records deliberately carry no timestamps so identical runs
//! produce byte-identical history files.

use serde::{Deserialize, Serialize};

use crate::cost::{CostBreakdown, Measurements};
use crate::design::DesignPoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// 1-based global evaluation index within its run.
    pub iteration: usize,
    /// Workflow phase tag ("C", "D", "E") or a caller-chosen label.
    pub phase: String,
    /// Optimizer worker that produced the evaluation, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worker: Option<usize>,
    pub point: DesignPoint,
    pub cost: CostBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurements: Option<Measurements>,
}

impl EvalRecord {
    pub fn j(&self) -> f64 {
        self.cost.total
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serialization cannot fail")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

/// Render records as a line-delimited history document.
pub fn to_history_text(records: &[EvalRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    out
}

/// Parse a line-delimited history document, ignoring blank lines.
pub fn from_history_text(text: &str) -> Result<Vec<EvalRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(EvalRecord::from_json_line)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::Mode;

    fn record(i: usize, j: f64) -> EvalRecord {
        EvalRecord {
            iteration: i,
            phase: "E".into(),
            worker: Some(0),
            point: DesignPoint::from_pairs([("w1", 5.0), ("cc", 8.0)]),
            cost: CostBreakdown {
                power_term: j,
                violations: vec![],
                sanity_term: 0.0,
                total: j,
                mode: Mode::Optimization,
            },
            measurements: None,
        }
    }

    #[test]
    fn history_round_trip() {
        let records = vec![record(1, 0.5), record(2, 0.4)];
        let text = to_history_text(&records);
        assert_eq!(text.lines().count(), 2);
        let back = from_history_text(&text).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn serialization_is_stable() {
        let a = record(1, 0.5).to_json_line();
        let b = record(1, 0.5).to_json_line();
        assert_eq!(a, b);
    }
}
