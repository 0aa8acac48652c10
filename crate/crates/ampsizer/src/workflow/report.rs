//! Final sign-off document: chosen sizing, spec compliance, dual-granularity
//! sensitivity tables, and per-parameter guidance.
//!
//! `FinalReport` is the single source of truth: it serializes to
//! `report_data.json`, and `render_report` is a pure function of it, so the
//! markdown can be regenerated from the JSON without touching a simulator.

use serde::{Deserialize, Serialize};

use crate::agents::ParamExplanation;
use crate::cost::{Direction, MetricKind, Mode};
use crate::design::DesignPoint;
use crate::exturbo::{ParamClass, SensitivityEntry, SensitivityReport};

use super::{PhaseOutcome, Workflow, WorkflowError};

/// One row of the spec-compliance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecRow {
    pub metric: MetricKind,
    pub direction: Direction,
    pub target: f64,
    pub unit: String,
    pub measured: Option<f64>,
    pub pass: bool,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub circuit: String,
    pub seed: u64,
    /// Winning sizing, every free parameter included.
    pub chosen: DesignPoint,
    pub best_j: f64,
    /// Global evaluation index that produced the winner.
    pub best_iteration: usize,
    pub total_evaluations: usize,
    pub mode: Mode,
    pub spec_rows: Vec<SpecRow>,
    pub power_measured: Option<f64>,
    pub power_budget: f64,
    pub power_unit: String,
    /// The sized (non-fixed) parameters, sorted.
    pub free_parameters: Vec<String>,
    /// Unit per free parameter, for the sizing table.
    pub units: Vec<String>,
    pub sensitivity: SensitivityReport,
    pub classes: Vec<ParamClass>,
    pub explanations: Vec<ParamExplanation>,
    pub phases: Vec<PhaseOutcome>,
}

impl FinalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Classification label for one parameter, resolved through the class of
    /// the coordinate that drives it.
    pub fn class_label(&self, param: &str) -> &'static str {
        let class = self
            .classes
            .iter()
            .find(|c| c.name == param || c.members.iter().any(|m| m == param));
        match class {
            Some(c) if c.stability_critical && c.performance_tuning => "both",
            Some(c) if c.stability_critical => "stability-critical",
            Some(c) if c.performance_tuning => "performance-tuning",
            _ => "secondary",
        }
    }
}

/// Build the report from a finished workflow.
pub fn assemble(wf: &Workflow) -> Result<FinalReport, WorkflowError> {
    let best = wf
        .state
        .best
        .clone()
        .ok_or_else(|| WorkflowError::Report("workflow has no winning evaluation".into()))?;
    let sensitivity = wf
        .state
        .sensitivity
        .clone()
        .ok_or_else(|| WorkflowError::Report("workflow has no sensitivity analysis".into()))?;
    let meas = wf.state.best_measurements;

    let spec_rows = wf
        .config
        .specs
        .items
        .iter()
        .map(|item| {
            let measured = meas.and_then(|m| m.value_of(item.metric));
            let pass = measured.is_some_and(|v| match item.direction {
                Direction::Lower => v >= item.target,
                Direction::Upper => v <= item.target,
            });
            SpecRow {
                metric: item.metric,
                direction: item.direction,
                target: item.target,
                unit: item.metric.unit().to_string(),
                measured,
                pass,
                weight: item.weight,
            }
        })
        .collect();

    let free_parameters = wf.state.mandatory.clone();
    let units = free_parameters
        .iter()
        .map(|p| {
            wf.config
                .ranges
                .get(p)
                .and_then(|r| r.unit.clone())
                .unwrap_or_default()
        })
        .collect();

    Ok(FinalReport {
        circuit: wf.config.circuit_name.clone(),
        seed: wf.config.seed,
        chosen: best.point.clone(),
        best_j: best.j(),
        best_iteration: best.iteration,
        total_evaluations: wf.state.evals,
        mode: best.cost.mode,
        spec_rows,
        power_measured: meas.and_then(|m| m.power),
        power_budget: wf.config.specs.p_max,
        power_unit: wf
            .config
            .specs
            .power_unit
            .clone()
            .unwrap_or_else(|| "uW".into()),
        free_parameters,
        units,
        sensitivity,
        classes: wf.state.classes.clone(),
        explanations: wf.state.explanations.clone(),
        phases: wf.state.outcomes.clone(),
    })
}

fn fmt_v(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    let s = if a >= 1e5 || a < 1e-3 {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    };
    if s.contains('.') && !s.contains('e') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_v).unwrap_or_else(|| "n/a".into())
}

fn sensitivity_table(out: &mut String, entries: &[SensitivityEntry]) {
    out.push_str("| rank | parameter | drives | lengthscale | share |\n");
    out.push_str("|---|---|---|---|---|\n");
    for e in entries {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {:.4} |\n",
            e.rank,
            e.name,
            e.members.join(", "),
            fmt_v(e.lengthscale),
            e.s
        ));
    }
}

/// Deterministic markdown rendering of the report.
pub fn render_report(r: &FinalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("# Sizing report: {}\n\n", r.circuit));

    let mode = match r.mode {
        Mode::Optimization => "optimization mode, cost within the feasible band",
        Mode::Feasibility => "feasibility mode, cost above the feasible band",
    };
    out.push_str("## Outcome\n\n");
    out.push_str(&format!(
        "- Best cost J = {} ({mode})\n",
        fmt_v(r.best_j)
    ));
    out.push_str(&format!(
        "- Found at evaluation {} of {}\n",
        r.best_iteration, r.total_evaluations
    ));
    out.push_str(&format!(
        "- Power: {} of {} {} budget\n",
        fmt_opt(r.power_measured),
        fmt_v(r.power_budget),
        r.power_unit
    ));
    out.push_str(&format!("- Run seed: {}\n\n", r.seed));

    out.push_str("## Specification compliance\n\n");
    out.push_str("| metric | bound | target | measured | status | weight |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for row in &r.spec_rows {
        let bound = match row.direction {
            Direction::Lower => ">=",
            Direction::Upper => "<=",
        };
        out.push_str(&format!(
            "| {} | {bound} | {} {} | {} | {} | {} |\n",
            row.metric,
            fmt_v(row.target),
            row.unit,
            fmt_opt(row.measured),
            if row.pass { "pass" } else { "FAIL" },
            fmt_v(row.weight)
        ));
    }
    out.push('\n');

    out.push_str("## Chosen sizing\n\n");
    out.push_str("| parameter | value | unit | role |\n");
    out.push_str("|---|---|---|---|\n");
    for (name, unit) in r.free_parameters.iter().zip(&r.units) {
        out.push_str(&format!(
            "| {name} | {} | {unit} | {} |\n",
            fmt_opt(r.chosen.get(name)),
            r.class_label(name)
        ));
    }
    out.push('\n');

    out.push_str(&format!(
        "## Sensitivity over all {} evaluations\n\n",
        r.sensitivity.total_count
    ));
    sensitivity_table(&mut out, &r.sensitivity.global);
    out.push('\n');

    out.push_str(&format!(
        "## Sensitivity over the {} elite evaluations\n\n",
        r.sensitivity.elite_count
    ));
    sensitivity_table(&mut out, &r.sensitivity.elite);
    out.push('\n');

    if !r.explanations.is_empty() {
        out.push_str("## Parameter guidance\n\n");
        for e in &r.explanations {
            out.push_str(&format!("- **{}** ({}): {}\n", e.name, e.classification, e.text));
        }
        out.push('\n');
    }

    out.push_str("## Phase accounting\n\n");
    out.push_str("| phase | iterations | best J | wall ms | note |\n");
    out.push_str("|---|---|---|---|---|\n");
    for p in &r.phases {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            p.phase,
            p.iterations,
            fmt_opt(p.best_j),
            p.wall_ms,
            p.note
        ));
    }
    out
}
