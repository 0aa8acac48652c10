//! The ten sizing-workflow agent roles: prompt construction, strict response
//! parsing, and parameter validation over a pluggable chat transport.
//!
//! Every role has exactly one prompt template and one JSON response schema.
//! Responses are re-requested with the validation error echoed back up to a
//! bounded number of retries, then fail hard. A deterministic scripted
//! implementation of every role (see [`scripted`]) makes the whole workflow
//! runnable offline; its output goes through the same parse path as a live
//! endpoint's, so a recorded transcript replays identically.

pub mod scripted;
pub mod transport;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostBreakdown, Measurements, SpecSet};
use crate::design::DesignPoint;
use crate::exturbo::{ParamClass, SensitivityReport};
use crate::netlist::{MatchGroup, MatchingGroups, ParamRanges};
use crate::record::EvalRecord;
use crate::sim::DcResult;

pub use transport::{EndpointConfig, EndpointTransport, ScriptedTransport, Transport, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentRole {
    CircuitExplainer,
    MatchingFinder,
    DcGoalSetter,
    InitialDesigner,
    DcReviewer,
    DcSizer,
    SpecsReviewer,
    InferencingSizer,
    AdvisorReviewer,
    EquippedSizer,
}

impl AgentRole {
    pub const ALL: [AgentRole; 10] = [
        AgentRole::CircuitExplainer,
        AgentRole::MatchingFinder,
        AgentRole::DcGoalSetter,
        AgentRole::InitialDesigner,
        AgentRole::DcReviewer,
        AgentRole::DcSizer,
        AgentRole::SpecsReviewer,
        AgentRole::InferencingSizer,
        AgentRole::AdvisorReviewer,
        AgentRole::EquippedSizer,
    ];

    /// True for roles whose response is a full parameter assignment.
    pub fn proposes_params(&self) -> bool {
        matches!(
            self,
            AgentRole::InitialDesigner | AgentRole::DcSizer | AgentRole::InferencingSizer
        )
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("prompt for {role:?} needs {what} in the context")]
    MissingContext { role: AgentRole, what: &'static str },
    #[error("response is not a single JSON object: {0}")]
    NotJsonObject(String),
    #[error("response is missing key '{0}'")]
    MissingField(String),
    #[error("response field '{field}' has the wrong type: expected {expected}")]
    WrongType { field: String, expected: &'static str },
    #[error("missing mandatory parameter(s): {}", .0.join(", "))]
    MissingKeys(Vec<String>),
    #[error("unexpected parameter(s) not in the mandatory set: {}", .0.join(", "))]
    ExtraKeys(Vec<String>),
    #[error("parameter '{0}' is not a finite number")]
    NonNumericValue(String),
    #[error("unknown discrepancy kind '{0}'")]
    UnknownKind(String),
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("{role:?} still failing after {attempts} attempts; last error: {last}")]
    RetriesExhausted {
        role: AgentRole,
        attempts: u32,
        last: String,
    },
}

/// Per-device DC operating targets set in Phase B and reviewed in Phase C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceGoal {
    /// Overdrive voltage target, V.
    pub vov: f64,
    /// Drain-source voltage target, V.
    pub vds: f64,
    /// Drain current target, µA.
    pub id_ua: f64,
    /// Operating-region tag, e.g. "saturation".
    pub region: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcGoals {
    /// Target output DC level, V.
    pub vout_target: f64,
    pub devices: BTreeMap<String, DeviceGoal>,
}

impl DcGoals {
    /// Goals must be electrically possible: voltages inside the rails and
    /// positive current for every device that is supposed to be on.
    pub fn validate(&self, vdd: f64) -> Result<(), String> {
        if !(0.0..=vdd).contains(&self.vout_target) {
            return Err(format!(
                "vout target {} V outside the 0..{vdd} V rails",
                self.vout_target
            ));
        }
        for (dev, g) in &self.devices {
            if g.vov.abs() > vdd || g.vds.abs() > vdd {
                return Err(format!("{dev}: vov/vds beyond the supply"));
            }
            if g.id_ua <= 0.0 {
                return Err(format!("{dev}: non-positive current target"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiscrepancyKind {
    #[serde(rename = "headroom violation")]
    HeadroomViolation,
    #[serde(rename = "region error")]
    RegionError,
    #[serde(rename = "output-level error")]
    OutputLevelError,
}

impl DiscrepancyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DiscrepancyKind::HeadroomViolation => "headroom violation",
            DiscrepancyKind::RegionError => "region error",
            DiscrepancyKind::OutputLevelError => "output-level error",
        }
    }

    pub fn parse(s: &str) -> Result<Self, AgentError> {
        match s {
            "headroom violation" => Ok(DiscrepancyKind::HeadroomViolation),
            "region error" => Ok(DiscrepancyKind::RegionError),
            "output-level error" => Ok(DiscrepancyKind::OutputLevelError),
            other => Err(AgentError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyItem {
    pub device: String,
    pub goal: f64,
    pub observed: f64,
    pub delta: f64,
    pub kind: DiscrepancyKind,
}

/// What the DC review found; `count` doubles as the Phase-C stop criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub items: Vec<DiscrepancyItem>,
    pub count: usize,
}

impl DiscrepancyReport {
    pub fn new(items: Vec<DiscrepancyItem>) -> Self {
        let count = items.len();
        DiscrepancyReport { items, count }
    }

    pub fn clean(&self) -> bool {
        self.count == 0
    }
}

/// Everything a prompt may draw on. Phases fill in what they have; roles
/// error out when a field they require is absent.
#[derive(Debug, Clone)]
pub struct AgentContext {
    pub circuit_name: String,
    /// Human-readable structure summary (component counts, ports).
    pub graph_summary: String,
    /// Netlist template text; the matching finder reads device cards from it.
    pub netlist_text: String,
    pub specs: Option<SpecSet>,
    /// Exact key set a parameter proposal must populate.
    pub mandatory: Vec<String>,
    pub ranges: Option<ParamRanges>,
    pub groups: MatchingGroups,
    pub defaults: Option<DesignPoint>,
    pub dc_goals: Option<DcGoals>,
    pub dc_result: Option<DcResult>,
    pub discrepancies: Option<DiscrepancyReport>,
    pub measurements: Option<Measurements>,
    pub cost: Option<CostBreakdown>,
    pub current_point: Option<DesignPoint>,
    pub history: Vec<EvalRecord>,
    /// How many of the most recent history entries a prompt may include.
    pub history_window: usize,
    /// How many seeds the advisor review should hand to the optimizer.
    pub seed_count: usize,
    pub sensitivity: Option<SensitivityReport>,
    pub classes: Option<Vec<ParamClass>>,
    /// Set when re-prompting after a schema failure; echoed verbatim.
    pub validation_error: Option<String>,
    /// Circuit-explainer output, carried into later prompts.
    pub prior_analysis: Option<String>,
}

impl Default for AgentContext {
    fn default() -> Self {
        AgentContext {
            circuit_name: String::new(),
            graph_summary: String::new(),
            netlist_text: String::new(),
            specs: None,
            mandatory: Vec::new(),
            ranges: None,
            groups: MatchingGroups::default(),
            defaults: None,
            dc_goals: None,
            dc_result: None,
            discrepancies: None,
            measurements: None,
            cost: None,
            current_point: None,
            history: Vec::new(),
            history_window: 8,
            seed_count: 3,
            sensitivity: None,
            classes: None,
            validation_error: None,
            prior_analysis: None,
        }
    }
}

impl AgentContext {
    pub fn windowed_history(&self) -> &[EvalRecord] {
        let start = self.history.len().saturating_sub(self.history_window);
        &self.history[start..]
    }
}

/// Parsed, role-typed agent output.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentResponse {
    /// CircuitExplainer.
    Analysis(String),
    /// MatchingFinder.
    Matching(Vec<MatchGroup>),
    /// DcGoalSetter.
    Goals(DcGoals),
    /// InitialDesigner / DcSizer / InferencingSizer: raw parameter map,
    /// validated separately by [`validate_params`].
    Params(BTreeMap<String, f64>),
    /// DcReviewer.
    Discrepancies(DiscrepancyReport),
    /// SpecsReviewer.
    Review {
        pass: bool,
        violated: Vec<String>,
        advice: String,
    },
    /// AdvisorReviewer: candidate seeds, best first.
    Seeds(Vec<BTreeMap<String, f64>>),
    /// EquippedSizer: per-parameter explanations.
    Explanations(Vec<ParamExplanation>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamExplanation {
    pub name: String,
    /// "stability-critical", "performance-tuning", "both" or "secondary".
    pub classification: String,
    pub text: String,
}

impl AgentResponse {
    pub fn to_value(&self) -> serde_json::Value {
        match self {
            AgentResponse::Analysis(a) => serde_json::json!({ "analysis": a }),
            AgentResponse::Matching(groups) => serde_json::json!({ "groups": groups }),
            AgentResponse::Goals(g) => serde_json::to_value(g).unwrap(),
            AgentResponse::Params(p) => serde_json::to_value(p).unwrap(),
            AgentResponse::Discrepancies(d) => serde_json::to_value(d).unwrap(),
            AgentResponse::Review {
                pass,
                violated,
                advice,
            } => serde_json::json!({ "pass": pass, "violated": violated, "advice": advice }),
            AgentResponse::Seeds(s) => serde_json::json!({ "seeds": s }),
            AgentResponse::Explanations(e) => serde_json::json!({ "explanations": e }),
        }
    }
}

// ---------------------------------------------------------------------------
// Prompt construction

fn fmt_f(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 0.01 && v.abs() < 1e6 {
        let s = format!("{v:.6}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.4e}")
    }
}

fn point_line(p: &DesignPoint) -> String {
    p.iter()
        .map(|(k, v)| format!("{k}={}", fmt_f(v)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn push_section(out: &mut String, title: &str, body: &str) {
    out.push_str("\n## ");
    out.push_str(title);
    out.push('\n');
    out.push_str(body);
    if !body.ends_with('\n') {
        out.push('\n');
    }
}

fn specs_section(specs: &SpecSet) -> String {
    let mut s = String::new();
    for item in &specs.items {
        s.push_str(&format!(
            "- {} {} {} {} (weight {})\n",
            item.metric,
            match item.direction {
                crate::cost::Direction::Lower => ">=",
                crate::cost::Direction::Upper => "<=",
            },
            fmt_f(item.target),
            item.metric.unit(),
            fmt_f(item.weight),
        ));
    }
    s.push_str(&format!("- power budget: {} (normalization)\n", fmt_f(specs.p_max)));
    s
}

fn ranges_section(mandatory: &[String], ranges: &ParamRanges) -> String {
    let mut s = String::new();
    for name in mandatory {
        match ranges.get(name) {
            Some(r) => s.push_str(&format!(
                "- {name}: [{}, {}] {}\n",
                fmt_f(r.min),
                fmt_f(r.max),
                r.unit.as_deref().unwrap_or("")
            )),
            None => s.push_str(&format!("- {name}: (no range on file)\n")),
        }
    }
    s
}

fn history_section(records: &[EvalRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&format!(
            "- eval {}: J={} {}\n",
            r.iteration,
            fmt_f(r.j()),
            point_line(&r.point)
        ));
    }
    s
}

fn discrepancy_section(rep: &DiscrepancyReport) -> String {
    let mut body = format!("{} open discrepancies\n", rep.count);
    for it in &rep.items {
        body.push_str(&format!(
            "- {}: {} (goal {}, observed {}, delta {})\n",
            it.device,
            it.kind.as_str(),
            fmt_f(it.goal),
            fmt_f(it.observed),
            fmt_f(it.delta)
        ));
    }
    body
}

fn params_schema_section(mandatory: &[String]) -> String {
    format!(
        "Respond with ONE JSON object whose keys are exactly this mandatory \
         parameter set — no more, no fewer — and whose values are plain numbers:\n\
         [{}]\n\
         Example shape: {{\"{}\": 1.0, ...}}. No prose outside the JSON.",
        mandatory.join(", "),
        mandatory.first().map(String::as_str).unwrap_or("param")
    )
}

/// Build the single prompt for a role from the context.
///
/// The prompt always carries the circuit summary and whatever prior-phase
/// outputs exist; parameter-proposing roles additionally embed the exact
/// mandatory key list, the allowed ranges, matching constraints, and the JSON
/// schema instructions. History is limited to the configured window.
pub fn build_prompt(role: AgentRole, ctx: &AgentContext) -> Result<String, AgentError> {
    let need = |cond: bool, what: &'static str| -> Result<(), AgentError> {
        if cond {
            Ok(())
        } else {
            Err(AgentError::MissingContext { role, what })
        }
    };

    let mut p = String::new();
    p.push_str(&format!(
        "You are the {role:?} agent in an analog sizing workflow for '{}'.\n",
        ctx.circuit_name
    ));
    if !ctx.graph_summary.is_empty() {
        push_section(&mut p, "Circuit structure", &ctx.graph_summary);
    }
    if let Some(analysis) = &ctx.prior_analysis {
        push_section(&mut p, "Prior analysis", analysis);
    }
    if let Some(specs) = &ctx.specs {
        push_section(&mut p, "Target specifications", &specs_section(specs));
    }

    match role {
        AgentRole::CircuitExplainer => {
            need(!ctx.graph_summary.is_empty(), "graph summary")?;
            push_section(
                &mut p,
                "Task",
                "Explain the topology: stages, signal path, and the job of each \
                 device. Respond with ONE JSON object: {\"analysis\": \"...\"}.",
            );
        }
        AgentRole::MatchingFinder => {
            need(!ctx.netlist_text.is_empty(), "netlist text")?;
            push_section(&mut p, "Netlist", &ctx.netlist_text);
            push_section(
                &mut p,
                "Task",
                "Identify parameters that must be kept equal for symmetry \
                 (differential pairs, mirrored loads, shared current mirrors). \
                 Respond with ONE JSON object: {\"groups\": [{\"name\": \"...\", \
                 \"members\": [\"w1\", \"w2\"]}, ...]}. Members are parameter \
                 names, not device names.",
            );
        }
        AgentRole::DcGoalSetter => {
            need(ctx.specs.is_some(), "spec set")?;
            push_section(
                &mut p,
                "Task",
                "Set per-device DC operating goals. Respond with ONE JSON object: \
                 {\"vout_target\": <V>, \"devices\": {\"m1\": {\"vov\": <V>, \
                 \"vds\": <V>, \"id_ua\": <uA>, \"region\": \"saturation\"}, ...}}.",
            );
        }
        AgentRole::InitialDesigner | AgentRole::DcSizer | AgentRole::InferencingSizer => {
            need(!ctx.mandatory.is_empty(), "mandatory parameter list")?;
            let ranges = ctx.ranges.as_ref();
            need(ranges.is_some(), "parameter ranges")?;
            push_section(
                &mut p,
                "Allowed ranges",
                &ranges_section(&ctx.mandatory, ranges.unwrap()),
            );
            if !ctx.groups.0.is_empty() {
                let body = ctx
                    .groups
                    .0
                    .iter()
                    .map(|g| format!("- {}: {}\n", g.name, g.members.join(" = ")))
                    .collect::<String>();
                push_section(&mut p, "Matching constraints", &body);
            }
            if let Some(goals) = &ctx.dc_goals {
                push_section(
                    &mut p,
                    "DC goals",
                    &format!("target vout {} V; {} device goals set", fmt_f(goals.vout_target), goals.devices.len()),
                );
            }
            if let Some(current) = &ctx.current_point {
                push_section(&mut p, "Current sizing", &point_line(current));
            }
            if let Some(dc) = &ctx.dc_result {
                let body = format!(
                    "converged: {}; bias ok: {}; vout: {}{}",
                    dc.converged,
                    dc.bias_ok,
                    dc.vout_dc.map(fmt_f).unwrap_or_else(|| "n/a".into()),
                    dc.detail
                        .as_deref()
                        .map(|d| format!("; note: {d}"))
                        .unwrap_or_default()
                );
                push_section(&mut p, "Latest DC result", &body);
            }
            if let Some(rep) = &ctx.discrepancies {
                push_section(&mut p, "DC review", &discrepancy_section(rep));
            }
            if let Some(cost) = &ctx.cost {
                let mut body = format!("J = {}\n", fmt_f(cost.total));
                for (metric, v) in &cost.violations {
                    if *v > 0.0 {
                        body.push_str(&format!("- {metric} violation term {}\n", fmt_f(*v)));
                    }
                }
                push_section(&mut p, "Latest cost", &body);
            }
            if role == AgentRole::InferencingSizer && !ctx.history.is_empty() {
                push_section(
                    &mut p,
                    "Recent evaluations",
                    &history_section(ctx.windowed_history()),
                );
            }
            let task = match role {
                AgentRole::InitialDesigner => {
                    "Propose a complete initial sizing from the topology and ranges."
                }
                AgentRole::DcSizer => {
                    "Adjust the sizing to close the DC discrepancies listed above."
                }
                _ => "Adjust the sizing to reduce the largest weighted spec violation.",
            };
            push_section(&mut p, "Task", task);
            push_section(&mut p, "Response format", &params_schema_section(&ctx.mandatory));
        }
        AgentRole::DcReviewer => {
            need(ctx.dc_goals.is_some(), "DC goals")?;
            need(ctx.dc_result.is_some(), "DC result")?;
            let goals = ctx.dc_goals.as_ref().unwrap();
            let dc = ctx.dc_result.as_ref().unwrap();
            let body = format!(
                "goal vout {} V\nobserved: converged={} bias_ok={} vout={}{}",
                fmt_f(goals.vout_target),
                dc.converged,
                dc.bias_ok,
                dc.vout_dc.map(fmt_f).unwrap_or_else(|| "n/a".into()),
                dc.detail
                    .as_deref()
                    .map(|d| format!("\nnote: {d}"))
                    .unwrap_or_default()
            );
            push_section(&mut p, "Goal vs observation", &body);
            if let Some(rep) = &ctx.discrepancies {
                push_section(&mut p, "Previous review", &discrepancy_section(rep));
            }
            push_section(
                &mut p,
                "Task",
                "Compare the DC operating point against the goals. Respond with ONE \
                 JSON object: {\"items\": [{\"device\": \"...\", \"goal\": <num>, \
                 \"observed\": <num>, \"delta\": <num>, \"kind\": \"headroom \
                 violation\"|\"region error\"|\"output-level error\"}], \
                 \"count\": <len>}.",
            );
        }
        AgentRole::SpecsReviewer => {
            need(ctx.cost.is_some(), "cost breakdown")?;
            let cost = ctx.cost.as_ref().unwrap();
            let mut body = format!("J = {}\n", fmt_f(cost.total));
            if let Some(m) = &ctx.measurements {
                body.push_str(&format!(
                    "gain {} dB, ugbw {} MHz, pm {} deg, thd {} dB, offset {} mV, power {}\n",
                    m.gain_db.map(fmt_f).unwrap_or_else(|| "n/a".into()),
                    m.ugbw_mhz.map(fmt_f).unwrap_or_else(|| "n/a".into()),
                    m.pm_deg.map(fmt_f).unwrap_or_else(|| "n/a".into()),
                    m.thd_db.map(fmt_f).unwrap_or_else(|| "n/a".into()),
                    m.offset_mv.map(fmt_f).unwrap_or_else(|| "n/a".into()),
                    m.power.map(fmt_f).unwrap_or_else(|| "n/a".into()),
                ));
            }
            push_section(&mut p, "Measured performance", &body);
            push_section(
                &mut p,
                "Task",
                "Judge spec compliance. Respond with ONE JSON object: {\"pass\": \
                 <bool>, \"violated\": [\"gain\", ...], \"advice\": \"...\"}.",
            );
        }
        AgentRole::AdvisorReviewer => {
            need(!ctx.history.is_empty(), "evaluation history")?;
            push_section(
                &mut p,
                "Recent evaluations",
                &history_section(ctx.windowed_history()),
            );
            push_section(
                &mut p,
                "Task",
                &format!(
                    "Pick the {} most promising distinct sizings from the history \
                     as optimizer seeds. Respond with ONE JSON object: \
                     {{\"seeds\": [{{<param map>}}, ...]}}. Best first.",
                    ctx.seed_count
                ),
            );
        }
        AgentRole::EquippedSizer => {
            need(ctx.sensitivity.is_some(), "sensitivity report")?;
            let rep = ctx.sensitivity.as_ref().unwrap();
            let table = |entries: &[crate::exturbo::SensitivityEntry]| {
                entries
                    .iter()
                    .map(|e| format!("- #{} {} S={} ell={}\n", e.rank, e.name, fmt_f(e.s), fmt_f(e.lengthscale)))
                    .collect::<String>()
            };
            push_section(&mut p, "Global sensitivity", &table(&rep.global));
            push_section(&mut p, "Elite sensitivity", &table(&rep.elite));
            push_section(
                &mut p,
                "Task",
                "Explain what each parameter does for this design, noting which are \
                 stability-critical (global top quartile) and which are \
                 performance-tuning (elite top quartile). Respond with ONE JSON \
                 object: {\"explanations\": [{\"name\": \"...\", \"classification\": \
                 \"stability-critical\"|\"performance-tuning\"|\"both\"|\"secondary\", \
                 \"text\": \"...\"}]}.",
            );
        }
    }

    if let Some(err) = &ctx.validation_error {
        push_section(
            &mut p,
            "Previous response was rejected",
            &format!("{err}\nFix the problem and answer again in the required JSON shape."),
        );
    }
    Ok(p)
}

// ---------------------------------------------------------------------------
// Response parsing

/// Strip an optional Markdown code fence and parse a single JSON object.
fn parse_json_object(raw: &str) -> Result<serde_json::Map<String, serde_json::Value>, AgentError> {
    let mut text = raw.trim();
    if text.starts_with("```") {
        text = text.trim_start_matches("```json").trim_start_matches("```");
        if let Some(end) = text.rfind("```") {
            text = &text[..end];
        }
        text = text.trim();
    }
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| AgentError::NotJsonObject(e.to_string()))?;
    match value {
        serde_json::Value::Object(map) => Ok(map),
        other => Err(AgentError::NotJsonObject(format!(
            "got {} instead of an object",
            match other {
                serde_json::Value::Array(_) => "an array",
                serde_json::Value::String(_) => "a string",
                serde_json::Value::Number(_) => "a number",
                serde_json::Value::Bool(_) => "a boolean",
                _ => "null",
            }
        ))),
    }
}

fn take_str(
    map: &serde_json::Map<String, serde_json::Value>,
    key: &str,
) -> Result<String, AgentError> {
    map.get(key)
        .ok_or_else(|| AgentError::MissingField(key.to_string()))?
        .as_str()
        .map(str::to_string)
        .ok_or(AgentError::WrongType {
            field: key.to_string(),
            expected: "string",
        })
}

fn take_f64(value: &serde_json::Value, field: &str) -> Result<f64, AgentError> {
    value.as_f64().ok_or(AgentError::WrongType {
        field: field.to_string(),
        expected: "number",
    })
}

fn params_from_map(
    map: &serde_json::Map<String, serde_json::Value>,
) -> Result<BTreeMap<String, f64>, AgentError> {
    let mut out = BTreeMap::new();
    for (k, v) in map {
        let f = v
            .as_f64()
            .ok_or_else(|| AgentError::NonNumericValue(k.clone()))?;
        if !f.is_finite() {
            return Err(AgentError::NonNumericValue(k.clone()));
        }
        out.insert(k.clone(), f);
    }
    Ok(out)
}

/// Parse a raw response against the role's schema.
pub fn parse_response(role: AgentRole, raw: &str) -> Result<AgentResponse, AgentError> {
    let map = parse_json_object(raw)?;
    match role {
        AgentRole::CircuitExplainer => Ok(AgentResponse::Analysis(take_str(&map, "analysis")?)),
        AgentRole::MatchingFinder => {
            let groups_v = map
                .get("groups")
                .ok_or_else(|| AgentError::MissingField("groups".into()))?;
            let arr = groups_v.as_array().ok_or(AgentError::WrongType {
                field: "groups".into(),
                expected: "array",
            })?;
            let mut groups = Vec::new();
            for g in arr {
                let obj = g.as_object().ok_or(AgentError::WrongType {
                    field: "groups[]".into(),
                    expected: "object",
                })?;
                let name = take_str(obj, "name")?;
                let members_v = obj
                    .get("members")
                    .ok_or_else(|| AgentError::MissingField("members".into()))?;
                let members: Vec<String> = members_v
                    .as_array()
                    .ok_or(AgentError::WrongType {
                        field: "members".into(),
                        expected: "array of strings",
                    })?
                    .iter()
                    .map(|m| {
                        m.as_str().map(str::to_string).ok_or(AgentError::WrongType {
                            field: "members[]".into(),
                            expected: "string",
                        })
                    })
                    .collect::<Result<_, _>>()?;
                groups.push(MatchGroup { name, members });
            }
            Ok(AgentResponse::Matching(groups))
        }
        AgentRole::DcGoalSetter => {
            let vout_target = take_f64(
                map.get("vout_target")
                    .ok_or_else(|| AgentError::MissingField("vout_target".into()))?,
                "vout_target",
            )?;
            let devices_v = map
                .get("devices")
                .ok_or_else(|| AgentError::MissingField("devices".into()))?;
            let devices_obj = devices_v.as_object().ok_or(AgentError::WrongType {
                field: "devices".into(),
                expected: "object",
            })?;
            let mut devices = BTreeMap::new();
            for (dev, v) in devices_obj {
                let obj = v.as_object().ok_or(AgentError::WrongType {
                    field: format!("devices.{dev}"),
                    expected: "object",
                })?;
                devices.insert(
                    dev.clone(),
                    DeviceGoal {
                        vov: take_f64(
                            obj.get("vov")
                                .ok_or_else(|| AgentError::MissingField(format!("{dev}.vov")))?,
                            "vov",
                        )?,
                        vds: take_f64(
                            obj.get("vds")
                                .ok_or_else(|| AgentError::MissingField(format!("{dev}.vds")))?,
                            "vds",
                        )?,
                        id_ua: take_f64(
                            obj.get("id_ua")
                                .ok_or_else(|| AgentError::MissingField(format!("{dev}.id_ua")))?,
                            "id_ua",
                        )?,
                        region: take_str(obj, "region")?,
                    },
                );
            }
            Ok(AgentResponse::Goals(DcGoals {
                vout_target,
                devices,
            }))
        }
        AgentRole::InitialDesigner | AgentRole::DcSizer | AgentRole::InferencingSizer => {
            Ok(AgentResponse::Params(params_from_map(&map)?))
        }
        AgentRole::DcReviewer => {
            let items_v = map
                .get("items")
                .ok_or_else(|| AgentError::MissingField("items".into()))?;
            let arr = items_v.as_array().ok_or(AgentError::WrongType {
                field: "items".into(),
                expected: "array",
            })?;
            let mut items = Vec::new();
            for it in arr {
                let obj = it.as_object().ok_or(AgentError::WrongType {
                    field: "items[]".into(),
                    expected: "object",
                })?;
                items.push(DiscrepancyItem {
                    device: take_str(obj, "device")?,
                    goal: take_f64(
                        obj.get("goal")
                            .ok_or_else(|| AgentError::MissingField("goal".into()))?,
                        "goal",
                    )?,
                    observed: take_f64(
                        obj.get("observed")
                            .ok_or_else(|| AgentError::MissingField("observed".into()))?,
                        "observed",
                    )?,
                    delta: take_f64(
                        obj.get("delta")
                            .ok_or_else(|| AgentError::MissingField("delta".into()))?,
                        "delta",
                    )?,
                    kind: DiscrepancyKind::parse(&take_str(obj, "kind")?)?,
                });
            }
            let count = map
                .get("count")
                .and_then(|c| c.as_u64())
                .map(|c| c as usize)
                .unwrap_or(items.len());
            if count != items.len() {
                return Err(AgentError::WrongType {
                    field: "count".into(),
                    expected: "integer equal to items length",
                });
            }
            Ok(AgentResponse::Discrepancies(DiscrepancyReport::new(items)))
        }
        AgentRole::SpecsReviewer => {
            let pass = map
                .get("pass")
                .ok_or_else(|| AgentError::MissingField("pass".into()))?
                .as_bool()
                .ok_or(AgentError::WrongType {
                    field: "pass".into(),
                    expected: "boolean",
                })?;
            let violated = map
                .get("violated")
                .ok_or_else(|| AgentError::MissingField("violated".into()))?
                .as_array()
                .ok_or(AgentError::WrongType {
                    field: "violated".into(),
                    expected: "array of strings",
                })?
                .iter()
                .map(|v| {
                    v.as_str().map(str::to_string).ok_or(AgentError::WrongType {
                        field: "violated[]".into(),
                        expected: "string",
                    })
                })
                .collect::<Result<_, _>>()?;
            Ok(AgentResponse::Review {
                pass,
                violated,
                advice: take_str(&map, "advice")?,
            })
        }
        AgentRole::AdvisorReviewer => {
            let seeds_v = map
                .get("seeds")
                .ok_or_else(|| AgentError::MissingField("seeds".into()))?;
            let arr = seeds_v.as_array().ok_or(AgentError::WrongType {
                field: "seeds".into(),
                expected: "array",
            })?;
            let mut seeds = Vec::new();
            for s in arr {
                let obj = s.as_object().ok_or(AgentError::WrongType {
                    field: "seeds[]".into(),
                    expected: "object",
                })?;
                seeds.push(params_from_map(obj)?);
            }
            Ok(AgentResponse::Seeds(seeds))
        }
        AgentRole::EquippedSizer => {
            let ex_v = map
                .get("explanations")
                .ok_or_else(|| AgentError::MissingField("explanations".into()))?;
            let arr = ex_v.as_array().ok_or(AgentError::WrongType {
                field: "explanations".into(),
                expected: "array",
            })?;
            let mut out = Vec::new();
            for e in arr {
                let obj = e.as_object().ok_or(AgentError::WrongType {
                    field: "explanations[]".into(),
                    expected: "object",
                })?;
                out.push(ParamExplanation {
                    name: take_str(obj, "name")?,
                    classification: take_str(obj, "classification")?,
                    text: take_str(obj, "text")?,
                });
            }
            Ok(AgentResponse::Explanations(out))
        }
    }
}

// ---------------------------------------------------------------------------
// Parameter validation

/// Check a raw parameter proposal against the mandatory key set, then apply
/// matching and clamping. Returns the normalized point and a human-readable
/// list of every correction applied.
pub fn validate_params(
    raw: &BTreeMap<String, f64>,
    mandatory: &[String],
    ranges: &ParamRanges,
    groups: &MatchingGroups,
) -> Result<(DesignPoint, Vec<String>), AgentError> {
    let missing: Vec<String> = mandatory
        .iter()
        .filter(|k| !raw.contains_key(*k))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(AgentError::MissingKeys(missing));
    }
    let extra: Vec<String> = raw
        .keys()
        .filter(|k| !mandatory.contains(k))
        .cloned()
        .collect();
    if !extra.is_empty() {
        return Err(AgentError::ExtraKeys(extra));
    }
    for (k, v) in raw {
        if !v.is_finite() {
            return Err(AgentError::NonNumericValue(k.clone()));
        }
    }

    let point: DesignPoint = raw.iter().map(|(k, v)| (k.clone(), *v)).collect();
    let mut corrections = Vec::new();

    let matched = groups.apply(&point);
    for (name, value) in matched.iter() {
        if point.get(name) != Some(value) {
            let group = groups.group_of(name).map(|g| g.name.as_str()).unwrap_or("?");
            corrections.push(format!(
                "matched {name} := {} (group {group})",
                fmt_f(value)
            ));
        }
    }

    let (clamped, touched) = ranges.clamp(&matched);
    for name in &touched {
        if let Some(r) = ranges.get(name) {
            corrections.push(format!(
                "clamped {name} to [{}, {}]",
                fmt_f(r.min),
                fmt_f(r.max)
            ));
        }
    }
    Ok((clamped, corrections))
}

/// True when the two points are identical within relative tolerance 1e-9 —
/// the signal that a proposer is stuck repeating itself.
pub fn detect_deadloop(prev: &DesignPoint, next: &DesignPoint) -> bool {
    prev.approx_eq(next, 1e-9)
}

/// Multiply every width parameter (name starting with `width_prefix`) by an
/// independent factor from U[0.95, 1.05], then re-apply matching and
/// re-clamp. Everything else passes through unchanged.
pub fn perturb_widths<R: rand::Rng>(
    point: &DesignPoint,
    ranges: &ParamRanges,
    groups: &MatchingGroups,
    width_prefix: &str,
    rng: &mut R,
) -> DesignPoint {
    let mut out = point.clone();
    for (name, value) in point.iter() {
        if name.starts_with(width_prefix) && !ranges.is_fixed(name) {
            let factor = rng.random_range(0.95..1.05);
            out.set(name, value * factor);
        }
    }
    let (clamped, _) = ranges.clamp(&groups.apply(&out));
    clamped
}

// ---------------------------------------------------------------------------
// Transcript

/// One completed agent call: everything needed to audit or replay it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub role: AgentRole,
    pub prompt: String,
    pub raw_response: String,
    pub parsed: serde_json::Value,
    /// Milliseconds since the Unix epoch at completion time.
    pub timestamp_ms: u64,
    /// 1 = first try; higher means schema retries happened.
    pub attempts: u32,
    pub prompt_chars: usize,
    pub response_chars: usize,
}

/// Append-only record of every agent call in a run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn record(&mut self, entry: TranscriptEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Default number of re-prompts after a schema failure.
pub const DEFAULT_RETRIES: u32 = 3;

/// Run one agent call: build the prompt, send it through the transport,
/// parse strictly, and on a schema failure re-prompt with the error echoed
/// back, up to `retries` additional attempts. Parameter-proposing roles also
/// get their key set checked inside the retry loop when the context carries a
/// mandatory list. Every completed call is appended to the transcript.
pub fn call(
    role: AgentRole,
    ctx: &AgentContext,
    transport: &dyn Transport,
    transcript: &mut Transcript,
    retries: u32,
) -> Result<AgentResponse, AgentError> {
    let mut attempt_ctx = ctx.clone();
    let mut last_error = String::new();
    for attempt in 1..=(1 + retries) {
        let prompt = build_prompt(role, &attempt_ctx)?;
        let raw = transport.complete(role, &attempt_ctx, &prompt)?;
        let outcome = parse_response(role, &raw).and_then(|resp| {
            if role.proposes_params() && !ctx.mandatory.is_empty() {
                if let (AgentResponse::Params(map), Some(ranges)) = (&resp, &ctx.ranges) {
                    validate_params(map, &ctx.mandatory, ranges, &ctx.groups)?;
                }
            }
            Ok(resp)
        });
        match outcome {
            Ok(resp) => {
                transcript.record(TranscriptEntry {
                    role,
                    prompt_chars: prompt.len(),
                    response_chars: raw.len(),
                    prompt,
                    raw_response: raw,
                    parsed: resp.to_value(),
                    timestamp_ms: now_ms(),
                    attempts: attempt,
                });
                return Ok(resp);
            }
            Err(e) => {
                last_error = e.to_string();
                attempt_ctx.validation_error = Some(last_error.clone());
            }
        }
    }
    Err(AgentError::RetriesExhausted {
        role,
        attempts: 1 + retries,
        last: last_error,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::exturbo::synthetic::breakdown_of;
    use crate::testutil::{
        miller_groups, miller_mandatory, miller_ranges, miller_template_text, reference_point,
    };

    fn sizing_ctx() -> AgentContext {
        AgentContext {
            circuit_name: "miller_ota".into(),
            graph_summary: "8 transistors, 2 capacitors, differential input, single output".into(),
            netlist_text: miller_template_text(),
            specs: Some(crate::testutil::miller_specs()),
            mandatory: miller_mandatory(),
            ranges: Some(miller_ranges()),
            groups: miller_groups(),
            ..AgentContext::default()
        }
    }

    fn record(iteration: usize, j: f64, point: DesignPoint) -> EvalRecord {
        EvalRecord {
            iteration,
            phase: "D".into(),
            worker: None,
            point,
            cost: breakdown_of(j),
            measurements: None,
        }
    }

    #[test]
    fn initial_designer_prompt_embeds_mandatory_keys() {
        let mut ctx = sizing_ctx();
        ctx.mandatory = vec!["w1".into(), "l1".into()];
        let prompt = build_prompt(AgentRole::InitialDesigner, &ctx).unwrap();
        assert!(prompt.contains("w1"));
        assert!(prompt.contains("l1"));
        assert!(prompt.contains("exactly this mandatory"));
        assert!(prompt.contains("[w1, l1]"));
    }

    #[test]
    fn inferencing_prompt_keeps_exactly_the_last_eight_evals() {
        let mut ctx = sizing_ctx();
        ctx.history = (1..=40)
            .map(|i| record(i, 2.0 + i as f64, reference_point()))
            .collect();
        ctx.history_window = 8;
        let prompt = build_prompt(AgentRole::InferencingSizer, &ctx).unwrap();
        for i in 33..=40 {
            assert!(prompt.contains(&format!("- eval {i}:")), "missing eval {i}");
        }
        assert!(!prompt.contains("- eval 32:"));
        assert_eq!(prompt.matches("- eval ").count(), 8);
    }

    #[test]
    fn dc_reviewer_prompt_lists_every_delta() {
        let mut ctx = sizing_ctx();
        ctx.dc_goals = Some(DcGoals {
            vout_target: 0.6,
            devices: BTreeMap::new(),
        });
        ctx.dc_result = Some(DcResult::good(0.31));
        let items = vec![
            DiscrepancyItem {
                device: "m1".into(),
                goal: 0.15,
                observed: 0.04,
                delta: -0.11,
                kind: DiscrepancyKind::HeadroomViolation,
            },
            DiscrepancyItem {
                device: "m5".into(),
                goal: 1.0,
                observed: 0.0,
                delta: -1.0,
                kind: DiscrepancyKind::RegionError,
            },
            DiscrepancyItem {
                device: "output".into(),
                goal: 0.6,
                observed: 0.31,
                delta: -0.29,
                kind: DiscrepancyKind::OutputLevelError,
            },
        ];
        ctx.discrepancies = Some(DiscrepancyReport::new(items));
        let prompt = build_prompt(AgentRole::DcReviewer, &ctx).unwrap();
        assert!(prompt.contains("delta -0.11"));
        assert!(prompt.contains("delta -1"));
        assert!(prompt.contains("delta -0.29"));
        assert_eq!(prompt.matches("delta ").count(), 3);
    }

    #[test]
    fn prompts_error_when_context_is_missing() {
        let err = build_prompt(AgentRole::DcReviewer, &AgentContext::default()).unwrap_err();
        assert!(matches!(err, AgentError::MissingContext { .. }));
        let err = build_prompt(AgentRole::InitialDesigner, &AgentContext::default()).unwrap_err();
        assert!(err.to_string().contains("mandatory"));
    }

    #[test]
    fn fenced_json_is_accepted() {
        let raw = "```json\n{\"w1\": 1.25, \"l1\": 0.5}\n```";
        match parse_response(AgentRole::InitialDesigner, raw).unwrap() {
            AgentResponse::Params(map) => {
                assert_eq!(map["w1"], 1.25);
                assert_eq!(map["l1"], 0.5);
            }
            other => panic!("wrong variant: {other:?}"),
        }
    }

    #[test]
    fn non_object_responses_are_rejected() {
        assert!(matches!(
            parse_response(AgentRole::CircuitExplainer, "[1, 2]"),
            Err(AgentError::NotJsonObject(_))
        ));
        assert!(matches!(
            parse_response(AgentRole::CircuitExplainer, "free text"),
            Err(AgentError::NotJsonObject(_))
        ));
    }

    #[test]
    fn discrepancy_count_must_match_items() {
        let raw = r#"{"items": [{"device": "m1", "goal": 1.0, "observed": 0.5,
            "delta": -0.5, "kind": "headroom violation"}], "count": 3}"#;
        assert!(parse_response(AgentRole::DcReviewer, raw).is_err());

        let raw_ok = r#"{"items": [], "count": 0}"#;
        match parse_response(AgentRole::DcReviewer, raw_ok).unwrap() {
            AgentResponse::Discrepancies(rep) => assert!(rep.clean()),
            other => panic!("wrong variant: {other:?}"),
        }
    }

    #[test]
    fn unknown_discrepancy_kind_is_named() {
        let raw = r#"{"items": [{"device": "m1", "goal": 1.0, "observed": 0.5,
            "delta": -0.5, "kind": "thermal error"}], "count": 1}"#;
        let err = parse_response(AgentRole::DcReviewer, raw).unwrap_err();
        assert!(err.to_string().contains("thermal error"));
    }

    #[test]
    fn validate_accepts_exact_in_range_set_unchanged() {
        let mandatory = miller_mandatory();
        let raw: BTreeMap<String, f64> =
            reference_point().iter().map(|(k, v)| (k.to_string(), v)).collect();
        let (point, corrections) =
            validate_params(&raw, &mandatory, &miller_ranges(), &miller_groups()).unwrap();
        assert!(corrections.is_empty(), "unexpected: {corrections:?}");
        assert_eq!(point.get("w6"), Some(16.5));
        assert_eq!(point.len(), mandatory.len());
    }

    #[test]
    fn validate_names_missing_and_extra_keys() {
        let mandatory = miller_mandatory();
        let mut raw: BTreeMap<String, f64> =
            reference_point().iter().map(|(k, v)| (k.to_string(), v)).collect();
        raw.remove("l3");
        let err =
            validate_params(&raw, &mandatory, &miller_ranges(), &miller_groups()).unwrap_err();
        assert!(matches!(&err, AgentError::MissingKeys(keys) if keys == &vec!["l3".to_string()]));

        let mut raw: BTreeMap<String, f64> =
            reference_point().iter().map(|(k, v)| (k.to_string(), v)).collect();
        raw.insert("w99".into(), 1.0);
        let err =
            validate_params(&raw, &mandatory, &miller_ranges(), &miller_groups()).unwrap_err();
        assert!(err.to_string().contains("w99"));

        let mut raw: BTreeMap<String, f64> =
            reference_point().iter().map(|(k, v)| (k.to_string(), v)).collect();
        raw.insert("w1".into(), f64::NAN);
        let err =
            validate_params(&raw, &mandatory, &miller_ranges(), &miller_groups()).unwrap_err();
        assert!(err.to_string().contains("w1"));
    }

    #[test]
    fn validate_records_matching_and_clamp_corrections() {
        let mandatory = miller_mandatory();
        let mut raw: BTreeMap<String, f64> =
            reference_point().iter().map(|(k, v)| (k.to_string(), v)).collect();
        raw.insert("w2".into(), 7.0); // group forces w2 back to w1 = 5
        raw.insert("w6".into(), 60.0); // above the 50 um cap
        let (point, corrections) =
            validate_params(&raw, &mandatory, &miller_ranges(), &miller_groups()).unwrap();
        assert_eq!(point.get("w2"), Some(5.0));
        assert_eq!(point.get("w6"), Some(50.0));
        assert!(corrections.iter().any(|c| c.contains("matched w2")));
        assert!(corrections.iter().any(|c| c.contains("clamped w6")));
        assert_eq!(corrections.len(), 2);
    }

    #[test]
    fn deadloop_detection_uses_relative_tolerance() {
        let a = reference_point();
        let mut b = a.clone();
        assert!(detect_deadloop(&a, &b));
        b.set("w1", 5.0 * 1.01);
        assert!(!detect_deadloop(&a, &b));

        // Equality appearing only after clamp normalization still counts.
        let ranges = miller_ranges();
        let mut over = a.clone();
        over.set("w6", 60.0);
        let (clamped, _) = ranges.clamp(&over);
        let mut prev = a.clone();
        prev.set("w6", 50.0);
        assert!(detect_deadloop(&prev, &clamped));
    }

    #[test]
    fn width_perturbation_touches_only_widths_within_five_percent() {
        let ranges = miller_ranges();
        let groups = miller_groups();
        let base = reference_point();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let shaken = perturb_widths(&base, &ranges, &groups, "w", &mut rng);

        let mut changed = 0;
        for (name, before) in base.iter() {
            let after = shaken.get(name).unwrap();
            if name.starts_with('w') {
                assert!(
                    after >= before * 0.95 - 1e-12 && after <= before * 1.05 + 1e-12,
                    "{name} moved outside the 5% band: {before} -> {after}"
                );
                if after != before {
                    changed += 1;
                }
            } else {
                assert_eq!(after, before, "{name} is not a width but moved");
            }
        }
        assert!(changed >= 1, "no width changed");
        // Matching still holds after perturbation.
        assert_eq!(shaken.get("w1"), shaken.get("w2"));
        assert_eq!(shaken.get("w3"), shaken.get("w4"));

        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let again = perturb_widths(&base, &ranges, &groups, "w", &mut rng2);
        assert!(shaken.approx_eq(&again, 0.0), "same seed must reproduce");
    }

    struct CannedTransport {
        replies: Mutex<Vec<String>>,
        prompts: Mutex<Vec<String>>,
        calls: AtomicUsize,
    }

    impl CannedTransport {
        fn new(replies: Vec<&str>) -> Self {
            CannedTransport {
                replies: Mutex::new(replies.into_iter().rev().map(str::to_string).collect()),
                prompts: Mutex::new(Vec::new()),
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl Transport for CannedTransport {
        fn name(&self) -> &'static str {
            "canned"
        }

        fn complete(
            &self,
            _role: AgentRole,
            _ctx: &AgentContext,
            prompt: &str,
        ) -> Result<String, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.prompts.lock().unwrap().push(prompt.to_string());
            let mut replies = self.replies.lock().unwrap();
            replies
                .pop()
                .ok_or_else(|| TransportError::Network("out of canned replies".into()))
        }

        fn calls(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }
    }

    #[test]
    fn call_reprompts_with_the_error_until_valid() {
        let mut ctx = sizing_ctx();
        ctx.mandatory.clear(); // CircuitExplainer needs no params
        let transport = CannedTransport::new(vec![
            "not json at all",
            "{\"wrong\": 1}",
            "{\"analysis\": \"two gain stages\"}",
        ]);
        let mut transcript = Transcript::default();
        let resp = call(
            AgentRole::CircuitExplainer,
            &ctx,
            &transport,
            &mut transcript,
            DEFAULT_RETRIES,
        )
        .unwrap();
        assert_eq!(resp, AgentResponse::Analysis("two gain stages".into()));
        assert_eq!(transport.calls(), 3);
        assert_eq!(transcript.len(), 1);
        assert_eq!(transcript.entries()[0].attempts, 3);

        let prompts = transport.prompts.lock().unwrap();
        assert!(!prompts[0].contains("Previous response was rejected"));
        assert!(prompts[1].contains("Previous response was rejected"));
        assert!(prompts[1].contains("not a single JSON object"));
        assert!(prompts[2].contains("missing key 'analysis'"));
    }

    #[test]
    fn call_fails_hard_after_retry_budget() {
        let mut ctx = sizing_ctx();
        ctx.mandatory.clear();
        let transport = CannedTransport::new(vec!["bad", "bad", "bad", "bad", "bad"]);
        let mut transcript = Transcript::default();
        let err = call(
            AgentRole::CircuitExplainer,
            &ctx,
            &transport,
            &mut transcript,
            DEFAULT_RETRIES,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            AgentError::RetriesExhausted { attempts: 4, .. }
        ));
        assert_eq!(transport.calls(), 4); // initial try + 3 retries
        assert!(transcript.is_empty());
    }

    #[test]
    fn call_folds_param_validation_into_the_retry_loop() {
        let ctx = sizing_ctx();
        let full: BTreeMap<String, f64> =
            reference_point().iter().map(|(k, v)| (k.to_string(), v)).collect();
        let full_json = serde_json::to_string(&full).unwrap();
        let transport = CannedTransport::new(vec!["{\"w1\": 1.0}", full_json.as_str()]);
        let mut transcript = Transcript::default();
        let resp = call(
            AgentRole::InitialDesigner,
            &ctx,
            &transport,
            &mut transcript,
            DEFAULT_RETRIES,
        )
        .unwrap();
        assert!(matches!(resp, AgentResponse::Params(_)));
        assert_eq!(transport.calls(), 2);
        let prompts = transport.prompts.lock().unwrap();
        assert!(prompts[1].contains("missing mandatory parameter"));
        assert!(prompts[1].contains("cc"));
    }

    #[test]
    fn transcript_round_trips_through_json() {
        let mut transcript = Transcript::default();
        transcript.record(TranscriptEntry {
            role: AgentRole::SpecsReviewer,
            prompt: "p".into(),
            raw_response: "{\"pass\": true, \"violated\": [], \"advice\": \"a\"}".into(),
            parsed: serde_json::json!({"pass": true, "violated": [], "advice": "a"}),
            timestamp_ms: 5,
            attempts: 1,
            prompt_chars: 1,
            response_chars: 46,
        });
        let text = transcript.to_json();
        let back = Transcript::from_json(&text).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.entries()[0].role, AgentRole::SpecsReviewer);
        assert_eq!(back.entries()[0].parsed["pass"], true);
    }
}
