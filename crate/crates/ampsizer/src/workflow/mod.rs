//! The phased sizing workflow.
//!
//! Phase B reads the circuit (explanation, matching, DC goals, initial
//! sizing), Phase C closes the DC operating point in at most 10 review/resize
//! iterations, Phase D drives the universal cost toward 0.5 in at most 40
//! proposal iterations, and Phase E hands the best unique sizings to the
//! trust-region optimizer (400 + 40 evaluations), fits the dual-granularity
//! sensitivity report, and renders the sign-off document. All agent traffic
//! goes through one transport; all cost evaluations land in one history.

pub mod persist;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    call, detect_deadloop, perturb_widths, validate_params, AgentContext, AgentError,
    AgentResponse, AgentRole, DcGoals, DiscrepancyReport, EndpointConfig, ParamExplanation,
    Transcript, Transport, DEFAULT_RETRIES,
};
use crate::cost::{universal_cost, CostBreakdown, CostError, Measurements, MetricKind, SpecItem, SpecSet};
use crate::design::DesignPoint;
use crate::exturbo::{
    classify, optimize, sensitivity, ExturboError, OptimizeConfig, ParamClass, SensitivityConfig,
    SensitivityReport,
};
use crate::netlist::{
    parse_devices, MatchingGroups, NetlistError, NetlistTemplate, ParamRange, ParamRanges,
};
use crate::record::EvalRecord;
use crate::sim::{measure, DcResult, SimBackend};

pub use report::{assemble as assemble_report, render_report, FinalReport, SpecRow};

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Optimizer(#[from] ExturboError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{role} produced an invalid artifact: {detail}")]
    InvalidArtifact { role: AgentRole, detail: String },
    #[error("report: {0}")]
    Report(String),
}

impl WorkflowError {
    /// Process exit code the CLI maps this error to: 2 for configuration
    /// problems, 3 for transport/backend failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            WorkflowError::Config(_) | WorkflowError::Netlist(_) | WorkflowError::Cost(_) => 2,
            WorkflowError::Agent(AgentError::Transport(_)) => 3,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    Surrogate,
    Ngspice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportChoice {
    Scripted,
    Endpoint,
}

/// Iteration and evaluation limits for each phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    /// DC review/resize iterations.
    pub phase_c: usize,
    /// Spec-driven proposal iterations.
    pub phase_d: usize,
    /// Cost level that ends Phase D early.
    pub phase_d_target: f64,
    /// Optimizer evaluations hunting for cost <= 0.5.
    pub optimizer_stage1: usize,
    /// Optimizer evaluations refining power afterwards.
    pub optimizer_stage2: usize,
    pub workers: usize,
    /// Warm-start seeds handed to the optimizer.
    pub seed_count: usize,
    /// Per-dimension span of each seed-local box, as a fraction of the
    /// global range.
    pub span_ratio: f64,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            phase_c: 10,
            phase_d: 40,
            phase_d_target: 0.5,
            optimizer_stage1: 400,
            optimizer_stage2: 40,
            workers: 3,
            seed_count: 3,
            span_ratio: 0.4,
        }
    }
}

impl Budgets {
    pub fn validate(&self) -> Result<(), WorkflowError> {
        let positive = [
            ("phase_c", self.phase_c),
            ("phase_d", self.phase_d),
            ("optimizer_stage1", self.optimizer_stage1),
            ("workers", self.workers),
            ("seed_count", self.seed_count),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(WorkflowError::Config(format!("budget {name} must be positive")));
            }
        }
        if !(self.phase_d_target.is_finite() && self.phase_d_target > 0.0) {
            return Err(WorkflowError::Config("phase_d_target must be positive".into()));
        }
        if !(self.span_ratio > 0.0 && self.span_ratio <= 1.0) {
            return Err(WorkflowError::Config("span_ratio must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Everything a run needs, loaded from one TOML file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub circuit_name: String,
    pub netlist_path: PathBuf,
    pub schematic_path: Option<PathBuf>,
    pub specs: SpecSet,
    pub ranges: ParamRanges,
    pub backend: BackendChoice,
    pub transport: TransportChoice,
    pub endpoint: EndpointConfig,
    pub budgets: Budgets,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct RawCircuit {
    name: String,
    netlist: PathBuf,
    schematic: Option<PathBuf>,
}

/// One `[[specs.items]]` entry. The violation direction is a fixed property
/// of each metric, so only target and weight are configurable.
#[derive(Debug, Clone, Deserialize)]
pub struct SpecItemConfig {
    pub metric: MetricKind,
    pub target: f64,
    pub weight: f64,
}

/// The `[specs]` section of a config document.
#[derive(Debug, Clone, Deserialize)]
pub struct SpecsConfig {
    pub p_max: f64,
    pub p_min: Option<f64>,
    pub power_unit: Option<String>,
    pub sanity_penalty: Option<f64>,
    pub items: Vec<SpecItemConfig>,
}

impl SpecsConfig {
    pub fn into_spec_set(self) -> Result<SpecSet, WorkflowError> {
        let items = self
            .items
            .into_iter()
            .map(|it| SpecItem::new(it.metric, it.target, it.weight))
            .collect();
        let specs = SpecSet {
            items,
            p_max: self.p_max,
            p_min: self.p_min,
            sanity_penalty: self.sanity_penalty.filter(|s| *s > 0.0).unwrap_or(100.0),
            power_unit: self.power_unit,
        };
        specs.validate()?;
        Ok(specs)
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawRange {
    Fixed { fixed: f64, unit: Option<String> },
    Span { min: f64, max: f64, unit: Option<String> },
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RawRun {
    seed: u64,
    backend: Option<BackendChoice>,
    transport: Option<TransportChoice>,
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct RawConfig {
    circuit: RawCircuit,
    specs: SpecsConfig,
    ranges: BTreeMap<String, RawRange>,
    #[serde(default)]
    run: RawRun,
    #[serde(default)]
    budgets: Budgets,
    endpoint: Option<EndpointConfig>,
}

impl RunConfig {
    /// Parse a config document. Relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, WorkflowError> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| WorkflowError::Config(e.to_string()))?;

        let specs = raw.specs.into_spec_set()?;

        let mut ranges = ParamRanges::default();
        for (name, r) in raw.ranges {
            let range = match r {
                RawRange::Fixed { fixed, unit } => {
                    ParamRange::fixed(fixed, unit.as_deref().unwrap_or(""))
                }
                RawRange::Span { min, max, unit } => {
                    ParamRange::new(min, max, unit.as_deref().unwrap_or(""))
                }
            };
            ranges.0.insert(name, range);
        }
        ranges.validate()?;

        let resolve = |p: &Path| -> PathBuf {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };

        let config = RunConfig {
            circuit_name: raw.circuit.name,
            netlist_path: resolve(&raw.circuit.netlist),
            schematic_path: raw.circuit.schematic.as_deref().map(resolve),
            specs,
            ranges,
            backend: raw.run.backend.unwrap_or(BackendChoice::Surrogate),
            transport: raw.run.transport.unwrap_or(TransportChoice::Scripted),
            endpoint: raw.endpoint.unwrap_or_default(),
            budgets: raw.budgets,
            seed: raw.run.seed,
            out_dir: raw.run.out_dir.as_deref().map(resolve),
        };
        config.validate()?;
        Ok(config)
    }

    /// Load and parse; returns the raw text too so runs can persist the exact
    /// configuration they executed.
    pub fn from_path(path: &Path) -> Result<(Self, String), WorkflowError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            WorkflowError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let config = Self::from_toml_str(&text, base)?;
        Ok((config, text))
    }

    pub fn validate(&self) -> Result<(), WorkflowError> {
        self.budgets.validate()?;
        if !self.netlist_path.is_file() {
            return Err(WorkflowError::Config(format!(
                "netlist path {} is not a readable file",
                self.netlist_path.display()
            )));
        }
        if let Some(s) = &self.schematic_path {
            if !s.is_file() {
                return Err(WorkflowError::Config(format!(
                    "schematic path {} is not a readable file",
                    s.display()
                )));
            }
        }
        Ok(())
    }
}

/// Accounting for one completed phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseOutcome {
    pub phase: String,
    pub iterations: usize,
    pub wall_ms: u64,
    pub best_j: Option<f64>,
    pub note: String,
}

/// Mutable run state threaded through the phases.
#[derive(Default)]
pub struct WorkflowState {
    pub graph_summary: String,
    pub analysis: Option<String>,
    pub mandatory: Vec<String>,
    pub groups: MatchingGroups,
    pub goals: Option<DcGoals>,
    pub current: Option<DesignPoint>,
    pub last_dc: Option<DcResult>,
    pub last_review: Option<DiscrepancyReport>,
    pub last_cost: Option<CostBreakdown>,
    pub last_measurements: Option<Measurements>,
    pub advice: Option<String>,
    pub history: Vec<EvalRecord>,
    pub transcript: Transcript,
    pub evals: usize,
    pub outcomes: Vec<PhaseOutcome>,
    pub sensitivity: Option<SensitivityReport>,
    pub classes: Vec<ParamClass>,
    pub explanations: Vec<ParamExplanation>,
    pub best: Option<EvalRecord>,
    pub best_measurements: Option<Measurements>,
}

/// Simulator-backed objective: instantiate the sizing into the template,
/// measure with DC-first skip-on-fail, scalarize. Any infrastructure failure
/// degrades to a sanity-penalized cost instead of aborting the search.
pub struct SimObjective<'a> {
    pub backend: &'a dyn SimBackend,
    pub template: &'a NetlistTemplate,
    pub ranges: &'a ParamRanges,
    pub specs: &'a SpecSet,
}

impl SimObjective<'_> {
    pub fn eval(&self, point: &DesignPoint) -> (CostBreakdown, Option<Measurements>) {
        let netlist = match self.template.instantiate(point, self.ranges) {
            Ok(text) => text,
            Err(_) => {
                let failed = Measurements::failed();
                return (universal_cost(&failed, self.specs), Some(failed));
            }
        };
        let meas = measure(self.backend, &netlist, self.specs).unwrap_or_else(|_| Measurements::failed());
        (universal_cost(&meas, self.specs), Some(meas))
    }
}

impl crate::exturbo::Objective for SimObjective<'_> {
    fn evaluate(&self, point: &DesignPoint) -> CostBreakdown {
        self.eval(point).0
    }
}

/// Lowest-cost `k` history entries after exact-parameter deduplication,
/// best first; cost ties break toward the earlier iteration.
pub fn select_seeds(history: &[EvalRecord], k: usize) -> Vec<EvalRecord> {
    let mut order: Vec<&EvalRecord> = history.iter().collect();
    order.sort_by(|a, b| {
        a.j()
            .total_cmp(&b.j())
            .then_with(|| a.iteration.cmp(&b.iteration))
    });
    let mut out: Vec<EvalRecord> = Vec::new();
    for rec in order {
        if out.len() == k {
            break;
        }
        if !out.iter().any(|r| r.point == rec.point) {
            out.push(rec.clone());
        }
    }
    out
}

/// One full run: owns the state, borrows the config, backend and transport.
pub struct Workflow<'a> {
    pub config: &'a RunConfig,
    pub backend: &'a dyn SimBackend,
    pub transport: &'a dyn Transport,
    pub template: NetlistTemplate,
    pub state: WorkflowState,
}

/// Schematic ingest: the provided circuit graph must be structurally
/// equivalent to the netlist, otherwise the run is ill-posed.
fn check_schematic(path: &Path, netlist: &str) -> Result<(), WorkflowError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        WorkflowError::Config(format!("cannot read schematic {}: {e}", path.display()))
    })?;
    let schematic = crate::schematic::CircuitGraph::from_json(&text)
        .map_err(|e| WorkflowError::Config(format!("schematic {}: {e}", path.display())))?;
    let cards = parse_devices(netlist)?;
    let derived = crate::schematic::netlist_to_graph(&cards, &schematic.ports)
        .map_err(|e| WorkflowError::Config(format!("netlist graph: {e}")))?;
    let report = crate::schematic::consistency_check(&schematic, &derived);
    if !report.consistent {
        return Err(WorkflowError::Config(format!(
            "schematic and netlist disagree: {}",
            report.diffs.join("; ")
        )));
    }
    Ok(())
}

fn graph_summary_of(netlist: &str) -> String {
    match parse_devices(netlist) {
        Ok(cards) => {
            let mut counts: BTreeMap<&'static str, usize> = BTreeMap::new();
            for c in &cards {
                let label = match c.kind {
                    crate::netlist::DeviceKind::Mosfet => "transistors",
                    crate::netlist::DeviceKind::Capacitor => "capacitors",
                    crate::netlist::DeviceKind::Resistor => "resistors",
                    crate::netlist::DeviceKind::VSource => "voltage sources",
                    crate::netlist::DeviceKind::ISource => "current sources",
                    crate::netlist::DeviceKind::Subckt => "subcircuits",
                };
                *counts.entry(label).or_default() += 1;
            }
            let nets: std::collections::BTreeSet<&str> = cards
                .iter()
                .flat_map(|c| c.nodes.iter().map(String::as_str))
                .collect();
            let parts: Vec<String> = counts.iter().map(|(k, v)| format!("{v} {k}")).collect();
            format!("{} across {} nets", parts.join(", "), nets.len())
        }
        Err(_) => "netlist not structurally parseable".into(),
    }
}

impl<'a> Workflow<'a> {
    pub fn new(
        config: &'a RunConfig,
        backend: &'a dyn SimBackend,
        transport: &'a dyn Transport,
    ) -> Result<Self, WorkflowError> {
        let text = std::fs::read_to_string(&config.netlist_path).map_err(|e| {
            WorkflowError::Config(format!(
                "cannot read netlist {}: {e}",
                config.netlist_path.display()
            ))
        })?;
        let template = NetlistTemplate::parse(&text)?;
        for name in template.placeholders() {
            if config.ranges.get(name).is_none() {
                return Err(WorkflowError::Config(format!(
                    "placeholder '{name}' has no range in the config"
                )));
            }
        }
        if let Some(path) = &config.schematic_path {
            check_schematic(path, template.source())?;
        }
        let mut mandatory = template.mandatory_params(&config.ranges);
        mandatory.sort();
        let graph_summary = graph_summary_of(template.source());
        Ok(Workflow {
            config,
            backend,
            transport,
            template,
            state: WorkflowState {
                graph_summary,
                mandatory,
                ..WorkflowState::default()
            },
        })
    }

    fn ctx(&self) -> AgentContext {
        AgentContext {
            circuit_name: self.config.circuit_name.clone(),
            graph_summary: self.state.graph_summary.clone(),
            netlist_text: self.template.source().to_string(),
            specs: Some(self.config.specs.clone()),
            mandatory: self.state.mandatory.clone(),
            ranges: Some(self.config.ranges.clone()),
            groups: self.state.groups.clone(),
            defaults: None,
            dc_goals: self.state.goals.clone(),
            dc_result: self.state.last_dc.clone(),
            discrepancies: self.state.last_review.clone(),
            measurements: self.state.last_measurements,
            cost: self.state.last_cost.clone(),
            current_point: self.state.current.clone(),
            history: self.state.history.clone(),
            history_window: 8,
            seed_count: self.config.budgets.seed_count,
            sensitivity: self.state.sensitivity.clone(),
            classes: if self.state.classes.is_empty() {
                None
            } else {
                Some(self.state.classes.clone())
            },
            validation_error: None,
            prior_analysis: self.state.analysis.clone().or_else(|| self.state.advice.clone()),
        }
    }

    fn agent(&mut self, role: AgentRole, ctx: &AgentContext) -> Result<AgentResponse, WorkflowError> {
        Ok(call(
            role,
            ctx,
            self.transport,
            &mut self.state.transcript,
            DEFAULT_RETRIES,
        )?)
    }

    fn proposal(
        &mut self,
        role: AgentRole,
        ctx: &AgentContext,
    ) -> Result<DesignPoint, WorkflowError> {
        let response = self.agent(role, ctx)?;
        let AgentResponse::Params(map) = response else {
            return Err(WorkflowError::InvalidArtifact {
                role,
                detail: "expected a parameter map".into(),
            });
        };
        let (point, _corrections) = validate_params(
            &map,
            &self.state.mandatory,
            &self.config.ranges,
            &self.state.groups,
        )?;
        Ok(point)
    }

    fn supply_voltage(&self) -> f64 {
        self.config.ranges.fixed_value("vdd").unwrap_or(1.2)
    }

    /// Circuit understanding: explanation, matching groups, DC goals, and a
    /// validated initial sizing.
    pub fn run_phase_b(&mut self) -> Result<(), WorkflowError> {
        let t0 = Instant::now();

        let ctx = self.ctx();
        let AgentResponse::Analysis(analysis) = self.agent(AgentRole::CircuitExplainer, &ctx)?
        else {
            return Err(WorkflowError::InvalidArtifact {
                role: AgentRole::CircuitExplainer,
                detail: "expected an analysis".into(),
            });
        };
        self.state.analysis = Some(analysis);

        let ctx = self.ctx();
        let AgentResponse::Matching(groups) = self.agent(AgentRole::MatchingFinder, &ctx)? else {
            return Err(WorkflowError::InvalidArtifact {
                role: AgentRole::MatchingFinder,
                detail: "expected matching groups".into(),
            });
        };
        let groups = MatchingGroups(groups);
        let known: Vec<String> = self.template.placeholders().to_vec();
        groups
            .validate(&known)
            .map_err(|e| WorkflowError::InvalidArtifact {
                role: AgentRole::MatchingFinder,
                detail: e.to_string(),
            })?;
        self.state.groups = groups;

        let ctx = self.ctx();
        let AgentResponse::Goals(goals) = self.agent(AgentRole::DcGoalSetter, &ctx)? else {
            return Err(WorkflowError::InvalidArtifact {
                role: AgentRole::DcGoalSetter,
                detail: "expected DC goals".into(),
            });
        };
        goals
            .validate(self.supply_voltage())
            .map_err(|detail| WorkflowError::InvalidArtifact {
                role: AgentRole::DcGoalSetter,
                detail,
            })?;
        self.state.goals = Some(goals);

        // A netlist with nothing to size still has a well-defined (empty)
        // initial point; the designer is only consulted when keys exist.
        let initial = if self.state.mandatory.is_empty() {
            DesignPoint::new()
        } else {
            let ctx = self.ctx();
            self.proposal(AgentRole::InitialDesigner, &ctx)?
        };
        self.state.current = Some(initial);

        self.state.outcomes.push(PhaseOutcome {
            phase: "B".into(),
            iterations: 1,
            wall_ms: t0.elapsed().as_millis() as u64,
            best_j: None,
            note: format!(
                "{} matching groups, {} free parameters",
                self.state.groups.0.len(),
                self.state.mandatory.len()
            ),
        });
        Ok(())
    }

    /// DC closure: simulate the bias, review against the goals, resize; stop
    /// on a clean review. Budget exhaustion is a soft continue.
    pub fn run_phase_c(&mut self) -> Result<(), WorkflowError> {
        let t0 = Instant::now();
        let budget = self.config.budgets.phase_c;
        let mut iterations = 0;
        let mut final_count = 0;

        for i in 1..=budget {
            iterations = i;
            let point = self.state.current.clone().unwrap_or_default();
            let dc = match self.template.instantiate(&point, &self.config.ranges) {
                Ok(netlist) => match self.backend.run_dc(&netlist) {
                    Ok(dc) => dc,
                    Err(e) => DcResult {
                        converged: false,
                        bias_ok: false,
                        vout_dc: None,
                        detail: Some(e.to_string()),
                    },
                },
                Err(e) => DcResult {
                    converged: false,
                    bias_ok: false,
                    vout_dc: None,
                    detail: Some(e.to_string()),
                },
            };
            self.state.last_dc = Some(dc);

            let ctx = self.ctx();
            let AgentResponse::Discrepancies(review) = self.agent(AgentRole::DcReviewer, &ctx)?
            else {
                return Err(WorkflowError::InvalidArtifact {
                    role: AgentRole::DcReviewer,
                    detail: "expected a discrepancy report".into(),
                });
            };
            final_count = review.count;
            self.state.last_review = Some(review);

            if final_count == 0 || i == budget || self.state.mandatory.is_empty() {
                break;
            }
            let ctx = self.ctx();
            let next = self.proposal(AgentRole::DcSizer, &ctx)?;
            self.state.current = Some(next);
        }

        self.state.outcomes.push(PhaseOutcome {
            phase: "C".into(),
            iterations,
            wall_ms: t0.elapsed().as_millis() as u64,
            best_j: None,
            note: format!("final discrepancy count {final_count}"),
        });
        Ok(())
    }

    fn evaluate_current(&mut self, phase: &str) -> EvalRecord {
        let point = self.state.current.clone().unwrap_or_default();
        let objective = SimObjective {
            backend: self.backend,
            template: &self.template,
            ranges: &self.config.ranges,
            specs: &self.config.specs,
        };
        let (cost, meas) = objective.eval(&point);
        self.state.evals += 1;
        let rec = EvalRecord {
            iteration: self.state.evals,
            phase: phase.to_string(),
            worker: None,
            point,
            cost,
            measurements: meas,
        };
        self.state.last_cost = Some(rec.cost.clone());
        self.state.last_measurements = rec.measurements;
        self.state.history.push(rec.clone());
        rec
    }

    /// Spec closure: evaluate, review, propose; perturb widths instead of
    /// re-evaluating an echoed sizing. Stops once the cost reaches the
    /// target, or after the iteration budget.
    pub fn run_phase_d(&mut self) -> Result<(), WorkflowError> {
        let t0 = Instant::now();
        let budget = self.config.budgets.phase_d;
        let target = self.config.budgets.phase_d_target;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x9D_1CE5);
        let mut iterations = 0;
        let mut best = f64::INFINITY;

        for i in 1..=budget {
            iterations = i;
            let rec = self.evaluate_current("D");
            best = best.min(rec.j());
            if rec.j() <= target || i == budget || self.state.mandatory.is_empty() {
                break;
            }

            let ctx = self.ctx();
            if let AgentResponse::Review { advice, .. } =
                self.agent(AgentRole::SpecsReviewer, &ctx)?
            {
                self.state.advice = Some(advice);
            }

            let ctx = self.ctx();
            let mut next = self.proposal(AgentRole::InferencingSizer, &ctx)?;
            let current = self.state.current.as_ref().expect("point set in phase B");
            if detect_deadloop(current, &next) {
                next = perturb_widths(
                    &next,
                    &self.config.ranges,
                    &self.state.groups,
                    "w",
                    &mut rng,
                );
            }
            self.state.current = Some(next);
        }
        self.state.advice = None;

        self.state.outcomes.push(PhaseOutcome {
            phase: "D".into(),
            iterations,
            wall_ms: t0.elapsed().as_millis() as u64,
            best_j: (best.is_finite()).then_some(best),
            note: format!("target {target}"),
        });
        Ok(())
    }

    /// Ask the advisor for seeds and resolve them against the history;
    /// fall back to the pure selection when nothing resolves.
    fn seeds(&mut self) -> Result<Vec<EvalRecord>, WorkflowError> {
        let k = self.config.budgets.seed_count;
        if self.state.history.is_empty() {
            return Ok(Vec::new());
        }
        let ctx = self.ctx();
        let AgentResponse::Seeds(maps) = self.agent(AgentRole::AdvisorReviewer, &ctx)? else {
            return Err(WorkflowError::InvalidArtifact {
                role: AgentRole::AdvisorReviewer,
                detail: "expected seed candidates".into(),
            });
        };
        let mut chosen: Vec<EvalRecord> = Vec::new();
        for map in maps.into_iter().take(k) {
            let point: DesignPoint = map.into_iter().collect();
            let found = self
                .state
                .history
                .iter()
                .find(|r| r.point == point)
                .cloned();
            if let Some(rec) = found {
                if !chosen.iter().any(|c| c.point == rec.point) {
                    chosen.push(rec);
                }
            }
        }
        if chosen.is_empty() {
            chosen = select_seeds(&self.state.history, k);
        }
        Ok(chosen)
    }

    /// Optimizer handoff, sensitivity analysis, and explanation rendering.
    pub fn run_phase_e(&mut self) -> Result<(), WorkflowError> {
        let t0 = Instant::now();
        let seeds = self.seeds()?;

        let opt_config = OptimizeConfig {
            workers: self.config.budgets.workers,
            stage1_budget: self.config.budgets.optimizer_stage1,
            stage1_target: self.config.budgets.phase_d_target,
            stage2_budget: self.config.budgets.optimizer_stage2,
            span_ratio: self.config.budgets.span_ratio,
            seed: self.config.seed,
            phase_label: "E".into(),
            ..OptimizeConfig::default()
        };
        let objective = SimObjective {
            backend: self.backend,
            template: &self.template,
            ranges: &self.config.ranges,
            specs: &self.config.specs,
        };
        let outcome = optimize(
            &objective,
            &seeds,
            &self.config.ranges,
            &self.state.groups,
            &opt_config,
        )?;

        let offset = self.state.evals;
        for mut rec in outcome.history {
            rec.iteration += offset;
            self.state.history.push(rec);
        }
        self.state.evals += outcome.evaluations;

        let best = self
            .state
            .history
            .iter()
            .min_by(|a, b| a.j().total_cmp(&b.j()).then(a.iteration.cmp(&b.iteration)))
            .cloned()
            .ok_or_else(|| WorkflowError::Report("no evaluations recorded".into()))?;
        // Optimizer records carry no measurements; re-measure the winner once
        // so the report can show spec compliance.
        let best_meas = match best.measurements {
            Some(m) => Some(m),
            None => {
                let objective = SimObjective {
                    backend: self.backend,
                    template: &self.template,
                    ranges: &self.config.ranges,
                    specs: &self.config.specs,
                };
                objective.eval(&best.point).1
            }
        };
        self.state.best = Some(best.clone());
        self.state.best_measurements = best_meas;
        self.state.current = Some(best.point.clone());

        let sens_config = SensitivityConfig {
            fit: crate::exturbo::FitConfig {
                seed: self.config.seed,
                ..crate::exturbo::FitConfig::default()
            },
            ..SensitivityConfig::default()
        };
        let report = sensitivity(
            &self.state.history,
            &self.config.ranges,
            &self.state.groups,
            &sens_config,
        )?;
        self.state.classes = classify(&report);
        self.state.sensitivity = Some(report);

        let ctx = self.ctx();
        let AgentResponse::Explanations(explanations) =
            self.agent(AgentRole::EquippedSizer, &ctx)?
        else {
            return Err(WorkflowError::InvalidArtifact {
                role: AgentRole::EquippedSizer,
                detail: "expected parameter explanations".into(),
            });
        };
        self.state.explanations = explanations;

        self.state.outcomes.push(PhaseOutcome {
            phase: "E".into(),
            iterations: outcome.evaluations,
            wall_ms: t0.elapsed().as_millis() as u64,
            best_j: Some(best.j()),
            note: format!("{} warm seeds", seeds.len()),
        });
        Ok(())
    }

    /// B -> C -> D -> E, then assemble the final report.
    pub fn run_all(&mut self) -> Result<FinalReport, WorkflowError> {
        self.run_phase_b()?;
        self.run_phase_c()?;
        self.run_phase_d()?;
        self.run_phase_e()?;
        report::assemble(self)
    }
}
