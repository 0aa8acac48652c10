//! Command-line front end for the sizing workflow.
//!
//! Exit codes:
//! - 0: command succeeded (for `size`/`optimize`: run finished with J <= 1)
//! - 1: run finished but the result misses spec (J > 1), or a cost check
//!   found mismatched values
//! - 2: configuration problem (bad flags, unreadable/invalid config or input)
//! - 3: transport or simulator backend failure

use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ampsizer::agents::transport::{EndpointTransport, ScriptedTransport, Transport};
use ampsizer::record;
use ampsizer::sim::ngspice::NgspiceBackend;
use ampsizer::sim::surrogate::TwoStageSurrogate;
use ampsizer::sim::SimBackend;
use ampsizer::workflow::persist;
use ampsizer::workflow::{
    render_report, BackendChoice, RunConfig, TransportChoice, Workflow, WorkflowError,
};

mod bench;
mod check;

#[derive(Parser)]
#[command(
    name = "ampsizer",
    about = "Agent-guided analog amplifier sizing with a warm-started trust-region optimizer",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Run the structural-analysis phase only and print its artifacts.
    ///
    /// No simulations are run and no files are written; this is a fast
    /// preview of what the sizing run would start from (circuit analysis,
    /// matching groups, DC goals, initial sizing).
    Analyze(RunArgs),

    /// Run the full sizing workflow and write a run directory.
    ///
    /// Phases: structural analysis, DC-point adjustment, spec-driven
    /// proposal iterations, then the trust-region optimizer with the
    /// sensitivity sign-off report.
    Size(RunArgs),

    /// Run only the optimizer stage, warm-started from a history file.
    ///
    /// Takes evaluation records produced by an earlier run (history.jsonl),
    /// picks seeds from them, and continues into optimization plus the
    /// final report. The structural-analysis phase still runs so matching
    /// groups and circuit context are available; the DC and proposal
    /// phases are skipped.
    Optimize(OptimizeArgs),

    /// Re-render the report of a finished run directory to stdout.
    ///
    /// Reads only report_data.json; no simulations are re-run. With
    /// --write, report.md in the run directory is refreshed too.
    Report(ReportArgs),

    /// Benchmark the optimizer on synthetic objectives (no circuits).
    ///
    /// Prints the search-space volume ratio of seed-local boxes and a
    /// warm-vs-cold comparison on a narrow-basin objective: median
    /// evaluations until a feasible (J <= 1) point over paired runs.
    Bench(bench::BenchArgs),

    /// Evaluate the scalar cost for measurement rows in a file.
    ///
    /// The file carries a [specs] section (same schema as a run config)
    /// and [[cases]] rows of measured metrics; each case may pin an
    /// expected J and tolerance. Exits 1 if any expectation is missed.
    CheckCost(check::CheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,

    #[command(flatten)]
    overrides: Overrides,

    /// Output directory for run artifacts (default: config out_dir,
    /// else runs/<circuit name>). Ignored by `analyze`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,

    /// History file (history.jsonl of a previous run) to seed from.
    #[arg(long)]
    seeds: PathBuf,

    #[command(flatten)]
    overrides: Overrides,

    /// Output directory for run artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory of a finished run.
    run_dir: PathBuf,

    /// Also rewrite report.md inside the run directory.
    #[arg(long)]
    write: bool,
}

/// Flags that override the corresponding [run] config fields.
#[derive(Args)]
struct Overrides {
    /// Random seed for the whole run.
    #[arg(long)]
    seed: Option<u64>,

    /// Evaluation backend.
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,

    /// Agent transport.
    #[arg(long, value_enum)]
    transport: Option<TransportArg>,
}

#[derive(Copy, Clone, ValueEnum)]
enum BackendArg {
    Surrogate,
    Ngspice,
}

#[derive(Copy, Clone, ValueEnum)]
enum TransportArg {
    Scripted,
    Endpoint,
}

impl Overrides {
    fn apply(&self, config: &mut RunConfig) {
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(backend) = self.backend {
            config.backend = match backend {
                BackendArg::Surrogate => BackendChoice::Surrogate,
                BackendArg::Ngspice => BackendChoice::Ngspice,
            };
        }
        if let Some(transport) = self.transport {
            config.transport = match transport {
                TransportArg::Scripted => TransportChoice::Scripted,
                TransportArg::Endpoint => TransportChoice::Endpoint,
            };
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Commands::Analyze(args) => run_analyze(args),
        Commands::Size(args) => run_size(args),
        Commands::Optimize(args) => run_optimize(args),
        Commands::Report(args) => run_report(args),
        Commands::Bench(args) => bench::run(args),
        Commands::CheckCost(args) => check::run(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn build_backend(config: &RunConfig) -> Result<Box<dyn SimBackend>, WorkflowError> {
    match config.backend {
        BackendChoice::Surrogate => Ok(Box::new(TwoStageSurrogate)),
        BackendChoice::Ngspice => NgspiceBackend::from_env()
            .map(|b| Box::new(b) as Box<dyn SimBackend>)
            .ok_or_else(|| {
                WorkflowError::Io(io::Error::new(
                    io::ErrorKind::NotFound,
                    "ngspice binary not found; set AMPSIZER_NGSPICE or add ngspice to PATH",
                ))
            }),
    }
}

fn build_transport(config: &RunConfig) -> Result<Box<dyn Transport>, WorkflowError> {
    match config.transport {
        TransportChoice::Scripted => Ok(Box::new(ScriptedTransport::new())),
        TransportChoice::Endpoint => EndpointTransport::new(config.endpoint.clone())
            .map(|t| Box::new(t) as Box<dyn Transport>)
            .map_err(|e| WorkflowError::Io(io::Error::other(e.to_string()))),
    }
}

fn load_config(args_config: &PathBuf, overrides: &Overrides) -> Result<(RunConfig, String), WorkflowError> {
    let (mut config, raw) = RunConfig::from_path(args_config)?;
    overrides.apply(&mut config);
    Ok((config, raw))
}

fn out_dir_for(config: &RunConfig, flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&config.circuit_name))
}

fn run_analyze(args: RunArgs) -> Result<u8, WorkflowError> {
    let (config, _) = load_config(&args.config, &args.overrides)?;
    // The analysis phase never simulates, so the backend choice is moot;
    // use the surrogate to avoid requiring an ngspice install for previews.
    let backend = TwoStageSurrogate;
    let transport = build_transport(&config)?;
    let mut wf = Workflow::new(&config, &backend, transport.as_ref())?;
    wf.run_phase_b()?;

    println!("circuit: {}", config.circuit_name);
    println!("structure: {}", wf.state.graph_summary);
    println!();
    if let Some(analysis) = &wf.state.analysis {
        println!("analysis:\n{}", indent(analysis));
    }
    println!("matching groups:");
    if wf.state.groups.0.is_empty() {
        println!("  (none)");
    }
    for g in &wf.state.groups.0 {
        println!("  {}: {}", g.name, g.members.join(" = "));
    }
    if let Some(goals) = &wf.state.goals {
        println!("dc goals: vout target {:.3} V", goals.vout_target);
        for (device, g) in &goals.devices {
            println!(
                "  {device}: {} at Vov {:.3} V, Vds {:.3} V, Id {:.1} uA",
                g.region, g.vov, g.vds, g.id_ua
            );
        }
    }
    match &wf.state.current {
        Some(p) if !p.is_empty() => println!("initial sizing: {p}"),
        _ => println!("initial sizing: (nothing to size; all parameters fixed)"),
    }
    println!();
    println!(
        "free parameters: {} of {} placeholders",
        wf.state.mandatory.len(),
        wf.template.placeholders().len()
    );
    println!("agent calls: {}", transport.calls());
    Ok(0)
}

fn run_size(args: RunArgs) -> Result<u8, WorkflowError> {
    let (config, raw) = load_config(&args.config, &args.overrides)?;
    let backend = build_backend(&config)?;
    let transport = build_transport(&config)?;
    let mut wf = Workflow::new(&config, backend.as_ref(), transport.as_ref())?;
    let report = wf.run_all()?;

    let dir = out_dir_for(&config, &args.out);
    persist::persist_run(&wf, &report, &raw, &dir)?;
    print_run_summary(&wf, &report, &dir);
    Ok(if report.best_j <= 1.0 { 0 } else { 1 })
}

fn run_optimize(args: OptimizeArgs) -> Result<u8, WorkflowError> {
    let (config, raw) = load_config(&args.config, &args.overrides)?;
    let seed_text = std::fs::read_to_string(&args.seeds).map_err(|e| {
        WorkflowError::Config(format!("cannot read seed history {}: {e}", args.seeds.display()))
    })?;
    let records = record::from_history_text(&seed_text)
        .map_err(|e| WorkflowError::Config(format!("seed history: {e}")))?;
    if records.is_empty() {
        return Err(WorkflowError::Config(
            "seed history contains no evaluation records".into(),
        ));
    }

    let backend = build_backend(&config)?;
    let transport = build_transport(&config)?;
    let mut wf = Workflow::new(&config, backend.as_ref(), transport.as_ref())?;
    // Structure first (matching groups, circuit context), then continue the
    // numbering where the seed run left off.
    wf.run_phase_b()?;
    wf.state.evals = records.iter().map(|r| r.iteration).max().unwrap_or(0);
    wf.state.history = records;
    wf.run_phase_e()?;
    let report = ampsizer::workflow::assemble_report(&wf)?;

    let dir = out_dir_for(&config, &args.out);
    persist::persist_run(&wf, &report, &raw, &dir)?;
    print_run_summary(&wf, &report, &dir);
    Ok(if report.best_j <= 1.0 { 0 } else { 1 })
}

fn run_report(args: ReportArgs) -> Result<u8, WorkflowError> {
    let report = persist::load_report(&args.run_dir)?;
    let doc = render_report(&report);
    print!("{doc}");
    if args.write {
        std::fs::write(args.run_dir.join(persist::REPORT_FILE), &doc)?;
    }
    Ok(0)
}

fn print_run_summary(wf: &Workflow, report: &ampsizer::workflow::FinalReport, dir: &std::path::Path) {
    for p in &report.phases {
        let best = p
            .best_j
            .map(|j| format!("best J {j:.4}"))
            .unwrap_or_else(|| "no evaluations".into());
        println!("phase {}: {} iterations, {best} ({})", p.phase, p.iterations, p.note);
    }
    let mode = match report.mode {
        ampsizer::Mode::Optimization => "optimization",
        ampsizer::Mode::Feasibility => "feasibility",
    };
    println!(
        "best J {:.4} ({mode} mode) at evaluation {} of {}",
        report.best_j, report.best_iteration, report.total_evaluations
    );
    println!("agent calls: {}", wf.transport.calls());
    println!("run directory: {}", dir.display());
}

fn indent(text: &str) -> String {
    text.lines()
        .map(|l| format!("  {l}"))
        .collect::<Vec<_>>()
        .join("\n")
}
