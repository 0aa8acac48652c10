//! Run-directory layout. A finished run leaves behind everything needed to
//! audit or regenerate it:
//!
//! ```text
//! <dir>/config.toml         exact configuration text the run executed
//! <dir>/transcript.json     every agent prompt/response, in call order
//! <dir>/history.jsonl       one evaluation record per line, iteration order
//! <dir>/report.md           rendered sign-off document
//! <dir>/report_data.json    structured report; report.md regenerates from it
//! <dir>/netlists/eval_NNNNN.sp   concrete netlist of every evaluation
//! ```

use std::path::{Path, PathBuf};

use crate::record::{from_history_text, to_history_text, EvalRecord};

use super::{FinalReport, Workflow, WorkflowError};

pub const CONFIG_FILE: &str = "config.toml";
pub const TRANSCRIPT_FILE: &str = "transcript.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const REPORT_FILE: &str = "report.md";
pub const REPORT_DATA_FILE: &str = "report_data.json";
pub const NETLIST_DIR: &str = "netlists";

/// Write the complete run directory. Netlists are re-instantiated from the
/// recorded sizings, so this touches no simulator.
pub fn persist_run(
    wf: &Workflow,
    report: &FinalReport,
    raw_config: &str,
    dir: &Path,
) -> Result<(), WorkflowError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(CONFIG_FILE), raw_config)?;
    std::fs::write(dir.join(TRANSCRIPT_FILE), wf.state.transcript.to_json())?;
    std::fs::write(dir.join(HISTORY_FILE), to_history_text(&wf.state.history))?;
    std::fs::write(dir.join(REPORT_DATA_FILE), report.to_json())?;
    std::fs::write(dir.join(REPORT_FILE), super::render_report(report))?;

    let net_dir = dir.join(NETLIST_DIR);
    std::fs::create_dir_all(&net_dir)?;
    for rec in &wf.state.history {
        let text = wf.template.instantiate(&rec.point, &wf.config.ranges)?;
        std::fs::write(netlist_path(&net_dir, rec.iteration), text)?;
    }
    Ok(())
}

pub fn netlist_path(net_dir: &Path, iteration: usize) -> PathBuf {
    net_dir.join(format!("eval_{iteration:05}.sp"))
}

pub fn load_report(dir: &Path) -> Result<FinalReport, WorkflowError> {
    let path = dir.join(REPORT_DATA_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        WorkflowError::Config(format!("cannot read {}: {e}", path.display()))
    })?;
    FinalReport::from_json(&text)
        .map_err(|e| WorkflowError::Report(format!("corrupt {}: {e}", path.display())))
}

pub fn load_history(dir: &Path) -> Result<Vec<EvalRecord>, WorkflowError> {
    let path = dir.join(HISTORY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        WorkflowError::Config(format!("cannot read {}: {e}", path.display()))
    })?;
    from_history_text(&text)
        .map_err(|e| WorkflowError::Report(format!("corrupt {}: {e}", path.display())))
}
