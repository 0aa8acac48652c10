//! `check-cost`: recompute the scalar cost for measurement rows.
//!
//! Input file schema (TOML): a `[specs]` table identical to the one in a run
//! configuration, then `[[cases]]` rows carrying measured metric values.
//! Rows may pin an `expected` cost and a `tolerance`; the command exits 1 if
//! any recomputed cost misses its expectation. Rows without `expected` are
//! simply printed.

use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;

use ampsizer::workflow::{SpecsConfig, WorkflowError};
use ampsizer::{universal_cost, Measurements};

/// Tolerance applied when a case pins `expected` but no `tolerance`.
const DEFAULT_TOLERANCE: f64 = 0.002;

#[derive(Args)]
pub struct CheckArgs {
    /// Measurements file: [specs] plus [[cases]] rows.
    file: PathBuf,
}

#[derive(Debug, Deserialize)]
struct CheckFile {
    specs: SpecsConfig,
    #[serde(default)]
    cases: Vec<CheckCase>,
}

/// One measurement row. Metric fields share units with the spec targets
/// (dB, MHz, degrees, dB, mV, and the spec set's power unit). Omitted
/// metrics count as unmeasured; `converged`/`dc_ok` default to true and can
/// be set false to exercise the sanity penalty.
#[derive(Debug, Deserialize)]
struct CheckCase {
    name: String,
    gain: Option<f64>,
    ugbw: Option<f64>,
    pm: Option<f64>,
    thd: Option<f64>,
    offset: Option<f64>,
    power: Option<f64>,
    #[serde(default = "yes")]
    converged: bool,
    #[serde(default = "yes")]
    dc_ok: bool,
    expected: Option<f64>,
    tolerance: Option<f64>,
}

fn yes() -> bool {
    true
}

impl CheckCase {
    fn measurements(&self) -> Measurements {
        Measurements {
            gain_db: self.gain,
            ugbw_mhz: self.ugbw,
            pm_deg: self.pm,
            thd_db: self.thd,
            offset_mv: self.offset,
            power: self.power,
            dc_ok: self.dc_ok,
            converged: self.converged,
        }
    }
}

pub fn run(args: CheckArgs) -> Result<u8, WorkflowError> {
    let text = std::fs::read_to_string(&args.file).map_err(|e| {
        WorkflowError::Config(format!("cannot read {}: {e}", args.file.display()))
    })?;
    let file: CheckFile = toml::from_str(&text).map_err(|e| {
        WorkflowError::Config(format!("{}: {e}", args.file.display()))
    })?;
    let specs = file.specs.into_spec_set()?;
    if file.cases.is_empty() {
        return Err(WorkflowError::Config("file contains no [[cases]]".into()));
    }

    let width = file.cases.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut misses = 0usize;
    for case in &file.cases {
        let j = universal_cost(&case.measurements(), &specs).total;
        match case.expected {
            Some(expected) => {
                let tol = case.tolerance.unwrap_or(DEFAULT_TOLERANCE);
                let ok = (j - expected).abs() <= tol;
                if !ok {
                    misses += 1;
                }
                println!(
                    "{:width$}  J = {j:.3}  expected {expected:.3} +/- {tol}  {}",
                    case.name,
                    if ok { "pass" } else { "FAIL" },
                );
            }
            None => println!("{:width$}  J = {j:.3}", case.name),
        }
    }

    if misses > 0 {
        eprintln!("{misses} of {} cases missed their expected cost", file.cases.len());
        Ok(1)
    } else {
        Ok(0)
    }
}
