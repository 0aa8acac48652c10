//! Batch-mode ngspice adapter.
//!
//! The cell netlist is wrapped in generated testbench decks — level-1
//! models, bias sources, a DC-stabilized open-loop AC bench and a
//! unity-feedback transient bench — and each deck is run through
//! `ngspice -b`. Deck construction and output parsing are pure functions so
//! they stay testable on machines without the simulator; the binary is
//! located through the `AMPSIZER_NGSPICE` environment variable or `PATH`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use regex::Regex;

use super::{DcResult, RawMeasurements, SimBackend, SimError};
use crate::netlist::{parse_devices, parse_spice_number, DeviceKind};

pub const BINARY_ENV: &str = "AMPSIZER_NGSPICE";

/// Input common-mode bias for the testbenches.
const VCM: f64 = 0.6;
/// Output headroom band, mirroring the surrogate's bias check.
const VOUT_BAND: (f64, f64) = (0.15, 0.85);

const MODELS: &str = "\
.model nch nmos (level=1 kp=400u vto=0.4 lambda=0.02)
.model pch pmos (level=1 kp=360u vto=0.4 lambda=0.03)
";

/// Unity-feedback operating-point deck: a zero-volt source closes the loop,
/// so the output settles to the input common mode plus offset.
pub fn build_dc_deck(cell: &str) -> String {
    format!(
        "* operating point bench\n{cell}\nVIP inp 0 {VCM}\nVFB inn out 0\n{MODELS}\
.control\nset filetype=ascii\nop\nprint v(out)\nprint i(vdd)\n.endc\n.end\n"
    )
}

/// Open-loop AC bench. A 1 GH inductor closes the loop at DC only and a
/// 1 GF capacitor couples the stimulus at AC only, giving the true
/// open-loop transfer from a correct operating point.
pub fn build_ac_deck(cell: &str) -> String {
    format!(
        "* open-loop ac bench\n{cell}\nVIP inp 0 {VCM}\nVAC acin 0 dc {VCM} ac 1\n\
LSTAB inn out 1000meg\nCSTAB inn acin 1000meg\n{MODELS}\
.control\nset filetype=ascii\nset units=degrees\nop\nac dec 50 1 10g\n\
meas ac dcgain find vdb(out) at=10\nmeas ac fu when vdb(out)=0\n\
meas ac pm find vp(out) when vdb(out)=0\n.endc\n.end\n"
    )
}

/// Unity-feedback transient bench for distortion and offset.
pub fn build_tran_deck(cell: &str) -> String {
    format!(
        "* unity-gain transient bench\n{cell}\nVIP inp 0 dc {VCM} sin({VCM} 0.1 10k)\n\
VFB inn out 0\n{MODELS}\
.control\nset filetype=ascii\nop\nprint v(out)\ntran 0.2u 500u\nfourier 10k v(out)\n.endc\n.end\n"
    )
}

fn meas_re(name: &str) -> Regex {
    Regex::new(&format!(
        r"(?mi)^\s*{}\s*=\s*([-+]?[0-9][0-9.]*(?:[eE][-+]?[0-9]+)?)",
        regex::escape(name)
    ))
    .unwrap()
}

/// Extract `name = value` from batch output (covers both `print` and
/// `meas` result lines).
pub fn parse_value(output: &str, name: &str) -> Option<f64> {
    meas_re(name)
        .captures(output)
        .and_then(|c| c[1].parse().ok())
}

/// Extract the THD percentage from a `fourier` block and convert to dB.
pub fn parse_thd_db(output: &str) -> Option<f64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?i)THD:?\s*=?\s*([0-9.]+(?:[eE][-+]?[0-9]+)?)\s*%").unwrap()
    });
    let pct: f64 = re.captures(output)?.get(1)?.as_str().parse().ok()?;
    if pct <= 0.0 {
        return None;
    }
    Some(20.0 * (pct / 100.0).log10())
}

/// Reference current of the cell's `IB` source, for excluding the bias
/// branch from the reported power draw.
fn bias_current(cell: &str) -> f64 {
    parse_devices(cell)
        .ok()
        .and_then(|cards| {
            cards
                .iter()
                .find(|c| c.kind == DeviceKind::ISource && c.name.eq_ignore_ascii_case("IB"))
                .and_then(|c| c.tail.first().cloned())
        })
        .and_then(|v| parse_spice_number(&v).ok())
        .map(f64::abs)
        .unwrap_or(0.0)
}

fn supply_voltage(cell: &str) -> f64 {
    parse_devices(cell)
        .ok()
        .and_then(|cards| {
            cards
                .iter()
                .find(|c| c.kind == DeviceKind::VSource && c.name.eq_ignore_ascii_case("VDD"))
                .and_then(|c| c.tail.first().cloned())
        })
        .and_then(|v| parse_spice_number(&v).ok())
        .unwrap_or(1.2)
}

/// ngspice driver with an explicit binary path.
pub struct NgspiceBackend {
    binary: PathBuf,
}

impl NgspiceBackend {
    pub fn new(binary: impl Into<PathBuf>) -> Self {
        Self {
            binary: binary.into(),
        }
    }

    /// Locate the simulator via `AMPSIZER_NGSPICE`, falling back to a PATH
    /// search. Returns `None` when no binary exists, letting callers skip
    /// simulator-backed paths cleanly.
    pub fn from_env() -> Option<Self> {
        if let Ok(path) = std::env::var(BINARY_ENV) {
            let p = PathBuf::from(path);
            return p.is_file().then(|| Self::new(p));
        }
        let path_var = std::env::var_os("PATH")?;
        for dir in std::env::split_paths(&path_var) {
            let candidate = dir.join("ngspice");
            if candidate.is_file() {
                return Some(Self::new(candidate));
            }
        }
        None
    }

    pub fn binary(&self) -> &Path {
        &self.binary
    }

    fn run_deck(&self, deck: &str) -> Result<String, SimError> {
        let dir = tempfile::tempdir()?;
        let cir = dir.path().join("bench.cir");
        let mut f = std::fs::File::create(&cir)?;
        f.write_all(deck.as_bytes())?;
        drop(f);
        let out = Command::new(&self.binary)
            .arg("-b")
            .arg(&cir)
            .current_dir(dir.path())
            .output()
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    SimError::BinaryNotFound(self.binary.display().to_string())
                } else {
                    SimError::Io(e)
                }
            })?;
        let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
        let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
        if !out.status.success() {
            return Err(SimError::SimulatorFailed {
                status: out.status.to_string(),
                stderr: stderr.chars().take(500).collect(),
            });
        }
        Ok(stdout + "\n" + &stderr)
    }
}

impl SimBackend for NgspiceBackend {
    fn name(&self) -> &str {
        "ngspice"
    }

    fn run_dc(&self, netlist: &str) -> Result<DcResult, SimError> {
        let output = self.run_deck(&build_dc_deck(netlist))?;
        let Some(vout) = parse_value(&output, "v(out)") else {
            return Ok(DcResult::no_convergence("no operating point in output"));
        };
        let vdd = supply_voltage(netlist);
        let (lo, hi) = (VOUT_BAND.0 * vdd, VOUT_BAND.1 * vdd);
        Ok(if vout < lo || vout > hi {
            DcResult::bad_bias(vout, format!("output at {vout:.3} V outside [{lo:.2}, {hi:.2}]"))
        } else {
            DcResult::good(vout)
        })
    }

    fn run_full(&self, netlist: &str) -> Result<RawMeasurements, SimError> {
        let ac_out = self.run_deck(&build_ac_deck(netlist))?;
        let tran_out = self.run_deck(&build_tran_deck(netlist))?;

        let gain_db = parse_value(&ac_out, "dcgain");
        let ugbw_hz = parse_value(&ac_out, "fu").filter(|f| *f > 0.0);
        // The AC bench drives the inverting input, so the measured phase at
        // unity gain is the phase margin directly (180 deg at DC, falling).
        let pm_deg = parse_value(&ac_out, "pm").map(|p| p.rem_euclid(360.0));
        let thd_db = parse_thd_db(&tran_out);

        let vdd = supply_voltage(netlist);
        let vout = parse_value(&tran_out, "v(out)");
        let offset_v = vout.map(|v| (v - VCM).abs());
        // i(vdd) is the current *into* the positive node of the supply
        // source, i.e. minus the total draw; the bias reference branch is
        // not charged to the cell.
        let power_w = parse_value(&tran_out, "i(vdd)")
            .map(|i| ((-i) - bias_current(netlist)).max(0.0) * vdd);

        Ok(RawMeasurements {
            gain_db,
            ugbw_hz,
            pm_deg,
            thd_db,
            offset_v,
            power_w,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CELL: &str = "* cell\nVDD vdd 0 1.2\nIB vdd nbias 20u\nM8 nbias nbias 0 0 nch W=2.5u L=0.125u\n";

    #[test]
    fn decks_embed_cell_and_analyses() {
        let dc = build_dc_deck(CELL);
        assert!(dc.contains("M8 nbias nbias"));
        assert!(dc.contains("op\n"));
        assert!(dc.contains("VFB inn out 0"));
        let ac = build_ac_deck(CELL);
        assert!(ac.contains("ac dec 50 1 10g"));
        assert!(ac.contains("LSTAB inn out 1000meg"));
        assert!(ac.contains("meas ac fu when vdb(out)=0"));
        let tran = build_tran_deck(CELL);
        assert!(tran.contains("fourier 10k v(out)"));
        assert!(tran.contains("sin(0.6 0.1 10k)"));
    }

    #[test]
    fn decks_include_device_models() {
        for deck in [build_dc_deck(CELL), build_ac_deck(CELL), build_tran_deck(CELL)] {
            assert!(deck.contains(".model nch nmos"));
            assert!(deck.contains(".model pch pmos"));
            assert!(deck.trim_end().ends_with(".end"));
        }
    }

    #[test]
    fn parses_print_and_meas_lines() {
        let output = "\
No. of Data Rows : 1
v(out) = 5.957000e-01
i(vdd) = -5.12e-05
dcgain              =  1.161000e+02
fu                  =  3.082341e+06 targ=...
pm                  =  6.47e+01
";
        assert_eq!(parse_value(output, "v(out)").unwrap(), 0.5957);
        assert_eq!(parse_value(output, "i(vdd)").unwrap(), -5.12e-5);
        assert_eq!(parse_value(output, "dcgain").unwrap(), 116.1);
        assert_eq!(parse_value(output, "fu").unwrap(), 3.082341e6);
        assert_eq!(parse_value(output, "pm").unwrap(), 64.7);
        assert_eq!(parse_value(output, "nothere"), None);
    }

    #[test]
    fn parses_fourier_thd() {
        let output = "\
Fourier analysis for v(out):
  No. Harmonics: 10, THD: 0.0316228 %, Gridsize: 200
";
        let thd = parse_thd_db(output).unwrap();
        assert!((thd - (-70.0)).abs() < 0.01, "thd = {thd}");
        assert_eq!(parse_thd_db("no fourier here"), None);
    }

    #[test]
    fn bias_branch_extraction() {
        assert!((bias_current(CELL) - 20e-6).abs() < 1e-18);
        assert_eq!(supply_voltage(CELL), 1.2);
        assert_eq!(bias_current("* empty\n"), 0.0);
    }

    #[test]
    fn missing_binary_is_a_clean_error() {
        let backend = NgspiceBackend::new("/definitely/not/here/ngspice");
        match backend.run_dc(CELL) {
            Err(SimError::BinaryNotFound(_)) | Err(SimError::Io(_)) => {}
            other => panic!("expected missing-binary error, got {other:?}"),
        }
    }
}
