//! Simulation backends and the measurement harness.
//!
//! A backend consumes concrete netlist text and produces raw SI-unit
//! results. The harness runs the cheap DC operating-point check first and
//! skips the expensive analyses when the bias is already broken; the cost
//! function then sees a non-functional measurement set and applies its
//! sanity penalty. Backend errors (missing binary, unparseable output) are
//! infrastructure failures and propagate as `Err` — they are never folded
//! into a cost value.

pub mod ngspice;
pub mod surrogate;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{Measurements, SpecSet};
use crate::netlist::{si_suffix, suffix_multiplier};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("netlist is missing required device `{0}`")]
    MissingDevice(String),
    #[error("device `{device}`: {detail}")]
    BadDeviceValue { device: String, detail: String },
    #[error("netlist error: {0}")]
    Netlist(#[from] crate::netlist::NetlistError),
    #[error("simulator binary not found: {0}")]
    BinaryNotFound(String),
    #[error("simulator i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("simulator exited with {status}: {stderr}")]
    SimulatorFailed { status: String, stderr: String },
    #[error("cannot parse simulator output: {0}")]
    OutputParse(String),
}

/// Result of the DC operating-point stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcResult {
    /// The solver produced an operating point at all.
    pub converged: bool,
    /// The operating point is a usable bias (devices saturated, output
    /// inside its headroom band).
    pub bias_ok: bool,
    pub vout_dc: Option<f64>,
    /// Short human-readable reason when `bias_ok` is false.
    pub detail: Option<String>,
}

impl DcResult {
    pub fn good(vout_dc: f64) -> Self {
        Self {
            converged: true,
            bias_ok: true,
            vout_dc: Some(vout_dc),
            detail: None,
        }
    }

    pub fn bad_bias(vout_dc: f64, detail: impl Into<String>) -> Self {
        Self {
            converged: true,
            bias_ok: false,
            vout_dc: Some(vout_dc),
            detail: Some(detail.into()),
        }
    }

    pub fn no_convergence(detail: impl Into<String>) -> Self {
        Self {
            converged: false,
            bias_ok: false,
            vout_dc: None,
            detail: Some(detail.into()),
        }
    }
}

/// Backend results in SI units. `None` marks a quantity the analysis could
/// not extract.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RawMeasurements {
    pub gain_db: Option<f64>,
    pub ugbw_hz: Option<f64>,
    pub pm_deg: Option<f64>,
    pub thd_db: Option<f64>,
    pub offset_v: Option<f64>,
    pub power_w: Option<f64>,
}

/// A circuit simulator (or stand-in) able to evaluate netlist text.
pub trait SimBackend: Send + Sync {
    fn name(&self) -> &str;
    /// Operating-point analysis plus bias sanity checks.
    fn run_dc(&self, netlist: &str) -> Result<DcResult, SimError>;
    /// The full analysis suite (AC, transient, mismatch). Only called after
    /// a successful DC stage.
    fn run_full(&self, netlist: &str) -> Result<RawMeasurements, SimError>;
}

/// Scale factor that converts watts into the spec set's power unit.
fn power_scale(specs: &SpecSet) -> f64 {
    specs
        .power_unit
        .as_deref()
        .and_then(si_suffix)
        .and_then(suffix_multiplier)
        .unwrap_or(1.0)
}

/// Convert raw SI results into spec-unit measurements.
///
/// A missing unity-gain crossing is reported as 0 MHz rather than absent:
/// it is a real, maximally-bad bandwidth, and mapping it to the sanity
/// penalty would hide how close the design is on its other metrics.
pub fn to_measurements(raw: &RawMeasurements, specs: &SpecSet, dc_ok: bool) -> Measurements {
    Measurements {
        gain_db: raw.gain_db,
        ugbw_mhz: Some(raw.ugbw_hz.map_or(0.0, |f| f / 1e6)),
        pm_deg: raw.pm_deg,
        thd_db: raw.thd_db,
        offset_mv: raw.offset_v.map(|v| v * 1e3),
        power: raw.power_w.map(|p| p / power_scale(specs)),
        dc_ok,
        converged: true,
    }
}

/// Two-stage evaluation: DC first, full suite only if the bias holds up.
pub fn measure(
    backend: &dyn SimBackend,
    netlist: &str,
    specs: &SpecSet,
) -> Result<Measurements, SimError> {
    let dc = backend.run_dc(netlist)?;
    if !dc.converged {
        return Ok(Measurements::failed());
    }
    if !dc.bias_ok {
        return Ok(Measurements {
            converged: true,
            dc_ok: false,
            ..Measurements::default()
        });
    }
    let raw = backend.run_full(netlist)?;
    Ok(to_measurements(&raw, specs, true))
}

/// Wrapper that counts backend invocations; evaluation budgets in tests are
/// asserted against these counters.
pub struct CountingBackend<B> {
    inner: B,
    dc_calls: AtomicUsize,
    full_calls: AtomicUsize,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            dc_calls: AtomicUsize::new(0),
            full_calls: AtomicUsize::new(0),
        }
    }

    pub fn dc_calls(&self) -> usize {
        self.dc_calls.load(Ordering::SeqCst)
    }

    pub fn full_calls(&self) -> usize {
        self.full_calls.load(Ordering::SeqCst)
    }

    /// Number of design evaluations started (one DC run each).
    pub fn evaluations(&self) -> usize {
        self.dc_calls()
    }
}

impl<B: SimBackend> SimBackend for CountingBackend<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn run_dc(&self, netlist: &str) -> Result<DcResult, SimError> {
        self.dc_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.run_dc(netlist)
    }

    fn run_full(&self, netlist: &str) -> Result<RawMeasurements, SimError> {
        self.full_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.run_full(netlist)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{MetricKind, SpecItem};

    struct Fixed {
        dc: DcResult,
        raw: RawMeasurements,
    }

    impl SimBackend for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn run_dc(&self, _n: &str) -> Result<DcResult, SimError> {
            Ok(self.dc.clone())
        }
        fn run_full(&self, _n: &str) -> Result<RawMeasurements, SimError> {
            Ok(self.raw)
        }
    }

    fn uw_specs() -> SpecSet {
        SpecSet {
            items: vec![SpecItem::new(MetricKind::Gain, 54.0, 1.0)],
            p_max: 85.0,
            p_min: None,
            sanity_penalty: 100.0,
            power_unit: Some("uW".into()),
        }
    }

    #[test]
    fn unit_conversion_to_spec_units() {
        let raw = RawMeasurements {
            gain_db: Some(60.0),
            ugbw_hz: Some(4.93e6),
            pm_deg: Some(64.0),
            thd_db: Some(-80.0),
            offset_v: Some(0.0012),
            power_w: Some(37.2e-6),
        };
        let m = to_measurements(&raw, &uw_specs(), true);
        assert_eq!(m.ugbw_mhz, Some(4.93));
        assert_eq!(m.offset_mv, Some(1.2));
        assert!((m.power.unwrap() - 37.2).abs() < 1e-9);
        assert!(m.converged && m.dc_ok);
    }

    #[test]
    fn missing_unity_crossing_maps_to_zero_bandwidth() {
        let raw = RawMeasurements {
            gain_db: Some(40.0),
            ugbw_hz: None,
            ..Default::default()
        };
        let m = to_measurements(&raw, &uw_specs(), true);
        assert_eq!(m.ugbw_mhz, Some(0.0));
    }

    #[test]
    fn bad_bias_skips_full_analysis() {
        let backend = CountingBackend::new(Fixed {
            dc: DcResult::bad_bias(1.19, "output at the rail"),
            raw: RawMeasurements::default(),
        });
        let m = measure(&backend, "* x\n", &uw_specs()).unwrap();
        assert!(m.converged);
        assert!(!m.dc_ok);
        assert_eq!(backend.dc_calls(), 1);
        assert_eq!(backend.full_calls(), 0);
    }

    #[test]
    fn non_convergence_reports_failure() {
        let backend = Fixed {
            dc: DcResult::no_convergence("singular matrix"),
            raw: RawMeasurements::default(),
        };
        let m = measure(&backend, "* x\n", &uw_specs()).unwrap();
        assert_eq!(m, Measurements::failed());
    }

    #[test]
    fn good_dc_runs_full_suite() {
        let backend = CountingBackend::new(Fixed {
            dc: DcResult::good(0.6),
            raw: RawMeasurements {
                gain_db: Some(70.0),
                ugbw_hz: Some(2e6),
                pm_deg: Some(65.0),
                thd_db: Some(-90.0),
                offset_v: Some(1e-4),
                power_w: Some(50e-6),
            },
        });
        let m = measure(&backend, "* x\n", &uw_specs()).unwrap();
        assert_eq!(backend.full_calls(), 1);
        assert_eq!(m.gain_db, Some(70.0));
    }
}
