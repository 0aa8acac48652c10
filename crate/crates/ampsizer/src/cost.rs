//! Performance specifications and the universal cost function.
//!
//! The sizing problem is scalarized as
//!
//! ```text
//! J = P_meas / P_max + sum_i w_i * V_i(y_i, T_i) + sanity
//! ```
//!
//! where each `V_i` is a rectified (one-sided) violation of the metric's
//! target and `sanity` is a large constant penalty applied only when the
//! circuit is fundamentally broken (non-convergence, failed bias check,
//! near-zero gain). `J <= 1` means every specification is met and the search
//! transitions from chasing feasibility to minimizing power.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Penalty applied when fundamental functionality is compromised.
pub const DEFAULT_SANITY_PENALTY: f64 = 100.0;

/// Gain below this floor counts as "near-zero" and triggers the sanity
/// penalty: 3 dB separates any functioning amplifier from a broken one.
pub const NEAR_ZERO_GAIN_FLOOR_DB: f64 = 3.0;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("non-finite measurement: {0}")]
    NonFiniteValue(f64),
    #[error("non-finite measurement for {metric}: {value}")]
    NonFinite { metric: MetricKind, value: f64 },
    #[error("{metric} is a {expected}-bound metric, got {got}")]
    DirectionMismatch {
        metric: MetricKind,
        expected: Direction,
        got: Direction,
    },
    #[error("negative weight {weight} for {metric}")]
    NegativeWeight { metric: MetricKind, weight: f64 },
    #[error("duplicate spec item for {metric}")]
    DuplicateMetric { metric: MetricKind },
    #[error("p_max must be positive, got {0}")]
    NonPositivePowerBound(f64),
}

/// Which side of the target is compliant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Measured value must be at least the target (gain, UGBW, PM).
    #[serde(alias = "lowerbound", alias = "lb", alias = "min")]
    Lower,
    /// Measured value must be at most the target (THD, offset).
    #[serde(alias = "upperbound", alias = "ub", alias = "max")]
    Upper,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Direction::Lower => write!(f, "lower"),
            Direction::Upper => write!(f, "upper"),
        }
    }
}

/// The six optimized metrics. Power is handled separately through the
/// `P_meas / P_max` term, so it is not listed here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Gain,
    Ugbw,
    Pm,
    Thd,
    Offset,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::Gain,
        MetricKind::Ugbw,
        MetricKind::Pm,
        MetricKind::Thd,
        MetricKind::Offset,
    ];

    /// The direction is a fixed property of each metric.
    pub fn canonical_direction(self) -> Direction {
        match self {
            MetricKind::Gain | MetricKind::Ugbw | MetricKind::Pm => Direction::Lower,
            MetricKind::Thd | MetricKind::Offset => Direction::Upper,
        }
    }

    /// Natural unit used for targets, measurements and violation terms.
    pub fn unit(self) -> &'static str {
        match self {
            MetricKind::Gain => "dB",
            MetricKind::Ugbw => "MHz",
            MetricKind::Pm => "deg",
            MetricKind::Thd => "dB",
            MetricKind::Offset => "mV",
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricKind::Gain => write!(f, "gain"),
            MetricKind::Ugbw => write!(f, "ugbw"),
            MetricKind::Pm => write!(f, "pm"),
            MetricKind::Thd => write!(f, "thd"),
            MetricKind::Offset => write!(f, "offset"),
        }
    }
}

/// One directional performance target with its penalty weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecItem {
    pub metric: MetricKind,
    pub direction: Direction,
    /// Target in the metric's natural unit (dB, MHz, degrees, dB, mV).
    pub target: f64,
    pub weight: f64,
}

impl SpecItem {
    pub fn new(metric: MetricKind, target: f64, weight: f64) -> Self {
        Self {
            metric,
            direction: metric.canonical_direction(),
            target,
            weight,
        }
    }
}

/// A full specification set: metric targets plus the power budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecSet {
    pub items: Vec<SpecItem>,
    /// Maximum allowable power, in the same unit as the measured power.
    pub p_max: f64,
    /// Informational lower power bound; it does not enter the cost.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_min: Option<f64>,
    #[serde(default = "default_sanity")]
    pub sanity_penalty: f64,
    /// Unit of `p_max` / measured power, for display only.
    #[serde(default)]
    pub power_unit: Option<String>,
}

fn default_sanity() -> f64 {
    DEFAULT_SANITY_PENALTY
}

impl SpecSet {
    pub fn new(items: Vec<SpecItem>, p_max: f64) -> Result<Self, CostError> {
        let set = Self {
            items,
            p_max,
            p_min: None,
            sanity_penalty: DEFAULT_SANITY_PENALTY,
            power_unit: None,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), CostError> {
        if !(self.p_max > 0.0) {
            return Err(CostError::NonPositivePowerBound(self.p_max));
        }
        let mut seen = Vec::new();
        for item in &self.items {
            if item.weight < 0.0 {
                return Err(CostError::NegativeWeight {
                    metric: item.metric,
                    weight: item.weight,
                });
            }
            let expected = item.metric.canonical_direction();
            if item.direction != expected {
                return Err(CostError::DirectionMismatch {
                    metric: item.metric,
                    expected,
                    got: item.direction,
                });
            }
            if seen.contains(&item.metric) {
                return Err(CostError::DuplicateMetric {
                    metric: item.metric,
                });
            }
            seen.push(item.metric);
        }
        Ok(())
    }

    pub fn item(&self, metric: MetricKind) -> Option<&SpecItem> {
        self.items.iter().find(|i| i.metric == metric)
    }
}

/// Simulated performance of one design. `None` fields are measurements that
/// could not be extracted; if `converged` is false all metrics are absent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurements {
    pub gain_db: Option<f64>,
    pub ugbw_mhz: Option<f64>,
    pub pm_deg: Option<f64>,
    pub thd_db: Option<f64>,
    pub offset_mv: Option<f64>,
    /// Same unit as the spec set's `p_max`.
    pub power: Option<f64>,
    /// DC bias check passed.
    pub dc_ok: bool,
    /// Simulation produced results at all.
    pub converged: bool,
}

impl Measurements {
    pub fn value_of(&self, metric: MetricKind) -> Option<f64> {
        match metric {
            MetricKind::Gain => self.gain_db,
            MetricKind::Ugbw => self.ugbw_mhz,
            MetricKind::Pm => self.pm_deg,
            MetricKind::Thd => self.thd_db,
            MetricKind::Offset => self.offset_mv,
        }
    }

    pub fn failed() -> Self {
        Self::default()
    }
}

/// Search regime implied by the cost value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `J > 1`: specs are badly enough missed that the search should chase
    /// compliance before power.
    Feasibility,
    /// `J <= 1`: the design is in the feasible band (a fully compliant
    /// design lands here since its cost is just `P/P_max <= 1`); the search
    /// now mostly trades power.
    Optimization,
}

/// Full decomposition of one cost evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// `P_meas / P_max` (zero when power is unavailable).
    pub power_term: f64,
    /// Weighted violation `w_i * V_i` per spec metric, in spec order.
    pub violations: Vec<(MetricKind, f64)>,
    /// Zero, or the configured sanity penalty.
    pub sanity_term: f64,
    pub total: f64,
    pub mode: Mode,
}

impl CostBreakdown {
    pub fn violation_sum(&self) -> f64 {
        self.violations.iter().map(|(_, v)| v).sum()
    }

    /// True when every spec is met and the design is functional.
    pub fn is_feasible(&self) -> bool {
        self.sanity_term == 0.0 && self.violations.iter().all(|(_, v)| *v == 0.0)
    }
}

/// Rectified violation of a directional target. Zero on the compliant side,
/// linear in the shortfall otherwise.
pub fn violation(measured: f64, target: f64, direction: Direction) -> Result<f64, CostError> {
    if !measured.is_finite() {
        return Err(CostError::NonFiniteValue(measured));
    }
    Ok(match direction {
        Direction::Lower => (target - measured).max(0.0),
        Direction::Upper => (measured - target).max(0.0),
    })
}

fn violation_for(item: &SpecItem, measured: f64) -> Result<f64, CostError> {
    if !measured.is_finite() {
        return Err(CostError::NonFinite {
            metric: item.metric,
            value: measured,
        });
    }
    violation(measured, item.target, item.direction)
}

/// Evaluate the universal cost of one measurement set against a spec set.
///
/// A metric that the specs require but the measurements lack (or report as
/// non-finite) is treated as non-convergence: the sanity penalty is applied.
/// It is never silently skipped.
pub fn universal_cost(meas: &Measurements, specs: &SpecSet) -> CostBreakdown {
    let mut sanity = !meas.converged || !meas.dc_ok;
    if let Some(gain) = meas.gain_db {
        if gain < NEAR_ZERO_GAIN_FLOOR_DB {
            sanity = true;
        }
    }

    let mut violations = Vec::with_capacity(specs.items.len());
    for item in &specs.items {
        match meas.value_of(item.metric) {
            Some(value) => match violation_for(item, value) {
                Ok(v) => violations.push((item.metric, item.weight * v)),
                Err(_) => {
                    sanity = true;
                    violations.push((item.metric, 0.0));
                }
            },
            None => {
                sanity = true;
                violations.push((item.metric, 0.0));
            }
        }
    }

    let power_term = match meas.power {
        Some(p) if p.is_finite() => p / specs.p_max,
        Some(_) => {
            sanity = true;
            0.0
        }
        // Power missing entirely contributes nothing; feasibility of such a
        // run is still gated by convergence and the metric checks above.
        None => 0.0,
    };

    let sanity_term = if sanity { specs.sanity_penalty } else { 0.0 };
    let total = power_term + violations.iter().map(|(_, v)| v).sum::<f64>() + sanity_term;
    CostBreakdown {
        power_term,
        violations,
        sanity_term,
        total,
        mode: mode_of(total),
    }
}

/// `J <= 1` switches the search from feasibility chasing to power
/// minimization.
pub fn mode_of(total: f64) -> Mode {
    if total <= 1.0 {
        Mode::Optimization
    } else {
        Mode::Feasibility
    }
}
