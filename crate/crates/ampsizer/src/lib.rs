//! Analog circuit sizing: spec-driven cost scalarization, agent-style
//! proposal phases, simulator-backed evaluation and a warm-started
//! trust-region Bayesian optimizer with per-parameter sensitivity reports.

pub mod agents;
pub mod cost;
pub mod design;
pub mod exturbo;
pub mod netlist;
pub mod record;
pub mod schematic;
pub mod sim;
#[cfg(test)]
pub(crate) mod testutil;
pub mod workflow;

pub use cost::{
    universal_cost, violation, CostBreakdown, Direction, Measurements, MetricKind, Mode, SpecItem,
    SpecSet,
};
pub use design::DesignPoint;
pub use netlist::{MatchGroup, MatchingGroups, NetlistTemplate, ParamRange, ParamRanges};
pub use record::EvalRecord;
