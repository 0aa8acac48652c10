//! Shared unit-test fixtures: the two-stage Miller amplifier in placeholder
//! form, its parameter space, and a hand-checked feasible sizing.

use crate::cost::{MetricKind, SpecItem, SpecSet};
use crate::design::DesignPoint;
use crate::netlist::{MatchGroup, MatchingGroups, ParamRange, ParamRanges};

/// Placeholder-form netlist of the two-stage amplifier the surrogate models:
/// M1/M2 input pair, M3/M4 mirror load, M5 tail, M6 driver, M7 sink, M8 bias
/// diode, CC compensation, CL load. Sizing comes from the design point;
/// supply, bias current and load are pinned by the ranges.
pub(crate) fn miller_template_text() -> String {
    "* two-stage miller amplifier, parameterized sizing
VDD vdd 0 {vdd}
IB vdd nbias {ibias}
M8 nbias nbias 0 0 nch W=2.5u L=0.125u
M5 tail nbias 0 0 nch W={w5} L={l5}
M1 n1 inp tail 0 nch W={w1} L={l1}
M2 n2 inn tail 0 nch W={w2} L={l2}
M3 n1 n1 vdd vdd pch W={w3} L={l3}
M4 n2 n1 vdd vdd pch W={w4} L={l4}
M6 out n2 vdd vdd pch W={w6} L={l6}
M7 out nbias 0 0 nch W={w7} L={l7}
CC n2 out {cc}
CL out 0 {cl}
.end
"
    .to_string()
}

/// Free widths 0.5–50 um, lengths 0.125–2 um, compensation 0.5–20 pF;
/// supply, bias and load fixed.
pub(crate) fn miller_ranges() -> ParamRanges {
    let mut ranges = ParamRanges::default();
    for i in 1..=7 {
        ranges
            .0
            .insert(format!("w{i}"), ParamRange::new(0.5, 50.0, "um"));
        ranges
            .0
            .insert(format!("l{i}"), ParamRange::new(0.125, 2.0, "um"));
    }
    ranges.0.insert("cc".into(), ParamRange::new(0.5, 20.0, "pF"));
    ranges.0.insert("vdd".into(), ParamRange::fixed(1.2, "V"));
    ranges.0.insert("ibias".into(), ParamRange::fixed(20.0, "uA"));
    ranges.0.insert("cl".into(), ParamRange::fixed(10.0, "pF"));
    ranges
}

/// The symmetry constraints of the topology: input pair tied in W and L,
/// mirror load tied in W and L, tail/sink mirror tied in L only.
pub(crate) fn miller_groups() -> MatchingGroups {
    MatchingGroups(vec![
        MatchGroup {
            name: "pair_m1_m2_w".into(),
            members: vec!["w1".into(), "w2".into()],
        },
        MatchGroup {
            name: "pair_m1_m2_l".into(),
            members: vec!["l1".into(), "l2".into()],
        },
        MatchGroup {
            name: "load_m3_m4_w".into(),
            members: vec!["w3".into(), "w4".into()],
        },
        MatchGroup {
            name: "load_m3_m4_l".into(),
            members: vec!["l3".into(), "l4".into()],
        },
        MatchGroup {
            name: "mirror_m5_m7_l".into(),
            members: vec!["l5".into(), "l7".into()],
        },
    ])
}

pub(crate) fn miller_mandatory() -> Vec<String> {
    let mut names: Vec<String> = (1..=7).flat_map(|i| [format!("w{i}"), format!("l{i}")]).collect();
    names.push("cc".into());
    names.sort();
    names
}

/// Hand-checked sizing meeting every Miller target (J ~ 0.44).
pub(crate) fn reference_point() -> DesignPoint {
    let mut p = DesignPoint::new();
    for (name, value) in [
        ("w1", 5.0),
        ("w2", 5.0),
        ("w3", 2.0),
        ("w4", 2.0),
        ("w5", 3.0),
        ("w6", 16.5),
        ("w7", 12.5),
        ("cc", 8.0),
    ] {
        p.set(name, value);
    }
    for i in 1..=7 {
        p.set(format!("l{i}"), 0.5);
    }
    p
}

pub(crate) fn miller_specs() -> SpecSet {
    SpecSet {
        items: vec![
            SpecItem::new(MetricKind::Gain, 54.0, 1.0),
            SpecItem::new(MetricKind::Ugbw, 1.0, 0.2),
            SpecItem::new(MetricKind::Pm, 60.0, 0.1),
            SpecItem::new(MetricKind::Thd, -60.0, 0.5),
            SpecItem::new(MetricKind::Offset, 5.0, 10.0),
        ],
        p_max: 85.0,
        p_min: Some(45.0),
        sanity_penalty: 100.0,
        power_unit: Some("uW".into()),
    }
}
