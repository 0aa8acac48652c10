//! Deterministic stand-ins for every agent role.
//!
//! Each policy computes its answer from the context alone — no randomness, no
//! I/O — so a workflow driven by these is exactly reproducible. The matching
//! and sizing policies work structurally from the parsed netlist rather than
//! from hard-coded component names, with lexicographic parameter order as the
//! tie-breaker.

use std::collections::BTreeMap;

use crate::cost::MetricKind;
use crate::exturbo::classify;
use crate::netlist::{parse_devices, parse_spice_number, DeviceCard, DeviceKind, MatchGroup};

use super::{
    AgentContext, AgentError, AgentResponse, AgentRole, DcGoals, DeviceGoal, DiscrepancyItem,
    DiscrepancyKind, DiscrepancyReport, ParamExplanation,
};

/// Produce the deterministic answer for one role.
pub fn scripted_agent(role: AgentRole, ctx: &AgentContext) -> Result<AgentResponse, AgentError> {
    match role {
        AgentRole::CircuitExplainer => Ok(AgentResponse::Analysis(explain(ctx))),
        AgentRole::MatchingFinder => Ok(AgentResponse::Matching(find_matching(ctx)?)),
        AgentRole::DcGoalSetter => Ok(AgentResponse::Goals(set_dc_goals(ctx)?)),
        AgentRole::InitialDesigner => Ok(AgentResponse::Params(initial_design(ctx)?)),
        AgentRole::DcReviewer => Ok(AgentResponse::Discrepancies(review_dc(ctx)?)),
        AgentRole::DcSizer => Ok(AgentResponse::Params(dc_sizing(ctx)?)),
        AgentRole::SpecsReviewer => review_specs(ctx),
        AgentRole::InferencingSizer => Ok(AgentResponse::Params(inferencing_sizing(ctx)?)),
        AgentRole::AdvisorReviewer => Ok(AgentResponse::Seeds(advise_seeds(ctx)?)),
        AgentRole::EquippedSizer => Ok(AgentResponse::Explanations(explain_params(ctx)?)),
    }
}

// ---------------------------------------------------------------------------
// Structural helpers

fn is_rail(node: &str) -> bool {
    matches!(
        node.to_ascii_lowercase().as_str(),
        "0" | "gnd" | "vss" | "vdd" | "vcc" | "avdd" | "avss"
    )
}

fn is_high_rail(node: &str) -> bool {
    matches!(node.to_ascii_lowercase().as_str(), "vdd" | "vcc" | "avdd")
}

/// `{name}` → `name`; anything else is a concrete value, not a free param.
fn placeholder(value: &str) -> Option<String> {
    value
        .strip_prefix('{')
        .and_then(|v| v.strip_suffix('}'))
        .map(|v| v.trim().to_ascii_lowercase())
}

/// A mosfet whose width and length are both free parameters.
#[derive(Debug, Clone)]
struct FreeFet {
    name: String,
    drain: String,
    gate: String,
    source: String,
    model: String,
    w: String,
    l: String,
}

fn free_fets(cards: &[DeviceCard]) -> Vec<FreeFet> {
    cards
        .iter()
        .filter(|c| c.kind == DeviceKind::Mosfet && c.nodes.len() >= 3)
        .filter_map(|c| {
            let w = placeholder(c.param("w")?)?;
            let l = placeholder(c.param("l")?)?;
            Some(FreeFet {
                name: c.name.to_ascii_lowercase(),
                drain: c.nodes[0].clone(),
                gate: c.nodes[1].clone(),
                source: c.nodes[2].clone(),
                model: c.tail.first().cloned().unwrap_or_default().to_ascii_lowercase(),
                w,
                l,
            })
        })
        .collect()
}

fn parsed_cards(ctx: &AgentContext, role: AgentRole) -> Result<Vec<DeviceCard>, AgentError> {
    if ctx.netlist_text.is_empty() {
        return Err(AgentError::MissingContext {
            role,
            what: "netlist text",
        });
    }
    parse_devices(&ctx.netlist_text)
        .map_err(|e| AgentError::NotJsonObject(format!("netlist unreadable: {e}")))
}

/// Supply voltage from the first V source tied to a high rail, default 1.2.
fn supply_voltage(cards: &[DeviceCard]) -> f64 {
    cards
        .iter()
        .filter(|c| c.kind == DeviceKind::VSource)
        .find(|c| c.nodes.iter().any(|n| is_high_rail(n)))
        .and_then(|c| c.tail.first())
        .and_then(|v| parse_spice_number(v).ok())
        .unwrap_or(1.2)
}

/// The node treated as the amplifier output: a node literally named `out` if
/// present, otherwise the drain of the last mosfet.
fn output_node(cards: &[DeviceCard]) -> Option<String> {
    let fets: Vec<&DeviceCard> = cards
        .iter()
        .filter(|c| c.kind == DeviceKind::Mosfet && !c.nodes.is_empty())
        .collect();
    if let Some(c) = fets.iter().find(|c| c.nodes[0].eq_ignore_ascii_case("out")) {
        return Some(c.nodes[0].clone());
    }
    fets.last().map(|c| c.nodes[0].clone())
}

// ---------------------------------------------------------------------------
// CircuitExplainer

fn explain(ctx: &AgentContext) -> String {
    let mut text = format!(
        "'{}' is an analog amplifier. Structure: {}",
        ctx.circuit_name,
        if ctx.graph_summary.is_empty() {
            "not provided"
        } else {
            ctx.graph_summary.trim()
        }
    );
    if let Ok(cards) = parse_devices(&ctx.netlist_text) {
        let fets = cards.iter().filter(|c| c.kind == DeviceKind::Mosfet).count();
        let caps = cards
            .iter()
            .filter(|c| c.kind == DeviceKind::Capacitor)
            .count();
        text.push_str(&format!(
            ". It uses {fets} transistors and {caps} capacitors. The input \
             differential pair converts the input difference to a current, a \
             mirrored load turns that into a single-ended voltage, and the \
             output stage buffers it; any feedback capacitor sets the dominant \
             pole for stability."
        ));
    }
    text
}

// ---------------------------------------------------------------------------
// MatchingFinder

/// Structural symmetry detection over the free-parameter mosfets:
///
/// 1. Two same-model devices sharing a non-rail source with distinct gates
///    form a differential pair — widths and lengths both tie.
/// 2. A same-gate, same-source pair whose drains coincide with a diff pair's
///    drains is that pair's symmetric load — widths and lengths both tie.
/// 3. Any remaining same-gate, same-source cluster is a current mirror —
///    only lengths tie, since the width ratio sets the current ratio.
fn find_matching(ctx: &AgentContext) -> Result<Vec<MatchGroup>, AgentError> {
    let cards = parsed_cards(ctx, AgentRole::MatchingFinder)?;
    let fets = free_fets(&cards);
    let mut groups: Vec<MatchGroup> = Vec::new();
    let mut push = |name: String, members: Vec<String>| {
        if members.len() >= 2 {
            groups.push(MatchGroup { name, members });
        }
    };

    let mut pair_drains: Vec<[String; 2]> = Vec::new();
    let mut in_pair = vec![false; fets.len()];
    for i in 0..fets.len() {
        for j in (i + 1)..fets.len() {
            let (a, b) = (&fets[i], &fets[j]);
            if in_pair[i] || in_pair[j] {
                continue;
            }
            if a.model == b.model
                && a.source == b.source
                && !is_rail(&a.source)
                && a.gate != b.gate
                && a.drain != b.drain
            {
                in_pair[i] = true;
                in_pair[j] = true;
                let tag = format!("{}_{}", a.name, b.name);
                push(format!("pair_{tag}_w"), vec![a.w.clone(), b.w.clone()]);
                push(format!("pair_{tag}_l"), vec![a.l.clone(), b.l.clone()]);
                pair_drains.push([a.drain.clone(), b.drain.clone()]);
            }
        }
    }

    // Cluster the rest by (gate, source).
    let mut clusters: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, f) in fets.iter().enumerate() {
        if !in_pair[i] {
            clusters
                .entry((f.gate.clone(), f.source.clone()))
                .or_default()
                .push(i);
        }
    }
    for ((_gate, _source), idx) in clusters {
        if idx.len() < 2 {
            continue;
        }
        let tag = idx
            .iter()
            .map(|&i| fets[i].name.clone())
            .collect::<Vec<_>>()
            .join("_");
        let symmetric_load = idx.len() == 2
            && pair_drains.iter().any(|d| {
                let (x, y) = (&fets[idx[0]].drain, &fets[idx[1]].drain);
                (d[0] == *x && d[1] == *y) || (d[0] == *y && d[1] == *x)
            });
        if symmetric_load {
            push(
                format!("load_{tag}_w"),
                idx.iter().map(|&i| fets[i].w.clone()).collect(),
            );
            push(
                format!("load_{tag}_l"),
                idx.iter().map(|&i| fets[i].l.clone()).collect(),
            );
        } else {
            push(
                format!("mirror_{tag}_l"),
                idx.iter().map(|&i| fets[i].l.clone()).collect(),
            );
        }
    }

    groups.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(groups)
}

// ---------------------------------------------------------------------------
// DcGoalSetter

fn set_dc_goals(ctx: &AgentContext) -> Result<DcGoals, AgentError> {
    let cards = parsed_cards(ctx, AgentRole::DcGoalSetter)?;
    let vdd = supply_voltage(&cards);
    let mut devices = BTreeMap::new();
    for f in free_fets(&cards) {
        // Saturation with moderate overdrive keeps every device in a healthy
        // square-law region at mid rails.
        devices.insert(
            f.name.clone(),
            DeviceGoal {
                vov: 0.15,
                vds: (vdd / 4.0).max(0.2),
                id_ua: 10.0,
                region: "saturation".into(),
            },
        );
    }
    let goals = DcGoals {
        vout_target: vdd / 2.0,
        devices,
    };
    goals
        .validate(vdd)
        .map_err(AgentError::NotJsonObject)?;
    Ok(goals)
}

// ---------------------------------------------------------------------------
// Parameter-proposing roles

fn require_ranges(
    ctx: &AgentContext,
    role: AgentRole,
) -> Result<&crate::netlist::ParamRanges, AgentError> {
    ctx.ranges.as_ref().ok_or(AgentError::MissingContext {
        role,
        what: "parameter ranges",
    })
}

/// Geometric midpoint of each positive range; arithmetic midpoint otherwise.
fn midpoint_design(ctx: &AgentContext, role: AgentRole) -> Result<BTreeMap<String, f64>, AgentError> {
    if ctx.mandatory.is_empty() {
        return Err(AgentError::MissingContext {
            role,
            what: "mandatory parameter list",
        });
    }
    let ranges = require_ranges(ctx, role)?;
    let mut out = BTreeMap::new();
    for name in &ctx.mandatory {
        let value = match ranges.get(name) {
            Some(r) if r.is_fixed() => r.min,
            Some(r) if r.min > 0.0 => (r.min * r.max).sqrt(),
            Some(r) => 0.5 * (r.min + r.max),
            None => 1.0,
        };
        out.insert(name.clone(), value);
    }
    Ok(out)
}

fn initial_design(ctx: &AgentContext) -> Result<BTreeMap<String, f64>, AgentError> {
    midpoint_design(ctx, AgentRole::InitialDesigner)
}

/// Current sizing as the editing base, falling back to the midpoint design.
fn base_params(ctx: &AgentContext, role: AgentRole) -> Result<BTreeMap<String, f64>, AgentError> {
    let mut base = midpoint_design(ctx, role)?;
    let overlay = ctx.current_point.as_ref().or(ctx.defaults.as_ref());
    if let Some(point) = overlay {
        for name in &ctx.mandatory {
            if let Some(v) = point.get(name) {
                base.insert(name.clone(), v);
            }
        }
    }
    Ok(base)
}

fn scale(map: &mut BTreeMap<String, f64>, name: &str, factor: f64) {
    if let Some(v) = map.get_mut(name) {
        *v *= factor;
    }
}

fn widths_of(mandatory: &[String]) -> Vec<&String> {
    mandatory.iter().filter(|n| n.starts_with('w')).collect()
}

fn lengths_of(mandatory: &[String]) -> Vec<&String> {
    mandatory.iter().filter(|n| n.starts_with('l')).collect()
}

fn comp_cap_of(mandatory: &[String]) -> Option<&String> {
    mandatory.iter().find(|n| n.starts_with('c'))
}

/// Width parameter of the output pull-up (source on the high rail, drain on
/// the output node): the knob for output level and slewing into the load.
fn pullup_width(ctx: &AgentContext) -> Option<String> {
    let cards = parse_devices(&ctx.netlist_text).ok()?;
    let out = output_node(&cards)?;
    free_fets(&cards)
        .into_iter()
        .find(|f| f.drain == out && is_high_rail(&f.source))
        .map(|f| f.w)
}

/// Width of the output pull-down, used to trim quiescent current.
fn pulldown_width(ctx: &AgentContext) -> Option<String> {
    let cards = parse_devices(&ctx.netlist_text).ok()?;
    let out = output_node(&cards)?;
    free_fets(&cards)
        .into_iter()
        .find(|f| f.drain == out && !is_high_rail(&f.source))
        .map(|f| f.w)
}

// ---------------------------------------------------------------------------
// DcReviewer

fn review_dc(ctx: &AgentContext) -> Result<DiscrepancyReport, AgentError> {
    let goals = ctx.dc_goals.as_ref().ok_or(AgentError::MissingContext {
        role: AgentRole::DcReviewer,
        what: "DC goals",
    })?;
    let dc = ctx.dc_result.as_ref().ok_or(AgentError::MissingContext {
        role: AgentRole::DcReviewer,
        what: "DC result",
    })?;

    let mut items = Vec::new();
    if !dc.converged {
        items.push(DiscrepancyItem {
            device: "all".into(),
            goal: 1.0,
            observed: 0.0,
            delta: -1.0,
            kind: DiscrepancyKind::RegionError,
        });
    } else {
        if !dc.bias_ok {
            items.push(DiscrepancyItem {
                device: "bias".into(),
                goal: 1.0,
                observed: 0.0,
                delta: -1.0,
                kind: DiscrepancyKind::HeadroomViolation,
            });
        }
        if let Some(vout) = dc.vout_dc {
            let delta = vout - goals.vout_target;
            // Within 10% of the goal counts as on target.
            if delta.abs() > 0.1 * goals.vout_target.abs() {
                items.push(DiscrepancyItem {
                    device: "output".into(),
                    goal: goals.vout_target,
                    observed: vout,
                    delta,
                    kind: DiscrepancyKind::OutputLevelError,
                });
            }
        }
    }
    Ok(DiscrepancyReport::new(items))
}

// ---------------------------------------------------------------------------
// DcSizer

/// Sign-based nudges: push the output level toward the goal by resizing the
/// stronger of the output devices, restore headroom by narrowing the input
/// devices, fix region errors by lengthening them.
fn dc_sizing(ctx: &AgentContext) -> Result<BTreeMap<String, f64>, AgentError> {
    let mut params = base_params(ctx, AgentRole::DcSizer)?;
    let empty = DiscrepancyReport::new(Vec::new());
    let report = ctx.discrepancies.as_ref().unwrap_or(&empty);
    let widths = widths_of(&ctx.mandatory);
    let lengths = lengths_of(&ctx.mandatory);

    for item in &report.items {
        match item.kind {
            DiscrepancyKind::OutputLevelError => {
                let up = pullup_width(ctx)
                    .or_else(|| widths.iter().rev().nth(1).map(|s| s.to_string()));
                let down = pulldown_width(ctx)
                    .or_else(|| widths.last().map(|s| s.to_string()));
                if item.delta < 0.0 {
                    // Output sits low: strengthen the pull-up, relax the pull-down.
                    if let Some(w) = up {
                        scale(&mut params, &w, 1.2);
                    }
                    if let Some(w) = down {
                        scale(&mut params, &w, 1.0 / 1.1);
                    }
                } else {
                    if let Some(w) = up {
                        scale(&mut params, &w, 1.0 / 1.2);
                    }
                    if let Some(w) = down {
                        scale(&mut params, &w, 1.1);
                    }
                }
            }
            DiscrepancyKind::HeadroomViolation => {
                if let Some(w) = widths.first() {
                    scale(&mut params, w, 0.9);
                }
            }
            DiscrepancyKind::RegionError => {
                if let Some(l) = lengths.first() {
                    scale(&mut params, l, 1.1);
                }
            }
        }
    }
    Ok(params)
}

// ---------------------------------------------------------------------------
// SpecsReviewer

fn review_specs(ctx: &AgentContext) -> Result<AgentResponse, AgentError> {
    let cost = ctx.cost.as_ref().ok_or(AgentError::MissingContext {
        role: AgentRole::SpecsReviewer,
        what: "cost breakdown",
    })?;
    let violated: Vec<String> = cost
        .violations
        .iter()
        .filter(|(_, v)| *v > 0.0)
        .map(|(m, _)| m.to_string())
        .collect();
    let pass = cost.is_feasible();
    let advice = if pass {
        format!(
            "All specifications met at J = {:.4}; remaining effort should trim power.",
            cost.total
        )
    } else if cost.sanity_term > 0.0 {
        "The design is non-functional (bias or convergence failure); restore a \
         valid operating point before chasing specs."
            .to_string()
    } else {
        let worst = cost
            .violations
            .iter()
            .filter(|(_, v)| *v > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match worst {
            Some((m, v)) => format!(
                "Largest weighted shortfall is {m} ({v:.4}); prioritize it before \
                 the smaller violations."
            ),
            None => "No violations recorded.".to_string(),
        }
    };
    Ok(AgentResponse::Review {
        pass,
        violated,
        advice,
    })
}

// ---------------------------------------------------------------------------
// InferencingSizer

fn knob_for(metric: MetricKind, ctx: &AgentContext) -> Option<(String, f64)> {
    let widths = widths_of(&ctx.mandatory);
    let lengths = lengths_of(&ctx.mandatory);
    match metric {
        // Longer input devices raise intrinsic gain.
        MetricKind::Gain => lengths.first().map(|l| (l.to_string(), 1.25)),
        // A smaller feedback capacitor pushes the dominant pole out.
        MetricKind::Ugbw => comp_cap_of(&ctx.mandatory).map(|c| (c.to_string(), 0.75)),
        // A larger one buys phase margin.
        MetricKind::Pm => comp_cap_of(&ctx.mandatory).map(|c| (c.to_string(), 1.3)),
        // More output drive lowers distortion into the load.
        MetricKind::Thd => pullup_width(ctx)
            .or_else(|| widths.iter().rev().nth(1).map(|s| s.to_string()))
            .map(|w| (w, 1.15)),
        // Wider, better-matched input devices cut input-referred offset.
        MetricKind::Offset => widths.first().map(|w| (w.to_string(), 1.1)),
    }
}

/// One coordinate move against the largest weighted violation; with
/// everything met, shave quiescent current instead. If history shows the cost
/// rose right after the same knob was last touched, the move inverts.
fn inferencing_sizing(ctx: &AgentContext) -> Result<BTreeMap<String, f64>, AgentError> {
    let mut params = base_params(ctx, AgentRole::InferencingSizer)?;

    let target = ctx.cost.as_ref().and_then(|cost| {
        cost.violations
            .iter()
            .filter(|(_, v)| *v > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(m, _)| *m)
    });

    let knob = match target {
        Some(metric) => knob_for(metric, ctx),
        None => pulldown_width(ctx)
            .or_else(|| widths_of(&ctx.mandatory).last().map(|s| s.to_string()))
            .map(|w| (w, 0.85)),
    };

    if let Some((name, mut factor)) = knob {
        // Reverse course if the last move on this knob made things worse.
        let recent = ctx.windowed_history();
        if recent.len() >= 2 {
            let prev = &recent[recent.len() - 2];
            let last = &recent[recent.len() - 1];
            let moved = prev.point.get(&name).zip(last.point.get(&name));
            if let Some((a, b)) = moved {
                if a != b && last.j() > prev.j() {
                    factor = 1.0 / factor;
                }
            }
        }
        scale(&mut params, &name, factor);
    }
    Ok(params)
}

// ---------------------------------------------------------------------------
// AdvisorReviewer

/// The lowest-cost distinct sizings seen so far, best first.
fn advise_seeds(ctx: &AgentContext) -> Result<Vec<BTreeMap<String, f64>>, AgentError> {
    if ctx.history.is_empty() {
        return Err(AgentError::MissingContext {
            role: AgentRole::AdvisorReviewer,
            what: "evaluation history",
        });
    }
    let mut order: Vec<&crate::record::EvalRecord> = ctx.history.iter().collect();
    order.sort_by(|a, b| {
        a.j()
            .total_cmp(&b.j())
            .then_with(|| a.iteration.cmp(&b.iteration))
    });
    let mut seeds: Vec<BTreeMap<String, f64>> = Vec::new();
    for rec in order {
        let map: BTreeMap<String, f64> = rec.point.iter().map(|(k, v)| (k.to_string(), v)).collect();
        if !seeds.contains(&map) {
            seeds.push(map);
        }
        if seeds.len() == ctx.seed_count.max(1) {
            break;
        }
    }
    Ok(seeds)
}

// ---------------------------------------------------------------------------
// EquippedSizer

fn explain_params(ctx: &AgentContext) -> Result<Vec<ParamExplanation>, AgentError> {
    let report = ctx.sensitivity.as_ref().ok_or(AgentError::MissingContext {
        role: AgentRole::EquippedSizer,
        what: "sensitivity report",
    })?;
    let classes = match &ctx.classes {
        Some(c) => c.clone(),
        None => classify(report),
    };
    let mut out = Vec::new();
    for class in &classes {
        let classification = match (class.stability_critical, class.performance_tuning) {
            (true, true) => "both",
            (true, false) => "stability-critical",
            (false, true) => "performance-tuning",
            (false, false) => "secondary",
        };
        let g = report.global_entry(&class.name);
        let e = report.elite_entry(&class.name);
        let mut text = match classification {
            "both" => format!(
                "'{}' shapes both whether the design works at all and how good \
                 the best designs get",
                class.name
            ),
            "stability-critical" => format!(
                "'{}' decides whether a design is feasible at all; keep it \
                 near known-good values",
                class.name
            ),
            "performance-tuning" => format!(
                "'{}' separates good feasible designs from great ones; sweep \
                 it once feasibility is secured",
                class.name
            ),
            _ => format!(
                "'{}' has little influence in either regime; fix it at a \
                 convenient value",
                class.name
            ),
        };
        if let (Some(g), Some(e)) = (g, e) {
            text.push_str(&format!(
                " (global rank {} with share {:.3}, elite rank {} with share {:.3})",
                g.rank, g.s, e.rank, e.s
            ));
        }
        if class.members.len() > 1 {
            text.push_str(&format!("; matched with {}", class.members.join(", ")));
        }
        text.push('.');
        out.push(ParamExplanation {
            name: class.name.clone(),
            classification: classification.to_string(),
            text,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::agents::{validate_params, AgentContext, ScriptedTransport, Transport, Transcript, call, parse_response, DEFAULT_RETRIES};
    use crate::cost::Mode;
    use crate::exturbo::synthetic::breakdown_of;
    use crate::record::EvalRecord;
    use crate::sim::DcResult;
    use crate::testutil::{
        miller_groups, miller_mandatory, miller_ranges, miller_template_text, reference_point,
    };

    fn full_ctx() -> AgentContext {
        AgentContext {
            circuit_name: "miller_ota".into(),
            graph_summary: "two gain stages with miller compensation".into(),
            netlist_text: miller_template_text(),
            specs: Some(crate::testutil::miller_specs()),
            mandatory: miller_mandatory(),
            ranges: Some(miller_ranges()),
            groups: miller_groups(),
            current_point: Some(reference_point()),
            ..AgentContext::default()
        }
    }

    fn members_of(groups: &[MatchGroup]) -> BTreeSet<BTreeSet<String>> {
        groups
            .iter()
            .map(|g| g.members.iter().cloned().collect())
            .collect()
    }

    #[test]
    fn matching_finder_recovers_the_miller_symmetries() {
        let ctx = full_ctx();
        let AgentResponse::Matching(groups) =
            scripted_agent(AgentRole::MatchingFinder, &ctx).unwrap()
        else {
            panic!("wrong variant");
        };
        let got = members_of(&groups);
        let expected: BTreeSet<BTreeSet<String>> = [
            ["w1", "w2"].as_slice(),
            ["l1", "l2"].as_slice(),
            ["w3", "w4"].as_slice(),
            ["l3", "l4"].as_slice(),
            ["l5", "l7"].as_slice(),
        ]
        .into_iter()
        .map(|g| g.iter().map(|s| s.to_string()).collect())
        .collect();
        assert_eq!(got, expected);
        // The bias diode M8 has concrete sizes, so nothing may reference it.
        assert!(groups.iter().all(|g| !g.name.contains("m8")));
    }

    #[test]
    fn initial_designer_takes_geometric_midpoints() {
        let ctx = full_ctx();
        let AgentResponse::Params(map) =
            scripted_agent(AgentRole::InitialDesigner, &ctx).unwrap()
        else {
            panic!("wrong variant");
        };
        assert!((map["w1"] - (0.5f64 * 50.0).sqrt()).abs() < 1e-12);
        assert!((map["l1"] - (0.125f64 * 2.0).sqrt()).abs() < 1e-12);
        assert!((map["cc"] - (0.5f64 * 20.0).sqrt()).abs() < 1e-12);
        assert_eq!(map.len(), ctx.mandatory.len());
    }

    #[test]
    fn dc_goal_setter_targets_mid_rail_saturation() {
        let ctx = full_ctx();
        let AgentResponse::Goals(goals) = scripted_agent(AgentRole::DcGoalSetter, &ctx).unwrap()
        else {
            panic!("wrong variant");
        };
        assert!((goals.vout_target - 0.6).abs() < 1e-12);
        assert_eq!(goals.devices.len(), 7); // m1..m7 free, m8 pinned
        assert!(goals.devices.values().all(|g| g.region == "saturation"));
        assert!(goals.validate(1.2).is_ok());
    }

    #[test]
    fn dc_reviewer_flags_output_level_and_convergence() {
        let mut ctx = full_ctx();
        ctx.dc_goals = Some(DcGoals {
            vout_target: 0.6,
            devices: BTreeMap::new(),
        });
        ctx.dc_result = Some(DcResult::good(0.62));
        let AgentResponse::Discrepancies(rep) =
            scripted_agent(AgentRole::DcReviewer, &ctx).unwrap()
        else {
            panic!("wrong variant");
        };
        assert!(rep.clean(), "0.62 is within 10% of 0.6");

        ctx.dc_result = Some(DcResult::good(0.2));
        let AgentResponse::Discrepancies(rep) =
            scripted_agent(AgentRole::DcReviewer, &ctx).unwrap()
        else {
            panic!("wrong variant");
        };
        assert_eq!(rep.count, 1);
        assert_eq!(rep.items[0].kind, DiscrepancyKind::OutputLevelError);
        assert!(rep.items[0].delta < 0.0);

        ctx.dc_result = Some(DcResult {
            converged: false,
            bias_ok: false,
            vout_dc: None,
            detail: None,
        });
        let AgentResponse::Discrepancies(rep) =
            scripted_agent(AgentRole::DcReviewer, &ctx).unwrap()
        else {
            panic!("wrong variant");
        };
        assert_eq!(rep.count, 1);
        assert_eq!(rep.items[0].kind, DiscrepancyKind::RegionError);
    }

    #[test]
    fn dc_sizer_strengthens_pullup_when_output_sits_low() {
        let mut ctx = full_ctx();
        ctx.discrepancies = Some(DiscrepancyReport::new(vec![DiscrepancyItem {
            device: "output".into(),
            goal: 0.6,
            observed: 0.2,
            delta: -0.4,
            kind: DiscrepancyKind::OutputLevelError,
        }]));
        let AgentResponse::Params(map) = scripted_agent(AgentRole::DcSizer, &ctx).unwrap()
        else {
            panic!("wrong variant");
        };
        // M6 is the pull-up (pch driving `out`), M7 the pull-down.
        assert!((map["w6"] - 16.5 * 1.2).abs() < 1e-9);
        assert!((map["w7"] - 12.5 / 1.1).abs() < 1e-9);
        assert_eq!(map["w1"], 5.0);
        assert_eq!(map.len(), ctx.mandatory.len());
    }

    #[test]
    fn inferencing_sizer_attacks_the_largest_weighted_violation() {
        let mut ctx = full_ctx();
        // Phase margin shortfall dominates: the knob is the compensation cap.
        ctx.cost = Some(crate::cost::CostBreakdown {
            power_term: 0.8,
            violations: vec![
                (MetricKind::Gain, 0.3),
                (MetricKind::Pm, 1.1),
            ],
            sanity_term: 0.0,
            total: 2.2,
            mode: Mode::Feasibility,
        });
        let AgentResponse::Params(map) =
            scripted_agent(AgentRole::InferencingSizer, &ctx).unwrap()
        else {
            panic!("wrong variant");
        };
        assert!((map["cc"] - 8.0 * 1.3).abs() < 1e-9);
        assert_eq!(map["l1"], 0.5, "only one knob moves per step");
    }

    #[test]
    fn inferencing_sizer_reverses_a_move_that_backfired() {
        let mut ctx = full_ctx();
        ctx.cost = Some(crate::cost::CostBreakdown {
            power_term: 0.8,
            violations: vec![(MetricKind::Pm, 1.1)],
            sanity_term: 0.0,
            total: 1.9,
            mode: Mode::Feasibility,
        });
        let mut before = reference_point();
        before.set("cc", 6.0);
        let after = reference_point(); // cc back at 8.0, J went up
        ctx.history = vec![
            EvalRecord {
                iteration: 1,
                phase: "D".into(),
                worker: None,
                point: before,
                cost: breakdown_of(1.4),
                measurements: None,
            },
            EvalRecord {
                iteration: 2,
                phase: "D".into(),
                worker: None,
                point: after,
                cost: breakdown_of(1.9),
                measurements: None,
            },
        ];
        let AgentResponse::Params(map) =
            scripted_agent(AgentRole::InferencingSizer, &ctx).unwrap()
        else {
            panic!("wrong variant");
        };
        assert!((map["cc"] - 8.0 / 1.3).abs() < 1e-9, "move must invert");
    }

    #[test]
    fn without_violations_the_sizer_trims_quiescent_current() {
        let mut ctx = full_ctx();
        ctx.cost = Some(breakdown_of(0.6));
        let AgentResponse::Params(map) =
            scripted_agent(AgentRole::InferencingSizer, &ctx).unwrap()
        else {
            panic!("wrong variant");
        };
        assert!((map["w7"] - 12.5 * 0.85).abs() < 1e-9);
    }

    #[test]
    fn advisor_returns_top_k_unique_sizings() {
        let mut ctx = full_ctx();
        let mut alt = reference_point();
        alt.set("cc", 4.0);
        let mut worse = reference_point();
        worse.set("cc", 15.0);
        ctx.history = vec![
            EvalRecord {
                iteration: 1,
                phase: "D".into(),
                worker: None,
                point: reference_point(),
                cost: breakdown_of(0.9),
                measurements: None,
            },
            EvalRecord {
                iteration: 2,
                phase: "D".into(),
                worker: None,
                point: reference_point(), // duplicate of the best
                cost: breakdown_of(0.9),
                measurements: None,
            },
            EvalRecord {
                iteration: 3,
                phase: "D".into(),
                worker: None,
                point: alt.clone(),
                cost: breakdown_of(1.2),
                measurements: None,
            },
            EvalRecord {
                iteration: 4,
                phase: "D".into(),
                worker: None,
                point: worse,
                cost: breakdown_of(3.0),
                measurements: None,
            },
        ];
        ctx.seed_count = 2;
        let AgentResponse::Seeds(seeds) =
            scripted_agent(AgentRole::AdvisorReviewer, &ctx).unwrap()
        else {
            panic!("wrong variant");
        };
        assert_eq!(seeds.len(), 2);
        assert_eq!(seeds[0]["cc"], 8.0, "best first");
        assert_eq!(seeds[1]["cc"], 4.0, "duplicates skipped");
    }

    #[test]
    fn sizing_roles_always_pass_validation() {
        // The invariant backing phases B-D: whatever the context state,
        // a scripted proposal survives validate_params unchanged or clamped,
        // never rejected.
        let contexts = [
            full_ctx(),
            {
                let mut c = full_ctx();
                c.current_point = None;
                c
            },
            {
                let mut c = full_ctx();
                c.discrepancies = Some(DiscrepancyReport::new(vec![DiscrepancyItem {
                    device: "bias".into(),
                    goal: 1.0,
                    observed: 0.0,
                    delta: -1.0,
                    kind: DiscrepancyKind::HeadroomViolation,
                }]));
                c.cost = Some(breakdown_of(2.5));
                c
            },
        ];
        for ctx in &contexts {
            for role in [
                AgentRole::InitialDesigner,
                AgentRole::DcSizer,
                AgentRole::InferencingSizer,
            ] {
                let AgentResponse::Params(map) = scripted_agent(role, ctx).unwrap() else {
                    panic!("wrong variant for {role}");
                };
                let result = validate_params(
                    &map,
                    &ctx.mandatory,
                    ctx.ranges.as_ref().unwrap(),
                    &ctx.groups,
                );
                assert!(result.is_ok(), "{role} failed validation: {result:?}");
            }
        }
    }

    #[test]
    fn transcript_replay_reproduces_every_parsed_result() {
        let transport = ScriptedTransport::new();
        let mut transcript = Transcript::default();
        let mut ctx = full_ctx();
        ctx.dc_goals = Some(DcGoals {
            vout_target: 0.6,
            devices: BTreeMap::new(),
        });
        ctx.dc_result = Some(DcResult::good(0.58));
        ctx.cost = Some(breakdown_of(0.7));

        let roles = [
            AgentRole::CircuitExplainer,
            AgentRole::MatchingFinder,
            AgentRole::DcGoalSetter,
            AgentRole::InitialDesigner,
            AgentRole::DcReviewer,
            AgentRole::SpecsReviewer,
        ];
        for role in roles {
            call(role, &ctx, &transport, &mut transcript, DEFAULT_RETRIES).unwrap();
        }
        assert_eq!(transcript.len(), roles.len());
        assert_eq!(transport.calls(), roles.len());

        // Replaying each recorded raw response through the parser gives back
        // exactly the recorded parsed value, and a fresh scripted call over
        // the same context produces the identical response.
        for entry in transcript.entries() {
            let reparsed = parse_response(entry.role, &entry.raw_response).unwrap();
            assert_eq!(reparsed.to_value(), entry.parsed);
            let fresh = scripted_agent(entry.role, &ctx).unwrap();
            assert_eq!(fresh.to_value(), entry.parsed);
        }
    }

    #[test]
    fn explainer_summarizes_structure() {
        let ctx = full_ctx();
        let AgentResponse::Analysis(text) =
            scripted_agent(AgentRole::CircuitExplainer, &ctx).unwrap()
        else {
            panic!("wrong variant");
        };
        assert!(text.contains("miller_ota"));
        assert!(text.contains("8 transistors"));
        assert!(text.contains("2 capacitors"));
    }
}
