//! Schematic ingestion and netlist/schematic consistency checking.
//!
//! Schematics arrive as JSON: a list of components with named terminals and
//! a list of nets, each net enumerating the (component, terminal) pairs it
//! connects. The same structure is derived from netlist text, and the two
//! are compared by iterative color refinement — a graph-isomorphism
//! necessary-condition test that is exact for every circuit family handled
//! here and cheap enough to run on every ingest.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{DeviceCard, DeviceKind};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SchematicError {
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("invalid schematic JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate component id `{0}`")]
    DuplicateComponent(String),
    #[error("component `{comp}` repeats terminal `{term}`")]
    DuplicateTerminal { comp: String, term: String },
    #[error("duplicate net id `{0}`")]
    DuplicateNet(String),
    #[error("net `{net}` references unknown component `{comp}`")]
    UnknownComponent { net: String, comp: String },
    #[error("net `{net}` references `{comp}.{term}` which the component does not declare")]
    UnknownTerminal {
        net: String,
        comp: String,
        term: String,
    },
    #[error("terminal `{comp}.{term}` is connected to more than one net")]
    TerminalShorted { comp: String, term: String },
    #[error("terminal `{comp}.{term}` is not connected to any net")]
    TerminalFloating { comp: String, term: String },
    #[error("port `{0}` names a net that does not exist")]
    UnknownPort(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub id: String,
    pub kind: DeviceKind,
    pub terminals: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Net {
    pub id: String,
    /// `(component id, terminal name)` pairs joined by this net.
    pub members: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitGraph {
    pub schema_version: u32,
    pub components: Vec<Component>,
    pub nets: Vec<Net>,
    /// Net ids exposed as external connections; they anchor the consistency
    /// check so that, say, swapped input and output stay detectable.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ports: Vec<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub annotations: serde_json::Value,
}

impl CircuitGraph {
    pub fn from_json(text: &str) -> Result<Self, SchematicError> {
        let graph: CircuitGraph = serde_json::from_str(text)?;
        graph.validate()?;
        Ok(graph)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialization cannot fail")
    }

    pub fn validate(&self) -> Result<(), SchematicError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(SchematicError::SchemaVersion(self.schema_version));
        }
        let mut terminals: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        let mut comp_ids: Vec<&str> = Vec::new();
        for c in &self.components {
            if comp_ids.contains(&c.id.as_str()) {
                return Err(SchematicError::DuplicateComponent(c.id.clone()));
            }
            comp_ids.push(&c.id);
            for t in &c.terminals {
                if terminals.insert((&c.id, t), 0).is_some() {
                    return Err(SchematicError::DuplicateTerminal {
                        comp: c.id.clone(),
                        term: t.clone(),
                    });
                }
            }
        }
        let mut net_ids: Vec<&str> = Vec::new();
        for n in &self.nets {
            if net_ids.contains(&n.id.as_str()) {
                return Err(SchematicError::DuplicateNet(n.id.clone()));
            }
            net_ids.push(&n.id);
            for (comp, term) in &n.members {
                if !comp_ids.contains(&comp.as_str()) {
                    return Err(SchematicError::UnknownComponent {
                        net: n.id.clone(),
                        comp: comp.clone(),
                    });
                }
                match terminals.get_mut(&(comp.as_str(), term.as_str())) {
                    Some(count) => {
                        *count += 1;
                        if *count > 1 {
                            return Err(SchematicError::TerminalShorted {
                                comp: comp.clone(),
                                term: term.clone(),
                            });
                        }
                    }
                    None => {
                        return Err(SchematicError::UnknownTerminal {
                            net: n.id.clone(),
                            comp: comp.clone(),
                            term: term.clone(),
                        })
                    }
                }
            }
        }
        for ((comp, term), count) in &terminals {
            if *count == 0 {
                return Err(SchematicError::TerminalFloating {
                    comp: comp.to_string(),
                    term: term.to_string(),
                });
            }
        }
        for p in &self.ports {
            if !net_ids.contains(&p.as_str()) {
                return Err(SchematicError::UnknownPort(p.clone()));
            }
        }
        Ok(())
    }

    pub fn kind_counts(&self) -> BTreeMap<DeviceKind, usize> {
        let mut counts = BTreeMap::new();
        for c in &self.components {
            *counts.entry(c.kind).or_insert(0) += 1;
        }
        counts
    }
}

fn default_terminals(kind: DeviceKind, n: usize) -> Vec<String> {
    match kind {
        DeviceKind::Mosfet => ["d", "g", "s", "b"].iter().map(|s| s.to_string()).collect(),
        DeviceKind::Capacitor | DeviceKind::Resistor | DeviceKind::VSource | DeviceKind::ISource => {
            ["p", "n"].iter().map(|s| s.to_string()).collect()
        }
        DeviceKind::Subckt => (1..=n).map(|i| format!("t{i}")).collect(),
    }
}

/// Build the connectivity graph of a netlist. Net ids are the node names;
/// `ports` marks which of them are externally visible.
pub fn netlist_to_graph(cards: &[DeviceCard], ports: &[String]) -> Result<CircuitGraph, SchematicError> {
    let mut components = Vec::new();
    let mut nets: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
    for card in cards {
        let terms = default_terminals(card.kind, card.nodes.len());
        for (node, term) in card.nodes.iter().zip(&terms) {
            nets.entry(node.clone())
                .or_default()
                .push((card.name.clone(), term.clone()));
        }
        components.push(Component {
            id: card.name.clone(),
            kind: card.kind,
            terminals: terms,
        });
    }
    let graph = CircuitGraph {
        schema_version: SCHEMA_VERSION,
        components,
        nets: nets
            .into_iter()
            .map(|(id, members)| Net { id, members })
            .collect(),
        ports: ports.to_vec(),
        annotations: serde_json::Value::Null,
    };
    graph.validate()?;
    Ok(graph)
}

/// Outcome of a consistency check between two circuit graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub consistent: bool,
    /// Human-readable discrepancies, empty when consistent.
    pub diffs: Vec<String>,
}

/// Compare two circuit graphs for structural equivalence.
///
/// Both graphs are refined together: every node starts from a coarse color
/// (device kind for components; degree and port name for nets) and colors
/// are repeatedly re-derived from each node's multiset of
/// (terminal label, neighbor color) pairs until the partition stabilizes.
/// Equal final color multisets mean the graphs are indistinguishable by
/// connectivity; unequal multisets are a proven mismatch.
pub fn consistency_check(a: &CircuitGraph, b: &CircuitGraph) -> ConsistencyReport {
    let mut diffs = Vec::new();

    let ka = a.kind_counts();
    let kb = b.kind_counts();
    if ka != kb {
        for kind in ka.keys().chain(kb.keys()) {
            let ca = ka.get(kind).copied().unwrap_or(0);
            let cb = kb.get(kind).copied().unwrap_or(0);
            if ca != cb {
                diffs.push(format!("component count for {kind:?}: {ca} vs {cb}"));
            }
        }
    }
    if a.nets.len() != b.nets.len() {
        diffs.push(format!("net count: {} vs {}", a.nets.len(), b.nets.len()));
    }
    if !diffs.is_empty() {
        return ConsistencyReport {
            consistent: false,
            diffs,
        };
    }

    let (colors_a, colors_b) = joint_refined_colors(a, b);
    if colors_a != colors_b {
        diffs.push(format!(
            "connectivity differs: {} of {} structural classes unmatched",
            class_mismatches(&colors_a, &colors_b),
            colors_a.len().max(colors_b.len()),
        ));
    }
    ConsistencyReport {
        consistent: diffs.is_empty(),
        diffs,
    }
}

type ColorHistogram = BTreeMap<Vec<u8>, usize>;

fn class_mismatches(a: &ColorHistogram, b: &ColorHistogram) -> usize {
    a.iter()
        .filter(|(k, v)| b.get(*k) != Some(v))
        .count()
        .max(b.iter().filter(|(k, v)| a.get(*k) != Some(v)).count())
}

/// WL-style refinement of both graphs in one shared signature space, so the
/// resulting color identifiers are directly comparable. Returns the final
/// color histogram of each graph.
fn joint_refined_colors(a: &CircuitGraph, b: &CircuitGraph) -> (ColorHistogram, ColorHistogram) {
    // Initial color per node (components first, then nets, matching the
    // adjacency indexing below).
    let initial = |graph: &CircuitGraph| -> Vec<String> {
        let mut colors = Vec::new();
        for c in &graph.components {
            colors.push(format!("kind:{:?}", c.kind));
        }
        for n in &graph.nets {
            let tag = if graph.ports.contains(&n.id) {
                format!("port:{}", n.id)
            } else {
                "net".to_string()
            };
            colors.push(format!("{tag}:deg{}", n.members.len()));
        }
        colors
    };

    // Adjacency: node index -> (edge label, neighbor index) pairs.
    let adjacency = |graph: &CircuitGraph| {
        let comp_index: BTreeMap<&str, usize> = graph
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.as_str(), i))
            .collect();
        let total = graph.components.len() + graph.nets.len();
        let mut adj: Vec<Vec<(String, usize)>> = vec![Vec::new(); total];
        for (k, n) in graph.nets.iter().enumerate() {
            let ni = graph.components.len() + k;
            for (comp, term) in &n.members {
                let ci = comp_index[comp.as_str()];
                adj[ci].push((term.clone(), ni));
                adj[ni].push((term.clone(), ci));
            }
        }
        adj
    };

    let adj_a = adjacency(a);
    let adj_b = adjacency(b);
    let mut col_a = initial(a);
    let mut col_b = initial(b);

    let signature = |cols: &[String], adj: &[Vec<(String, usize)>], i: usize| {
        let mut neigh: Vec<(String, String)> = adj[i]
            .iter()
            .map(|(label, j)| (label.clone(), cols[*j].clone()))
            .collect();
        neigh.sort();
        format!("{}|{:?}", cols[i], neigh)
    };
    let class_sizes = |v: &[String]| {
        let mut h: BTreeMap<&String, usize> = BTreeMap::new();
        for s in v {
            *h.entry(s).or_insert(0) += 1;
        }
        let mut sizes: Vec<usize> = h.into_values().collect();
        sizes.sort();
        sizes
    };

    for _ in 0..(col_a.len() + col_b.len()).max(1) {
        let sig_a: Vec<String> = (0..col_a.len()).map(|i| signature(&col_a, &adj_a, i)).collect();
        let sig_b: Vec<String> = (0..col_b.len()).map(|i| signature(&col_b, &adj_b, i)).collect();
        // Compress signatures to shared compact ids; identical structure in
        // either graph lands on the same id.
        let mut canon: BTreeMap<&str, String> = BTreeMap::new();
        for s in sig_a.iter().chain(sig_b.iter()) {
            let next = canon.len();
            canon.entry(s).or_insert_with(|| format!("#{next}"));
        }
        let new_a: Vec<String> = sig_a.iter().map(|s| canon[s.as_str()].clone()).collect();
        let new_b: Vec<String> = sig_b.iter().map(|s| canon[s.as_str()].clone()).collect();
        // Refinement only ever splits classes, so unchanged class sizes mean
        // the partition is stable and a further round cannot change it.
        let stable =
            class_sizes(&new_a) == class_sizes(&col_a) && class_sizes(&new_b) == class_sizes(&col_b);
        col_a = new_a;
        col_b = new_b;
        if stable {
            break;
        }
    }

    let hist = |cols: &[String]| {
        let mut h = ColorHistogram::new();
        for c in cols {
            *h.entry(c.as_bytes().to_vec()).or_insert(0) += 1;
        }
        h
    };
    (hist(&col_a), hist(&col_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::parse_devices;

    fn follower() -> &'static str {
        "* src follower\nM1 vdd in out 0 nch W=2u L=1u\nR1 out 0 1k\nV1 vdd 0 1.2\n"
    }

    fn graph_of(netlist: &str, ports: &[&str]) -> CircuitGraph {
        let cards = parse_devices(netlist).unwrap();
        let ports: Vec<String> = ports.iter().map(|s| s.to_string()).collect();
        netlist_to_graph(&cards, &ports).unwrap()
    }

    #[test]
    fn netlist_graph_shape() {
        let g = graph_of(follower(), &["in", "out"]);
        assert_eq!(g.components.len(), 3);
        assert_eq!(g.nets.len(), 4); // vdd, in, out, 0
        assert_eq!(g.kind_counts()[&DeviceKind::Mosfet], 1);
        g.validate().unwrap();
    }

    #[test]
    fn graph_json_round_trip() {
        let g = graph_of(follower(), &["in", "out"]);
        let text = g.to_json();
        let back = CircuitGraph::from_json(&text).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn identical_graphs_are_consistent() {
        let g = graph_of(follower(), &["in", "out"]);
        let report = consistency_check(&g, &g);
        assert!(report.consistent, "{:?}", report.diffs);
    }

    #[test]
    fn renamed_nets_still_consistent() {
        let a = graph_of(follower(), &["in", "out"]);
        let renamed = follower().replace("vdd", "supply");
        let b = graph_of(&renamed, &["in", "out"]);
        let report = consistency_check(&a, &b);
        assert!(report.consistent, "{:?}", report.diffs);
    }

    #[test]
    fn missing_device_detected() {
        let a = graph_of(follower(), &[]);
        let b = graph_of("* degenerate\nM1 vdd in out 0 nch W=2u\nV1 vdd 0 1.2\nR1 vdd 0 1k\n", &[]);
        // Same kind counts, different wiring (R moved from out to vdd).
        let report = consistency_check(&a, &b);
        assert!(!report.consistent);
        assert!(!report.diffs.is_empty());
    }

    #[test]
    fn kind_count_mismatch_reported() {
        let a = graph_of(follower(), &[]);
        let b = graph_of("* rc\nR1 a b 1k\nC1 b 0 1p\nV1 a 0 1.2\n", &[]);
        let report = consistency_check(&a, &b);
        assert!(!report.consistent);
        assert!(report.diffs.iter().any(|d| d.contains("component count")));
    }

    #[test]
    fn swapped_ports_detected() {
        let a = graph_of(follower(), &["in", "out"]);
        let swapped = follower()
            .replace(" in ", " tmpx ")
            .replace(" out ", " in ")
            .replace(" tmpx ", " out ");
        let b = graph_of(&swapped, &["in", "out"]);
        let report = consistency_check(&a, &b);
        assert!(!report.consistent, "port swap must be flagged");
    }

    #[test]
    fn validation_catches_floating_terminal() {
        let mut g = graph_of(follower(), &[]);
        g.nets.retain(|n| n.id != "0");
        assert!(matches!(
            g.validate(),
            Err(SchematicError::TerminalFloating { .. })
        ));
    }

    #[test]
    fn validation_catches_shorted_terminal() {
        let mut g = graph_of(follower(), &[]);
        let extra = Net {
            id: "dup".into(),
            members: vec![("M1".into(), "g".into())],
        };
        g.nets.push(extra);
        assert!(matches!(
            g.validate(),
            Err(SchematicError::TerminalShorted { .. })
        ));
    }

    #[test]
    fn validation_catches_unknown_terminal() {
        let mut g = graph_of(follower(), &[]);
        g.nets[0].members.push(("M1".into(), "q".into()));
        let err = g.validate().unwrap_err();
        assert!(matches!(err, SchematicError::UnknownTerminal { .. }));
    }

    #[test]
    fn schema_version_gate() {
        let mut g = graph_of(follower(), &[]);
        g.schema_version = 7;
        assert!(matches!(g.validate(), Err(SchematicError::SchemaVersion(7))));
    }
}
