//! Netlist templates and sizing-parameter bookkeeping.
//!
//! A template is ordinary SPICE text with `{name}` placeholders where sizing
//! values go. `.param name=value` directives supply fallback defaults. At
//! instantiation time each placeholder is resolved through a fixed lookup
//! chain — proposed point, then fixed range, then template default — and
//! formatted with the SI suffix implied by the parameter's declared unit.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::DesignPoint;

#[derive(Debug, Error)]
pub enum NetlistError {
    #[error("line {line}: bad placeholder `{token}` (must be a bare identifier)")]
    BadPlaceholder { line: usize, token: String },
    #[error("line {line}: malformed .param directive: {text}")]
    BadParamDirective { line: usize, text: String },
    #[error("duplicate .param default for `{name}`")]
    DuplicateDefault { name: String },
    #[error("no value for parameter `{name}`: not proposed, not fixed, no default")]
    MissingParam { name: String },
    #[error("parameter `{param}` has unsupported unit `{unit}`")]
    UnknownUnit { param: String, unit: String },
    #[error("parameter `{param}`: min {min} exceeds max {max}")]
    EmptyRange { param: String, min: f64, max: f64 },
    #[error("parameter `{param}`: bound is not finite")]
    NonFiniteBound { param: String },
    #[error("`{param}` = {value} outside [{min}, {max}]")]
    OutOfRange {
        param: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("non-finite value {value} for `{param}`")]
    NonFiniteValue { param: String, value: f64 },
    #[error("matching group `{group}` references unknown parameter `{param}`")]
    UnknownGroupMember { group: String, param: String },
    #[error("parameter `{param}` appears in more than one matching group")]
    OverlappingGroups { param: String },
    #[error("matching group `{group}` needs at least two members")]
    DegenerateGroup { group: String },
    #[error("line {line}: unparseable device card: {text}")]
    BadDeviceCard { line: usize, text: String },
    #[error("cannot parse `{0}` as a SPICE number")]
    BadNumber(String),
}

/// Map a human unit label to its SPICE magnitude suffix. Only units that
/// actually occur in sizing configs are accepted; anything else is an error
/// so that a typo cannot silently change a value by orders of magnitude.
pub fn si_suffix(unit: &str) -> Option<&'static str> {
    Some(match unit {
        "" | "V" | "A" | "F" | "W" | "Hz" | "Ohm" | "m" | "ratio" => "",
        "um" | "uA" | "uW" | "uV" | "uF" => "u",
        "nm" | "nA" | "nW" | "nV" | "nF" => "n",
        "pF" | "pA" | "pW" | "pV" => "p",
        "fF" | "fA" => "f",
        "mV" | "mA" | "mW" | "mOhm" => "m",
        "kHz" | "kOhm" => "k",
        "MHz" | "MOhm" => "meg",
        "GHz" => "g",
        _ => return None,
    })
}

/// Multiplier for a SPICE magnitude suffix (`meg` = 1e6, `m` = 1e-3, ...).
pub fn suffix_multiplier(suffix: &str) -> Option<f64> {
    let s = suffix.to_ascii_lowercase();
    Some(match s.as_str() {
        "" => 1.0,
        "t" => 1e12,
        "g" => 1e9,
        "meg" => 1e6,
        "k" => 1e3,
        "m" => 1e-3,
        "u" => 1e-6,
        "n" => 1e-9,
        "p" => 1e-12,
        "f" => 1e-15,
        _ => return None,
    })
}

/// Parse a SPICE-style number: float body, optional magnitude suffix,
/// optional trailing unit letters which are ignored (`5pF`, `2.5u`, `1.2`).
pub fn parse_spice_number(text: &str) -> Result<f64, NetlistError> {
    let t = text.trim();
    let bad = || NetlistError::BadNumber(text.to_string());
    let body_end = t
        .find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E')
        .unwrap_or(t.len());
    // `1e-6` has an exponent, `1e` alone would be cut wrong; let f64 judge.
    let (body, rest) = t.split_at(body_end);
    let value: f64 = body.parse().map_err(|_| bad())?;
    let rest = rest.trim();
    if rest.is_empty() {
        return Ok(value);
    }
    let lower = rest.to_ascii_lowercase();
    let mult = if lower.starts_with("meg") {
        1e6
    } else if let Some(m) = suffix_multiplier(&lower[..1]) {
        m
    } else if lower.chars().all(|c| c.is_ascii_alphabetic()) {
        // No magnitude prefix, just unit letters ("V", "Hz"): scale by one.
        1.0
    } else {
        return Err(bad());
    };
    Ok(value * mult)
}

/// Format a value for netlist text: shortest round-trip float plus suffix.
pub fn format_spice_value(value: f64, suffix: &str) -> String {
    if value == value.trunc() && value.abs() < 1e15 {
        format!("{}{}", value as i64, suffix)
    } else {
        format!("{}{}", value, suffix)
    }
}

/// Inclusive bounds for one sizing parameter, with the unit its values are
/// expressed in. `min == max` marks the parameter as fixed: its value comes
/// from the range, never from the proposer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

impl ParamRange {
    pub fn new(min: f64, max: f64, unit: &str) -> Self {
        Self {
            min,
            max,
            unit: if unit.is_empty() {
                None
            } else {
                Some(unit.to_string())
            },
        }
    }

    pub fn fixed(value: f64, unit: &str) -> Self {
        Self::new(value, value, unit)
    }

    pub fn is_fixed(&self) -> bool {
        self.min == self.max
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

/// All parameter bounds for one circuit, keyed by placeholder name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamRanges(pub BTreeMap<String, ParamRange>);

impl ParamRanges {
    pub fn get(&self, name: &str) -> Option<&ParamRange> {
        self.0.get(name)
    }

    pub fn is_fixed(&self, name: &str) -> bool {
        self.get(name).map_or(false, ParamRange::is_fixed)
    }

    pub fn fixed_value(&self, name: &str) -> Option<f64> {
        self.get(name).filter(|r| r.is_fixed()).map(|r| r.min)
    }

    /// Names with nonzero width, in deterministic (sorted) order. This is the
    /// search space the optimizer works in.
    pub fn free_names(&self) -> Vec<String> {
        self.0
            .iter()
            .filter(|(_, r)| !r.is_fixed())
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn validate(&self) -> Result<(), NetlistError> {
        for (name, r) in &self.0 {
            if !r.min.is_finite() || !r.max.is_finite() {
                return Err(NetlistError::NonFiniteBound {
                    param: name.clone(),
                });
            }
            if r.min > r.max {
                return Err(NetlistError::EmptyRange {
                    param: name.clone(),
                    min: r.min,
                    max: r.max,
                });
            }
            if let Some(unit) = &r.unit {
                if si_suffix(unit).is_none() {
                    return Err(NetlistError::UnknownUnit {
                        param: name.clone(),
                        unit: unit.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Check that every free parameter is present, finite and in bounds.
    /// Parameters outside this range set are ignored here; the proposer
    /// pipeline rejects them separately.
    pub fn validate_point(&self, point: &DesignPoint) -> Result<(), NetlistError> {
        for (name, r) in &self.0 {
            if r.is_fixed() {
                continue;
            }
            let v = point
                .get(name)
                .ok_or_else(|| NetlistError::MissingParam { name: name.clone() })?;
            if !v.is_finite() {
                return Err(NetlistError::NonFiniteValue {
                    param: name.clone(),
                    value: v,
                });
            }
            if !r.contains(v) {
                return Err(NetlistError::OutOfRange {
                    param: name.clone(),
                    value: v,
                    min: r.min,
                    max: r.max,
                });
            }
        }
        Ok(())
    }

    /// Pull every out-of-bounds value back to the nearest bound. Returns the
    /// clamped point and the names that were touched.
    pub fn clamp(&self, point: &DesignPoint) -> (DesignPoint, Vec<String>) {
        let mut out = point.clone();
        let mut touched = Vec::new();
        for (name, r) in &self.0 {
            if let Some(v) = point.get(name) {
                let c = if v.is_finite() {
                    v.clamp(r.min, r.max)
                } else {
                    // A non-finite proposal has no "nearest" bound; reset to
                    // the middle of the range rather than poisoning the run.
                    0.5 * (r.min + r.max)
                };
                if c != v {
                    out.set(name, c);
                    touched.push(name.clone());
                }
            }
        }
        (out, touched)
    }
}

impl FromIterator<(String, ParamRange)> for ParamRanges {
    fn from_iter<I: IntoIterator<Item = (String, ParamRange)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Named set of parameters forced to share one value (matched devices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchGroup {
    pub name: String,
    /// First member is the leader; others are overwritten with its value.
    pub members: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MatchingGroups(pub Vec<MatchGroup>);

impl MatchingGroups {
    pub fn validate(&self, known_params: &[String]) -> Result<(), NetlistError> {
        let mut seen: Vec<&str> = Vec::new();
        for g in &self.0 {
            if g.members.len() < 2 {
                return Err(NetlistError::DegenerateGroup {
                    group: g.name.clone(),
                });
            }
            for m in &g.members {
                if !known_params.iter().any(|p| p == m) {
                    return Err(NetlistError::UnknownGroupMember {
                        group: g.name.clone(),
                        param: m.clone(),
                    });
                }
                if seen.contains(&m.as_str()) {
                    return Err(NetlistError::OverlappingGroups { param: m.clone() });
                }
                seen.push(m);
            }
        }
        Ok(())
    }

    /// Copy each group's leader value onto every member. The leader is the
    /// first member the point actually carries, so a proposal that omits a
    /// mirrored parameter still comes out internally consistent.
    pub fn apply(&self, point: &DesignPoint) -> DesignPoint {
        let mut out = point.clone();
        for g in &self.0 {
            if let Some(v) = g.members.iter().find_map(|m| point.get(m)) {
                for m in &g.members {
                    out.set(m, v);
                }
            }
        }
        out
    }

    /// True when all members of every group agree to within `rel_tol`.
    pub fn is_satisfied(&self, point: &DesignPoint, rel_tol: f64) -> bool {
        self.0.iter().all(|g| {
            let vals: Vec<f64> = g.members.iter().filter_map(|m| point.get(m)).collect();
            vals.windows(2).all(|w| {
                let scale = w[0].abs().max(w[1].abs()).max(1e-30);
                (w[0] - w[1]).abs() <= rel_tol * scale
            })
        })
    }

    pub fn group_of(&self, param: &str) -> Option<&MatchGroup> {
        self.0.iter().find(|g| g.members.iter().any(|m| m == param))
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([^{}]*)\}").unwrap())
}

fn ident_ok(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// A parsed netlist template: raw text, placeholder list, `.param` defaults.
#[derive(Debug, Clone)]
pub struct NetlistTemplate {
    source: String,
    placeholders: Vec<String>,
    defaults: BTreeMap<String, f64>,
}

impl NetlistTemplate {
    pub fn parse(source: &str) -> Result<Self, NetlistError> {
        let mut placeholders: Vec<String> = Vec::new();
        let mut defaults = BTreeMap::new();
        for (lineno, line) in source.lines().enumerate() {
            let line_no = lineno + 1;
            for cap in placeholder_re().captures_iter(line) {
                let name = &cap[1];
                if !ident_ok(name) {
                    return Err(NetlistError::BadPlaceholder {
                        line: line_no,
                        token: cap[0].to_string(),
                    });
                }
                if !placeholders.iter().any(|p| p == name) {
                    placeholders.push(name.to_string());
                }
            }
            let trimmed = line.trim();
            if let Some(rest) = trimmed
                .strip_prefix(".param")
                .or_else(|| trimmed.strip_prefix(".PARAM"))
            {
                let (name, value) = rest.split_once('=').ok_or(NetlistError::BadParamDirective {
                    line: line_no,
                    text: trimmed.to_string(),
                })?;
                let name = name.trim().to_ascii_lowercase();
                let value = parse_spice_number(value.trim()).map_err(|_| {
                    NetlistError::BadParamDirective {
                        line: line_no,
                        text: trimmed.to_string(),
                    }
                })?;
                if defaults.insert(name.clone(), value).is_some() {
                    return Err(NetlistError::DuplicateDefault { name });
                }
            }
        }
        Ok(Self {
            source: source.to_string(),
            placeholders,
            defaults,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Placeholder names in first-appearance order, deduplicated.
    pub fn placeholders(&self) -> &[String] {
        &self.placeholders
    }

    /// Defaults from `.param` lines, in the parameter's natural unit.
    pub fn defaults(&self) -> &BTreeMap<String, f64> {
        &self.defaults
    }

    /// Parameters a proposer must supply: every placeholder that is not
    /// pinned to a single value by the ranges.
    pub fn mandatory_params(&self, ranges: &ParamRanges) -> Vec<String> {
        self.placeholders
            .iter()
            .filter(|p| !ranges.is_fixed(p))
            .cloned()
            .collect()
    }

    /// Resolve one parameter value: proposed point, else fixed range, else
    /// template default.
    fn resolve(&self, name: &str, point: &DesignPoint, ranges: &ParamRanges) -> Option<f64> {
        point
            .get(name)
            .or_else(|| ranges.fixed_value(name))
            .or_else(|| self.defaults.get(name).copied())
    }

    /// Substitute every placeholder, formatting values with the SI suffix of
    /// the parameter's declared unit. `.param` directives are kept verbatim;
    /// they are inert once no placeholder references remain.
    pub fn instantiate(
        &self,
        point: &DesignPoint,
        ranges: &ParamRanges,
    ) -> Result<String, NetlistError> {
        let mut values = BTreeMap::new();
        for name in &self.placeholders {
            let v = self
                .resolve(name, point, ranges)
                .ok_or_else(|| NetlistError::MissingParam { name: name.clone() })?;
            if !v.is_finite() {
                return Err(NetlistError::NonFiniteValue {
                    param: name.clone(),
                    value: v,
                });
            }
            let suffix = match ranges.get(name).and_then(|r| r.unit.as_deref()) {
                Some(unit) => si_suffix(unit).ok_or_else(|| NetlistError::UnknownUnit {
                    param: name.clone(),
                    unit: unit.to_string(),
                })?,
                None => "",
            };
            values.insert(name.as_str(), format_spice_value(v, suffix));
        }
        let out = placeholder_re().replace_all(&self.source, |cap: &regex::Captures| {
            values.get(&cap[1]).cloned().unwrap_or_default()
        });
        Ok(out.into_owned())
    }
}

/// Coarse device classes recognized by the structural parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Mosfet,
    Capacitor,
    Resistor,
    VSource,
    ISource,
    Subckt,
}

impl DeviceKind {
    fn from_leading(c: char) -> Option<(Self, usize)> {
        // (kind, number of connection nodes)
        Some(match c.to_ascii_uppercase() {
            'M' => (DeviceKind::Mosfet, 4),
            'C' => (DeviceKind::Capacitor, 2),
            'R' => (DeviceKind::Resistor, 2),
            'V' => (DeviceKind::VSource, 2),
            'I' => (DeviceKind::ISource, 2),
            'X' => (DeviceKind::Subckt, 0), // variable; nodes = all non-param tokens
            _ => return None,
        })
    }
}

/// One element line of a netlist, structurally parsed. Values and parameter
/// assignments stay as strings so device cards containing unresolved
/// placeholders still parse.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceCard {
    pub name: String,
    pub kind: DeviceKind,
    pub nodes: Vec<String>,
    /// Positional tokens after the nodes (model name, element value).
    pub tail: Vec<String>,
    /// `key=value` assignments, lowercased keys, original order.
    pub params: Vec<(String, String)>,
}

impl DeviceCard {
    pub fn param(&self, key: &str) -> Option<&str> {
        let key = key.to_ascii_lowercase();
        self.params
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Parse the element lines of a netlist, folding `+` continuations and
/// skipping comments, directives and blank lines.
pub fn parse_devices(text: &str) -> Result<Vec<DeviceCard>, NetlistError> {
    // Fold continuation lines first so card parsing sees whole statements.
    let mut statements: Vec<(usize, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('$').next().unwrap_or("").trim_end();
        let trimmed = line.trim_start();
        if let Some(cont) = trimmed.strip_prefix('+') {
            if let Some(last) = statements.last_mut() {
                last.1.push(' ');
                last.1.push_str(cont.trim());
            }
            continue;
        }
        statements.push((lineno + 1, trimmed.to_string()));
    }

    let mut cards = Vec::new();
    for (line_no, stmt) in statements {
        if stmt.is_empty() || stmt.starts_with('*') || stmt.starts_with('.') {
            continue;
        }
        let mut tokens = stmt.split_whitespace();
        let name = match tokens.next() {
            Some(t) => t.to_string(),
            None => continue,
        };
        let Some((kind, n_nodes)) = name.chars().next().and_then(DeviceKind::from_leading) else {
            return Err(NetlistError::BadDeviceCard {
                line: line_no,
                text: stmt.clone(),
            });
        };
        let rest: Vec<&str> = tokens.collect();
        let mut nodes = Vec::new();
        let mut tail = Vec::new();
        let mut params = Vec::new();
        for tok in &rest {
            if let Some((k, v)) = tok.split_once('=') {
                params.push((k.to_ascii_lowercase(), v.to_string()));
            } else if nodes.len() < n_nodes || kind == DeviceKind::Subckt {
                nodes.push(tok.to_string());
            } else {
                tail.push(tok.to_string());
            }
        }
        if kind == DeviceKind::Subckt {
            // Last positional token of an X card is the subcircuit name.
            if let Some(model) = nodes.pop() {
                tail.push(model);
            }
        }
        let underfull = nodes.len() < n_nodes
            // A MOSFET card names a model after its four nodes; without one
            // the node list has silently eaten the model token.
            || (kind == DeviceKind::Mosfet && tail.is_empty())
            || (matches!(kind, DeviceKind::Capacitor | DeviceKind::Resistor) && tail.is_empty());
        if kind != DeviceKind::Subckt && underfull {
            return Err(NetlistError::BadDeviceCard {
                line: line_no,
                text: stmt.clone(),
            });
        }
        cards.push(DeviceCard {
            name,
            kind,
            nodes,
            tail,
            params,
        });
    }
    Ok(cards)
}
