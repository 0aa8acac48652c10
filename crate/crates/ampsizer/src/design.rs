//! Design points: named sizing parameter assignments.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A named assignment of sizing parameters (widths, lengths, bias values,
/// capacitors). Values are expressed in the natural unit declared for each
/// parameter by the active [`crate::netlist::ParamRanges`].
///
/// Keys are kept sorted so that serialization, hashing and equality are
/// deterministic regardless of insertion order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignPoint {
    values: BTreeMap<String, f64>,
}

impl DesignPoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        Self {
            values: pairs.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn set(&mut self, name: impl Into<String>, value: f64) {
        self.values.insert(name.into(), value);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Parameter names in sorted order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// True when both points hold the same keys and every value agrees
    /// within relative tolerance `rel_tol` (absolute for values near zero).
    pub fn approx_eq(&self, other: &DesignPoint, rel_tol: f64) -> bool {
        if self.values.len() != other.values.len() {
            return false;
        }
        self.iter().all(|(name, a)| match other.get(name) {
            Some(b) => {
                let scale = a.abs().max(b.abs());
                if scale <= f64::MIN_POSITIVE {
                    true
                } else {
                    (a - b).abs() <= rel_tol * scale
                }
            }
            None => false,
        })
    }
}

impl fmt::Display for DesignPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (name, value)) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{name}={value}")?;
        }
        write!(f, "}}")
    }
}

impl<S: Into<String>> FromIterator<(S, f64)> for DesignPoint {
    fn from_iter<I: IntoIterator<Item = (S, f64)>>(iter: I) -> Self {
        Self::from_pairs(iter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insertion_order_does_not_matter() {
        let a = DesignPoint::from_pairs([("w1", 1.0), ("l1", 2.0)]);
        let b = DesignPoint::from_pairs([("l1", 2.0), ("w1", 1.0)]);
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn approx_eq_uses_relative_tolerance() {
        let a = DesignPoint::from_pairs([("w1", 1.0)]);
        let mut b = a.clone();
        b.set("w1", 1.0 + 1e-12);
        assert!(a.approx_eq(&b, 1e-9));
        b.set("w1", 1.01);
        assert!(!a.approx_eq(&b, 1e-9));
    }
}
