//! Predicate space, ternary beliefs, observability masks, anchor signatures,
//! and the belief-drift metric.
//!
//! A belief is the agent's explicit assertion over a fixed set of K task
//! predicates. Each entry is `True`, `False`, or `Unknown`; `Unknown` means
//! "not asserted" and is excluded from consistency checking. The anchor
//! signature is the K-character string over `{T,F,U}` used verbatim as the
//! grouping key in trajectory logs, so for K predicates there are at most
//! 3^K distinct anchors.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One ternary assertion about a single predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tri {
    True,
    False,
    Unknown,
}

impl Tri {
    /// Index into 3-way logit/one-hot blocks; fixed order True, False, Unknown.
    pub fn index(self) -> usize {
        match self {
            Tri::True => 0,
            Tri::False => 1,
            Tri::Unknown => 2,
        }
    }

    pub fn from_index(idx: usize) -> Option<Tri> {
        match idx {
            0 => Some(Tri::True),
            1 => Some(Tri::False),
            2 => Some(Tri::Unknown),
            _ => None,
        }
    }

    /// Whether this entry is an actual assertion (not `Unknown`).
    pub fn is_asserted(self) -> bool {
        !matches!(self, Tri::Unknown)
    }

    /// The asserted boolean value; `None` for `Unknown`.
    pub fn asserted_value(self) -> Option<bool> {
        match self {
            Tri::True => Some(true),
            Tri::False => Some(false),
            Tri::Unknown => None,
        }
    }

    fn signature_char(self) -> char {
        match self {
            Tri::True => 'T',
            Tri::False => 'F',
            Tri::Unknown => 'U',
        }
    }
}

/// The K named task predicates a belief ranges over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateSpace {
    labels: Vec<String>,
}

impl PredicateSpace {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidConfig(
                "predicate space needs at least one predicate".into(),
            ));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate predicate label '{a}'"
                )));
            }
        }
        Ok(Self { labels })
    }

    /// The ContainerWorld predicate family: object-in-container-j for each of
    /// the M containers, plus `holding` and `delivered`. K = M + 2.
    pub fn container_world(num_containers: usize) -> Self {
        let mut labels: Vec<String> = (0..num_containers)
            .map(|j| format!("object_in_container_{j}"))
            .collect();
        labels.push("holding".into());
        labels.push("delivered".into());
        Self { labels }
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// The agent's ternary assertion over the predicate space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Belief {
    values: Vec<Tri>,
}

impl Belief {
    pub fn new(values: Vec<Tri>) -> Self {
        Self { values }
    }

    pub fn all_unknown(k: usize) -> Self {
        Self {
            values: vec![Tri::Unknown; k],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Tri] {
        &self.values
    }

    pub fn get(&self, k: usize) -> Tri {
        self.values[k]
    }
}

/// Which predicates the upcoming observation can verify; bit k is set iff
/// predicate k is checkable this step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservabilityMask {
    bits: Vec<bool>,
}

impl ObservabilityMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn none(k: usize) -> Self {
        Self {
            bits: vec![false; k],
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, k: usize) -> bool {
        self.bits[k]
    }

    pub fn set(&mut self, k: usize, value: bool) {
        self.bits[k] = value;
    }

    /// Fraction of predicates observable this step.
    pub fn observable_fraction(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.bits.iter().filter(|b| **b).count() as f64 / self.bits.len() as f64
    }
}

/// Canonical signature of a belief vector, used as the step-grouping key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BeliefAnchor(String);

impl BeliefAnchor {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Parses a serialized signature; accepts only `{T,F,U}` strings.
    pub fn from_signature(s: &str) -> Result<Self> {
        if s.is_empty() || !s.chars().all(|c| matches!(c, 'T' | 'F' | 'U')) {
            return Err(Error::InvalidConfig(format!("bad anchor signature '{s}'")));
        }
        Ok(Self(s.to_string()))
    }
}

impl std::fmt::Display for BeliefAnchor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Encodes a belief as its K-character `{T,F,U}` signature.
///
/// The encoding is order-preserving and injective: two beliefs map to the
/// same anchor iff their value vectors are identical.
pub fn canonicalize_anchor(space: &PredicateSpace, belief: &Belief) -> Result<BeliefAnchor> {
    if belief.len() != space.size() {
        return Err(Error::MalformedBelief {
            expected: space.size(),
            got: belief.len(),
        });
    }
    Ok(BeliefAnchor(
        belief.values().iter().map(|v| v.signature_char()).collect(),
    ))
}

/// Discrepancy between a belief and the ground-truth predicate projection,
/// averaged uniformly over predicates.
///
/// Per-predicate loss: 0 for a correct assertion, 1 for a contradiction,
/// 0.5 for `Unknown`. The result is always in [0, 1].
pub fn belief_drift(belief: &Belief, truth: &[bool]) -> Result<f64> {
    if belief.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: belief.len(),
            got: truth.len(),
        });
    }
    let k = belief.len() as f64;
    let total: f64 = belief
        .values()
        .iter()
        .zip(truth)
        .map(|(v, t)| match v.asserted_value() {
            Some(a) if a == *t => 0.0,
            Some(_) => 1.0,
            None => 0.5,
        })
        .sum();
    Ok(total / k)
}
