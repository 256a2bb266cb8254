//! Weighted version splitting.
//!
//! Routing is smooth weighted round-robin: each pick adds every candidate's
//! weight to its running score, takes the highest score (first one wins a
//! tie) and subtracts the total. After `total` picks all scores return to
//! zero, so the pick sequence is periodic and every window of `total`
//! consecutive picks contains each version exactly `weight` times.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::MeshError;
use crate::sim::RandomStream;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub version: String,
    pub weight: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSplitPolicy {
    pub host: String,
    pub splits: Vec<Split>,
}

impl RouteSplitPolicy {
    pub fn new<S: Into<String>>(host: S, splits: &[(&str, u32)]) -> Self {
        RouteSplitPolicy {
            host: host.into(),
            splits: splits
                .iter()
                .map(|&(version, weight)| Split {
                    version: version.to_string(),
                    weight,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let invalid = |reason: String| MeshError::InvalidWeights {
            host: self.host.clone(),
            reason,
        };
        if self.splits.is_empty() {
            return Err(invalid("split list is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for s in &self.splits {
            if s.version.is_empty() {
                return Err(invalid("empty version tag".into()));
            }
            if s.weight > 100 {
                return Err(invalid(format!("weight {} of {} exceeds 100", s.weight, s.version)));
            }
            if !seen.insert(s.version.as_str()) {
                return Err(invalid(format!("version {} listed twice", s.version)));
            }
        }
        let sum: u32 = self.splits.iter().map(|s| s.weight).sum();
        if sum != 100 {
            return Err(invalid(format!("weights sum to {sum}, expected 100")));
        }
        Ok(())
    }

    pub fn weight_of(&self, version: &str) -> u32 {
        self.splits
            .iter()
            .find(|s| s.version == version)
            .map_or(0, |s| s.weight)
    }

    pub fn versions(&self) -> impl Iterator<Item = &str> {
        self.splits.iter().map(|s| s.version.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterKind {
    #[default]
    Swrr,
    /// Seeded weighted draw; no per-window exactness.
    Random,
}

/// Router state for one host.
#[derive(Clone, Debug, Default)]
pub struct SmoothWeightedRouter {
    signature: Vec<(Arc<str>, u32)>,
    current: Vec<i64>,
}

impl SmoothWeightedRouter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Picks an index into `candidates`. State resets whenever the candidate
    /// set or its weights change, which makes each policy epoch start a
    /// fresh period.
    pub fn pick(&mut self, candidates: &[(Arc<str>, u32)]) -> Option<usize> {
        let total: i64 = candidates.iter().map(|c| c.1 as i64).sum();
        if total == 0 {
            return None;
        }
        if self.signature.as_slice() != candidates {
            self.signature = candidates.to_vec();
            self.current = vec![0; candidates.len()];
        }
        let mut best = usize::MAX;
        for (i, (_, w)) in candidates.iter().enumerate() {
            if *w == 0 {
                continue;
            }
            self.current[i] += *w as i64;
            if best == usize::MAX || self.current[i] > self.current[best] {
                best = i;
            }
        }
        self.current[best] -= total;
        Some(best)
    }

    /// Routes under `policy`, skipping versions for which `excluded` holds and
    /// renormalizing weights among the survivors.
    pub fn route(
        &mut self,
        policy: &RouteSplitPolicy,
        excluded: impl Fn(&str) -> bool,
    ) -> Result<String, MeshError> {
        let candidates: Vec<(Arc<str>, u32)> = policy
            .splits
            .iter()
            .filter(|s| s.weight > 0 && !excluded(&s.version))
            .map(|s| (Arc::from(s.version.as_str()), s.weight))
            .collect();
        match self.pick(&candidates) {
            Some(i) => Ok(candidates[i].0.to_string()),
            None => Err(MeshError::NoEligibleVersion(policy.host.clone())),
        }
    }
}

pub fn weighted_draw(candidates: &[(Arc<str>, u32)], rng: &mut RandomStream) -> Option<usize> {
    let total: u64 = candidates.iter().map(|c| c.1 as u64).sum();
    if total == 0 {
        return None;
    }
    let mut x = rng.uniform_inclusive(0, total - 1);
    for (i, (_, w)) in candidates.iter().enumerate() {
        if x < *w as u64 {
            return Some(i);
        }
        x -= *w as u64;
    }
    unreachable!("draw below total weight")
}
