//! Step records and trajectories: the per-step tuple shared by the
//! consistency, advantage, and optimizer stages.

use serde::{Deserialize, Serialize};

use crate::consistency::Resolution;
use crate::predicates::{Belief, BeliefAnchor, ObservabilityMask};

/// One interaction step of one trajectory, with everything later stages
/// need: the sampled belief and action, rewards, the observability mask,
/// the collection-time log-probability, features, and diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub traj_id: usize,
    pub t: usize,
    pub belief: Belief,
    pub anchor: BeliefAnchor,
    /// Index into the fixed action space.
    pub action: usize,
    pub r_env: f64,
    /// Belief-consistency reward in [0,1]; absent when nothing was checkable
    /// for this step even after retroactive resolution.
    pub r_cons: Option<f64>,
    /// Immediate-plus-resolved check counters behind `r_cons`.
    pub cons_matched: u32,
    pub cons_checked: u32,
    pub mask: ObservabilityMask,
    /// Resolutions emitted at this step, pointing back at their origin steps.
    pub resolved_here: Vec<Resolution>,
    pub logprob_old: f64,
    pub features: Vec<f64>,
    /// Admissible-action mask at sampling time.
    pub admissible: Vec<bool>,
    /// Stable hash of the latent state, for the state-grouping baseline.
    pub state_hash: u64,
    /// Belief drift against the ground-truth projection.
    pub drift: f64,
}

impl StepRecord {
    /// A blank record for tests and incremental construction.
    pub fn placeholder(traj_id: usize, t: usize) -> Self {
        Self {
            traj_id,
            t,
            belief: Belief::all_unknown(1),
            anchor: crate::predicates::canonicalize_anchor(
                &crate::predicates::PredicateSpace::new(vec!["p0".into()]).unwrap(),
                &Belief::all_unknown(1),
            )
            .unwrap(),
            action: 0,
            r_env: 0.0,
            r_cons: None,
            cons_matched: 0,
            cons_checked: 0,
            mask: ObservabilityMask::none(1),
            resolved_here: Vec::new(),
            logprob_old: 0.0,
            features: Vec::new(),
            admissible: Vec::new(),
            state_hash: 0,
            drift: 0.0,
        }
    }
}

/// An ordered, completed episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: usize,
    pub steps: Vec<StepRecord>,
    pub success: bool,
    /// Sum of environment rewards over the episode.
    pub episode_return: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}
