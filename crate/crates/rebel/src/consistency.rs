//! Belief-consistency rewards, the pending belief buffer, and retroactive
//! credit assignment for delayed verification.
//!
//! At each step the asserted-and-checkable predicates are compared against
//! the observation-verified values; the reward is the matching fraction.
//! Asserted-but-unverifiable predicates enter a pending buffer and resolve
//! against the first later observation that makes them checkable, with the
//! credit landing at the origin step. Assertions that never become checkable
//! are dropped without contributing to any reward.

use serde::{Deserialize, Serialize};

use crate::predicates::{Belief, ObservabilityMask};
use crate::rollout::Trajectory;
use crate::{Error, Result};

/// An asserted predicate awaiting delayed verification. The asserted value is
/// a snapshot from the origin step, even if the belief later changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingItem {
    pub predicate: usize,
    pub origin_step: usize,
    pub asserted: bool,
}

/// The per-trajectory set of unresolved assertions, unique by
/// (predicate, origin step).
#[derive(Debug, Clone, Default)]
pub struct PendingBuffer {
    items: Vec<PendingItem>,
}

impl PendingBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[PendingItem] {
        &self.items
    }

    fn push(&mut self, item: PendingItem) {
        debug_assert!(
            !self
                .items
                .iter()
                .any(|i| i.predicate == item.predicate && i.origin_step == item.origin_step),
            "duplicate pending item"
        );
        self.items.push(item);
    }
}

/// A delayed verification: (origin step, predicate, match indicator).
pub type Resolution = (usize, usize, u8);

/// What one step's consistency check produced.
#[derive(Debug, Clone, Default)]
pub struct ConsistencyOutcome {
    /// Matching fraction over asserted-and-checkable predicates; absent when
    /// none were checkable this step.
    pub reward: Option<f64>,
    /// (predicate, indicator) for every immediately checked assertion.
    pub per_predicate: Vec<(usize, u8)>,
    /// Assertions buffered for later verification.
    pub newly_pending: Vec<PendingItem>,
    /// Pending items verified by this step's observation.
    pub resolved: Vec<Resolution>,
}

/// Compares one asserted predicate against its observation-verified value.
///
/// Contract: only call on a masked, asserted predicate.
pub fn consistency_indicator(
    belief: &Belief,
    predicate: usize,
    verified_value: bool,
) -> Result<u8> {
    let asserted = belief.get(predicate).asserted_value().ok_or_else(|| {
        Error::ContractViolation(format!(
            "consistency_indicator called on unasserted predicate {predicate}"
        ))
    })?;
    Ok((asserted == verified_value) as u8)
}

/// Immediate consistency check for one step: scores asserted-and-masked
/// predicates, buffers asserted-but-unmasked ones. Unknown entries contribute
/// nothing.
pub fn step_consistency(
    belief: &Belief,
    mask: &ObservabilityMask,
    verified_values: &[bool],
    step: usize,
) -> Result<ConsistencyOutcome> {
    if mask.len() != belief.len() || verified_values.len() != belief.len() {
        return Err(Error::LengthMismatch {
            expected: belief.len(),
            got: mask.len().min(verified_values.len()),
        });
    }
    let mut outcome = ConsistencyOutcome::default();
    let mut checked = 0u32;
    let mut matched = 0u32;
    for k in 0..belief.len() {
        let Some(asserted) = belief.get(k).asserted_value() else {
            continue;
        };
        if mask.get(k) {
            let ind = (asserted == verified_values[k]) as u8;
            outcome.per_predicate.push((k, ind));
            checked += 1;
            matched += ind as u32;
        } else {
            outcome.newly_pending.push(PendingItem {
                predicate: k,
                origin_step: step,
                asserted,
            });
        }
    }
    if checked > 0 {
        outcome.reward = Some(matched as f64 / checked as f64);
    }
    Ok(outcome)
}

/// Resolves every buffered assertion whose predicate is checkable this step
/// against the now-verified value; resolved items leave the buffer.
pub fn resolve_pending(
    buffer: &mut PendingBuffer,
    mask: &ObservabilityMask,
    verified_values: &[bool],
) -> Vec<Resolution> {
    let mut resolved = Vec::new();
    buffer.items.retain(|item| {
        if mask.get(item.predicate) {
            let ind = (item.asserted == verified_values[item.predicate]) as u8;
            resolved.push((item.origin_step, item.predicate, ind));
            false
        } else {
            true
        }
    });
    resolved
}

/// Per-trajectory consistency bookkeeping: immediate checks plus the pending
/// buffer, driven step by step during a rollout.
#[derive(Debug, Default)]
pub struct ConsistencyTracker {
    buffer: PendingBuffer,
}

impl ConsistencyTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn buffer(&self) -> &PendingBuffer {
        &self.buffer
    }

    /// Processes one step: resolves matured pending items first, then scores
    /// and buffers the current belief's assertions.
    pub fn observe(
        &mut self,
        belief: &Belief,
        mask: &ObservabilityMask,
        verified_values: &[bool],
        step: usize,
    ) -> Result<ConsistencyOutcome> {
        let resolved = resolve_pending(&mut self.buffer, mask, verified_values);
        let mut outcome = step_consistency(belief, mask, verified_values, step)?;
        for item in &outcome.newly_pending {
            self.buffer.push(*item);
        }
        outcome.resolved = resolved;
        Ok(outcome)
    }
}

/// Recomputes each origin step's consistency reward over the union of its
/// immediate checks and retroactively resolved assertions. Call once the
/// episode is complete; steps with nothing checkable keep an absent reward.
pub fn retro_adjust(trajectory: &mut Trajectory) {
    // Fold every resolution recorded along the trajectory back into its
    // origin step's counters.
    let resolutions: Vec<Resolution> = trajectory
        .steps
        .iter()
        .flat_map(|s| s.resolved_here.iter().copied())
        .collect();
    for (origin, _k, ind) in resolutions {
        let step = &mut trajectory.steps[origin];
        step.cons_checked += 1;
        step.cons_matched += ind as u32;
    }
    for step in &mut trajectory.steps {
        step.r_cons = if step.cons_checked > 0 {
            Some(step.cons_matched as f64 / step.cons_checked as f64)
        } else {
            None
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predicates::Tri;
    use crate::rollout::StepRecord;

    fn mask(bits: &[u8]) -> ObservabilityMask {
        ObservabilityMask::new(bits.iter().map(|b| *b != 0).collect())
    }

    #[test]
    fn indicator_basic() {
        let b = Belief::new(vec![Tri::True, Tri::False]);
        assert_eq!(consistency_indicator(&b, 0, true).unwrap(), 1);
        assert_eq!(consistency_indicator(&b, 0, false).unwrap(), 0);
        assert_eq!(consistency_indicator(&b, 1, false).unwrap(), 1);
    }

    #[test]
    fn indicator_rejects_unknown() {
        let b = Belief::new(vec![Tri::Unknown]);
        assert!(consistency_indicator(&b, 0, true).is_err());
    }

    #[test]
    fn perfect_consistency() {
        let b = Belief::new(vec![Tri::True, Tri::False, Tri::True]);
        let out = step_consistency(&b, &mask(&[1, 1, 1]), &[true, false, true], 0).unwrap();
        assert_eq!(out.reward, Some(1.0));
        assert!(out.newly_pending.is_empty());
    }

    #[test]
    fn reward_absent_when_nothing_checkable() {
        let b = Belief::new(vec![Tri::True, Tri::Unknown]);
        let out = step_consistency(&b, &mask(&[0, 0]), &[true, false], 2).unwrap();
        assert_eq!(out.reward, None);
        // The asserted-but-unmasked predicate becomes pending.
        assert_eq!(
            out.newly_pending,
            vec![PendingItem {
                predicate: 0,
                origin_step: 2,
                asserted: true
            }]
        );
    }

    #[test]
    fn half_consistency() {
        let b = Belief::new(vec![Tri::True, Tri::True, Tri::Unknown]);
        let out = step_consistency(&b, &mask(&[1, 1, 1]), &[true, false, true], 0).unwrap();
        assert_eq!(out.reward, Some(0.5));
        assert_eq!(out.per_predicate, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn unknown_contributes_nothing() {
        let b = Belief::new(vec![Tri::Unknown, Tri::Unknown]);
        let out = step_consistency(&b, &mask(&[1, 1]), &[true, false], 0).unwrap();
        assert_eq!(out.reward, None);
        assert!(out.newly_pending.is_empty());
        assert!(out.per_predicate.is_empty());
    }

    #[test]
    fn pending_resolves_at_first_masked_step() {
        let mut tracker = ConsistencyTracker::new();
        let b1 = Belief::new(vec![Tri::Unknown, Tri::Unknown, Tri::True]);
        // Step 1: predicate 2 asserted, unmasked -> pending.
        let out = tracker
            .observe(&b1, &mask(&[0, 0, 0]), &[false, false, true], 1)
            .unwrap();
        assert!(out.resolved.is_empty());
        assert_eq!(tracker.buffer().len(), 1);

        // Step 4: predicate 2 masked, values match -> emits (1, 2, 1).
        let unknown = Belief::all_unknown(3);
        let out = tracker
            .observe(&unknown, &mask(&[0, 0, 1]), &[false, false, true], 4)
            .unwrap();
        assert_eq!(out.resolved, vec![(1, 2, 1)]);
        assert!(tracker.buffer().is_empty());
    }

    #[test]
    fn empty_buffer_emits_nothing() {
        let mut buffer = PendingBuffer::new();
        let out = resolve_pending(&mut buffer, &mask(&[1, 1]), &[true, true]);
        assert!(out.is_empty());
    }

    #[test]
    fn never_masked_item_stays_buffered() {
        let mut tracker = ConsistencyTracker::new();
        let b = Belief::new(vec![Tri::True, Tri::Unknown]);
        tracker
            .observe(&b, &mask(&[0, 1]), &[true, false], 0)
            .unwrap();
        for t in 1..5 {
            let out = tracker
                .observe(&Belief::all_unknown(2), &mask(&[0, 1]), &[true, false], t)
                .unwrap();
            assert!(out.resolved.is_empty());
        }
        // Episode ends with the item unresolved; it never contributed.
        assert_eq!(tracker.buffer().len(), 1);
    }

    #[test]
    fn buffer_never_grows_during_resolution() {
        let mut tracker = ConsistencyTracker::new();
        let b = Belief::new(vec![Tri::True, Tri::False, Tri::True]);
        tracker
            .observe(&b, &mask(&[0, 0, 0]), &[true, true, true], 0)
            .unwrap();
        let before = tracker.buffer().len();
        let mut buffer = tracker.buffer.clone();
        resolve_pending(&mut buffer, &mask(&[1, 0, 0]), &[true, true, true]);
        assert!(buffer.len() <= before);
    }

    fn toy_step(t: usize, matched: u32, checked: u32, resolved: Vec<Resolution>) -> StepRecord {
        let mut s = StepRecord::placeholder(1, t);
        s.cons_matched = matched;
        s.cons_checked = checked;
        s.resolved_here = resolved;
        s
    }

    #[test]
    fn retro_adjust_grows_numerator_and_denominator() {
        // Step 0 had immediate reward 1.0 (1/1); one later mismatch resolves
        // back to it -> adjusted reward 0.5 (1/2).
        let mut traj = Trajectory {
            id: 1,
            steps: vec![toy_step(0, 1, 1, vec![]), toy_step(1, 0, 0, vec![(0, 2, 0)])],
            success: false,
            episode_return: 0.0,
        };
        retro_adjust(&mut traj);
        assert_eq!(traj.steps[0].r_cons, Some(0.5));
        assert_eq!(traj.steps[1].r_cons, None);
    }

    #[test]
    fn retro_adjust_identity_without_resolutions() {
        let mut traj = Trajectory {
            id: 0,
            steps: vec![toy_step(0, 2, 3, vec![]), toy_step(1, 0, 0, vec![])],
            success: false,
            episode_return: 0.0,
        };
        retro_adjust(&mut traj);
        assert_eq!(traj.steps[0].r_cons, Some(2.0 / 3.0));
        assert_eq!(traj.steps[1].r_cons, None);
    }

    #[test]
    fn retro_adjust_all_correct() {
        // Two origin steps, everything eventually resolves correct.
        let mut traj = Trajectory {
            id: 0,
            steps: vec![
                toy_step(0, 0, 0, vec![]),
                toy_step(1, 1, 1, vec![(0, 1, 1)]),
                toy_step(2, 0, 0, vec![(0, 0, 1), (1, 2, 1)]),
            ],
            success: true,
            episode_return: 1.0,
        };
        retro_adjust(&mut traj);
        assert_eq!(traj.steps[0].r_cons, Some(1.0));
        assert_eq!(traj.steps[1].r_cons, Some(1.0));
        assert_eq!(traj.steps[2].r_cons, None);
    }
}
