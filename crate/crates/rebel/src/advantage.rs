//! Step-wise total rewards and returns, episode-level group-normalized
//! advantages, belief-anchor (and state-hash baseline) step groups, step
//! advantages with the singleton rule, and the combined advantage.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::predicates::BeliefAnchor;
use crate::rollout::Trajectory;
use crate::{Error, Result};

/// How step returns are accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReturnMode {
    /// Discounted suffix sum of total rewards to episode end.
    Suffix,
    /// Discounted sum of consistency rewards only, over a window of H steps.
    Windowed(usize),
}

/// What the episode-level advantage normalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeSignal {
    /// Total episode environment return.
    Return,
    /// Binary success indicator.
    Success,
}

/// How steps are grouped for the step-level advantage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupingMode {
    /// Group by canonical belief-anchor signature.
    BeliefAnchor,
    /// Baseline: group by a hash of the full latent state.
    StateHash,
    /// No step groups: pure episode-level advantages.
    None,
}

/// r_tot = r_env + eta * r_cons; an absent consistency reward contributes
/// zero rather than excluding the step from returns.
pub fn step_total_reward(r_env: f64, r_cons: Option<f64>, eta: f64) -> f64 {
    r_env + eta * r_cons.unwrap_or(0.0)
}

/// Discounted return for step `t` of a trajectory, under the given mode.
pub fn step_return(traj: &Trajectory, t: usize, gamma: f64, eta: f64, mode: ReturnMode) -> f64 {
    match mode {
        ReturnMode::Suffix => {
            let mut g = 0.0;
            let mut discount = 1.0;
            for step in &traj.steps[t..] {
                g += discount * step_total_reward(step.r_env, step.r_cons, eta);
                discount *= gamma;
            }
            g
        }
        ReturnMode::Windowed(h) => {
            let end = (t + h + 1).min(traj.steps.len());
            let mut g = 0.0;
            let mut discount = 1.0;
            for step in &traj.steps[t..end] {
                g += discount * step.r_cons.unwrap_or(0.0);
                discount *= gamma;
            }
            g
        }
    }
}

/// All step returns of a trajectory.
pub fn step_returns(traj: &Trajectory, gamma: f64, eta: f64, mode: ReturnMode) -> Vec<f64> {
    (0..traj.steps.len())
        .map(|t| step_return(traj, t, gamma, eta, mode))
        .collect()
}

/// The episode-level signal R_i a rollout group normalizes over. The return
/// variant is the environment return plus eta times the mean consistency
/// reward over steps where it exists (0 when no step checked anything). The
/// mean keeps the bonus independent of episode length, so prolonging an
/// episode cannot farm it; averaging only over checked steps means a new
/// assertion pays off only when it is at least as accurate as the agent's
/// existing ones, so blind guessing dilutes the bonus instead of inflating it.
pub fn episode_signal(traj: &Trajectory, signal: EpisodeSignal, eta: f64) -> f64 {
    match signal {
        EpisodeSignal::Return => {
            traj.episode_return + eta * mean_consistency(traj)
        }
        EpisodeSignal::Success => traj.success as u8 as f64,
    }
}

/// Mean consistency reward over the steps where one was defined; 0.0 when no
/// step had any checked assertion.
pub fn mean_consistency(traj: &Trajectory) -> f64 {
    let (sum, n) = traj
        .steps
        .iter()
        .filter_map(|s| s.r_cons)
        .fold((0.0, 0u32), |(s, n), r| (s + r, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Group-normalized episode advantages: (R_i - mean) / (pop-std + eps).
/// A group with identical returns yields exact zeros.
pub fn episode_advantage(returns: &[f64], eps_norm: f64) -> Result<Vec<f64>> {
    let n = returns.len();
    if n < 2 {
        return Err(Error::DegenerateGroup(n));
    }
    Ok(normalize_group(returns, eps_norm))
}

fn normalize_group(values: &[f64], eps_norm: f64) -> Vec<f64> {
    let n = values.len() as f64;
    let all_equal = values.windows(2).all(|w| w[0] == w[1]);
    if all_equal {
        return vec![0.0; values.len()];
    }
    let mean: f64 = values.iter().sum::<f64>() / n;
    let var: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    values.iter().map(|v| (v - mean) / (std + eps_norm)).collect()
}

/// Key a step group shares exactly.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupKey {
    Anchor(BeliefAnchor),
    State(u64),
}

/// One step group: the shared key and its members as (trajectory index in
/// batch, step index), in batch order.
#[derive(Debug, Clone)]
pub struct StepGroup {
    pub key: GroupKey,
    pub members: Vec<(usize, usize)>,
}

/// Partitions every step of the batch into groups by the chosen key.
/// `None` yields no groups (the pure episode-level baseline).
pub fn group_steps(batch: &[Trajectory], mode: GroupingMode) -> Vec<StepGroup> {
    if mode == GroupingMode::None {
        return Vec::new();
    }
    let mut groups: Vec<StepGroup> = Vec::new();
    let mut index: HashMap<GroupKey, usize> = HashMap::new();
    for (i, traj) in batch.iter().enumerate() {
        for (t, step) in traj.steps.iter().enumerate() {
            let key = match mode {
                GroupingMode::BeliefAnchor => GroupKey::Anchor(step.anchor.clone()),
                GroupingMode::StateHash => GroupKey::State(step.state_hash),
                GroupingMode::None => unreachable!(),
            };
            match index.get(&key) {
                Some(&gi) => groups[gi].members.push((i, t)),
                None => {
                    index.insert(key.clone(), groups.len());
                    groups.push(StepGroup {
                        key,
                        members: vec![(i, t)],
                    });
                }
            }
        }
    }
    groups
}

/// Within-group normalized step advantages. Singleton groups get exactly
/// zero; groups with identical returns get exact zeros.
pub fn step_advantage(
    groups: &[StepGroup],
    returns: &[Vec<f64>],
    eps_norm: f64,
) -> HashMap<(usize, usize), f64> {
    let mut out = HashMap::new();
    for group in groups {
        if group.members.len() == 1 {
            out.insert(group.members[0], 0.0);
            continue;
        }
        let values: Vec<f64> = group.members.iter().map(|&(i, t)| returns[i][t]).collect();
        let advs = normalize_group(&values, eps_norm);
        for (member, adv) in group.members.iter().zip(advs) {
            out.insert(*member, adv);
        }
    }
    out
}

/// A_tot = A_E + omega * A_S.
pub fn total_advantage(episode_adv: f64, step_adv: f64, omega: f64) -> f64 {
    episode_adv + omega * step_adv
}

/// (singleton ratio, mean group size) over a non-empty partition.
pub fn grouping_diagnostics(groups: &[StepGroup]) -> Result<(f64, f64)> {
    if groups.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let singles = groups.iter().filter(|g| g.members.len() == 1).count();
    let total_members: usize = groups.iter().map(|g| g.members.len()).sum();
    Ok((
        singles as f64 / groups.len() as f64,
        total_members as f64 / groups.len() as f64,
    ))
}

/// Everything the optimizer needs from the advantage stage.
#[derive(Debug, Clone)]
pub struct AdvantageOutput {
    pub episode: Vec<f64>,
    pub step_returns: Vec<Vec<f64>>,
    /// A_tot per (trajectory index, step index).
    pub total: HashMap<(usize, usize), f64>,
    pub groups: Vec<StepGroup>,
}

/// Full pipeline: step returns, episode advantages, grouping, step
/// advantages with the singleton rule, and the combination.
#[allow(clippy::too_many_arguments)]
pub fn compute_total_advantages(
    batch: &[Trajectory],
    gamma: f64,
    eta: f64,
    omega: f64,
    eps_norm: f64,
    grouping: GroupingMode,
    return_mode: ReturnMode,
    signal: EpisodeSignal,
) -> Result<AdvantageOutput> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let signals: Vec<f64> = batch
        .iter()
        .map(|t| episode_signal(t, signal, eta))
        .collect();
    let episode = episode_advantage(&signals, eps_norm)?;
    let returns: Vec<Vec<f64>> = batch
        .iter()
        .map(|t| step_returns(t, gamma, eta, return_mode))
        .collect();
    let groups = group_steps(batch, grouping);
    let step_advs = step_advantage(&groups, &returns, eps_norm);
    let mut total = HashMap::new();
    for (i, traj) in batch.iter().enumerate() {
        for t in 0..traj.steps.len() {
            let a_s = step_advs.get(&(i, t)).copied().unwrap_or(0.0);
            total.insert((i, t), total_advantage(episode[i], a_s, omega));
        }
    }
    Ok(AdvantageOutput {
        episode,
        step_returns: returns,
        total,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::StepRecord;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn traj(id: usize, specs: &[(&str, f64, Option<f64>, u64)]) -> Trajectory {
        let steps = specs
            .iter()
            .enumerate()
            .map(|(t, (anchor, r_env, r_cons, hash))| {
                let mut s = StepRecord::placeholder(id, t);
                s.anchor = BeliefAnchor::from_signature(anchor).unwrap();
                s.r_env = *r_env;
                s.r_cons = *r_cons;
                s.state_hash = *hash;
                s
            })
            .collect::<Vec<_>>();
        let episode_return = steps.iter().map(|s| s.r_env).sum();
        Trajectory {
            id,
            steps,
            success: false,
            episode_return,
        }
    }

    #[test]
    fn total_reward_formula() {
        assert_eq!(step_total_reward(1.0, Some(0.5), 1.0), 1.5);
        assert_eq!(step_total_reward(0.0, None, 1.0), 0.0);
        assert!((step_total_reward(-0.01, Some(1.0), 0.2) - 0.19).abs() < 1e-15);
    }

    #[test]
    fn suffix_return_arithmetic() {
        let t0 = traj(
            0,
            &[("U", 0.0, None, 0), ("U", 0.0, None, 1), ("U", 1.0, None, 2)],
        );
        let g = step_return(&t0, 0, 0.95, 1.0, ReturnMode::Suffix);
        assert!((g - 0.9025).abs() < 1e-12);
        // Boundary: last step's return is its own reward.
        let g = step_return(&t0, 2, 0.95, 1.0, ReturnMode::Suffix);
        assert_eq!(g, 1.0);
    }

    #[test]
    fn undiscounted_return_matches_cumulative_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let len = rng.gen_range(1..15);
            let rewards: Vec<f64> = (0..len).map(|_| rng.gen::<f64>() - 0.5).collect();
            let specs: Vec<(&str, f64, Option<f64>, u64)> =
                rewards.iter().map(|r| ("U", *r, None, 0)).collect();
            let t0 = traj(0, &specs);
            let t = rng.gen_range(0..len);
            let g = step_return(&t0, t, 1.0, 0.0, ReturnMode::Suffix);
            let oracle: f64 = rewards[t..].iter().sum();
            assert!((g - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn windowed_return_uses_consistency_only() {
        let t0 = traj(
            0,
            &[
                ("U", 5.0, Some(1.0), 0),
                ("U", 5.0, Some(0.5), 1),
                ("U", 5.0, None, 2),
                ("U", 5.0, Some(1.0), 3),
            ],
        );
        // H = 1: steps t and t+1 only, env rewards ignored.
        let g = step_return(&t0, 0, 0.5, 1.0, ReturnMode::Windowed(1));
        assert!((g - (1.0 + 0.5 * 0.5)).abs() < 1e-12);
        // Window clipped at episode end.
        let g = step_return(&t0, 3, 0.5, 1.0, ReturnMode::Windowed(5));
        assert_eq!(g, 1.0);
    }

    #[test]
    fn episode_advantage_zero_variance() {
        let a = episode_advantage(&[0.3; 8], 1e-8).unwrap();
        assert!(a.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn episode_advantage_two_point() {
        let a = episode_advantage(&[0.0, 1.0], 1e-8).unwrap();
        assert!((a[0] + 1.0).abs() < 1e-7);
        assert!((a[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn episode_advantage_statistics_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let returns: Vec<f64> = (0..16).map(|_| rng.gen::<f64>() * 4.0).collect();
        let a = episode_advantage(&returns, 1e-8).unwrap();
        let mean: f64 = a.iter().sum::<f64>() / 16.0;
        let std = (a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0).sqrt();
        assert!(mean.abs() < 1e-6);
        assert!((std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn episode_advantage_rejects_singletons() {
        assert!(matches!(
            episode_advantage(&[1.0], 1e-8),
            Err(Error::DegenerateGroup(1))
        ));
    }

    #[test]
    fn identical_anchors_share_a_group() {
        let batch = vec![
            traj(0, &[("TU", 0.0, None, 1), ("FU", 0.0, None, 2)]),
            traj(1, &[("TU", 0.0, None, 3)]),
        ];
        let groups = group_steps(&batch, GroupingMode::BeliefAnchor);
        assert_eq!(groups.len(), 2);
        let tu = groups
            .iter()
            .find(|g| g.key == GroupKey::Anchor(BeliefAnchor::from_signature("TU").unwrap()))
            .unwrap();
        assert_eq!(tu.members, vec![(0, 0), (1, 0)]);
    }

    #[test]
    fn group_count_bounded_by_ternary_cardinality() {
        // K=2: at most 9 anchor groups no matter the batch.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let sigs = ["TT", "TF", "TU", "FT", "FF", "FU", "UT", "UF", "UU"];
        let batch: Vec<Trajectory> = (0..10)
            .map(|i| {
                let specs: Vec<(&str, f64, Option<f64>, u64)> = (0..20)
                    .map(|_| (sigs[rng.gen_range(0..9)], 0.0, None, 0))
                    .collect();
                traj(i, &specs)
            })
            .collect();
        let groups = group_steps(&batch, GroupingMode::BeliefAnchor);
        assert!(groups.len() <= 9);
    }

    #[test]
    fn partitions_are_disjoint_and_covering() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let sigs = ["T", "F", "U"];
        for mode in [GroupingMode::BeliefAnchor, GroupingMode::StateHash] {
            let batch: Vec<Trajectory> = (0..5)
                .map(|i| {
                    let specs: Vec<(&str, f64, Option<f64>, u64)> = (0..8)
                        .map(|_| (sigs[rng.gen_range(0..3)], 0.0, None, rng.gen_range(0..4)))
                        .collect();
                    traj(i, &specs)
                })
                .collect();
            let groups = group_steps(&batch, mode);
            let mut seen = HashSet::new();
            for g in &groups {
                for m in &g.members {
                    assert!(seen.insert(*m), "member {m:?} in two groups");
                }
            }
            let total: usize = batch.iter().map(|t| t.steps.len()).sum();
            assert_eq!(seen.len(), total);
        }
    }

    #[test]
    fn none_mode_yields_no_groups() {
        let batch = vec![traj(0, &[("T", 0.0, None, 0)])];
        assert!(group_steps(&batch, GroupingMode::None).is_empty());
    }

    #[test]
    fn singleton_rule() {
        let batch = vec![traj(0, &[("T", 1.0, None, 0), ("F", 2.0, None, 1)])];
        let groups = group_steps(&batch, GroupingMode::BeliefAnchor);
        let returns = vec![vec![1.0, 2.0]];
        let advs = step_advantage(&groups, &returns, 1e-8);
        assert_eq!(advs[&(0, 0)], 0.0);
        assert_eq!(advs[&(0, 1)], 0.0);
    }

    #[test]
    fn two_member_group_normalization() {
        let batch = vec![
            traj(0, &[("T", 0.0, None, 0)]),
            traj(1, &[("T", 0.0, None, 0)]),
        ];
        let groups = group_steps(&batch, GroupingMode::BeliefAnchor);
        let returns = vec![vec![1.0], vec![3.0]];
        let advs = step_advantage(&groups, &returns, 1e-8);
        assert!((advs[&(0, 0)] + 1.0).abs() < 1e-7);
        assert!((advs[&(1, 0)] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn equal_return_group_is_zero() {
        let batch = vec![
            traj(0, &[("T", 0.0, None, 0)]),
            traj(1, &[("T", 0.0, None, 0)]),
            traj(2, &[("T", 0.0, None, 0)]),
        ];
        let groups = group_steps(&batch, GroupingMode::BeliefAnchor);
        let returns = vec![vec![0.7], vec![0.7], vec![0.7]];
        let advs = step_advantage(&groups, &returns, 1e-8);
        assert!(advs.values().all(|v| *v == 0.0));
    }

    #[test]
    fn total_advantage_combination() {
        assert!((total_advantage(1.0, -0.4, 0.5) - 0.8).abs() < 1e-15);
        assert_eq!(total_advantage(0.7, 123.0, 0.0), 0.7);
        assert_eq!(total_advantage(0.7, 0.0, 0.5), 0.7);
    }

    #[test]
    fn diagnostics_cases() {
        let batch = vec![
            traj(0, &[("T", 0.0, None, 0), ("F", 0.0, None, 0)]),
            traj(1, &[("U", 0.0, None, 0)]),
        ];
        let groups = group_steps(&batch, GroupingMode::BeliefAnchor);
        // Three groups, all singletons.
        let (ratio, mean) = grouping_diagnostics(&groups).unwrap();
        assert_eq!(ratio, 1.0);
        assert_eq!(mean, 1.0);

        let batch = vec![
            traj(0, &[("T", 0.0, None, 0)]),
            traj(1, &[("T", 0.0, None, 0)]),
            traj(2, &[("T", 0.0, None, 0)]),
            traj(3, &[("T", 0.0, None, 0)]),
        ];
        let groups = group_steps(&batch, GroupingMode::BeliefAnchor);
        let (ratio, mean) = grouping_diagnostics(&groups).unwrap();
        assert_eq!(ratio, 0.0);
        assert_eq!(mean, 4.0);

        assert!(grouping_diagnostics(&[]).is_err());
    }

    #[test]
    fn diagnostics_manual_count() {
        // 10 steps: anchors T x4, F x3, U x1, plus two singleton state sigs.
        let batch = vec![
            traj(
                0,
                &[
                    ("T", 0.0, None, 0),
                    ("T", 0.0, None, 0),
                    ("F", 0.0, None, 0),
                    ("F", 0.0, None, 0),
                    ("U", 0.0, None, 0),
                ],
            ),
            traj(
                1,
                &[
                    ("T", 0.0, None, 0),
                    ("T", 0.0, None, 0),
                    ("F", 0.0, None, 0),
                    ("TT", 0.0, None, 0),
                    ("FF", 0.0, None, 0),
                ],
            ),
        ];
        let groups = group_steps(&batch, GroupingMode::BeliefAnchor);
        // Hand count: groups T(4), F(3), U(1), TT(1), FF(1) -> 5 groups,
        // 3 singletons, mean size 10/5.
        let (ratio, mean) = grouping_diagnostics(&groups).unwrap();
        assert_eq!(ratio, 3.0 / 5.0);
        assert_eq!(mean, 2.0);
    }

    #[test]
    fn group_normalization_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..1000 {
            let n = rng.gen_range(2..12);
            let values: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 10.0 - 5.0).collect();
            let advs = normalize_group(&values, 1e-8);
            let sum: f64 = advs.iter().sum();
            assert!(sum.abs() < 1e-9, "sum {sum}");

            // Shift invariance.
            let c = rng.gen::<f64>() * 100.0 - 50.0;
            let shifted: Vec<f64> = values.iter().map(|v| v + c).collect();
            let shifted_advs = normalize_group(&shifted, 1e-8);
            for (a, b) in advs.iter().zip(&shifted_advs) {
                assert!((a - b).abs() < 1e-6, "shift broke normalization");
            }

            // Scale invariance with eps = 0.
            let advs0 = normalize_group(&values, 0.0);
            let s = rng.gen::<f64>() * 5.0 + 0.1;
            let scaled: Vec<f64> = values.iter().map(|v| v * s).collect();
            let scaled_advs = normalize_group(&scaled, 0.0);
            for (a, b) in advs0.iter().zip(&scaled_advs) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn none_grouping_reduces_to_episode_advantage() {
        let batch = vec![
            traj(0, &[("T", 1.0, Some(0.5), 0), ("F", 0.0, None, 1)]),
            traj(1, &[("T", 0.0, None, 0), ("U", 0.0, Some(1.0), 2)]),
        ];
        let out = compute_total_advantages(
            &batch,
            0.95,
            1.0,
            0.7,
            1e-8,
            GroupingMode::None,
            ReturnMode::Suffix,
            EpisodeSignal::Return,
        )
        .unwrap();
        for (i, traj) in batch.iter().enumerate() {
            for t in 0..traj.steps.len() {
                assert_eq!(out.total[&(i, t)], out.episode[i]);
            }
        }
    }
}
