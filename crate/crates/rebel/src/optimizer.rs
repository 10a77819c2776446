//! Clipped-surrogate policy optimization with KL regularization, rollout
//! collection, and the training iteration.
//!
//! The objective is the trajectory-averaged clipped surrogate over the joint
//! (belief, action) importance ratio, minus a KL penalty against the frozen
//! reference policy, maximized by gradient ascent. Each iteration collects N
//! fresh rollouts, attaches consistency rewards and advantages, and takes one
//! (or config-many) gradient steps.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advantage::{
    compute_total_advantages, group_steps, grouping_diagnostics, AdvantageOutput, EpisodeSignal,
    GroupingMode, ReturnMode,
};
use crate::consistency::{retro_adjust, ConsistencyTracker};
use crate::env::{mix_seed, Action, ContainerWorld, EnvConfig};
use crate::policy::{Policy, ReferencePolicy};
use crate::predicates::{belief_drift, canonicalize_anchor};
use crate::rollout::{StepRecord, Trajectory};
use crate::{Error, Result};

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateRule {
    /// theta' = theta + lr * grad.
    Plain,
    /// Adaptive moment estimation (ascent form).
    Adam,
}

/// All optimization knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Step-advantage weight omega in A_tot = A_E + omega * A_S.
    pub omega: f64,
    /// Consistency-reward weight eta in r_tot = r_env + eta * r_cons.
    pub eta: f64,
    pub gamma: f64,
    pub eps_clip: f64,
    pub eps_norm: f64,
    /// KL penalty coefficient beta.
    pub beta: f64,
    pub lr: f64,
    /// Rollouts per iteration (the normalization group).
    pub group_size: usize,
    pub iterations: usize,
    pub grouping: GroupingMode,
    pub return_mode: ReturnMode,
    pub signal: EpisodeSignal,
    /// Inner gradient epochs per collected batch.
    pub epochs: usize,
    pub update_rule: UpdateRule,
    /// Hidden width of the policy heads; `None` = linear.
    pub hidden: Option<usize>,
    pub belief_head: bool,
    /// Initial Unknown-logit bias for the belief head: the policy starts with
    /// conservative, sparse assertions instead of uniform ternary noise.
    pub unknown_bias: f64,
    /// Master seed for rollout sampling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            omega: 0.5,
            eta: 0.1,
            gamma: 0.95,
            eps_clip: 0.2,
            eps_norm: 1e-8,
            beta: 0.01,
            lr: 0.3,
            group_size: 16,
            iterations: 150,
            grouping: GroupingMode::BeliefAnchor,
            return_mode: ReturnMode::Suffix,
            signal: EpisodeSignal::Return,
            epochs: 1,
            update_rule: UpdateRule::Plain,
            hidden: None,
            belief_head: true,
            unknown_bias: 2.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_clip > 0.0 && self.eps_clip < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "eps_clip must be in (0,1), got {}",
                self.eps_clip
            )));
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be in (0,1], got {}",
                self.gamma
            )));
        }
        if self.omega < 0.0 || self.eta < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "omega and eta must be >= 0, got {} and {}",
                self.omega, self.eta
            )));
        }
        if self.group_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "group_size must be >= 2, got {}",
                self.group_size
            )));
        }
        if self.eps_norm < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "eps_norm must be >= 0, got {}",
                self.eps_norm
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.lr < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lr must be >= 0, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// What one gradient evaluation reported.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UpdateReport {
    pub objective: f64,
    pub mean_abs_rho_dev: f64,
    pub max_abs_rho_dev: f64,
    /// Fraction of steps where the clip branch was strictly active; in [0,1].
    pub clip_fraction: f64,
    pub mean_kl: f64,
    pub grad_norm: f64,
    pub wall_time_s: f64,
}

/// rho = pi_theta(belief, action | h) / pi_old, via stored sampling-time
/// log-probability. Always strictly positive for finite parameters.
pub fn importance_ratio(policy: &Policy, theta: &[f64], step: &StepRecord) -> Result<f64> {
    let lp = policy.logprob_joint(theta, &step.features, &step.belief, step.action, &step.admissible)?;
    let ratio = (lp - step.logprob_old).exp();
    if !ratio.is_finite() || ratio <= 0.0 {
        return Err(Error::Numerical(format!("bad importance ratio {ratio}")));
    }
    Ok(ratio)
}

/// Low-variance sampled KL estimate k(r) = r - 1 - log r with
/// r = pi_ref(y|h) / pi_theta(y|h) on the step's sampled joint output.
/// Non-negative for every r > 0.
pub fn kl_term(
    policy: &Policy,
    theta: &[f64],
    reference: &ReferencePolicy,
    step: &StepRecord,
) -> Result<f64> {
    let lp = policy.logprob_joint(theta, &step.features, &step.belief, step.action, &step.admissible)?;
    let lp_ref = policy.logprob_joint(
        reference.theta(),
        &step.features,
        &step.belief,
        step.action,
        &step.admissible,
    )?;
    let log_r = lp_ref - lp;
    Ok(log_r.exp() - 1.0 - log_r)
}

/// Objective value, analytic gradient, and diagnostics for one batch with
/// attached advantages.
///
/// value = (1/N) sum_i (1/T_i) sum_t [ min(rho A, clip(rho) A) - beta k(r) ].
/// The clip branch has zero gradient through rho; the KL gradient is
/// (1 - r) * grad log pi_theta per the estimator.
pub fn clipped_objective_and_grad(
    batch: &[Trajectory],
    advantages: &AdvantageOutput,
    policy: &Policy,
    theta: &[f64],
    reference: &ReferencePolicy,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>, UpdateReport)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let start = std::time::Instant::now();
    let n = batch.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; policy.param_len()];
    let mut abs_dev_sum = 0.0;
    let mut abs_dev_max = 0.0f64;
    let mut clipped_steps = 0usize;
    let mut total_steps = 0usize;
    let mut kl_sum = 0.0;

    for (i, traj) in batch.iter().enumerate() {
        if traj.steps.is_empty() {
            return Err(Error::ContractViolation(format!(
                "trajectory {i} has no steps"
            )));
        }
        let w = 1.0 / (n * traj.steps.len() as f64);
        for (t, step) in traj.steps.iter().enumerate() {
            let lp = policy.logprob_joint(
                theta,
                &step.features,
                &step.belief,
                step.action,
                &step.admissible,
            )?;
            let rho = (lp - step.logprob_old).exp();
            if !rho.is_finite() {
                return Err(Error::Numerical(format!("non-finite ratio {rho}")));
            }
            let a = *advantages
                .total
                .get(&(i, t))
                .ok_or_else(|| Error::ContractViolation(format!("missing A_tot for ({i},{t})")))?;
            let clipped_rho = rho.clamp(1.0 - cfg.eps_clip, 1.0 + cfg.eps_clip);
            let unclipped = rho * a;
            let clipped = clipped_rho * a;
            // min() semantics: the gradient flows through rho only when the
            // unclipped branch attains the minimum.
            let (term, surrogate_coeff) = if unclipped <= clipped {
                (unclipped, rho * a)
            } else {
                clipped_steps += 1;
                (clipped, 0.0)
            };

            let lp_ref = policy.logprob_joint(
                reference.theta(),
                &step.features,
                &step.belief,
                step.action,
                &step.admissible,
            )?;
            let log_r = lp_ref - lp;
            let r = log_r.exp();
            let kl = r - 1.0 - log_r;

            value += w * (term - cfg.beta * kl);
            let scale = w * (surrogate_coeff - cfg.beta * (1.0 - r));
            if scale != 0.0 {
                policy.accumulate_grad_logprob(
                    theta,
                    &step.features,
                    &step.belief,
                    step.action,
                    &step.admissible,
                    scale,
                    &mut grad,
                )?;
            }

            let dev = (rho - 1.0).abs();
            abs_dev_sum += dev;
            abs_dev_max = abs_dev_max.max(dev);
            kl_sum += kl;
            total_steps += 1;
        }
    }
    if !value.is_finite() {
        return Err(Error::Numerical(format!("non-finite objective {value}")));
    }
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let report = UpdateReport {
        objective: value,
        mean_abs_rho_dev: abs_dev_sum / total_steps as f64,
        max_abs_rho_dev: abs_dev_max,
        clip_fraction: clipped_steps as f64 / total_steps as f64,
        mean_kl: kl_sum / total_steps as f64,
        grad_norm,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((value, grad, report))
}

/// Adam first/second moment state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One gradient-ascent step; `adam` carries the moment state between calls
/// when the adaptive rule is selected.
pub fn apply_update(
    theta: &mut [f64],
    grad: &[f64],
    lr: f64,
    rule: UpdateRule,
    adam: &mut Option<AdamState>,
) -> Result<()> {
    if theta.len() != grad.len() {
        return Err(Error::LengthMismatch {
            expected: theta.len(),
            got: grad.len(),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    match rule {
        UpdateRule::Plain => {
            for (w, g) in theta.iter_mut().zip(grad) {
                *w += lr * g;
            }
        }
        UpdateRule::Adam => {
            let state = adam.get_or_insert_with(|| AdamState::new(theta.len()));
            state.t += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
            for i in 0..theta.len() {
                state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * grad[i];
                state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                let mhat = state.m[i] / bc1;
                let vhat = state.v[i] / bc2;
                theta[i] += lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
    Ok(())
}

/// Per-iteration aggregate metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub success_rate: f64,
    pub mean_episode_len: f64,
    pub mean_drift: f64,
    /// Mean observable predicate fraction over steps.
    pub mean_kappa: f64,
    pub singleton_ratio_belief: Option<f64>,
    pub singleton_ratio_statehash: Option<f64>,
    pub mean_group_size: Option<f64>,
    pub objective: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    /// Environment steps consumed by this iteration.
    pub env_steps: u64,
}

/// Collects one full episode under the current parameters. Deterministic in
/// (world config, train seed, episode counter, theta).
pub fn collect_episode(
    world: &ContainerWorld,
    policy: &Policy,
    theta: &[f64],
    train_seed: u64,
    episode_counter: u64,
) -> Result<Trajectory> {
    let space = world.predicate_space();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
        train_seed ^ 0xa5a5_a5a5_5a5a_5a5a,
        episode_counter,
    ));
    let (mut state, mut obs) = world.reset(episode_counter);
    let mut tracker = ConsistencyTracker::new();
    let mut steps = Vec::new();
    let mut prev_belief = None;
    let mut prev_action = None;
    let mut episode_return = 0.0;
    let mut success = false;

    for t in 0.. {
        let features = policy.featurize(prev_belief.as_ref(), &obs, prev_action, t);
        let admissible = world.admissible_mask(&state);
        let (belief, action_idx, logprob) =
            policy.sample_step(theta, &features, &admissible, &mut rng)?;
        let action = Action::from_index(action_idx, policy.num_containers())
            .ok_or_else(|| Error::ContractViolation(format!("bad action index {action_idx}")))?;
        let state_hash = state.stable_hash();
        let transition = world.step(&state, action);
        let mask = world.observability_mask(&state, action, &transition.observation);
        let verified = world.true_projection(&transition.state);
        let outcome = tracker.observe(&belief, &mask, &verified, t)?;
        let drift = belief_drift(&belief, &verified)?;
        let anchor = canonicalize_anchor(space, &belief)?;
        let cons_checked = outcome.per_predicate.len() as u32;
        let cons_matched = outcome.per_predicate.iter().map(|(_, i)| *i as u32).sum();

        episode_return += transition.reward;
        steps.push(StepRecord {
            traj_id: 0,
            t,
            belief: belief.clone(),
            anchor,
            action: action_idx,
            r_env: transition.reward,
            r_cons: outcome.reward,
            cons_matched,
            cons_checked,
            mask,
            resolved_here: outcome.resolved,
            logprob_old: logprob,
            features,
            admissible,
            state_hash,
            drift,
        });

        success = transition.state.delivered();
        let done = transition.done;
        prev_belief = Some(belief);
        prev_action = Some(action_idx);
        state = transition.state;
        obs = transition.observation;
        if done {
            break;
        }
    }

    let mut traj = Trajectory {
        id: episode_counter as usize,
        steps,
        success,
        episode_return,
    };
    retro_adjust(&mut traj);
    Ok(traj)
}

/// One full training run state: environment, policy, parameters, reference,
/// and the monotonically increasing episode counter behind seeding.
#[derive(Debug)]
pub struct Trainer {
    pub world: ContainerWorld,
    pub policy: Policy,
    pub theta: Vec<f64>,
    pub reference: ReferencePolicy,
    pub cfg: TrainConfig,
    adam: Option<AdamState>,
    episode_counter: u64,
    pub cum_env_steps: u64,
}

impl Trainer {
    pub fn new(env_cfg: EnvConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let world = ContainerWorld::new(env_cfg)?;
        let policy = Policy::for_world(world.config(), cfg.hidden, cfg.belief_head);
        let mut theta = policy.zero_params();
        if cfg.hidden.is_some() {
            // A hidden layer at exactly zero is a saddle point with zero
            // gradient everywhere; break it with small deterministic noise.
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x1217));
            for w in theta.iter_mut() {
                *w = 0.01 * (rand::Rng::gen::<f64>(&mut rng) * 2.0 - 1.0);
            }
        }
        if cfg.belief_head {
            policy.apply_unknown_bias(&mut theta, cfg.unknown_bias);
        }
        let reference = ReferencePolicy::capture(&theta);
        Ok(Self {
            world,
            policy,
            theta,
            reference,
            cfg,
            adam: None,
            episode_counter: 0,
            cum_env_steps: 0,
        })
    }

    /// Collects N rollouts under the current parameters without updating.
    pub fn collect_batch(&mut self) -> Result<Vec<Trajectory>> {
        let mut batch = Vec::with_capacity(self.cfg.group_size);
        for i in 0..self.cfg.group_size {
            let mut traj = collect_episode(
                &self.world,
                &self.policy,
                &self.theta,
                self.cfg.seed,
                self.episode_counter,
            )?;
            self.episode_counter += 1;
            traj.id = i;
            for step in &mut traj.steps {
                step.traj_id = i;
            }
            self.cum_env_steps += traj.steps.len() as u64;
            batch.push(traj);
        }
        Ok(batch)
    }

    /// Rollouts, advantages, gradient step(s), metrics. Returns the batch so
    /// callers can log sampled trajectories.
    pub fn train_iteration(&mut self) -> Result<(IterationMetrics, Vec<Trajectory>)> {
        let steps_before = self.cum_env_steps;
        let batch = self.collect_batch()?;
        let advantages = compute_total_advantages(
            &batch,
            self.cfg.gamma,
            self.cfg.eta,
            self.cfg.omega,
            self.cfg.eps_norm,
            self.cfg.grouping,
            self.cfg.return_mode,
            self.cfg.signal,
        )?;
        let mut last_report = UpdateReport::default();
        for _ in 0..self.cfg.epochs {
            let (_, grad, report) = clipped_objective_and_grad(
                &batch,
                &advantages,
                &self.policy,
                &self.theta,
                &self.reference,
                &self.cfg,
            )?;
            apply_update(
                &mut self.theta,
                &grad,
                self.cfg.lr,
                self.cfg.update_rule,
                &mut self.adam,
            )?;
            last_report = report;
        }

        let total_steps: usize = batch.iter().map(|t| t.steps.len()).sum();
        let success_rate =
            batch.iter().filter(|t| t.success).count() as f64 / batch.len() as f64;
        let mean_episode_len = total_steps as f64 / batch.len() as f64;
        let mean_drift = batch
            .iter()
            .flat_map(|t| t.steps.iter())
            .map(|s| s.drift)
            .sum::<f64>()
            / total_steps as f64;
        let mean_kappa = batch
            .iter()
            .flat_map(|t| t.steps.iter())
            .map(|s| s.mask.observable_fraction())
            .sum::<f64>()
            / total_steps as f64;

        let (singleton_ratio_belief, singleton_ratio_statehash, mean_group_size) =
            if self.cfg.grouping == GroupingMode::None {
                (None, None, None)
            } else {
                let belief_groups = group_steps(&batch, GroupingMode::BeliefAnchor);
                let state_groups = group_steps(&batch, GroupingMode::StateHash);
                let (rb, _) = grouping_diagnostics(&belief_groups)?;
                let (rs, _) = grouping_diagnostics(&state_groups)?;
                let own = match self.cfg.grouping {
                    GroupingMode::BeliefAnchor => &belief_groups,
                    GroupingMode::StateHash => &state_groups,
                    GroupingMode::None => unreachable!(),
                };
                let (_, mean_size) = grouping_diagnostics(own)?;
                (Some(rb), Some(rs), Some(mean_size))
            };

        let metrics = IterationMetrics {
            success_rate,
            mean_episode_len,
            mean_drift,
            mean_kappa,
            singleton_ratio_belief,
            singleton_ratio_statehash,
            mean_group_size,
            objective: last_report.objective,
            kl: last_report.mean_kl,
            clip_fraction: last_report.clip_fraction,
            env_steps: self.cum_env_steps - steps_before,
        };
        Ok((metrics, batch))
    }

    /// Evaluation rollouts at the current parameters; no update, but the
    /// episode counter advances so later training is not replayed data.
    pub fn evaluate(&mut self, episodes: usize) -> Result<Vec<Trajectory>> {
        let mut out = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let traj = collect_episode(
                &self.world,
                &self.policy,
                &self.theta,
                self.cfg.seed,
                self.episode_counter,
            )?;
            self.episode_counter += 1;
            out.push(traj);
        }
        Ok(out)
    }
}

/// Dedicated episode-level baseline update path: group-normalized episode
/// advantages only, written straight-line without the step-grouping
/// machinery. Exists so the full pipeline's degenerate configuration
/// (omega = 0, eta = 0, no grouping) can be checked against an independent
/// implementation.
pub fn grpo_objective_and_grad(
    batch: &[Trajectory],
    policy: &Policy,
    theta: &[f64],
    reference: &ReferencePolicy,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let signals: Vec<f64> = batch
        .iter()
        .map(|traj| match cfg.signal {
            EpisodeSignal::Return => {
                let (sum, n) = traj
                    .steps
                    .iter()
                    .filter_map(|s| s.r_cons)
                    .fold((0.0, 0u32), |(s, n), r| (s + r, n + 1));
                let mean_cons = if n == 0 { 0.0 } else { sum / n as f64 };
                traj.episode_return + cfg.eta * mean_cons
            }
            EpisodeSignal::Success => traj.success as u8 as f64,
        })
        .collect();
    let n = signals.len() as f64;
    let all_equal = signals.windows(2).all(|w| w[0] == w[1]);
    let episode_adv: Vec<f64> = if all_equal {
        vec![0.0; signals.len()]
    } else {
        let mean: f64 = signals.iter().sum::<f64>() / n;
        let var: f64 = signals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        signals.iter().map(|v| (v - mean) / (std + cfg.eps_norm)).collect()
    };

    let mut value = 0.0;
    let mut grad = vec![0.0; policy.param_len()];
    for (i, traj) in batch.iter().enumerate() {
        let w = 1.0 / (n * traj.steps.len() as f64);
        let a = episode_adv[i];
        for step in &traj.steps {
            let lp = policy.logprob_joint(
                theta,
                &step.features,
                &step.belief,
                step.action,
                &step.admissible,
            )?;
            let rho = (lp - step.logprob_old).exp();
            let clipped_rho = rho.clamp(1.0 - cfg.eps_clip, 1.0 + cfg.eps_clip);
            let unclipped = rho * a;
            let clipped = clipped_rho * a;
            let (term, surrogate_coeff) = if unclipped <= clipped {
                (unclipped, rho * a)
            } else {
                (clipped, 0.0)
            };
            let lp_ref = policy.logprob_joint(
                reference.theta(),
                &step.features,
                &step.belief,
                step.action,
                &step.admissible,
            )?;
            let log_r = lp_ref - lp;
            let r = log_r.exp();
            let kl = r - 1.0 - log_r;
            value += w * (term - cfg.beta * kl);
            let scale = w * (surrogate_coeff - cfg.beta * (1.0 - r));
            if scale != 0.0 {
                policy.accumulate_grad_logprob(
                    theta,
                    &step.features,
                    &step.belief,
                    step.action,
                    &step.admissible,
                    scale,
                    &mut grad,
                )?;
            }
        }
    }
    Ok((value, grad))
}
