//! The factorized belief+action policy.
//!
//! Two heads over a shared feature vector: a belief head emitting K
//! independent 3-way (true/false/unknown) distributions, and an action head
//! over the masked admissible set, conditioned on the features concatenated
//! with the sampled belief's one-hot encoding. Heads are linear by default;
//! a config knob inserts one tanh hidden layer. Log-probabilities and
//! gradients are exact.

use rand::Rng;

use crate::env::{Action, EnvConfig, Location, Observation};
use crate::predicates::{Belief, Tri};
use crate::{Error, Result};

/// Frozen copy of the parameters captured at initialization, used for KL
/// regularization. Never mutated afterwards.
#[derive(Debug, Clone)]
pub struct ReferencePolicy {
    theta: Vec<f64>,
}

impl ReferencePolicy {
    pub fn capture(theta: &[f64]) -> Self {
        Self {
            theta: theta.to_vec(),
        }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
}

/// One head's slice of the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct HeadLayout {
    offset: usize,
    in_dim: usize,
    out_dim: usize,
    hidden: Option<usize>,
}

impl HeadLayout {
    fn param_len(&self) -> usize {
        match self.hidden {
            None => self.out_dim * self.in_dim,
            Some(h) => h * self.in_dim + self.out_dim * h,
        }
    }

    /// Logits plus the tanh activations needed for backprop.
    fn forward(&self, theta: &[f64], x: &[f64]) -> (Vec<f64>, Option<Vec<f64>>) {
        debug_assert_eq!(x.len(), self.in_dim);
        let p = &theta[self.offset..self.offset + self.param_len()];
        match self.hidden {
            None => {
                let mut logits = vec![0.0; self.out_dim];
                for o in 0..self.out_dim {
                    let row = &p[o * self.in_dim..(o + 1) * self.in_dim];
                    logits[o] = row.iter().zip(x).map(|(w, xi)| w * xi).sum();
                }
                (logits, None)
            }
            Some(h) => {
                let (w1, w2) = p.split_at(h * self.in_dim);
                let mut act = vec![0.0; h];
                for j in 0..h {
                    let row = &w1[j * self.in_dim..(j + 1) * self.in_dim];
                    let pre: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum();
                    act[j] = pre.tanh();
                }
                let mut logits = vec![0.0; self.out_dim];
                for o in 0..self.out_dim {
                    let row = &w2[o * h..(o + 1) * h];
                    logits[o] = row.iter().zip(&act).map(|(w, aj)| w * aj).sum();
                }
                (logits, Some(act))
            }
        }
    }

    /// Accumulates `scale * d(logits . dlogits)/dtheta` into `grad`.
    fn backward(
        &self,
        theta: &[f64],
        x: &[f64],
        cache: &Option<Vec<f64>>,
        dlogits: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) {
        let g = &mut grad[self.offset..self.offset + self.param_len()];
        match self.hidden {
            None => {
                for o in 0..self.out_dim {
                    let d = scale * dlogits[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut g[o * self.in_dim..(o + 1) * self.in_dim];
                    for (gi, xi) in row.iter_mut().zip(x) {
                        *gi += d * xi;
                    }
                }
            }
            Some(h) => {
                let act = cache.as_ref().expect("hidden cache");
                let p = &theta[self.offset..self.offset + self.param_len()];
                let w2 = &p[h * self.in_dim..];
                let mut dpre = vec![0.0; h];
                for o in 0..self.out_dim {
                    let d = scale * dlogits[o];
                    if d == 0.0 {
                        continue;
                    }
                    for j in 0..h {
                        dpre[j] += d * w2[o * h + j];
                    }
                }
                for (j, dp) in dpre.iter_mut().enumerate() {
                    *dp *= 1.0 - act[j] * act[j];
                }
                let (g1, g2) = g.split_at_mut(h * self.in_dim);
                for j in 0..h {
                    if dpre[j] != 0.0 {
                        let row = &mut g1[j * self.in_dim..(j + 1) * self.in_dim];
                        for (gi, xi) in row.iter_mut().zip(x) {
                            *gi += dpre[j] * xi;
                        }
                    }
                }
                for o in 0..self.out_dim {
                    let d = scale * dlogits[o];
                    if d == 0.0 {
                        continue;
                    }
                    for j in 0..h {
                        g2[o * h + j] += d * act[j];
                    }
                }
            }
        }
    }
}

/// Policy architecture for one (K, M, horizon) world. Parameters live in a
/// separate flat vector so the same `Policy` can evaluate many candidates.
#[derive(Debug, Clone)]
pub struct Policy {
    k: usize,
    m: usize,
    horizon: usize,
    feature_len: usize,
    action_dim: usize,
    belief_head_enabled: bool,
    belief_layout: HeadLayout,
    action_layout: HeadLayout,
    param_len: usize,
}

impl Policy {
    pub fn new(
        k: usize,
        num_containers: usize,
        horizon: usize,
        hidden: Option<usize>,
        belief_head_enabled: bool,
    ) -> Self {
        let m = num_containers;
        let action_dim = Action::space_size(m);
        let obs_dim = 3 * m + 5;
        let feature_len = 3 * k + obs_dim + action_dim + 2;
        let belief_layout = HeadLayout {
            offset: 0,
            in_dim: feature_len,
            out_dim: 3 * k,
            hidden,
        };
        let action_layout = HeadLayout {
            offset: belief_layout.param_len(),
            in_dim: feature_len + 3 * k,
            out_dim: action_dim,
            hidden,
        };
        let param_len = belief_layout.param_len() + action_layout.param_len();
        Self {
            k,
            m,
            horizon,
            feature_len,
            action_dim,
            belief_head_enabled,
            belief_layout,
            action_layout,
            param_len,
        }
    }

    pub fn for_world(cfg: &EnvConfig, hidden: Option<usize>, belief_head_enabled: bool) -> Self {
        Self::new(
            cfg.num_containers + 2,
            cfg.num_containers,
            cfg.horizon,
            hidden,
            belief_head_enabled,
        )
    }

    pub fn param_len(&self) -> usize {
        self.param_len
    }

    /// Zero initialization: every distribution starts uniform.
    pub fn zero_params(&self) -> Vec<f64> {
        vec![0.0; self.param_len]
    }

    /// Adds `bias` to every predicate's Unknown logit via the constant bias
    /// feature, making the initial belief policy conservative: mostly-Unknown
    /// assertions instead of uniform ternary noise. Linear heads only; a
    /// hidden layer has no direct logit/feature weights to shift.
    pub fn apply_unknown_bias(&self, theta: &mut [f64], bias: f64) {
        if self.belief_layout.hidden.is_some() || bias == 0.0 {
            return;
        }
        let in_dim = self.belief_layout.in_dim;
        let bias_col = in_dim - 1;
        for k in 0..self.k {
            let row = 3 * k + 2; // Unknown logit of predicate k.
            theta[self.belief_layout.offset + row * in_dim + bias_col] += bias;
        }
    }

    pub fn feature_len(&self) -> usize {
        self.feature_len
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn predicate_count(&self) -> usize {
        self.k
    }

    pub fn num_containers(&self) -> usize {
        self.m
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn hidden(&self) -> Option<usize> {
        self.belief_layout.hidden
    }

    pub fn belief_head_enabled(&self) -> bool {
        self.belief_head_enabled
    }

    /// Encodes one step's decision context: previous belief (ternary one-hot
    /// per predicate), observation fields, previous action one-hot, the
    /// normalized step index, and a constant bias term. Deterministic; fixed
    /// length.
    pub fn featurize(
        &self,
        prev_belief: Option<&Belief>,
        obs: &Observation,
        prev_action: Option<usize>,
        step_index: usize,
    ) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.feature_len);
        // Previous belief block: all-zero on the initial step.
        match prev_belief {
            Some(b) => {
                for v in b.values() {
                    let mut block = [0.0; 3];
                    block[v.index()] = 1.0;
                    f.extend_from_slice(&block);
                }
            }
            None => f.extend(std::iter::repeat(0.0).take(3 * self.k)),
        }
        // Agent location one-hot over M containers + goal.
        for j in 0..self.m {
            f.push((obs.agent_location == Location::Container(j)) as u8 as f64);
        }
        f.push((obs.agent_location == Location::Goal) as u8 as f64);
        // Visible container: flag, index one-hot, contains bit.
        f.push(obs.visible_container.is_some() as u8 as f64);
        for j in 0..self.m {
            f.push(matches!(obs.visible_container, Some((c, _)) if c == j) as u8 as f64);
        }
        f.push(matches!(obs.visible_container, Some((_, true))) as u8 as f64);
        // Clue one-hot.
        for j in 0..self.m {
            f.push((obs.clue == Some(j)) as u8 as f64);
        }
        f.push(obs.holding as u8 as f64);
        f.push(obs.done_flag as u8 as f64);
        // Previous action one-hot: all-zero on the initial step.
        for a in 0..self.action_dim {
            f.push((prev_action == Some(a)) as u8 as f64);
        }
        f.push(step_index as f64 / self.horizon as f64);
        // Constant bias feature.
        f.push(1.0);
        debug_assert_eq!(f.len(), self.feature_len);
        f
    }

    /// K independent 3-way distributions over {True, False, Unknown}.
    pub fn belief_distribution(&self, theta: &[f64], features: &[f64]) -> Result<Vec<[f64; 3]>> {
        let (logits, _) = self.belief_layout.forward(theta, features);
        let mut dists = Vec::with_capacity(self.k);
        for k in 0..self.k {
            let block = &logits[3 * k..3 * k + 3];
            dists.push(softmax3(block)?);
        }
        Ok(dists)
    }

    fn belief_onehot(&self, belief: &Belief) -> Vec<f64> {
        let mut enc = vec![0.0; 3 * self.k];
        for (i, v) in belief.values().iter().enumerate() {
            enc[3 * i + v.index()] = 1.0;
        }
        enc
    }

    fn action_input(&self, features: &[f64], belief: &Belief) -> Vec<f64> {
        let mut x = Vec::with_capacity(features.len() + 3 * self.k);
        x.extend_from_slice(features);
        x.extend_from_slice(&self.belief_onehot(belief));
        x
    }

    /// Masked softmax over the admissible set; inadmissible actions get
    /// probability exactly zero.
    pub fn action_distribution(
        &self,
        theta: &[f64],
        features: &[f64],
        belief: &Belief,
        admissible: &[bool],
    ) -> Result<Vec<f64>> {
        if !admissible.iter().any(|a| *a) {
            return Err(Error::ContractViolation(
                "empty admissible action set".into(),
            ));
        }
        let x = self.action_input(features, belief);
        let (logits, _) = self.action_layout.forward(theta, &x);
        masked_softmax(&logits, admissible)
    }

    /// log pi(belief, action | features) = sum_k log p(belief_k) + log p(action).
    /// With the belief head disabled the belief factor contributes zero.
    pub fn logprob_joint(
        &self,
        theta: &[f64],
        features: &[f64],
        belief: &Belief,
        action: usize,
        admissible: &[bool],
    ) -> Result<f64> {
        let mut lp = 0.0;
        if self.belief_head_enabled {
            let (logits, _) = self.belief_layout.forward(theta, features);
            for k in 0..self.k {
                let block = &logits[3 * k..3 * k + 3];
                lp += log_softmax3(block, belief.get(k).index())?;
            }
        }
        if !admissible.get(action).copied().unwrap_or(false) {
            return Err(Error::Numerical(format!(
                "action {action} has zero probability (inadmissible)"
            )));
        }
        let x = self.action_input(features, belief);
        let (logits, _) = self.action_layout.forward(theta, &x);
        lp += masked_log_prob(&logits, admissible, action)?;
        if !lp.is_finite() {
            return Err(Error::Numerical(format!("non-finite log-prob {lp}")));
        }
        Ok(lp)
    }

    /// Analytic gradient of `logprob_joint`, accumulated into `grad` with the
    /// given scale. Returns the log-probability.
    pub fn accumulate_grad_logprob(
        &self,
        theta: &[f64],
        features: &[f64],
        belief: &Belief,
        action: usize,
        admissible: &[bool],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        debug_assert_eq!(grad.len(), self.param_len);
        let mut lp = 0.0;
        if self.belief_head_enabled {
            let (logits, cache) = self.belief_layout.forward(theta, features);
            let mut dlogits = vec![0.0; 3 * self.k];
            for k in 0..self.k {
                let block = &logits[3 * k..3 * k + 3];
                let chosen = belief.get(k).index();
                lp += log_softmax3(block, chosen)?;
                let p = softmax3(block)?;
                for c in 0..3 {
                    dlogits[3 * k + c] = (c == chosen) as u8 as f64 - p[c];
                }
            }
            self.belief_layout
                .backward(theta, features, &cache, &dlogits, scale, grad);
        }
        if !admissible.get(action).copied().unwrap_or(false) {
            return Err(Error::Numerical(format!(
                "action {action} has zero probability (inadmissible)"
            )));
        }
        let x = self.action_input(features, belief);
        let (logits, cache) = self.action_layout.forward(theta, &x);
        lp += masked_log_prob(&logits, admissible, action)?;
        let probs = masked_softmax(&logits, admissible)?;
        let mut dlogits = vec![0.0; self.action_dim];
        for a in 0..self.action_dim {
            dlogits[a] = (a == action) as u8 as f64 - probs[a];
        }
        self.action_layout
            .backward(theta, &x, &cache, &dlogits, scale, grad);
        Ok(lp)
    }

    /// Convenience wrapper returning a fresh gradient vector.
    pub fn grad_logprob_joint(
        &self,
        theta: &[f64],
        features: &[f64],
        belief: &Belief,
        action: usize,
        admissible: &[bool],
    ) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.param_len];
        let lp =
            self.accumulate_grad_logprob(theta, features, belief, action, admissible, 1.0, &mut grad)?;
        Ok((lp, grad))
    }

    /// Samples a belief (per-predicate) then an action from the masked
    /// softmax conditioned on it, recording the joint log-prob.
    pub fn sample_step<R: Rng>(
        &self,
        theta: &[f64],
        features: &[f64],
        admissible: &[bool],
        rng: &mut R,
    ) -> Result<(Belief, usize, f64)> {
        let belief = if self.belief_head_enabled {
            let dists = self.belief_distribution(theta, features)?;
            Belief::new(
                dists
                    .iter()
                    .map(|p| Tri::from_index(sample_categorical(p, rng)).unwrap())
                    .collect(),
            )
        } else {
            Belief::all_unknown(self.k)
        };
        let probs = self.action_distribution(theta, features, &belief, admissible)?;
        let action = sample_categorical(&probs, rng);
        let logprob = self.logprob_joint(theta, features, &belief, action, admissible)?;
        Ok((belief, action, logprob))
    }
}

fn softmax3(logits: &[f64]) -> Result<[f64; 3]> {
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numerical("non-finite belief logits".into()));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok([e[0] / z, e[1] / z, e[2] / z])
}

fn log_softmax3(logits: &[f64], idx: usize) -> Result<f64> {
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numerical("non-finite belief logits".into()));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    Ok(logits[idx] - m - z.ln())
}

fn masked_softmax(logits: &[f64], admissible: &[bool]) -> Result<Vec<f64>> {
    let m = logits
        .iter()
        .zip(admissible)
        .filter(|(_, a)| **a)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::Numerical("non-finite action logits".into()));
    }
    let mut probs = vec![0.0; logits.len()];
    let mut z = 0.0;
    for (i, (l, a)) in logits.iter().zip(admissible).enumerate() {
        if *a {
            probs[i] = (l - m).exp();
            z += probs[i];
        }
    }
    for p in &mut probs {
        *p /= z;
    }
    Ok(probs)
}

fn masked_log_prob(logits: &[f64], admissible: &[bool], action: usize) -> Result<f64> {
    let m = logits
        .iter()
        .zip(admissible)
        .filter(|(_, a)| **a)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::Numerical("non-finite action logits".into()));
    }
    let z: f64 = logits
        .iter()
        .zip(admissible)
        .filter(|(_, a)| **a)
        .map(|(l, _)| (l - m).exp())
        .sum();
    Ok(logits[action] - m - z.ln())
}

fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

// ---------------------------------------------------------------------------
// Checkpoints: flat little-endian f64 array with a small header.
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"RBLC";
const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint identity fields; must match the policy the file is loaded into.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub k: u32,
    pub m: u32,
    pub horizon: u32,
    pub hidden: u32,
    pub belief_head: u32,
    pub param_len: u64,
}

/// Writes the parameters bit-exactly: header then `param_len` LE f64 values.
pub fn save_checkpoint(policy: &Policy, theta: &[f64], path: &std::path::Path) -> Result<()> {
    let mut buf = Vec::with_capacity(36 + theta.len() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(policy.k as u32).to_le_bytes());
    buf.extend_from_slice(&(policy.m as u32).to_le_bytes());
    buf.extend_from_slice(&(policy.horizon as u32).to_le_bytes());
    buf.extend_from_slice(&(policy.hidden().unwrap_or(0) as u32).to_le_bytes());
    buf.extend_from_slice(&(policy.belief_head_enabled as u32).to_le_bytes());
    buf.extend_from_slice(&(theta.len() as u64).to_le_bytes());
    for v in theta {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<(CheckpointHeader, Vec<f64>)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 36 || &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic or truncated header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let header = CheckpointHeader {
        version: u32_at(4),
        k: u32_at(8),
        m: u32_at(12),
        horizon: u32_at(16),
        hidden: u32_at(20),
        belief_head: u32_at(24),
        param_len: u64::from_le_bytes(bytes[28..36].try_into().unwrap()),
    };
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {}",
            header.version
        )));
    }
    let expected = 36 + header.param_len as usize * 8;
    if bytes.len() != expected {
        return Err(Error::Checkpoint(format!(
            "expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let theta = bytes[36..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, theta))
}
