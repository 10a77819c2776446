//! Experiment harness: flat config files, method presets, multi-seed runs
//! with CSV metrics and JSONL trajectory samples, checkpointing, and
//! cross-method comparison reports.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::advantage::{EpisodeSignal, GroupingMode, ReturnMode};
use crate::env::EnvConfig;
use crate::optimizer::{IterationMetrics, TrainConfig, Trainer, UpdateRule};
use crate::policy::{load_checkpoint, save_checkpoint};
use crate::rollout::Trajectory;
use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

/// The method ladder. Each preset fixes (belief head, grouping, omega, eta);
/// explicit `train.*` keys after `method` in a config file override the
/// preset.
///
/// - `grpo` (alias `b0`): episode-level advantages only, belief head off.
/// - `b1`: belief head on, still episode-level only.
/// - `b2`: adds anchor grouping and the step advantage.
/// - `rebel` (alias `b3`): adds the consistency reward (eta > 0).
/// - `statehash`: like `b2`/`b3` but grouping on the latent-state hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Grpo,
    B1,
    B2,
    Rebel,
    StateHash,
}

impl Method {
    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "grpo" | "b0" => Some(Method::Grpo),
            "b1" => Some(Method::B1),
            "b2" => Some(Method::B2),
            "rebel" | "b3" => Some(Method::Rebel),
            "statehash" => Some(Method::StateHash),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Grpo => "grpo",
            Method::B1 => "b1",
            Method::B2 => "b2",
            Method::Rebel => "rebel",
            Method::StateHash => "statehash",
        }
    }

    /// Applies the preset onto a train config.
    pub fn apply(self, train: &mut TrainConfig) {
        match self {
            Method::Grpo => {
                train.belief_head = false;
                train.grouping = GroupingMode::None;
                train.omega = 0.0;
                train.eta = 0.0;
            }
            Method::B1 => {
                train.belief_head = true;
                train.grouping = GroupingMode::None;
                train.omega = 0.0;
                train.eta = 0.0;
            }
            Method::B2 => {
                train.belief_head = true;
                train.grouping = GroupingMode::BeliefAnchor;
                train.omega = 0.5;
                train.eta = 0.0;
            }
            Method::Rebel => {
                train.belief_head = true;
                train.grouping = GroupingMode::BeliefAnchor;
                train.omega = 0.5;
                train.eta = 0.1;
            }
            Method::StateHash => {
                train.belief_head = true;
                train.grouping = GroupingMode::StateHash;
                train.omega = 0.5;
                train.eta = 0.1;
            }
        }
    }
}

/// A full experiment: environment, optimization, method, seeds, outputs.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub version: u32,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub env: EnvConfig,
    pub train: TrainConfig,
    /// Success-rate threshold used by `compare`.
    pub threshold: f64,
    /// Log one sample trajectory to JSONL every this many iterations.
    pub log_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut train = TrainConfig::default();
        Method::Rebel.apply(&mut train);
        Self {
            version: CONFIG_VERSION,
            method: Method::Rebel,
            seeds: vec![0],
            out_dir: PathBuf::from("out"),
            env: EnvConfig::default(),
            train,
            threshold: 0.8,
            log_every: 10,
        }
    }
}

impl ExperimentConfig {
    /// Parses the flat `key = value` format: one pair per line, `#` comments,
    /// blank lines ignored, explicit `version` required. Keys are applied in
    /// file order except `method`, whose preset is applied first so later
    /// `train.*` keys can override it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(usize, String, String)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::ConfigParse {
                    line: idx + 1,
                    message: format!("expected 'key = value', got '{line}'"),
                });
            };
            pairs.push((idx + 1, key.trim().to_string(), value.trim().to_string()));
        }

        let mut cfg = ExperimentConfig::default();
        let mut saw_version = false;

        if let Some((line, _, value)) = pairs.iter().find(|(_, k, _)| k == "method") {
            cfg.method = Method::parse(value).ok_or_else(|| Error::ConfigParse {
                line: *line,
                message: format!("unknown method '{value}'"),
            })?;
        }
        cfg.method.apply(&mut cfg.train);

        for (line, key, value) in &pairs {
            let line = *line;
            let bad = |message: String| Error::ConfigParse { line, message };
            match key.as_str() {
                "version" => {
                    let v: u32 = value
                        .parse()
                        .map_err(|_| bad(format!("bad version '{value}'")))?;
                    if v != CONFIG_VERSION {
                        return Err(bad(format!(
                            "unsupported config version {v}, expected {CONFIG_VERSION}"
                        )));
                    }
                    saw_version = true;
                }
                "method" => {}
                "seeds" => {
                    cfg.seeds = value
                        .split(',')
                        .map(|s| s.trim().parse::<u64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(format!("bad seed list '{value}'")))?;
                    if cfg.seeds.is_empty() {
                        return Err(bad("seed list must be non-empty".into()));
                    }
                }
                "out" => cfg.out_dir = PathBuf::from(value),
                "threshold" => {
                    cfg.threshold = value
                        .parse()
                        .map_err(|_| bad(format!("bad threshold '{value}'")))?
                }
                "log_every" => {
                    cfg.log_every = value
                        .parse()
                        .map_err(|_| bad(format!("bad log_every '{value}'")))?
                }
                "iterations" => {
                    cfg.train.iterations = value
                        .parse()
                        .map_err(|_| bad(format!("bad iterations '{value}'")))?
                }
                _ if key.starts_with("env.") => {
                    apply_env_key(&mut cfg.env, &key[4..], value).map_err(bad)?
                }
                _ if key.starts_with("train.") => {
                    apply_train_key(&mut cfg.train, &key[6..], value).map_err(bad)?
                }
                _ => return Err(bad(format!("unknown key '{key}'"))),
            }
        }

        if !saw_version {
            return Err(Error::ConfigParse {
                line: 0,
                message: "missing required 'version' key".into(),
            });
        }
        cfg.env.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn apply_env_key(env: &mut EnvConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    let bad = || format!("bad value '{value}' for env.{key}");
    match key {
        "num_containers" => env.num_containers = value.parse().map_err(|_| bad())?,
        "horizon" => env.horizon = value.parse().map_err(|_| bad())?,
        "clue_accuracy" => env.clue_accuracy = value.parse().map_err(|_| bad())?,
        "step_penalty" => env.step_penalty = value.parse().map_err(|_| bad())?,
        "terminal_reward" => env.terminal_reward = value.parse().map_err(|_| bad())?,
        "mask_holding_observable" => {
            env.mask_holding_observable = value.parse().map_err(|_| bad())?
        }
        _ => return Err(format!("unknown key 'env.{key}'")),
    }
    Ok(())
}

fn apply_train_key(
    train: &mut TrainConfig,
    key: &str,
    value: &str,
) -> std::result::Result<(), String> {
    let bad = || format!("bad value '{value}' for train.{key}");
    match key {
        "omega" => train.omega = value.parse().map_err(|_| bad())?,
        "eta" => train.eta = value.parse().map_err(|_| bad())?,
        "gamma" => train.gamma = value.parse().map_err(|_| bad())?,
        "eps_clip" => train.eps_clip = value.parse().map_err(|_| bad())?,
        "eps_norm" => train.eps_norm = value.parse().map_err(|_| bad())?,
        "beta" => train.beta = value.parse().map_err(|_| bad())?,
        "lr" => train.lr = value.parse().map_err(|_| bad())?,
        "group_size" => train.group_size = value.parse().map_err(|_| bad())?,
        "epochs" => train.epochs = value.parse().map_err(|_| bad())?,
        "belief_head" => train.belief_head = value.parse().map_err(|_| bad())?,
        "unknown_bias" => train.unknown_bias = value.parse().map_err(|_| bad())?,
        "hidden" => {
            train.hidden = match value {
                "none" | "0" => None,
                _ => Some(value.parse().map_err(|_| bad())?),
            }
        }
        "update_rule" => {
            train.update_rule = match value {
                "plain" => UpdateRule::Plain,
                "adam" => UpdateRule::Adam,
                _ => return Err(bad()),
            }
        }
        "grouping" => {
            train.grouping = match value {
                "belief" => GroupingMode::BeliefAnchor,
                "statehash" => GroupingMode::StateHash,
                "none" => GroupingMode::None,
                _ => return Err(bad()),
            }
        }
        "return_mode" => {
            train.return_mode = match value.split_once(':') {
                None if value == "suffix" => ReturnMode::Suffix,
                Some(("windowed", h)) => ReturnMode::Windowed(h.parse().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        "signal" => {
            train.signal = match value {
                "return" => EpisodeSignal::Return,
                "success" => EpisodeSignal::Success,
                _ => return Err(bad()),
            }
        }
        _ => return Err(format!("unknown key 'train.{key}'")),
    }
    Ok(())
}

/// One CSV row of training metrics; column order is fixed.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub iteration: usize,
    pub cum_env_steps: u64,
    pub success_rate: f64,
    pub mean_episode_len: f64,
    pub mean_drift: f64,
    pub mean_kappa: f64,
    pub singleton_ratio_belief: Option<f64>,
    pub singleton_ratio_statehash: Option<f64>,
    pub mean_group_size: Option<f64>,
    pub objective: f64,
    pub kl: f64,
    pub clip_fraction: f64,
}

pub const METRICS_HEADER: &str = "iteration,cum_env_steps,success_rate,mean_episode_len,mean_drift,mean_kappa,singleton_ratio_belief,singleton_ratio_statehash,mean_group_size,objective,kl,clip_fraction";

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn from_iteration(iteration: usize, cum_env_steps: u64, m: &IterationMetrics) -> Self {
        Self {
            iteration,
            cum_env_steps,
            success_rate: m.success_rate,
            mean_episode_len: m.mean_episode_len,
            mean_drift: m.mean_drift,
            mean_kappa: m.mean_kappa,
            singleton_ratio_belief: m.singleton_ratio_belief,
            singleton_ratio_statehash: m.singleton_ratio_statehash,
            mean_group_size: m.mean_group_size,
            objective: m.objective,
            kl: m.kl,
            clip_fraction: m.clip_fraction,
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.cum_env_steps,
            self.success_rate,
            self.mean_episode_len,
            self.mean_drift,
            self.mean_kappa,
            opt_cell(self.singleton_ratio_belief),
            opt_cell(self.singleton_ratio_statehash),
            opt_cell(self.mean_group_size),
            self.objective,
            self.kl,
            self.clip_fraction,
        )
    }

    pub fn parse_csv(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(Error::ContractViolation(format!(
                "expected 12 CSV fields, got {}",
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::ContractViolation(format!("bad CSV number '{s}'")))
        };
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        Ok(Self {
            iteration: fields[0]
                .parse()
                .map_err(|_| Error::ContractViolation(format!("bad iteration '{}'", fields[0])))?,
            cum_env_steps: fields[1]
                .parse()
                .map_err(|_| Error::ContractViolation(format!("bad env steps '{}'", fields[1])))?,
            success_rate: num(fields[2])?,
            mean_episode_len: num(fields[3])?,
            mean_drift: num(fields[4])?,
            mean_kappa: num(fields[5])?,
            singleton_ratio_belief: opt(fields[6])?,
            singleton_ratio_statehash: opt(fields[7])?,
            mean_group_size: opt(fields[8])?,
            objective: num(fields[9])?,
            kl: num(fields[10])?,
            clip_fraction: num(fields[11])?,
        })
    }
}

/// Reads one metrics CSV (header + rows).
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => {
            return Err(Error::MissingMetrics(format!(
                "{}: bad or missing header {other:?}",
                path.display()
            )))
        }
    }
    lines.map(MetricsRow::parse_csv).collect()
}

/// Appends one JSONL record per step: schema version `v`, trajectory id `i`,
/// step `t`, anchor, action, rewards, mask, resolutions, sampling log-prob,
/// and drift.
pub fn log_trajectory<W: std::io::Write>(traj: &Trajectory, sink: &mut W) -> Result<()> {
    for step in &traj.steps {
        let record = json!({
            "v": 1,
            "i": traj.id,
            "t": step.t,
            "anchor": step.anchor.as_str(),
            "action": step.action,
            "r_env": step.r_env,
            "r_cons": step.r_cons,
            "mask": step.mask.bits(),
            "resolved": step.resolved_here,
            "logprob_old": step.logprob_old,
            "drift": step.drift,
        });
        writeln!(sink, "{record}")?;
    }
    Ok(())
}

/// Runs every seed of the experiment. Per seed: `metrics_seed<k>.csv` written
/// incrementally (partial files survive a mid-run abort) and, for the first
/// seed, `traj_samples.jsonl` and `checkpoint_final.bin`. Afterwards the
/// per-seed curves are merged into `metrics_merged.csv` with mean and std
/// columns.
pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    for (si, &seed) in cfg.seeds.iter().enumerate() {
        run_seed(cfg, seed, si == 0)?;
    }
    merge_metrics(cfg)?;
    Ok(())
}

fn run_seed(cfg: &ExperimentConfig, seed: u64, primary: bool) -> Result<()> {
    let mut env = cfg.env.clone();
    env.seed = seed;
    let mut train = cfg.train.clone();
    train.seed = seed;
    let mut trainer = Trainer::new(env, train)?;

    let csv_path = cfg.out_dir.join(format!("metrics_seed{seed}.csv"));
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(csv, "{METRICS_HEADER}")?;

    let mut traj_sink = if primary {
        Some(std::io::BufWriter::new(std::fs::File::create(
            cfg.out_dir.join("traj_samples.jsonl"),
        )?))
    } else {
        None
    };

    for iteration in 0..trainer.cfg.iterations {
        let result = trainer.train_iteration();
        let (metrics, batch) = match result {
            Ok(v) => v,
            Err(e) => {
                // Flush what we have; partial outputs are part of the contract.
                csv.flush()?;
                return Err(e);
            }
        };
        let row = MetricsRow::from_iteration(iteration, trainer.cum_env_steps, &metrics);
        writeln!(csv, "{}", row.to_csv())?;
        csv.flush()?;
        if let Some(sink) = traj_sink.as_mut() {
            let last = iteration + 1 == trainer.cfg.iterations;
            if iteration % cfg.log_every == 0 || last {
                log_trajectory(&batch[0], sink)?;
            }
        }
    }
    if let Some(mut sink) = traj_sink {
        sink.flush()?;
    }
    if primary {
        save_checkpoint(
            &trainer.policy,
            &trainer.theta,
            &cfg.out_dir.join("checkpoint_final.bin"),
        )?;
    }
    Ok(())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Merges per-seed CSVs into mean and std columns per iteration.
pub fn merge_metrics(cfg: &ExperimentConfig) -> Result<()> {
    let curves: Vec<Vec<MetricsRow>> = cfg
        .seeds
        .iter()
        .map(|seed| read_metrics_csv(&cfg.out_dir.join(format!("metrics_seed{seed}.csv"))))
        .collect::<Result<_>>()?;
    let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);

    let mut out = String::new();
    out.push_str("iteration,cum_env_steps_mean");
    for col in [
        "success_rate",
        "mean_episode_len",
        "mean_drift",
        "mean_kappa",
        "singleton_ratio_belief",
        "singleton_ratio_statehash",
        "mean_group_size",
        "objective",
        "kl",
        "clip_fraction",
    ] {
        let _ = write!(out, ",{col}_mean,{col}_std");
    }
    out.push('\n');

    for i in 0..len {
        let rows: Vec<&MetricsRow> = curves.iter().map(|c| &c[i]).collect();
        let steps_mean =
            rows.iter().map(|r| r.cum_env_steps as f64).sum::<f64>() / rows.len() as f64;
        let _ = write!(out, "{},{}", rows[0].iteration, steps_mean);
        let columns: [Vec<Option<f64>>; 10] = [
            rows.iter().map(|r| Some(r.success_rate)).collect(),
            rows.iter().map(|r| Some(r.mean_episode_len)).collect(),
            rows.iter().map(|r| Some(r.mean_drift)).collect(),
            rows.iter().map(|r| Some(r.mean_kappa)).collect(),
            rows.iter().map(|r| r.singleton_ratio_belief).collect(),
            rows.iter().map(|r| r.singleton_ratio_statehash).collect(),
            rows.iter().map(|r| r.mean_group_size).collect(),
            rows.iter().map(|r| Some(r.objective)).collect(),
            rows.iter().map(|r| Some(r.kl)).collect(),
            rows.iter().map(|r| Some(r.clip_fraction)).collect(),
        ];
        for col in &columns {
            if col.iter().all(|v| v.is_some()) {
                let values: Vec<f64> = col.iter().map(|v| v.unwrap()).collect();
                let (m, s) = mean_std(&values);
                let _ = write!(out, ",{m},{s}");
            } else {
                out.push_str(",,");
            }
        }
        out.push('\n');
    }
    std::fs::write(cfg.out_dir.join("metrics_merged.csv"), out)?;
    Ok(())
}

/// Per-method summary against a success threshold.
#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub name: String,
    pub iterations_to_threshold: Option<usize>,
    pub env_steps_to_threshold: Option<f64>,
    pub final_success_mean: f64,
    pub final_success_std: f64,
}

/// The comparison report across configs, with sample-efficiency ratios
/// relative to the first config.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub threshold: f64,
    pub methods: Vec<MethodSummary>,
}

impl std::fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "threshold: success rate >= {}", self.threshold)?;
        for m in &self.methods {
            match (m.iterations_to_threshold, m.env_steps_to_threshold) {
                (Some(it), Some(steps)) => writeln!(
                    f,
                    "{}: reached at iteration {it} ({steps:.0} env steps); final success {:.3} +- {:.3}",
                    m.name, m.final_success_mean, m.final_success_std
                )?,
                _ => writeln!(
                    f,
                    "{}: threshold not reached; final success {:.3} +- {:.3}",
                    m.name, m.final_success_mean, m.final_success_std
                )?,
            }
        }
        if let Some(first) = self.methods.first() {
            for other in &self.methods[1..] {
                match (other.iterations_to_threshold, first.iterations_to_threshold) {
                    (Some(o), Some(b)) if b > 0 => writeln!(
                        f,
                        "sample-efficiency ratio {} vs {}: {:.2}",
                        other.name,
                        first.name,
                        o as f64 / b as f64
                    )?,
                    _ => writeln!(
                        f,
                        "sample-efficiency ratio {} vs {}: not computable (threshold not reached)",
                        other.name, first.name
                    )?,
                }
            }
        }
        Ok(())
    }
}

/// Computes one method's summary from its per-seed metric files: mean success
/// curve across seeds, first iteration at or above the threshold, and final
/// success statistics.
pub fn summarize_method(cfg: &ExperimentConfig, threshold: f64) -> Result<MethodSummary> {
    let curves: Vec<Vec<MetricsRow>> = cfg
        .seeds
        .iter()
        .map(|seed| read_metrics_csv(&cfg.out_dir.join(format!("metrics_seed{seed}.csv"))))
        .collect::<Result<_>>()?;
    let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
    if len == 0 {
        return Err(Error::MissingMetrics(format!(
            "no metric rows under {}",
            cfg.out_dir.display()
        )));
    }
    let mut iterations_to_threshold = None;
    let mut env_steps_to_threshold = None;
    for i in 0..len {
        let mean = curves.iter().map(|c| c[i].success_rate).sum::<f64>() / curves.len() as f64;
        if mean >= threshold {
            iterations_to_threshold = Some(curves[0][i].iteration);
            env_steps_to_threshold = Some(
                curves.iter().map(|c| c[i].cum_env_steps as f64).sum::<f64>()
                    / curves.len() as f64,
            );
            break;
        }
    }
    let finals: Vec<f64> = curves.iter().map(|c| c[len - 1].success_rate).collect();
    let (final_success_mean, final_success_std) = mean_std(&finals);
    Ok(MethodSummary {
        name: cfg.method.name().to_string(),
        iterations_to_threshold,
        env_steps_to_threshold,
        final_success_mean,
        final_success_std,
    })
}

/// Builds the comparison report for a list of completed experiments. The
/// threshold argument, when set, overrides each config's own.
pub fn compare(configs: &[ExperimentConfig], threshold: Option<f64>) -> Result<ComparisonReport> {
    if configs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let threshold = threshold.unwrap_or(configs[0].threshold);
    let methods = configs
        .iter()
        .map(|c| summarize_method(c, threshold))
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonReport { threshold, methods })
}

/// Replays evaluation episodes from a saved checkpoint, streaming JSONL step
/// records to the sink. Deterministic in (config, seed).
pub fn replay<W: std::io::Write>(
    cfg: &ExperimentConfig,
    seed: u64,
    episodes: usize,
    sink: &mut W,
) -> Result<()> {
    let (header, theta) = load_checkpoint(&cfg.out_dir.join("checkpoint_final.bin"))?;
    let mut env = cfg.env.clone();
    env.seed = seed;
    let mut train = cfg.train.clone();
    train.seed = seed;
    if header.belief_head != train.belief_head as u32
        || header.m as usize != env.num_containers
        || header.horizon as usize != env.horizon
    {
        return Err(Error::Checkpoint(format!(
            "checkpoint ({}x{} horizon {}) does not match config",
            header.k, header.m, header.horizon
        )));
    }
    let mut trainer = Trainer::new(env, train)?;
    if theta.len() != trainer.theta.len() {
        return Err(Error::Checkpoint(format!(
            "parameter length {} does not match policy ({})",
            theta.len(),
            trainer.theta.len()
        )));
    }
    trainer.theta = theta;
    let mut trajs = trainer.evaluate(episodes)?;
    for (i, traj) in trajs.iter_mut().enumerate() {
        traj.id = i;
        log_trajectory(traj, sink)?;
    }
    Ok(())
}
