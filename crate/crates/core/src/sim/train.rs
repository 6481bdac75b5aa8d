use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::env::BranchEnv;
use super::policy::{ContextMode, Gradient, TabularPolicy};
use crate::advantage::{estimate, AdvantageMatrix, EstimatorConfig, GaeConfig, Method};
use crate::error::{invalid, Error, Result};
use crate::loss::{clipped_surrogate, ClipConfig};
use crate::tree::{Group, PrefixTree, Rollout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub group_size: usize,
    pub groups_per_update: usize,
    pub learning_rate: f64,
    pub eps_low: f64,
    pub eps_high: f64,
    pub updates: usize,
    pub seed: u64,
    pub hepo_rho: f64,
    pub gae_lambda: f64,
    /// Optimisation passes over each sampled batch.
    pub epochs: usize,
    /// Success rate that counts as converged for `updates_to_threshold`.
    pub threshold: f64,
    pub context: ContextMode,
    /// Initial logit of the filler token at filler positions.
    pub filler_bias: f64,
    /// Monte Carlo episodes per success estimate when no exact value exists.
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Tempo,
            group_size: 6,
            groups_per_update: 8,
            learning_rate: 20.0,
            eps_low: 0.2,
            eps_high: 0.28,
            updates: 400,
            seed: 0,
            hepo_rho: 0.2,
            gae_lambda: 1.0,
            epochs: 1,
            threshold: 0.9,
            context: ContextMode::Position,
            filler_bias: 4.0,
            eval_episodes: 256,
        }
    }
}

impl TrainConfig {
    pub fn with_method(&self, method: Method) -> Self {
        Self {
            method,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn clip(&self) -> Result<ClipConfig> {
        ClipConfig::new(self.eps_low, self.eps_high)
    }

    pub fn estimator(&self) -> Result<EstimatorConfig> {
        Ok(EstimatorConfig {
            method: self.method,
            hepo_rho: self.hepo_rho,
            gae: GaeConfig::new(self.gae_lambda)?,
        })
    }

    /// Checks every field; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.group_size == 0 {
            return Err(invalid("group_size", "must be positive"));
        }
        if self.method.is_normalized() && self.group_size < 2 {
            return Err(invalid("group_size", "normalized methods need at least 2"));
        }
        if self.groups_per_update == 0 {
            return Err(invalid("groups_per_update", "must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(invalid("learning_rate", "must be finite and >= 0"));
        }
        self.clip()?;
        if !(self.hepo_rho > 0.0 && self.hepo_rho <= 1.0) {
            return Err(invalid("hepo_rho", "must be in (0, 1]"));
        }
        GaeConfig::new(self.gae_lambda).map_err(|_| invalid("gae_lambda", "must be in [0, 1]"))?;
        if self.epochs == 0 {
            return Err(invalid("epochs", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(invalid("threshold", "must be in [0, 1]"));
        }
        if !self.filler_bias.is_finite() {
            return Err(invalid("filler_bias", "must be finite"));
        }
        if self.context == ContextMode::Prefix && self.eval_episodes == 0 {
            return Err(invalid("eval_episodes", "must be positive in prefix mode"));
        }
        Ok(())
    }
}

/// Parameter varied by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    GroupSize,
    BranchCount,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::GroupSize => "group_size",
            SweepAxis::BranchCount => "branch_count",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "group_size" => Ok(SweepAxis::GroupSize),
            "branch_count" => Ok(SweepAxis::BranchCount),
            other => Err(invalid("sweep", format!("unknown axis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: TrainConfig,
    pub decision_positions: Vec<usize>,
    /// Success probability after `u` updates, `u = 0..=updates`.
    pub success: Vec<f64>,
    /// Fraction of rewarded rollouts in the batch sampled at update `u`.
    pub batch_success: Vec<f64>,
    /// Mean branch-node count per group in the batch sampled at update `u`.
    pub mean_branch_count: Vec<f64>,
    pub updates_to_threshold: Option<usize>,
    pub sweep: Option<(SweepAxis, usize)>,
}

impl ExperimentReport {
    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn final_success(&self) -> f64 {
        *self
            .success
            .last()
            .expect("success has updates + 1 entries")
    }

    /// Updates to threshold, counting a run that never converged as `updates + 1`.
    pub fn censored_updates_to_threshold(&self) -> usize {
        self.updates_to_threshold.unwrap_or(self.config.updates + 1)
    }

    pub const CSV_HEADER: &'static str =
        "axis,axis_value,method,seed,update,success,batch_success,mean_branch_count";

    /// One CSV row per update; batch columns are empty on the final row.
    pub fn write_csv_rows<W: std::io::Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        let (axis, value) = match self.sweep {
            Some((a, v)) => (a.as_str().to_string(), v.to_string()),
            None => (String::new(), String::new()),
        };
        for (u, s) in self.success.iter().enumerate() {
            let (b, k) = match (self.batch_success.get(u), self.mean_branch_count.get(u)) {
                (Some(b), Some(k)) => (b.to_string(), k.to_string()),
                _ => (String::new(), String::new()),
            };
            writeln!(
                out,
                "{axis},{value},{},{},{u},{s},{b},{k}",
                self.config.method, self.config.seed
            )?;
        }
        Ok(())
    }
}

/// Samples `group_size` independent rollouts of length `env.depth()`.
pub fn sample_group<R: Rng>(
    env: &BranchEnv,
    policy: &TabularPolicy,
    group_size: usize,
    prompt_id: &str,
    rng: &mut R,
) -> Group<f64> {
    let rollouts = (0..group_size)
        .map(|_| {
            let mut tokens = Vec::with_capacity(env.depth());
            let mut logprobs = Vec::with_capacity(env.depth());
            let mut entropies = Vec::with_capacity(env.depth());
            for _ in 0..env.depth() {
                let (tok, lp, h) = policy.sample(&tokens, rng);
                tokens.push(tok);
                logprobs.push(lp);
                entropies.push(h);
            }
            let reward = env.reward(&tokens, rng);
            Rollout::new(prompt_id, tokens, reward)
                .with_old_logprobs(logprobs)
                .with_entropies(entropies)
        })
        .collect();
    Group {
        prompt_id: prompt_id.to_string(),
        rollouts,
    }
}

fn success_rate<R: Rng>(
    env: &BranchEnv,
    policy: &TabularPolicy,
    episodes: usize,
    rng: &mut R,
) -> f64 {
    if let Some(exact) = policy.exact_success(env) {
        return exact;
    }
    let group = sample_group(env, policy, episodes, "eval", rng);
    group.rewards().sum::<f64>() / episodes as f64
}

/// Trains a fresh policy on `env`; fully determined by `env` and `config`.
pub fn train(env: &BranchEnv, config: &TrainConfig) -> Result<ExperimentReport> {
    let mut policy = TabularPolicy::for_env(env, config.context, config.filler_bias);
    train_policy(env, config, &mut policy)
}

/// Trains `policy` in place.
pub fn train_policy(
    env: &BranchEnv,
    config: &TrainConfig,
    policy: &mut TabularPolicy,
) -> Result<ExperimentReport> {
    config.validate()?;
    if policy.depth() != env.depth() || policy.vocab() != env.vocab() as usize {
        return Err(invalid("policy", "shape does not match the environment"));
    }
    let clip = config.clip()?;
    let estimator = config.estimator()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // Separate stream so evaluation never perturbs the training samples.
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed);
    eval_rng.set_stream(1);

    let mut success = Vec::with_capacity(config.updates + 1);
    let mut batch_success = Vec::with_capacity(config.updates);
    let mut branch_counts = Vec::with_capacity(config.updates);
    success.push(success_rate(
        env,
        policy,
        config.eval_episodes,
        &mut eval_rng,
    ));

    for _ in 0..config.updates {
        let groups: Vec<Group<f64>> = (0..config.groups_per_update)
            .map(|g| sample_group(env, policy, config.group_size, &format!("g{g}"), &mut rng))
            .collect();

        let mut rewarded = 0.0;
        let mut branches = 0usize;
        let mut parts = Vec::with_capacity(groups.len());
        for g in &groups {
            rewarded += g.rewards().sum::<f64>();
            branches += PrefixTree::build(g)?.branch_count();
            parts.push(estimate(g, &estimator)?);
        }
        let rollouts = (config.groups_per_update * config.group_size) as f64;
        batch_success.push(rewarded / rollouts);
        branch_counts.push(branches as f64 / config.groups_per_update as f64);

        let advantages = AdvantageMatrix::concat(config.method, &parts);
        let batch: Vec<&Rollout<f64>> = groups.iter().flat_map(|g| &g.rollouts).collect();
        let old: Vec<Vec<f64>> = batch
            .iter()
            .map(|r| {
                r.old_logprobs
                    .clone()
                    .expect("sampled rollouts carry logprobs")
            })
            .collect();

        for _ in 0..config.epochs {
            let new: Vec<Vec<f64>> = batch
                .iter()
                .map(|r| {
                    (0..r.len())
                        .map(|t| policy.log_prob(&r.tokens[..t], r.tokens[t]))
                        .collect()
                })
                .collect();
            let report = clipped_surrogate(&advantages, &old, &new, &clip)?;
            let mut grad = Gradient::new();
            for (r, coeffs) in batch.iter().zip(&report.per_token_coeff) {
                for (t, &c) in coeffs.iter().enumerate() {
                    policy.accumulate(&mut grad, &r.tokens[..t], r.tokens[t], c);
                }
            }
            policy.apply(&grad, config.learning_rate);
        }
        if !policy.all_finite() {
            return Err(invalid("learning_rate", "policy logits diverged"));
        }
        success.push(success_rate(
            env,
            policy,
            config.eval_episodes,
            &mut eval_rng,
        ));
    }

    let updates_to_threshold = success.iter().position(|&s| s >= config.threshold);
    Ok(ExperimentReport {
        config: config.clone(),
        decision_positions: env.decisions().iter().map(|d| d.position).collect(),
        success,
        batch_success,
        mean_branch_count: branch_counts,
        updates_to_threshold,
        sweep: None,
    })
}

/// One training run per `(value, seed)` pair, value-major. Runs execute in
/// parallel; each run is single-threaded, so results match [`train`].
pub fn sweep(
    env: &BranchEnv,
    base: &TrainConfig,
    axis: SweepAxis,
    values: &[usize],
    seeds: &[u64],
) -> Result<Vec<ExperimentReport>> {
    if values.is_empty() {
        return Err(invalid("sweep", "no values"));
    }
    let jobs: Vec<(usize, u64)> = values
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    jobs.into_par_iter()
        .map(|(value, seed)| {
            let mut config = base.with_seed(seed);
            let run_env = match axis {
                SweepAxis::GroupSize => {
                    config.group_size = value;
                    env.clone()
                }
                SweepAxis::BranchCount => env.with_decision_count(value)?,
            };
            let mut report = train(&run_env, &config)?;
            report.sweep = Some((axis, value));
            Ok(report)
        })
        .collect()
}

/// Runs `config` once per seed, in parallel, returning reports in seed order.
pub fn train_seeds(
    env: &BranchEnv,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<ExperimentReport>> {
    seeds
        .par_iter()
        .map(|&s| train(env, &config.with_seed(s)))
        .collect()
}

/// Median of `values` (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn median_updates_to_threshold(reports: &[ExperimentReport]) -> f64 {
    let v: Vec<f64> = reports
        .iter()
        .map(|r| r.censored_updates_to_threshold() as f64)
        .collect();
    median(&v)
}

pub fn median_final_success(reports: &[ExperimentReport]) -> f64 {
    let v: Vec<f64> = reports
        .iter()
        .map(ExperimentReport::final_success)
        .collect();
    median(&v)
}
