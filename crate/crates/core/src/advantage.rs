//! Per-token advantage estimators.
//!
//! All normalized estimators share the group statistics `mean(r)` and the
//! population `std(r)`. When `std(r)` is exactly zero (all rewards equal) the
//! normalized estimators return all-zero advantages instead of dividing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::tree::{Group, PrefixTree};

/// Advantage estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tempo,
    Grpo,
    Hepo,
    Gae,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Tempo, Method::Grpo, Method::Hepo, Method::Gae];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Tempo => "tempo",
            Method::Grpo => "grpo",
            Method::Hepo => "hepo",
            Method::Gae => "gae",
        }
    }

    /// Whether the estimator divides by the group reward std.
    pub fn is_normalized(self) -> bool {
        !matches!(self, Method::Gae)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tempo" => Ok(Method::Tempo),
            "grpo" => Ok(Method::Grpo),
            "hepo" => Ok(Method::Hepo),
            "gae" => Ok(Method::Gae),
            other => Err(invalid("method", format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStats<S> {
    pub mean: S,
    /// Population standard deviation (divides by G).
    pub std: S,
    pub size: usize,
}

impl<S: Scalar> GroupStats<S> {
    /// `(r - mean) / std`, or zero for a degenerate group.
    pub fn normalize(&self, centered: S) -> S {
        if self.std == S::zero() {
            S::zero()
        } else {
            centered / self.std
        }
    }
}

pub fn group_stats<S: Scalar>(group: &Group<S>) -> GroupStats<S> {
    let n = S::from_count(group.size().max(1));
    let mean = group.rewards().sum::<S>() / n;
    let var = group.rewards().map(|r| (r - mean) * (r - mean)).sum::<S>() / n;
    GroupStats {
        mean,
        std: var.sqrt(),
        size: group.size(),
    }
}

/// Per-rollout, per-token advantages aligned with each rollout's tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageMatrix<S> {
    pub rows: Vec<Vec<S>>,
    pub method: Method,
}

impl<S: Scalar> AdvantageMatrix<S> {
    pub fn token_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn matches_shape(&self, group: &Group<S>) -> bool {
        self.rows.len() == group.size()
            && self
                .rows
                .iter()
                .zip(&group.rollouts)
                .all(|(row, r)| row.len() == r.len())
    }

    /// Stacks the rows of several matrices into one batch.
    pub fn concat<'a, I>(method: Method, parts: I) -> Self
    where
        I: IntoIterator<Item = &'a AdvantageMatrix<S>>,
    {
        let rows = parts
            .into_iter()
            .flat_map(|m| m.rows.iter().cloned())
            .collect();
        Self { rows, method }
    }
}

/// GRPO: the normalized outcome reward broadcast to every token.
pub fn grpo_advantages<S: Scalar>(group: &Group<S>, stats: &GroupStats<S>) -> AdvantageMatrix<S> {
    let rows = group
        .rollouts
        .iter()
        .map(|r| vec![stats.normalize(r.reward - stats.mean); r.len()])
        .collect();
    AdvantageMatrix {
        rows,
        method: Method::Grpo,
    }
}

/// `V(s_{t+1}) - V(s_t)` along every rollout, forced to zero wherever `s_t`
/// is not a branch node.
pub fn td_corrections<S: Scalar>(group: &Group<S>, tree: &PrefixTree<S>) -> Result<Vec<Vec<S>>> {
    group
        .rollouts
        .iter()
        .map(|r| {
            let path = tree.path(&r.tokens)?;
            Ok(path
                .windows(2)
                .map(|w| {
                    let parent = tree.node(w[0]);
                    if parent.is_branch() {
                        tree.value(w[1]) - parent.value()
                    } else {
                        S::zero()
                    }
                })
                .collect())
        })
        .collect()
}

/// TEMPO: `[(r_i - mean) + (V(s_{t+1}) - V(s_t))] / std`.
pub fn tempo_advantages<S: Scalar>(
    group: &Group<S>,
    tree: &PrefixTree<S>,
    stats: &GroupStats<S>,
) -> Result<AdvantageMatrix<S>> {
    let td = td_corrections(group, tree)?;
    let rows = group
        .rollouts
        .iter()
        .zip(td)
        .map(|(r, deltas)| {
            let centered = r.reward - stats.mean;
            deltas
                .into_iter()
                .map(|d| stats.normalize(centered + d))
                .collect()
        })
        .collect();
    Ok(AdvantageMatrix {
        rows,
        method: Method::Tempo,
    })
}

/// Marks the tokens whose entropy lies in the top `rho` fraction of all
/// tokens pooled over the group. Every token tied with the threshold
/// entropy is marked.
pub fn hepo_mask<S: Scalar>(group: &Group<S>, rho: f64) -> Result<Vec<Vec<bool>>> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(invalid("rho", format!("{rho} not in (0, 1]")));
    }
    let mut pooled = Vec::with_capacity(group.token_count());
    for r in &group.rollouts {
        let ent = r.entropies.as_ref().ok_or(Error::MissingEntropies)?;
        pooled.extend(ent.iter().copied());
    }
    if pooled.is_empty() {
        return Ok(group.rollouts.iter().map(|_| Vec::new()).collect());
    }
    // Guard against rho * n landing a hair above an integer.
    let keep = ((rho * pooled.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let keep = keep.min(pooled.len());
    pooled.sort_by(|a, b| b.partial_cmp(a).expect("entropies are finite"));
    let threshold = pooled[keep - 1];
    Ok(group
        .rollouts
        .iter()
        .map(|r| {
            r.entropies
                .as_ref()
                .expect("checked above")
                .iter()
                .map(|&e| e >= threshold)
                .collect()
        })
        .collect())
}

/// HEPO: GRPO advantages with every token outside [`hepo_mask`] zeroed.
pub fn hepo_advantages<S: Scalar>(
    group: &Group<S>,
    stats: &GroupStats<S>,
    rho: f64,
) -> Result<AdvantageMatrix<S>> {
    let mask = hepo_mask(group, rho)?;
    let mut adv = grpo_advantages(group, stats);
    for (row, m) in adv.rows.iter_mut().zip(mask) {
        for (a, keep) in row.iter_mut().zip(m) {
            if !keep {
                *a = S::zero();
            }
        }
    }
    adv.method = Method::Hepo;
    Ok(adv)
}

/// GAE with `gamma = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaeConfig {
    lambda: f64,
}

impl GaeConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(invalid("lambda", format!("{lambda} not in [0, 1]")));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Default for GaeConfig {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

/// `A_t = sum_l lambda^l delta_{t+l}` with `delta_t = r_t + V(s_{t+1}) - V(s_t)`,
/// evaluated by the backward recursion `A_t = delta_t + lambda A_{t+1}`.
///
/// `values` carries one entry per token plus the value of the final state.
pub fn gae_advantages<S: Scalar>(
    rewards_per_token: &[S],
    values: &[S],
    config: &GaeConfig,
) -> Result<Vec<S>> {
    let n = rewards_per_token.len();
    if values.len() != n + 1 {
        return Err(Error::LengthMismatch {
            field: "values",
            expected: n + 1,
            found: values.len(),
        });
    }
    let lambda = S::from_f64_lossy(config.lambda);
    let mut out = vec![S::zero(); n];
    let mut acc = S::zero();
    for t in (0..n).rev() {
        let delta = rewards_per_token[t] + values[t + 1] - values[t];
        acc = if config.lambda == 0.0 {
            delta
        } else {
            delta + lambda * acc
        };
        out[t] = acc;
    }
    Ok(out)
}

/// GAE over a group, using the prefix-tree values as the critic: the
/// outcome reward lands on the last token and the post-terminal value is 0.
pub fn gae_tree_advantages<S: Scalar>(
    group: &Group<S>,
    tree: &PrefixTree<S>,
    config: &GaeConfig,
) -> Result<AdvantageMatrix<S>> {
    let rows = group
        .rollouts
        .iter()
        .map(|r| {
            let path = tree.path(&r.tokens)?;
            let mut values: Vec<S> = path[..r.len()].iter().map(|&id| tree.value(id)).collect();
            values.push(S::zero());
            let mut rewards = vec![S::zero(); r.len()];
            rewards[r.len() - 1] = r.reward;
            gae_advantages(&rewards, &values, config)
        })
        .collect::<Result<_>>()?;
    Ok(AdvantageMatrix {
        rows,
        method: Method::Gae,
    })
}

/// Parameters for [`estimate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub method: Method,
    pub hepo_rho: f64,
    pub gae: GaeConfig,
}

impl EstimatorConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            method: Method::Tempo,
            hepo_rho: 0.2,
            gae: GaeConfig::default(),
        }
    }
}

/// Runs the configured estimator on one group, building its tree as needed.
pub fn estimate<S: Scalar>(
    group: &Group<S>,
    config: &EstimatorConfig,
) -> Result<AdvantageMatrix<S>> {
    group.validate()?;
    let stats = group_stats(group);
    match config.method {
        Method::Grpo => Ok(grpo_advantages(group, &stats)),
        Method::Hepo => hepo_advantages(group, &stats, config.hepo_rho),
        Method::Tempo => tempo_advantages(group, &PrefixTree::build(group)?, &stats),
        Method::Gae => gae_tree_advantages(group, &PrefixTree::build(group)?, &config.gae),
    }
}
