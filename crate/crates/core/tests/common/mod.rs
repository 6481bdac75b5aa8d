//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use tempo::{Group, Rollout, TokenId};

/// Random group with binary rewards.
pub fn random_group<R: Rng>(rng: &mut R, max_g: usize, max_t: usize, vocab: u32) -> Group<f64> {
    let g = rng.gen_range(1..=max_g);
    let rollouts = (0..g)
        .map(|_| {
            let t = rng.gen_range(1..=max_t);
            let tokens = (0..t).map(|_| TokenId(rng.gen_range(0..vocab))).collect();
            let reward = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
            Rollout::new("p", tokens, reward)
        })
        .collect();
    Group::new("p", rollouts).unwrap()
}

/// Every distinct prefix (including the empty one and full sequences).
pub fn all_prefixes(group: &Group<f64>) -> Vec<Vec<TokenId>> {
    let mut out: Vec<Vec<TokenId>> = Vec::new();
    for r in &group.rollouts {
        for k in 0..=r.tokens.len() {
            let p = r.tokens[..k].to_vec();
            if !out.contains(&p) {
                out.push(p);
            }
        }
    }
    out
}

pub fn matching<'a>(
    group: &'a Group<f64>,
    prefix: &'a [TokenId],
) -> impl Iterator<Item = &'a Rollout<f64>> + 'a {
    group
        .rollouts
        .iter()
        .filter(move |r| r.tokens.starts_with(prefix))
}

/// Mean reward over rollouts whose sequence starts with `prefix`.
pub fn brute_value(group: &Group<f64>, prefix: &[TokenId]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for r in matching(group, prefix) {
        sum += r.reward;
        n += 1;
    }
    sum / n as f64
}

/// Distinct continuations of `prefix`: next tokens plus `None` for termination.
pub fn brute_continuations(group: &Group<f64>, prefix: &[TokenId]) -> Vec<Option<TokenId>> {
    let mut out = Vec::new();
    for r in matching(group, prefix) {
        let c = r.tokens.get(prefix.len()).copied();
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

pub fn brute_branch_prefixes(group: &Group<f64>) -> Vec<(Vec<TokenId>, usize)> {
    let mut out: Vec<_> = all_prefixes(group)
        .into_iter()
        .map(|p| {
            let d = brute_continuations(group, &p).len();
            (p, d)
        })
        .filter(|(_, d)| *d >= 2)
        .collect();
    out.sort();
    out
}

/// `sum_{l=0}^{T-t-1} lambda^l delta_{t+l}` by direct double summation.
pub fn gae_oracle(rewards: &[f64], values: &[f64], lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            (0..n - t)
                .map(|l| {
                    let k = t + l;
                    lambda.powi(l as i32) * (rewards[k] + values[k + 1] - values[k])
                })
                .sum()
        })
        .collect()
}

/// Symmetric PPO clipped objective, token-averaged over the batch.
pub fn ppo_reference(adv: &[Vec<f64>], old: &[Vec<f64>], new: &[Vec<f64>], eps: f64) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..adv.len() {
        for t in 0..adv[i].len() {
            let ratio = (new[i][t] - old[i][t]).exp();
            let a = adv[i][t];
            total += if a >= 0.0 {
                ratio.min(1.0 + eps) * a
            } else {
                ratio.max(1.0 - eps) * a
            };
            n += 1;
        }
    }
    total / n as f64
}

/// Top-`rho` entropy mask by sorting pooled entropies and keeping ties.
pub fn hepo_oracle(entropies: &[Vec<f64>], rho: f64) -> Vec<Vec<bool>> {
    let mut pooled: Vec<f64> = entropies.iter().flatten().copied().collect();
    pooled.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let k = ((rho * pooled.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let cut = pooled[k.min(pooled.len()) - 1];
    entropies
        .iter()
        .map(|row| row.iter().map(|&e| e >= cut).collect())
        .collect()
}
