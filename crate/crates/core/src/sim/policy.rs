use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::env::BranchEnv;
use crate::tree::TokenId;

/// What the tabular logits are conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    /// One logit vector per position.
    #[default]
    Position,
    /// One logit vector per distinct prefix.
    Prefix,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ContextKey {
    Position(usize),
    Prefix(Vec<TokenId>),
}

/// Softmax policy over a fixed-length token sequence with tabular logits.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    mode: ContextMode,
    vocab: usize,
    /// Logits every context at a given position starts from.
    initial: Vec<Vec<f64>>,
    /// Position mode: current logits per position.
    positions: Vec<Vec<f64>>,
    /// Prefix mode: logits of every prefix updated at least once.
    prefixes: HashMap<Vec<TokenId>, Vec<f64>>,
}

/// Per-context gradient accumulator.
pub type Gradient = BTreeMap<ContextKey, Vec<f64>>;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

impl TabularPolicy {
    /// Uniform logits everywhere.
    pub fn uniform(depth: usize, vocab: u32, mode: ContextMode) -> Self {
        let initial = vec![vec![0.0; vocab as usize]; depth];
        Self {
            mode,
            vocab: vocab as usize,
            positions: initial.clone(),
            initial,
            prefixes: HashMap::new(),
        }
    }

    /// Uniform at decision positions; at filler positions the env's filler
    /// token gets logit `filler_bias` and every other token 0.
    pub fn for_env(env: &BranchEnv, mode: ContextMode, filler_bias: f64) -> Self {
        let mut policy = Self::uniform(env.depth(), env.vocab(), mode);
        for (pos, logits) in policy.initial.iter_mut().enumerate() {
            if !env.is_decision(pos) {
                logits[env.filler_token().0 as usize] = filler_bias;
            }
        }
        policy.positions = policy.initial.clone();
        policy
    }

    /// Puts (numerically) all mass on `sequence`.
    pub fn point_mass(sequence: &[TokenId], vocab: u32, mode: ContextMode) -> Self {
        let mut policy = Self::uniform(sequence.len(), vocab, mode);
        for (logits, tok) in policy.initial.iter_mut().zip(sequence) {
            logits.iter_mut().for_each(|l| *l = -1000.0);
            logits[tok.0 as usize] = 0.0;
        }
        policy.positions = policy.initial.clone();
        policy
    }

    pub fn mode(&self) -> ContextMode {
        self.mode
    }

    pub fn depth(&self) -> usize {
        self.initial.len()
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn key(&self, prefix: &[TokenId]) -> ContextKey {
        match self.mode {
            ContextMode::Position => ContextKey::Position(prefix.len()),
            ContextMode::Prefix => ContextKey::Prefix(prefix.to_vec()),
        }
    }

    pub fn logits(&self, key: &ContextKey) -> &[f64] {
        match key {
            ContextKey::Position(p) => &self.positions[*p],
            ContextKey::Prefix(prefix) => self
                .prefixes
                .get(prefix)
                .unwrap_or(&self.initial[prefix.len()]),
        }
    }

    fn prefix_logits(&self, prefix: &[TokenId]) -> &[f64] {
        match self.mode {
            ContextMode::Position => &self.positions[prefix.len()],
            ContextMode::Prefix => self
                .prefixes
                .get(prefix)
                .unwrap_or(&self.initial[prefix.len()]),
        }
    }

    pub fn probs(&self, key: &ContextKey) -> Vec<f64> {
        softmax(self.logits(key))
    }

    pub fn log_prob(&self, prefix: &[TokenId], token: TokenId) -> f64 {
        softmax(self.prefix_logits(prefix))[token.0 as usize].ln()
    }

    /// Draws the next token after `prefix`; returns it with its log-probability
    /// and the entropy of the distribution it was drawn from.
    pub fn sample<R: Rng>(&self, prefix: &[TokenId], rng: &mut R) -> (TokenId, f64, f64) {
        let probs = softmax(self.prefix_logits(prefix));
        let u: f64 = rng.gen();
        let mut cdf = 0.0;
        let mut pick = None;
        for (i, &p) in probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            pick = Some(i);
            cdf += p;
            if u < cdf {
                break;
            }
        }
        let i = pick.expect("softmax has positive mass");
        (TokenId(i as u32), probs[i].ln(), entropy(&probs))
    }

    /// Adds `coeff * d log pi(token | prefix) / d logits` into `grad`.
    pub fn accumulate(&self, grad: &mut Gradient, prefix: &[TokenId], token: TokenId, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        let probs = softmax(self.prefix_logits(prefix));
        let g = grad
            .entry(self.key(prefix))
            .or_insert_with(|| vec![0.0; self.vocab]);
        for (j, (gj, p)) in g.iter_mut().zip(probs).enumerate() {
            let indicator = if j == token.0 as usize { 1.0 } else { 0.0 };
            *gj += coeff * (indicator - p);
        }
    }

    /// Gradient ascent step: `logits += learning_rate * grad`.
    pub fn apply(&mut self, grad: &Gradient, learning_rate: f64) {
        for (key, g) in grad {
            let logits = match key {
                ContextKey::Position(p) => &mut self.positions[*p],
                ContextKey::Prefix(prefix) => self
                    .prefixes
                    .entry(prefix.clone())
                    .or_insert_with(|| self.initial[prefix.len()].clone()),
            };
            for (l, gj) in logits.iter_mut().zip(g) {
                *l += learning_rate * gj;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.prefixes
            .values()
            .chain(&self.positions)
            .flatten()
            .all(|l| l.is_finite())
    }

    /// Exact success probability; only defined for position-conditioned
    /// policies, where positions are independent.
    pub fn exact_success(&self, env: &BranchEnv) -> Option<f64> {
        if self.mode != ContextMode::Position {
            return None;
        }
        let per_decision = env.decisions().iter().map(|d| {
            let probs = self.probs(&ContextKey::Position(d.position));
            match env.rule() {
                super::env::RewardRule::AllCorrect => probs
                    .iter()
                    .zip(&d.quality)
                    .filter(|(_, &q)| q >= 1.0)
                    .map(|(p, _)| p)
                    .sum::<f64>(),
                super::env::RewardRule::Probabilistic { .. } => {
                    probs.iter().zip(&d.quality).map(|(p, q)| p * q).sum()
                }
            }
        });
        let base = match env.rule() {
            super::env::RewardRule::AllCorrect => 1.0,
            super::env::RewardRule::Probabilistic { base_rate } => base_rate,
        };
        Some(base * per_decision.product::<f64>())
    }
}
