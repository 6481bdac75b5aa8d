use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tree::TokenId;

/// How the terminal reward is derived from the decision tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardRule {
    /// 1 iff every decision position holds a token of quality 1.
    AllCorrect,
    /// Bernoulli with success probability `base_rate * prod(quality)`.
    Probabilistic { base_rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub position: usize,
    /// Branch quality in `[0, 1]` for every token of the vocabulary.
    pub quality: Vec<f64>,
}

impl Decision {
    pub fn correct_token(&self) -> Option<TokenId> {
        self.quality
            .iter()
            .position(|&q| q >= 1.0)
            .map(|i| TokenId(i as u32))
    }
}

/// Synthetic token environment: only the tokens at decision positions
/// affect the reward; every other position is filler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchEnv {
    depth: usize,
    vocab: u32,
    decisions: Vec<Decision>,
    filler_token: TokenId,
    rule: RewardRule,
}

impl BranchEnv {
    /// Environment whose designated correct token at the `k`-th decision
    /// position is `1 + (3k mod (vocab - 1))`; token 0 is the filler token.
    pub fn new(depth: usize, vocab: u32, decision_positions: &[usize]) -> Result<Self> {
        if depth == 0 {
            return Err(invalid("depth", "must be positive"));
        }
        if vocab < 2 {
            return Err(invalid("vocab", "must be at least 2"));
        }
        let mut positions = decision_positions.to_vec();
        positions.sort_unstable();
        positions.dedup();
        if positions.len() != decision_positions.len() {
            return Err(invalid("decision_positions", "duplicate position"));
        }
        if let Some(p) = positions.iter().find(|&&p| p >= depth) {
            return Err(invalid(
                "decision_positions",
                format!("{p} >= depth {depth}"),
            ));
        }
        let decisions = positions
            .into_iter()
            .enumerate()
            .map(|(k, position)| {
                let correct = 1 + (3 * k) % (vocab as usize - 1);
                let mut quality = vec![0.0; vocab as usize];
                quality[correct] = 1.0;
                Decision { position, quality }
            })
            .collect();
        Ok(Self {
            depth,
            vocab,
            decisions,
            filler_token: TokenId(0),
            rule: RewardRule::AllCorrect,
        })
    }

    /// `count` decision positions spread evenly over `depth`.
    pub fn evenly_spaced(depth: usize, vocab: u32, count: usize) -> Result<Self> {
        if count > depth {
            return Err(invalid(
                "decision_positions",
                format!("{count} > depth {depth}"),
            ));
        }
        let positions: Vec<usize> = (0..count)
            .map(|k| (2 * k + 1) * depth / (2 * count))
            .collect();
        Self::new(depth, vocab, &positions)
    }

    pub fn with_rule(mut self, rule: RewardRule) -> Result<Self> {
        if let RewardRule::Probabilistic { base_rate } = rule {
            if !(0.0..=1.0).contains(&base_rate) {
                return Err(invalid("base_rate", format!("{base_rate} not in [0, 1]")));
            }
        }
        self.rule = rule;
        Ok(self)
    }

    /// Sets the branch quality of `token` at decision position `position`.
    pub fn with_quality(mut self, position: usize, token: TokenId, quality: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&quality) {
            return Err(invalid("quality", format!("{quality} not in [0, 1]")));
        }
        if token.0 >= self.vocab {
            return Err(invalid(
                "quality",
                format!("token {token} outside vocabulary"),
            ));
        }
        let d = self
            .decisions
            .iter_mut()
            .find(|d| d.position == position)
            .ok_or_else(|| invalid("quality", format!("{position} is not a decision position")))?;
        d.quality[token.0 as usize] = quality;
        Ok(self)
    }

    /// Same depth, vocabulary, filler token and rule with `count` evenly
    /// spaced decision positions.
    pub fn with_decision_count(&self, count: usize) -> Result<Self> {
        let mut env = Self::evenly_spaced(self.depth, self.vocab, count)?;
        env.filler_token = self.filler_token;
        env.rule = self.rule;
        Ok(env)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn vocab(&self) -> u32 {
        self.vocab
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    pub fn filler_token(&self) -> TokenId {
        self.filler_token
    }

    pub fn rule(&self) -> RewardRule {
        self.rule
    }

    pub fn is_decision(&self, position: usize) -> bool {
        self.decisions.iter().any(|d| d.position == position)
    }

    pub fn decision_at(&self, position: usize) -> Option<&Decision> {
        self.decisions.iter().find(|d| d.position == position)
    }

    /// Probability that a sequence with these tokens is rewarded.
    pub fn success_probability(&self, tokens: &[TokenId]) -> f64 {
        match self.rule {
            RewardRule::AllCorrect => {
                let ok = self
                    .decisions
                    .iter()
                    .all(|d| d.quality[tokens[d.position].0 as usize] >= 1.0);
                if ok {
                    1.0
                } else {
                    0.0
                }
            }
            RewardRule::Probabilistic { base_rate } => {
                base_rate
                    * self
                        .decisions
                        .iter()
                        .map(|d| d.quality[tokens[d.position].0 as usize])
                        .product::<f64>()
            }
        }
    }

    /// Terminal reward of a full sequence. Draws from `rng` only under the
    /// probabilistic rule.
    pub fn reward<R: Rng>(&self, tokens: &[TokenId], rng: &mut R) -> f64 {
        match self.rule {
            RewardRule::AllCorrect => self.success_probability(tokens),
            RewardRule::Probabilistic { .. } => {
                let p = self.success_probability(tokens);
                if rng.gen::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Depth 12, vocabulary 8, three decision positions.
impl Default for BranchEnv {
    fn default() -> Self {
        Self::evenly_spaced(12, 8, 3).expect("valid default environment")
    }
}
