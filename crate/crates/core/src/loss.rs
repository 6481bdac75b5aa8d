//! Clipped token-level surrogate objective with decoupled clip bounds.
//!
//! `J = (1 / sum_i |o_i|) * sum_i sum_t min(ratio * A, clip(ratio, 1 - eps_low, 1 + eps_high) * A)`
//!
//! `J` is an objective to maximize; callers that minimize should negate it.
//! No KL or entropy terms are included.

use crate::advantage::AdvantageMatrix;
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipConfig {
    eps_low: f64,
    eps_high: f64,
}

impl ClipConfig {
    pub fn new(eps_low: f64, eps_high: f64) -> Result<Self> {
        for (field, v) in [("eps_low", eps_low), ("eps_high", eps_high)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(field, format!("{v} must be finite and > 0")));
            }
        }
        Ok(Self { eps_low, eps_high })
    }

    /// Symmetric PPO clipping.
    pub fn symmetric(eps: f64) -> Result<Self> {
        Self::new(eps, eps)
    }

    pub fn eps_low(&self) -> f64 {
        self.eps_low
    }

    pub fn eps_high(&self) -> f64 {
        self.eps_high
    }
}

/// Clip-higher defaults: `eps_low = 0.2`, `eps_high = 0.28`.
impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            eps_low: 0.2,
            eps_high: 0.28,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateReport<S> {
    /// Token-averaged objective.
    pub objective: S,
    /// Fraction of tokens whose clipped term is strictly below the unclipped one.
    pub clipped_fraction: S,
    pub token_count: usize,
    /// `dJ / d(new_logprob)` for every token: `ratio * A / token_count` when
    /// the unclipped branch is active, otherwise 0.
    pub per_token_coeff: Vec<Vec<S>>,
}

fn check_shape<S>(field: &'static str, rows: &[Vec<S>], reference: &[Vec<S>]) -> Result<()> {
    if rows.len() != reference.len() {
        return Err(Error::LengthMismatch {
            field,
            expected: reference.len(),
            found: rows.len(),
        });
    }
    for (r, a) in rows.iter().zip(reference) {
        if r.len() != a.len() {
            return Err(Error::LengthMismatch {
                field,
                expected: a.len(),
                found: r.len(),
            });
        }
    }
    Ok(())
}

/// Evaluates the surrogate over a batch. Terms are summed rollout-major,
/// token-minor, so results do not depend on any parallel schedule.
pub fn clipped_surrogate<S: Scalar>(
    advantages: &AdvantageMatrix<S>,
    old_logprobs: &[Vec<S>],
    new_logprobs: &[Vec<S>],
    config: &ClipConfig,
) -> Result<SurrogateReport<S>> {
    check_shape("old_logprobs", old_logprobs, &advantages.rows)?;
    check_shape("new_logprobs", new_logprobs, &advantages.rows)?;

    let lo = S::one() - S::from_f64_lossy(config.eps_low);
    let hi = S::one() + S::from_f64_lossy(config.eps_high);
    let token_count = advantages.token_count();
    let n = S::from_count(token_count.max(1));

    let mut total = S::zero();
    let mut clipped = 0usize;
    let mut coeff = Vec::with_capacity(advantages.rows.len());
    for ((adv, old), new) in advantages.rows.iter().zip(old_logprobs).zip(new_logprobs) {
        let mut row = Vec::with_capacity(adv.len());
        for ((&a, &o), &nw) in adv.iter().zip(old).zip(new) {
            if !o.is_finite() {
                return Err(invalid("old_logprobs", "must be finite"));
            }
            let ratio = (nw - o).exp();
            if !ratio.is_finite() {
                return Err(Error::RatioOverflow);
            }
            let unclipped = ratio * a;
            let clipped_term = ratio.max(lo).min(hi) * a;
            if clipped_term < unclipped {
                clipped += 1;
                total = total + clipped_term;
                row.push(S::zero());
            } else {
                total = total + unclipped;
                row.push(unclipped / n);
            }
        }
        coeff.push(row);
    }

    let (objective, clipped_fraction) = if token_count == 0 {
        (S::zero(), S::zero())
    } else {
        (total / n, S::from_count(clipped) / n)
    };
    Ok(SurrogateReport {
        objective,
        clipped_fraction,
        token_count,
        per_token_coeff: coeff,
    })
}
