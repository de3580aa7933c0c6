//! Reward model, response likelihoods, the unit-ball prior and posterior sampling.
//!
//! All softmax-family quantities are computed in log space with the largest
//! exponent subtracted, so `β^R = 5` on large feature sums cannot overflow.

mod ranking;
mod sampler;

pub use ranking::Ranking;
pub use sampler::{sample_posterior, sample_posterior_chains, Belief, ChainProvenance, SamplerSettings};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::scalar::{dot, log_sum_exp, norm, softmax, Scalar};

/// Linear reward weights; samples from the prior or posterior satisfy `‖w‖₂ ≤ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent, bound = "")]
pub struct WeightVector<S: Scalar>(pub Vec<S>);

impl<S: Scalar> WeightVector<S> {
    pub fn new(w: Vec<S>) -> Self {
        Self(w)
    }

    pub fn zeros(k: usize) -> Self {
        Self(vec![S::zero(); k])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> S {
        norm(&self.0)
    }

    /// Rescales onto the unit sphere; zero stays zero.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n > S::zero() {
            Self(self.0.iter().map(|&v| v / n).collect())
        } else {
            self.clone()
        }
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }
}

/// How a 2-option preference is turned into a probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreferenceMode {
    /// Two-item softmax.
    #[default]
    Exact,
    /// `min(1, exp(β w·(Φ₁ − Φ₂)))`.
    Approx,
}

/// Which likelihood a response contributes to the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// Full Plackett-Luce ranking.
    #[default]
    Rank,
    /// Only the top choice, softmax over all options.
    PickBest,
    /// Two-option preference, using the evidence's [`PreferenceMode`].
    Pairwise,
}

fn check_dim<S: Scalar>(w: &[S], phi: &[S]) -> Result<()> {
    if w.len() != phi.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: phi.len(),
        });
    }
    Ok(())
}

/// `w · Φ`.
pub fn reward<S: Scalar>(w: &WeightVector<S>, phi: &[S]) -> Result<S> {
    check_dim(&w.0, phi)?;
    Ok(dot(&w.0, phi))
}

/// `β^D Σᵢ w · Φ(ξᵢ)`; the trajectory-space partition function is constant in `w` and dropped.
pub fn demo_log_likelihood<S: Scalar>(
    w: &WeightVector<S>,
    demos: &[Trajectory<S>],
    beta_demo: S,
) -> Result<S> {
    if demos.is_empty() {
        return Err(Error::EmptyEvidence);
    }
    let mut total = S::zero();
    for d in demos {
        total = total + reward(w, &d.phi)?;
    }
    Ok(beta_demo * total)
}

/// Probability that `phi_1` is preferred over `phi_2`.
pub fn preference_probability<S: Scalar>(
    w: &WeightVector<S>,
    phi_1: &[S],
    phi_2: &[S],
    beta: S,
    mode: PreferenceMode,
) -> Result<S> {
    preference_log_probability(w, phi_1, phi_2, beta, mode).map(S::exp)
}

pub fn preference_log_probability<S: Scalar>(
    w: &WeightVector<S>,
    phi_1: &[S],
    phi_2: &[S],
    beta: S,
    mode: PreferenceMode,
) -> Result<S> {
    let r1 = beta * reward(w, phi_1)?;
    let r2 = beta * reward(w, phi_2)?;
    Ok(match mode {
        PreferenceMode::Exact => -softplus(r2 - r1),
        PreferenceMode::Approx => (r1 - r2).min(S::zero()),
    })
}

/// `ln(1 + e^x)` without overflow.
fn softplus<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn scaled_rewards<S: Scalar, P: AsRef<[S]>>(w: &WeightVector<S>, phis: &[P], beta: S) -> Result<Vec<S>> {
    phis.iter().map(|p| reward(w, p.as_ref()).map(|r| beta * r)).collect()
}

/// Softmax probability that option `index` is picked from `phis`.
pub fn pick_best_probability<S: Scalar, P: AsRef<[S]>>(
    w: &WeightVector<S>,
    phis: &[P],
    index: usize,
    beta: S,
) -> Result<S> {
    if index >= phis.len() {
        return Err(Error::IndexOutOfRange {
            index,
            len: phis.len(),
        });
    }
    let r = scaled_rewards(w, phis, beta)?;
    Ok(softmax(&r)[index])
}

pub fn pick_best_log_probability<S: Scalar, P: AsRef<[S]>>(
    w: &WeightVector<S>,
    phis: &[P],
    index: usize,
    beta: S,
) -> Result<S> {
    if index >= phis.len() {
        return Err(Error::IndexOutOfRange {
            index,
            len: phis.len(),
        });
    }
    let r = scaled_rewards(w, phis, beta)?;
    Ok(r[index] - log_sum_exp(&r))
}

/// Plackett-Luce log-probability of scaled rewards listed best to worst.
pub(crate) fn plackett_luce_log<S: Scalar>(ranked: &[S]) -> S {
    // suffix log-sum-exp, accumulated from the worst item upwards
    let mut acc = S::neg_infinity();
    let mut total = S::zero();
    for &r in ranked.iter().rev() {
        acc = if acc == S::neg_infinity() {
            r
        } else {
            let hi = acc.max(r);
            hi + ((acc - hi).exp() + (r - hi).exp()).ln()
        };
        total = total + (r - acc);
    }
    total
}

/// Plackett-Luce probability of the ranking that lists `ranked` best to worst.
pub fn ranking_probability<S: Scalar, P: AsRef<[S]>>(
    w: &WeightVector<S>,
    ranked: &[P],
    beta: S,
) -> Result<S> {
    ranking_log_probability(w, ranked, beta).map(S::exp)
}

pub fn ranking_log_probability<S: Scalar, P: AsRef<[S]>>(
    w: &WeightVector<S>,
    ranked: &[P],
    beta: S,
) -> Result<S> {
    let r = scaled_rewards(w, ranked, beta)?;
    Ok(plackett_luce_log(&r))
}

/// A ranked query: the options' feature sums and the responder's ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Response<S: Scalar> {
    pub features: Vec<Vec<S>>,
    pub ranking: Ranking,
}

impl<S: Scalar> Response<S> {
    pub fn new(features: Vec<Vec<S>>, ranking: Ranking) -> Result<Self> {
        if ranking.len() != features.len() {
            return Err(Error::InvalidRanking(format!(
                "ranking covers {} options, query has {}",
                ranking.len(),
                features.len()
            )));
        }
        Ok(Self { features, ranking })
    }

    /// Feature sums reordered best to worst.
    pub fn ranked_features(&self) -> Vec<&[S]> {
        self.ranking.order().iter().map(|&i| self.features[i].as_slice()).collect()
    }
}

/// Everything the posterior conditions on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Evidence<S: Scalar> {
    pub demonstrations: Vec<Trajectory<S>>,
    pub responses: Vec<Response<S>>,
    pub beta_demo: S,
    pub beta_response: S,
    pub update_rule: UpdateRule,
    pub preference_mode: PreferenceMode,
}

impl<S: Scalar> Evidence<S> {
    pub fn new(beta_demo: S, beta_response: S, update_rule: UpdateRule) -> Self {
        Self {
            demonstrations: Vec::new(),
            responses: Vec::new(),
            beta_demo,
            beta_response,
            update_rule,
            preference_mode: PreferenceMode::Exact,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.demonstrations.is_empty() && self.responses.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_demo >= S::zero()) {
            return Err(Error::config("beta_demo", "must be non-negative"));
        }
        if !(self.beta_response >= S::zero()) {
            return Err(Error::config("beta_response", "must be non-negative"));
        }
        for r in &self.responses {
            if r.ranking.len() != r.features.len() {
                return Err(Error::InvalidRanking("ranking length differs from query size".into()));
            }
            if self.update_rule == UpdateRule::Pairwise && r.features.len() != 2 {
                return Err(Error::config("update_rule", "pairwise updates need 2-option queries"));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding, hex encoded.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("evidence serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    fn response_log_likelihood(&self, w: &WeightVector<S>, response: &Response<S>) -> Result<S> {
        let ranked = response.ranked_features();
        let beta = self.beta_response;
        match self.update_rule {
            UpdateRule::Rank => ranking_log_probability(w, &ranked, beta),
            UpdateRule::PickBest => pick_best_log_probability(w, &response.features, response.ranking.top(), beta),
            UpdateRule::Pairwise => {
                if ranked.len() != 2 {
                    return Err(Error::config("update_rule", "pairwise updates need 2-option queries"));
                }
                preference_log_probability(w, ranked[0], ranked[1], beta, self.preference_mode)
            }
        }
    }
}

/// Unnormalized log posterior: uniform unit-ball prior times every likelihood term.
///
/// Returns `-∞` outside the unit ball.
pub fn posterior_log_density<S: Scalar>(w: &WeightVector<S>, evidence: &Evidence<S>) -> Result<S> {
    if w.norm() > S::one() {
        return Ok(S::neg_infinity());
    }
    let mut total = S::zero();
    if !evidence.demonstrations.is_empty() {
        total = total + demo_log_likelihood(w, &evidence.demonstrations, evidence.beta_demo)?;
    }
    for r in &evidence.responses {
        total = total + evidence.response_log_likelihood(w, r)?;
    }
    Ok(total)
}

/// Flattened evidence used by the sampler's inner loop.
///
/// Produces the same values as [`posterior_log_density`] up to summation order.
pub(crate) struct PosteriorKernel<S: Scalar> {
    k: usize,
    demo_sum: Option<Vec<S>>,
    beta_demo: S,
    beta_response: S,
    rule: UpdateRule,
    mode: PreferenceMode,
    /// Per response: feature sums in ranked order, flattened row-major.
    ranked: Vec<(usize, Vec<S>)>,
}

impl<S: Scalar> PosteriorKernel<S> {
    pub(crate) fn new(evidence: &Evidence<S>, k: usize) -> Result<Self> {
        evidence.validate()?;
        let demo_sum = if evidence.demonstrations.is_empty() {
            None
        } else {
            let mut sum = vec![S::zero(); k];
            for d in &evidence.demonstrations {
                check_dim(&sum, &d.phi)?;
                for (a, &b) in sum.iter_mut().zip(&d.phi) {
                    *a = *a + b;
                }
            }
            Some(sum)
        };
        let mut ranked = Vec::with_capacity(evidence.responses.len());
        for r in &evidence.responses {
            let mut flat = Vec::with_capacity(r.features.len() * k);
            for phi in r.ranked_features() {
                check_dim(&vec![S::zero(); k], phi)?;
                flat.extend_from_slice(phi);
            }
            ranked.push((r.features.len(), flat));
        }
        Ok(Self {
            k,
            demo_sum,
            beta_demo: evidence.beta_demo,
            beta_response: evidence.beta_response,
            rule: evidence.update_rule,
            mode: evidence.preference_mode,
            ranked,
        })
    }

    pub(crate) fn log_density(&self, w: &[S], scratch: &mut Vec<S>) -> S {
        if norm(w) > S::one() {
            return S::neg_infinity();
        }
        let mut total = match &self.demo_sum {
            Some(sum) => self.beta_demo * dot(w, sum),
            None => S::zero(),
        };
        for (n, flat) in &self.ranked {
            scratch.clear();
            scratch.extend(flat.chunks(self.k).map(|phi| self.beta_response * dot(w, phi)));
            debug_assert_eq!(scratch.len(), *n);
            total = total
                + match self.rule {
                    UpdateRule::Rank => plackett_luce_log(scratch),
                    UpdateRule::PickBest => scratch[0] - log_sum_exp(scratch),
                    UpdateRule::Pairwise => match self.mode {
                        PreferenceMode::Exact => plackett_luce_log(scratch),
                        PreferenceMode::Approx => (scratch[0] - scratch[1]).min(S::zero()),
                    },
                };
        }
        total
    }
}
