//! Simulated human: MPC demonstrations and Plackett-Luce answers against a hidden `w_true`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{reward, sample_posterior, Evidence, Ranking, SamplerSettings, UpdateRule, WeightVector};
use crate::dynamics::{feature_sum, flatten, rollout, unflatten, System, Trajectory};
use crate::engine::Responder;
use crate::error::{Error, Result};
use crate::harness::metric_m;
use crate::querygen::optimizer::maximize;
use crate::querygen::{OptBudget, Query};
use crate::scalar::{softmax, Scalar};
use crate::seed::{self, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SimulatedHuman<S: Scalar> {
    pub w_true: WeightVector<S>,
    pub beta_demo: S,
    pub beta_response: S,
    pub seed: u64,
    /// Answer with the exact reward sort instead of sampling.
    pub deterministic: bool,
}

impl<S: Scalar> SimulatedHuman<S> {
    /// `w_true` is scaled onto the unit ball if it lies outside.
    pub fn new(w_true: WeightVector<S>, beta_demo: S, beta_response: S, seed: u64, deterministic: bool) -> Result<Self> {
        let n = w_true.norm();
        if !(n > S::zero()) {
            return Err(Error::ZeroTrueVector);
        }
        let w_true = if n > S::one() { w_true.normalized() } else { w_true };
        Ok(Self {
            w_true,
            beta_demo,
            beta_response,
            seed,
            deterministic,
        })
    }

    /// Ranks the options of `query`; `iteration` selects the random stream.
    pub fn answer_ranking(&self, query: &Query<S>, iteration: usize) -> Result<Ranking> {
        let rewards = query
            .trajectories
            .iter()
            .map(|t| reward(&self.w_true, &t.phi))
            .collect::<Result<Vec<S>>>()?;
        if self.deterministic {
            return Ok(sort_by_reward(&rewards));
        }
        let mut rng = seed::rng(seed::derive(self.seed, stream::RESPONDER, iteration as u64));
        Ok(sample_plackett_luce(&rewards, self.beta_response, &mut rng))
    }
}

impl<S: Scalar> Responder<S> for SimulatedHuman<S> {
    fn respond(&mut self, query: &Query<S>, iteration: usize) -> Result<Ranking> {
        self.answer_ranking(query, iteration)
    }

    fn true_weights(&self) -> Option<&WeightVector<S>> {
        Some(&self.w_true)
    }
}

/// Highest reward first; equal rewards keep index order.
pub fn sort_by_reward<S: Scalar>(rewards: &[S]) -> Ranking {
    let mut order: Vec<usize> = (0..rewards.len()).collect();
    order.sort_by(|&a, &b| rewards[b].partial_cmp(&rewards[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    Ranking::new(order).expect("sorted indices form a permutation")
}

/// Draws the top remaining option from the `beta`-softmax until none remain.
pub fn sample_plackett_luce<S: Scalar>(rewards: &[S], beta: S, rng: &mut impl Rng) -> Ranking {
    let mut remaining: Vec<usize> = (0..rewards.len()).collect();
    let mut order = Vec::with_capacity(rewards.len());
    while remaining.len() > 1 {
        let scaled: Vec<S> = remaining.iter().map(|&i| beta * rewards[i]).collect();
        let probs = softmax(&scaled);
        let u = S::lit(rng.random::<f64>());
        let mut acc = S::zero();
        let mut pick = remaining.len() - 1;
        for (j, &p) in probs.iter().enumerate() {
            acc = acc + p;
            if u < acc {
                pick = j;
                break;
            }
        }
        order.push(remaining.remove(pick));
    }
    order.extend(remaining);
    Ranking::new(order).expect("draws without replacement form a permutation")
}

/// Controls maximizing `w · Φ`, flattened.
fn optimal_controls<S: Scalar>(system: &dyn System<S>, w: &WeightVector<S>, seed: u64, budget: &OptBudget) -> Result<Vec<S>> {
    let spec = system.spec();
    if w.dim() != spec.feature_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.feature_dim,
            got: w.dim(),
        });
    }
    let bounds: Vec<[S; 2]> = (0..spec.horizon).flat_map(|_| spec.control_bounds.iter().copied()).collect();
    let objective = |x: &[S]| match feature_sum(system, x) {
        Ok(phi) => reward(w, &phi).unwrap_or_else(|_| S::nan()),
        Err(_) => S::nan(),
    };
    Ok(maximize(&bounds, budget.restarts, budget.iterations, seed::derive(seed, stream::OPTIMIZER, 0), objective)?.x)
}

/// Adds clipped Gaussian noise to every control component.
fn perturb<S: Scalar>(system: &dyn System<S>, flat: &[S], noise_scale: S, seed: u64) -> Result<Vec<Vec<S>>> {
    let spec = system.spec();
    let mut controls = unflatten(spec, flat);
    if noise_scale > S::zero() {
        let normal = Normal::new(0.0, noise_scale.as_f64()).map_err(|e| Error::config("noise_scale", e.to_string()))?;
        let mut rng = seed::rng(seed::derive(seed, stream::NOISE, 0));
        for u in &mut controls {
            for c in u.iter_mut() {
                *c = *c + S::lit(normal.sample(&mut rng));
            }
            spec.clamp_control(u);
        }
    }
    Ok(controls)
}

/// Demonstration from optimizing the controls for `w_true`, optionally corrupted by clipped control noise.
pub fn mpc_demonstration<S: Scalar>(
    system: &dyn System<S>,
    w_true: &WeightVector<S>,
    noise_scale: S,
    seed: u64,
    budget: &OptBudget,
) -> Result<Trajectory<S>> {
    if !(noise_scale >= S::zero()) {
        return Err(Error::config("noise_scale", "must be non-negative"));
    }
    let flat = optimal_controls(system, w_true, seed, budget)?;
    rollout(system, &perturb(system, &flat, noise_scale, seed)?)
}

/// How graded pools are generated and scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSettings {
    pub pool_size: usize,
    pub noise_scale: f64,
    pub beta_demo: f64,
    pub sampler: SamplerSettings,
    pub budget: OptBudget,
}

impl Default for PoolSettings {
    fn default() -> Self {
        Self {
            pool_size: 100,
            noise_scale: 0.3,
            beta_demo: 0.1,
            sampler: SamplerSettings::default(),
            budget: OptBudget::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GradedPool<S: Scalar> {
    pub low: Trajectory<S>,
    pub high: Trajectory<S>,
    /// Metric of each member's one-demo posterior, in pool order.
    pub scores: Vec<S>,
}

/// Metric `m` of the posterior induced by `demo` alone.
pub fn score_demonstration<S: Scalar>(
    demo: &Trajectory<S>,
    w_true: &WeightVector<S>,
    beta_demo: S,
    sampler: &SamplerSettings,
    seed: u64,
) -> Result<S> {
    let mut ev = Evidence::new(beta_demo, S::one(), UpdateRule::Rank);
    ev.demonstrations.push(demo.clone());
    let belief = sample_posterior(&ev, w_true.dim(), sampler, seed)?;
    metric_m(&belief, w_true)
}

/// Scores each demo; returns the argmin and argmax (first index on ties).
pub fn grade_pool<S: Scalar>(
    pool: &[Trajectory<S>],
    w_true: &WeightVector<S>,
    beta_demo: S,
    sampler: &SamplerSettings,
    seed: u64,
) -> Result<GradedPool<S>> {
    if pool.len() < 2 {
        return Err(Error::config("pool_size", "need at least 2 demonstrations"));
    }
    let scores = pool
        .par_iter()
        .map(|d| score_demonstration(d, w_true, beta_demo, sampler, seed::derive(seed, stream::SAMPLER, 0)))
        .collect::<Result<Vec<S>>>()?;
    let mut lo = 0;
    let mut hi = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[lo] {
            lo = i;
        }
        if s > scores[hi] {
            hi = i;
        }
    }
    Ok(GradedPool {
        low: pool[lo].clone(),
        high: pool[hi].clone(),
        scores,
    })
}

/// Noisy MPC demonstrations sharing one optimized control sequence, member `i` perturbed with seed `derive(seed, "pool", i)`.
pub fn demo_pool<S: Scalar>(
    system: &dyn System<S>,
    w_true: &WeightVector<S>,
    settings: &PoolSettings,
    seed: u64,
) -> Result<Vec<Trajectory<S>>> {
    let flat = optimal_controls(system, w_true, seed, &settings.budget)?;
    let noise = S::lit(settings.noise_scale);
    (0..settings.pool_size)
        .into_par_iter()
        .map(|i| rollout(system, &perturb(system, &flat, noise, seed::derive(seed, stream::POOL, i as u64))?))
        .collect()
}

/// Worst and best demonstrations of a noisy pool, graded by their one-demo posteriors.
pub fn graded_demo_pool<S: Scalar>(
    system: &dyn System<S>,
    w_true: &WeightVector<S>,
    settings: &PoolSettings,
    seed: u64,
) -> Result<GradedPool<S>> {
    if settings.pool_size < 2 {
        return Err(Error::config("pool_size", "need at least 2 demonstrations"));
    }
    if !(settings.noise_scale > 0.0) {
        return Err(Error::config("noise_scale", "a graded pool needs positive noise"));
    }
    let pool = demo_pool(system, w_true, settings, seed)?;
    grade_pool(&pool, w_true, S::lit(settings.beta_demo), &settings.sampler, seed)
}

/// Flattened controls of a trajectory, for re-optimizing or replaying.
pub fn demo_controls<S: Scalar>(demo: &Trajectory<S>) -> Vec<S> {
    flatten(&demo.controls)
}
