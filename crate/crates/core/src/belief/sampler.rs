//! Random-walk Metropolis-Hastings over the unit ball.
//!
//! The chain starts at the origin. During burn-in the isotropic Gaussian
//! proposal scale is adapted in batches of 50 steps towards the target
//! acceptance rate; afterwards it is frozen and every `thin`-th state is
//! kept. Proposals outside the ball have zero prior density and are rejected.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Evidence, PosteriorKernel, WeightVector};
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};
use crate::seed;

const ADAPT_BATCH: usize = 50;
const MIN_ACCEPTANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSettings {
    /// Samples kept per chain.
    pub samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub target_acceptance: f64,
    pub initial_scale: f64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            samples: 1000,
            burn_in: 2000,
            thin: 50,
            target_acceptance: 0.23,
            initial_scale: 0.3,
        }
    }
}

impl SamplerSettings {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::config("sampler.samples", "must be at least 1"));
        }
        if self.thin == 0 {
            return Err(Error::config("sampler.thin", "must be at least 1"));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::config("sampler.target_acceptance", "must lie in (0, 1)"));
        }
        if !(self.initial_scale > 0.0) {
            return Err(Error::config("sampler.initial_scale", "must be positive"));
        }
        Ok(())
    }
}

/// Where a block of samples came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainProvenance {
    pub seed: u64,
    /// Index of this chain's first sample in [`Belief::samples`].
    pub offset: usize,
    pub samples: usize,
    pub acceptance_rate: f64,
    pub proposal_scale: f64,
}

/// Sample-based approximation of `p(w | evidence)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Belief<S: Scalar> {
    pub samples: Vec<WeightVector<S>>,
    /// Seed of the first chain.
    pub seed: u64,
    pub evidence_digest: String,
    #[serde(default)]
    pub settings: SamplerSettings,
    #[serde(default)]
    pub chains: Vec<ChainProvenance>,
}

impl<S: Scalar> Belief<S> {
    /// A belief made of fixed samples, e.g. for tests and metrics.
    pub fn from_samples(samples: Vec<WeightVector<S>>) -> Self {
        Self {
            samples,
            seed: 0,
            evidence_digest: String::new(),
            settings: SamplerSettings::default(),
            chains: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, WeightVector::dim)
    }

    pub fn mean(&self) -> WeightVector<S> {
        let k = self.dim();
        let mut m = vec![S::zero(); k];
        for s in &self.samples {
            for (a, &b) in m.iter_mut().zip(&s.0) {
                *a = *a + b;
            }
        }
        let n = S::lit(self.samples.len().max(1) as f64);
        WeightVector(m.into_iter().map(|v| v / n).collect())
    }

    pub fn mean_direction(&self) -> WeightVector<S> {
        self.mean().normalized()
    }

    /// Short digest of the samples, for traces.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(&self.samples).expect("samples serialize");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

struct Chain<S: Scalar> {
    samples: Vec<WeightVector<S>>,
    acceptance_rate: f64,
    proposal_scale: f64,
}

fn run_chain<S: Scalar>(
    kernel: &PosteriorKernel<S>,
    k: usize,
    settings: &SamplerSettings,
    chain_seed: u64,
) -> Result<Chain<S>> {
    let mut rng = seed::rng(chain_seed);
    let mut scratch = Vec::new();
    let mut current = vec![S::zero(); k];
    let mut current_lp = kernel.log_density(&current, &mut scratch);
    let mut proposal = vec![S::zero(); k];
    let mut scale = settings.initial_scale;

    let mut mh_step = |current: &mut Vec<S>, current_lp: &mut S, scale: f64, rng: &mut seed::Rng| -> bool {
        for (p, &c) in proposal.iter_mut().zip(current.iter()) {
            let z: f64 = StandardNormal.sample(rng);
            *p = c + S::lit(scale * z);
        }
        let u: f64 = rand::Rng::random(rng);
        if dot(&proposal, &proposal) > S::one() {
            return false;
        }
        let lp = kernel.log_density(&proposal, &mut scratch);
        let log_ratio = (lp - *current_lp).as_f64();
        if log_ratio >= 0.0 || u.ln() < log_ratio {
            current.copy_from_slice(&proposal);
            *current_lp = lp;
            true
        } else {
            false
        }
    };

    let mut accepted_in_batch = 0usize;
    for i in 0..settings.burn_in {
        if mh_step(&mut current, &mut current_lp, scale, &mut rng) {
            accepted_in_batch += 1;
        }
        if (i + 1) % ADAPT_BATCH == 0 {
            let rate = accepted_in_batch as f64 / ADAPT_BATCH as f64;
            scale = (scale * (3.0 * (rate - settings.target_acceptance)).exp()).clamp(1e-6, 2.0);
            accepted_in_batch = 0;
        }
    }

    let mut samples = Vec::with_capacity(settings.samples);
    let mut accepted = 0usize;
    let total = settings.samples * settings.thin;
    for i in 0..total {
        if mh_step(&mut current, &mut current_lp, scale, &mut rng) {
            accepted += 1;
        }
        if (i + 1) % settings.thin == 0 {
            samples.push(WeightVector(current.clone()));
        }
    }
    let acceptance_rate = accepted as f64 / total as f64;
    if acceptance_rate < MIN_ACCEPTANCE {
        return Err(Error::SamplerDiverged { rate: acceptance_rate });
    }
    Ok(Chain {
        samples,
        acceptance_rate,
        proposal_scale: scale,
    })
}

/// Draws `settings.samples` posterior samples from one chain seeded with `seed`.
pub fn sample_posterior<S: Scalar>(
    evidence: &Evidence<S>,
    k: usize,
    settings: &SamplerSettings,
    seed: u64,
) -> Result<Belief<S>> {
    sample_posterior_chains(evidence, k, settings, &[seed])
}

/// Runs one independent chain per seed (in parallel) and concatenates them in seed order.
///
/// `k` is the weight dimension; it is needed when the evidence is empty.
pub fn sample_posterior_chains<S: Scalar>(
    evidence: &Evidence<S>,
    k: usize,
    settings: &SamplerSettings,
    seeds: &[u64],
) -> Result<Belief<S>> {
    settings.validate()?;
    if seeds.is_empty() {
        return Err(Error::config("seeds", "at least one chain is required"));
    }
    let kernel = PosteriorKernel::new(evidence, k)?;
    let chains: Vec<Chain<S>> = seeds
        .par_iter()
        .map(|&s| run_chain(&kernel, k, settings, s))
        .collect::<Result<_>>()?;
    let mut samples = Vec::with_capacity(settings.samples * seeds.len());
    let mut provenance = Vec::with_capacity(seeds.len());
    for (chain, &s) in chains.into_iter().zip(seeds) {
        provenance.push(ChainProvenance {
            seed: s,
            offset: samples.len(),
            samples: chain.samples.len(),
            acceptance_rate: chain.acceptance_rate,
            proposal_scale: chain.proposal_scale,
        });
        samples.extend(chain.samples);
    }
    Ok(Belief {
        samples,
        seed: seeds[0],
        evidence_digest: evidence.digest(),
        settings: settings.clone(),
        chains: provenance,
    })
}
