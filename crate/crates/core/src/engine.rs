//! The two-stage learning loop.
//!
//! Stage 1 turns demonstrations into a posterior over `w` that serves as the
//! prior for Stage 2, where each iteration synthesizes a query, collects a
//! ranking and resamples the belief. With iterated correction the query also
//! contains a trajectory drawn from a buffer that starts as the
//! demonstrations; the responder's top choice replaces the drawn entry.
//!
//! Seeds: with master seed `s`, iteration `i` (0-based) uses
//! `derive(s, "sampler", i + 1)` for the posterior resample (Stage 1 uses
//! index 0), `derive(s, "optimizer", i)` for the query budget and
//! `derive(s, "buffer", i)` for the buffer draw. Responders own their seeds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{
    sample_posterior, Belief, Evidence, PreferenceMode, Ranking, Response, SamplerSettings, UpdateRule, WeightVector,
};
use crate::dynamics::{System, Trajectory};
use crate::error::{Error, Result};
use crate::harness::metric_m;
use crate::querygen::{generate_query, ObjectiveKind, OptBudget, Query, QueryRequest, MAX_OPTIONS};
use crate::scalar::Scalar;
use crate::seed::{self, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DemPrefConfig<S: Scalar> {
    pub n_dem: usize,
    pub n_queries: usize,
    pub n_opt: usize,
    pub use_ic: bool,
    pub update_mode: UpdateRule,
    #[serde(default)]
    pub preference_mode: PreferenceMode,
    pub beta_demo: S,
    pub beta_response: S,
    #[serde(default)]
    pub sampler: SamplerSettings,
    #[serde(default)]
    pub budget: OptBudget,
    pub seed: u64,
}

impl<S: Scalar> Default for DemPrefConfig<S> {
    fn default() -> Self {
        Self {
            n_dem: 1,
            n_queries: 25,
            n_opt: 2,
            use_ic: false,
            update_mode: UpdateRule::Rank,
            preference_mode: PreferenceMode::Exact,
            beta_demo: S::lit(0.1),
            beta_response: S::lit(5.0),
            sampler: SamplerSettings::default(),
            budget: OptBudget::default(),
            seed: 0,
        }
    }
}

impl<S: Scalar> DemPrefConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_OPTIONS).contains(&self.n_opt) {
            return Err(Error::config("n_opt", format!("must lie in [2, {MAX_OPTIONS}]")));
        }
        if self.use_ic && self.n_dem == 0 {
            return Err(Error::config("use_ic", "iterated correction needs at least one demonstration"));
        }
        if self.update_mode == UpdateRule::Pairwise && self.n_opt != 2 {
            return Err(Error::config("update_mode", "pairwise updates need n_opt = 2"));
        }
        if !(self.beta_demo >= S::zero()) || !self.beta_demo.is_finite() {
            return Err(Error::config("beta_demo", "must be a non-negative number"));
        }
        if !(self.beta_response >= S::zero()) || !self.beta_response.is_finite() {
            return Err(Error::config("beta_response", "must be a non-negative number"));
        }
        self.sampler.validate()?;
        self.budget.validate()
    }

    /// Objective that matches the update rule.
    pub fn objective(&self) -> ObjectiveKind {
        match (self.update_mode, self.preference_mode) {
            (UpdateRule::Rank, _) | (UpdateRule::Pairwise, PreferenceMode::Exact) => ObjectiveKind::Ranking,
            (UpdateRule::PickBest, _) => ObjectiveKind::PickBest,
            (UpdateRule::Pairwise, PreferenceMode::Approx) => ObjectiveKind::PairwiseApprox,
        }
    }

    fn empty_evidence(&self) -> Evidence<S> {
        let mut ev = Evidence::new(self.beta_demo, self.beta_response, self.update_mode);
        ev.preference_mode = self.preference_mode;
        ev
    }
}

/// Anything that can rank a query: a simulated human or a live session.
pub trait Responder<S: Scalar> {
    fn respond(&mut self, query: &Query<S>, iteration: usize) -> Result<Ranking>;

    /// Ground truth, when known, for tracing the convergence metric.
    fn true_weights(&self) -> Option<&WeightVector<S>> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TraceRecord<S: Scalar> {
    pub iteration: usize,
    pub belief_digest: String,
    pub query_features: Vec<Vec<S>>,
    pub stored_index: Option<usize>,
    pub objective: S,
    pub ranking: Ranking,
    pub buffer_slot: Option<usize>,
    pub metric: Option<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SessionState<S: Scalar> {
    pub evidence: Evidence<S>,
    pub belief: Belief<S>,
    pub buffer: Vec<Trajectory<S>>,
    pub trace: Vec<TraceRecord<S>>,
    pub iteration: usize,
    /// Convergence metric of the Stage-1 belief, when ground truth is known.
    pub prior_metric: Option<S>,
}

impl<S: Scalar> SessionState<S> {
    /// Metric after Stage 1 followed by the metric after every query.
    pub fn metric_curve(&self) -> Option<Vec<S>> {
        let mut curve = vec![self.prior_metric?];
        for r in &self.trace {
            curve.push(r.metric?);
        }
        Some(curve)
    }
}

/// A query awaiting its response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PendingQuery<S: Scalar> {
    pub iteration: usize,
    pub query: Query<S>,
    /// Buffer entry shown as the stored trajectory.
    pub buffer_slot: Option<usize>,
}

/// Stage 1: posterior over `w` given the demonstrations (the uniform-ball prior when there are none).
pub fn learn_prior<S: Scalar>(demos: &[Trajectory<S>], config: &DemPrefConfig<S>, k: usize) -> Result<Belief<S>> {
    if demos.len() != config.n_dem {
        return Err(Error::config("n_dem", format!("expected {} demonstrations, got {}", config.n_dem, demos.len())));
    }
    let mut evidence = config.empty_evidence();
    evidence.demonstrations = demos.to_vec();
    sample_posterior(&evidence, k, &config.sampler, seed::derive(config.seed, stream::SAMPLER, 0))
}

/// Runs Stage 1 and returns the state the query loop starts from.
pub fn initial_state<S: Scalar>(
    config: &DemPrefConfig<S>,
    system: &dyn System<S>,
    demos: &[Trajectory<S>],
    w_true: Option<&WeightVector<S>>,
) -> Result<SessionState<S>> {
    config.validate()?;
    let k = system.spec().feature_dim;
    let belief = learn_prior(demos, config, k)?;
    let mut evidence = config.empty_evidence();
    evidence.demonstrations = demos.to_vec();
    let prior_metric = w_true.map(|w| metric_m(&belief, w)).transpose()?;
    Ok(SessionState {
        evidence,
        belief,
        buffer: if config.use_ic { demos.to_vec() } else { Vec::new() },
        trace: Vec::new(),
        iteration: 0,
        prior_metric,
    })
}

/// Synthesizes the next query; with iterated correction a buffer entry is drawn as the stored trajectory.
pub fn prepare_query<S: Scalar>(
    state: &SessionState<S>,
    config: &DemPrefConfig<S>,
    system: &dyn System<S>,
) -> Result<PendingQuery<S>> {
    let i = state.iteration;
    let buffer_slot = if config.use_ic {
        if state.buffer.is_empty() {
            return Err(Error::config("use_ic", "iterated correction buffer is empty"));
        }
        let mut rng = seed::rng(seed::derive(config.seed, stream::BUFFER, i as u64));
        Some(rng.random_range(0..state.buffer.len()))
    } else {
        None
    };
    let budget = config.budget.with_seed(seed::derive(config.seed, stream::OPTIMIZER, i as u64));
    let req = QueryRequest {
        n_opt: config.n_opt,
        stored: buffer_slot.map(|s| &state.buffer[s]),
        beta_response: config.beta_response,
        objective: config.objective(),
        budget: &budget,
    };
    let query = generate_query(system, &state.belief, &req)?;
    Ok(PendingQuery {
        iteration: i,
        query,
        buffer_slot,
    })
}

/// Folds a ranking into the evidence, resamples the belief and updates the buffer.
pub fn apply_response<S: Scalar>(
    state: &SessionState<S>,
    config: &DemPrefConfig<S>,
    pending: &PendingQuery<S>,
    ranking: Ranking,
    w_true: Option<&WeightVector<S>>,
) -> Result<SessionState<S>> {
    if pending.iteration != state.iteration {
        return Err(Error::config(
            "iteration",
            format!("response for iteration {} but session is at {}", pending.iteration, state.iteration),
        ));
    }
    let query = &pending.query;
    let response = Response::new(query.features(), ranking.clone())?;
    let mut next = state.clone();
    next.evidence.responses.push(response);
    let k = state.belief.dim().max(query.trajectories[0].phi.len());
    next.belief = sample_posterior(
        &next.evidence,
        k,
        &config.sampler,
        seed::derive(config.seed, stream::SAMPLER, state.iteration as u64 + 1),
    )?;
    if let Some(slot) = pending.buffer_slot {
        next.buffer[slot] = query.trajectories[ranking.top()].clone();
    }
    let metric = w_true.map(|w| metric_m(&next.belief, w)).transpose()?;
    next.trace.push(TraceRecord {
        iteration: state.iteration,
        belief_digest: next.belief.digest(),
        query_features: query.features(),
        stored_index: query.stored_index,
        objective: query.objective_value,
        ranking,
        buffer_slot: pending.buffer_slot,
        metric,
    });
    next.iteration += 1;
    Ok(next)
}

/// One query/response/update cycle.
pub fn dempref_step<S: Scalar>(
    state: &SessionState<S>,
    config: &DemPrefConfig<S>,
    system: &dyn System<S>,
    responder: &mut dyn Responder<S>,
) -> Result<SessionState<S>> {
    let pending = prepare_query(state, config, system)?;
    let ranking = responder.respond(&pending.query, pending.iteration)?;
    if ranking.len() != pending.query.len() {
        return Err(Error::InvalidRanking(format!(
            "responder ranked {} options, query has {}",
            ranking.len(),
            pending.query.len()
        )));
    }
    let w_true = responder.true_weights().cloned();
    apply_response(state, config, &pending, ranking, w_true.as_ref())
}

/// Stage 1 followed by `n_queries` steps.
pub fn run<S: Scalar>(
    config: &DemPrefConfig<S>,
    system: &dyn System<S>,
    demos: &[Trajectory<S>],
    responder: &mut dyn Responder<S>,
) -> Result<SessionState<S>> {
    let w_true = responder.true_weights().cloned();
    let mut state = initial_state(config, system, demos, w_true.as_ref())?;
    for _ in 0..config.n_queries {
        state = dempref_step(&state, config, system, responder)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::posterior_log_density;
    use crate::dynamics::{rollout, Driver};

    fn small_config(seed: u64) -> DemPrefConfig<f64> {
        DemPrefConfig {
            n_dem: 1,
            n_queries: 2,
            n_opt: 3,
            use_ic: true,
            sampler: SamplerSettings {
                samples: 100,
                burn_in: 500,
                thin: 5,
                ..SamplerSettings::default()
            },
            budget: OptBudget {
                restarts: 1,
                iterations: 2,
                mc_samples: 100,
                seed: 0,
            },
            seed,
            ..DemPrefConfig::default()
        }
    }

    /// Always ranks the generated option at `favorite` first.
    struct Fixed {
        favorite: usize,
    }

    impl Responder<f64> for Fixed {
        fn respond(&mut self, query: &Query<f64>, _: usize) -> Result<Ranking> {
            let mut order = vec![self.favorite];
            order.extend((0..query.len()).filter(|&i| i != self.favorite));
            Ranking::new(order)
        }
    }

    #[test]
    fn config_validation() {
        let mut c = small_config(0);
        assert!(c.validate().is_ok());
        c.n_opt = 6;
        assert!(c.validate().is_err());
        c.n_opt = 3;
        c.n_dem = 0;
        assert!(c.validate().is_err());
        c.use_ic = false;
        c.beta_response = -1.0;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig { field, .. }) if field == "beta_response"));
    }

    #[test]
    fn identical_demos_equal_doubled_rationality() {
        let driver = Driver::<f64>::new();
        let d = rollout(&driver, &vec![vec![0.0, 0.5]; 5]).unwrap();
        let mut two = small_config(1).empty_evidence();
        two.demonstrations = vec![d.clone(), d.clone()];
        let mut one = small_config(1).empty_evidence();
        one.beta_demo = 0.2;
        one.demonstrations = vec![d];
        for w in [[0.1, 0.2, -0.3, 0.4], [-0.5, 0.0, 0.5, 0.1]] {
            let w = WeightVector(w.to_vec());
            let a = posterior_log_density(&w, &two).unwrap();
            let b = posterior_log_density(&w, &one).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ic_buffer_takes_top_ranked_trajectory() {
        let driver = Driver::<f64>::new();
        let d = rollout(&driver, &vec![vec![0.0, 0.2]; 5]).unwrap();
        let config = small_config(3);
        let state = initial_state(&config, &driver, &[d.clone()], None).unwrap();
        assert_eq!(state.buffer, vec![d.clone()]);
        let mut responder = Fixed { favorite: 1 };
        let pending = prepare_query(&state, &config, &driver).unwrap();
        assert_eq!(pending.query.trajectories[0], d);
        let next = dempref_step(&state, &config, &driver, &mut responder).unwrap();
        assert_eq!(next.buffer.len(), 1);
        assert_eq!(next.buffer[0], pending.query.trajectories[1]);
        assert_eq!(next.trace.len(), 1);
        assert_eq!(next.evidence.responses.len(), 1);
    }

    #[test]
    fn zero_queries_leaves_stage_one_state() {
        let driver = Driver::<f64>::new();
        let d = rollout(&driver, &vec![vec![0.0, 0.2]; 5]).unwrap();
        let mut config = small_config(4);
        config.n_queries = 0;
        let state = run(&config, &driver, &[d.clone()], &mut Fixed { favorite: 0 }).unwrap();
        let fresh = initial_state(&config, &driver, &[d], None).unwrap();
        assert_eq!(state, fresh);
        assert!(state.trace.is_empty());
    }

    #[test]
    fn runs_are_reproducible() {
        let driver = Driver::<f64>::new();
        let d = rollout(&driver, &vec![vec![0.3, 0.2]; 5]).unwrap();
        let config = small_config(5);
        let a = run(&config, &driver, &[d.clone()], &mut Fixed { favorite: 2 }).unwrap();
        let b = run(&config, &driver, &[d], &mut Fixed { favorite: 2 }).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.trace.len(), 2);
        assert_eq!(a.evidence.responses.len(), 2);
    }

    #[test]
    fn wrong_demo_count_is_rejected() {
        let driver = Driver::<f64>::new();
        let config = small_config(0);
        assert!(initial_state(&config, &driver, &[], None).is_err());
    }

    #[test]
    fn stale_pending_query_is_rejected() {
        let driver = Driver::<f64>::new();
        let d = rollout(&driver, &vec![vec![0.0, 0.2]; 5]).unwrap();
        let config = small_config(6);
        let state = initial_state(&config, &driver, &[d], None).unwrap();
        let pending = prepare_query(&state, &config, &driver).unwrap();
        let next = apply_response(&state, &config, &pending, Ranking::identity(3), None).unwrap();
        assert!(apply_response(&next, &config, &pending, Ranking::identity(3), None).is_err());
    }
}
