//! Query synthesis by maximizing the expected posterior volume a response removes.
//!
//! For a query with options `ξ₁..ξₙ` the ranking objective is
//!
//! ```text
//! min over σ ∈ Sₙ of  Ê_w[1 − P(σ | w)]
//! ```
//!
//! with `P` the Plackett-Luce ranking probability and `Ê` a Monte Carlo
//! average over belief samples. The free trajectories' control sequences are
//! the decision variables; a stored trajectory, when given, is held fixed at
//! index 0.

pub mod optimizer;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{Belief, PreferenceMode};
use crate::dynamics::{feature_sum, rollout, unflatten, System, Trajectory};
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};
use crate::seed;

/// Largest query the ranking objective enumerates (5! = 120 orderings).
pub const MAX_OPTIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Query<S: Scalar> {
    pub trajectories: Vec<Trajectory<S>>,
    pub stored_index: Option<usize>,
    #[serde(rename = "objective")]
    pub objective_value: S,
}

impl<S: Scalar> Query<S> {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn features(&self) -> Vec<Vec<S>> {
        self.trajectories.iter().map(|t| t.phi.clone()).collect()
    }
}

/// Compute budget for one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptBudget {
    pub restarts: usize,
    /// Coordinate sweeps per restart.
    pub iterations: usize,
    /// Belief samples in the objective's Monte Carlo average.
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for OptBudget {
    fn default() -> Self {
        Self {
            restarts: 8,
            iterations: 40,
            mc_samples: 10_000,
            seed: 0,
        }
    }
}

impl OptBudget {
    /// The full-fidelity Monte Carlo sample count.
    pub const FULL_MC_SAMPLES: usize = 50_000;

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::config("budget.restarts", "must be positive"));
        }
        if self.mc_samples == 0 {
            return Err(Error::config("budget.mc_samples", "must be positive"));
        }
        Ok(())
    }
}

/// Which volume-removal objective drives the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// Min over all orderings of the expected removed volume.
    #[default]
    Ranking,
    /// Min over options of the expected volume removed if that option is picked.
    PickBest,
    /// Two options under the `min(1, exp(·))` preference approximation.
    PairwiseApprox,
}

/// Belief samples used by the objective, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct McSample<S: Scalar> {
    k: usize,
    flat: Vec<S>,
}

impl<S: Scalar> McSample<S> {
    /// Every belief sample, once.
    pub fn all(belief: &Belief<S>) -> Result<Self> {
        if belief.is_empty() {
            return Err(Error::EmptyBelief);
        }
        Ok(Self {
            k: belief.dim(),
            flat: belief.samples.iter().flat_map(|w| w.0.iter().copied()).collect(),
        })
    }

    /// `count` samples: without replacement when the belief is large enough,
    /// otherwise with replacement.
    pub fn draw(belief: &Belief<S>, count: usize, seed: u64) -> Result<Self> {
        if belief.is_empty() {
            return Err(Error::EmptyBelief);
        }
        let mut rng = seed::rng(seed);
        let n = belief.len();
        let picks: Vec<usize> = if n >= count {
            index::sample(&mut rng, n, count).into_vec()
        } else {
            (0..count).map(|_| rng.random_range(0..n)).collect()
        };
        Ok(Self {
            k: belief.dim(),
            flat: picks.iter().flat_map(|&i| belief.samples[i].0.iter().copied()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.flat.len() / self.k.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    fn rows(&self) -> impl Iterator<Item = &[S]> {
        self.flat.chunks(self.k)
    }
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

fn check_features<S: Scalar>(phis: &[Vec<S>], mc: &McSample<S>) -> Result<()> {
    for p in phis {
        if p.len() != mc.k {
            return Err(Error::DimensionMismatch {
                expected: mc.k,
                got: p.len(),
            });
        }
    }
    Ok(())
}

/// Stabilized `exp(β w·Φᵢ − max)` for every option.
fn option_weights<S: Scalar>(w: &[S], phis: &[Vec<S>], beta: S, out: &mut [S]) {
    let mut max = S::neg_infinity();
    for (o, p) in out.iter_mut().zip(phis) {
        *o = beta * dot(w, p);
        max = max.max(*o);
    }
    for o in out.iter_mut() {
        *o = (*o - max).exp();
    }
}

/// Per-sample scratch for the Plackett-Luce enumeration.
///
/// `log P(σ) = Σᵢ rᵢ − Σ_d L(S_d)`, where `S_d` is the set of options still
/// unranked at depth `d` and `L` its log-sum-exp. `L` is tabulated once per
/// subset, so every ordering costs one `exp` at its leaf.
struct RankingTable<S: Scalar> {
    rewards: Vec<S>,
    lse: Vec<S>,
}

impl<S: Scalar> RankingTable<S> {
    fn new(n: usize) -> Self {
        Self {
            rewards: vec![S::zero(); n],
            lse: vec![S::neg_infinity(); 1 << n],
        }
    }

    fn fill(&mut self, w: &[S], phis: &[Vec<S>], beta: S) {
        for (r, p) in self.rewards.iter_mut().zip(phis) {
            *r = beta * dot(w, p);
        }
        self.lse[0] = S::neg_infinity();
        for mask in 1..self.lse.len() {
            let low = mask.trailing_zeros() as usize;
            let rest = self.lse[mask & (mask - 1)];
            let r = self.rewards[low];
            self.lse[mask] = if rest == S::neg_infinity() {
                r
            } else {
                let hi = rest.max(r);
                hi + ((rest - hi).exp() + (r - hi).exp()).ln()
            };
        }
    }

    /// Adds `P(σ)` for every ordering σ, in lexicographic order, to `acc`.
    fn accumulate(&self, acc: &mut [S]) {
        let n = self.rewards.len();
        let total: S = self.rewards.iter().copied().sum();
        let mut leaf = 0;
        self.walk((1 << n) - 1, S::zero(), total, acc, &mut leaf);
    }

    fn walk(&self, mask: usize, lse_sum: S, total: S, acc: &mut [S], leaf: &mut usize) {
        if mask & (mask - 1) == 0 {
            // one option left; its own L equals its reward
            acc[*leaf] = acc[*leaf] + (total - lse_sum - self.lse[mask]).exp();
            *leaf += 1;
            return;
        }
        let here = lse_sum + self.lse[mask];
        for i in 0..self.rewards.len() {
            if mask & (1 << i) != 0 {
                self.walk(mask & !(1 << i), here, total, acc, leaf);
            }
        }
    }
}

/// `min over σ of Ê[1 − P(σ | w)]`; at most `1 − 1/n!`.
pub fn ranking_volume_objective<S: Scalar>(phis: &[Vec<S>], mc: &McSample<S>, beta: S) -> Result<S> {
    let n = phis.len();
    if n > MAX_OPTIONS {
        return Err(Error::TooManyOptions(n));
    }
    if n < 2 {
        return Err(Error::config("n_opt", "a query needs at least 2 options"));
    }
    if mc.is_empty() {
        return Err(Error::EmptyBelief);
    }
    check_features(phis, mc)?;
    let n_perm: usize = (1..=n).product();
    let mut acc = vec![S::zero(); n_perm];
    let mut table = RankingTable::new(n);
    for w in mc.rows() {
        table.fill(w, phis, beta);
        table.accumulate(&mut acc);
    }
    let m = S::lit(mc.len() as f64);
    let best = acc.iter().copied().fold(S::neg_infinity(), S::max);
    Ok(S::one() - best / m)
}

/// `min over i of Ê[1 − P(ξᵢ picked | w)]`.
pub fn pick_best_volume_objective<S: Scalar>(phis: &[Vec<S>], mc: &McSample<S>, beta: S) -> Result<S> {
    let n = phis.len();
    if n < 2 {
        return Err(Error::config("n_opt", "a query needs at least 2 options"));
    }
    if mc.is_empty() {
        return Err(Error::EmptyBelief);
    }
    check_features(phis, mc)?;
    let mut acc = vec![S::zero(); n];
    let mut e = vec![S::zero(); n];
    for w in mc.rows() {
        option_weights(w, phis, beta, &mut e);
        let total: S = e.iter().copied().sum();
        for (a, &x) in acc.iter_mut().zip(&e) {
            *a = *a + x / total;
        }
    }
    let m = S::lit(mc.len() as f64);
    let best = acc.iter().copied().fold(S::neg_infinity(), S::max);
    Ok(S::one() - best / m)
}

/// `min{Ê[1 − P(ξ₁ | w)], Ê[1 − P(ξ₂ | w)]}` for a two-option query.
pub fn pairwise_volume_objective<S: Scalar>(
    phi_1: &[S],
    phi_2: &[S],
    mc: &McSample<S>,
    beta: S,
    mode: PreferenceMode,
) -> Result<S> {
    let phis = [phi_1.to_vec(), phi_2.to_vec()];
    match mode {
        PreferenceMode::Exact => pick_best_volume_objective(&phis, mc, beta),
        PreferenceMode::Approx => {
            if mc.is_empty() {
                return Err(Error::EmptyBelief);
            }
            check_features(&phis, mc)?;
            let (mut p1, mut p2) = (S::zero(), S::zero());
            for w in mc.rows() {
                let d = beta * (dot(w, phi_1) - dot(w, phi_2));
                p1 = p1 + d.min(S::zero()).exp();
                p2 = p2 + (-d).min(S::zero()).exp();
            }
            let m = S::lit(mc.len() as f64);
            Ok((S::one() - p1 / m).min(S::one() - p2 / m))
        }
    }
}

pub fn volume_objective<S: Scalar>(kind: ObjectiveKind, phis: &[Vec<S>], mc: &McSample<S>, beta: S) -> Result<S> {
    match kind {
        ObjectiveKind::Ranking => ranking_volume_objective(phis, mc, beta),
        ObjectiveKind::PickBest => pick_best_volume_objective(phis, mc, beta),
        ObjectiveKind::PairwiseApprox => {
            if phis.len() != 2 {
                return Err(Error::config("n_opt", "the approximate pairwise objective needs 2 options"));
            }
            pairwise_volume_objective(&phis[0], &phis[1], mc, beta, PreferenceMode::Approx)
        }
    }
}

/// Parameters shared by [`generate_query`] and [`evaluate_query`].
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRequest<'a, S: Scalar> {
    pub n_opt: usize,
    pub stored: Option<&'a Trajectory<S>>,
    pub beta_response: S,
    pub objective: ObjectiveKind,
    pub budget: &'a OptBudget,
}

fn subsample<S: Scalar>(belief: &Belief<S>, budget: &OptBudget) -> Result<McSample<S>> {
    McSample::draw(belief, budget.mc_samples, seed::derive(budget.seed, seed::stream::SUBSAMPLE, 0))
}

/// Re-evaluates a query's objective with the Monte Carlo subsample its budget selects.
pub fn evaluate_query<S: Scalar>(query: &Query<S>, belief: &Belief<S>, req: &QueryRequest<'_, S>) -> Result<S> {
    let mc = subsample(belief, req.budget)?;
    volume_objective(req.objective, &query.features(), &mc, req.beta_response)
}

/// Synthesizes the best query found within the budget.
pub fn generate_query<S: Scalar>(
    system: &dyn System<S>,
    belief: &Belief<S>,
    req: &QueryRequest<'_, S>,
) -> Result<Query<S>> {
    let n_opt = req.n_opt;
    if n_opt > MAX_OPTIONS {
        return Err(Error::TooManyOptions(n_opt));
    }
    if n_opt < 2 {
        return Err(Error::config("n_opt", "a query needs at least 2 options"));
    }
    let mc = subsample(belief, req.budget)?;
    let spec = system.spec();
    let stored_phi = req.stored.map(|t| t.phi.clone());
    let free = n_opt - usize::from(req.stored.is_some());
    let per = spec.decision_dim();
    let bounds: Vec<[S; 2]> = (0..free).flat_map(|_| (0..spec.horizon).flat_map(|_| spec.control_bounds.iter().copied())).collect();

    let objective = |x: &[S]| -> S {
        let mut phis = Vec::with_capacity(n_opt);
        if let Some(p) = &stored_phi {
            phis.push(p.clone());
        }
        for chunk in x.chunks(per) {
            match feature_sum(system, chunk) {
                Ok(p) => phis.push(p),
                Err(_) => return S::nan(),
            }
        }
        volume_objective(req.objective, &phis, &mc, req.beta_response).unwrap_or_else(|_| S::nan())
    };
    let opt = optimizer::maximize(
        &bounds,
        req.budget.restarts,
        req.budget.iterations,
        seed::derive(req.budget.seed, seed::stream::OPTIMIZER, 0),
        objective,
    )?;

    let mut trajectories = Vec::with_capacity(n_opt);
    if let Some(t) = req.stored {
        trajectories.push(t.clone());
    }
    for chunk in opt.x.chunks(per) {
        trajectories.push(rollout(system, &unflatten(spec, chunk))?);
    }
    let phis: Vec<Vec<S>> = trajectories.iter().map(|t| t.phi.clone()).collect();
    let objective_value = volume_objective(req.objective, &phis, &mc, req.beta_response)?;
    Ok(Query {
        trajectories,
        stored_index: req.stored.map(|_| 0),
        objective_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{pick_best_probability, ranking_probability, WeightVector};
    use crate::dynamics::Driver;

    fn point_belief(w: &[f64]) -> Belief<f64> {
        Belief::from_samples(vec![WeightVector(w.to_vec())])
    }

    #[test]
    fn permutations_are_lexicographic() {
        assert_eq!(permutations(3), vec![
            vec![0, 1, 2],
            vec![0, 2, 1],
            vec![1, 0, 2],
            vec![1, 2, 0],
            vec![2, 0, 1],
            vec![2, 1, 0]
        ]);
        assert_eq!(permutations(5).len(), 120);
    }

    #[test]
    fn pairwise_examples() {
        let b = point_belief(&[1.0, 0.0]);
        let mc = McSample::all(&b).unwrap();
        let p = [0.3, 0.1];
        let exact = pairwise_volume_objective(&p, &p, &mc, 5.0, PreferenceMode::Exact).unwrap();
        assert_eq!(exact, 0.5);
        let approx = pairwise_volume_objective(&p, &p, &mc, 5.0, PreferenceMode::Approx).unwrap();
        assert_eq!(approx, 0.0);
        let ln2 = 2f64.ln();
        let v = pairwise_volume_objective(&[ln2, 0.0], &[0.0, 0.0], &mc, 1.0, PreferenceMode::Exact).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ranking_objective_symmetric_input() {
        let b = point_belief(&[0.2, -0.4]);
        let mc = McSample::all(&b).unwrap();
        let v: f64 = ranking_volume_objective(&vec![vec![1.0, 1.0]; 3], &mc, 5.0).unwrap();
        assert!((v - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn ranking_objective_reduces_to_pairwise_for_two_options() {
        let b = Belief::from_samples(vec![WeightVector(vec![0.3, 0.5]), WeightVector(vec![-0.6, 0.1])]);
        let mc = McSample::all(&b).unwrap();
        let (p1, p2): (Vec<f64>, Vec<f64>) = (vec![0.4, -1.0], vec![1.2, 0.7]);
        let r = ranking_volume_objective(&[p1.clone(), p2.clone()], &mc, 5.0).unwrap();
        let q = pairwise_volume_objective(&p1, &p2, &mc, 5.0, PreferenceMode::Exact).unwrap();
        assert!((r - q).abs() < 1e-15);
    }

    #[test]
    fn ranking_objective_matches_naive_double_loop() {
        let mut rng = seed::rng(77);
        let samples: Vec<WeightVector<f64>> = (0..40)
            .map(|_| WeightVector((0..3).map(|_| rng.random_range(-0.6..0.6)).collect()))
            .collect();
        let b = Belief::from_samples(samples.clone());
        let mc = McSample::all(&b).unwrap();
        let phis: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let got = ranking_volume_objective(&phis, &mc, 5.0).unwrap();
        let mut expected = f64::INFINITY;
        for perm in permutations(3) {
            let ranked: Vec<Vec<f64>> = perm.iter().map(|&i| phis[i].clone()).collect();
            let mean: f64 = samples
                .iter()
                .map(|w| 1.0 - ranking_probability(w, &ranked, 5.0).unwrap())
                .sum::<f64>()
                / 40.0;
            expected = expected.min(mean);
        }
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn pick_best_objective_matches_softmax() {
        let samples = vec![WeightVector(vec![0.5, 0.1]), WeightVector(vec![-0.2, 0.9])];
        let b = Belief::from_samples(samples.clone());
        let mc = McSample::all(&b).unwrap();
        let phis = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]];
        let got = pick_best_volume_objective(&phis, &mc, 2.0).unwrap();
        let expected = (0..3)
            .map(|i| {
                samples.iter().map(|w| 1.0 - pick_best_probability(w, &phis, i, 2.0).unwrap()).sum::<f64>() / 2.0
            })
            .fold(f64::INFINITY, f64::min);
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn too_many_options_and_empty_belief() {
        let b = point_belief(&[1.0]);
        let mc = McSample::all(&b).unwrap();
        assert_eq!(ranking_volume_objective(&vec![vec![0.0]; 6], &mc, 1.0), Err(Error::TooManyOptions(6)));
        let empty = Belief::<f64>::from_samples(vec![]);
        assert_eq!(McSample::all(&empty), Err(Error::EmptyBelief));
    }

    #[test]
    fn subsample_reuses_small_beliefs() {
        let b = Belief::from_samples(vec![WeightVector(vec![1.0]), WeightVector(vec![2.0])]);
        let mc = McSample::draw(&b, 10, 3).unwrap();
        assert_eq!(mc.len(), 10);
        let big = Belief::from_samples((0..20).map(|i| WeightVector(vec![i as f64])).collect());
        let mc = McSample::draw(&big, 20, 3).unwrap();
        let mut vals = mc.flat.clone();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, (0..20).map(f64::from).collect::<Vec<_>>());
    }

    fn prior_like_belief() -> Belief<f64> {
        let mut rng = seed::rng(12);
        let samples = (0..300)
            .map(|_| {
                let w: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                WeightVector(w).normalized()
            })
            .collect();
        Belief::from_samples(samples)
    }

    #[test]
    fn zero_iteration_budget_returns_consistent_initialization() {
        let driver = Driver::<f64>::new();
        let belief = prior_like_belief();
        let budget = OptBudget {
            restarts: 1,
            iterations: 0,
            mc_samples: 300,
            seed: 4,
        };
        let req = QueryRequest {
            n_opt: 2,
            stored: None,
            beta_response: 5.0,
            objective: ObjectiveKind::Ranking,
            budget: &budget,
        };
        let q = generate_query(&driver, &belief, &req).unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q.stored_index, None);
        let again = evaluate_query(&q, &belief, &req).unwrap();
        assert!((again - q.objective_value).abs() < 1e-9);
        for t in &q.trajectories {
            assert!(t.verify(&driver).unwrap());
        }
    }

    #[test]
    fn stored_trajectory_is_preserved_and_generation_is_deterministic() {
        let driver = Driver::<f64>::new();
        let belief = prior_like_belief();
        let stored = rollout(&driver, &vec![vec![0.1, 0.4]; 5]).unwrap();
        let budget = OptBudget {
            restarts: 2,
            iterations: 3,
            mc_samples: 200,
            seed: 8,
        };
        let req = QueryRequest {
            n_opt: 3,
            stored: Some(&stored),
            beta_response: 5.0,
            objective: ObjectiveKind::Ranking,
            budget: &budget,
        };
        let a = generate_query(&driver, &belief, &req).unwrap();
        let b = generate_query(&driver, &belief, &req).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.stored_index, Some(0));
        assert_eq!(a.trajectories[0], stored);
        assert_eq!(a.len(), 3);
        let json = serde_json::to_value(&a).unwrap();
        assert_eq!(json["stored_index"], 0);
        assert!(json["objective"].is_number());
    }
}
