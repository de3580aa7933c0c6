//! Convergence metric and the simulation experiments.
//!
//! Each experiment runs every (condition, repetition) cell against a
//! simulated human holding the domain's true weights. Repetition `r` uses
//! master seed `seed + r` in every condition, so conditions see the same
//! responder, demonstration and sampler streams and differ only in the
//! manipulated variable.

mod results;

pub use results::{bootstrap_interval, load_results, write_results, CellFailure, Record, ResultTable, SummaryRow};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{Belief, PreferenceMode, SamplerSettings, UpdateRule, WeightVector};
use crate::dynamics::{self, Driver, System, Trajectory};
use crate::engine::{self, DemPrefConfig};
use crate::error::{Error, Result};
use crate::oracle::{graded_demo_pool, mpc_demonstration, PoolSettings, SimulatedHuman};
use crate::querygen::OptBudget;
use crate::scalar::{dot, norm, Scalar};
use crate::seed::{self, stream};

/// Expected cosine similarity between belief samples and `w_true`.
///
/// Zero-norm samples are skipped (and counted in the log).
pub fn metric_m<S: Scalar>(belief: &Belief<S>, w_true: &WeightVector<S>) -> Result<S> {
    let wn = w_true.norm();
    if !(wn > S::zero()) {
        return Err(Error::ZeroTrueVector);
    }
    if belief.is_empty() {
        return Err(Error::EmptyBelief);
    }
    let mut total = S::zero();
    let mut used = 0usize;
    for w in &belief.samples {
        if w.dim() != w_true.dim() {
            return Err(Error::DimensionMismatch {
                expected: w_true.dim(),
                got: w.dim(),
            });
        }
        let n = norm(&w.0);
        if n == S::zero() {
            continue;
        }
        let c = dot(&w.0, &w_true.0) / (n * wn);
        total = total + c.max(-S::one()).min(S::one());
        used += 1;
    }
    if used < belief.len() {
        log::warn!("metric_m skipped {} zero-norm samples", belief.len() - used);
    }
    if used == 0 {
        return Err(Error::EmptyBelief);
    }
    Ok(total / S::lit(used as f64))
}

/// Ground-truth weights of a named domain.
pub fn domain_true_weights(name: &str) -> Result<Vec<f64>> {
    match name {
        "driver" => Ok(Driver::<f64>::true_weights()),
        _ => Err(Error::UnknownDomain {
            name: name.to_string(),
            valid: dynamics::DOMAINS.join(", "),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    InitDemos,
    UpdateFunc,
    IteratedCorr,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 3] = [Self::InitDemos, Self::UpdateFunc, Self::IteratedCorr];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::InitDemos => "init_demos",
            Self::UpdateFunc => "update_func",
            Self::IteratedCorr => "iterated_corr",
        }
    }

    /// The condition grid of this experiment.
    pub fn conditions(self) -> Vec<Condition> {
        let base = Condition {
            name: String::new(),
            n_dem: 0,
            n_opt: 2,
            use_ic: false,
            update_mode: UpdateRule::Rank,
            demo: DemoSource::Clean,
        };
        match self {
            Self::InitDemos => [0, 1, 3]
                .into_iter()
                .map(|n| Condition {
                    name: format!("n_dem={n}"),
                    n_dem: n,
                    ..base.clone()
                })
                .collect(),
            Self::UpdateFunc => [(UpdateRule::PickBest, "pick_best"), (UpdateRule::Rank, "rank")]
                .into_iter()
                .flat_map(|(rule, label)| {
                    let base = base.clone();
                    [3, 5].into_iter().map(move |n| Condition {
                        name: format!("{label}/n_opt={n}"),
                        n_opt: n,
                        update_mode: rule,
                        ..base.clone()
                    })
                })
                .collect(),
            Self::IteratedCorr => [(DemoSource::PoolLow, "low"), (DemoSource::PoolHigh, "high")]
                .into_iter()
                .flat_map(|(demo, quality)| {
                    let base = base.clone();
                    [true, false].into_iter().map(move |ic| Condition {
                        name: format!("{}/{quality}", if ic { "ic" } else { "no_ic" }),
                        n_dem: 1,
                        n_opt: if ic { 3 } else { 2 },
                        use_ic: ic,
                        demo,
                        ..base.clone()
                    })
                })
                .collect(),
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == s).ok_or_else(|| {
            let valid: Vec<&str> = Self::ALL.iter().map(|e| e.as_str()).collect();
            Error::config("experiment", format!("unknown experiment `{s}`; valid: {}", valid.join(", ")))
        })
    }
}

/// Where a condition's demonstrations come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoSource {
    /// Noise-free MPC demonstrations.
    Clean,
    /// Worst member of a graded noisy pool.
    PoolLow,
    /// Best member of a graded noisy pool.
    PoolHigh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub n_dem: usize,
    pub n_opt: usize,
    pub use_ic: bool,
    pub update_mode: UpdateRule,
    pub demo: DemoSource,
}

/// Knobs shared by all conditions of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    pub n_queries: usize,
    pub beta_demo: f64,
    pub beta_response: f64,
    pub preference_mode: PreferenceMode,
    pub deterministic_responder: bool,
    pub sampler: SamplerSettings,
    /// Per-query optimization budget.
    pub budget: OptBudget,
    /// Budget for optimizing MPC demonstrations.
    pub demo_budget: OptBudget,
    pub pool_size: usize,
    pub pool_noise: f64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            n_queries: 25,
            beta_demo: 0.1,
            beta_response: 5.0,
            preference_mode: PreferenceMode::Exact,
            deterministic_responder: true,
            sampler: SamplerSettings::default(),
            budget: OptBudget {
                restarts: 2,
                iterations: 6,
                mc_samples: 500,
                seed: 0,
            },
            demo_budget: OptBudget {
                restarts: 4,
                iterations: 30,
                mc_samples: 1,
                seed: 0,
            },
            pool_size: 100,
            pool_noise: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub domain: String,
    pub reps: usize,
    pub seed: u64,
    pub conditions: Vec<Condition>,
    pub settings: ExperimentSettings,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentId, reps: usize, seed: u64) -> Self {
        Self {
            experiment,
            domain: "driver".into(),
            reps,
            seed,
            conditions: experiment.conditions(),
            settings: ExperimentSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::config("reps", "must be at least 1"));
        }
        if self.conditions.is_empty() {
            return Err(Error::config("conditions", "must not be empty"));
        }
        dynamics::domain::<f64>(&self.domain)?;
        for c in &self.conditions {
            self.dempref_config(c, self.seed).validate()?;
        }
        if self.settings.pool_size < 2 {
            return Err(Error::config("pool_size", "need at least 2 demonstrations"));
        }
        Ok(())
    }

    /// Master seed of repetition `rep`.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        self.seed.wrapping_add(rep as u64)
    }

    pub fn dempref_config(&self, c: &Condition, seed: u64) -> DemPrefConfig<f64> {
        let s = &self.settings;
        DemPrefConfig {
            n_dem: c.n_dem,
            n_queries: s.n_queries,
            n_opt: c.n_opt,
            use_ic: c.use_ic,
            update_mode: c.update_mode,
            preference_mode: s.preference_mode,
            beta_demo: s.beta_demo,
            beta_response: s.beta_response,
            sampler: s.sampler.clone(),
            budget: s.budget.clone(),
            seed,
        }
    }

    fn pool_settings(&self) -> PoolSettings {
        let s = &self.settings;
        PoolSettings {
            pool_size: s.pool_size,
            noise_scale: s.pool_noise,
            beta_demo: s.beta_demo,
            sampler: s.sampler.clone(),
            budget: s.demo_budget.clone(),
        }
    }
}

/// Thread pool capped by `DEMPREF_THREADS` when set.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("DEMPREF_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::config("DEMPREF_THREADS", "must be a positive integer"))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::config("DEMPREF_THREADS", e.to_string()))
}

/// Demonstrations of one repetition, shared by all conditions.
#[derive(Debug, Clone, Default)]
struct RepDemos {
    clean: Vec<Trajectory<f64>>,
    low: Option<Trajectory<f64>>,
    high: Option<Trajectory<f64>>,
}

fn rep_demos(config: &ExperimentConfig, system: &dyn System<f64>, w: &WeightVector<f64>, seed: u64) -> Result<RepDemos> {
    let needs = |src: DemoSource| config.conditions.iter().filter(move |c| c.n_dem > 0 && c.demo == src);
    let n_clean = needs(DemoSource::Clean).map(|c| c.n_dem).max().unwrap_or(0);
    let clean = (0..n_clean)
        .map(|j| mpc_demonstration(system, w, 0.0, seed::derive(seed, stream::DEMO, j as u64), &config.settings.demo_budget))
        .collect::<Result<Vec<_>>>()?;
    let mut demos = RepDemos {
        clean,
        ..RepDemos::default()
    };
    if needs(DemoSource::PoolLow).chain(needs(DemoSource::PoolHigh)).next().is_some() {
        let pool = graded_demo_pool(system, w, &config.pool_settings(), seed::derive(seed, stream::POOL, 0))?;
        demos.low = Some(pool.low);
        demos.high = Some(pool.high);
    }
    Ok(demos)
}

fn condition_demos(c: &Condition, demos: &RepDemos) -> Vec<Trajectory<f64>> {
    if c.n_dem == 0 {
        return Vec::new();
    }
    match c.demo {
        DemoSource::Clean => demos.clean[..c.n_dem].to_vec(),
        DemoSource::PoolLow => vec![demos.low.clone().expect("pool generated"); c.n_dem],
        DemoSource::PoolHigh => vec![demos.high.clone().expect("pool generated"); c.n_dem],
    }
}

/// The metric after Stage 1 and after each query of one cell.
pub fn run_cell(
    config: &ExperimentConfig,
    system: &dyn System<f64>,
    condition: &Condition,
    demos: &[Trajectory<f64>],
    seed: u64,
) -> Result<Vec<f64>> {
    let s = &config.settings;
    let w = WeightVector(domain_true_weights(&config.domain)?);
    let mut human = SimulatedHuman::new(
        w,
        s.beta_demo,
        s.beta_response,
        seed::derive(seed, stream::RESPONDER, 0),
        s.deterministic_responder,
    )?;
    let dp = config.dempref_config(condition, seed);
    let state = engine::run(&dp, system, demos, &mut human)?;
    Ok(state.metric_curve().expect("simulated human exposes its weights"))
}

/// Runs every (condition, repetition) cell; failed cells are reported, not fatal.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    let system = dynamics::domain::<f64>(&config.domain)?;
    let system = system.as_ref();
    let w = WeightVector(domain_true_weights(&config.domain)?);
    let pool = worker_pool()?;
    pool.install(|| {
        let demos: Vec<Result<RepDemos>> = (0..config.reps)
            .into_par_iter()
            .map(|r| rep_demos(config, system, &w, config.rep_seed(r)))
            .collect();
        let cells: Vec<(usize, usize)> = (0..config.conditions.len())
            .flat_map(|c| (0..config.reps).map(move |r| (c, r)))
            .collect();
        let outcomes: Vec<Result<Vec<f64>>> = cells
            .par_iter()
            .map(|&(c, r)| {
                let d = demos[r].as_ref().map_err(Clone::clone)?;
                let cond = &config.conditions[c];
                run_cell(config, system, cond, &condition_demos(cond, d), config.rep_seed(r))
            })
            .collect();
        let mut table = ResultTable {
            config: config.clone(),
            records: Vec::new(),
            failures: Vec::new(),
        };
        for (&(c, r), outcome) in cells.iter().zip(outcomes) {
            let condition = config.conditions[c].name.clone();
            let seed = config.rep_seed(r);
            match outcome {
                Ok(curve) => table.records.extend(curve.into_iter().enumerate().map(|(q, m)| Record {
                    experiment: config.experiment.as_str().to_string(),
                    condition: condition.clone(),
                    seed,
                    query_index: q,
                    m,
                })),
                Err(e) => {
                    log::error!("{} cell {condition} seed {seed} failed: {e}", config.experiment);
                    table.failures.push(CellFailure {
                        condition,
                        seed,
                        error: e.to_string(),
                    });
                }
            }
        }
        Ok(table)
    })
}
