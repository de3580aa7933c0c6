//! Derivative-free random-restart coordinate search over a box.
//!
//! Each restart draws a uniform point in the box, then runs `iterations`
//! sweeps. A sweep probes every coordinate at `+step` and `-step` (clamped to
//! the box) and moves to the first strict improvement; a coordinate whose
//! probes both fail has its step halved. Steps start at a quarter of each
//! coordinate's range. The best restart wins, ties going to the lowest index.
//!
//! Restart `r` is seeded with `derive(seed, "restart", r)`, so its result does
//! not depend on how many other restarts run or on thread scheduling.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Optimum<S: Scalar> {
    pub x: Vec<S>,
    pub value: S,
    pub restart: usize,
    pub evaluations: usize,
}

struct RestartResult<S: Scalar> {
    x: Vec<S>,
    value: S,
    evaluations: usize,
}

fn better<S: Scalar>(candidate: S, incumbent: S) -> bool {
    !candidate.is_nan() && (incumbent.is_nan() || candidate > incumbent)
}

fn run_restart<S: Scalar, F>(bounds: &[[S; 2]], iterations: usize, restart_seed: u64, f: &F) -> RestartResult<S>
where
    F: Fn(&[S]) -> S,
{
    let mut rng = seed::rng(restart_seed);
    let mut x: Vec<S> = bounds
        .iter()
        .map(|&[lo, hi]| lo + (hi - lo) * S::lit(rand::Rng::random::<f64>(&mut rng)))
        .collect();
    let mut value = f(&x);
    let mut evaluations = 1;
    let mut steps: Vec<S> = bounds.iter().map(|&[lo, hi]| (hi - lo) * S::lit(0.25)).collect();
    let min_step: Vec<S> = bounds.iter().map(|&[lo, hi]| (hi - lo) * S::lit(1e-7)).collect();

    for _ in 0..iterations {
        if steps.iter().zip(&min_step).all(|(s, m)| s < m) {
            break;
        }
        for j in 0..x.len() {
            let [lo, hi] = bounds[j];
            let original = x[j];
            let mut moved = false;
            for dir in [S::one(), -S::one()] {
                let probe = (original + dir * steps[j]).max(lo).min(hi);
                if probe == original {
                    continue;
                }
                x[j] = probe;
                let v = f(&x);
                evaluations += 1;
                if better(v, value) {
                    value = v;
                    moved = true;
                    break;
                }
                x[j] = original;
            }
            if !moved {
                steps[j] = steps[j] * S::lit(0.5);
            }
        }
    }
    RestartResult { x, value, evaluations }
}

/// Maximizes `f` over the box `bounds`.
///
/// With `iterations = 0` each restart returns its random initialization.
/// Fails with [`Error::OptimizerFailed`] only if every restart ends at NaN.
pub fn maximize<S, F>(bounds: &[[S; 2]], restarts: usize, iterations: usize, seed: u64, f: F) -> Result<Optimum<S>>
where
    S: Scalar,
    F: Fn(&[S]) -> S + Sync,
{
    let results: Vec<RestartResult<S>> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| run_restart(bounds, iterations, seed::derive(seed, seed::stream::RESTART, r as u64), &f))
        .collect();
    let evaluations = results.iter().map(|r| r.evaluations).sum();
    let mut best: Option<(usize, &RestartResult<S>)> = None;
    for (i, r) in results.iter().enumerate() {
        if r.value.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if !better(r.value, b.value) => {}
            _ => best = Some((i, r)),
        }
    }
    let (restart, r) = best.ok_or(Error::OptimizerFailed)?;
    Ok(Optimum {
        x: r.x.clone(),
        value: r.value,
        restart,
        evaluations,
    })
}
