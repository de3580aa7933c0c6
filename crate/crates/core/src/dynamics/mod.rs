//! Deterministic discrete-time systems, rollouts and per-step features.

mod driver;

pub use driver::{Driver, DriverParams, FeatureScaling};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Names accepted by [`domain`].
pub const DOMAINS: &[&str] = &["driver"];

/// Static description of a system: dimensions, horizon, control box and start state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SystemSpec<S: Scalar> {
    pub name: String,
    pub state_dim: usize,
    pub control_dim: usize,
    pub feature_dim: usize,
    /// Number of planned controls.
    pub horizon: usize,
    /// Simulation substeps each planned control is held for.
    pub steps_per_control: usize,
    pub dt: S,
    /// Closed `[lo, hi]` interval per control dimension.
    pub control_bounds: Vec<[S; 2]>,
    pub start_state: Vec<S>,
}

impl<S: Scalar> SystemSpec<S> {
    pub fn substeps(&self) -> usize {
        self.horizon * self.steps_per_control
    }

    /// Length of a flattened control sequence.
    pub fn decision_dim(&self) -> usize {
        self.horizon * self.control_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim", "must be at least 1"));
        }
        if self.steps_per_control == 0 {
            return Err(Error::config("steps_per_control", "must be at least 1"));
        }
        if !(self.dt > S::zero()) {
            return Err(Error::config("dt", "must be positive"));
        }
        if self.control_bounds.len() != self.control_dim {
            return Err(Error::config("control_bounds", "one interval per control dimension"));
        }
        if self.control_bounds.iter().any(|[lo, hi]| !(lo < hi)) {
            return Err(Error::config("control_bounds", "lo must be below hi"));
        }
        if self.start_state.len() != self.state_dim {
            return Err(Error::config("start_state", "length must equal state_dim"));
        }
        Ok(())
    }

    pub fn check_control(&self, control: &[S]) -> Result<()> {
        if control.len() != self.control_dim {
            return Err(Error::DimensionMismatch {
                expected: self.control_dim,
                got: control.len(),
            });
        }
        for (index, (&u, &[lo, hi])) in control.iter().zip(&self.control_bounds).enumerate() {
            if !(u >= lo && u <= hi) {
                return Err(Error::OutOfBounds {
                    index,
                    value: u.as_f64(),
                    lo: lo.as_f64(),
                    hi: hi.as_f64(),
                });
            }
        }
        Ok(())
    }

    /// Clamps a control into the box.
    pub fn clamp_control(&self, control: &mut [S]) {
        for (u, &[lo, hi]) in control.iter_mut().zip(&self.control_bounds) {
            *u = u.max(lo).min(hi);
        }
    }
}

/// A dynamical system with a feature map. Implementations must be pure.
pub trait System<S: Scalar>: Send + Sync {
    fn spec(&self) -> &SystemSpec<S>;

    /// One substep of the dynamics, without validation.
    fn transition(&self, state: &[S], control: &[S]) -> Vec<S>;

    /// Per-step feature vector φ(state, control), without validation.
    fn step_features(&self, state: &[S], control: &[S]) -> Vec<S>;
}

/// Looks a system up by name.
pub fn domain<S: Scalar>(name: &str) -> Result<Box<dyn System<S>>> {
    match name {
        "driver" => Ok(Box::new(Driver::new())),
        _ => Err(Error::UnknownDomain {
            name: name.to_string(),
            valid: DOMAINS.join(", "),
        }),
    }
}

fn ensure_finite<S: Scalar>(values: &[S], substep: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { substep })
    }
}

/// Validated single substep `x' = f(x, u)`.
pub fn step<S: Scalar>(system: &dyn System<S>, state: &[S], control: &[S]) -> Result<Vec<S>> {
    let spec = system.spec();
    if state.len() != spec.state_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.state_dim,
            got: state.len(),
        });
    }
    ensure_finite(state, 0)?;
    spec.check_control(control)?;
    let next = system.transition(state, control);
    ensure_finite(&next, 0)?;
    Ok(next)
}

/// Validated φ(state, control).
pub fn features<S: Scalar>(system: &dyn System<S>, state: &[S], control: &[S]) -> Result<Vec<S>> {
    let phi = system.step_features(state, control);
    ensure_finite(&phi, 0)?;
    Ok(phi)
}

/// A rolled-out trajectory with its cached feature sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Trajectory<S: Scalar> {
    pub controls: Vec<Vec<S>>,
    pub states: Vec<Vec<S>>,
    /// Feature sum Φ over all substeps.
    pub phi: Vec<S>,
}

impl<S: Scalar> Trajectory<S> {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// Re-simulates the controls and checks states and Φ against the stored values.
    ///
    /// States must match exactly; Φ within `1e-9` per component (scaled for `f32`).
    pub fn verify(&self, system: &dyn System<S>) -> Result<bool> {
        let replay = rollout(system, &self.controls)?;
        let tol = S::lit(1e-9).max(S::epsilon() * S::lit(1e3));
        Ok(replay.states == self.states
            && replay.phi.len() == self.phi.len()
            && replay.phi.iter().zip(&self.phi).all(|(a, b)| (*a - *b).abs() <= tol))
    }
}

/// Runs the substep loop, feeding every post-step state to `visit`.
///
/// Features are evaluated on each post-step state paired with the control
/// active during that substep, so Φ sums `horizon · steps_per_control` terms.
fn simulate<S: Scalar>(
    system: &dyn System<S>,
    controls: &[&[S]],
    mut visit: impl FnMut(&[S]),
) -> Result<Vec<S>> {
    let spec = system.spec();
    if controls.len() != spec.horizon {
        return Err(Error::HorizonMismatch {
            expected: spec.horizon,
            got: controls.len(),
        });
    }
    let mut state = spec.start_state.clone();
    let mut phi = vec![S::zero(); spec.feature_dim];
    let mut substep = 0;
    for control in controls {
        spec.check_control(control)?;
        for _ in 0..spec.steps_per_control {
            state = system.transition(&state, control);
            ensure_finite(&state, substep)?;
            let f = system.step_features(&state, control);
            ensure_finite(&f, substep)?;
            for (acc, v) in phi.iter_mut().zip(f) {
                *acc = *acc + v;
            }
            visit(&state);
            substep += 1;
        }
    }
    Ok(phi)
}

/// Rolls `controls` out from the start state.
pub fn rollout<S: Scalar>(system: &dyn System<S>, controls: &[Vec<S>]) -> Result<Trajectory<S>> {
    let spec = system.spec();
    let mut states = Vec::with_capacity(spec.substeps() + 1);
    states.push(spec.start_state.clone());
    let refs: Vec<&[S]> = controls.iter().map(Vec::as_slice).collect();
    let phi = simulate(system, &refs, |s| states.push(s.to_vec()))?;
    Ok(Trajectory {
        controls: controls.to_vec(),
        states,
        phi,
    })
}

/// Φ for a flattened control vector (`horizon · control_dim` entries), without storing states.
pub fn feature_sum<S: Scalar>(system: &dyn System<S>, flat_controls: &[S]) -> Result<Vec<S>> {
    let spec = system.spec();
    if flat_controls.len() != spec.decision_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.decision_dim(),
            got: flat_controls.len(),
        });
    }
    let refs: Vec<&[S]> = flat_controls.chunks(spec.control_dim).collect();
    simulate(system, &refs, |_| {})
}

/// Splits a flattened control vector into per-step controls.
pub fn unflatten<S: Scalar>(spec: &SystemSpec<S>, flat: &[S]) -> Vec<Vec<S>> {
    flat.chunks(spec.control_dim).map(<[S]>::to_vec).collect()
}

pub fn flatten<S: Scalar>(controls: &[Vec<S>]) -> Vec<S> {
    controls.iter().flatten().copied().collect()
}

/// Uniformly random in-bounds control sequence.
pub fn random_controls<S: Scalar>(spec: &SystemSpec<S>, rng: &mut impl rand::Rng) -> Vec<Vec<S>> {
    (0..spec.horizon)
        .map(|_| {
            spec.control_bounds
                .iter()
                .map(|&[lo, hi]| lo + (hi - lo) * S::lit(rng.random::<f64>()))
                .collect()
        })
        .collect()
}
