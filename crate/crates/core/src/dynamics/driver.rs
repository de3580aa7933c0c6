//! Highway driving domain.
//!
//! State layout: `[x, y, theta, v, x_other, y_other]` where `x` is lateral
//! position, `y` longitudinal position, `theta` heading (0 = along the road)
//! and `v` speed. Controls are `[steer, accel]` in `[-1, 1]²`.
//!
//! Unicycle-with-friction update, forward Euler:
//!
//! ```text
//! x     += v sin(theta) dt
//! y     += v cos(theta) dt
//! theta += v steer kappa dt
//! v     += (accel - alpha v) dt
//! y_other += v_other dt
//! ```
//!
//! Unscaled per-step features, in order:
//!
//! | feature  | formula                                   | range on in-bounds rollouts |
//! |----------|-------------------------------------------|-----------------------------|
//! | lane     | `exp(-30 d²)`, d = distance to lane center | `[0, 1]`                    |
//! | speed    | `(v - 1)²`                                | `[0, 25]`                   |
//! | heading  | `cos(theta)`                              | `[-1, 1]`                   |
//! | collision| `exp(-(7 Δx² + 3 Δy²))`                   | `[0, 1]`                    |
//!
//! Speed and collision are costs: the reference weights put negative mass on
//! them. Each feature is then mapped affinely per step so that its average
//! over a rollout spans `[-1, 1]` between the lowest and highest values any
//! control sequence reaches, i.e. every component of `Φ` lies in roughly
//! `[-N, N]` for `N` substeps. The constants come from
//! [`Driver::fit_range_scaling`] and are frozen below.

use serde::{Deserialize, Serialize};

use super::{feature_sum, System, SystemSpec};
use crate::querygen::optimizer::maximize;
use crate::scalar::Scalar;

const RANGE_SEED: u64 = 0x00D1_5EED;
const RANGE_RESTARTS: usize = 8;
const RANGE_SWEEPS: usize = 60;

// fit_range_scaling() of the default five-control driver
const FROZEN_OFFSET: [f64; 4] = [0.5565626782567351, 4.008208621479588, 0.1348054257289668, 0.4998411850936582];
const FROZEN_SCALE: [f64; 4] = [0.44343470926562856, 4.006341488812206, 0.8651945742709914, 0.4416798591258326];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DriverParams<S: Scalar> {
    pub steering_gain: S,
    pub friction: S,
    pub lane_centers: Vec<S>,
    pub lane_width: S,
    pub lane_sharpness: S,
    pub other_speed: S,
    pub collision_lateral: S,
    pub collision_longitudinal: S,
}

impl<S: Scalar> Default for DriverParams<S> {
    fn default() -> Self {
        Self {
            steering_gain: S::lit(2.0),
            friction: S::lit(0.1),
            lane_centers: vec![S::lit(-0.17), S::zero(), S::lit(0.17)],
            lane_width: S::lit(0.17),
            lane_sharpness: S::lit(30.0),
            other_speed: S::lit(0.8),
            collision_lateral: S::lit(7.0),
            collision_longitudinal: S::lit(3.0),
        }
    }
}

/// Per-feature affine normalization `(φ - offset) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FeatureScaling<S: Scalar> {
    pub offset: Vec<S>,
    pub scale: Vec<S>,
}

impl<S: Scalar> FeatureScaling<S> {
    pub fn identity(k: usize) -> Self {
        Self {
            offset: vec![S::zero(); k],
            scale: vec![S::one(); k],
        }
    }

    pub fn apply(&self, raw: &mut [S]) {
        for ((v, &o), &s) in raw.iter_mut().zip(&self.offset).zip(&self.scale) {
            *v = (*v - o) / s;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Driver<S: Scalar> {
    spec: SystemSpec<S>,
    params: DriverParams<S>,
    scaling: FeatureScaling<S>,
}

impl<S: Scalar> Default for Driver<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Driver<S> {
    pub const FEATURE_NAMES: [&'static str; 4] = ["lane", "speed", "heading", "collision"];

    /// Reference weights for the simulated human.
    pub fn true_weights() -> Vec<S> {
        [0.5, -0.2, 0.2, -0.7].iter().map(|&w| S::lit(w)).collect()
    }

    /// Five planned controls, each held for ten 0.1 s substeps.
    pub fn new() -> Self {
        Self::with_horizon(5)
    }

    pub fn with_horizon(horizon: usize) -> Self {
        let spec = SystemSpec {
            name: "driver".to_string(),
            state_dim: 6,
            control_dim: 2,
            feature_dim: 4,
            horizon,
            steps_per_control: 10,
            dt: S::lit(0.1),
            control_bounds: vec![[-S::one(), S::one()]; 2],
            start_state: [0.0, 0.0, 0.0, 0.8, -0.17, 0.3]
                .iter()
                .map(|&v| S::lit(v))
                .collect(),
        };
        Self {
            spec,
            params: DriverParams::default(),
            scaling: FeatureScaling {
                offset: FROZEN_OFFSET.iter().map(|&v| S::lit(v)).collect(),
                scale: FROZEN_SCALE.iter().map(|&v| S::lit(v)).collect(),
            },
        }
    }

    /// Replaces the feature normalization.
    pub fn with_scaling(mut self, scaling: FeatureScaling<S>) -> Self {
        self.scaling = scaling;
        self
    }

    pub fn params(&self) -> &DriverParams<S> {
        &self.params
    }

    pub fn scaling(&self) -> &FeatureScaling<S> {
        &self.scaling
    }

    /// Lateral distance to the nearest lane center.
    pub fn lane_distance(&self, x: S) -> S {
        self.params
            .lane_centers
            .iter()
            .map(|&c| (x - c).abs())
            .fold(S::infinity(), S::min)
    }

    /// The four feature formulas before normalization.
    pub fn unscaled_features(&self, state: &[S]) -> Vec<S> {
        let p = &self.params;
        let (x, y, theta, v, xo, yo) = (state[0], state[1], state[2], state[3], state[4], state[5]);
        let d = self.lane_distance(x);
        let dx = x - xo;
        let dy = y - yo;
        vec![
            (-p.lane_sharpness * d * d).exp(),
            (v - S::one()).powi(2),
            theta.cos(),
            (-(p.collision_lateral * dx * dx + p.collision_longitudinal * dy * dy)).exp(),
        ]
    }

    /// Per-step normalization mapping each feature's achievable rollout average onto `[-1, 1]`.
    ///
    /// The extremes of every raw feature sum are found with the query
    /// optimizer over this driver's control box.
    pub fn fit_range_scaling(&self) -> FeatureScaling<S> {
        let raw = Self {
            spec: self.spec.clone(),
            params: self.params.clone(),
            scaling: FeatureScaling::identity(self.spec.feature_dim),
        };
        let n = S::lit(self.spec.substeps() as f64);
        let bounds: Vec<[S; 2]> = (0..self.spec.horizon)
            .flat_map(|_| self.spec.control_bounds.iter().copied())
            .collect();
        let extreme = |j: usize, sign: S, seed: u64| -> S {
            let f = |x: &[S]| feature_sum(&raw, x).map_or(S::nan(), |phi| sign * phi[j]);
            let best = maximize(&bounds, RANGE_RESTARTS, RANGE_SWEEPS, seed, f).expect("raw features are finite in the box");
            sign * best.value
        };
        let mut offset = Vec::with_capacity(self.spec.feature_dim);
        let mut scale = Vec::with_capacity(self.spec.feature_dim);
        for j in 0..self.spec.feature_dim {
            let hi = extreme(j, S::one(), RANGE_SEED + 2 * j as u64);
            let lo = extreme(j, -S::one(), RANGE_SEED + 2 * j as u64 + 1);
            offset.push((hi + lo) / (S::lit(2.0) * n));
            scale.push((hi - lo) / (S::lit(2.0) * n));
        }
        FeatureScaling { offset, scale }
    }
}

impl<S: Scalar> System<S> for Driver<S> {
    fn spec(&self) -> &SystemSpec<S> {
        &self.spec
    }

    fn transition(&self, state: &[S], control: &[S]) -> Vec<S> {
        let p = &self.params;
        let dt = self.spec.dt;
        let (x, y, theta, v, xo, yo) = (state[0], state[1], state[2], state[3], state[4], state[5]);
        let (steer, accel) = (control[0], control[1]);
        vec![
            x + v * theta.sin() * dt,
            y + v * theta.cos() * dt,
            theta + v * steer * p.steering_gain * dt,
            v + (accel - p.friction * v) * dt,
            xo,
            yo + p.other_speed * dt,
        ]
    }

    fn step_features(&self, state: &[S], _control: &[S]) -> Vec<S> {
        let mut phi = self.unscaled_features(state);
        self.scaling.apply(&mut phi);
        phi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{random_controls, rollout, step};
    use crate::seed;
    use crate::error::Error;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn zero_state_zero_control_is_a_fixed_point() {
        let driver = Driver::<f64>::new();
        let next = step(&driver, &[0.0, 0.0, 0.0, 0.0, -0.17, 0.3], &[0.0, 0.0]).unwrap();
        assert_eq!(&next[..4], &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(next[4], -0.17);
        assert!(close(next[5], 0.3 + 0.08));
    }

    #[test]
    fn friction_decays_speed_and_position_advances() {
        let driver = Driver::<f64>::new();
        let next = step(&driver, &[0.0, 0.0, 0.0, 1.0, -0.17, 0.3], &[0.0, 0.0]).unwrap();
        assert!(close(next[3], 0.99));
        assert!(close(next[1], 0.1));
        assert!(close(next[0], 0.0));
    }

    #[test]
    fn box_is_closed() {
        let driver = Driver::<f64>::new();
        let s = driver.spec().start_state.clone();
        assert!(step(&driver, &s, &[1.0, -1.0]).is_ok());
        assert!(matches!(
            step(&driver, &s, &[1.0 + 1e-12, 0.0]),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(matches!(step(&driver, &s, &[f64::NAN, 0.0]), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let driver = Driver::<f64>::new();
        let s = [f64::INFINITY, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!(matches!(step(&driver, &s, &[0.0, 0.0]), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn lane_feature_peaks_on_lane_centers() {
        let driver = Driver::<f64>::new();
        for c in [-0.17, 0.0, 0.17] {
            let f = driver.unscaled_features(&[c, 0.0, 0.0, 1.0, 5.0, 50.0]);
            assert!(close(f[0], 1.0));
        }
        let off = driver.unscaled_features(&[0.085, 0.0, 0.0, 1.0, 5.0, 50.0]);
        assert!(off[0] < 1.0);
    }

    #[test]
    fn collision_feature_peaks_at_other_vehicle() {
        let driver = Driver::<f64>::new();
        let f = driver.unscaled_features(&[-0.17, 0.3, 0.0, 1.0, -0.17, 0.3]);
        assert!(close(f[3], 1.0));
    }

    #[test]
    fn probe_state_matches_hand_evaluation() {
        let driver = Driver::<f64>::new();
        let state = [0.05, 0.1, 0.3, 1.4, -0.17, 0.5];
        let f = driver.unscaled_features(&state);
        // nearest lane center is 0.0
        let lane = (-30.0f64 * 0.05 * 0.05).exp();
        let speed = 0.4f64 * 0.4;
        let heading = 0.3f64.cos();
        let collision = (-(7.0f64 * 0.22 * 0.22 + 3.0 * 0.4 * 0.4)).exp();
        assert!(close(f[0], lane));
        assert!(close(f[1], speed));
        assert!(close(f[2], heading));
        assert!(close(f[3], collision));

        let scaled = super::super::features(&driver, &state, &[0.0, 0.0]).unwrap();
        let sc = driver.scaling();
        for j in 0..4 {
            assert!(close(scaled[j], (f[j] - sc.offset[j]) / sc.scale[j]));
        }
    }

    #[test]
    fn frozen_scaling_matches_refit() {
        let driver = Driver::<f64>::new();
        let fit = driver.fit_range_scaling();
        for j in 0..4 {
            assert!((fit.offset[j] - driver.scaling().offset[j]).abs() < 1e-12, "offset {j}");
            assert!((fit.scale[j] - driver.scaling().scale[j]).abs() < 1e-12, "scale {j}");
        }
    }

    #[test]
    fn scaled_sums_stay_within_range_over_random_rollouts() {
        let driver = Driver::<f64>::new();
        let n = driver.spec().substeps() as f64;
        let mut rng = seed::rng(99);
        for _ in 0..2000 {
            let traj = rollout(&driver, &random_controls(driver.spec(), &mut rng)).unwrap();
            for &p in &traj.phi {
                assert!(p.abs() <= n * (1.0 + 1e-6), "{p}");
            }
        }
    }

    #[test]
    fn unscaled_features_stay_in_documented_ranges() {
        let driver = Driver::<f64>::new();
        let mut rng = seed::rng(2024);
        for _ in 0..10_000 {
            let traj = rollout(&driver, &random_controls(driver.spec(), &mut rng)).unwrap();
            for s in &traj.states {
                assert!(s.iter().all(|v| v.is_finite()));
                let f = driver.unscaled_features(s);
                assert!((0.0..=1.0).contains(&f[0]));
                assert!((0.0..=25.0).contains(&f[1]));
                assert!((-1.0..=1.0).contains(&f[2]));
                assert!((0.0..=1.0).contains(&f[3]));
            }
        }
    }

    #[test]
    fn long_rollouts_stay_finite() {
        let driver = Driver::<f64>::with_horizon(50);
        let traj = rollout(&driver, &vec![vec![1.0, 1.0]; 50]).unwrap();
        assert!(traj.states.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn f32_driver_tracks_f64() {
        let d64 = Driver::<f64>::new();
        let d32 = Driver::<f32>::new();
        let c64 = vec![vec![0.3, -0.2]; 5];
        let c32 = vec![vec![0.3f32, -0.2]; 5];
        let a = rollout(&d64, &c64).unwrap();
        let b = rollout(&d32, &c32).unwrap();
        for (x, y) in a.states.last().unwrap().iter().zip(b.states.last().unwrap()) {
            assert!((x - f64::from(*y)).abs() < 1e-4);
        }
    }
}
