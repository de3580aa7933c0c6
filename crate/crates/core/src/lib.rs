//! Reward learning that combines demonstrations with actively generated
//! ranking queries.
//!
//! A linear reward `w · Φ(ξ)` over trajectory feature sums is learned in two
//! stages: demonstrations shape a Bayesian prior over `w` on the unit ball,
//! then queries synthesized to remove the most posterior volume are ranked by
//! a responder and folded into the posterior under a Plackett-Luce model.
//!
//! Every numeric type is generic over [`Scalar`] (`f32` or `f64`); the
//! `*F64` / `*F32` aliases below fix the scalar for application code.

pub mod belief;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod querygen;
pub mod scalar;
pub mod seed;

pub use belief::{Belief, Evidence, PreferenceMode, Ranking, Response, SamplerSettings, UpdateRule, WeightVector};
pub use dynamics::{Driver, System, SystemSpec, Trajectory};
pub use engine::{DemPrefConfig, Responder, SessionState};
pub use error::{Error, Result};
pub use oracle::SimulatedHuman;
pub use querygen::{OptBudget, Query};
pub use scalar::Scalar;

pub type TrajectoryF64 = Trajectory<f64>;
pub type TrajectoryF32 = Trajectory<f32>;
pub type SystemSpecF64 = SystemSpec<f64>;
pub type SystemSpecF32 = SystemSpec<f32>;
pub type WeightVectorF64 = WeightVector<f64>;
pub type WeightVectorF32 = WeightVector<f32>;
pub type EvidenceF64 = Evidence<f64>;
pub type EvidenceF32 = Evidence<f32>;
pub type BeliefF64 = Belief<f64>;
pub type BeliefF32 = Belief<f32>;
pub type QueryF64 = Query<f64>;
pub type QueryF32 = Query<f32>;
pub type DemPrefConfigF64 = DemPrefConfig<f64>;
pub type DemPrefConfigF32 = DemPrefConfig<f32>;
pub type SessionStateF64 = SessionState<f64>;
pub type SessionStateF32 = SessionState<f32>;
pub type SimulatedHumanF64 = SimulatedHuman<f64>;
pub type DriverF64 = Driver<f64>;
pub type DriverF32 = Driver<f32>;
