//! Uncertainty-aware target tracking at desk scale.
//!
//! A ground target moves along a Markov-chain road network and is watched by
//! an aerial agent with a fixed downward camera. A small transformer, trained
//! on past trajectories, serves as the transition model of a particle filter;
//! an expected-entropy-reduction (EER) planner picks the agent waypoint that
//! is most likely to shrink the estimate's uncertainty. Three guidance
//! policies (EER, lawnmower-and-track, filter weighted mean) can be run and
//! benchmarked on tracking error, estimation error, and estimate uncertainty.
//!
//! Modules:
//! - [`geometry`]: workspace, sensor footprint, occlusion, observability
//! - [`road`]: ground-truth Markov-chain target simulator
//! - [`motion`]: the learned transformer motion model and baselines
//! - [`filter`]: particle filter estimator
//! - [`eer`]: particle-based entropy estimates and waypoint selection
//! - [`guidance`]: the three waypoint policies
//! - [`sim`]: closed-loop episodes, metrics, benchmark runner, plots
//!
//! Everything is seed-deterministic: a `(config, seed)` pair reproduces an
//! episode byte for byte.

pub mod eer;
pub mod filter;
pub mod geometry;
pub mod guidance;
pub mod motion;
pub mod rng;
pub mod road;

pub use eer::{BeliefSnapshot, EerConfig, EerResult, Waypoint};
pub use filter::{MeasurementModel, Particle, ParticleSet};
pub use guidance::{GuidanceDecision, GuidanceMode, LawnState};
pub use geometry::{OcclusionZone, Pose2, Rect, SensorFootprint, Workspace};
pub use motion::{DmmnHyper, DmmnParams, HistoryWindow, MotionModel, TrainConfig};
pub use road::{RoadNetwork, TargetTruth};
