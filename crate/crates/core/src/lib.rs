//! Quality-aware timestep allocation for flow-matching training.
//!
//! Training samples carry a motion-quality and a visual-quality score. Each
//! sample is kept during batch preparation with probability equal to its
//! better normalized score, and draws its training timestep from a Beta law
//! centred by the *difference* of its scores: motion-strong samples train on
//! noisy timesteps, visually clean ones on nearly-clean timesteps, and
//! balanced ones fall back to the base schedule.
//!
//! The crate also ships a desk-scale harness around that mechanism: synthetic
//! moving-square videos with controllable motion and texture noise, a small
//! MLP velocity model with exact gradients, and diagnostics for gradient
//! alignment under degradations, timestep histograms, and scorer noise.

pub mod analysis;
pub mod beta;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod model;
pub mod quality;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod trainer;
pub mod video;

pub use error::{ErrorCategory, Result, TqdError};
pub use model::{ModelShape, VelocityModel};
pub use quality::{NormalizationConstants, PopulationStats, Quadrant, QuadrantPartition, QualityRecord};
pub use sampler::{Batch, SamplerConfig, SamplingMode, TimestepLaw, TqdSampler};
pub use trainer::{TrainState, TrainerConfig, TrainingSample};
pub use video::{DegradationKind, DegradationSpec, ToyVideo, VideoDims};
