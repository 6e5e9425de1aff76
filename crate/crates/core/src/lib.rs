//! Temporal BEV fusion engine: egomotion-aligned feature warping, an overlap
//! heatmap, a fixed-lag working memory and a dilated convolutional fusion
//! block, plus a synthetic streaming benchmark to train and evaluate them.

pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod grid;
pub mod heatmap;
pub mod membuf;
pub mod real;
pub mod synth;
pub mod tensorops;
pub mod train;

pub use error::{Error, Result};
pub use grid::{backward_flow, relative_transform, Flow, GridSpec, Pose2};
pub use real::Real;
pub use tensorops::{FeatureMap, ParamTensor, Tape, Var};
pub use fusion::{FusionConfig, FusionParams};
pub use heatmap::OverlapHeatmap;
pub use membuf::WorkingMemory;
pub use synth::{Scenario, ScenarioParams};
