//! Differentiable volume rendering of a dense SDF grid and its two-stage,
//! uncertainty-guided training.

pub mod composite;
pub mod density;
pub mod grid;
pub mod loss;
pub mod optim;
pub mod sampling;
pub mod train;
pub mod volume;

pub use composite::{composite_gaussians, Splat};
pub use density::{density_gradients, sdf_to_density};
pub use grid::{GradSink, GridGrad, SdfGrid};
pub use loss::{total_loss, LossComponents, LossWeights, PriorWeighting};
pub use optim::{Optimizer, OptimizerKind};
pub use sampling::{sample_rays, PixelSample, RaySampler};
pub use train::{two_stage_train, EikonalSampling, Modules, TrainConfig, TrainOutput, TrainingData};
pub use volume::{render_ray, RaySamples, RenderOutput};
