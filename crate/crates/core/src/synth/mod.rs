//! Synthetic scenes with exact ground truth, plus brute-force oracles.

pub mod corrupt;
pub mod oracle;
pub mod presets;
pub mod raster;
pub mod scene;

pub use corrupt::{corrupt_depths, CorruptedDepth};
pub use raster::{render_ground_truth, GroundTruthView};
pub use scene::{AffineDistortion, CameraRing, Corruption, Primitive, SceneSpec, Shape};
