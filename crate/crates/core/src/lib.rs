//! Multi-view monocular depth uncertainty from instance point density, and a
//! dense-grid SDF volume renderer whose training consumes the uncertainty maps.
//!
//! Pipeline: per-view instance masks are fused into scene-level clusters
//! ([`cluster`]), monocular depths are aligned to rendered depth
//! ([`depth`]), each cluster's multi-view points are scored by neighborhood
//! density ([`uncertainty`]), and the resulting maps weight the depth prior,
//! steer ray sampling, and gate a mask-restricted warping loss during
//! two-stage optimization ([`render`]). [`synth`] generates scenes with exact
//! ground truth, and [`io`] / [`pipeline`] persist every stage on disk.

pub mod camera;
pub mod cluster;
pub mod depth;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod obb;
pub mod pipeline;
pub mod render;
pub mod spatial;
pub mod synth;
pub mod uncertainty;
pub mod view;

pub use camera::{Camera, Intrinsics, Pose, Projection, Ray, Vec3};
pub use cluster::{InstanceCluster, InstanceKey, ViewInstance};
pub use depth::{DepthMap, ScaleShift};
pub use error::{Error, Result};
pub use image::{LabelMap, RgbImage};
pub use obb::ObbResult;
pub use uncertainty::{RadiusMode, UncertaintyMap};
pub use view::View;
