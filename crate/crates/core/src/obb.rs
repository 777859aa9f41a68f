//! Approximate minimum-volume oriented bounding box.
//!
//! The search starts from the PCA frame of the points (and the world axes),
//! then scans a grid of small Euler-angle rotations around the current best
//! frame, re-centering on improvements and narrowing the span once the best
//! candidate sits inside the grid. Candidate volumes are measured on a set of
//! directional extreme points; the final box is fitted to every input point,
//! so it always contains them.

use nalgebra::{Matrix3, Rotation3, SymmetricEigen};

use crate::camera::Vec3;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObbConfig {
    /// Samples per Euler angle; the grid has `steps^3` rotations.
    pub steps: usize,
    /// Half-width of the angular grid in degrees.
    pub half_span_deg: f64,
    /// Extra re-centered or narrowed scans after the first.
    pub refine_passes: usize,
}

impl Default for ObbConfig {
    fn default() -> Self {
        ObbConfig {
            steps: 20,
            half_span_deg: 15.0,
            refine_passes: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObbResult {
    pub center: Vec3,
    /// Columns are the box axes.
    pub axes: Matrix3<f64>,
    pub half_extents: Vec3,
    pub volume: f64,
}

impl ObbResult {
    /// Largest amount by which `p` lies outside the box (0 when inside).
    pub fn outside_distance(&self, p: &Vec3) -> f64 {
        let local = self.axes.transpose() * (p - self.center);
        (0..3)
            .map(|k| (local[k].abs() - self.half_extents[k]).max(0.0))
            .fold(0.0, f64::max)
    }
}

pub fn oriented_bounding_box(points: &[Vec3]) -> Result<ObbResult> {
    oriented_bounding_box_with(points, &ObbConfig::default())
}

pub fn oriented_bounding_box_with(points: &[Vec3], config: &ObbConfig) -> Result<ObbResult> {
    if points.is_empty() {
        return Err(Error::domain("oriented bounding box of an empty point set"));
    }
    if points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
        return Err(Error::domain("oriented bounding box input has non-finite points"));
    }
    let support = extreme_points(points);
    let steps = config.steps.max(1);

    let mut best_frame = Matrix3::identity();
    let mut best_volume = frame_volume(&support, &best_frame);
    for seed in [pca_frame(points), Matrix3::identity()] {
        let mut frame = seed;
        let mut volume = frame_volume(&support, &frame);
        let mut span = config.half_span_deg.to_radians();
        for _ in 0..=config.refine_passes {
            let (candidate, cand_volume, on_edge) = scan_grid(&support, &frame, span, steps);
            if cand_volume < volume {
                frame = candidate;
                volume = cand_volume;
            }
            if !on_edge {
                span *= 0.25;
            }
        }
        if volume < best_volume {
            best_volume = volume;
            best_frame = frame;
        }
    }
    Ok(fit_box(points, &best_frame))
}

/// Columns: principal axes of the point covariance, right-handed.
fn pca_frame(points: &[Vec3]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut axes = eig.eigenvectors;
    if axes.determinant() < 0.0 {
        axes.column_mut(2).neg_mut();
    }
    axes
}

fn scan_grid(
    support: &[Vec3],
    frame: &Matrix3<f64>,
    span: f64,
    steps: usize,
) -> (Matrix3<f64>, f64, bool) {
    let angle = |i: usize| {
        if steps == 1 {
            0.0
        } else {
            -span + 2.0 * span * i as f64 / (steps - 1) as f64
        }
    };
    let mut best = (*frame, frame_volume(support, frame), false);
    for i in 0..steps {
        for j in 0..steps {
            for k in 0..steps {
                let r = Rotation3::from_euler_angles(angle(i), angle(j), angle(k));
                let candidate = frame * r.matrix();
                let v = frame_volume(support, &candidate);
                if v < best.1 {
                    let edge = |x: usize| x == 0 || x + 1 == steps;
                    best = (candidate, v, edge(i) || edge(j) || edge(k));
                }
            }
        }
    }
    best
}

fn frame_volume(points: &[Vec3], frame: &Matrix3<f64>) -> f64 {
    let axes = frame.transpose();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        let q = axes * p;
        for k in 0..3 {
            lo[k] = lo[k].min(q[k]);
            hi[k] = hi[k].max(q[k]);
        }
    }
    (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2])
}

fn fit_box(points: &[Vec3], frame: &Matrix3<f64>) -> ObbResult {
    let axes_t = frame.transpose();
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        let q = axes_t * p;
        lo = lo.inf(&q);
        hi = hi.sup(&q);
    }
    let half_extents = (hi - lo) * 0.5;
    let center = frame * ((hi + lo) * 0.5);
    ObbResult {
        center,
        axes: *frame,
        half_extents,
        volume: 8.0 * half_extents.x * half_extents.y * half_extents.z,
    }
}

/// Points attaining the min or max along a fixed spread of directions.
fn extreme_points(points: &[Vec3]) -> Vec<Vec3> {
    const DIRECTIONS: usize = 200;
    if points.len() <= 2 * DIRECTIONS {
        return points.to_vec();
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut keep = vec![false; points.len()];
    for i in 0..DIRECTIONS {
        let z = 1.0 - (i as f64 + 0.5) / DIRECTIONS as f64;
        let r = (1.0 - z * z).sqrt();
        let dir = Vec3::new(r * (golden * i as f64).cos(), r * (golden * i as f64).sin(), z);
        let (mut lo, mut hi) = ((f64::INFINITY, 0), (f64::NEG_INFINITY, 0));
        for (j, p) in points.iter().enumerate() {
            let d = p.dot(&dir);
            if d < lo.0 {
                lo = (d, j);
            }
            if d > hi.0 {
                hi = (d, j);
            }
        }
        keep[lo.1] = true;
        keep[hi.1] = true;
    }
    points
        .iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(*p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pose;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube_corners() -> Vec<Vec3> {
        let mut v = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    v.push(Vec3::new(x, y, z));
                }
            }
        }
        v
    }

    #[test]
    fn unit_cube_volume() {
        let obb = oriented_bounding_box(&cube_corners()).unwrap();
        assert!((obb.volume - 1.0).abs() < 1e-6, "{}", obb.volume);
    }

    #[test]
    fn rotated_cubes_stay_near_unit_volume() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let axis = Vec3::new(rng.random(), rng.random(), rng.random()) - Vec3::repeat(0.5);
            let pose = Pose::rotation_about(axis, rng.random_range(0.0..std::f64::consts::PI));
            let pts: Vec<Vec3> = cube_corners().iter().map(|p| pose.transform_point(p)).collect();
            let obb = oriented_bounding_box(&pts).unwrap();
            assert!((obb.volume - 1.0).abs() < 0.02, "{}", obb.volume);
        }
    }

    #[test]
    fn contains_every_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec3> = (0..3000)
            .map(|_| Vec3::new(rng.random::<f64>() * 2.0, rng.random::<f64>() * 0.3, rng.random::<f64>()))
            .collect();
        let obb = oriented_bounding_box(&pts).unwrap();
        assert!(pts.iter().all(|p| obb.outside_distance(p) <= 1e-6));
        let h = obb.half_extents;
        assert!((obb.volume - 8.0 * h.x * h.y * h.z).abs() < 1e-12);
        assert!((obb.axes.transpose() * obb.axes - Matrix3::identity()).amax() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(oriented_bounding_box(&[]).is_err());
        let one = oriented_bounding_box(&[Vec3::new(1.0, 2.0, 3.0)]).unwrap();
        assert_eq!(one.volume, 0.0);
        assert_eq!(one.center, Vec3::new(1.0, 2.0, 3.0));
        let planar: Vec<Vec3> = (0..50).map(|i| Vec3::new(i as f64 * 0.1, (i * i % 7) as f64, 0.0)).collect();
        assert!(oriented_bounding_box(&planar).unwrap().volume.abs() < 1e-9);
    }
}
