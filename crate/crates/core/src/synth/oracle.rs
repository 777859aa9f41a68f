//! Slow, direct reference implementations used to check the fast paths.
//!
//! Nothing here shares kernels with the production code: densities and
//! Chamfer distances are plain double loops, the hull volume enumerates every
//! candidate face, and camera maps go through general 4x4 matrix inverses.

use nalgebra::{Matrix4, Vector4};

use crate::camera::{Camera, Vec3};

/// Count of `points` within `radius` of each query, by exhaustive scan.
pub fn brute_force_density(queries: &[Vec3], points: &[Vec3], radius: f64) -> Vec<u32> {
    let r2 = radius * radius;
    queries
        .iter()
        .map(|q| {
            let mut n = 0;
            for p in points {
                let (dx, dy, dz) = (p.x - q.x, p.y - q.y, p.z - q.z);
                if dx * dx + dy * dy + dz * dz <= r2 {
                    n += 1;
                }
            }
            n
        })
        .collect()
}

fn brute_nearest(p: &Vec3, set: &[Vec3]) -> f64 {
    let mut best = f64::INFINITY;
    for q in set {
        let (dx, dy, dz) = (p.x - q.x, p.y - q.y, p.z - q.z);
        best = best.min(dx * dx + dy * dy + dz * dz);
    }
    best.sqrt()
}

/// Symmetric Chamfer distance by O(n*m) nearest-neighbor search.
pub fn brute_force_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    let ab: f64 = a.iter().map(|p| brute_nearest(p, b)).sum::<f64>() / a.len() as f64;
    let ba: f64 = b.iter().map(|p| brute_nearest(p, a)).sum::<f64>() / b.len() as f64;
    0.5 * (ab + ba)
}

/// Convex hull volume by enumerating all point triples as candidate faces.
///
/// A triple spans a hull face plane when no point lies strictly on its outer
/// side. Coplanar points of each distinct face plane are gathered, their 2D
/// hull area is measured, and the volume is the sum of pyramids from the
/// centroid. Returns 0 for degenerate (flat) inputs.
pub fn convex_hull_volume(points: &[Vec3]) -> f64 {
    let n = points.len();
    if n < 4 {
        return 0.0;
    }
    let scale = points.iter().map(|p| p.amax()).fold(0.0, f64::max).max(1.0);
    let eps = 1e-9 * scale;
    let centroid = points.iter().sum::<Vec3>() / n as f64;
    let mut planes: Vec<(Vec3, f64)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let normal = (points[j] - points[i]).cross(&(points[k] - points[i]));
                let len = normal.norm();
                if len < 1e-12 * scale * scale {
                    continue;
                }
                let mut normal = normal / len;
                let mut offset = normal.dot(&points[i]);
                if normal.dot(&centroid) > offset {
                    normal = -normal;
                    offset = -offset;
                }
                if points.iter().any(|p| normal.dot(p) - offset > eps) {
                    continue;
                }
                if !planes
                    .iter()
                    .any(|(m, o)| (m - normal).norm() < 1e-7 && (o - offset).abs() < 1e-7 * scale)
                {
                    planes.push((normal, offset));
                }
            }
        }
    }
    let mut volume = 0.0;
    for (normal, offset) in planes {
        let on_plane: Vec<Vec3> = points
            .iter()
            .filter(|p| (normal.dot(p) - offset).abs() <= eps)
            .copied()
            .collect();
        let height = offset - normal.dot(&centroid);
        volume += polygon_hull_area(&on_plane, &normal) * height / 3.0;
    }
    volume
}

/// Area of the 2D convex hull of coplanar points (monotone chain in a plane basis).
fn polygon_hull_area(points: &[Vec3], normal: &Vec3) -> f64 {
    let helper = if normal.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = normal.cross(&helper).normalize();
    let e2 = normal.cross(&e1);
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.dot(&e1), p.dot(&e2))).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return 0.0;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let mut area = 0.0;
    for i in 0..hull.len() {
        let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
        area += a.0 * b.1 - b.0 * a.1;
    }
    0.5 * area.abs()
}

/// Central-difference partial derivatives of `f` at `x` for the listed coordinates.
pub fn finite_difference_gradients(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    indices: &[usize],
    step: f64,
) -> Vec<f64> {
    let mut probe = x.to_vec();
    indices
        .iter()
        .map(|&i| {
            probe[i] = x[i] + step;
            let plus = f(&probe);
            probe[i] = x[i] - step;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

fn intrinsics4(cam: &Camera) -> Matrix4<f64> {
    let k = &cam.intrinsics;
    Matrix4::new(
        k.fx, 0.0, k.cx, 0.0, //
        0.0, k.fy, k.cy, 0.0, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    )
}

/// World point of continuous image coordinates `(x, y)` at camera depth `depth`,
/// via `T_cam_to_world * K^-1 * [x d, y d, d, 1]`.
pub fn homogeneous_back_project(cam: &Camera, x: f64, y: f64, depth: f64) -> Vec3 {
    let k_inv = intrinsics4(cam).try_inverse().expect("invertible intrinsics");
    let world = cam.pose.matrix() * k_inv * Vector4::new(x * depth, y * depth, depth, 1.0);
    Vec3::new(world.x / world.w, world.y / world.w, world.z / world.w)
}

/// Continuous image coordinates and depth via `K * T_cam_to_world^-1 * [p, 1]`.
pub fn homogeneous_project(cam: &Camera, p: &Vec3) -> Option<(f64, f64, f64)> {
    let world_to_cam = cam.pose.matrix().try_inverse()?;
    let h = intrinsics4(cam) * world_to_cam * Vector4::new(p.x, p.y, p.z, 1.0);
    (h.z > 1e-8).then(|| (h.x / h.z, h.y / h.z, h.z))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube() -> Vec<Vec3> {
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
    fn density_with_infinite_radius_counts_everything() {
        let pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, -(i as f64))).collect();
        assert!(brute_force_density(&pts, &pts, f64::INFINITY).iter().all(|c| *c == 10));
    }

    #[test]
    fn chamfer_is_symmetric() {
        let a: Vec<Vec3> = (0..7).map(|i| Vec3::new(i as f64 * 0.3, 1.0, 0.0)).collect();
        let b: Vec<Vec3> = (0..4).map(|i| Vec3::new(0.0, i as f64, 0.5)).collect();
        assert_eq!(brute_force_chamfer(&a, &b), brute_force_chamfer(&b, &a));
    }

    #[test]
    fn hull_volumes() {
        assert!((convex_hull_volume(&cube()) - 1.0).abs() < 1e-12);
        let mut with_interior = cube();
        with_interior.push(Vec3::repeat(0.5));
        with_interior.push(Vec3::new(0.5, 0.5, 1.0));
        assert!((convex_hull_volume(&with_interior) - 1.0).abs() < 1e-12);
        let tetra = [Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        assert!((convex_hull_volume(&tetra) - 1.0 / 6.0).abs() < 1e-12);
        let flat: Vec<Vec3> = (0..6).map(|i| Vec3::new(i as f64, (i * i) as f64, 0.0)).collect();
        assert_eq!(convex_hull_volume(&flat), 0.0);
    }

    #[test]
    fn finite_differences_of_a_quadratic() {
        let g = finite_difference_gradients(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 5.0], &[0, 1], 1e-4);
        assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }
}
