//! Exact per-pixel ground truth by analytic ray casting.

use crate::camera::{Camera, Vec3};
use crate::depth::DepthMap;
use crate::error::Result;
use crate::image::{LabelMap, RgbImage, UNSEGMENTED};

use super::scene::SceneSpec;

const AMBIENT: f64 = 0.35;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthView {
    pub camera: Camera,
    pub depth: DepthMap,
    pub mask: LabelMap,
    pub rgb: RgbImage,
}

/// Nearest primitive hit along the ray through the center of pixel `(u, v)`:
/// `(primitive index, ray parameter, outward normal)`.
pub fn cast_pixel(spec: &SceneSpec, camera: &Camera, u: u32, v: u32) -> Option<(usize, f64, Vec3)> {
    let ray = camera.generate_ray(u, v).ok()?;
    spec.primitives
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.shape.intersect(&ray.origin, &ray.direction).map(|(t, n)| (i, t, n)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
}

pub fn render_view(spec: &SceneSpec, camera: &Camera) -> GroundTruthView {
    let (w, h) = (camera.width(), camera.height());
    let mut depth = DepthMap::invalid(w, h);
    let mut mask = LabelMap::empty(w, h);
    let mut rgb = RgbImage::black(w, h);
    let light = spec.light.normalize();
    for v in 0..h {
        for u in 0..w {
            let Some((i, t, normal)) = cast_pixel(spec, camera, u, v) else {
                continue;
            };
            let ray = camera.generate_ray(u, v).expect("pixel in bounds");
            let prim = &spec.primitives[i];
            let hit = ray.at(t);
            let idx = (v * w + u) as usize;
            depth.set(u, v, Some(t * camera.z_per_ray_length(&ray)));
            mask.labels[idx] = prim.id;
            let shade = AMBIENT + (1.0 - AMBIENT) * normal.dot(&light).max(0.0);
            let albedo = prim.albedo(&hit);
            rgb.pixels[idx] = albedo.map(|c| (c * shade).clamp(0.0, 1.0) as f32);
        }
    }
    debug_assert!(mask.labels.iter().zip(&depth.valid).all(|(l, ok)| (*l != UNSEGMENTED) == *ok));
    GroundTruthView {
        camera: *camera,
        depth,
        mask,
        rgb,
    }
}

/// Exact depth, instance mask, and shaded color for every camera of the rig.
pub fn render_ground_truth(spec: &SceneSpec) -> Result<Vec<GroundTruthView>> {
    spec.validate()?;
    Ok(spec.cameras()?.iter().map(|c| render_view(spec, c)).collect())
}
