//! Training objectives: photometric, uncertainty-weighted priors, instance-mask
//! warping, eikonal, and their weighted sum.

use crate::camera::{Camera, Vec3};
use crate::error::{Error, Result};
use crate::image::{LabelMap, RgbImage};

use super::grid::{GradSink, SdfGrid};
use super::volume::{backprop_weights, RenderOutput};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub eikonal: f64,
    pub mask: f64,
    pub depth: f64,
    pub normal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            eikonal: 0.1,
            mask: 0.4,
            depth: 0.5,
            normal: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.eikonal, self.mask, self.depth, self.normal];
        if all.iter().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be finite and >= 0: {all:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossComponents {
    pub color: f64,
    pub eikonal: f64,
    pub mask: f64,
    pub depth: f64,
    pub normal: f64,
}

impl LossComponents {
    pub const NAMES: [&'static str; 5] = ["color", "eikonal", "mask", "depth", "normal"];

    pub fn values(&self) -> [f64; 5] {
        [self.color, self.eikonal, self.mask, self.depth, self.normal]
    }

    /// Name of the first non-finite component.
    pub fn non_finite(&self) -> Option<&'static str> {
        Self::NAMES.iter().zip(self.values()).find(|(_, v)| !v.is_finite()).map(|(n, _)| *n)
    }
}

/// `L_color + λ1·L_eik + λ2·L_mask + λ3·L_depth + λ4·L_normal`.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    if let Some(component) = c.non_finite() {
        return Err(Error::Divergence {
            stage: 0,
            step: 0,
            component,
        });
    }
    Ok(c.color + w.eikonal * c.eikonal + w.mask * c.mask + w.depth * c.depth + w.normal * c.normal)
}

/// How uncertainty scales a prior term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum PriorWeighting {
    /// `1 − U`.
    #[default]
    Linear,
    /// 1 where `U <= threshold`, else 0.
    Gate(f64),
}

impl PriorWeighting {
    pub fn weight(&self, u: f64) -> f64 {
        match *self {
            PriorWeighting::Linear => 1.0 - u,
            PriorWeighting::Gate(t) => {
                if u <= t {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// L1 color residual summed over channels, and its derivative.
pub fn color_residual(rendered: &[f64; 3], target: &[f64; 3]) -> (f64, [f64; 3]) {
    let d: [f64; 3] = std::array::from_fn(|k| rendered[k] - target[k]);
    (d.iter().map(|x| x.abs()).sum(), d.map(sign))
}

/// Mean of `(1 − U)·|D̂ − D_mono|`.
pub fn adaptive_depth_loss(rendered: &[f64], mono: &[f64], uncertainty: &[f64]) -> f64 {
    assert!(rendered.len() == mono.len() && mono.len() == uncertainty.len());
    if rendered.is_empty() {
        return 0.0;
    }
    let sum: f64 = rendered
        .iter()
        .zip(mono)
        .zip(uncertainty)
        .map(|((r, m), u)| (1.0 - u) * (r - m).abs())
        .sum();
    sum / rendered.len() as f64
}

/// `‖N̂ − N‖₁ + 1 − cos(N̂, N)` and its derivative with respect to `N̂`.
pub fn normal_residual(rendered: &Vec3, mono: &Vec3) -> (f64, Vec3) {
    let d = rendered - mono;
    let l1 = d.abs().sum();
    let mut grad = d.map(sign);
    let (nr, nm) = (rendered.norm(), mono.norm());
    let mut cos = 0.0;
    if nr > 1e-12 && nm > 1e-12 {
        cos = rendered.dot(mono) / (nr * nm);
        grad -= mono / (nr * nm) - rendered * (cos / (nr * nr));
    }
    (l1 + 1.0 - cos, grad)
}

/// Mean of `(1 − U)·(‖N̂ − N‖₁ + 1 − cos(N̂, N))`.
pub fn adaptive_normal_loss(rendered: &[Vec3], mono: &[Vec3], uncertainty: &[f64]) -> f64 {
    assert!(rendered.len() == mono.len() && mono.len() == uncertainty.len());
    if rendered.is_empty() {
        return 0.0;
    }
    let sum: f64 = rendered
        .iter()
        .zip(mono)
        .zip(uncertainty)
        .map(|((r, m), u)| (1.0 - u) * normal_residual(r, m).0)
        .sum();
    sum / rendered.len() as f64
}

/// Mean of `(‖∇SDF(x)‖ − 1)²`.
pub fn eikonal_loss(grid: &SdfGrid, points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let sum: f64 = points
        .iter()
        .map(|p| (grid.gradient_with(&grid.locate(p)).norm() - 1.0).powi(2))
        .sum();
    sum / points.len() as f64
}

/// Adds `scale · d(Σ_x (‖∇SDF(x)‖ − 1)²)` to `sink`.
pub fn eikonal_backward<S: GradSink>(grid: &SdfGrid, points: &[Vec3], scale: f64, sink: &mut S) {
    for p in points {
        let st = grid.locate(p);
        let g = grid.gradient_with(&st);
        let n = g.norm();
        if n < 1e-12 {
            continue;
        }
        let dg = g * (2.0 * (n - 1.0) / n * scale);
        for c in 0..8 {
            let v = dg.dot(&Vec3::from(st.dweight[c]));
            sink.sdf(st.index[c], v);
        }
    }
}

/// The nearby view a high-uncertainty ray is warped into, restricted to the
/// mask labels belonging to the ray's instance cluster.
#[derive(Debug, Clone, Copy)]
pub struct MaskTarget<'a> {
    pub camera: &'a Camera,
    pub mask: &'a LabelMap,
    pub rgb: &'a RgbImage,
    pub labels: &'a [u16],
}

impl MaskTarget<'_> {
    /// Bilinear color of the nearby image at the projection of `p`, if `p`
    /// lands inside the matching instance mask.
    pub fn warp(&self, p: &Vec3) -> Option<[f64; 3]> {
        let (x, y, _) = self.camera.project(p).visible()?;
        let (u, v, _) = self.camera.pixel_of(p)?;
        self.labels
            .contains(&self.mask.get(u, v))
            .then(|| self.rgb.sample_bilinear(x, y))
    }
}

/// Per-ray result of the instance-mask constraint.
#[derive(Debug, Clone)]
pub struct MaskRay {
    pub loss: f64,
    pub composite: [f64; 3],
    warped: Vec<[f64; 3]>,
    dcolor: [f64; 3],
}

/// Composites nearby-view colors over the samples whose projections fall inside
/// the matching mask, `Σ_j 𝟙_j I_n[π_n(p_j)] α_j T_j`, and compares with the
/// reference color. `None` when no sample lands in the mask.
pub fn mask_constraint_ray(out: &RenderOutput, target: &MaskTarget, reference: &[f64; 3]) -> Option<MaskRay> {
    let mut any = false;
    let warped: Vec<[f64; 3]> = out
        .samples
        .iter()
        .map(|s| match target.warp(&s.point) {
            Some(c) => {
                any = true;
                c
            }
            None => [0.0; 3],
        })
        .collect();
    if !any {
        return None;
    }
    let mut composite = [0.0; 3];
    for (s, c) in out.samples.iter().zip(&warped) {
        for k in 0..3 {
            composite[k] += s.weight * c[k];
        }
    }
    let (loss, dcolor) = color_residual(&composite, reference);
    Some(MaskRay {
        loss,
        composite,
        warped,
        dcolor,
    })
}

impl MaskRay {
    /// Adds `scale · dloss` to `sink`.
    pub fn backward<S: GradSink>(&self, grid: &SdfGrid, out: &RenderOutput, scale: f64, sink: &mut S) {
        let dl_dw: Vec<f64> = self
            .warped
            .iter()
            .map(|c| scale * (0..3).map(|k| self.dcolor[k] * c[k]).sum::<f64>())
            .collect();
        backprop_weights(grid, &out.samples, &dl_dw, sink);
    }
}

/// Mean constraint loss over all rays, skipped rays contributing 0, with the
/// number of skipped rays.
pub fn mask_constraint_loss<'a>(
    rays: impl IntoIterator<Item = (&'a RenderOutput, MaskTarget<'a>, [f64; 3])>,
) -> (f64, usize) {
    let (mut sum, mut count, mut skipped) = (0.0, 0usize, 0usize);
    for (out, target, reference) in rays {
        count += 1;
        match mask_constraint_ray(out, &target, &reference) {
            Some(r) => sum += r.loss,
            None => skipped += 1,
        }
    }
    (if count > 0 { sum / count as f64 } else { 0.0 }, skipped)
}
