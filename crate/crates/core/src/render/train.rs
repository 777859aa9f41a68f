//! Two-stage optimization: a warm-up under uniform monocular priors, then
//! uncertainty-weighted priors, guided sampling, and the instance-mask
//! constraint.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::{Camera, Vec3};
use crate::cluster::{chamfer_distance, cluster_views, GraphConfig, InstanceCluster, DEFAULT_CHAMFER_THRESHOLD};
use crate::depth::{apply_scale_shift, fit_scale_shift, DepthMap, ScaleShift};
use crate::error::{Error, Result};
use crate::image::UNSEGMENTED;
use crate::uncertainty::{estimate_uncertainty, UncertaintyConfig, UncertaintyMap, UncertaintyOutput};
use crate::view::View;

use super::grid::{GridGrad, SdfGrid, SparseGrad, DEFAULT_RESOLUTION};
use super::loss::{
    color_residual, eikonal_backward, eikonal_loss, mask_constraint_ray, normal_residual, total_loss, LossComponents,
    LossWeights, MaskTarget, PriorWeighting,
};
use super::optim::{Optimizer, OptimizerKind};
use super::sampling::{PixelSample, RaySampler};
use super::volume::{backward_ray, ray_box, render_ray, RaySamples, RenderUpstream, DEFAULT_SAMPLES};

const CHUNK: usize = 32;
/// Accumulated weight above which a rendered pixel counts as a surface hit.
pub const HIT_OPACITY: f64 = 0.5;

/// Where the eikonal term is evaluated at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EikonalSampling {
    /// One uniformly jittered point in every grid cell.
    #[default]
    PerCell,
    /// This many points uniform over the grid bounds.
    Uniform(usize),
}

/// Stage-2 components that can be switched off for ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Modules {
    pub adaptive: bool,
    pub guided: bool,
    pub mask_constraint: bool,
}

impl Modules {
    pub const NONE: Modules = Modules {
        adaptive: false,
        guided: false,
        mask_constraint: false,
    };
    pub const ALL: Modules = Modules {
        adaptive: true,
        guided: true,
        mask_constraint: true,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub resolution: usize,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub batch_size: usize,
    pub samples: usize,
    pub weights: LossWeights,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub beta_lr_scale: f64,
    /// Learning-rate factor applied at the stage boundary.
    pub stage_decay: f64,
    pub eikonal: EikonalSampling,
    pub uncertainty_threshold: f64,
    pub prior_weighting: PriorWeighting,
    /// Stage-1 depth is rendered at `1/low_res_factor` of the image size.
    pub low_res_factor: u32,
    pub alignment_trim: f64,
    pub chamfer_threshold: f64,
    pub uncertainty: UncertaintyConfig,
    pub modules: Modules,
    /// Padding around the prior point cloud, as a fraction of its extent.
    pub bounds_margin: f64,
    /// Initial sphere radius as a fraction of the grid size.
    pub init_radius: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            resolution: DEFAULT_RESOLUTION,
            stage1_steps: 2000,
            stage2_steps: 3000,
            batch_size: 512,
            samples: DEFAULT_SAMPLES,
            weights: LossWeights::default(),
            optimizer: OptimizerKind::default(),
            lr: 0.01,
            momentum: 0.9,
            beta_lr_scale: 0.1,
            stage_decay: 1.0,
            eikonal: EikonalSampling::PerCell,
            uncertainty_threshold: 0.5,
            prior_weighting: PriorWeighting::Linear,
            low_res_factor: 4,
            alignment_trim: 0.1,
            chamfer_threshold: DEFAULT_CHAMFER_THRESHOLD,
            uncertainty: UncertaintyConfig::default(),
            modules: Modules::ALL,
            bounds_margin: 0.05,
            init_radius: 0.3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.resolution < 2 {
            return bad("grid resolution must be >= 2");
        }
        if self.batch_size == 0 || self.samples == 0 {
            return bad("batch size and sample count must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.low_res_factor == 0 {
            return bad("low-resolution factor must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.uncertainty_threshold) {
            return bad("uncertainty threshold must lie in [0, 1]");
        }
        if !(self.chamfer_threshold > 0.0) {
            return bad("Chamfer threshold must be positive");
        }
        Ok(())
    }
}

/// Views carrying monocular depth, plus optional exact depth for evaluation.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub views: Vec<View>,
    pub background: BTreeMap<u32, BTreeSet<u16>>,
    pub ground_truth: Option<Vec<DepthMap>>,
}

impl TrainingData {
    /// Per view, the pixels whose instance label is neither unsegmented nor background.
    pub fn foreground_pixels(&self) -> Vec<Vec<bool>> {
        self.views
            .iter()
            .map(|v| {
                let bg = self.background.get(&v.id());
                v.mask
                    .labels
                    .iter()
                    .map(|&l| l != UNSEGMENTED && !bg.is_some_and(|b| b.contains(&l)))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub stage: u8,
    pub step: usize,
    pub components: LossComponents,
    pub total: f64,
    /// Mask-constraint rays with no sample inside the matching mask.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub grid: SdfGrid,
    pub log: Vec<LossRecord>,
}

/// Everything stage 2 consumes that is derived from the stage-1 grid.
#[derive(Debug, Clone)]
pub struct StagePrior {
    /// Stage-1 render at low resolution, upsampled to image size.
    pub reference: Vec<DepthMap>,
    pub alignment: Vec<ScaleShift>,
    pub aligned: Vec<DepthMap>,
    pub clusters: Vec<InstanceCluster>,
    pub uncertainty: UncertaintyOutput,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub stage1: StageResult,
    pub prior: StagePrior,
    pub stage2: StageResult,
    pub stage1_chamfer: Option<f64>,
    pub chamfer: Option<f64>,
}

/// One supervised camera ray.
#[derive(Debug, Clone)]
pub struct RayItem {
    pub origin: Vec3,
    pub dir: Vec3,
    pub z_per_length: f64,
    pub samples: RaySamples,
    pub color: [f64; 3],
    /// Camera-z depth prior.
    pub depth: Option<f64>,
    pub normal: Option<Vec3>,
    /// Multiplier on both prior terms (`1 − U`, or 1 without uncertainty).
    pub prior_weight: f64,
}

/// One ray of the instance-mask constraint pool.
#[derive(Debug, Clone)]
pub struct MaskItem {
    pub origin: Vec3,
    pub dir: Vec3,
    pub samples: RaySamples,
    pub reference: [f64; 3],
    /// Index of the nearby view.
    pub nearby: usize,
    /// Nearby-view labels in the same cluster as the ray's instance.
    pub labels: Vec<u16>,
}

#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub rays: Vec<RayItem>,
    pub masks: Vec<MaskItem>,
    pub eikonal: Vec<Vec3>,
}

/// Loss components of `batch`, the number of skipped mask rays, and (when
/// requested) the gradient of the total loss.
///
/// Work is split into fixed chunks whose gradients are merged in chunk order,
/// so the result does not depend on the number of worker threads.
pub fn batch_objective(
    grid: &SdfGrid,
    views: &[View],
    batch: &Batch,
    weights: &LossWeights,
    with_grad: bool,
) -> (LossComponents, usize, Option<GridGrad>) {
    let nr = batch.rays.len().max(1) as f64;
    let nm = batch.masks.len().max(1) as f64;
    enum Task<'a> {
        Rays(&'a [RayItem]),
        Masks(&'a [MaskItem]),
    }
    let tasks: Vec<Task> = batch
        .rays
        .chunks(CHUNK)
        .map(Task::Rays)
        .chain(batch.masks.chunks(CHUNK).map(Task::Masks))
        .collect();
    let parts: Vec<(LossComponents, usize, SparseGrad)> = tasks
        .par_iter()
        .map(|task| {
            let mut loss = LossComponents::default();
            let mut skipped = 0;
            let mut sink = SparseGrad::default();
            match task {
                Task::Rays(items) => {
                    for item in *items {
                        ray_term(grid, item, weights, nr, &mut loss, with_grad.then_some(&mut sink));
                    }
                }
                Task::Masks(items) => {
                    for item in *items {
                        let out = render_ray(grid, &item.origin, &item.dir, &item.samples, false);
                        let nearby = &views[item.nearby];
                        let target = MaskTarget {
                            camera: &nearby.camera,
                            mask: &nearby.mask,
                            rgb: &nearby.rgb,
                            labels: &item.labels,
                        };
                        match mask_constraint_ray(&out, &target, &item.reference) {
                            Some(r) => {
                                loss.mask += r.loss;
                                if with_grad {
                                    r.backward(grid, &out, weights.mask / nm, &mut sink);
                                }
                            }
                            None => skipped += 1,
                        }
                    }
                }
            }
            (loss, skipped, sink)
        })
        .collect();
    let mut loss = LossComponents::default();
    let mut skipped = 0;
    let mut grad = with_grad.then(|| GridGrad::zeros(grid));
    for (l, s, g) in &parts {
        loss.color += l.color;
        loss.depth += l.depth;
        loss.normal += l.normal;
        loss.mask += l.mask;
        skipped += s;
        if let Some(grad) = grad.as_mut() {
            grad.absorb(g);
        }
    }
    loss.color /= nr;
    loss.depth /= nr;
    loss.normal /= nr;
    loss.mask /= nm;
    if !batch.eikonal.is_empty() {
        loss.eikonal = eikonal_loss(grid, &batch.eikonal);
        if let Some(grad) = grad.as_mut() {
            let scale = weights.eikonal / batch.eikonal.len() as f64;
            eikonal_backward(grid, &batch.eikonal, scale, grad);
        }
    }
    (loss, skipped, grad)
}

fn ray_term(
    grid: &SdfGrid,
    item: &RayItem,
    weights: &LossWeights,
    n: f64,
    loss: &mut LossComponents,
    sink: Option<&mut SparseGrad>,
) {
    let normals = weights.normal > 0.0 && item.normal.is_some() && item.prior_weight > 0.0;
    let out = render_ray(grid, &item.origin, &item.dir, &item.samples, normals);
    let mut up = RenderUpstream::default();
    let (lc, dc) = color_residual(&out.color, &item.color);
    loss.color += lc;
    up.color = dc.map(|d| d / n);
    if let Some(d) = item.depth {
        let z = out.depth * item.z_per_length;
        let r = z - d;
        loss.depth += item.prior_weight * r.abs();
        up.depth = weights.depth / n * item.prior_weight * r.signum() * item.z_per_length * (r != 0.0) as u8 as f64;
    }
    if let (Some(m), true) = (item.normal, normals) {
        let (r, g) = normal_residual(&out.normal, &m);
        loss.normal += item.prior_weight * r;
        up.normal = g * (weights.normal / n * item.prior_weight);
    }
    if let Some(sink) = sink {
        if !out.samples.is_empty() {
            backward_ray(grid, &out, &up, sink);
        }
    }
}

/// Samples along a camera ray inside the grid bounds, jittered by `rng`.
fn samples_for<R: Rng>(grid: &SdfGrid, origin: &Vec3, dir: &Vec3, count: usize, rng: &mut R) -> RaySamples {
    match ray_box(origin, dir, &grid.min, &grid.max()) {
        Some((t0, t1)) => RaySamples::stratified(t0, t1, count, Some(rng)),
        None => RaySamples {
            t: Vec::new(),
            delta: Vec::new(),
        },
    }
}

/// Per-pixel world normals of a depth map from cross products of central
/// differences; pixels next to depth discontinuities or mask edges get none.
pub fn depth_normals(view: &View, depth: &DepthMap) -> Vec<Option<Vec3>> {
    let (w, h) = (depth.width, depth.height);
    let cam = &view.camera;
    let point = |u: u32, v: u32| depth.get(u, v).and_then(|d| cam.back_project(u, v, d).ok());
    let mut out = vec![None; depth.len()];
    for v in 1..h.saturating_sub(1) {
        for u in 1..w.saturating_sub(1) {
            let label = view.mask.get(u, v);
            let Some(d) = depth.get(u, v) else { continue };
            let nb = [(u - 1, v), (u + 1, v), (u, v - 1), (u, v + 1)];
            let consistent = nb.iter().all(|&(a, b)| {
                view.mask.get(a, b) == label && depth.get(a, b).is_some_and(|x| (x - d).abs() < 0.05 * d)
            });
            if !consistent {
                continue;
            }
            let (Some(l), Some(r), Some(t), Some(b)) = (point(u - 1, v), point(u + 1, v), point(u, v - 1), point(u, v + 1))
            else {
                continue;
            };
            let n = (r - l).cross(&(b - t));
            let norm = n.norm();
            if norm < 1e-15 {
                continue;
            }
            let mut n = n / norm;
            let p = cam.back_project(u, v, d).expect("valid depth");
            if n.dot(&(cam.pose.center() - p)) < 0.0 {
                n = -n;
            }
            out[depth.index(u, v)] = Some(n);
        }
    }
    out
}

/// Camera-z depth rendered at every pixel of `camera`, opacity-normalized;
/// pixels below [`HIT_OPACITY`] are invalid.
pub fn render_depth(grid: &SdfGrid, camera: &Camera, samples: usize) -> DepthMap {
    let (w, h) = (camera.width(), camera.height());
    let rows: Vec<Vec<Option<f64>>> = (0..h)
        .into_par_iter()
        .map(|v| {
            (0..w)
                .map(|u| {
                    let ray = camera.generate_ray(u, v).expect("pixel in bounds");
                    let (t0, t1) = ray_box(&ray.origin, &ray.direction, &grid.min, &grid.max())?;
                    let s = RaySamples::stratified::<ChaCha8Rng>(t0, t1, samples, None);
                    let out = render_ray(grid, &ray.origin, &ray.direction, &s, false);
                    (out.opacity >= HIT_OPACITY).then(|| out.depth / out.opacity * camera.z_per_ray_length(&ray))
                })
                .collect()
        })
        .collect();
    let mut depth = DepthMap::invalid(w, h);
    for (v, row) in rows.into_iter().enumerate() {
        for (u, d) in row.into_iter().enumerate() {
            depth.set(u as u32, v as u32, d);
        }
    }
    depth
}

/// Camera-z depth of the first outside-to-inside zero crossing of the SDF along
/// each pixel ray, marched at a quarter voxel and refined linearly. Pixels with
/// no crossing are invalid.
pub fn surface_depth(grid: &SdfGrid, camera: &Camera) -> DepthMap {
    let step = grid.voxel_size() / 4.0;
    let (w, h) = (camera.width(), camera.height());
    let rows: Vec<Vec<Option<f64>>> = (0..h)
        .into_par_iter()
        .map(|v| {
            (0..w)
                .map(|u| {
                    let ray = camera.generate_ray(u, v).expect("pixel in bounds");
                    let (t0, t1) = ray_box(&ray.origin, &ray.direction, &grid.min, &grid.max())?;
                    let n = ((t1 - t0) / step).ceil() as usize;
                    let mut prev: Option<(f64, f64)> = None;
                    for i in 0..=n {
                        let t = (t0 + i as f64 * step).min(t1);
                        let s = grid.sdf_at(&(ray.origin + ray.direction * t));
                        if let Some((tp, sp)) = prev {
                            if sp > 0.0 && s <= 0.0 {
                                let hit = tp + (t - tp) * sp / (sp - s);
                                return Some(hit * camera.z_per_ray_length(&ray));
                            }
                        }
                        prev = Some((t, s));
                    }
                    None
                })
                .collect()
        })
        .collect();
    let mut depth = DepthMap::invalid(w, h);
    for (v, row) in rows.into_iter().enumerate() {
        for (u, d) in row.into_iter().enumerate() {
            depth.set(u as u32, v as u32, d);
        }
    }
    depth
}

/// Nearest-neighbor upsampling of `low` to `width x height`.
pub fn upsample_nearest(low: &DepthMap, width: u32, height: u32) -> DepthMap {
    let mut out = DepthMap::invalid(width, height);
    for v in 0..height {
        for u in 0..width {
            let lu = ((u as u64 * low.width as u64) / width as u64) as u32;
            let lv = ((v as u64 * low.height as u64) / height as u64) as u32;
            out.set(u, v, low.get(lu.min(low.width - 1), lv.min(low.height - 1)));
        }
    }
    out
}

/// World points of the SDF zero level set seen through every pixel of all
/// cameras, or through the pixels flagged in `region` (one flag per pixel and view).
pub fn surface_points(grid: &SdfGrid, cameras: &[Camera], region: Option<&[Vec<bool>]>) -> Vec<Vec3> {
    let depths: Vec<DepthMap> = cameras.iter().map(|cam| surface_depth(grid, cam)).collect();
    region_points(cameras, &depths, region)
}

/// Back-projection of every valid pixel of `depths`.
pub fn depth_points(cameras: &[Camera], depths: &[DepthMap]) -> Vec<Vec3> {
    region_points(cameras, depths, None)
}

fn region_points(cameras: &[Camera], depths: &[DepthMap], region: Option<&[Vec<bool>]>) -> Vec<Vec3> {
    let mut pts = Vec::new();
    for (i, (cam, depth)) in cameras.iter().zip(depths).enumerate() {
        for v in 0..depth.height {
            for u in 0..depth.width {
                if region.is_some_and(|r| !r[i][depth.index(u, v)]) {
                    continue;
                }
                if let Some(d) = depth.get(u, v) {
                    pts.push(cam.back_project(u, v, d).expect("valid depth is positive"));
                }
            }
        }
    }
    pts
}

/// Chamfer distance between the visible zero level set and the back-projected
/// exact depths, both restricted to `region` when given.
pub fn reconstruction_chamfer(grid: &SdfGrid, cameras: &[Camera], exact: &[DepthMap], region: Option<&[Vec<bool>]>) -> Result<f64> {
    if let Some(r) = region {
        if r.len() != cameras.len() || r.iter().zip(exact).any(|(f, d)| f.len() != d.len()) {
            return Err(Error::domain("evaluation region does not match the views"));
        }
    }
    let rendered = surface_points(grid, cameras, region);
    let truth = region_points(cameras, exact, region);
    if rendered.is_empty() {
        return Err(Error::EmptyCloud("no pixel ray crosses the zero level set".into()));
    }
    if truth.is_empty() {
        return Err(Error::EmptyCloud("no exact depth inside the evaluation region".into()));
    }
    chamfer_distance(&rendered, &truth)
}

/// For each view, the other view whose optical axis is closest in angle,
/// if that angle is below 45 degrees.
pub fn nearby_views(views: &[View]) -> Vec<Option<usize>> {
    let limit = 45f64.to_radians();
    views
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let axis = a.camera.pose.optical_axis();
            views
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, b)| (j, axis.angle(&b.camera.pose.optical_axis())))
                .filter(|(_, angle)| *angle < limit)
                .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)))
                .map(|(j, _)| j)
        })
        .collect()
}

fn step_rng(seed: u64, stage: u8, step: usize) -> ChaCha8Rng {
    let mix = seed ^ ((stage as u64) << 56) ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    ChaCha8Rng::seed_from_u64(mix)
}

/// Supervision shared by all steps of one stage.
struct StageSetup<'a> {
    stage: u8,
    views: &'a [View],
    depths: &'a [DepthMap],
    normals: Vec<Vec<Option<Vec3>>>,
    uncertainty: Option<&'a [UncertaintyMap]>,
    sampler: RaySampler,
    mask_pool: Vec<(PixelSample, usize, Vec<u16>)>,
}

impl StageSetup<'_> {
    fn batch(&self, grid: &SdfGrid, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Batch {
        let pixels = self.sampler.draw(rng);
        let rays = pixels
            .iter()
            .map(|p| {
                let view = &self.views[p.view];
                let ray = view.camera.generate_ray(p.u, p.v).expect("sampled pixel in bounds");
                let idx = view.depth.index(p.u, p.v);
                let u = self.uncertainty.map_or(0.0, |m| m[p.view].values[idx] as f64);
                RayItem {
                    origin: ray.origin,
                    dir: ray.direction,
                    z_per_length: view.camera.z_per_ray_length(&ray),
                    samples: samples_for(grid, &ray.origin, &ray.direction, config.samples, rng),
                    color: view.rgb.get(p.u, p.v),
                    depth: self.depths[p.view].get(p.u, p.v),
                    normal: self.normals[p.view][idx],
                    prior_weight: if self.uncertainty.is_some() {
                        config.prior_weighting.weight(u)
                    } else {
                        1.0
                    },
                }
            })
            .collect();
        let masks = if self.mask_pool.is_empty() {
            Vec::new()
        } else {
            (0..config.batch_size)
                .map(|_| {
                    let (p, nearby, labels) = &self.mask_pool[rng.random_range(0..self.mask_pool.len())];
                    let view = &self.views[p.view];
                    let ray = view.camera.generate_ray(p.u, p.v).expect("pool pixel in bounds");
                    MaskItem {
                        origin: ray.origin,
                        dir: ray.direction,
                        samples: samples_for(grid, &ray.origin, &ray.direction, config.samples, rng),
                        reference: view.rgb.get(p.u, p.v),
                        nearby: *nearby,
                        labels: labels.clone(),
                    }
                })
                .collect()
        };
        let (lo, size) = (grid.min, grid.size);
        let eikonal = if let EikonalSampling::Uniform(count) = config.eikonal {
            (0..count)
                .map(|_| lo + Vec3::from_fn(|_, _| rng.random::<f64>() * size))
                .collect()
        } else {
            let n = grid.resolution - 1;
            let h = grid.voxel_size();
            let mut pts = Vec::with_capacity(n * n * n);
            for z in 0..n {
                for y in 0..n {
                    for x in 0..n {
                        let cell = Vec3::new(x as f64, y as f64, z as f64);
                        pts.push(lo + (cell + Vec3::from_fn(|_, _| rng.random::<f64>())) * h);
                    }
                }
            }
            pts
        };
        Batch { rays, masks, eikonal }
    }
}

fn all_pixels(views: &[View]) -> Vec<(u32, Vec<u32>)> {
    views
        .iter()
        .map(|v| (v.camera.width(), (0..v.camera.intrinsics.pixel_count() as u32).collect()))
        .collect()
}

fn run_stage(grid: &mut SdfGrid, setup: &StageSetup, config: &TrainConfig, steps: usize, lr: f64) -> Result<Vec<LossRecord>> {
    let mut opt = Optimizer::new(config.optimizer, lr, config.momentum, config.beta_lr_scale);
    let mut log = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut rng = step_rng(config.seed, setup.stage, step);
        let batch = setup.batch(grid, config, &mut rng);
        let (components, skipped, grad) = batch_objective(grid, setup.views, &batch, &config.weights, true);
        let total = total_loss(&components, &config.weights).map_err(|e| match e {
            Error::Divergence { component, .. } => Error::Divergence {
                stage: setup.stage,
                step,
                component,
            },
            other => other,
        })?;
        let grad = grad.expect("gradient requested");
        if !grad.beta.is_finite() || grad.sdf.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                stage: setup.stage,
                step,
                component: "gradient",
            });
        }
        opt.step(grid, &grad);
        if step % 100 == 0 {
            debug!("stage {} step {step}: total {total:.5} {components:?}", setup.stage);
        }
        log.push(LossRecord {
            stage: setup.stage,
            step,
            components,
            total,
            skipped,
        });
    }
    Ok(log)
}

/// Initial grid: cubic bounds around the back-projected depth prior; a sphere
/// surface, turned inside out when a camera sits inside the bounds.
pub fn initial_grid(data: &TrainingData, config: &TrainConfig) -> Result<SdfGrid> {
    let cameras: Vec<Camera> = data.views.iter().map(|v| v.camera).collect();
    let depths: Vec<DepthMap> = data.views.iter().map(|v| v.depth.clone()).collect();
    let pts = depth_points(&cameras, &depths);
    let (lo, hi) = {
        if pts.is_empty() {
            return Err(Error::EmptyCloud("no valid monocular depth in any view".into()));
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &pts {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    };
    let extent = (hi - lo).max();
    let (min, size) = SdfGrid::bounds_for(&pts, config.bounds_margin * extent)?;
    let mut grid = SdfGrid::sphere(min, size, config.resolution, config.init_radius * size, false)?;
    if cameras.iter().any(|c| grid.contains(&c.pose.center())) {
        // Cameras inside the scene: start from an empty ball reaching close to
        // the bounds that holds all of them.
        let center = min + Vec3::repeat(size / 2.0);
        let reach = cameras.iter().map(|c| (c.pose.center() - center).norm()).fold(0.0, f64::max);
        let radius = (0.45 * size).max(1.1 * reach);
        grid = SdfGrid::sphere(min, size, config.resolution, radius, true)?;
    }
    Ok(grid)
}

/// Stage 1: uniform depth and normal priors, uniform ray sampling.
pub fn train_stage1(data: &TrainingData, config: &TrainConfig) -> Result<StageResult> {
    config.validate()?;
    let mut grid = initial_grid(data, config)?;
    let depths: Vec<DepthMap> = data.views.iter().map(|v| v.depth.clone()).collect();
    let setup = StageSetup {
        stage: 1,
        views: &data.views,
        normals: data.views.iter().zip(&depths).map(|(v, d)| depth_normals(v, d)).collect(),
        depths: &depths,
        uncertainty: None,
        sampler: RaySampler::uniform(&all_pixels(&data.views), config.batch_size),
        mask_pool: Vec::new(),
    };
    info!("stage 1: {} steps, grid {}^3", config.stage1_steps, grid.resolution);
    let log = run_stage(&mut grid, &setup, config, config.stage1_steps, config.lr)?;
    Ok(StageResult { grid, log })
}

/// Low-resolution render of the stage-1 grid, per-view alignment of the
/// monocular depth to it, instance clustering, and uncertainty estimation.
pub fn prepare_stage2(data: &TrainingData, stage1: &SdfGrid, config: &TrainConfig) -> Result<StagePrior> {
    let mut reference = Vec::with_capacity(data.views.len());
    let mut alignment = Vec::with_capacity(data.views.len());
    let mut aligned = Vec::with_capacity(data.views.len());
    for view in &data.views {
        let cam = &view.camera;
        let low = Camera::new(cam.id, cam.intrinsics.downscaled(config.low_res_factor), cam.pose)?;
        let rendered = upsample_nearest(&render_depth(stage1, &low, config.samples), cam.width(), cam.height());
        let params = match fit_scale_shift(&view.depth, &rendered, None, config.alignment_trim) {
            Ok(p) => p,
            Err(e @ (Error::InsufficientData { .. } | Error::Singular(_))) => {
                warn!("view {}: alignment failed ({e}); keeping monocular depth", view.id());
                ScaleShift::IDENTITY
            }
            Err(e) => return Err(e),
        };
        aligned.push(apply_scale_shift(&view.depth, params));
        alignment.push(params);
        reference.push(rendered);
    }
    let graph = GraphConfig {
        threshold: config.chamfer_threshold,
        seed: config.seed,
        ..GraphConfig::default()
    };
    let clusters = cluster_views(&data.views, &aligned, &graph, &data.background).clusters;
    let ucfg = UncertaintyConfig {
        seed: config.seed,
        ..config.uncertainty
    };
    let uncertainty = estimate_uncertainty(&data.views, &aligned, &clusters, &ucfg)?;
    Ok(StagePrior {
        reference,
        alignment,
        aligned,
        clusters,
        uncertainty,
    })
}

/// Candidate rays for the instance-mask constraint: high-uncertainty pixels of
/// foreground instances whose view has a nearby view containing the same
/// cluster.
fn mask_pool(data: &TrainingData, prior: &StagePrior, threshold: f64) -> Vec<(PixelSample, usize, Vec<u16>)> {
    let nearby = nearby_views(&data.views);
    let mut labels_of: BTreeMap<(usize, u16), Vec<u16>> = BTreeMap::new();
    for cluster in prior.clusters.iter().filter(|c| !c.is_background) {
        for m in &cluster.members {
            let Some(vi) = data.views.iter().position(|v| v.id() == m.view_id) else { continue };
            let Some(n) = nearby[vi] else { continue };
            let nid = data.views[n].id();
            let labels: Vec<u16> = cluster.members.iter().filter(|k| k.view_id == nid).map(|k| k.label).collect();
            if !labels.is_empty() {
                labels_of.insert((vi, m.label), labels);
            }
        }
    }
    let mut pool = Vec::new();
    for (vi, view) in data.views.iter().enumerate() {
        let map = &prior.uncertainty.maps[vi];
        for v in 0..view.camera.height() {
            for u in 0..view.camera.width() {
                let label = view.mask.get(u, v);
                if label == UNSEGMENTED || map.get(u, v) <= threshold {
                    continue;
                }
                if let (Some(labels), Some(n)) = (labels_of.get(&(vi, label)), nearby[vi]) {
                    pool.push((PixelSample { view: vi, u, v }, n, labels.clone()));
                }
            }
        }
    }
    pool
}

/// Stage 2 from `grid`, using the modules enabled in `config.modules`.
pub fn train_stage2(data: &TrainingData, mut grid: SdfGrid, prior: &StagePrior, config: &TrainConfig) -> Result<StageResult> {
    config.validate()?;
    let modules = config.modules;
    let maps = &prior.uncertainty.maps;
    let masks: Vec<_> = data.views.iter().map(|v| v.mask.clone()).collect();
    let sampler = if modules.guided {
        RaySampler::guided(maps, &masks, config.batch_size, true)?
    } else {
        RaySampler::uniform(&all_pixels(&data.views), config.batch_size)
    };
    let pool = if modules.mask_constraint {
        mask_pool(data, prior, config.uncertainty_threshold)
    } else {
        Vec::new()
    };
    let setup = StageSetup {
        stage: 2,
        views: &data.views,
        normals: data
            .views
            .iter()
            .zip(&prior.aligned)
            .map(|(v, d)| depth_normals(v, d))
            .collect(),
        depths: &prior.aligned,
        uncertainty: modules.adaptive.then_some(maps.as_slice()),
        sampler,
        mask_pool: pool,
    };
    info!(
        "stage 2: {} steps, modules {modules:?}, {} mask-constraint candidates",
        config.stage2_steps,
        setup.mask_pool.len()
    );
    let log = run_stage(&mut grid, &setup, config, config.stage2_steps, config.lr * config.stage_decay)?;
    Ok(StageResult { grid, log })
}

/// Both stages and the reconstruction metric (when exact depth is given).
pub fn two_stage_train(data: &TrainingData, config: &TrainConfig) -> Result<TrainOutput> {
    let stage1 = train_stage1(data, config)?;
    let prior = prepare_stage2(data, &stage1.grid, config)?;
    let stage2 = train_stage2(data, stage1.grid.clone(), &prior, config)?;
    let cameras: Vec<Camera> = data.views.iter().map(|v| v.camera).collect();
    let region = data.foreground_pixels();
    let (stage1_chamfer, chamfer) = match &data.ground_truth {
        Some(gt) => (
            Some(reconstruction_chamfer(&stage1.grid, &cameras, gt, Some(&region))?),
            Some(reconstruction_chamfer(&stage2.grid, &cameras, gt, Some(&region))?),
        ),
        None => (None, None),
    };
    Ok(TrainOutput {
        stage1,
        prior,
        stage2,
        stage1_chamfer,
        chamfer,
    })
}
