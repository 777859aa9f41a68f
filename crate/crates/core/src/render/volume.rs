//! Volume rendering of the SDF grid along a ray, with the matching reverse pass.

use rand::Rng;

use crate::camera::Vec3;

use super::density::{density_gradients, sdf_to_density};
use super::grid::{GradSink, SdfGrid, Trilinear};

pub const DEFAULT_SAMPLES: usize = 64;

/// Ray-parameter interval inside an axis-aligned box, clipped to `t >= 0`.
pub fn ray_box(origin: &Vec3, dir: &Vec3, min: &Vec3, max: &Vec3) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a] < min[a] || origin[a] > max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut lo, mut hi) = ((min[a] - origin[a]) * inv, (max[a] - origin[a]) * inv);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        t0 = t0.max(lo);
        t1 = t1.min(hi);
    }
    (t1 > t0).then_some((t0, t1))
}

/// Sample distances along a ray with the interval following each one.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
}

impl RaySamples {
    /// One sample per equal bin of `[t0, t1]`: jittered uniformly inside its bin
    /// when `rng` is given, at the bin center otherwise. The last interval is
    /// one bin width.
    pub fn stratified<R: Rng>(t0: f64, t1: f64, count: usize, rng: Option<&mut R>) -> Self {
        let bin = (t1 - t0) / count as f64;
        let t: Vec<f64> = match rng {
            Some(rng) => (0..count).map(|i| t0 + (i as f64 + rng.random::<f64>()) * bin).collect(),
            None => (0..count).map(|i| t0 + (i as f64 + 0.5) * bin).collect(),
        };
        let delta = (0..count)
            .map(|i| if i + 1 < count { t[i + 1] - t[i] } else { bin })
            .collect();
        RaySamples { t, delta }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Forward state of one sample, kept for the reverse pass.
#[derive(Debug, Clone, Copy)]
pub struct SampleState {
    pub t: f64,
    pub delta: f64,
    pub point: Vec3,
    pub stencil: Trilinear,
    pub sdf: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub transmittance: f64,
    pub weight: f64,
    pub color: [f64; 3],
    /// Unnormalized central-difference gradient; zero when normals are off.
    pub gradient: Vec3,
    pub normal: Vec3,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: [f64; 3],
    /// Expected ray length `Σ w_i t_i`.
    pub depth: f64,
    pub normal: Vec3,
    /// `Σ w_i`.
    pub opacity: f64,
    pub samples: Vec<SampleState>,
}

impl RenderOutput {
    pub fn transparent() -> Self {
        RenderOutput {
            color: [0.0; 3],
            depth: 0.0,
            normal: Vec3::zeros(),
            opacity: 0.0,
            samples: Vec::new(),
        }
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.weight)
    }
}

/// Upstream derivatives of a scalar loss with respect to the render outputs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RenderUpstream {
    pub color: [f64; 3],
    pub depth: f64,
    pub normal: Vec3,
}

fn normal_stencils(grid: &SdfGrid, p: &Vec3, h: f64) -> [(Trilinear, Trilinear); 3] {
    std::array::from_fn(|a| {
        let mut e = Vec3::zeros();
        e[a] = h;
        (grid.locate(&(p + e)), grid.locate(&(p - e)))
    })
}

/// Composites color, depth and (optionally) normals along `origin + t·dir`.
pub fn render_ray(grid: &SdfGrid, origin: &Vec3, dir: &Vec3, samples: &RaySamples, normals: bool) -> RenderOutput {
    let h = grid.voxel_size();
    let mut out = RenderOutput::transparent();
    out.samples.reserve(samples.len());
    let mut trans = 1.0;
    for (&t, &delta) in samples.t.iter().zip(&samples.delta) {
        let point = origin + dir * t;
        let stencil = grid.locate(&point);
        let sdf = grid.sdf_with(&stencil);
        let sigma = sdf_to_density(sdf, grid.beta);
        let alpha = 1.0 - (-sigma * delta).exp();
        let weight = alpha * trans;
        let color = grid.color_with(&stencil);
        let (gradient, normal) = if normals {
            let st = normal_stencils(grid, &point, h);
            let g = Vec3::from_fn(|a, _| (grid.sdf_with(&st[a].0) - grid.sdf_with(&st[a].1)) / (2.0 * h));
            let norm = g.norm();
            (g, if norm > 1e-12 { g / norm } else { Vec3::zeros() })
        } else {
            (Vec3::zeros(), Vec3::zeros())
        };
        for k in 0..3 {
            out.color[k] += weight * color[k];
        }
        out.depth += weight * t;
        out.normal += normal * weight;
        out.opacity += weight;
        out.samples.push(SampleState {
            t,
            delta,
            point,
            stencil,
            sdf,
            sigma,
            alpha,
            transmittance: trans,
            weight,
            color,
            gradient,
            normal,
        });
        trans *= 1.0 - alpha;
    }
    out
}

/// Propagates `dL/dw_i` for the compositing weights `w_i = α_i T_i` back to the
/// SDF values and β.
pub fn backprop_weights<S: GradSink>(grid: &SdfGrid, samples: &[SampleState], dl_dw: &[f64], sink: &mut S) {
    debug_assert_eq!(samples.len(), dl_dw.len());
    // suffix = Σ_{i>k} g_i α_i Π_{k<l<i} (1 − α_l)
    let mut suffix = 0.0;
    let mut dbeta = 0.0;
    for k in (0..samples.len()).rev() {
        let s = &samples[k];
        let dalpha = s.transmittance * (dl_dw[k] - suffix);
        suffix = dl_dw[k] * s.alpha + (1.0 - s.alpha) * suffix;
        let dsigma = dalpha * s.delta * (1.0 - s.alpha);
        if dsigma == 0.0 {
            continue;
        }
        let (ds, db) = density_gradients(s.sdf, grid.beta);
        sink.sdf_stencil(&s.stencil, dsigma * ds);
        dbeta += dsigma * db;
    }
    sink.beta(dbeta);
}

/// Reverse pass of [`render_ray`].
pub fn backward_ray<S: GradSink>(grid: &SdfGrid, out: &RenderOutput, up: &RenderUpstream, sink: &mut S) {
    let h = grid.voxel_size();
    let with_normals = up.normal != Vec3::zeros();
    let mut dl_dw = Vec::with_capacity(out.samples.len());
    for s in &out.samples {
        let mut g = up.depth * s.t;
        for k in 0..3 {
            g += up.color[k] * s.color[k];
        }
        g += up.normal.dot(&s.normal);
        dl_dw.push(g);
        if up.color != [0.0; 3] && s.weight != 0.0 {
            sink.color_stencil(&s.stencil, up.color.map(|c| c * s.weight));
        }
        if with_normals && s.weight != 0.0 {
            let norm = s.gradient.norm();
            if norm > 1e-12 {
                let dn = up.normal * s.weight;
                let dg = (dn - s.normal * s.normal.dot(&dn)) / norm;
                let st = normal_stencils(grid, &s.point, h);
                for a in 0..3 {
                    let v = dg[a] / (2.0 * h);
                    sink.sdf_stencil(&st[a].0, v);
                    sink.sdf_stencil(&st[a].1, -v);
                }
            }
        }
    }
    backprop_weights(grid, &out.samples, &dl_dw, sink);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::grid::GridGrad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn midpoints(t0: f64, t1: f64, m: usize) -> RaySamples {
        RaySamples::stratified::<ChaCha8Rng>(t0, t1, m, None)
    }

    #[test]
    fn box_intersection() {
        let (lo, hi) = (Vec3::repeat(-1.0), Vec3::repeat(1.0));
        let (t0, t1) = ray_box(&Vec3::new(-3.0, 0.0, 0.0), &Vec3::x(), &lo, &hi).unwrap();
        assert_eq!((t0, t1), (2.0, 4.0));
        let (t0, t1) = ray_box(&Vec3::zeros(), &Vec3::y(), &lo, &hi).unwrap();
        assert_eq!((t0, t1), (0.0, 1.0));
        assert!(ray_box(&Vec3::new(-3.0, 2.0, 0.0), &Vec3::x(), &lo, &hi).is_none());
        assert!(ray_box(&Vec3::new(3.0, 0.0, 0.0), &Vec3::x(), &lo, &hi).is_none());
    }

    #[test]
    fn stratified_samples_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = RaySamples::stratified(1.0, 3.0, 64, Some(&mut rng));
        assert!(s.t.windows(2).all(|w| w[1] > w[0]));
        assert!(s.delta.iter().all(|&d| d > 0.0));
        assert!(s.t[0] >= 1.0 && s.t[63] <= 3.0);
        assert_eq!(s.delta[63], 2.0 / 64.0);
    }

    #[test]
    fn empty_space_is_transparent() {
        let mut g = SdfGrid::sphere(Vec3::repeat(-1.0), 2.0, 8, 0.5, false).unwrap();
        g.sdf.iter_mut().for_each(|s| *s = 1e3);
        let out = render_ray(&g, &Vec3::new(-2.0, 0.0, 0.0), &Vec3::x(), &midpoints(1.0, 3.0, 32), false);
        assert_eq!(out.color, [0.0; 3]);
        assert!(out.opacity < 1e-300);
    }

    #[test]
    fn opaque_sample_sets_depth() {
        let mut g = SdfGrid::sphere(Vec3::repeat(-1.0), 2.0, 8, 0.5, false).unwrap();
        g.sdf.iter_mut().for_each(|s| *s = 1e3);
        g.beta = 1e-3;
        let samples = RaySamples {
            t: vec![0.5, 1.0, 1.5],
            delta: vec![0.5, 0.5, 0.5],
        };
        let out = render_ray(&g, &Vec3::new(-2.0, 0.0, 0.0), &Vec3::x(), &samples, false);
        assert!(out.opacity < 1e-9);
        // Deep inside everywhere: the first sample absorbs everything.
        g.sdf.iter_mut().for_each(|s| *s = -1.0);
        let out = render_ray(&g, &Vec3::new(-2.0, 0.0, 0.0), &Vec3::x(), &samples, false);
        assert!((out.depth - 0.5).abs() < 1e-3);
        assert!(out.opacity <= 1.0 + 1e-6);
    }

    #[test]
    fn transmittance_is_monotone() {
        let g = SdfGrid::sphere(Vec3::repeat(-1.0), 2.0, 16, 0.5, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = RaySamples::stratified(1.0, 3.0, 64, Some(&mut rng));
        let out = render_ray(&g, &Vec3::new(-2.0, 0.1, -0.05), &Vec3::x(), &s, true);
        assert!(out.samples.windows(2).all(|w| w[1].transmittance <= w[0].transmittance));
        assert!(out.opacity <= 1.0 + 1e-6 && out.opacity > 0.99);
        // Front hit of the 0.5 sphere at x = -0.5, i.e. t ~ 1.5.
        assert!((out.depth - 1.5).abs() < 0.1, "{}", out.depth);
        assert!(out.normal.x < -0.9);
    }

    #[test]
    fn reverse_pass_matches_finite_differences() {
        let mut g = SdfGrid::sphere(Vec3::repeat(-1.0), 2.0, 9, 0.6, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for c in g.color.iter_mut() {
            *c = [rng.random(), rng.random(), rng.random()];
        }
        for s in g.sdf.iter_mut() {
            *s += rng.random_range(-0.05..0.05);
        }
        g.beta = 0.08;
        let origin = Vec3::new(-2.0, 0.13, -0.07);
        let dir = Vec3::new(1.0, 0.05, 0.02).normalize();
        let samples = RaySamples::stratified(1.0, 3.2, 24, Some(&mut rng));
        let up = RenderUpstream {
            color: [0.3, -0.7, 0.2],
            depth: 0.9,
            normal: Vec3::new(0.4, -0.2, 0.5),
        };
        let loss = |g: &SdfGrid| {
            let o = render_ray(g, &origin, &dir, &samples, true);
            (0..3).map(|k| up.color[k] * o.color[k]).sum::<f64>() + up.depth * o.depth + up.normal.dot(&o.normal)
        };
        let out = render_ray(&g, &origin, &dir, &samples, true);
        let mut grad = GridGrad::zeros(&g);
        backward_ray(&g, &out, &up, &mut grad);
        let mut checked = 0;
        for i in 0..g.parameter_count() {
            let a = grad.parameter(i);
            if a.abs() < 1e-4 {
                continue;
            }
            let mut p = g.clone();
            let x = g.parameter(i);
            let h = 1e-6;
            p.set_parameter(i, x + h);
            let f1 = loss(&p);
            p.set_parameter(i, x - h);
            let f0 = loss(&p);
            let fd = (f1 - f0) / (2.0 * h);
            assert!((a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()), "param {i}: {a} vs {fd}");
            checked += 1;
        }
        assert!(checked > 40, "{checked}");
    }
}
