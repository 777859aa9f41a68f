//! Dense vertex lattice holding signed distance and color, queried by trilinear
//! interpolation.

use crate::camera::Vec3;
use crate::error::{Error, Result};

pub const DEFAULT_RESOLUTION: usize = 48;
pub const INITIAL_BETA: f64 = 0.1;
pub const MIN_BETA: f64 = 1e-3;

/// Eight lattice corners around a point, their interpolation weights, and the
/// spatial derivatives of those weights.
#[derive(Debug, Clone, Copy)]
pub struct Trilinear {
    pub index: [usize; 8],
    pub weight: [f64; 8],
    pub dweight: [[f64; 3]; 8],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    /// Vertices per axis.
    pub resolution: usize,
    pub min: Vec3,
    /// Edge length of the cubic bounds.
    pub size: f64,
    pub sdf: Vec<f64>,
    pub color: Vec<[f64; 3]>,
    pub beta: f64,
}

impl SdfGrid {
    /// Lattice initialized to the signed distance of a sphere centered in the
    /// bounds; `inside_out` flips the sign so the interior of the sphere is free
    /// space (cameras inside a room).
    pub fn sphere(min: Vec3, size: f64, resolution: usize, radius: f64, inside_out: bool) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::domain(format!("grid resolution must be >= 2, got {resolution}")));
        }
        if !(size > 0.0 && size.is_finite()) {
            return Err(Error::domain(format!("grid size must be positive, got {size}")));
        }
        let mut grid = SdfGrid {
            resolution,
            min,
            size,
            sdf: vec![0.0; resolution.pow(3)],
            color: vec![[0.5; 3]; resolution.pow(3)],
            beta: INITIAL_BETA,
        };
        let center = min + Vec3::repeat(size / 2.0);
        for i in 0..grid.sdf.len() {
            let d = (grid.vertex_position(i) - center).norm() - radius;
            grid.sdf[i] = if inside_out { -d } else { d };
        }
        Ok(grid)
    }

    /// Cubic bounds enclosing `points`, padded by `margin` on every side.
    pub fn bounds_for(points: &[Vec3], margin: f64) -> Result<(Vec3, f64)> {
        if points.is_empty() {
            return Err(Error::EmptyCloud("grid bounds".into()));
        }
        let (lo, hi) = crate::spatial::bounds(points);
        let center = (lo + hi) / 2.0;
        let size = (hi - lo).max() + 2.0 * margin;
        Ok((center - Vec3::repeat(size / 2.0), size))
    }

    pub fn voxel_size(&self) -> f64 {
        self.size / (self.resolution - 1) as f64
    }

    pub fn max(&self) -> Vec3 {
        self.min + Vec3::repeat(self.size)
    }

    pub fn vertex_count(&self) -> usize {
        self.sdf.len()
    }

    pub fn vertex_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }

    pub fn vertex_position(&self, index: usize) -> Vec3 {
        let n = self.resolution;
        let (i, j, k) = (index % n, (index / n) % n, index / (n * n));
        self.min + Vec3::new(i as f64, j as f64, k as f64) * self.voxel_size()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let hi = self.max();
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= hi[a])
    }

    /// Interpolation stencil at `p`, clamped into the bounds.
    pub fn locate(&self, p: &Vec3) -> Trilinear {
        let n = self.resolution;
        let h = self.voxel_size();
        let mut base = [0usize; 3];
        let mut f = [0.0; 3];
        for a in 0..3 {
            let x = ((p[a] - self.min[a]) / h).clamp(0.0, (n - 1) as f64);
            let c = (x.floor() as usize).min(n - 2);
            base[a] = c;
            f[a] = x - c as f64;
        }
        let mut out = Trilinear {
            index: [0; 8],
            weight: [0.0; 8],
            dweight: [[0.0; 3]; 8],
        };
        for c in 0..8 {
            let d = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let w: [f64; 3] = std::array::from_fn(|a| if d[a] == 1 { f[a] } else { 1.0 - f[a] });
            let s: [f64; 3] = std::array::from_fn(|a| if d[a] == 1 { 1.0 / h } else { -1.0 / h });
            out.index[c] = self.vertex_index(base[0] + d[0], base[1] + d[1], base[2] + d[2]);
            out.weight[c] = w[0] * w[1] * w[2];
            out.dweight[c] = [s[0] * w[1] * w[2], w[0] * s[1] * w[2], w[0] * w[1] * s[2]];
        }
        out
    }

    pub fn sdf_with(&self, t: &Trilinear) -> f64 {
        (0..8).map(|c| t.weight[c] * self.sdf[t.index[c]]).sum()
    }

    pub fn color_with(&self, t: &Trilinear) -> [f64; 3] {
        let mut out = [0.0; 3];
        for c in 0..8 {
            let v = self.color[t.index[c]];
            for k in 0..3 {
                out[k] += t.weight[c] * v[k];
            }
        }
        out
    }

    /// Analytic spatial gradient of the interpolated SDF.
    pub fn gradient_with(&self, t: &Trilinear) -> Vec3 {
        let mut g = Vec3::zeros();
        for c in 0..8 {
            let v = self.sdf[t.index[c]];
            g += Vec3::from(t.dweight[c]) * v;
        }
        g
    }

    pub fn sdf_at(&self, p: &Vec3) -> f64 {
        self.sdf_with(&self.locate(p))
    }

    pub fn color_at(&self, p: &Vec3) -> [f64; 3] {
        self.color_with(&self.locate(p))
    }

    /// Central-difference SDF gradient with step `h`.
    pub fn central_gradient(&self, p: &Vec3, h: f64) -> Vec3 {
        Vec3::from_fn(|a, _| {
            let mut e = Vec3::zeros();
            e[a] = h;
            (self.sdf_at(&(p + e)) - self.sdf_at(&(p - e))) / (2.0 * h)
        })
    }

    /// Number of scalar parameters: SDF values, RGB values, and β.
    pub fn parameter_count(&self) -> usize {
        4 * self.sdf.len() + 1
    }

    /// Flat parameter access in the order SDF, RGB (interleaved), β.
    pub fn parameter(&self, i: usize) -> f64 {
        let n = self.sdf.len();
        if i < n {
            self.sdf[i]
        } else if i < 4 * n {
            self.color[(i - n) / 3][(i - n) % 3]
        } else {
            self.beta
        }
    }

    pub fn set_parameter(&mut self, i: usize, value: f64) {
        let n = self.sdf.len();
        if i < n {
            self.sdf[i] = value;
        } else if i < 4 * n {
            self.color[(i - n) / 3][(i - n) % 3] = value;
        } else {
            self.beta = value;
        }
    }
}

/// Receiver of parameter gradients.
pub trait GradSink {
    fn sdf(&mut self, index: usize, g: f64);
    fn color(&mut self, index: usize, g: [f64; 3]);
    fn beta(&mut self, g: f64);

    fn sdf_stencil(&mut self, t: &Trilinear, g: f64) {
        for c in 0..8 {
            self.sdf(t.index[c], t.weight[c] * g);
        }
    }

    fn color_stencil(&mut self, t: &Trilinear, g: [f64; 3]) {
        for c in 0..8 {
            let w = t.weight[c];
            self.color(t.index[c], [w * g[0], w * g[1], w * g[2]]);
        }
    }
}

/// Dense gradient with the grid's layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGrad {
    pub sdf: Vec<f64>,
    pub color: Vec<[f64; 3]>,
    pub beta: f64,
}

impl GridGrad {
    pub fn zeros(grid: &SdfGrid) -> Self {
        GridGrad {
            sdf: vec![0.0; grid.sdf.len()],
            color: vec![[0.0; 3]; grid.color.len()],
            beta: 0.0,
        }
    }

    pub fn parameter(&self, i: usize) -> f64 {
        let n = self.sdf.len();
        if i < n {
            self.sdf[i]
        } else if i < 4 * n {
            self.color[(i - n) / 3][(i - n) % 3]
        } else {
            self.beta
        }
    }

    /// Adds a sparse gradient entry by entry, in recorded order.
    pub fn absorb(&mut self, sparse: &SparseGrad) {
        for &(i, g) in &sparse.sdf {
            self.sdf[i as usize] += g;
        }
        for &(i, g) in &sparse.color {
            let c = &mut self.color[i as usize];
            for k in 0..3 {
                c[k] += g[k];
            }
        }
        self.beta += sparse.beta;
    }
}

impl GradSink for GridGrad {
    fn sdf(&mut self, index: usize, g: f64) {
        self.sdf[index] += g;
    }

    fn color(&mut self, index: usize, g: [f64; 3]) {
        let c = &mut self.color[index];
        for k in 0..3 {
            c[k] += g[k];
        }
    }

    fn beta(&mut self, g: f64) {
        self.beta += g;
    }
}

/// Gradient recorded as an ordered list of contributions; merging lists in a
/// fixed order makes the summed gradient independent of thread scheduling.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrad {
    pub sdf: Vec<(u32, f64)>,
    pub color: Vec<(u32, [f64; 3])>,
    pub beta: f64,
}

impl SparseGrad {
    /// Wraps another sink target, multiplying every contribution by `scale`.
    pub fn scaled(&mut self, scale: f64) -> Scaled<'_, Self> {
        Scaled { inner: self, scale }
    }
}

impl GradSink for SparseGrad {
    fn sdf(&mut self, index: usize, g: f64) {
        if g != 0.0 {
            self.sdf.push((index as u32, g));
        }
    }

    fn color(&mut self, index: usize, g: [f64; 3]) {
        if g != [0.0; 3] {
            self.color.push((index as u32, g));
        }
    }

    fn beta(&mut self, g: f64) {
        self.beta += g;
    }
}

pub struct Scaled<'a, S: GradSink> {
    inner: &'a mut S,
    scale: f64,
}

impl<S: GradSink> GradSink for Scaled<'_, S> {
    fn sdf(&mut self, index: usize, g: f64) {
        self.inner.sdf(index, g * self.scale);
    }

    fn color(&mut self, index: usize, g: [f64; 3]) {
        let s = self.scale;
        self.inner.color(index, [g[0] * s, g[1] * s, g[2] * s]);
    }

    fn beta(&mut self, g: f64) {
        self.inner.beta(g * self.scale);
    }
}
