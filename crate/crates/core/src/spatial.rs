//! Uniform-grid spatial index over a static point set.
//!
//! Points are bucketed into axis-aligned cubic cells stored as a dense CSR
//! layout (cell offsets + a permuted copy of the points), so a ball query of
//! radius `r <= cell` touches at most 27 cells. Nearest-neighbor queries scan
//! Chebyshev rings of cells outward until the ring distance bound exceeds the
//! best candidate, which keeps results identical to a linear scan.

use crate::camera::Vec3;

/// Upper bound on dense cell count; the cell edge grows until the grid fits.
const MAX_CELLS: usize = 1 << 22;

#[derive(Debug, Clone)]
pub struct UniformGrid {
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    /// `cell_start[c]..cell_start[c + 1]` indexes `sorted` for cell `c`.
    cell_start: Vec<u32>,
    sorted: Vec<[f64; 3]>,
    /// Original index of each entry of `sorted`.
    source: Vec<u32>,
}

impl UniformGrid {
    /// Builds a grid whose cells are at least `cell_size` wide.
    pub fn new(points: &[Vec3], cell_size: f64) -> Self {
        assert!(cell_size > 0.0 && cell_size.is_finite(), "cell size must be positive");
        assert!(points.len() < u32::MAX as usize);
        let (lo, hi) = bounds(points);
        let extent = hi - lo;
        let limit = MAX_CELLS.min(8 * points.len() + 64);
        let mut cell = cell_size;
        let dims = loop {
            let d = [0, 1, 2].map(|k| ((extent[k] / cell).floor() as usize).saturating_add(1));
            let total = d[0].saturating_mul(d[1]).saturating_mul(d[2]);
            if total <= limit {
                break d;
            }
            cell *= (total as f64 / limit as f64).cbrt().max(1.01);
        };

        let n_cells = dims[0] * dims[1] * dims[2];
        let cell_of: Vec<usize> = points
            .iter()
            .map(|p| {
                let c = [0, 1, 2].map(|k| (((p[k] - lo[k]) / cell) as usize).min(dims[k] - 1));
                (c[2] * dims[1] + c[1]) * dims[0] + c[0]
            })
            .collect();
        let mut cell_start = vec![0u32; n_cells + 1];
        for &c in &cell_of {
            cell_start[c + 1] += 1;
        }
        for c in 0..n_cells {
            cell_start[c + 1] += cell_start[c];
        }
        let mut cursor = cell_start.clone();
        let mut sorted = vec![[0.0; 3]; points.len()];
        let mut source = vec![0u32; points.len()];
        for (i, (&c, p)) in cell_of.iter().zip(points).enumerate() {
            let slot = cursor[c] as usize;
            cursor[c] += 1;
            sorted[slot] = [p.x, p.y, p.z];
            source[slot] = i as u32;
        }
        UniformGrid {
            origin: lo,
            cell,
            dims,
            cell_start,
            sorted,
            source,
        }
    }

    /// Grid sized for nearest-neighbor queries on roughly surface-like data.
    pub fn for_nearest(points: &[Vec3]) -> Self {
        let (lo, hi) = bounds(points);
        let extent = (hi - lo).max().max(1e-9);
        let n = points.len().max(1) as f64;
        Self::new(points, (2.0 * extent / n.sqrt()).max(extent * 1e-6))
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    fn cell_coord(&self, q: &Vec3) -> [i64; 3] {
        [0, 1, 2].map(|k| ((q[k] - self.origin[k]) / self.cell).floor() as i64)
    }

    #[inline]
    fn cell_points(&self, x: usize, y: usize, z: usize) -> std::ops::Range<usize> {
        let c = (z * self.dims[1] + y) * self.dims[0] + x;
        self.cell_start[c] as usize..self.cell_start[c + 1] as usize
    }

    fn clamped_range(&self, center: i64, reach: i64, axis: usize) -> Option<(usize, usize)> {
        let lo = (center - reach).max(0);
        let hi = (center + reach).min(self.dims[axis] as i64 - 1);
        (lo <= hi).then_some((lo as usize, hi as usize))
    }

    /// Number of points with Euclidean distance `<= radius` from `q`.
    pub fn count_within(&self, q: &Vec3, radius: f64) -> usize {
        let mut count = 0;
        self.visit_within(q, radius, |_| count += 1);
        count
    }

    /// Original indices of points within `radius` of `q`, in grid order.
    pub fn indices_within(&self, q: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.visit_within(q, radius, |i| out.push(i));
        out
    }

    fn visit_within(&self, q: &Vec3, radius: f64, mut f: impl FnMut(usize)) {
        if self.is_empty() || !(radius >= 0.0) {
            return;
        }
        let r2 = radius * radius;
        let c = self.cell_coord(q);
        let reach = (radius / self.cell).ceil() as i64;
        let (Some((x0, x1)), Some((y0, y1)), Some((z0, z1))) = (
            self.clamped_range(c[0], reach, 0),
            self.clamped_range(c[1], reach, 1),
            self.clamped_range(c[2], reach, 2),
        ) else {
            return;
        };
        for z in z0..=z1 {
            for y in y0..=y1 {
                // Cells along x are contiguous in the CSR layout.
                let start = self.cell_points(x0, y, z).start;
                let end = self.cell_points(x1, y, z).end;
                for slot in start..end {
                    if dist2(&self.sorted[slot], q) <= r2 {
                        f(self.source[slot] as usize);
                    }
                }
            }
        }
    }

    /// Closest point to `q` as `(original index, distance)`; ties go to the lowest index.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.is_empty() {
            return None;
        }
        let c = self.cell_coord(q);
        // Chebyshev distance from the query cell to the nearest in-grid cell.
        let k_start = (0..3)
            .map(|k| {
                let hi = self.dims[k] as i64 - 1;
                if c[k] < 0 {
                    -c[k]
                } else if c[k] > hi {
                    c[k] - hi
                } else {
                    0
                }
            })
            .max()
            .unwrap_or(0);
        let k_end = (0..3)
            .map(|k| c[k].abs().max((self.dims[k] as i64 - 1 - c[k]).abs()))
            .max()
            .unwrap_or(0);

        let mut best: Option<(u32, f64)> = None;
        for k in k_start..=k_end {
            self.visit_ring(c, k, |slot| {
                let d2 = dist2(&self.sorted[slot], q);
                let idx = self.source[slot];
                match best {
                    Some((bi, bd)) if d2 > bd || (d2 == bd && idx > bi) => {}
                    _ => best = Some((idx, d2)),
                }
            });
            if let Some((_, bd)) = best {
                // Anything in ring k+1 or beyond is at least k cells away.
                let bound = k as f64 * self.cell;
                if bd < bound * bound {
                    break;
                }
            }
        }
        best.map(|(i, d2)| (i as usize, d2.sqrt()))
    }

    fn visit_ring(&self, c: [i64; 3], k: i64, mut f: impl FnMut(usize)) {
        let (Some((x0, x1)), Some((y0, y1)), Some((z0, z1))) = (
            self.clamped_range(c[0], k, 0),
            self.clamped_range(c[1], k, 1),
            self.clamped_range(c[2], k, 2),
        ) else {
            return;
        };
        for z in z0..=z1 {
            let z_face = (z as i64 - c[2]).abs() == k;
            for y in y0..=y1 {
                let y_face = (y as i64 - c[1]).abs() == k;
                if z_face || y_face {
                    let start = self.cell_points(x0, y, z).start;
                    let end = self.cell_points(x1, y, z).end;
                    (start..end).for_each(&mut f);
                } else {
                    // Interior rows (k > 0 here): only the two x faces belong to the ring.
                    for x in [c[0] - k, c[0] + k] {
                        if x >= 0 && (x as usize) < self.dims[0] {
                            self.cell_points(x as usize, y, z).for_each(&mut f);
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn dist2(p: &[f64; 3], q: &Vec3) -> f64 {
    let dx = p[0] - q.x;
    let dy = p[1] - q.y;
    let dz = p[2] - q.z;
    dx * dx + dy * dy + dz * dz
}

pub(crate) fn bounds(points: &[Vec3]) -> (Vec3, Vec3) {
    if points.is_empty() {
        return (Vec3::zeros(), Vec3::zeros());
    }
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64, scale: f64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * scale)
            .collect()
    }

    fn brute_nearest(points: &[Vec3], q: &Vec3) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = (p - q).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        (best.0, best.1.sqrt())
    }

    #[test]
    fn empty_grid_queries() {
        let grid = UniformGrid::new(&[], 0.1);
        assert_eq!(grid.count_within(&Vec3::zeros(), 1.0), 0);
        assert!(grid.nearest(&Vec3::zeros()).is_none());
    }

    #[test]
    fn coincident_query_counts_itself() {
        let pts = random_points(50, 1, 1.0);
        let grid = UniformGrid::new(&pts, 1e-6);
        assert!(grid.count_within(&pts[7], 1e-9) >= 1);
    }

    #[test]
    fn far_query_finds_nothing_within_radius() {
        let pts = random_points(200, 2, 1.0);
        let grid = UniformGrid::new(&pts, 0.1);
        assert_eq!(grid.count_within(&Vec3::new(10.0, 10.0, 10.0), 0.1), 0);
        let (i, d) = grid.nearest(&Vec3::new(10.0, -3.0, 4.0)).unwrap();
        let (bi, bd) = brute_nearest(&pts, &Vec3::new(10.0, -3.0, 4.0));
        assert_eq!((i, d), (bi, bd));
    }

    #[test]
    fn tiny_cells_are_coarsened() {
        let pts = random_points(100, 3, 100.0);
        let grid = UniformGrid::new(&pts, 1e-6);
        assert!(grid.cell_size() > 1e-6);
        let q = Vec3::new(50.0, 50.0, 50.0);
        let brute = pts.iter().filter(|p| (*p - q).norm_squared() <= 400.0).count();
        assert_eq!(grid.count_within(&q, 20.0), brute);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ball_counts_match_scan(seed in 0u64..1000, radius in 0.01f64..0.6, cell in 0.01f64..0.7) {
            let pts = random_points(300, seed, 1.0);
            let queries = random_points(40, seed + 7, 1.4);
            let grid = UniformGrid::new(&pts, cell);
            for q in &queries {
                let q = q - Vec3::repeat(0.2);
                let brute = pts.iter().filter(|p| {
                    let d = *p - q;
                    d.x * d.x + d.y * d.y + d.z * d.z <= radius * radius
                }).count();
                prop_assert_eq!(grid.count_within(&q, radius), brute);
            }
        }

        #[test]
        fn nearest_matches_scan(seed in 0u64..1000, n in 1usize..400) {
            let pts = random_points(n, seed, 2.0);
            let grid = UniformGrid::for_nearest(&pts);
            for q in random_points(30, seed ^ 0xabc, 3.0) {
                let q = q - Vec3::repeat(0.5);
                let (i, d) = grid.nearest(&q).unwrap();
                let (bi, bd) = brute_nearest(&pts, &q);
                prop_assert_eq!(d, bd);
                prop_assert_eq!(i, bi);
            }
        }
    }
}
