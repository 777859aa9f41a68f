//! Per-view raster types: instance label maps and RGB images.

use crate::error::{Error, Result};

/// Label reserved for pixels that belong to no instance.
pub const UNSEGMENTED: u16 = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != width as usize * height as usize {
            return Err(Error::domain(format!(
                "label map {width}x{height} needs {} labels, got {}",
                width as usize * height as usize,
                labels.len()
            )));
        }
        Ok(LabelMap {
            width,
            height,
            labels,
        })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        LabelMap {
            width,
            height,
            labels: vec![UNSEGMENTED; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> u16 {
        self.labels[v as usize * self.width as usize + u as usize]
    }

    /// Distinct non-zero labels in ascending order.
    pub fn instance_labels(&self) -> Vec<u16> {
        let mut seen = vec![false; u16::MAX as usize + 1];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (1..=u16::MAX).filter(|&l| seen[l as usize]).collect()
    }

    /// Pixels `(u, v)` carrying `label`, in row-major order.
    pub fn pixels_with(&self, label: u16) -> Vec<(u32, u32)> {
        let w = self.width as usize;
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == label)
            .map(|(i, _)| ((i % w) as u32, (i / w) as u32))
            .collect()
    }
}

/// Row-major linear RGB in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[f32; 3]>,
}

impl RgbImage {
    pub fn black(width: u32, height: u32) -> Self {
        RgbImage {
            width,
            height,
            pixels: vec![[0.0; 3]; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> [f64; 3] {
        let p = self.pixels[v as usize * self.width as usize + u as usize];
        [p[0] as f64, p[1] as f64, p[2] as f64]
    }

    /// Bilinear lookup at continuous image coordinates (pixel centers at `+0.5`),
    /// clamped to the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as u32;
        let y0 = fy.floor() as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let mut out = [0.0; 3];
        let corners = [
            (x0, y0, (1.0 - tx) * (1.0 - ty)),
            (x1, y0, tx * (1.0 - ty)),
            (x0, y1, (1.0 - tx) * ty),
            (x1, y1, tx * ty),
        ];
        for (u, v, w) in corners {
            let c = self.get(u, v);
            for k in 0..3 {
                out[k] += w * c[k];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_pixels() {
        let m = LabelMap::new(3, 2, vec![0, 2, 2, 5, 0, 2]).unwrap();
        assert_eq!(m.instance_labels(), vec![2, 5]);
        assert_eq!(m.pixels_with(2), vec![(1, 0), (2, 0), (2, 1)]);
        assert!(LabelMap::new(3, 2, vec![0; 5]).is_err());
    }

    #[test]
    fn bilinear_hits_pixel_centers_exactly() {
        let mut img = RgbImage::black(2, 2);
        img.pixels = vec![[0.0; 3], [1.0; 3], [0.0; 3], [1.0; 3]];
        assert_eq!(img.sample_bilinear(0.5, 0.5), [0.0; 3]);
        assert_eq!(img.sample_bilinear(1.5, 1.5), [1.0; 3]);
        assert_eq!(img.sample_bilinear(1.0, 1.0), [0.5; 3]);
        assert_eq!(img.sample_bilinear(-4.0, 9.0), [0.0; 3]);
    }
}
