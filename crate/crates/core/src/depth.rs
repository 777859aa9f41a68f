//! Depth maps and scale-shift alignment of monocular depth to reference depth.

use crate::error::{Error, Result};

/// Minimum jointly valid pixels for [`fit_scale_shift`].
pub const MIN_ALIGNMENT_PIXELS: usize = 32;

/// Row-major per-pixel camera-z depths with a validity flag per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    /// Builds a map where every finite positive value is valid.
    pub fn from_values(width: u32, height: u32, values: Vec<f32>) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(Error::domain(format!(
                "depth map {width}x{height} needs {} values, got {}",
                width as usize * height as usize,
                values.len()
            )));
        }
        let valid = values.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        Ok(DepthMap {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn invalid(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        DepthMap {
            width,
            height,
            values: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, u: u32, v: u32) -> usize {
        v as usize * self.width as usize + u as usize
    }

    /// Depth at `(u, v)` when valid.
    #[inline]
    pub fn get(&self, u: u32, v: u32) -> Option<f64> {
        let i = self.index(u, v);
        self.valid[i].then(|| self.values[i] as f64)
    }

    pub fn set(&mut self, u: u32, v: u32, depth: Option<f64>) {
        let i = self.index(u, v);
        match depth {
            Some(d) if d.is_finite() && d > 0.0 => {
                self.values[i] = d as f32;
                self.valid[i] = true;
            }
            _ => {
                self.values[i] = 0.0;
                self.valid[i] = false;
            }
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleShift {
    pub scale: f64,
    pub shift: f64,
}

impl ScaleShift {
    pub const IDENTITY: ScaleShift = ScaleShift {
        scale: 1.0,
        shift: 0.0,
    };

    #[inline]
    pub fn apply(&self, depth: f64) -> f64 {
        self.scale * depth + self.shift
    }
}

/// Closed-form least-squares `(s, t)` minimizing `sum (s*mono + t - reference)^2`
/// over pixels valid in both maps and in `mask` (when given).
///
/// `trim_fraction` in `[0, 1)` drops that fraction of largest residuals after a
/// first fit and refits once; 0 gives the plain L2 fit.
pub fn fit_scale_shift(
    mono: &DepthMap,
    reference: &DepthMap,
    mask: Option<&[bool]>,
    trim_fraction: f64,
) -> Result<ScaleShift> {
    if mono.width != reference.width || mono.height != reference.height {
        return Err(Error::domain("mono and reference depth maps differ in size"));
    }
    if let Some(m) = mask {
        if m.len() != mono.len() {
            return Err(Error::domain("alignment mask size mismatch"));
        }
    }
    if !(0.0..1.0).contains(&trim_fraction) {
        return Err(Error::domain(format!("trim fraction {trim_fraction} outside [0, 1)")));
    }
    let pairs: Vec<(f64, f64)> = (0..mono.len())
        .filter(|&i| mono.valid[i] && reference.valid[i] && mask.is_none_or(|m| m[i]))
        .map(|i| (mono.values[i] as f64, reference.values[i] as f64))
        .collect();
    let first = solve_pairs(&pairs)?;
    if trim_fraction == 0.0 {
        return Ok(first);
    }
    let keep = ((1.0 - trim_fraction) * pairs.len() as f64).floor() as usize;
    let mut by_residual: Vec<(f64, f64)> = pairs.clone();
    by_residual.sort_by(|a, b| {
        let ra = (first.apply(a.0) - a.1).abs();
        let rb = (first.apply(b.0) - b.1).abs();
        ra.total_cmp(&rb)
    });
    by_residual.truncate(keep);
    solve_pairs(&by_residual)
}

fn solve_pairs(pairs: &[(f64, f64)]) -> Result<ScaleShift> {
    if pairs.len() < MIN_ALIGNMENT_PIXELS {
        return Err(Error::InsufficientData {
            needed: MIN_ALIGNMENT_PIXELS,
            got: pairs.len(),
        });
    }
    // Center first so the normal equations stay well conditioned.
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in pairs {
        let dx = x - mean_x;
        sxx += dx * dx;
        sxy += dx * (y - mean_y);
    }
    if sxx <= 1e-12 * n * mean_x.abs().max(1.0).powi(2) {
        return Err(Error::Singular(
            "monocular depth is constant over the valid pixels".into(),
        ));
    }
    let scale = sxy / sxx;
    Ok(ScaleShift {
        scale,
        shift: mean_y - scale * mean_x,
    })
}

/// Per-pixel `s*d + t`; results that are not positive become invalid.
pub fn apply_scale_shift(mono: &DepthMap, params: ScaleShift) -> DepthMap {
    let mut out = DepthMap::invalid(mono.width, mono.height);
    for i in 0..mono.len() {
        if mono.valid[i] {
            let d = params.apply(mono.values[i] as f64);
            if d.is_finite() && d > 0.0 {
                out.values[i] = d as f32;
                out.valid[i] = true;
            }
        }
    }
    out
}

/// Sum of squared residuals of `params` over jointly valid pixels.
pub fn alignment_residual(mono: &DepthMap, reference: &DepthMap, params: ScaleShift) -> f64 {
    (0..mono.len())
        .filter(|&i| mono.valid[i] && reference.valid[i])
        .map(|i| {
            let r = params.apply(mono.values[i] as f64) - reference.values[i] as f64;
            r * r
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: u32, h: u32) -> DepthMap {
        let values = (0..w * h).map(|i| 1.0 + (i % 37) as f32 * 0.05 + (i / 37) as f32 * 0.01).collect();
        DepthMap::from_values(w, h, values).unwrap()
    }

    fn mapped(src: &DepthMap, f: impl Fn(f64) -> f64) -> DepthMap {
        let values = src.values.iter().map(|d| f(*d as f64) as f32).collect();
        DepthMap::from_values(src.width, src.height, values).unwrap()
    }

    #[test]
    fn exact_affine_relation() {
        let mono = ramp(16, 16);
        // Reference built in f64 and stored as f32; solve in f64 over the stored values.
        let reference = mapped(&mono, |d| 2.0 * d + 0.3);
        let fit = fit_scale_shift(&mono, &reference, None, 0.0).unwrap();
        assert!((fit.scale - 2.0).abs() < 1e-6, "{fit:?}");
        assert!((fit.shift - 0.3).abs() < 1e-6, "{fit:?}");
    }

    #[test]
    fn identity_relation() {
        let mono = ramp(8, 8);
        let fit = fit_scale_shift(&mono, &mono, None, 0.0).unwrap();
        assert!((fit.scale - 1.0).abs() < 1e-9 && fit.shift.abs() < 1e-9);
    }

    #[test]
    fn insufficient_and_singular() {
        let mono = ramp(4, 4);
        assert!(matches!(
            fit_scale_shift(&mono, &mono, None, 0.0),
            Err(Error::InsufficientData { needed: 32, got: 16 })
        ));
        let flat = DepthMap::from_values(8, 8, vec![1.5; 64]).unwrap();
        let reference = ramp(8, 8);
        assert!(matches!(
            fit_scale_shift(&flat, &reference, None, 0.0),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn mask_restricts_pixels() {
        let mono = ramp(8, 8);
        let mut reference = mapped(&mono, |d| 3.0 * d - 1.0);
        // Garbage outside the mask must not influence the fit.
        let mask: Vec<bool> = (0..64).map(|i| i < 40).collect();
        for i in 40..64 {
            reference.values[i] = 100.0;
        }
        let fit = fit_scale_shift(&mono, &reference, Some(&mask), 0.0).unwrap();
        assert!((fit.scale - 3.0).abs() < 1e-5 && (fit.shift + 1.0).abs() < 1e-5);
    }

    #[test]
    fn trimmed_fit_rejects_outliers() {
        let mono = ramp(16, 16);
        let mut reference = mapped(&mono, |d| 1.5 * d + 0.2);
        for i in (0..256).step_by(17) {
            reference.values[i] += 5.0;
        }
        let plain = fit_scale_shift(&mono, &reference, None, 0.0).unwrap();
        let trimmed = fit_scale_shift(&mono, &reference, None, 0.1).unwrap();
        assert!((trimmed.scale - 1.5).abs() < 1e-4, "{trimmed:?}");
        assert!((plain.scale - 1.5).abs() > (trimmed.scale - 1.5).abs());
    }

    #[test]
    fn apply_examples() {
        let mono = DepthMap::from_values(4, 4, vec![1.0; 16]).unwrap();
        assert_eq!(apply_scale_shift(&mono, ScaleShift::IDENTITY), mono);
        let out = apply_scale_shift(&mono, ScaleShift { scale: 2.0, shift: 0.3 });
        assert!(out.values.iter().all(|d| (*d - 2.3).abs() < 1e-6));
        let neg = apply_scale_shift(&mono, ScaleShift { scale: 1.0, shift: -2.0 });
        assert_eq!(neg.valid_count(), 0);
    }

    #[test]
    fn invalid_pixels_stay_invalid() {
        let mut mono = ramp(8, 8);
        mono.set(2, 3, None);
        let out = apply_scale_shift(&mono, ScaleShift { scale: 1.1, shift: 0.0 });
        assert!(out.get(2, 3).is_none());
        assert_eq!(out.valid_count(), 63);
    }
}
