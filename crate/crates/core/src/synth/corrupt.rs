//! Synthetic "monocular" depth: exact depth plus region-wise, per-view corruption.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::depth::DepthMap;

use super::scene::SceneSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedDepth {
    pub mono: DepthMap,
    /// Signed metric error `corrupted - exact` before any affine distortion;
    /// 0 outside corruption regions and at invalid pixels.
    pub error: Vec<f32>,
    /// Pixels inside at least one corruption region.
    pub corrupted: Vec<bool>,
}

/// Applies every corruption region of `spec` to the matching view's exact depth,
/// then that view's affine distortion. Views are independent; the noise stream
/// of view `i` depends only on `seed` and `i`.
pub fn corrupt_depths(exact: &[DepthMap], spec: &SceneSpec, seed: u64) -> Vec<CorruptedDepth> {
    exact
        .iter()
        .enumerate()
        .map(|(i, gt)| {
            let view = i as u32;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5851_F42D_4C95_7F2D_u64.wrapping_mul(view as u64 + 1)));
            let mut mono = gt.clone();
            let mut error = vec![0.0f32; gt.len()];
            let mut corrupted = vec![false; gt.len()];
            for c in spec.corruptions.iter().filter(|c| c.view == view) {
                let [u0, v0, u1, v1] = c.region;
                for v in v0..v1 {
                    for u in u0..u1 {
                        let idx = gt.index(u, v);
                        corrupted[idx] = true;
                        // Draw even for invalid pixels so the stream does not depend on scene content.
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        let Some(d) = mono.get(u, v) else { continue };
                        let su = std::f64::consts::PI * (u - u0) as f64 / (u1 - u0) as f64;
                        let sv = std::f64::consts::PI * (v - v0) as f64 / (v1 - v0) as f64;
                        let offset = c.bias + c.sigma * noise + c.warp * su.sin() * sv.sin();
                        mono.set(u, v, Some(d + offset));
                    }
                }
            }
            for idx in 0..gt.len() {
                if gt.valid[idx] && mono.valid[idx] {
                    error[idx] = mono.values[idx] - gt.values[idx];
                }
            }
            if let Some(a) = spec.affine.iter().rfind(|a| a.view == view) {
                for idx in 0..mono.len() {
                    if mono.valid[idx] {
                        let d = a.scale * mono.values[idx] as f64 + a.shift;
                        if d > 0.0 {
                            mono.values[idx] = d as f32;
                        } else {
                            mono.values[idx] = 0.0;
                            mono.valid[idx] = false;
                        }
                    }
                }
            }
            CorruptedDepth {
                mono,
                error,
                corrupted,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Vec3;
    use crate::synth::scene::{CameraRing, Corruption};

    fn flat_spec(corruptions: Vec<Corruption>) -> SceneSpec {
        SceneSpec {
            primitives: vec![],
            rig: CameraRing {
                count: 2,
                radius: 2.0,
                elevation: 0.0,
                target: Vec3::zeros(),
                width: 40,
                height: 40,
                fov_deg: 60.0,
                start_deg: 0.0,
                span_deg: 360.0,
            },
            corruptions,
            affine: vec![],
            light: Vec3::z(),
        }
    }

    fn flat_depth() -> Vec<DepthMap> {
        vec![DepthMap::from_values(40, 40, vec![2.0; 1600]).unwrap(); 2]
    }

    #[test]
    fn zero_noise_is_identity() {
        let out = corrupt_depths(&flat_depth(), &flat_spec(vec![]), 3);
        assert_eq!(out[0].mono, flat_depth()[0]);
        assert!(out[1].error.iter().all(|e| *e == 0.0));
    }

    #[test]
    fn bias_shows_up_as_mean_error() {
        let spec = flat_spec(vec![Corruption {
            view: 1,
            region: [5, 5, 35, 35],
            bias: 0.2,
            sigma: 0.05,
            warp: 0.0,
        }]);
        let mut means = Vec::new();
        for seed in 0..20 {
            let out = corrupt_depths(&flat_depth(), &spec, seed);
            let region: Vec<f64> = (0..1600)
                .filter(|&i| out[1].corrupted[i])
                .map(|i| out[1].error[i] as f64)
                .collect();
            assert_eq!(region.len(), 900);
            means.push(region.iter().sum::<f64>() / region.len() as f64);
            assert!(out[0].error.iter().all(|e| *e == 0.0));
        }
        let mean = means.iter().sum::<f64>() / means.len() as f64;
        assert!((mean - 0.2).abs() < 0.01, "{mean}");
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let spec = flat_spec(vec![Corruption {
            view: 0,
            region: [0, 0, 20, 20],
            bias: 0.1,
            sigma: 0.03,
            warp: 0.05,
        }]);
        assert_eq!(corrupt_depths(&flat_depth(), &spec, 9), corrupt_depths(&flat_depth(), &spec, 9));
        assert_ne!(corrupt_depths(&flat_depth(), &spec, 9), corrupt_depths(&flat_depth(), &spec, 10));
    }
}
