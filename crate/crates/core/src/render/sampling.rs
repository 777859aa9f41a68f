//! Uncertainty-guided pixel sampling.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{LabelMap, UNSEGMENTED};
use crate::uncertainty::UncertaintyMap;

/// Probability floor added to uncertainty so that confident regions keep
/// being sampled.
pub const SAMPLING_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PixelSample {
    pub view: usize,
    pub u: u32,
    pub v: u32,
}

/// Largest-remainder apportionment of `total` over `areas`; ties in the
/// remainder go to the earlier entry.
pub fn apportion(areas: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = areas.iter().sum();
    if sum == 0 {
        return vec![0; areas.len()];
    }
    let mut quota: Vec<usize> = areas.iter().map(|&a| a * total / sum).collect();
    let mut left = total - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..areas.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse((areas[i] * total) % sum));
    for &i in &order {
        if left == 0 {
            break;
        }
        quota[i] += 1;
        left -= 1;
    }
    quota
}

#[derive(Debug, Clone)]
struct Group {
    view: usize,
    label: u16,
    width: u32,
    pixels: Vec<u32>,
    weights: Option<WeightedIndex<f64>>,
}

impl Group {
    fn draw<R: Rng>(&self, rng: &mut R) -> PixelSample {
        let i = match &self.weights {
            Some(w) => w.sample(rng),
            None => rng.random_range(0..self.pixels.len()),
        };
        let p = self.pixels[i];
        PixelSample {
            view: self.view,
            u: p % self.width,
            v: p / self.width,
        }
    }
}

/// Pixel sampler with a fixed per-batch quota for every group.
#[derive(Debug, Clone)]
pub struct RaySampler {
    groups: Vec<Group>,
    quotas: Vec<usize>,
}

impl RaySampler {
    /// One group per instance mask of every view, quota proportional to mask
    /// area, pixels inside a group drawn with probability `∝ U + 0.05`.
    /// Unsegmented pixels are drawn only with `include_unsegmented`, as one
    /// uniformly weighted group per view.
    pub fn guided(
        maps: &[UncertaintyMap],
        masks: &[LabelMap],
        batch_size: usize,
        include_unsegmented: bool,
    ) -> Result<Self> {
        if maps.len() != masks.len() {
            return Err(Error::domain(format!("{} uncertainty maps for {} masks", maps.len(), masks.len())));
        }
        let mut groups = Vec::new();
        for (view, (map, mask)) in maps.iter().zip(masks).enumerate() {
            if (map.width, map.height) != (mask.width, mask.height) {
                return Err(Error::domain(format!("view {view}: uncertainty and mask dimensions differ")));
            }
            let mut labels = mask.instance_labels();
            if include_unsegmented && mask.labels.contains(&UNSEGMENTED) {
                labels.insert(0, UNSEGMENTED);
            }
            for label in labels {
                let pixels: Vec<u32> = (0..mask.labels.len() as u32)
                    .filter(|&i| mask.labels[i as usize] == label)
                    .collect();
                let weights = if label == UNSEGMENTED {
                    None
                } else {
                    let probs: Vec<f64> = pixels
                        .iter()
                        .map(|&i| map.values[i as usize] as f64 + SAMPLING_FLOOR)
                        .collect();
                    Some(WeightedIndex::new(&probs).map_err(|e| Error::domain(format!("sampling weights: {e}")))?)
                };
                groups.push(Group {
                    view,
                    label,
                    width: mask.width,
                    pixels,
                    weights,
                });
            }
        }
        let areas: Vec<usize> = groups.iter().map(|g| g.pixels.len()).collect();
        Ok(RaySampler {
            quotas: apportion(&areas, batch_size),
            groups,
        })
    }

    /// Pixels drawn uniformly over the given per-view pixel sets, quotas
    /// proportional to set size.
    pub fn uniform(views: &[(u32, Vec<u32>)], batch_size: usize) -> Self {
        let groups: Vec<Group> = views
            .iter()
            .enumerate()
            .filter(|(_, (_, p))| !p.is_empty())
            .map(|(view, (width, pixels))| Group {
                view,
                label: UNSEGMENTED,
                width: *width,
                pixels: pixels.clone(),
                weights: None,
            })
            .collect();
        let areas: Vec<usize> = groups.iter().map(|g| g.pixels.len()).collect();
        RaySampler {
            quotas: apportion(&areas, batch_size),
            groups,
        }
    }

    /// `(view, label, quota)` per group.
    pub fn quotas(&self) -> Vec<(usize, u16, usize)> {
        self.groups.iter().zip(&self.quotas).map(|(g, &q)| (g.view, g.label, q)).collect()
    }

    pub fn batch_size(&self) -> usize {
        self.quotas.iter().sum()
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> Vec<PixelSample> {
        let mut out = Vec::with_capacity(self.batch_size());
        for (g, &q) in self.groups.iter().zip(&self.quotas) {
            for _ in 0..q {
                out.push(g.draw(rng));
            }
        }
        out
    }
}

/// One guided batch: per-instance quotas by mask area, `U + 0.05` weighting
/// inside each instance.
pub fn sample_rays(maps: &[UncertaintyMap], masks: &[LabelMap], batch_size: usize, seed: u64) -> Result<Vec<PixelSample>> {
    let sampler = RaySampler::guided(maps, masks, batch_size, false)?;
    Ok(sampler.draw(&mut ChaCha8Rng::seed_from_u64(seed)))
}
