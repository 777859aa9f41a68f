//! Per-pixel depth uncertainty from multi-view point density.
//!
//! For each foreground instance cluster, the aligned depths of every member
//! view are back-projected into one fused world cloud and downsampled to a
//! fixed size. Each member view then queries its own back-projected pixels
//! against that cloud with a ball whose radius comes from the cloud's oriented
//! bounding box. Counts are normalized by their maximum over all member views
//! and turned into `U = 1 - d`. Depths that agree across views pile up on the
//! true surface and score high density; inconsistent depths scatter along
//! their own viewing rays and score low.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::Vec3;
use crate::cluster::{InstanceCluster, InstanceKey};
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::obb::{oriented_bounding_box_with, ObbConfig, ObbResult};
use crate::spatial::UniformGrid;
use crate::view::View;

pub const DEFAULT_DOWNSAMPLE_TARGET: usize = 30_000;
/// Constant term added to the box-derived ball radius.
pub const RADIUS_OFFSET: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RadiusMode {
    /// `Vol(OBB) + 0.01`, volume used directly as a length.
    #[default]
    Paper,
    /// `cbrt(Vol(OBB)) + 0.01`.
    Cbrt,
}

impl FromStr for RadiusMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(RadiusMode::Paper),
            "cbrt" => Ok(RadiusMode::Cbrt),
            other => Err(Error::Config(format!("radius mode `{other}` is not one of paper, cbrt"))),
        }
    }
}

impl fmt::Display for RadiusMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RadiusMode::Paper => "paper",
            RadiusMode::Cbrt => "cbrt",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedInstanceCloud {
    pub cluster_id: u32,
    pub points: Vec<Vec3>,
    pub source_view: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct DownsampledCloud {
    pub points: Vec<Vec3>,
}

impl DownsampledCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Grid index with cells one ball radius wide.
    pub fn ball_index(&self, radius: f64) -> UniformGrid {
        UniformGrid::new(&self.points, radius.max(1e-9))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
    /// Pixels whose value was estimated from point density.
    pub valid: Vec<bool>,
}

impl UncertaintyMap {
    pub fn zeros(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        UncertaintyMap {
            width,
            height,
            values: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    /// Map with the given values, all marked valid.
    pub fn from_values(width: u32, height: u32, values: Vec<f32>) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(Error::domain("uncertainty map size mismatch"));
        }
        let valid = vec![true; values.len()];
        Ok(UncertaintyMap {
            width,
            height,
            values,
            valid,
        })
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.values[v as usize * self.width as usize + u as usize] as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyConfig {
    pub downsample_target: usize,
    pub radius_mode: RadiusMode,
    pub seed: u64,
    pub obb: ObbConfig,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        UncertaintyConfig {
            downsample_target: DEFAULT_DOWNSAMPLE_TARGET,
            radius_mode: RadiusMode::Paper,
            seed: 0,
            obb: ObbConfig::default(),
        }
    }
}

fn view_by_id(views: &[View], id: u32) -> Option<usize> {
    views.iter().position(|v| v.id() == id)
}

/// Union of the back-projected masked, valid-depth pixels of every member view.
pub fn fuse_instance(
    cluster: &InstanceCluster,
    views: &[View],
    aligned_depths: &[DepthMap],
) -> Result<FusedInstanceCloud> {
    let mut points = Vec::new();
    let mut source_view = Vec::new();
    for member in &cluster.members {
        let Some(vi) = view_by_id(views, member.view_id) else {
            return Err(Error::domain(format!("cluster references unknown view {}", member.view_id)));
        };
        for (_, p) in views[vi].instance_points(&aligned_depths[vi], member.label) {
            points.push(p);
            source_view.push(member.view_id);
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud(format!(
            "cluster {} has no valid depth pixels",
            cluster.cluster_id
        )));
    }
    Ok(FusedInstanceCloud {
        cluster_id: cluster.cluster_id,
        points,
        source_view,
    })
}

/// Uniform sample without replacement down to `target` points, in original order.
pub fn downsample(cloud: &FusedInstanceCloud, target: usize, seed: u64) -> DownsampledCloud {
    if cloud.points.len() <= target {
        return DownsampledCloud {
            points: cloud.points.clone(),
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (cloud.cluster_id as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    let mut picked = index::sample(&mut rng, cloud.points.len(), target).into_vec();
    picked.sort_unstable();
    DownsampledCloud {
        points: picked.into_iter().map(|i| cloud.points[i]).collect(),
    }
}

pub fn radius_from_volume(volume: f64, mode: RadiusMode) -> f64 {
    if !(volume > 0.0) || !volume.is_finite() {
        return RADIUS_OFFSET;
    }
    match mode {
        RadiusMode::Paper => volume + RADIUS_OFFSET,
        RadiusMode::Cbrt => volume.cbrt() + RADIUS_OFFSET,
    }
}

/// Ball-query radius from the oriented bounding box of the downsampled cloud.
pub fn ball_radius(cloud: &DownsampledCloud, mode: RadiusMode, obb: &ObbConfig) -> Result<(f64, ObbResult)> {
    let bbox = oriented_bounding_box_with(&cloud.points, obb)?;
    Ok((radius_from_volume(bbox.volume, mode), bbox))
}

/// Count of cloud points within `radius` of each query.
pub fn point_density(queries: &[Vec3], cloud: &DownsampledCloud, radius: f64) -> Result<Vec<u32>> {
    if !(radius > 0.0) {
        return Err(Error::domain(format!("ball radius must be positive, got {radius}")));
    }
    let index = cloud.ball_index(radius);
    Ok(queries
        .par_iter()
        .map(|q| index.count_within(q, radius) as u32)
        .collect())
}

/// Divides every count by the maximum over all member views. All-zero input
/// yields all-zero densities (maximal uncertainty).
pub fn normalize_densities(per_view: &BTreeMap<InstanceKey, Vec<u32>>) -> BTreeMap<InstanceKey, Vec<f64>> {
    let max = per_view.values().flatten().copied().max().unwrap_or(0);
    if max == 0 {
        warn!("instance has no neighbors within the ball radius; uncertainty forced to 1");
    }
    per_view
        .iter()
        .map(|(k, counts)| {
            let norm = counts
                .iter()
                .map(|&c| if max == 0 { 0.0 } else { c as f64 / max as f64 })
                .collect();
            (*k, norm)
        })
        .collect()
}

/// Per-view pixel densities of one instance: the pixels and their normalized density.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceDensity {
    pub key: InstanceKey,
    pub pixels: Vec<(u32, u32)>,
    pub density: Vec<f64>,
}

/// Writes `1 - d` at every instance pixel with a density. All other pixels,
/// including those of background clusters and unsegmented ones, stay 0.
pub fn assemble_uncertainty(views: &[View], densities: &[InstanceDensity]) -> Vec<UncertaintyMap> {
    let mut maps: Vec<UncertaintyMap> = views
        .iter()
        .map(|v| UncertaintyMap::zeros(v.camera.width(), v.camera.height()))
        .collect();
    for inst in densities {
        let Some(vi) = view_by_id(views, inst.key.view_id) else {
            continue;
        };
        let map = &mut maps[vi];
        for (&(u, v), &d) in inst.pixels.iter().zip(&inst.density) {
            let i = v as usize * map.width as usize + u as usize;
            map.values[i] = (1.0 - d).clamp(0.0, 1.0) as f32;
            map.valid[i] = true;
        }
    }
    maps
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats {
    pub cluster_id: u32,
    pub fused_points: usize,
    pub downsampled_points: usize,
    pub obb_volume: f64,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct UncertaintyOutput {
    pub maps: Vec<UncertaintyMap>,
    pub stats: Vec<ClusterStats>,
}

/// Densities of one foreground cluster, or `None` when it has no valid depth.
pub fn instance_densities(
    cluster: &InstanceCluster,
    views: &[View],
    aligned_depths: &[DepthMap],
    config: &UncertaintyConfig,
) -> Result<Option<(Vec<InstanceDensity>, ClusterStats)>> {
    let fused = match fuse_instance(cluster, views, aligned_depths) {
        Ok(f) => f,
        Err(Error::EmptyCloud(msg)) => {
            warn!("{msg}; skipping");
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    let cloud = downsample(&fused, config.downsample_target, config.seed);
    let (radius, bbox) = ball_radius(&cloud, config.radius_mode, &config.obb)?;
    let index = cloud.ball_index(radius);

    let mut pixels_by_key = BTreeMap::new();
    let mut counts_by_key = BTreeMap::new();
    for member in &cluster.members {
        let vi = view_by_id(views, member.view_id).expect("checked by fuse_instance");
        let pts = views[vi].instance_points(&aligned_depths[vi], member.label);
        let counts: Vec<u32> = pts
            .par_iter()
            .map(|(_, p)| index.count_within(p, radius) as u32)
            .collect();
        pixels_by_key.insert(*member, pts.into_iter().map(|(px, _)| px).collect::<Vec<_>>());
        counts_by_key.insert(*member, counts);
    }
    let normalized = normalize_densities(&counts_by_key);
    let densities = normalized
        .into_iter()
        .map(|(key, density)| InstanceDensity {
            key,
            pixels: pixels_by_key.remove(&key).unwrap_or_default(),
            density,
        })
        .collect();
    let stats = ClusterStats {
        cluster_id: cluster.cluster_id,
        fused_points: fused.points.len(),
        downsampled_points: cloud.len(),
        obb_volume: bbox.volume,
        radius,
    };
    Ok(Some((densities, stats)))
}

/// Full uncertainty estimate for every view. Background clusters are skipped,
/// leaving their pixels at 0.
pub fn estimate_uncertainty(
    views: &[View],
    aligned_depths: &[DepthMap],
    clusters: &[InstanceCluster],
    config: &UncertaintyConfig,
) -> Result<UncertaintyOutput> {
    if views.len() != aligned_depths.len() {
        return Err(Error::domain("one aligned depth map per view is required"));
    }
    let per_cluster: Vec<Option<(Vec<InstanceDensity>, ClusterStats)>> = clusters
        .iter()
        .filter(|c| !c.is_background)
        .map(|c| instance_densities(c, views, aligned_depths, config))
        .collect::<Result<_>>()?;
    let mut densities = Vec::new();
    let mut stats = Vec::new();
    for (d, s) in per_cluster.into_iter().flatten() {
        densities.extend(d);
        stats.push(s);
    }
    Ok(UncertaintyOutput {
        maps: assemble_uncertainty(views, &densities),
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_cloud() -> DownsampledCloud {
        let mut points = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    points.push(Vec3::new(x, y, z));
                }
            }
        }
        DownsampledCloud { points }
    }

    #[test]
    fn radius_modes() {
        let obb = ObbConfig::default();
        let (r, _) = ball_radius(&cube_cloud(), RadiusMode::Paper, &obb).unwrap();
        assert!((r - 1.01).abs() < 1e-6, "{r}");
        let (r, _) = ball_radius(&cube_cloud(), RadiusMode::Cbrt, &obb).unwrap();
        assert!((r - 1.01).abs() < 1e-6, "{r}");
        let planar = DownsampledCloud {
            points: (0..20).map(|i| Vec3::new(i as f64, (i % 3) as f64, 2.0)).collect(),
        };
        let (r, _) = ball_radius(&planar, RadiusMode::Paper, &obb).unwrap();
        assert!((r - 0.01).abs() < 1e-9, "{r}");
        assert_eq!(radius_from_volume(0.0, RadiusMode::Cbrt), 0.01);
    }

    #[test]
    fn radius_mode_parses() {
        assert_eq!("paper".parse::<RadiusMode>().unwrap(), RadiusMode::Paper);
        assert_eq!("cbrt".parse::<RadiusMode>().unwrap(), RadiusMode::Cbrt);
        assert!("cube".parse::<RadiusMode>().is_err());
        assert_eq!(RadiusMode::Cbrt.to_string(), "cbrt");
    }

    #[test]
    fn density_examples() {
        let cloud = cube_cloud();
        assert_eq!(point_density(&[Vec3::repeat(50.0)], &cloud, 0.5).unwrap(), vec![0]);
        assert!(point_density(&[Vec3::zeros()], &cloud, 1e-9).unwrap()[0] >= 1);
        assert_eq!(point_density(&[Vec3::zeros()], &cloud, 1.0).unwrap(), vec![4]);
        assert!(point_density(&[Vec3::zeros()], &cloud, 0.0).is_err());
    }

    fn key(v: u32) -> InstanceKey {
        InstanceKey { view_id: v, label: 1 }
    }

    #[test]
    fn normalization_examples() {
        let constant = BTreeMap::from([(key(0), vec![3, 3]), (key(1), vec![3])]);
        let n = normalize_densities(&constant);
        assert!(n.values().flatten().all(|d| *d == 1.0));

        let spread = BTreeMap::from([(key(0), vec![2, 4]), (key(1), vec![8])]);
        let n = normalize_densities(&spread);
        assert_eq!(n[&key(0)], vec![0.25, 0.5]);
        assert_eq!(n[&key(1)], vec![1.0]);

        let zeros = BTreeMap::from([(key(0), vec![0, 0])]);
        assert_eq!(normalize_densities(&zeros)[&key(0)], vec![0.0, 0.0]);
    }

    #[test]
    fn downsample_examples() {
        let cloud = FusedInstanceCloud {
            cluster_id: 4,
            points: (0..100).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect(),
            source_view: vec![0; 100],
        };
        assert_eq!(downsample(&cloud, 30_000, 1).points, cloud.points);
        let big = FusedInstanceCloud {
            cluster_id: 4,
            points: (0..60_000).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect(),
            source_view: vec![0; 60_000],
        };
        let a = downsample(&big, 30_000, 7);
        assert_eq!(a.len(), 30_000);
        assert!(a.points.windows(2).all(|w| w[0].x < w[1].x));
        assert_eq!(a.points, downsample(&big, 30_000, 7).points);
    }
}
