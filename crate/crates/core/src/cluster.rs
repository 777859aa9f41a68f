//! Scene-consistent instance identities from per-view masks.
//!
//! Every (view, mask label) pair becomes a node carrying the world points of
//! its aligned depth. Nodes from different views are joined when the Chamfer
//! distance between their clouds is under a threshold, and the connected
//! components of that graph are the instance clusters.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::Vec3;
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::spatial::UniformGrid;
use crate::view::View;

pub const DEFAULT_CHAMFER_THRESHOLD: f64 = 0.05;
pub const DEFAULT_CHAMFER_POINTS: usize = 2048;

/// Identity of a per-view instance. Orders by view, then label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstanceKey {
    pub view_id: u32,
    pub label: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewInstance {
    pub key: InstanceKey,
    pub pixels: Vec<(u32, u32)>,
    /// World points of the valid-depth pixels among `pixels`.
    pub cloud: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceCluster {
    pub cluster_id: u32,
    /// Sorted ascending.
    pub members: Vec<InstanceKey>,
    pub is_background: bool,
}

impl InstanceCluster {
    pub fn contains(&self, key: &InstanceKey) -> bool {
        self.members.binary_search(key).is_ok()
    }

    pub fn view_ids(&self) -> BTreeSet<u32> {
        self.members.iter().map(|m| m.view_id).collect()
    }
}

/// Per-view lookup from mask label to cluster index.
#[derive(Debug, Clone, Default)]
pub struct ClusterLookup {
    map: BTreeMap<InstanceKey, usize>,
}

impl ClusterLookup {
    pub fn new(clusters: &[InstanceCluster]) -> Self {
        let map = clusters
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.members.iter().map(move |m| (*m, i)))
            .collect();
        ClusterLookup { map }
    }

    pub fn get(&self, view_id: u32, label: u16) -> Option<usize> {
        self.map.get(&InstanceKey { view_id, label }).copied()
    }
}

/// All labeled instances of all views, back-projected with `depths[i]` for `views[i]`.
pub fn extract_view_instances(views: &[View], depths: &[DepthMap]) -> Vec<ViewInstance> {
    views
        .iter()
        .zip(depths)
        .flat_map(|(view, depth)| {
            view.mask.instance_labels().into_iter().map(move |label| {
                let pixels = view.mask.pixels_with(label);
                let cloud = pixels
                    .iter()
                    .filter_map(|&(u, v)| view.camera.back_project(u, v, depth.get(u, v)?).ok())
                    .collect();
                ViewInstance {
                    key: InstanceKey {
                        view_id: view.id(),
                        label,
                    },
                    pixels,
                    cloud,
                }
            })
        })
        .collect()
}

/// Symmetric Chamfer distance: the average of the two directed mean
/// nearest-neighbor distances.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("Chamfer distance of an empty point set"));
    }
    let grid_a = UniformGrid::for_nearest(a);
    let grid_b = UniformGrid::for_nearest(b);
    Ok(chamfer_with_grids(a, &grid_a, b, &grid_b))
}

fn chamfer_with_grids(a: &[Vec3], grid_a: &UniformGrid, b: &[Vec3], grid_b: &UniformGrid) -> f64 {
    let directed = |from: &[Vec3], to: &UniformGrid| {
        from.iter()
            .map(|p| to.nearest(p).map_or(0.0, |(_, d)| d))
            .sum::<f64>()
            / from.len() as f64
    };
    0.5 * (directed(a, grid_b) + directed(b, grid_a))
}

/// Uniform subsample of at most `cap` points, seeded by the instance identity
/// so the result does not depend on instance order.
pub fn subsample_cloud(cloud: &[Vec3], cap: usize, key: InstanceKey, seed: u64) -> Vec<Vec3> {
    if cloud.len() <= cap {
        return cloud.to_vec();
    }
    let mix = seed ^ ((key.view_id as u64) << 16 | key.label as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(mix);
    let mut picked = index::sample(&mut rng, cloud.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| cloud[i]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphConfig {
    pub threshold: f64,
    pub max_points: usize,
    pub seed: u64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            threshold: DEFAULT_CHAMFER_THRESHOLD,
            max_points: DEFAULT_CHAMFER_POINTS,
            seed: 0,
        }
    }
}

/// Edges `(i, j)`, `i < j`, between instances of different views whose clouds
/// are closer than the threshold. Instances with empty clouds get no edges.
pub fn build_instance_graph(instances: &[ViewInstance], config: &GraphConfig) -> Vec<(usize, usize)> {
    let clouds: Vec<Vec<Vec3>> = instances
        .par_iter()
        .map(|inst| subsample_cloud(&inst.cloud, config.max_points, inst.key, config.seed))
        .collect();
    let grids: Vec<Option<UniformGrid>> = clouds
        .par_iter()
        .map(|c| (!c.is_empty()).then(|| UniformGrid::for_nearest(c)))
        .collect();
    let pairs: Vec<(usize, usize)> = (0..instances.len())
        .flat_map(|i| ((i + 1)..instances.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| instances[i].key.view_id != instances[j].key.view_id)
        .collect();
    pairs
        .into_par_iter()
        .filter(|&(i, j)| match (&grids[i], &grids[j]) {
            (Some(gi), Some(gj)) => chamfer_with_grids(&clouds[i], gi, &clouds[j], gj) < config.threshold,
            _ => false,
        })
        .collect()
}

/// Connected components of the instance graph. Members are sorted and clusters
/// are numbered by their smallest member key.
pub fn cluster_graph(edges: &[(usize, usize)], instances: &[ViewInstance]) -> Vec<InstanceCluster> {
    let mut parent: Vec<usize> = (0..instances.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: BTreeMap<usize, Vec<InstanceKey>> = BTreeMap::new();
    for i in 0..instances.len() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(instances[i].key);
    }
    let mut clusters: Vec<Vec<InstanceKey>> = groups
        .into_values()
        .map(|mut m| {
            m.sort();
            m.dedup();
            m
        })
        .collect();
    clusters.sort_by_key(|m| m[0]);
    clusters
        .into_iter()
        .enumerate()
        .map(|(i, members)| InstanceCluster {
            cluster_id: i as u32,
            members,
            is_background: false,
        })
        .collect()
}

/// Flags a cluster as background when any member's label is listed for its view.
pub fn mark_background(
    clusters: &mut [InstanceCluster],
    background_labels: &BTreeMap<u32, BTreeSet<u16>>,
) {
    for cluster in clusters {
        cluster.is_background = cluster.members.iter().any(|m| {
            background_labels
                .get(&m.view_id)
                .is_some_and(|labels| labels.contains(&m.label))
        });
    }
}

/// Instance graph of a set of views together with its clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceGraph {
    /// Every extracted instance, in extraction order; edges index into it.
    pub instances: Vec<InstanceKey>,
    pub edges: Vec<(usize, usize)>,
    pub clusters: Vec<InstanceCluster>,
}

/// Extraction, graph construction, connected components, and background
/// flagging in one call.
pub fn cluster_views(
    views: &[View],
    depths: &[DepthMap],
    config: &GraphConfig,
    background_labels: &BTreeMap<u32, BTreeSet<u16>>,
) -> InstanceGraph {
    let instances = extract_view_instances(views, depths);
    let edges = build_instance_graph(&instances, config);
    let mut clusters = cluster_graph(&edges, &instances);
    mark_background(&mut clusters, background_labels);
    InstanceGraph {
        instances: instances.iter().map(|i| i.key).collect(),
        edges,
        clusters,
    }
}

/// Same background label set for every view.
pub fn uniform_background(view_ids: impl IntoIterator<Item = u32>, labels: &[u16]) -> BTreeMap<u32, BTreeSet<u16>> {
    let set: BTreeSet<u16> = labels.iter().copied().collect();
    view_ids.into_iter().map(|v| (v, set.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(view_id: u32, label: u16, cloud: Vec<Vec3>) -> ViewInstance {
        ViewInstance {
            key: InstanceKey { view_id, label },
            pixels: vec![(0, 0); cloud.len().max(1)],
            cloud,
        }
    }

    fn blob(center: Vec3, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|i| {
                let t = i as f64 * 0.618;
                center + Vec3::new(t.sin(), (1.3 * t).cos(), (0.7 * t).sin()) * 0.01
            })
            .collect()
    }

    #[test]
    fn chamfer_examples() {
        let a = blob(Vec3::zeros(), 20);
        assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
        let d = chamfer_distance(&[Vec3::zeros()], &[Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        assert_eq!(d, 1.0);
        assert!(chamfer_distance(&[], &a).is_err());
    }

    #[test]
    fn no_edges_gives_singletons_complete_gives_one() {
        let instances: Vec<ViewInstance> = (0..4).map(|v| inst(v, 1, blob(Vec3::zeros(), 5))).collect();
        let singles = cluster_graph(&[], &instances);
        assert_eq!(singles.len(), 4);
        assert!(singles.iter().all(|c| c.members.len() == 1));
        let complete: Vec<(usize, usize)> = (0..4).flat_map(|i| ((i + 1)..4).map(move |j| (i, j))).collect();
        let one = cluster_graph(&complete, &instances);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].members.len(), 4);
    }

    #[test]
    fn graph_links_only_close_instances_of_different_views() {
        let instances = vec![
            inst(0, 1, blob(Vec3::zeros(), 30)),
            inst(0, 2, blob(Vec3::new(1.0, 0.0, 0.0), 30)),
            inst(1, 7, blob(Vec3::zeros(), 30)),
            inst(1, 3, blob(Vec3::new(1.0, 0.0, 0.0), 30)),
            inst(1, 4, blob(Vec3::zeros(), 30)),
        ];
        let edges = build_instance_graph(&instances, &GraphConfig { threshold: 0.1, ..Default::default() });
        assert_eq!(edges, vec![(0, 2), (0, 4), (1, 3)]);
        let clusters = cluster_graph(&edges, &instances);
        assert_eq!(clusters.len(), 2);
        assert_eq!(clusters[0].members[0], InstanceKey { view_id: 0, label: 1 });
        assert_eq!(clusters[0].members.len(), 3);
        assert_eq!(clusters[1].cluster_id, 1);
    }

    #[test]
    fn empty_clouds_get_no_edges() {
        let instances = vec![inst(0, 1, vec![]), inst(1, 1, blob(Vec3::zeros(), 4))];
        assert!(build_instance_graph(&instances, &GraphConfig::default()).is_empty());
    }

    #[test]
    fn background_marking() {
        let instances = vec![inst(0, 1, vec![]), inst(0, 9, vec![]), inst(1, 9, vec![])];
        let mut clusters = cluster_graph(&[(1, 2)], &instances);
        mark_background(&mut clusters, &BTreeMap::new());
        assert!(clusters.iter().all(|c| !c.is_background));
        let mut bg = BTreeMap::new();
        bg.insert(1u32, BTreeSet::from([9u16]));
        mark_background(&mut clusters, &bg);
        assert_eq!(clusters.iter().map(|c| c.is_background).collect::<Vec<_>>(), vec![false, true]);
    }

    #[test]
    fn subsample_respects_cap_and_is_deterministic() {
        let cloud = blob(Vec3::zeros(), 5000);
        let key = InstanceKey { view_id: 2, label: 3 };
        let a = subsample_cloud(&cloud, 2048, key, 9);
        assert_eq!(a.len(), 2048);
        assert_eq!(a, subsample_cloud(&cloud, 2048, key, 9));
        assert_eq!(subsample_cloud(&cloud[..10], 2048, key, 9).len(), 10);
    }
}
