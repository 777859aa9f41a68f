//! File-based stages over a dataset directory. Each stage reads what earlier
//! stages wrote and fails with [`Error::MissingStage`] when something is absent.
//!
//! ```text
//! scene.txt, cameras.txt, ...    gen (see io::dataset for the dataset layout)
//! corruption/<id>.miim           gen: 1 where the monocular depth was corrupted
//! aligned/<id>.midm              cluster: monocular depth after scale/shift
//! aligned/params.txt             cluster: `view scale shift`
//! clusters.txt                   cluster
//! uncertainty/<id>.mium          uncertainty
//! uncertainty/stats.csv          uncertainty
//! clouds/<cluster>.mipc          uncertainty: downsampled fused clouds
//! train/...                      train: grids, loss log, stage-1 reference, prior
//! eval/metrics.csv               eval
//! export/*.png                   export
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;

use crate::camera::Camera;
use crate::cluster::{cluster_views, GraphConfig, InstanceGraph};
use crate::depth::{apply_scale_shift, fit_scale_shift, DepthMap, ScaleShift};
use crate::error::{Error, Result};
use crate::image::LabelMap;
use crate::io::text::{format_config, format_graph, format_loss_csv, format_metrics_csv, parse_graph};
use crate::io::{
    encode_png16, load_dataset, read_depth, read_grid, read_mask, read_text, read_uncertainty, save_dataset,
    view_file, write_bytes, write_cloud, write_depth, write_grid, write_mask, write_uncertainty, Dataset,
};
use crate::metrics::{adjusted_rand_index, spearman};
use crate::render::train::{reconstruction_chamfer, surface_depth};
use crate::render::{two_stage_train, TrainConfig, TrainOutput, TrainingData};
use crate::synth::{corrupt_depths, render_ground_truth, SceneSpec};
use crate::uncertainty::{downsample, estimate_uncertainty, fuse_instance, UncertaintyConfig, UncertaintyMap};
use crate::view::View;

fn require(path: PathBuf, stage: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingStage { path, stage })
    }
}

fn training_data(data: Dataset) -> TrainingData {
    TrainingData {
        views: data.views,
        background: data.background,
        ground_truth: data.ground_truth,
    }
}

fn graph_config(config: &TrainConfig) -> GraphConfig {
    GraphConfig {
        threshold: config.chamfer_threshold,
        seed: config.seed,
        ..GraphConfig::default()
    }
}

fn uncertainty_config(config: &TrainConfig) -> UncertaintyConfig {
    UncertaintyConfig {
        seed: config.seed,
        ..config.uncertainty
    }
}

/// Renders `spec`, corrupts its depth with `seed`, and writes a dataset with
/// exact depth under `out`.
pub fn gen(spec: &SceneSpec, out: &Path, seed: u64) -> Result<Dataset> {
    let truth = render_ground_truth(spec)?;
    let exact: Vec<DepthMap> = truth.iter().map(|t| t.depth.clone()).collect();
    let corrupted = corrupt_depths(&exact, spec, seed);
    let mut views = Vec::with_capacity(truth.len());
    for (t, c) in truth.iter().zip(&corrupted) {
        views.push(View::new(t.camera, c.mono.clone(), t.mask.clone(), t.rgb.clone())?);
        let flags = c.corrupted.iter().map(|&b| b as u16).collect();
        write_mask(
            &view_file(out, "corruption", t.camera.id, "miim"),
            &LabelMap::new(t.camera.width(), t.camera.height(), flags)?,
        )?;
    }
    let labels = spec.background_labels();
    let data = Dataset {
        background: crate::cluster::uniform_background(views.iter().map(View::id), &labels),
        views,
        ground_truth: Some(exact),
    };
    save_dataset(out, &data)?;
    write_bytes(&out.join("scene.txt"), spec.to_text().as_bytes())?;
    info!("wrote {} views to {}", data.views.len(), out.display());
    Ok(data)
}

/// Alignment target per view: the stage-1 render from `train` when present,
/// otherwise exact depth.
fn alignment_reference(root: &Path, data: &Dataset) -> Result<Vec<DepthMap>> {
    if root.join("train/reference").is_dir() {
        return data
            .views
            .iter()
            .map(|v| read_depth(&require(view_file(root, "train/reference", v.id(), "midm"), "train")?))
            .collect();
    }
    match &data.ground_truth {
        Some(gt) => Ok(gt.clone()),
        None => Err(Error::MissingStage {
            path: root.join("train/reference"),
            stage: "train",
        }),
    }
}

/// Aligns every view's monocular depth, clusters instances across views, and
/// writes `aligned/` and `clusters.txt`.
pub fn cluster(root: &Path, config: &TrainConfig) -> Result<InstanceGraph> {
    config.validate()?;
    let data = load_dataset(root)?;
    let reference = alignment_reference(root, &data)?;
    let mut aligned = Vec::with_capacity(data.views.len());
    let mut params = String::new();
    for (v, r) in data.views.iter().zip(&reference) {
        let p = match fit_scale_shift(&v.depth, r, None, config.alignment_trim) {
            Ok(p) => p,
            Err(e @ (Error::InsufficientData { .. } | Error::Singular(_))) => {
                log::warn!("view {}: alignment failed ({e}); keeping monocular depth", v.id());
                ScaleShift::IDENTITY
            }
            Err(e) => return Err(e),
        };
        let _ = writeln!(params, "{} {} {}", v.id(), p.scale, p.shift);
        let a = apply_scale_shift(&v.depth, p);
        write_depth(&view_file(root, "aligned", v.id(), "midm"), &a)?;
        aligned.push(a);
    }
    write_bytes(&root.join("aligned/params.txt"), params.as_bytes())?;
    let graph = cluster_views(&data.views, &aligned, &graph_config(config), &data.background);
    write_bytes(&root.join("clusters.txt"), format_graph(&graph).as_bytes())?;
    info!(
        "{} instances, {} edges, {} clusters",
        graph.instances.len(),
        graph.edges.len(),
        graph.clusters.len()
    );
    Ok(graph)
}

fn read_graph(root: &Path) -> Result<InstanceGraph> {
    let path = require(root.join("clusters.txt"), "cluster")?;
    parse_graph(&read_text(&path)?, &path)
}

fn read_aligned(root: &Path, views: &[View]) -> Result<Vec<DepthMap>> {
    views
        .iter()
        .map(|v| read_depth(&require(view_file(root, "aligned", v.id(), "midm"), "cluster")?))
        .collect()
}

/// Per-pixel uncertainty for every view; runs [`cluster`] first when
/// `clusters.txt` is absent.
pub fn uncertainty(root: &Path, config: &TrainConfig) -> Result<Vec<UncertaintyMap>> {
    config.validate()?;
    let graph = if root.join("clusters.txt").exists() {
        read_graph(root)?
    } else {
        cluster(root, config)?
    };
    let data = load_dataset(root)?;
    let aligned = read_aligned(root, &data.views)?;
    let ucfg = uncertainty_config(config);
    let out = estimate_uncertainty(&data.views, &aligned, &graph.clusters, &ucfg)?;
    for (v, m) in data.views.iter().zip(&out.maps) {
        write_uncertainty(&view_file(root, "uncertainty", v.id(), "mium"), m)?;
    }
    let mut stats = String::from("cluster,fused_points,downsampled_points,obb_volume,radius\n");
    for s in &out.stats {
        let _ = writeln!(
            stats,
            "{},{},{},{},{}",
            s.cluster_id, s.fused_points, s.downsampled_points, s.obb_volume, s.radius
        );
    }
    write_bytes(&root.join("uncertainty/stats.csv"), stats.as_bytes())?;
    for c in graph.clusters.iter().filter(|c| !c.is_background) {
        if let Ok(fused) = fuse_instance(c, &data.views, &aligned) {
            let cloud = downsample(&fused, ucfg.downsample_target, ucfg.seed);
            write_cloud(&root.join(format!("clouds/{:03}.mipc", c.cluster_id)), &cloud.points)?;
        }
    }
    Ok(out.maps)
}

/// Both training stages. Writes the stage-1 and final grids, the loss log,
/// the stage-1 reference renders, the prior, and the effective config.
pub fn train(root: &Path, config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    let data = training_data(load_dataset(root)?);
    let out = two_stage_train(&data, config)?;
    let dir = root.join("train");
    write_grid(&dir.join("stage1.misg"), &out.stage1.grid)?;
    write_grid(&dir.join("grid.misg"), &out.stage2.grid)?;
    let mut log = out.stage1.log.clone();
    log.extend_from_slice(&out.stage2.log);
    write_bytes(&dir.join("loss.csv"), format_loss_csv(&log).as_bytes())?;
    write_bytes(&dir.join("config.txt"), format_config(config).as_bytes())?;
    for (i, v) in data.views.iter().enumerate() {
        write_depth(&view_file(&dir, "reference", v.id(), "midm"), &out.prior.reference[i])?;
        write_uncertainty(&view_file(&dir, "uncertainty", v.id(), "mium"), &out.prior.uncertainty.maps[i])?;
    }
    let graph = InstanceGraph {
        instances: out.prior.clusters.iter().flat_map(|c| c.members.iter().copied()).collect(),
        edges: Vec::new(),
        clusters: out.prior.clusters.clone(),
    };
    write_bytes(&dir.join("clusters.txt"), format_graph(&graph).as_bytes())?;
    let mut metrics = vec![
        ("stage1_steps".to_string(), out.stage1.log.len() as f64),
        ("stage2_steps".to_string(), out.stage2.log.len() as f64),
        ("beta".to_string(), out.stage2.grid.beta),
    ];
    if let Some(last) = log.last() {
        metrics.push(("final_loss".to_string(), last.total));
    }
    write_bytes(&dir.join("metrics.csv"), format_metrics_csv(&metrics).as_bytes())?;
    Ok(out)
}

/// `(mean U over corrupted pixels, mean U over clean pixels)`.
fn split_means(maps: &[UncertaintyMap], flags: &[LabelMap]) -> (f64, f64) {
    let (mut cs, mut cn, mut ks, mut kn) = (0.0, 0usize, 0.0, 0usize);
    for (m, f) in maps.iter().zip(flags) {
        for i in 0..m.values.len() {
            if !m.valid[i] {
                continue;
            }
            if f.labels[i] != 0 {
                cs += m.values[i] as f64;
                cn += 1;
            } else {
                ks += m.values[i] as f64;
                kn += 1;
            }
        }
    }
    (cs / cn.max(1) as f64, ks / kn.max(1) as f64)
}

fn uncertainty_metrics(
    prefix: &str,
    maps: &[UncertaintyMap],
    aligned: &[DepthMap],
    gt: &[DepthMap],
    flags: Option<&[LabelMap]>,
    rows: &mut Vec<(String, f64)>,
) {
    let (mut u, mut e) = (Vec::new(), Vec::new());
    for ((m, a), g) in maps.iter().zip(aligned).zip(gt) {
        for i in 0..m.values.len() {
            if m.valid[i] && a.valid[i] && g.valid[i] {
                u.push(m.values[i] as f64);
                e.push((a.values[i] as f64 - g.values[i] as f64).abs());
            }
        }
    }
    if u.len() >= 2 {
        rows.push((format!("{prefix}spearman"), spearman(&u, &e)));
        rows.push((format!("{prefix}mean"), u.iter().sum::<f64>() / u.len() as f64));
    }
    if let Some(f) = flags {
        let (c, k) = split_means(maps, f);
        rows.push((format!("{prefix}corrupted_mean"), c));
        rows.push((format!("{prefix}clean_mean"), k));
    }
}

/// Metrics against exact depth for whatever stages have run. Cluster
/// agreement treats the mask label as the true instance identity.
pub fn eval(root: &Path) -> Result<Vec<(String, f64)>> {
    let data = load_dataset(root)?;
    let Some(gt) = &data.ground_truth else {
        return Err(Error::Dataset(vec![format!("{}: eval needs exact depth in gt/", root.display())]));
    };
    let has = |p: &str| root.join(p).exists();
    if !has("clusters.txt") && !has("train/grid.misg") {
        return Err(Error::MissingStage {
            path: root.join("clusters.txt"),
            stage: "cluster",
        });
    }
    let mut rows = Vec::new();
    if has("clusters.txt") {
        let graph = read_graph(root)?;
        let (mut pred, mut truth) = (Vec::new(), Vec::new());
        for c in &graph.clusters {
            for m in &c.members {
                pred.push(c.cluster_id);
                truth.push(m.label);
            }
        }
        rows.push(("cluster_ari".into(), adjusted_rand_index(&pred, &truth)));
        rows.push(("clusters".into(), graph.clusters.iter().filter(|c| !c.is_background).count() as f64));
    }
    let flags: Option<Vec<LabelMap>> = if has("corruption") {
        Some(
            data.views
                .iter()
                .map(|v| read_mask(&view_file(root, "corruption", v.id(), "miim")))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    if has("uncertainty") {
        let aligned = read_aligned(root, &data.views)?;
        let maps: Vec<UncertaintyMap> = data
            .views
            .iter()
            .map(|v| read_uncertainty(&view_file(root, "uncertainty", v.id(), "mium")))
            .collect::<Result<_>>()?;
        uncertainty_metrics("uncertainty_", &maps, &aligned, gt, flags.as_deref(), &mut rows);
    }
    if has("train/grid.misg") {
        let cameras: Vec<Camera> = data.views.iter().map(|v| v.camera).collect();
        let td = training_data(data.clone());
        let region = td.foreground_pixels();
        let grid = read_grid(&root.join("train/grid.misg"))?;
        let voxel = grid.voxel_size();
        let chamfer = reconstruction_chamfer(&grid, &cameras, gt, Some(&region))?;
        rows.push(("chamfer".into(), chamfer));
        rows.push(("voxel_size".into(), voxel));
        rows.push(("chamfer_voxels".into(), chamfer / voxel));
        let stage1 = read_grid(&require(root.join("train/stage1.misg"), "train")?)?;
        rows.push((
            "stage1_chamfer".into(),
            reconstruction_chamfer(&stage1, &cameras, gt, Some(&region))?,
        ));
    }
    write_bytes(&root.join("eval/metrics.csv"), format_metrics_csv(&rows).as_bytes())?;
    Ok(rows)
}

fn depth_png(depth: &DepthMap, max: f64) -> Result<Vec<u8>> {
    let values: Vec<f64> = depth
        .values
        .iter()
        .zip(&depth.valid)
        .map(|(d, ok)| if *ok { *d as f64 / max } else { f64::NAN })
        .collect();
    encode_png16(depth.width, depth.height, &values)
}

/// 16-bit PNGs of the aligned (or monocular) depth, the uncertainty maps, and
/// the trained surface depth, whichever exist. Depth is scaled by the largest
/// value across all views.
pub fn export(root: &Path) -> Result<Vec<PathBuf>> {
    let data = load_dataset(root)?;
    let depths = if root.join("aligned").is_dir() {
        read_aligned(root, &data.views)?
    } else {
        data.views.iter().map(|v| v.depth.clone()).collect()
    };
    let grid = match root.join("train/grid.misg") {
        p if p.exists() => Some(read_grid(&p)?),
        _ => None,
    };
    let rendered: Vec<DepthMap> = match &grid {
        Some(g) => data.views.iter().map(|v| surface_depth(g, &v.camera)).collect(),
        None => Vec::new(),
    };
    let max = depths
        .iter()
        .chain(&rendered)
        .flat_map(|d| d.values.iter().zip(&d.valid).filter(|(_, ok)| **ok).map(|(v, _)| *v as f64))
        .fold(f64::MIN_POSITIVE, f64::max);
    let dir = root.join("export");
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
        let p = dir.join(name);
        write_bytes(&p, &bytes)?;
        written.push(p);
        Ok(())
    };
    for (i, v) in data.views.iter().enumerate() {
        put(format!("depth_{:03}.png", v.id()), depth_png(&depths[i], max)?)?;
        let u = view_file(root, "uncertainty", v.id(), "mium");
        if u.exists() {
            let m = read_uncertainty(&u)?;
            let values: Vec<f64> = m
                .values
                .iter()
                .zip(&m.valid)
                .map(|(x, ok)| if *ok { *x as f64 } else { f64::NAN })
                .collect();
            put(format!("uncertainty_{:03}.png", v.id()), encode_png16(m.width, m.height, &values)?)?;
        }
        if let Some(r) = rendered.get(i) {
            put(format!("render_{:03}.png", v.id()), depth_png(r, max)?)?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::presets;

    fn fast() -> TrainConfig {
        TrainConfig {
            resolution: 12,
            stage1_steps: 3,
            stage2_steps: 2,
            batch_size: 64,
            samples: 16,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn stages_need_their_inputs() {
        let dir = tempfile::tempdir().unwrap();
        gen(&presets::by_name("sphere").unwrap(), dir.path(), 1).unwrap();
        match eval(dir.path()) {
            Err(Error::MissingStage { stage, .. }) => assert_eq!(stage, "cluster"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(export(dir.path()), Ok(ref w) if !w.is_empty()));
    }

    #[test]
    fn uncertainty_writes_one_map_per_view() {
        let dir = tempfile::tempdir().unwrap();
        let data = gen(&presets::by_name("sphere").unwrap(), dir.path(), 1).unwrap();
        let maps = uncertainty(dir.path(), &fast()).unwrap();
        assert_eq!(maps.len(), data.views.len());
        for v in &data.views {
            assert!(view_file(dir.path(), "uncertainty", v.id(), "mium").exists());
        }
        assert!(dir.path().join("clusters.txt").exists());
    }

    #[test]
    fn zero_stage2_steps_keeps_the_stage1_grid() {
        let dir = tempfile::tempdir().unwrap();
        gen(&presets::by_name("sphere").unwrap(), dir.path(), 1).unwrap();
        let cfg = TrainConfig {
            stage2_steps: 0,
            ..fast()
        };
        train(dir.path(), &cfg).unwrap();
        let a = std::fs::read(dir.path().join("train/stage1.misg")).unwrap();
        let b = std::fs::read(dir.path().join("train/grid.misg")).unwrap();
        assert_eq!(a, b);
    }
}
