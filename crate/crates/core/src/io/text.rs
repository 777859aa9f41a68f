//! Text formats: cameras, background labels, instance graphs, training
//! configuration, and CSV logs.
//!
//! Numbers are written in Rust's shortest round-trip form, so every value
//! reads back bit-exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Matrix4;

use crate::camera::{Camera, Intrinsics, Pose};
use crate::cluster::{InstanceCluster, InstanceGraph, InstanceKey};
use crate::error::{Error, Result};
use crate::render::train::{EikonalSampling, LossRecord, Modules, TrainConfig};
use crate::render::{LossComponents, OptimizerKind, PriorWeighting};

/// Non-empty lines with `#` comments stripped, numbered from 1.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn parse<T: FromStr>(tok: &str, what: &str, path: &Path, line: usize) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::format(path, format!("line {line}: {what} `{tok}` is not valid")))
}

/// Blocks of `view <id>`, `K fx fy cx cy w h`, and four rows of the
/// camera-to-world matrix.
pub fn format_cameras(cameras: &[Camera]) -> String {
    let mut out = String::new();
    for c in cameras {
        let k = &c.intrinsics;
        let _ = writeln!(out, "view {}", c.id);
        let _ = writeln!(out, "K {} {} {} {} {} {}", k.fx, k.fy, k.cx, k.cy, k.width, k.height);
        let m = c.pose.matrix();
        for r in 0..4 {
            let _ = writeln!(out, "{} {} {} {}", m[(r, 0)], m[(r, 1)], m[(r, 2)], m[(r, 3)]);
        }
    }
    out
}

pub fn parse_cameras(text: &str, path: &Path) -> Result<Vec<Camera>> {
    let all: Vec<(usize, &str)> = lines(text).collect();
    let mut cameras = Vec::new();
    let mut ids = BTreeSet::new();
    for block in all.chunks(6) {
        let (line, head) = block[0];
        if block.len() < 6 {
            return Err(Error::format(path, format!("line {line}: camera block has {} of 6 lines", block.len())));
        }
        let id = match head.split_whitespace().collect::<Vec<_>>()[..] {
            ["view", id] => parse::<u32>(id, "view id", path, line)?,
            _ => return Err(Error::format(path, format!("line {line}: expected `view <id>`, got `{head}`"))),
        };
        if !ids.insert(id) {
            return Err(Error::format(path, format!("line {line}: duplicate view id {id}")));
        }
        let (kline, k) = block[1];
        let kt: Vec<&str> = k.split_whitespace().collect();
        if kt.len() != 7 || kt[0] != "K" {
            return Err(Error::format(path, format!("line {kline}: expected `K fx fy cx cy w h`")));
        }
        let f = |i: usize| parse::<f64>(kt[i], "intrinsic", path, kline);
        let intrinsics = Intrinsics::new(
            f(1)?,
            f(2)?,
            f(3)?,
            f(4)?,
            parse(kt[5], "width", path, kline)?,
            parse(kt[6], "height", path, kline)?,
        )
        .map_err(|e| Error::format(path, format!("line {kline}: {e}")))?;
        let mut m = Matrix4::zeros();
        for r in 0..4 {
            let (rl, row) = block[2 + r];
            let vals: Vec<&str> = row.split_whitespace().collect();
            if vals.len() != 4 {
                return Err(Error::format(path, format!("line {rl}: pose row needs 4 numbers")));
            }
            for c in 0..4 {
                m[(r, c)] = parse(vals[c], "pose entry", path, rl)?;
            }
        }
        let pose = Pose::from_matrix(&m).map_err(|e| Error::format(path, format!("view {id}: {e}")))?;
        cameras.push(Camera::new(id, intrinsics, pose).map_err(|e| Error::format(path, format!("view {id}: {e}")))?);
    }
    Ok(cameras)
}

/// One line per view with background labels: `view <id> <label>...`.
pub fn format_background(background: &BTreeMap<u32, BTreeSet<u16>>) -> String {
    let mut out = String::new();
    for (view, labels) in background {
        let _ = write!(out, "view {view}");
        for l in labels {
            let _ = write!(out, " {l}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_background(text: &str, path: &Path) -> Result<BTreeMap<u32, BTreeSet<u16>>> {
    let mut out = BTreeMap::new();
    for (line, l) in lines(text) {
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() < 2 || t[0] != "view" {
            return Err(Error::format(path, format!("line {line}: expected `view <id> <label>...`")));
        }
        let labels = t[2..]
            .iter()
            .map(|s| parse::<u16>(s, "label", path, line))
            .collect::<Result<BTreeSet<u16>>>()?;
        out.insert(parse(t[1], "view id", path, line)?, labels);
    }
    Ok(out)
}

/// `instance <index> <view> <label>` for every node, `edge <i> <j>` for every
/// adjacency, and `cluster <id> <foreground|background> <index>...` listing
/// member instances.
pub fn format_graph(graph: &InstanceGraph) -> String {
    let mut out = String::new();
    for (i, k) in graph.instances.iter().enumerate() {
        let _ = writeln!(out, "instance {i} {} {}", k.view_id, k.label);
    }
    for (a, b) in &graph.edges {
        let _ = writeln!(out, "edge {a} {b}");
    }
    let index: BTreeMap<InstanceKey, usize> = graph.instances.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    for c in &graph.clusters {
        let kind = if c.is_background { "background" } else { "foreground" };
        let _ = write!(out, "cluster {} {kind}", c.cluster_id);
        for m in &c.members {
            let _ = write!(out, " {}", index[m]);
        }
        out.push('\n');
    }
    out
}

pub fn parse_graph(text: &str, path: &Path) -> Result<InstanceGraph> {
    let mut instances = Vec::new();
    let mut edges = Vec::new();
    let mut clusters = Vec::new();
    for (line, l) in lines(text) {
        let t: Vec<&str> = l.split_whitespace().collect();
        let bad = |msg: &str| Error::format(path, format!("line {line}: {msg}"));
        match t[0] {
            "instance" if t.len() == 4 => {
                if parse::<usize>(t[1], "instance index", path, line)? != instances.len() {
                    return Err(bad("instance indices must be 0, 1, 2, ... in order"));
                }
                instances.push(InstanceKey {
                    view_id: parse(t[2], "view id", path, line)?,
                    label: parse(t[3], "label", path, line)?,
                });
            }
            "edge" if t.len() == 3 => {
                let (a, b): (usize, usize) = (parse(t[1], "node", path, line)?, parse(t[2], "node", path, line)?);
                if a >= instances.len() || b >= instances.len() {
                    return Err(bad("edge refers to an undeclared instance"));
                }
                edges.push((a, b));
            }
            "cluster" if t.len() >= 4 => {
                let is_background = match t[2] {
                    "background" => true,
                    "foreground" => false,
                    _ => return Err(bad("cluster kind must be foreground or background")),
                };
                let mut members = Vec::with_capacity(t.len() - 3);
                for s in &t[3..] {
                    let i: usize = parse(s, "member", path, line)?;
                    members.push(*instances.get(i).ok_or_else(|| bad("member refers to an undeclared instance"))?);
                }
                members.sort();
                clusters.push(InstanceCluster {
                    cluster_id: parse(t[1], "cluster id", path, line)?,
                    members,
                    is_background,
                });
            }
            _ => return Err(bad(&format!("unrecognized record `{l}`"))),
        }
    }
    Ok(InstanceGraph {
        instances,
        edges,
        clusters,
    })
}

fn format_modules(m: Modules) -> String {
    let names: Vec<&str> = [(m.adaptive, "adaptive"), (m.guided, "guided"), (m.mask_constraint, "mask")]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect();
    if names.is_empty() {
        "none".into()
    } else {
        names.join(",")
    }
}

fn parse_modules(s: &str) -> std::result::Result<Modules, String> {
    let mut m = Modules::NONE;
    if s == "none" {
        return Ok(m);
    }
    for name in s.split(',') {
        match name.trim() {
            "adaptive" => m.adaptive = true,
            "guided" => m.guided = true,
            "mask" => m.mask_constraint = true,
            other => return Err(format!("unknown module `{other}` (expected adaptive, guided, mask or none)")),
        }
    }
    Ok(m)
}

/// Every field of `config` as `key = value` lines.
pub fn format_config(c: &TrainConfig) -> String {
    let w = &c.weights;
    let eik = match c.eikonal {
        EikonalSampling::PerCell => "cell".to_string(),
        EikonalSampling::Uniform(n) => n.to_string(),
    };
    let weighting = match c.prior_weighting {
        PriorWeighting::Linear => "linear".to_string(),
        PriorWeighting::Gate(t) => format!("gate:{t}"),
    };
    let entries: Vec<(&str, String)> = vec![
        ("seed", c.seed.to_string()),
        ("resolution", c.resolution.to_string()),
        ("stage1_steps", c.stage1_steps.to_string()),
        ("stage2_steps", c.stage2_steps.to_string()),
        ("batch_size", c.batch_size.to_string()),
        ("samples", c.samples.to_string()),
        ("lambda1", w.eikonal.to_string()),
        ("lambda2", w.mask.to_string()),
        ("lambda3", w.depth.to_string()),
        ("lambda4", w.normal.to_string()),
        ("optimizer", c.optimizer.to_string()),
        ("lr", c.lr.to_string()),
        ("momentum", c.momentum.to_string()),
        ("beta_lr_scale", c.beta_lr_scale.to_string()),
        ("stage_decay", c.stage_decay.to_string()),
        ("eikonal_points", eik),
        ("uncertainty_threshold", c.uncertainty_threshold.to_string()),
        ("prior_weighting", weighting),
        ("low_res_factor", c.low_res_factor.to_string()),
        ("alignment_trim", c.alignment_trim.to_string()),
        ("chamfer_threshold", c.chamfer_threshold.to_string()),
        ("radius_mode", c.uncertainty.radius_mode.to_string()),
        ("downsample_target", c.uncertainty.downsample_target.to_string()),
        ("modules", format_modules(c.modules)),
        ("bounds_margin", c.bounds_margin.to_string()),
        ("init_radius", c.init_radius.to_string()),
    ];
    entries.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Applies the `key = value` lines of `text` on top of `base`. Unknown keys
/// and repeated keys are errors; the result is validated.
pub fn parse_config(text: &str, path: &Path, base: TrainConfig) -> Result<TrainConfig> {
    let mut c = base;
    let mut seen = BTreeSet::new();
    for (line, l) in lines(text) {
        let Some((key, value)) = l.split_once('=') else {
            return Err(Error::format(path, format!("line {line}: expected `key = value`")));
        };
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(Error::format(path, format!("line {line}: `{key}` given twice")));
        }
        set_config_value(&mut c, key, value).map_err(|e| Error::format(path, format!("line {line}: {e}")))?;
    }
    c.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(c)
}

/// Sets one configuration entry by its text key.
pub fn set_config_value(c: &mut TrainConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    fn num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
        v.parse().map_err(|_| format!("`{key}` value `{v}` is not valid"))
    }
    match key {
        "seed" => c.seed = num(key, value)?,
        "resolution" => c.resolution = num(key, value)?,
        "stage1_steps" => c.stage1_steps = num(key, value)?,
        "stage2_steps" => c.stage2_steps = num(key, value)?,
        "batch_size" => c.batch_size = num(key, value)?,
        "samples" => c.samples = num(key, value)?,
        "lambda1" => c.weights.eikonal = num(key, value)?,
        "lambda2" => c.weights.mask = num(key, value)?,
        "lambda3" => c.weights.depth = num(key, value)?,
        "lambda4" => c.weights.normal = num(key, value)?,
        "optimizer" => c.optimizer = value.parse::<OptimizerKind>().map_err(|e| e.to_string())?,
        "lr" => c.lr = num(key, value)?,
        "momentum" => c.momentum = num(key, value)?,
        "beta_lr_scale" => c.beta_lr_scale = num(key, value)?,
        "stage_decay" => c.stage_decay = num(key, value)?,
        "eikonal_points" => {
            c.eikonal = if value == "cell" {
                EikonalSampling::PerCell
            } else {
                EikonalSampling::Uniform(num(key, value)?)
            }
        }
        "uncertainty_threshold" => c.uncertainty_threshold = num(key, value)?,
        "prior_weighting" => {
            c.prior_weighting = match value.split_once(':') {
                None if value == "linear" => PriorWeighting::Linear,
                Some(("gate", t)) => PriorWeighting::Gate(num(key, t)?),
                _ => return Err(format!("`{key}` must be `linear` or `gate:<threshold>`, got `{value}`")),
            }
        }
        "low_res_factor" => c.low_res_factor = num(key, value)?,
        "alignment_trim" => c.alignment_trim = num(key, value)?,
        "chamfer_threshold" => c.chamfer_threshold = num(key, value)?,
        "radius_mode" => c.uncertainty.radius_mode = value.parse().map_err(|e: Error| e.to_string())?,
        "downsample_target" => c.uncertainty.downsample_target = num(key, value)?,
        "modules" => c.modules = parse_modules(value)?,
        "bounds_margin" => c.bounds_margin = num(key, value)?,
        "init_radius" => c.init_radius = num(key, value)?,
        _ => return Err(format!("unknown key `{key}`")),
    }
    Ok(())
}

pub const LOSS_HEADER: &str = "stage,step,color,eikonal,mask,depth,normal,total,skipped";

/// One row per optimization step.
pub fn format_loss_csv(records: &[LossRecord]) -> String {
    let mut out = format!("{LOSS_HEADER}\n");
    for r in records {
        let LossComponents {
            color,
            eikonal,
            mask,
            depth,
            normal,
        } = r.components;
        let _ = writeln!(
            out,
            "{},{},{color},{eikonal},{mask},{depth},{normal},{},{}",
            r.stage, r.step, r.total, r.skipped
        );
    }
    out
}

/// `metric,value` rows in the given order.
pub fn format_metrics_csv(rows: &[(String, f64)]) -> String {
    let mut out = String::from("metric,value\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

pub fn parse_metrics_csv(text: &str, path: &Path) -> Result<Vec<(String, f64)>> {
    let mut rows = Vec::new();
    for (line, l) in lines(text).skip(1) {
        let Some((k, v)) = l.split_once(',') else {
            return Err(Error::format(path, format!("line {line}: expected `metric,value`")));
        };
        rows.push((k.to_string(), parse(v, "value", path, line)?));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Vec3;

    fn p() -> &'static Path {
        Path::new("t.txt")
    }

    #[test]
    fn cameras_round_trip_exactly() {
        let k = Intrinsics::new(100.3, 99.1, 31.7, 23.9, 64, 48).unwrap();
        let pose = Pose::look_at(Vec3::new(1.3, -0.7, 0.4), Vec3::new(0.1, 0.2, -0.3), Vec3::z()).unwrap();
        let cams = vec![Camera::new(3, k, pose).unwrap(), Camera::new(9, k, Pose::identity()).unwrap()];
        let text = format_cameras(&cams);
        let back = parse_cameras(&text, p()).unwrap();
        assert_eq!(back, cams);
        assert_eq!(format_cameras(&back), text);
    }

    #[test]
    fn camera_errors_name_the_line() {
        let err = parse_cameras("view 0\nK 1 1 0 0 4 4\n1 0 0 0\n0 1 0 0\n", p()).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        let err = parse_cameras("view 0\nK 1 1 0 0 4\n1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n", p()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn graph_round_trip() {
        let k = |v, l| InstanceKey { view_id: v, label: l };
        let g = InstanceGraph {
            instances: vec![k(0, 1), k(0, 2), k(1, 1)],
            edges: vec![(0, 2)],
            clusters: vec![
                InstanceCluster {
                    cluster_id: 0,
                    members: vec![k(0, 1), k(1, 1)],
                    is_background: false,
                },
                InstanceCluster {
                    cluster_id: 1,
                    members: vec![k(0, 2)],
                    is_background: true,
                },
            ],
        };
        assert_eq!(parse_graph(&format_graph(&g), p()).unwrap(), g);
        assert!(parse_graph("edge 0 1\n", p()).is_err());
    }

    #[test]
    fn config_round_trip_and_errors() {
        let mut c = TrainConfig::default();
        c.seed = 7;
        c.weights.depth = 0.25;
        c.prior_weighting = PriorWeighting::Gate(0.4);
        c.modules = Modules {
            adaptive: true,
            guided: false,
            mask_constraint: true,
        };
        c.eikonal = EikonalSampling::Uniform(300);
        let text = format_config(&c);
        let back = parse_config(&text, p(), TrainConfig::default()).unwrap();
        assert_eq!(format_config(&back), text);
        assert!(parse_config("lr = 1\nlr = 2\n", p(), TrainConfig::default()).is_err());
        assert!(parse_config("colour = 1\n", p(), TrainConfig::default()).is_err());
        assert!(parse_config("lambda3 = -1\n", p(), TrainConfig::default()).is_err());
        let partial = parse_config("# comment\nstage2_steps = 0\n", p(), TrainConfig::default()).unwrap();
        assert_eq!(partial.stage2_steps, 0);
        assert_eq!(partial.stage1_steps, TrainConfig::default().stage1_steps);
    }

    #[test]
    fn background_round_trip() {
        let mut b = BTreeMap::new();
        b.insert(0, BTreeSet::from([9, 10]));
        b.insert(4, BTreeSet::new());
        assert_eq!(parse_background(&format_background(&b), p()).unwrap(), b);
    }
}
