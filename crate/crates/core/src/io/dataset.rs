//! Dataset directory layout:
//!
//! ```text
//! cameras.txt        camera blocks (see text::format_cameras)
//! background.txt     optional `view <id> <label>...` lines
//! depth/<id>.midm    monocular depth
//! mask/<id>.miim     instance labels
//! rgb/<id>.ppm       color
//! gt/<id>.midm       optional exact depth, for every view or none
//! ```
//!
//! `<id>` is the view id zero-padded to three digits.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::camera::Camera;
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::view::View;

use super::text::{format_background, format_cameras, parse_background, parse_cameras};
use super::{decode_depth, decode_mask, decode_ppm, read_bytes, read_text, write_bytes, write_depth, write_mask, write_ppm};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub views: Vec<View>,
    pub background: BTreeMap<u32, BTreeSet<u16>>,
    pub ground_truth: Option<Vec<DepthMap>>,
}

/// `root/dir/<id>.ext`.
pub fn view_file(root: &Path, dir: &str, id: u32, ext: &str) -> PathBuf {
    root.join(dir).join(format!("{id:03}.{ext}"))
}

pub fn save_dataset(root: &Path, data: &Dataset) -> Result<()> {
    let cameras: Vec<Camera> = data.views.iter().map(|v| v.camera).collect();
    write_bytes(&root.join("cameras.txt"), format_cameras(&cameras).as_bytes())?;
    write_bytes(&root.join("background.txt"), format_background(&data.background).as_bytes())?;
    for (i, v) in data.views.iter().enumerate() {
        write_depth(&view_file(root, "depth", v.id(), "midm"), &v.depth)?;
        write_mask(&view_file(root, "mask", v.id(), "miim"), &v.mask)?;
        write_ppm(&view_file(root, "rgb", v.id(), "ppm"), &v.rgb)?;
        if let Some(gt) = &data.ground_truth {
            write_depth(&view_file(root, "gt", v.id(), "midm"), &gt[i])?;
        }
    }
    Ok(())
}

/// Strict load: every problem found is reported, and no dataset is returned
/// unless there are none.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(Error::Dataset(vec![format!("{}: not a directory", root.display())]));
    }
    let mut diag = Vec::new();
    let cam_path = root.join("cameras.txt");
    let cameras = match read_text(&cam_path).and_then(|t| parse_cameras(&t, &cam_path)) {
        Ok(c) if c.is_empty() => {
            diag.push(format!("{}: no views", cam_path.display()));
            Vec::new()
        }
        Ok(c) => c,
        Err(e) => {
            diag.push(if root.read_dir().is_ok_and(|mut d| d.next().is_none()) {
                format!("{}: no views (empty directory)", root.display())
            } else {
                e.to_string()
            });
            Vec::new()
        }
    };
    let bg_path = root.join("background.txt");
    let background = if bg_path.exists() {
        read_text(&bg_path)
            .and_then(|t| parse_background(&t, &bg_path))
            .unwrap_or_else(|e| {
                diag.push(e.to_string());
                BTreeMap::new()
            })
    } else {
        BTreeMap::new()
    };
    let has_gt = root.join("gt").is_dir();
    let mut views = Vec::new();
    let mut gts = Vec::new();
    for cam in &cameras {
        let (w, h) = (cam.width(), cam.height());
        let mut check = |path: PathBuf, dims: Result<(u32, u32)>| match dims {
            Ok(d) if d == (w, h) => true,
            Ok((dw, dh)) => {
                diag.push(format!("{}: {dw}x{dh} does not match camera {} ({w}x{h})", path.display(), cam.id));
                false
            }
            Err(e) => {
                diag.push(e.to_string());
                false
            }
        };
        let load = |dir: &str, ext: &str| {
            let p = view_file(root, dir, cam.id, ext);
            (read_bytes(&p), p)
        };
        let (bytes, p) = load("depth", "midm");
        let depth = bytes.and_then(|b| decode_depth(&b, &p));
        let ok_d = check(p, depth.as_ref().map(|d| (d.width, d.height)).map_err(clone_err));
        let (bytes, p) = load("mask", "miim");
        let mask = bytes.and_then(|b| decode_mask(&b, &p));
        let ok_m = check(p, mask.as_ref().map(|m| (m.width, m.height)).map_err(clone_err));
        let (bytes, p) = load("rgb", "ppm");
        let rgb = bytes.and_then(|b| decode_ppm(&b, &p));
        let ok_c = check(p, rgb.as_ref().map(|c| (c.width, c.height)).map_err(clone_err));
        if has_gt {
            let (bytes, p) = load("gt", "midm");
            let gt = bytes.and_then(|b| decode_depth(&b, &p));
            if check(p, gt.as_ref().map(|d| (d.width, d.height)).map_err(clone_err)) {
                gts.push(gt.expect("checked"));
            }
        }
        if ok_d && ok_m && ok_c {
            match View::new(*cam, depth.expect("checked"), mask.expect("checked"), rgb.expect("checked")) {
                Ok(v) => views.push(v),
                Err(e) => diag.push(e.to_string()),
            }
        }
    }
    if !diag.is_empty() {
        return Err(Error::Dataset(diag));
    }
    Ok(Dataset {
        views,
        background,
        ground_truth: has_gt.then_some(gts),
    })
}

/// Diagnostics only need the message.
fn clone_err(e: &Error) -> Error {
    Error::Domain(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Intrinsics, Pose};
    use crate::image::{LabelMap, RgbImage};

    fn tiny() -> Dataset {
        let cam = Camera::new(0, Intrinsics::new(4.0, 4.0, 2.0, 2.0, 4, 4).unwrap(), Pose::identity()).unwrap();
        let depth = DepthMap::from_values(4, 4, vec![1.0; 16]).unwrap();
        let view = View::new(cam, depth.clone(), LabelMap::new(4, 4, vec![1; 16]).unwrap(), RgbImage::black(4, 4)).unwrap();
        Dataset {
            views: vec![view],
            background: BTreeMap::from([(0, BTreeSet::from([3]))]),
            ground_truth: Some(vec![depth]),
        }
    }

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let d = tiny();
        save_dataset(dir.path(), &d).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), d);
    }

    #[test]
    fn empty_directory_reports_no_views() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("no views"), "{err}");
    }

    #[test]
    fn truncated_depth_is_named_and_mismatches_collected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &tiny()).unwrap();
        let p = view_file(dir.path(), "depth", 0, "midm");
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        write_mask(&view_file(dir.path(), "mask", 0, "miim"), &LabelMap::new(2, 2, vec![0; 4]).unwrap()).unwrap();
        let Err(Error::Dataset(diag)) = load_dataset(dir.path()) else {
            panic!("expected dataset error")
        };
        assert_eq!(diag.len(), 2, "{diag:?}");
        assert!(diag[0].contains("000.midm") && diag[0].contains("truncated"));
        assert!(diag[1].contains("000.miim") && diag[1].contains("2x2"));
    }
}
