//! One frame of input: calibrated camera, monocular depth, instance labels, color.

use crate::camera::{Camera, Vec3};
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::image::{LabelMap, RgbImage};

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub depth: DepthMap,
    pub mask: LabelMap,
    pub rgb: RgbImage,
}

impl View {
    pub fn new(camera: Camera, depth: DepthMap, mask: LabelMap, rgb: RgbImage) -> Result<Self> {
        let (w, h) = (camera.width(), camera.height());
        let dims = [
            ("depth", depth.width, depth.height),
            ("mask", mask.width, mask.height),
            ("rgb", rgb.width, rgb.height),
        ];
        for (name, dw, dh) in dims {
            if (dw, dh) != (w, h) {
                return Err(Error::domain(format!(
                    "view {}: {name} is {dw}x{dh}, camera is {w}x{h}",
                    camera.id
                )));
            }
        }
        Ok(View {
            camera,
            depth,
            mask,
            rgb,
        })
    }

    pub fn id(&self) -> u32 {
        self.camera.id
    }

    /// Back-projected points of `depth` at the pixels carrying `label`, with their pixels.
    pub fn instance_points(&self, depth: &DepthMap, label: u16) -> Vec<((u32, u32), Vec3)> {
        self.mask
            .pixels_with(label)
            .into_iter()
            .filter_map(|(u, v)| {
                let d = depth.get(u, v)?;
                Some(((u, v), self.camera.back_project(u, v, d).ok()?))
            })
            .collect()
    }
}
