//! Pinhole cameras, rays, and the back-projection / projection pair.
//!
//! Pixel `(u, v)` covers the continuous image square `[u, u+1) x [v, v+1)`,
//! so its center sits at `(u + 0.5, v + 0.5)`. [`Camera::project`] returns
//! continuous image coordinates in that same frame. Depth is camera-space z,
//! not distance along the ray.

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Projections closer to the image plane than this are treated as behind the camera.
pub const MIN_CAMERA_Z: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Symmetric pinhole with the given horizontal field of view (radians).
    pub fn from_fov(width: u32, height: u32, fov_x: f64) -> Result<Self> {
        let fx = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Self::new(fx, fx, 0.5 * width as f64, 0.5 * height as f64, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Scaled copy for rendering at reduced resolution; `factor` divides the image size.
    pub fn downscaled(&self, factor: u32) -> Intrinsics {
        let f = factor.max(1) as f64;
        let width = (self.width / factor.max(1)).max(1);
        let height = (self.height / factor.max(1)).max(1);
        Intrinsics {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: (self.cx / f).min(width as f64 - 1e-9),
            cy: (self.cy / f).min(height as f64 - 1e-9),
            width,
            height,
        }
    }
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let pose = Pose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let orth = (self.rotation * self.rotation.transpose() - Matrix3::identity()).amax();
        let det = self.rotation.determinant();
        if orth > 1e-6 || (det - 1.0).abs() > 1e-6 || !self.translation.iter().all(|x| x.is_finite()) {
            return Err(Error::domain(format!(
                "pose rotation is not a proper rotation (orthogonality error {orth:e}, det {det})"
            )));
        }
        Ok(())
    }

    /// Camera at `eye` with its optical axis (+z) toward `target`, image +y roughly along `-up`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::domain("look_at: eye coincides with target"))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::domain("look_at: up is parallel to the view direction"))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Pose::new(rotation, eye)
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self> {
        let bottom = m.fixed_view::<1, 4>(3, 0);
        if (bottom[0].abs() + bottom[1].abs() + bottom[2].abs() + (bottom[3] - 1.0).abs()) > 1e-9 {
            return Err(Error::domain("pose matrix bottom row must be [0 0 0 1]"));
        }
        Pose::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `other * self`: apply `other` after this camera-to-world transform.
    pub fn then(&self, other: &Pose) -> Pose {
        Pose {
            rotation: other.rotation * self.rotation,
            translation: other.rotation * self.translation + other.translation,
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn optical_axis(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    pub fn center(&self) -> Vec3 {
        self.translation
    }

    /// Rotation from a unit axis and angle, as a pose without translation.
    pub fn rotation_about(axis: Vec3, angle: f64) -> Pose {
        let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        Pose {
            rotation: rotation.into_inner(),
            translation: Vec3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub pixel: (u32, u32),
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    /// Continuous image coordinates and camera-space depth.
    Visible { u: f64, v: f64, depth: f64 },
    BehindCamera,
}

impl Projection {
    pub fn visible(self) -> Option<(f64, f64, f64)> {
        match self {
            Projection::Visible { u, v, depth } => Some((u, v, depth)),
            Projection::BehindCamera => None,
        }
    }
}

/// One calibrated view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub id: u32,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(id: u32, intrinsics: Intrinsics, pose: Pose) -> Result<Self> {
        intrinsics.validate()?;
        pose.validate()?;
        Ok(Camera {
            id,
            intrinsics,
            pose,
        })
    }

    pub fn width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height
    }

    fn check_pixel(&self, u: u32, v: u32) -> Result<()> {
        if u < self.width() && v < self.height() {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "pixel ({u},{v}) outside {}x{} image of view {}",
                self.width(),
                self.height(),
                self.id
            )))
        }
    }

    /// Back-projects continuous image coordinates at camera depth `depth`, no pixel-center offset.
    pub fn back_project_continuous(&self, x: f64, y: f64, depth: f64) -> Result<Vec3> {
        if !(depth.is_finite() && depth > 0.0) {
            return Err(Error::domain(format!("depth must be finite and positive, got {depth}")));
        }
        let k = &self.intrinsics;
        let cam = Vec3::new((x - k.cx) / k.fx * depth, (y - k.cy) / k.fy * depth, depth);
        Ok(self.pose.transform_point(&cam))
    }

    /// World point seen at the center of pixel `(u, v)` at camera depth `depth`.
    pub fn back_project(&self, u: u32, v: u32, depth: f64) -> Result<Vec3> {
        self.check_pixel(u, v)?;
        self.back_project_continuous(u as f64 + 0.5, v as f64 + 0.5, depth)
    }

    pub fn project(&self, point: &Vec3) -> Projection {
        let cam = self.pose.inverse_transform_point(point);
        if cam.z <= MIN_CAMERA_Z {
            return Projection::BehindCamera;
        }
        let k = &self.intrinsics;
        Projection::Visible {
            u: k.fx * cam.x / cam.z + k.cx,
            v: k.fy * cam.y / cam.z + k.cy,
            depth: cam.z,
        }
    }

    /// Integer pixel containing a projection, if it lands inside the image.
    pub fn pixel_of(&self, point: &Vec3) -> Option<(u32, u32, f64)> {
        let (u, v, depth) = self.project(point).visible()?;
        if u < 0.0 || v < 0.0 {
            return None;
        }
        let (pu, pv) = (u.floor() as u64, v.floor() as u64);
        (pu < self.width() as u64 && pv < self.height() as u64).then_some((pu as u32, pv as u32, depth))
    }

    pub fn generate_ray(&self, u: u32, v: u32) -> Result<Ray> {
        self.check_pixel(u, v)?;
        let k = &self.intrinsics;
        let dir_cam = Vec3::new(
            (u as f64 + 0.5 - k.cx) / k.fx,
            (v as f64 + 0.5 - k.cy) / k.fy,
            1.0,
        );
        Ok(Ray {
            origin: self.pose.center(),
            direction: (self.pose.rotation * dir_cam).normalize(),
            pixel: (u, v),
        })
    }

    /// Ratio `camera_z / ray_length` for the ray through pixel `(u, v)`.
    pub fn z_per_ray_length(&self, ray: &Ray) -> f64 {
        ray.direction.dot(&self.pose.optical_axis())
    }
}
