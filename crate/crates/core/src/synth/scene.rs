//! Scene descriptions: analytic primitives, a camera rig, and per-view depth corruption.
//!
//! Text format, one directive per line, `#` starts a comment:
//!
//! ```text
//! sphere id=1 center=0,0,0.3 radius=0.3 color=0.8,0.3,0.2 texture=12
//! box id=9 min=-1,-1,-0.1 max=1,1,0 color=0.5,0.5,0.5 background
//! ring count=8 radius=2.5 elevation=1.2 target=0,0,0.2 width=64 height=48 fov=60 start=0 span=360
//! corrupt view=7 region=8,8,40,30 bias=0.2 sigma=0.01 warp=0.05
//! affine view=3 scale=1.1 shift=0.05
//! light dir=0.3,0.4,1
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::camera::{Camera, Intrinsics, Pose, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    /// Axis-aligned box.
    Cuboid { min: Vec3, max: Vec3 },
}

impl Shape {
    /// Smallest ray parameter `t > 1e-9` where the ray enters the shape, with the outward normal.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, Vec3)> {
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = origin - center;
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = [-b - sq, -b + sq].into_iter().find(|t| *t > 1e-9)?;
                Some((t, (origin + dir * t - center) / radius))
            }
            Shape::Cuboid { min, max } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut axis0 = 0;
                let mut axis1 = 0;
                for k in 0..3 {
                    if dir[k].abs() < 1e-300 {
                        if origin[k] < min[k] || origin[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (min[k] - origin[k]) / dir[k];
                    let b = (max[k] - origin[k]) / dir[k];
                    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                    if lo > t0 {
                        t0 = lo;
                        axis0 = k;
                    }
                    if hi < t1 {
                        t1 = hi;
                        axis1 = k;
                    }
                }
                if t0 > t1 || t1 <= 1e-9 {
                    return None;
                }
                let (t, axis) = if t0 > 1e-9 { (t0, axis0) } else { (t1, axis1) };
                let mut n = Vec3::zeros();
                n[axis] = if t0 > 1e-9 { -dir[axis].signum() } else { dir[axis].signum() };
                Some((t, n))
            }
        }
    }

    /// Exact signed distance (negative inside).
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        match *self {
            Shape::Sphere { center, radius } => (p - center).norm() - radius,
            Shape::Cuboid { min, max } => {
                let c = (min + max) * 0.5;
                let h = (max - min) * 0.5;
                let q = (p - c).abs() - h;
                q.sup(&Vec3::zeros()).norm() + q.max().min(0.0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    /// Becomes the mask label; must be non-zero.
    pub id: u16,
    pub shape: Shape,
    pub color: [f64; 3],
    /// Spatial frequency of a procedural albedo pattern; 0 is flat color.
    pub texture: f64,
    pub background: bool,
}

impl Primitive {
    pub fn albedo(&self, p: &Vec3) -> [f64; 3] {
        let m = if self.texture > 0.0 {
            let f = self.texture;
            0.7 + 0.3 * (f * p.x).sin() * (f * p.y + 0.4).sin() * (f * p.z + 1.1).sin()
        } else {
            1.0
        };
        self.color.map(|c| c * m)
    }
}

/// Cameras evenly spaced on a horizontal arc around `target`, all looking at it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRing {
    pub count: u32,
    pub radius: f64,
    /// Camera height above the target.
    pub elevation: f64,
    pub target: Vec3,
    pub width: u32,
    pub height: u32,
    pub fov_deg: f64,
    pub start_deg: f64,
    /// 360 for a full ring; smaller spans place cameras on an arc including both ends.
    pub span_deg: f64,
}

impl CameraRing {
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        let intr = Intrinsics::from_fov(self.width, self.height, self.fov_deg.to_radians())?;
        let full = (self.span_deg - 360.0).abs() < 1e-9;
        let step = if full {
            self.span_deg / self.count as f64
        } else {
            self.span_deg / (self.count.max(2) - 1) as f64
        };
        (0..self.count)
            .map(|i| {
                let a = (self.start_deg + step * i as f64).to_radians();
                let eye = self.target + Vec3::new(self.radius * a.cos(), self.radius * a.sin(), self.elevation);
                Camera::new(i, intr, Pose::look_at(eye, self.target, Vec3::z())?)
            })
            .collect()
    }
}

/// Depth corruption of one view inside a pixel rectangle `[u0, u1) x [v0, v1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corruption {
    pub view: u32,
    pub region: [u32; 4],
    pub bias: f64,
    pub sigma: f64,
    /// Amplitude of a smooth one-period sinusoidal warp over the region.
    pub warp: f64,
}

impl Corruption {
    pub fn contains(&self, u: u32, v: u32) -> bool {
        let [u0, v0, u1, v1] = self.region;
        u >= u0 && u < u1 && v >= v0 && v < v1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineDistortion {
    pub view: u32,
    pub scale: f64,
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub rig: CameraRing,
    pub corruptions: Vec<Corruption>,
    pub affine: Vec<AffineDistortion>,
    pub light: Vec3,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for p in &self.primitives {
            if p.id == 0 || !ids.insert(p.id) {
                return Err(Error::Config(format!("primitive id {} is zero or repeated", p.id)));
            }
        }
        if self.rig.count < 2 {
            return Err(Error::Config("scene needs at least 2 cameras".into()));
        }
        for c in &self.corruptions {
            let [u0, v0, u1, v1] = c.region;
            if c.view >= self.rig.count || u0 >= u1 || v0 >= v1 || u1 > self.rig.width || v1 > self.rig.height {
                return Err(Error::Config(format!("corruption region {:?} invalid for view {}", c.region, c.view)));
            }
        }
        Ok(())
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        self.rig.cameras()
    }

    pub fn background_labels(&self) -> Vec<u16> {
        self.primitives.iter().filter(|p| p.background).map(|p| p.id).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut primitives = Vec::new();
        let mut rig = None;
        let mut corruptions = Vec::new();
        let mut affine = Vec::new();
        let mut light = Vec3::new(0.3, 0.4, 1.0);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            let kind = words.next().unwrap_or_default();
            let fields = Fields::parse(words, lineno + 1)?;
            match kind {
                "sphere" => primitives.push(Primitive {
                    id: fields.num("id")? as u16,
                    shape: Shape::Sphere {
                        center: fields.vec3("center")?,
                        radius: fields.num("radius")?,
                    },
                    color: fields.color()?,
                    texture: fields.num_or("texture", 0.0)?,
                    background: fields.flag("background"),
                }),
                "box" => primitives.push(Primitive {
                    id: fields.num("id")? as u16,
                    shape: Shape::Cuboid {
                        min: fields.vec3("min")?,
                        max: fields.vec3("max")?,
                    },
                    color: fields.color()?,
                    texture: fields.num_or("texture", 0.0)?,
                    background: fields.flag("background"),
                }),
                "ring" => {
                    rig = Some(CameraRing {
                        count: fields.num("count")? as u32,
                        radius: fields.num("radius")?,
                        elevation: fields.num_or("elevation", 0.0)?,
                        target: fields.vec3_or("target", Vec3::zeros())?,
                        width: fields.num("width")? as u32,
                        height: fields.num("height")? as u32,
                        fov_deg: fields.num_or("fov", 60.0)?,
                        start_deg: fields.num_or("start", 0.0)?,
                        span_deg: fields.num_or("span", 360.0)?,
                    })
                }
                "corrupt" => {
                    let r = fields.list("region", 4)?;
                    corruptions.push(Corruption {
                        view: fields.num("view")? as u32,
                        region: [r[0] as u32, r[1] as u32, r[2] as u32, r[3] as u32],
                        bias: fields.num_or("bias", 0.0)?,
                        sigma: fields.num_or("sigma", 0.0)?,
                        warp: fields.num_or("warp", 0.0)?,
                    })
                }
                "affine" => affine.push(AffineDistortion {
                    view: fields.num("view")? as u32,
                    scale: fields.num_or("scale", 1.0)?,
                    shift: fields.num_or("shift", 0.0)?,
                }),
                "light" => light = fields.vec3("dir")?,
                other => {
                    return Err(Error::Config(format!("line {}: unknown directive `{other}`", lineno + 1)))
                }
            }
        }
        let spec = SceneSpec {
            primitives,
            rig: rig.ok_or_else(|| Error::Config("scene has no `ring` camera directive".into()))?,
            corruptions,
            affine,
            light,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let v = |x: &Vec3| format!("{},{},{}", x.x, x.y, x.z);
        let c = |x: &[f64; 3]| format!("{},{},{}", x[0], x[1], x[2]);
        let mut out = String::new();
        for p in &self.primitives {
            let bg = if p.background { " background" } else { "" };
            match p.shape {
                Shape::Sphere { center, radius } => writeln!(
                    out,
                    "sphere id={} center={} radius={} color={} texture={}{bg}",
                    p.id,
                    v(&center),
                    radius,
                    c(&p.color),
                    p.texture
                ),
                Shape::Cuboid { min, max } => writeln!(
                    out,
                    "box id={} min={} max={} color={} texture={}{bg}",
                    p.id,
                    v(&min),
                    v(&max),
                    c(&p.color),
                    p.texture
                ),
            }
            .unwrap();
        }
        let r = &self.rig;
        writeln!(
            out,
            "ring count={} radius={} elevation={} target={} width={} height={} fov={} start={} span={}",
            r.count,
            r.radius,
            r.elevation,
            v(&r.target),
            r.width,
            r.height,
            r.fov_deg,
            r.start_deg,
            r.span_deg
        )
        .unwrap();
        for k in &self.corruptions {
            let [a, b, cc, d] = k.region;
            writeln!(
                out,
                "corrupt view={} region={a},{b},{cc},{d} bias={} sigma={} warp={}",
                k.view, k.bias, k.sigma, k.warp
            )
            .unwrap();
        }
        for a in &self.affine {
            writeln!(out, "affine view={} scale={} shift={}", a.view, a.scale, a.shift).unwrap();
        }
        writeln!(out, "light dir={}", v(&self.light)).unwrap();
        out
    }
}

struct Fields {
    line: usize,
    pairs: Vec<(String, String)>,
    flags: Vec<String>,
}

impl Fields {
    fn parse<'a>(words: impl Iterator<Item = &'a str>, line: usize) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut flags = Vec::new();
        for w in words {
            match w.split_once('=') {
                Some((k, v)) => pairs.push((k.to_string(), v.to_string())),
                None => flags.push(w.to_string()),
            }
        }
        Ok(Fields { line, pairs, flags })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn err(&self, msg: String) -> Error {
        Error::Config(format!("line {}: {msg}", self.line))
    }

    fn list(&self, key: &str, n: usize) -> Result<Vec<f64>> {
        let raw = self.raw(key).ok_or_else(|| self.err(format!("missing `{key}`")))?;
        let vals: Vec<f64> = raw
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| self.err(format!("`{key}`: {e}")))?;
        if vals.len() != n || vals.iter().any(|x| !x.is_finite()) {
            return Err(self.err(format!("`{key}` needs {n} finite comma-separated numbers")));
        }
        Ok(vals)
    }

    fn num(&self, key: &str) -> Result<f64> {
        Ok(self.list(key, 1)?[0])
    }

    fn num_or(&self, key: &str, default: f64) -> Result<f64> {
        if self.raw(key).is_some() {
            self.num(key)
        } else {
            Ok(default)
        }
    }

    fn vec3(&self, key: &str) -> Result<Vec3> {
        let v = self.list(key, 3)?;
        Ok(Vec3::new(v[0], v[1], v[2]))
    }

    fn vec3_or(&self, key: &str, default: Vec3) -> Result<Vec3> {
        if self.raw(key).is_some() {
            self.vec3(key)
        } else {
            Ok(default)
        }
    }

    fn color(&self) -> Result<[f64; 3]> {
        let v = self.list("color", 3)?;
        Ok([v[0], v[1], v[2]])
    }

    fn flag(&self, name: &str) -> bool {
        self.flags.iter().any(|f| f == name)
    }
}
