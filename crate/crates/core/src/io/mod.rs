//! On-disk formats and dataset loading.
//!
//! Binary files are little-endian and start with a 4-byte magic followed by
//! their dimensions:
//!
//! | magic  | header                 | payload                                   |
//! |--------|------------------------|-------------------------------------------|
//! | `MIDM` | `u32 width, u32 height` | `f32` camera-z depth, invalid stored as 0 |
//! | `MIIM` | `u32 width, u32 height` | `u16` instance label, 0 = unsegmented     |
//! | `MIUM` | `u32 width, u32 height` | `f32` uncertainty, NaN where unestimated  |
//! | `MIPC` | `u32 count`             | `f32 x, y, z` per point                   |
//! | `MISG` | see [`encode_grid`]     | `f64` SDF, RGB and β                      |
//!
//! Colors are binary PPM (`P6`, maxval 255). Text formats live in [`text`].

mod dataset;
pub mod text;

use std::fs;
use std::path::Path;

use crate::camera::Vec3;
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::image::{LabelMap, RgbImage};
use crate::render::SdfGrid;
use crate::uncertainty::UncertaintyMap;

pub use dataset::{load_dataset, save_dataset, view_file, Dataset};

pub const DEPTH_MAGIC: [u8; 4] = *b"MIDM";
pub const MASK_MAGIC: [u8; 4] = *b"MIIM";
pub const UNCERTAINTY_MAGIC: [u8; 4] = *b"MIUM";
pub const CLOUD_MAGIC: [u8; 4] = *b"MIPC";
pub const GRID_MAGIC: [u8; 4] = *b"MISG";

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path, magic: [u8; 4]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        let got = r.take(4)?;
        if got != magic {
            return Err(Error::format(
                path,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(&magic)
                ),
            ));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!("truncated: needs {} more bytes at offset {}, file has {}", n, self.pos, self.bytes.len()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// `count` fixed-size records, checked against the remaining length first.
    fn records<T, const N: usize>(&mut self, count: usize, decode: impl Fn([u8; N]) -> T) -> Result<Vec<T>> {
        let bytes = self.take(count.checked_mul(N).ok_or_else(|| Error::format(self.path, "size overflow"))?)?;
        Ok(bytes
            .chunks_exact(N)
            .map(|c| decode(c.try_into().expect("chunk size")))
            .collect())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!("{} trailing bytes after payload", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }

    fn dims(&mut self) -> Result<(u32, u32, usize)> {
        let (w, h) = (self.u32()?, self.u32()?);
        if w == 0 || h == 0 {
            return Err(Error::format(self.path, format!("empty image {w}x{h}")));
        }
        Ok((w, h, w as usize * h as usize))
    }
}

fn header(magic: [u8; 4], width: u32, height: u32, payload: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    out
}

pub fn encode_depth(depth: &DepthMap) -> Vec<u8> {
    let mut out = header(DEPTH_MAGIC, depth.width, depth.height, 4 * depth.len());
    for (v, ok) in depth.values.iter().zip(&depth.valid) {
        out.extend_from_slice(&(if *ok { *v } else { 0.0 }).to_le_bytes());
    }
    out
}

/// Every finite positive value is a valid depth.
pub fn decode_depth(bytes: &[u8], path: &Path) -> Result<DepthMap> {
    let mut r = Reader::new(bytes, path, DEPTH_MAGIC)?;
    let (w, h, n) = r.dims()?;
    let values = r.records(n, f32::from_le_bytes)?;
    r.finish()?;
    if let Some(i) = values.iter().position(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::format(path, format!("pixel {i}: depth {} is not finite and >= 0", values[i])));
    }
    DepthMap::from_values(w, h, values)
}

pub fn encode_mask(mask: &LabelMap) -> Vec<u8> {
    let mut out = header(MASK_MAGIC, mask.width, mask.height, 2 * mask.labels.len());
    for l in &mask.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn decode_mask(bytes: &[u8], path: &Path) -> Result<LabelMap> {
    let mut r = Reader::new(bytes, path, MASK_MAGIC)?;
    let (w, h, n) = r.dims()?;
    let labels = r.records(n, u16::from_le_bytes)?;
    r.finish()?;
    LabelMap::new(w, h, labels)
}

pub fn encode_uncertainty(map: &UncertaintyMap) -> Vec<u8> {
    let mut out = header(UNCERTAINTY_MAGIC, map.width, map.height, 4 * map.values.len());
    for (v, ok) in map.values.iter().zip(&map.valid) {
        out.extend_from_slice(&(if *ok { *v } else { f32::NAN }).to_le_bytes());
    }
    out
}

pub fn decode_uncertainty(bytes: &[u8], path: &Path) -> Result<UncertaintyMap> {
    let mut r = Reader::new(bytes, path, UNCERTAINTY_MAGIC)?;
    let (w, h, n) = r.dims()?;
    let raw = r.records(n, f32::from_le_bytes)?;
    r.finish()?;
    let mut map = UncertaintyMap::zeros(w, h);
    for (i, v) in raw.into_iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::format(path, format!("pixel {i}: uncertainty {v} outside [0, 1]")));
        }
        map.values[i] = v;
        map.valid[i] = true;
    }
    Ok(map)
}

pub fn encode_cloud(points: &[Vec3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 12 * points.len());
    out.extend_from_slice(&CLOUD_MAGIC);
    out.extend_from_slice(&(points.len() as u32).to_le_bytes());
    for p in points {
        for k in 0..3 {
            out.extend_from_slice(&(p[k] as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_cloud(bytes: &[u8], path: &Path) -> Result<Vec<Vec3>> {
    let mut r = Reader::new(bytes, path, CLOUD_MAGIC)?;
    let n = r.u32()? as usize;
    let pts = r.records(n, |b: [u8; 12]| {
        let f = |k: usize| f32::from_le_bytes(b[4 * k..4 * k + 4].try_into().expect("4 bytes")) as f64;
        Vec3::new(f(0), f(1), f(2))
    })?;
    r.finish()?;
    Ok(pts)
}

/// `MISG`, `u32 resolution`, `f64 min x y z`, `f64 size`, `f64 beta`, then
/// `resolution³` SDF values and as many RGB triples, x fastest.
pub fn encode_grid(grid: &SdfGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(48 + 32 * grid.sdf.len());
    out.extend_from_slice(&GRID_MAGIC);
    out.extend_from_slice(&(grid.resolution as u32).to_le_bytes());
    for v in [grid.min.x, grid.min.y, grid.min.z, grid.size, grid.beta] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in &grid.sdf {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for c in &grid.color {
        for k in c {
            out.extend_from_slice(&k.to_le_bytes());
        }
    }
    out
}

pub fn decode_grid(bytes: &[u8], path: &Path) -> Result<SdfGrid> {
    let mut r = Reader::new(bytes, path, GRID_MAGIC)?;
    let n = r.u32()? as usize;
    let min = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
    let (size, beta) = (r.f64()?, r.f64()?);
    let count = n
        .checked_pow(3)
        .ok_or_else(|| Error::format(path, format!("resolution {n} overflows")))?;
    let sdf = r.records(count, f64::from_le_bytes)?;
    let color = r.records(count, |b: [u8; 24]| {
        std::array::from_fn(|k| f64::from_le_bytes(b[8 * k..8 * k + 8].try_into().expect("8 bytes")))
    })?;
    r.finish()?;
    let mut grid = SdfGrid::sphere(min, size, n, 0.0, false).map_err(|e| Error::format(path, e.to_string()))?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::format(path, format!("beta {beta} is not positive")));
    }
    if sdf.iter().any(|s| !s.is_finite()) {
        return Err(Error::format(path, "non-finite SDF value"));
    }
    grid.sdf = sdf;
    grid.color = color;
    grid.beta = beta;
    Ok(grid)
}

/// Binary PPM (`P6`), channels quantized to `round(255 · c)`.
pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for p in &img.pixels {
        for c in p {
            out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    // Header: magic, width, height, maxval, separated by whitespace; comments start with '#'.
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PPM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(Error::format(path, format!("bad magic {:?}, expected \"P6\"", fields[0])));
    }
    let num = |s: &str, what: &str| {
        s.parse::<u32>()
            .map_err(|_| Error::format(path, format!("PPM {what} `{s}` is not an integer")))
    };
    let (w, h, maxval) = (num(&fields[1], "width")?, num(&fields[2], "height")?, num(&fields[3], "maxval")?);
    if maxval != 255 {
        return Err(Error::format(path, format!("PPM maxval {maxval} unsupported (expected 255)")));
    }
    if w == 0 || h == 0 {
        return Err(Error::format(path, format!("empty image {w}x{h}")));
    }
    // Exactly one whitespace byte ends the header.
    pos += 1;
    let n = 3 * w as usize * h as usize;
    let data = bytes.get(pos..).unwrap_or(&[]);
    if data.len() < n {
        return Err(Error::format(path, format!("truncated: {} of {n} pixel bytes", data.len())));
    }
    if data.len() > n {
        return Err(Error::format(path, format!("{} trailing bytes after payload", data.len() - n)));
    }
    let pixels = data
        .chunks_exact(3)
        .map(|c| [c[0] as f32 / 255.0, c[1] as f32 / 255.0, c[2] as f32 / 255.0])
        .collect();
    Ok(RgbImage {
        width: w,
        height: h,
        pixels,
    })
}

/// 16-bit grayscale PNG of `values` in `[0, 1]`; NaN is written as 0.
pub fn encode_png16(width: u32, height: u32, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != width as usize * height as usize {
        return Err(Error::domain("PNG value count does not match dimensions"));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header().map_err(|e| Error::domain(format!("PNG header: {e}")))?;
        let data: Vec<u8> = values
            .iter()
            .flat_map(|v| {
                let q = if v.is_nan() { 0 } else { (v.clamp(0.0, 1.0) * 65535.0).round() as u16 };
                q.to_be_bytes()
            })
            .collect();
        writer
            .write_image_data(&data)
            .map_err(|e| Error::domain(format!("PNG data: {e}")))?;
    }
    Ok(out)
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes`, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

macro_rules! file_pair {
    ($read:ident, $write:ident, $ty:ty, $enc:ident, $dec:ident) => {
        pub fn $read(path: &Path) -> Result<$ty> {
            $dec(&read_bytes(path)?, path)
        }

        pub fn $write(path: &Path, value: &$ty) -> Result<()> {
            write_bytes(path, &$enc(value))
        }
    };
}

file_pair!(read_depth, write_depth, DepthMap, encode_depth, decode_depth);
file_pair!(read_mask, write_mask, LabelMap, encode_mask, decode_mask);
file_pair!(read_uncertainty, write_uncertainty, UncertaintyMap, encode_uncertainty, decode_uncertainty);
file_pair!(read_grid, write_grid, SdfGrid, encode_grid, decode_grid);
file_pair!(read_ppm, write_ppm, RgbImage, encode_ppm, decode_ppm);

pub fn read_cloud(path: &Path) -> Result<Vec<Vec3>> {
    decode_cloud(&read_bytes(path)?, path)
}

pub fn write_cloud(path: &Path, points: &[Vec3]) -> Result<()> {
    write_bytes(path, &encode_cloud(points))
}
