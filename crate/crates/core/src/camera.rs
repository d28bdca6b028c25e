//! Pinhole camera model, depth rasters and the projection / unprojection
//! primitives everything else is built on.
//!
//! Pixel convention: `(i, j)` addresses the *center* of the pixel in column
//! `i`, row `j`, both 0-based. Unprojection uses `[i, j, 1]` literally, so a
//! half-pixel offset is never introduced anywhere in the crate.

use nalgebra::{Matrix3, Point3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of every depth raster the sensor produces.
pub const DEPTH_WIDTH: usize = 640;
/// Height of every depth raster the sensor produces.
pub const DEPTH_HEIGHT: usize = 480;

/// Pinhole intrinsics together with the pixel dimensions they refer to.
///
/// `K = [[f, skew, cx], [0, f * aspect, cy], [0, 0, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub f: f64,
    pub aspect: f64,
    pub skew: f64,
    pub cx: f64,
    pub cy: f64,
    pub ref_w: u32,
    pub ref_h: u32,
}

impl Intrinsics {
    /// Square-pixel, zero-skew intrinsics (the only kind factory metadata carries).
    pub fn new(f: f64, cx: f64, cy: f64, ref_w: u32, ref_h: u32) -> Result<Self> {
        Self::general(f, 1.0, 0.0, cx, cy, ref_w, ref_h)
    }

    pub fn general(
        f: f64,
        aspect: f64,
        skew: f64,
        cx: f64,
        cy: f64,
        ref_w: u32,
        ref_h: u32,
    ) -> Result<Self> {
        let k = Intrinsics {
            f,
            aspect,
            skew,
            cx,
            cy,
            ref_w,
            ref_h,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f.is_finite() && self.f > 0.0) {
            return Err(Error::invariant("f", format!("must be > 0, got {}", self.f)));
        }
        if !(self.aspect.is_finite() && self.aspect > 0.0) {
            return Err(Error::invariant("aspect", "must be finite and > 0"));
        }
        if !self.skew.is_finite() {
            return Err(Error::invariant("skew", "must be finite"));
        }
        if self.ref_w == 0 || self.ref_h == 0 {
            return Err(Error::invariant("ref_w/ref_h", "reference dimensions must be > 0"));
        }
        if !(self.cx >= 0.0 && self.cx < self.ref_w as f64) {
            return Err(Error::invariant(
                "cx",
                format!("{} outside [0, {})", self.cx, self.ref_w),
            ));
        }
        if !(self.cy >= 0.0 && self.cy < self.ref_h as f64) {
            return Err(Error::invariant(
                "cy",
                format!("{} outside [0, {})", self.cy, self.ref_h),
            ));
        }
        Ok(())
    }

    /// Vertical focal length `f * aspect`.
    pub fn fy(&self) -> f64 {
        self.f * self.aspect
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.f, self.skew, self.cx, //
            0.0, self.fy(), self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }

    /// Maps a pixel to normalized image coordinates (inverse of `K` on the plane z = 1).
    pub fn normalize(&self, u: f64, v: f64) -> (f64, f64) {
        let y = (v - self.cy) / self.fy();
        let x = (u - self.cx - self.skew * y) / self.f;
        (x, y)
    }

    pub fn denormalize(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.f * x + self.skew * y + self.cx,
            self.fy() * y + self.cy,
        )
    }

    pub fn with_focal(&self, f: f64) -> Result<Self> {
        let mut k = *self;
        k.f = f;
        k.validate()?;
        Ok(k)
    }
}

/// Projects a camera-frame point to pixel coordinates.
pub fn project(p: &Point3<f64>, k: &Intrinsics) -> Result<(f64, f64)> {
    if !(p.z > 0.0) {
        return Err(Error::DegenerateProjection { z: p.z });
    }
    Ok(k.denormalize(p.x / p.z, p.y / p.z))
}

/// Rescales intrinsics to a new resolution with the same aspect ratio.
pub fn rescale_intrinsics(k: &Intrinsics, new_w: u32, new_h: u32) -> Result<Intrinsics> {
    let mismatch = || Error::AspectMismatch {
        from_w: k.ref_w,
        from_h: k.ref_h,
        to_w: new_w,
        to_h: new_h,
    };
    if new_w == 0 || new_h == 0 {
        return Err(mismatch());
    }
    let old_ratio = k.ref_w as f64 / k.ref_h as f64;
    let new_ratio = new_w as f64 / new_h as f64;
    if ((new_ratio - old_ratio) / old_ratio).abs() > 1e-6 {
        return Err(mismatch());
    }
    if new_w == k.ref_w && new_h == k.ref_h {
        return Ok(*k);
    }
    let s = new_w as f64 / k.ref_w as f64;
    Ok(Intrinsics {
        f: k.f * s,
        cx: k.cx * s,
        cy: k.cy * s,
        ref_w: new_w,
        ref_h: new_h,
        ..*k
    })
}

/// Row-major 2D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Raster {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionError(format!(
                "{} values for a {width}x{height} raster",
                data.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                data.push(f(i, j));
            }
        }
        Raster {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[j * self.width + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: T) {
        self.data[j * self.width + i] = value;
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.width)
    }

    /// Mirrors every row left-to-right.
    pub fn flip_horizontal(&self) -> Self {
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.width) {
            row.reverse();
        }
        Raster {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// 8-bit RGB image.
pub type RgbImage = Raster<[u8; 3]>;

/// Outcome of a bilinear lookup on a float raster where NaN marks invalid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Sample {
    Value(f64),
    Invalid,
    OutOfBounds,
}

/// Bilinear lookup. Only neighbors with non-zero weight contribute, so a
/// lattice-point query reads exactly one pixel. Any contributing NaN makes the
/// sample invalid.
pub(crate) fn bilinear(r: &Raster<f32>, u: f64, v: f64) -> Sample {
    let max_u = (r.width as f64) - 1.0;
    let max_v = (r.height as f64) - 1.0;
    if !(u >= 0.0 && v >= 0.0 && u <= max_u && v <= max_v) {
        return Sample::OutOfBounds;
    }
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = u - x0;
    let fy = v - y0;
    let (x0, y0) = (x0 as usize, y0 as usize);

    let mut acc = 0.0;
    let taps = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ];
    for (x, y, w) in taps {
        if w == 0.0 {
            continue;
        }
        let d = *r.get(x, y);
        if d.is_nan() {
            return Sample::Invalid;
        }
        acc += w * d as f64;
    }
    Sample::Value(acc)
}

/// A `640x480` metric depth map in meters. NaN marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap(Raster<f32>);

impl DepthMap {
    pub fn new(raster: Raster<f32>) -> Result<Self> {
        if raster.width != DEPTH_WIDTH || raster.height != DEPTH_HEIGHT {
            return Err(Error::DimensionError(format!(
                "depth maps are {DEPTH_WIDTH}x{DEPTH_HEIGHT}, got {}x{}",
                raster.width, raster.height
            )));
        }
        if let Some(bad) = raster.data.iter().find(|d| !d.is_nan() && !(d.is_finite() && **d > 0.0)) {
            return Err(Error::DomainError(format!(
                "depth values must be finite and > 0 (or NaN for invalid), found {bad}"
            )));
        }
        Ok(DepthMap(raster))
    }

    pub fn from_vec(values: Vec<f32>) -> Result<Self> {
        Self::new(Raster::from_vec(DEPTH_WIDTH, DEPTH_HEIGHT, values)?)
    }

    pub fn constant(depth: f32) -> Result<Self> {
        Self::new(Raster::filled(DEPTH_WIDTH, DEPTH_HEIGHT, depth))
    }

    pub fn invalid() -> Self {
        DepthMap(Raster::filled(DEPTH_WIDTH, DEPTH_HEIGHT, f32::NAN))
    }

    pub fn from_fn(f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        Self::new(Raster::from_fn(DEPTH_WIDTH, DEPTH_HEIGHT, f))
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn raster(&self) -> &Raster<f32> {
        &self.0
    }

    pub fn into_raster(self) -> Raster<f32> {
        self.0
    }

    pub fn values(&self) -> &[f32] {
        &self.0.data
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        *self.0.get(i, j)
    }

    pub fn valid_count(&self) -> usize {
        self.0.data.iter().filter(|d| !d.is_nan()).count()
    }

    /// Finite `(min, max)` over valid pixels.
    pub fn range(&self) -> Option<(f32, f32)> {
        self.0
            .data
            .iter()
            .filter(|d| !d.is_nan())
            .fold(None, |acc, &d| match acc {
                None => Some((d, d)),
                Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
            })
    }
}

/// Lifts pixel `(i, j)` to the camera frame: `D(i,j) * K^-1 * [i, j, 1]`.
pub fn unproject(d: &DepthMap, k: &Intrinsics, i: usize, j: usize) -> Result<Point3<f64>> {
    if i >= d.width() || j >= d.height() {
        return Err(Error::IndexError {
            u: i as f64,
            v: j as f64,
            width: d.width(),
            height: d.height(),
        });
    }
    let z = d.get(i, j);
    if z.is_nan() {
        return Err(Error::InvalidDepthSample {
            u: i as f64,
            v: j as f64,
        });
    }
    Ok(lift(k, i as f64, j as f64, z as f64))
}

#[inline]
pub(crate) fn lift(k: &Intrinsics, u: f64, v: f64, z: f64) -> Point3<f64> {
    let (x, y) = k.normalize(u, v);
    Point3::new(x * z, y * z, z)
}

/// One point per valid pixel, row-major.
pub fn unproject_all(d: &DepthMap, k: &Intrinsics) -> Vec<Point3<f64>> {
    let mut out = Vec::with_capacity(d.valid_count());
    for (j, row) in d.raster().rows().enumerate() {
        for (i, &z) in row.iter().enumerate() {
            if !z.is_nan() {
                out.push(lift(k, i as f64, j as f64, z as f64));
            }
        }
    }
    out
}

/// Bilinearly interpolated depth at a sub-pixel location.
pub fn sample_bilinear(d: &DepthMap, u: f64, v: f64) -> Result<f64> {
    match bilinear(d.raster(), u, v) {
        Sample::Value(z) => Ok(z),
        Sample::Invalid => Err(Error::InvalidDepthSample { u, v }),
        Sample::OutOfBounds => Err(Error::IndexError {
            u,
            v,
            width: d.width(),
            height: d.height(),
        }),
    }
}
