//! Radial distortion as lookup tables of magnification vs. normalized radius.
//!
//! A table entry `m` displaces a point radially: `p' = c + (1 + m) * (p - c)`.
//! Entries are spaced uniformly in radius from 0 to `r_max`, where `r_max` is
//! the distance from the distortion center to the farthest corner of the
//! reference frame `[0, ref_w] x [0, ref_h]`. Queries beyond `r_max` reuse
//! the last entry.
//!
//! Forward and inverse tables are both applied with [`warp_point`]; the
//! inverse is never derived from the forward table at application time.

use nalgebra::Matrix2;
use rayon::prelude::*;

use crate::camera::{bilinear, Raster, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RadialLut {
    magnifications: Vec<f64>,
    center: (f64, f64),
    ref_w: u32,
    ref_h: u32,
}

impl RadialLut {
    pub fn new(magnifications: Vec<f64>, center: (f64, f64), ref_w: u32, ref_h: u32) -> Result<Self> {
        if magnifications.len() < 2 {
            return Err(Error::invariant(
                "distortion_lut",
                format!("need at least 2 entries, got {}", magnifications.len()),
            ));
        }
        if magnifications.iter().any(|m| !m.is_finite()) {
            return Err(Error::invariant("distortion_lut", "entries must be finite"));
        }
        if ref_w == 0 || ref_h == 0 {
            return Err(Error::invariant("distortion_lut", "reference dimensions must be > 0"));
        }
        if !(center.0.is_finite() && center.1.is_finite()) {
            return Err(Error::invariant("lens_distortion_center", "must be finite"));
        }
        Ok(RadialLut {
            magnifications,
            center,
            ref_w,
            ref_h,
        })
    }

    /// All-zero table (identity warp).
    pub fn identity(len: usize, center: (f64, f64), ref_w: u32, ref_h: u32) -> Result<Self> {
        Self::new(vec![0.0; len], center, ref_w, ref_h)
    }

    pub fn magnifications(&self) -> &[f64] {
        &self.magnifications
    }

    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    pub fn reference_dimensions(&self) -> (u32, u32) {
        (self.ref_w, self.ref_h)
    }

    pub fn r_max(&self) -> f64 {
        let (cx, cy) = self.center;
        let (w, h) = (self.ref_w as f64, self.ref_h as f64);
        [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
            .iter()
            .map(|&(x, y)| (x - cx).hypot(y - cy))
            .fold(0.0, f64::max)
    }

    /// Magnification at radius `r` (reference pixels), linearly interpolated.
    pub fn magnification_at(&self, r: f64) -> f64 {
        let r_max = self.r_max();
        let n = self.magnifications.len();
        if r_max <= 0.0 {
            return self.magnifications[0];
        }
        let t = (r / r_max).max(0.0) * (n - 1) as f64;
        if t >= (n - 1) as f64 {
            return self.magnifications[n - 1];
        }
        let i = t.floor() as usize;
        let w = t - i as f64;
        let (a, b) = (self.magnifications[i], self.magnifications[i + 1]);
        a + w * (b - a)
    }

    /// The same table expressed for a raster scaled by `s` relative to the reference frame.
    fn scaled(&self, s: f64) -> ScaledLut<'_> {
        ScaledLut {
            lut: self,
            scale: s,
            center: (self.center.0 * s, self.center.1 * s),
        }
    }
}

struct ScaledLut<'a> {
    lut: &'a RadialLut,
    scale: f64,
    center: (f64, f64),
}

impl ScaledLut<'_> {
    fn warp(&self, u: f64, v: f64) -> (f64, f64) {
        let (cx, cy) = self.center;
        let (dx, dy) = (u - cx, v - cy);
        let r = dx.hypot(dy) / self.scale;
        let m = self.lut.magnification_at(r);
        if m == 0.0 {
            // c + (p - c) need not round back to p
            return (u, v);
        }
        let g = 1.0 + m;
        (cx + g * dx, cy + g * dy)
    }
}

/// Displaces a point (reference pixel coordinates) radially about the distortion center.
pub fn warp_point(lut: &RadialLut, u: f64, v: f64) -> (f64, f64) {
    lut.scaled(1.0).warp(u, v)
}

/// Inverse-mapping warp: output pixel `q` takes the input bilinearly sampled at
/// `warp_point(lut, q)`. Samples outside the source, or touching NaN, become NaN.
///
/// The raster may be any size proportional to the table's reference frame.
pub fn warp_image(img: &Raster<f32>, lut: &RadialLut) -> Result<Raster<f32>> {
    let (rw, rh) = (lut.ref_w as f64, lut.ref_h as f64);
    let s = img.width as f64 / rw;
    if img.width == 0 || img.height == 0 || ((img.height as f64 / rh) - s).abs() > 1e-9 * s.max(1.0) {
        return Err(Error::DimensionError(format!(
            "{}x{} raster is not proportional to the {}x{} table frame",
            img.width, img.height, lut.ref_w, lut.ref_h
        )));
    }
    let scaled = lut.scaled(s);
    let mut out = vec![f32::NAN; img.width * img.height];
    out.par_chunks_exact_mut(img.width)
        .enumerate()
        .for_each(|(j, row)| {
            for (i, px) in row.iter_mut().enumerate() {
                let (u, v) = scaled.warp(i as f64, j as f64);
                if let Sample::Value(z) = bilinear(img, u, v) {
                    *px = z as f32;
                }
            }
        });
    Raster::from_vec(img.width, img.height, out)
}

/// Largest RMS perpendicular residual of a total-least-squares line fit over
/// the given point groups. Zero for perfectly straight rows of corners.
pub fn detect_residual_distortion(groups: &[Vec<(f64, f64)>]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::InsufficientPoints { needed: 1, got: 0 });
    }
    let mut worst: f64 = 0.0;
    for g in groups {
        if g.len() < 3 {
            return Err(Error::InsufficientPoints {
                needed: 3,
                got: g.len(),
            });
        }
        worst = worst.max(line_fit_rms(g));
    }
    Ok(worst)
}

fn line_fit_rms(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x / n, b + y / n));
    let mut cov = Matrix2::<f64>::zeros();
    for &(x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        cov[(0, 0)] += dx * dx / n;
        cov[(0, 1)] += dx * dy / n;
        cov[(1, 1)] += dy * dy / n;
    }
    cov[(1, 0)] = cov[(0, 1)];
    // smallest eigenvalue of the scatter is the mean squared orthogonal distance
    let eig = cov.symmetric_eigen();
    eig.eigenvalues.min().max(0.0).sqrt()
}
