//! Post-hoc fixes for the two metadata defects: depth rasters that are
//! spatially stretched relative to color in ARKit sessions, and wrong factory
//! focal lengths. Also flips ARKit frames back into AV orientation.

use rayon::prelude::*;
use serde::Serialize;

use crate::camera::{bilinear, DepthMap, Intrinsics, Raster, Sample, DEPTH_HEIGHT, DEPTH_WIDTH};
use crate::error::{Error, Result};
use crate::metadata::SessionPair;

/// Per-axis zoom applied about the principal point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZoomFactors {
    pub zx: f64,
    pub zy: f64,
}

impl ZoomFactors {
    pub const IDENTITY: ZoomFactors = ZoomFactors { zx: 1.0, zy: 1.0 };

    pub fn new(zx: f64, zy: f64) -> Result<Self> {
        for (name, z) in [("zx", zx), ("zy", zy)] {
            if !(z > 0.5 && z < 2.0) {
                return Err(Error::DomainError(format!("zoom {name} = {z} outside (0.5, 2)")));
            }
        }
        Ok(ZoomFactors { zx, zy })
    }

    pub fn uniform(z: f64) -> Result<Self> {
        Self::new(z, z)
    }
}

/// `IRD_av / IRD_ar` per axis.
pub fn zoom_factors(pair: &SessionPair) -> Result<ZoomFactors> {
    let (aw, ah) = pair.av.intrinsic_reference_dimensions;
    let (rw, rh) = pair.ar.intrinsic_reference_dimensions;
    ZoomFactors::new(aw as f64 / rw as f64, ah as f64 / rh as f64)
}

#[inline]
fn zoom_source(q: f64, c: f64, z: f64) -> f64 {
    if z == 1.0 {
        q
    } else {
        c + (q - c) / z
    }
}

/// Resamples depth so that output pixel `q` reads the input at
/// `cpp + (q - cpp) / z`. Depth values are interpolated, never rescaled.
/// Pixels whose source falls outside the raster (or touches an invalid pixel)
/// come out invalid.
pub fn zoom_depth_map(d: &DepthMap, k: &Intrinsics, z: ZoomFactors) -> Result<DepthMap> {
    ZoomFactors::new(z.zx, z.zy)?;
    if k.ref_w as usize != d.width() || k.ref_h as usize != d.height() {
        return Err(Error::DimensionError(format!(
            "intrinsics at {}x{} but depth is {}x{}",
            k.ref_w,
            k.ref_h,
            d.width(),
            d.height()
        )));
    }
    let src = d.raster();
    let mut out = vec![f32::NAN; src.width * src.height];
    out.par_chunks_exact_mut(src.width)
        .enumerate()
        .for_each(|(j, row)| {
            let v = zoom_source(j as f64, k.cy, z.zy);
            for (i, px) in row.iter_mut().enumerate() {
                let u = zoom_source(i as f64, k.cx, z.zx);
                if let Sample::Value(val) = bilinear(src, u, v) {
                    *px = val as f32;
                }
            }
        });
    DepthMap::from_vec(out)
}

/// Corrected focal length at the metadata's reference dimensions and at VGA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FocalCorrection {
    pub f_corrected: f64,
    pub f_vga: f64,
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::DomainError(format!("{name} must be > 0, got {x}")))
    }
}

/// AV-session correction: `f_av^2 / f_ar`, then scaled by `640 / IRD_av_w`.
pub fn correct_focal_av(f_unscaled_av: f64, f_unscaled_ar: f64, ird_av_w: f64) -> Result<FocalCorrection> {
    positive("f_unscaled_av", f_unscaled_av)?;
    positive("f_unscaled_ar", f_unscaled_ar)?;
    positive("ird_av_w", ird_av_w)?;
    let f_corrected = f_unscaled_av * f_unscaled_av / f_unscaled_ar;
    Ok(FocalCorrection {
        f_corrected,
        f_vga: f_corrected * DEPTH_WIDTH as f64 / ird_av_w,
    })
}

/// ARKit-session correction: `f_ar * (1 + 2 * (1 - f_ar / f_av))`, then scaled
/// by `640 / IRD_ar_w`.
///
/// The doubled factor is empirical: ARKit's focal is off by about the same
/// ratio as AV's, but in the same direction again.
pub fn correct_focal_ar(f_unscaled_ar: f64, f_unscaled_av: f64, ird_ar_w: f64) -> Result<FocalCorrection> {
    positive("f_unscaled_ar", f_unscaled_ar)?;
    positive("f_unscaled_av", f_unscaled_av)?;
    positive("ird_ar_w", ird_ar_w)?;
    let f_corrected = f_unscaled_ar * (1.0 + 2.0 * (1.0 - f_unscaled_ar / f_unscaled_av));
    if !(f_corrected > 0.0) {
        return Err(Error::DomainError(format!(
            "correction drives the focal length to {f_corrected}"
        )));
    }
    Ok(FocalCorrection {
        f_corrected,
        f_vga: f_corrected * DEPTH_WIDTH as f64 / ird_ar_w,
    })
}

/// Undoes the left-right mirroring of ARKit frames: flips every row and maps
/// `cx` to `(width - 1) - cx`.
pub fn normalize_arkit_frame<T: Clone>(r: &Raster<T>, k: &Intrinsics) -> Result<(Raster<T>, Intrinsics)> {
    if k.ref_w as usize != r.width || k.ref_h as usize != r.height {
        return Err(Error::DimensionError(format!(
            "intrinsics at {}x{} but raster is {}x{}",
            k.ref_w, k.ref_h, r.width, r.height
        )));
    }
    let mut k2 = *k;
    k2.cx = (r.width as f64 - 1.0) - k.cx;
    k2.validate()?;
    Ok((r.flip_horizontal(), k2))
}

/// [`normalize_arkit_frame`] for depth maps.
pub fn normalize_arkit_depth(d: &DepthMap, k: &Intrinsics) -> Result<(DepthMap, Intrinsics)> {
    let (r, k2) = normalize_arkit_frame(d.raster(), k)?;
    Ok((DepthMap::new(r)?, k2))
}

/// `true` when `k` is expressed at the depth raster resolution.
pub fn is_vga(k: &Intrinsics) -> bool {
    k.ref_w as usize == DEPTH_WIDTH && k.ref_h as usize == DEPTH_HEIGHT
}
