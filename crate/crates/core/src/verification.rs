//! Checks depth against a board of known geometry: the board pose (from its
//! corners) predicts each corner's Z, the depth map measures it, and the
//! difference `d = Z_depth - Z_board` is reported in millimeters.

use std::fmt::Write as _;

use serde::Serialize;

use crate::camera::{bilinear, rescale_intrinsics, DepthMap, Intrinsics, RgbImage, Sample, DEPTH_HEIGHT, DEPTH_WIDTH};
use crate::error::{Error, Result};
use crate::pose::{solve_pnp, Correspondence, PoseRecord};

pub const DEFAULT_BIN_WIDTH_MM: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CornerDepth {
    pub id: u32,
    pub z_depth: f64,
    pub z_board: f64,
    pub d: f64,
}

/// Bins `[edges[i], edges[i + 1])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Bins of width `w` aligned to multiples of `w`, covering every sample.
    pub fn build(samples: &[f64], w: f64) -> Result<Self> {
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::DomainError(format!("bin width must be > 0, got {w}")));
        }
        if samples.is_empty() {
            return Err(Error::NoValidSamples);
        }
        let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let first = (lo / w).floor() as i64;
        let last = (hi / w).floor() as i64;
        let n = (last - first + 1) as usize;
        let edges = (0..=n).map(|i| (first + i as i64) as f64 * w).collect();
        let mut counts = vec![0; n];
        for &s in samples {
            let i = ((s / w).floor() as i64 - first).clamp(0, n as i64 - 1) as usize;
            counts[i] += 1;
        }
        Ok(Histogram { edges, counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_low,bin_high,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", self.edges[i], self.edges[i + 1], c);
        }
        s
    }

    /// Sample standard deviation computed from bin centers.
    pub fn binned_std(&self) -> f64 {
        let n = self.total() as f64;
        let center = |i: usize| 0.5 * (self.edges[i] + self.edges[i + 1]);
        let mean = self.counts.iter().enumerate().map(|(i, &c)| c as f64 * center(i)).sum::<f64>() / n;
        let ss = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * (center(i) - mean).powi(2))
            .sum::<f64>();
        (ss / (n - 1.0).max(1.0)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthErrorReport {
    pub schema_version: u32,
    pub intrinsics_label: String,
    pub f: f64,
    pub pose: PoseRecord,
    /// Pose-solve RMS reprojection error, px.
    pub rms_reproj: f64,
    pub count: usize,
    pub invalid_corners: usize,
    pub mean_d: f64,
    pub median_d: f64,
    pub std_d: f64,
    pub histogram: Histogram,
    pub records: Vec<CornerDepth>,
}

impl DepthErrorReport {
    pub fn summary(&self) -> String {
        format!(
            "{}: n={} mean {:.3} mm, median {:.3} mm, std {:.3} mm ({} corners without depth)",
            self.intrinsics_label, self.count, self.mean_d, self.median_d, self.std_d, self.invalid_corners
        )
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub bin_width_mm: f64,
    pub label: String,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            bin_width_mm: DEFAULT_BIN_WIDTH_MM,
            label: "factory".into(),
        }
    }
}

pub fn verify_depth(d: &DepthMap, corrs: &[Correspondence], k: &Intrinsics) -> Result<DepthErrorReport> {
    verify_depth_with(d, corrs, k, &VerifyOptions::default())
}

pub fn verify_depth_with(
    d: &DepthMap,
    corrs: &[Correspondence],
    k: &Intrinsics,
    opts: &VerifyOptions,
) -> Result<DepthErrorReport> {
    if (k.ref_w as usize, k.ref_h as usize) != (DEPTH_WIDTH, DEPTH_HEIGHT) {
        return Err(Error::DimensionError(format!(
            "intrinsics are at {}x{}, depth is {DEPTH_WIDTH}x{DEPTH_HEIGHT}",
            k.ref_w, k.ref_h
        )));
    }
    let sol = solve_pnp(corrs, k)?;
    let mut records = Vec::new();
    let mut invalid = 0;
    for c in corrs {
        let z_board = sol.pose.transform(&c.board_point).z * 1000.0;
        match bilinear(d.raster(), c.pixel.0, c.pixel.1) {
            Sample::Value(z) => {
                let z_depth = z * 1000.0;
                records.push(CornerDepth {
                    id: c.id,
                    z_depth,
                    z_board,
                    d: z_depth - z_board,
                });
            }
            _ => invalid += 1,
        }
    }
    if records.is_empty() {
        return Err(Error::NoValidSamples);
    }
    let ds: Vec<f64> = records.iter().map(|r| r.d).collect();
    let n = ds.len() as f64;
    let mean = ds.iter().sum::<f64>() / n;
    let std = if ds.len() > 1 {
        (ds.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = ds.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    };
    Ok(DepthErrorReport {
        schema_version: 1,
        intrinsics_label: opts.label.clone(),
        f: k.f,
        pose: PoseRecord::from(&sol.pose),
        rms_reproj: sol.rms_px,
        count: records.len(),
        invalid_corners: invalid,
        mean_d: mean,
        median_d: median,
        std_d: std,
        histogram: Histogram::build(&ds, opts.bin_width_mm)?,
        records,
    })
}

/// 256-entry ramp: blue at 0, green at 127/128, red at 255.
pub fn color_ramp() -> [[u8; 3]; 256] {
    let mut lut = [[0u8; 3]; 256];
    for (i, c) in lut.iter_mut().enumerate() {
        let s = i as f64 / 255.0;
        let (r, g, b) = if s < 0.5 {
            (0.0, 2.0 * s, 1.0 - 2.0 * s)
        } else {
            (2.0 * s - 1.0, 2.0 - 2.0 * s, 0.0)
        };
        *c = [(r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8];
    }
    lut
}

/// Color-codes depth over an RGB image. Near surfaces are red, far blue; the
/// ramp spans the valid inverse-depth range and constant depth maps to the
/// middle entry. Depth is looked up by nearest neighbour through `k_color`
/// rescaled to the depth resolution; invalid depth leaves the RGB pixel as is.
pub fn render_overlay(rgb: &RgbImage, d: &DepthMap, k_color: &Intrinsics) -> Result<RgbImage> {
    let (w, h) = (rgb.width, rgb.height);
    if w == 0 || w * DEPTH_HEIGHT != h * DEPTH_WIDTH {
        return Err(Error::DimensionError(format!(
            "{w}x{h} color image is not 4:3 like the depth map"
        )));
    }
    if (k_color.ref_w as usize, k_color.ref_h as usize) != (w, h) {
        return Err(Error::DimensionError(format!(
            "color intrinsics are at {}x{}, image is {w}x{h}",
            k_color.ref_w, k_color.ref_h
        )));
    }
    let kd = rescale_intrinsics(k_color, DEPTH_WIDTH as u32, DEPTH_HEIGHT as u32)
        .map_err(|e| Error::DimensionError(e.to_string()))?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &z in d.values() {
        if z.is_finite() {
            let inv = 1.0 / z as f64;
            lo = lo.min(inv);
            hi = hi.max(inv);
        }
    }
    let ramp = color_ramp();
    let mut out = rgb.clone();
    if !lo.is_finite() {
        return Ok(out);
    }
    for j in 0..h {
        for i in 0..w {
            let (x, y) = k_color.normalize(i as f64, j as f64);
            let (u, v) = kd.denormalize(x, y);
            let (wd, hd) = (DEPTH_WIDTH as f64, DEPTH_HEIGHT as f64);
            if !(u >= -0.5 && v >= -0.5 && u <= wd - 0.5 && v <= hd - 0.5) {
                continue;
            }
            let ui = (u.round().max(0.0) as usize).min(DEPTH_WIDTH - 1);
            let vi = (v.round().max(0.0) as usize).min(DEPTH_HEIGHT - 1);
            let z = d.get(ui, vi);
            if !z.is_finite() {
                continue;
            }
            let t = if hi > lo { (1.0 / z as f64 - lo) / (hi - lo) } else { 0.5 };
            let c = ramp[(t * 255.0).round().clamp(0.0, 255.0) as usize];
            let px = &mut out.data[j * w + i];
            for ch in 0..3 {
                px[ch] = ((px[ch] as u16 + c[ch] as u16 + 1) / 2) as u8;
            }
        }
    }
    Ok(out)
}

/// SVG chart plus one CSV per report, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramDocs {
    pub svg: String,
    pub csv: Vec<String>,
}

const SERIES_COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub fn emit_histogram(reports: &[&DepthErrorReport]) -> Result<HistogramDocs> {
    if reports.is_empty() || reports.iter().any(|r| r.count == 0 || r.histogram.total() == 0) {
        return Err(Error::NoValidSamples);
    }
    let (width, height) = (800.0, 600.0);
    let (left, right, top, bottom) = (70.0, 30.0, 40.0, 70.0);
    let pw = width - left - right;
    let ph = height - top - bottom;
    let x0 = reports.iter().map(|r| r.histogram.edges[0]).fold(f64::INFINITY, f64::min);
    let mut x1 = reports
        .iter()
        .map(|r| *r.histogram.edges.last().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let ymax = reports
        .iter()
        .flat_map(|r| r.histogram.counts.iter())
        .cloned()
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |c: f64| top + ph - c / ymax * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="800" height="600" viewBox="0 0 800 600" font-family="sans-serif" font-size="12">"#
    );
    s.push_str("<rect width=\"800\" height=\"600\" fill=\"white\"/>\n");
    let n = reports.len() as f64;
    for (k, r) in reports.iter().enumerate() {
        let color = SERIES_COLORS[k % SERIES_COLORS.len()];
        let h = &r.histogram;
        for (i, &c) in h.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let (a, b) = (sx(h.edges[i]), sx(h.edges[i + 1]));
            let bw = (b - a) / n;
            let x = a + bw * k as f64;
            let y = sy(c as f64);
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.8"/>"#,
                bw.max(0.5),
                top + ph - y
            );
        }
    }
    // axes
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + ph);
    for i in 0..=5 {
        let x = x0 + (x1 - x0) * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x:.2}</text>"#,
            sx(x),
            top + ph + 18.0
        );
        let c = ymax * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{c:.0}</text>"#,
            left - 6.0,
            sy(c) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">d = Z_depth - Z_board [mm]</text>"#,
        left + pw / 2.0,
        height - 20.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">corners</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    if reports.len() > 1 {
        for (k, r) in reports.iter().enumerate() {
            let y = top + 10.0 + 18.0 * k as f64;
            let color = SERIES_COLORS[k % SERIES_COLORS.len()];
            let _ = writeln!(
                s,
                r#"<g class="legend"><rect x="{:.2}" y="{:.2}" width="12" height="12" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
                left + pw - 150.0,
                y,
                left + pw - 132.0,
                y + 10.0,
                escape(&r.intrinsics_label)
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(HistogramDocs {
        svg: s,
        csv: reports.iter().map(|r| r.histogram.to_csv()).collect(),
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{exact_correspondences, render_view, SceneSpec};
    use crate::correction::correct_focal_av;
    use crate::io::match_corners;
    use crate::pose::Pose;

    fn frontal() -> (SceneSpec, DepthMap, Vec<Correspondence>) {
        let spec = SceneSpec::frontal(565.0, 0.2, 3);
        let b = render_view(&spec, 0).unwrap();
        let corrs = b.correspondences().unwrap();
        (spec, b.depth, corrs)
    }

    #[test]
    fn exact_scene_has_zero_error() {
        let (spec, d, corrs) = frontal();
        let r = verify_depth(&d, &corrs, &spec.true_intrinsics).unwrap();
        assert_eq!(r.count, 500);
        assert_eq!(r.invalid_corners, 0);
        // depth is stored as f32, so 0.2 m carries a ~3e-9 m representation error
        assert!(r.mean_d.abs() < 1e-5, "{}", r.mean_d);
        assert_eq!(r.histogram.total(), r.count);
        for rec in &r.records {
            assert_eq!(rec.d, rec.z_depth - rec.z_board);
        }
    }

    #[test]
    fn representable_depth_closes_exactly() {
        // 0.25 is exact in f32, so the only error left is the pose solve
        let spec = SceneSpec::frontal(565.0, 0.25, 3);
        let b = render_view(&spec, 0).unwrap();
        let r = verify_depth(&b.depth, &b.correspondences().unwrap(), &spec.true_intrinsics).unwrap();
        assert!(r.mean_d.abs() < 1e-9, "{}", r.mean_d);
    }

    #[test]
    fn inflated_focal_pushes_board_away() {
        let (spec, d, corrs) = frontal();
        let k = spec.true_intrinsics.with_focal(565.0 * 1.0754).unwrap();
        let lied = verify_depth(&d, &corrs, &k).unwrap();
        assert!(lied.mean_d < -10.0 && lied.mean_d > -18.0, "{}", lied.mean_d);
        // board Z scales with the focal ratio; depth samples do not move
        let truth = verify_depth(&d, &corrs, &spec.true_intrinsics).unwrap();
        for (a, b) in lied.records.iter().zip(&truth.records) {
            assert_eq!(a.z_depth, b.z_depth);
            assert!((a.z_board / b.z_board - 1.0754).abs() < 0.01);
        }
        // lying AV focal f*l and ARKit focal f*l^2 corrects back to f
        let fixed = correct_focal_av(565.0 * 1.0754, 565.0 * 1.0754 * 1.0754, 640.0).unwrap();
        let k = spec.true_intrinsics.with_focal(fixed.f_vga).unwrap();
        assert!(verify_depth(&d, &corrs, &k).unwrap().mean_d.abs() < 1.0);
    }

    #[test]
    fn invalid_depth_is_dropped_and_counted() {
        let (spec, _, corrs) = frontal();
        let d = DepthMap::invalid();
        assert!(matches!(verify_depth(&d, &corrs, &spec.true_intrinsics), Err(Error::NoValidSamples)));
        let half = DepthMap::from_fn(|i, _| if i < 320 { f32::NAN } else { 0.2 }).unwrap();
        let r = verify_depth(&half, &corrs, &spec.true_intrinsics).unwrap();
        assert_eq!(r.count + r.invalid_corners, corrs.len());
        assert!(r.invalid_corners > 0 && r.count > 0);
    }

    #[test]
    fn depth_noise_shows_in_histogram() {
        let mut spec = SceneSpec::frontal(500.0, 0.2, 17);
        spec.depth_noise_sigma = 0.001;
        let b = render_view(&spec, 0).unwrap();
        let corrs = b.correspondences().unwrap();
        // corners sit on integer pixels so bilinear sampling does not average noise away
        assert!(corrs.iter().all(|c| (c.pixel.0 - c.pixel.0.round()).abs() < 1e-9));
        let r = verify_depth(&b.depth, &corrs, &spec.true_intrinsics).unwrap();
        assert_eq!(r.count, 500);
        let std = r.histogram.binned_std();
        assert!((std - 1.0).abs() < 0.15, "{std}");
    }

    #[test]
    fn histogram_bins() {
        let h = Histogram::build(&[0.0], 0.25).unwrap();
        assert_eq!(h.counts, vec![1]);
        assert!(h.edges[0] <= 0.0 && 0.0 < h.edges[1]);
        let h = Histogram::build(&[-0.3, 0.1, 0.26, 0.5], 0.25).unwrap();
        assert_eq!(h.edges.first(), Some(&-0.5));
        assert_eq!(h.total(), 4);
        assert_eq!(h.to_csv().lines().next(), Some("bin_low,bin_high,count"));
        assert!(Histogram::build(&[], 0.25).is_err());
    }

    #[test]
    fn svg_legend_matches_labels() {
        let (spec, d, corrs) = frontal();
        let a = verify_depth_with(&d, &corrs, &spec.true_intrinsics, &VerifyOptions { label: "factory".into(), ..Default::default() }).unwrap();
        let k = spec.true_intrinsics.with_focal(600.0).unwrap();
        let b = verify_depth_with(&d, &corrs, &k, &VerifyOptions { label: "charuco".into(), ..Default::default() }).unwrap();
        let docs = emit_histogram(&[&a, &b]).unwrap();
        assert!(docs.svg.contains(r#"width="800" height="600""#));
        assert_eq!(docs.svg.matches("class=\"legend\"").count(), 2);
        assert!(docs.svg.contains(">factory</text>") && docs.svg.contains(">charuco</text>"));
        assert_eq!(docs.csv.len(), 2);
        assert_eq!(docs.svg, emit_histogram(&[&a, &b]).unwrap().svg);
        let single = emit_histogram(&[&a]).unwrap();
        assert!(!single.svg.contains("legend"));
        assert!(emit_histogram(&[]).is_err());
    }

    #[test]
    fn overlay_basics() {
        let rgb = RgbImage::from_fn(640, 480, |i, j| [(i % 256) as u8, (j % 256) as u8, 7]);
        let k = Intrinsics::new(565.0, 319.5, 239.5, 640, 480).unwrap();
        assert_eq!(render_overlay(&rgb, &DepthMap::invalid(), &k).unwrap(), rgb);
        let flat = RgbImage::filled(640, 480, [0, 0, 0]);
        let tinted = render_overlay(&flat, &DepthMap::constant(1.0).unwrap(), &k).unwrap();
        let first = tinted.data[0];
        assert_ne!(first, [0, 0, 0]);
        assert!(tinted.data.iter().all(|p| *p == first));
        let k2 = rescale_intrinsics(&k, 1280, 960).unwrap();
        let big = RgbImage::filled(1280, 960, [0, 0, 0]);
        assert!(render_overlay(&big, &DepthMap::constant(1.0).unwrap(), &k2).unwrap().data.iter().all(|p| *p == first));
        let odd = RgbImage::filled(640, 360, [0, 0, 0]);
        assert!(matches!(render_overlay(&odd, &DepthMap::constant(1.0).unwrap(), &k), Err(Error::DimensionError(_))));
        let ramp = color_ramp();
        assert_eq!(ramp[0], [0, 0, 255]);
        assert_eq!(ramp[255], [255, 0, 0]);
    }

    #[test]
    fn exact_correspondences_match_bundle() {
        let (spec, _, corrs) = frontal();
        let pose: Pose = spec.poses[0].into();
        let exact = exact_correspondences(&spec.board, &pose, &spec.true_intrinsics).unwrap();
        let m = match_corners(
            &exact.iter().map(|c| crate::io::CornerObservation { id: c.id, u: c.pixel.0, v: c.pixel.1 }).collect::<Vec<_>>(),
            &spec.board.layout(),
        )
        .unwrap();
        assert_eq!(m, corrs);
    }
}
