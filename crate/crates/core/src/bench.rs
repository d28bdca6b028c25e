//! Synthetic ground truth: a planar board seen from known poses, rendered to
//! corners, depth and color, with optional metadata bugs injected.
//!
//! All randomness comes from SplitMix64 (constants below, as published by
//! Steele, Lea and Flood) through Box–Muller. Each view draws from its own
//! stream derived from `(rng_seed, view_index)`, so rendering views in
//! parallel never changes the output.

use std::path::Path;

use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Map;

use crate::calibration::CalibrationView;
use crate::camera::{project, DepthMap, Intrinsics, Raster, RgbImage, DEPTH_HEIGHT, DEPTH_WIDTH};
use crate::correction::{zoom_depth_map, ZoomFactors};
use crate::distortion::RadialLut;
use crate::error::{Error, Result};
use crate::io::{BoardLayout, CaptureBundle, CornerObservation};
use crate::metadata::{Api, CaptureMeta, SessionPair};
use crate::pose::{Correspondence, Pose, PoseRecord};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_2: u64 = 0x94D0_49BB_1331_11EB;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_2);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Independent stream for `(seed, tag)`.
    pub fn stream(seed: u64, tag: u64) -> Self {
        SplitMix64::new(mix64(seed ^ mix64(tag.wrapping_add(GOLDEN_GAMMA))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

/// Standard normal deviates by Box–Muller, both outputs used in turn.
#[derive(Debug, Clone)]
pub struct Gaussian {
    rng: SplitMix64,
    spare: Option<f64>,
}

impl Gaussian {
    pub fn new(rng: SplitMix64) -> Self {
        Gaussian { rng, spare: None }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite
        let u1 = 1.0 - self.rng.next_f64();
        let u2 = self.rng.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let a = std::f64::consts::TAU * u2;
        self.spare = Some(r * a.sin());
        r * a.cos()
    }
}

/// Inner-corner grid of a checkerboard; corner `(c, r)` sits at
/// `(c * square_size, r * square_size, 0)` with id `r * cols + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardSpec {
    pub cols: u32,
    pub rows: u32,
    pub square_size: f64,
}

impl BoardSpec {
    pub fn corners(&self) -> Vec<(u32, Point3<f64>)> {
        (0..self.rows)
            .flat_map(|r| {
                (0..self.cols).map(move |c| {
                    (
                        r * self.cols + c,
                        Point3::new(c as f64 * self.square_size, r as f64 * self.square_size, 0.0),
                    )
                })
            })
            .collect()
    }

    pub fn layout(&self) -> BoardLayout {
        self.corners().into_iter().map(|(id, p)| (id, (p.x, p.y))).collect()
    }

    pub fn center(&self) -> Point3<f64> {
        let s = self.square_size;
        Point3::new((self.cols - 1) as f64 * s / 2.0, (self.rows - 1) as f64 * s / 2.0, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "factor", rename_all = "snake_case")]
pub enum InjectedBug {
    None,
    /// ARKit reference dimensions grow by the factor and the ARKit depth
    /// raster is zoomed in by it about the principal point.
    ZoomStretch(f64),
    /// AV depth focal reported as `f * factor`, ARKit as `f * factor^2`.
    FocalLie(f64),
}

/// Camera centers sampled on a spherical cap above the board, looking at it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HemisphereSpec {
    pub count: usize,
    pub min_distance: f64,
    pub max_distance: f64,
    pub max_tilt_deg: f64,
    pub max_roll_deg: f64,
    /// Look-at target jitter as a fraction of the board extent.
    pub target_jitter: f64,
}

impl Default for HemisphereSpec {
    fn default() -> Self {
        HemisphereSpec {
            count: 0,
            min_distance: 0.20,
            max_distance: 0.30,
            max_tilt_deg: 35.0,
            max_roll_deg: 15.0,
            target_jitter: 0.1,
        }
    }
}

fn default_reference() -> (u32, u32) {
    (3088, 2316)
}

fn default_device() -> String {
    "Synthetic TrueDepth".into()
}

fn default_os() -> String {
    "sim".into()
}

/// Everything needed to reproduce a synthetic capture session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub board: BoardSpec,
    /// Depth-camera intrinsics at 640x480.
    pub true_intrinsics: Intrinsics,
    #[serde(default)]
    pub poses: Vec<PoseRecord>,
    /// Extra poses appended after `poses`.
    #[serde(default)]
    pub hemisphere: Option<HemisphereSpec>,
    #[serde(default)]
    pub corner_noise_sigma: f64,
    #[serde(default)]
    pub depth_noise_sigma: f64,
    #[serde(default = "no_bug")]
    pub injected_bug: InjectedBug,
    #[serde(default)]
    pub rng_seed: u64,
    /// AV intrinsic reference dimensions; must be 4:3 with a width divisible by 4.
    #[serde(default = "default_reference")]
    pub reference_dimensions: (u32, u32),
    #[serde(default = "default_device")]
    pub device: String,
    #[serde(default = "default_os")]
    pub os_version: String,
}

fn no_bug() -> InjectedBug {
    InjectedBug::None
}

/// Tag of the stream used for hemisphere sampling; views use `index + 1`.
const POSE_STREAM: u64 = 0;

impl SceneSpec {
    /// A board of 25x20 corners at 4 mm pitch facing the camera at `distance`,
    /// centered on the principal point.
    pub fn frontal(f: f64, distance: f64, seed: u64) -> Self {
        let board = BoardSpec {
            cols: 25,
            rows: 20,
            square_size: 0.004,
        };
        let c = board.center();
        SceneSpec {
            board,
            true_intrinsics: Intrinsics::new(f, 320.0, 240.0, DEPTH_WIDTH as u32, DEPTH_HEIGHT as u32)
                .expect("valid intrinsics"),
            poses: vec![PoseRecord {
                axis_angle: [0.0; 3],
                translation: [-c.x, -c.y, distance],
            }],
            hemisphere: None,
            corner_noise_sigma: 0.0,
            depth_noise_sigma: 0.0,
            injected_bug: InjectedBug::None,
            rng_seed: seed,
            reference_dimensions: default_reference(),
            device: default_device(),
            os_version: default_os(),
        }
    }

    /// `n` hemisphere views of an 8x5 board at 20 mm pitch.
    pub fn calibration_default(f: f64, n: usize, seed: u64) -> Self {
        let mut s = SceneSpec {
            board: BoardSpec {
                cols: 8,
                rows: 5,
                square_size: 0.020,
            },
            true_intrinsics: Intrinsics::new(f, 319.5, 239.5, DEPTH_WIDTH as u32, DEPTH_HEIGHT as u32)
                .expect("valid intrinsics"),
            poses: Vec::new(),
            hemisphere: Some(HemisphereSpec {
                count: n,
                ..HemisphereSpec::default()
            }),
            corner_noise_sigma: 0.0,
            depth_noise_sigma: 0.0,
            injected_bug: InjectedBug::None,
            rng_seed: seed,
            reference_dimensions: default_reference(),
            device: default_device(),
            os_version: default_os(),
        };
        s.poses = s.view_poses().iter().map(PoseRecord::from).collect();
        s.hemisphere = None;
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::DomainError(m));
        let b = &self.board;
        if b.cols < 2 || b.rows < 2 || !(b.square_size > 0.0 && b.square_size.is_finite()) {
            return bad(format!("board needs at least 2x2 corners and a positive square size, got {b:?}"));
        }
        let k = &self.true_intrinsics;
        k.validate()?;
        if (k.ref_w as usize, k.ref_h as usize) != (DEPTH_WIDTH, DEPTH_HEIGHT) {
            return bad(format!("true intrinsics must be given at {DEPTH_WIDTH}x{DEPTH_HEIGHT}"));
        }
        if k.aspect != 1.0 || k.skew != 0.0 {
            return bad("true intrinsics must have unit aspect and zero skew".into());
        }
        for (name, s) in [("corner_noise_sigma", self.corner_noise_sigma), ("depth_noise_sigma", self.depth_noise_sigma)] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("{name} must be >= 0, got {s}"));
            }
        }
        match self.injected_bug {
            InjectedBug::None => {}
            InjectedBug::ZoomStretch(s) | InjectedBug::FocalLie(s) => {
                ZoomFactors::uniform(s)?;
            }
        }
        let (w, h) = self.reference_dimensions;
        if w == 0 || w % 4 != 0 || h != w / 4 * 3 {
            return bad(format!("reference dimensions {w}x{h} must be 4:3 with width divisible by 4"));
        }
        if self.view_count() == 0 {
            return bad("scene has no views".into());
        }
        if let Some(hs) = &self.hemisphere {
            if !(hs.min_distance > 0.0 && hs.max_distance >= hs.min_distance) {
                return bad("hemisphere distances must satisfy 0 < min <= max".into());
            }
            if !(0.0..90.0).contains(&hs.max_tilt_deg) {
                return bad("hemisphere tilt must lie in [0, 90) degrees".into());
            }
        }
        Ok(())
    }

    pub fn view_count(&self) -> usize {
        self.poses.len() + self.hemisphere.map_or(0, |h| h.count)
    }

    /// Explicit poses followed by sampled hemisphere poses.
    pub fn view_poses(&self) -> Vec<Pose> {
        let mut out: Vec<Pose> = self.poses.iter().map(|&p| p.into()).collect();
        if let Some(h) = &self.hemisphere {
            out.extend(hemisphere_poses(&self.board, h, self.rng_seed));
        }
        out
    }
}

/// Board-to-camera pose for a camera at `center` looking at `target`, with
/// the image x axis along board +x when frontal, rolled by `roll` radians.
pub fn look_at(center: Point3<f64>, target: Point3<f64>, roll: f64) -> Pose {
    let z = (target - center).normalize();
    let hint = if z.cross(&Vector3::y()).norm() < 1e-6 { Vector3::x() } else { Vector3::y() };
    let x = hint.cross(&z).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::z()), roll)
        * Rotation3::from_matrix_unchecked(r);
    Pose::new(rot, -(rot * center.coords))
}

pub fn hemisphere_poses(board: &BoardSpec, h: &HemisphereSpec, seed: u64) -> Vec<Pose> {
    let mut rng = SplitMix64::stream(seed, POSE_STREAM);
    let c = board.center();
    let extent = Vector3::new(2.0 * c.x, 2.0 * c.y, 0.0);
    let cos_max = h.max_tilt_deg.to_radians().cos();
    (0..h.count)
        .map(|_| {
            let cos_a = rng.uniform(cos_max, 1.0);
            let sin_a = (1.0 - cos_a * cos_a).max(0.0).sqrt();
            let beta = rng.uniform(0.0, std::f64::consts::TAU);
            let d = rng.uniform(h.min_distance, h.max_distance);
            let roll = rng.uniform(-h.max_roll_deg, h.max_roll_deg).to_radians();
            let jx = rng.uniform(-h.target_jitter, h.target_jitter) * extent.x;
            let jy = rng.uniform(-h.target_jitter, h.target_jitter) * extent.y;
            let center = c + Vector3::new(sin_a * beta.cos(), sin_a * beta.sin(), -cos_a) * d;
            look_at(center, c + Vector3::new(jx, jy, 0.0), roll)
        })
        .collect()
}

/// Board-plane depth for every pixel: `Z = (n . t) / (n . ray)` with `ray = K^-1 [u, v, 1]`.
/// Pixels whose ray misses the plane are invalid.
pub fn render_plane_depth(pose: &Pose, k: &Intrinsics) -> Raster<f32> {
    let n = pose.rotation * Vector3::z();
    let nt = n.dot(&pose.translation);
    let mut data = vec![f32::NAN; DEPTH_WIDTH * DEPTH_HEIGHT];
    data.par_chunks_exact_mut(DEPTH_WIDTH).enumerate().for_each(|(j, row)| {
        for (i, px) in row.iter_mut().enumerate() {
            let (x, y) = k.normalize(i as f64, j as f64);
            let z = nt / (n.x * x + n.y * y + n.z);
            if z.is_finite() && z > 0.0 {
                *px = z as f32;
            }
        }
    });
    Raster {
        width: DEPTH_WIDTH,
        height: DEPTH_HEIGHT,
        data,
    }
}

const LIGHT: [u8; 3] = [230, 230, 230];
const DARK: [u8; 3] = [25, 25, 25];
const BACKGROUND: [u8; 3] = [128, 128, 128];

/// Flat checkerboard shading: squares alternate around the inner corners and
/// the board extends one square beyond them.
pub fn render_checker(board: &BoardSpec, pose: &Pose, k: &Intrinsics) -> RgbImage {
    let n = pose.rotation * Vector3::z();
    let nt = n.dot(&pose.translation);
    let rt = pose.rotation.inverse();
    let s = board.square_size;
    let (xmax, ymax) = (board.cols as f64 * s, board.rows as f64 * s);
    let mut data = vec![BACKGROUND; DEPTH_WIDTH * DEPTH_HEIGHT];
    data.par_chunks_exact_mut(DEPTH_WIDTH).enumerate().for_each(|(j, row)| {
        for (i, px) in row.iter_mut().enumerate() {
            let (x, y) = k.normalize(i as f64, j as f64);
            let ray = Vector3::new(x, y, 1.0);
            let z = nt / n.dot(&ray);
            if !(z.is_finite() && z > 0.0) {
                *px = [0, 0, 0];
                continue;
            }
            let b = rt * (ray * z - pose.translation);
            if b.x < -s || b.y < -s || b.x >= xmax || b.y >= ymax {
                continue;
            }
            let parity = ((b.x / s).floor() as i64 + (b.y / s).floor() as i64).rem_euclid(2);
            *px = if parity == 0 { DARK } else { LIGHT };
        }
    });
    Raster {
        width: DEPTH_WIDTH,
        height: DEPTH_HEIGHT,
        data,
    }
}

/// Noisy corner observations for one view, plus the noise generator positioned
/// after the corner draws (the depth noise continues from it).
fn observe_corners(spec: &SceneSpec, pose: &Pose, view_index: usize) -> Result<(Vec<CornerObservation>, Gaussian)> {
    let k = &spec.true_intrinsics;
    let mut g = Gaussian::new(SplitMix64::stream(spec.rng_seed, view_index as u64 + 1));
    let mut out = Vec::new();
    let (wmax, hmax) = ((DEPTH_WIDTH - 1) as f64, (DEPTH_HEIGHT - 1) as f64);
    for (id, p) in spec.board.corners() {
        let pc = pose.transform(&p);
        if !(pc.z > 0.0) {
            return Err(Error::DegenerateScene(format!(
                "view {view_index}: board corner {id} is behind the camera (z = {})",
                pc.z
            )));
        }
        let (u, v) = project(&pc, k)?;
        // both draws happen for every corner so streams stay aligned
        let (nu, nv) = (g.sample(), g.sample());
        let (u, v) = (u + spec.corner_noise_sigma * nu, v + spec.corner_noise_sigma * nv);
        if (0.0..=wmax).contains(&u) && (0.0..=hmax).contains(&v) {
            out.push(CornerObservation { id, u, v });
        }
    }
    Ok((out, g))
}

fn scaled_intrinsics(k: &Intrinsics, w: u32, h: u32, f: f64) -> Result<Intrinsics> {
    let s = w as f64 / k.ref_w as f64;
    Intrinsics::new(f, k.cx * s, k.cy * s, w, h)
}

/// The AV and ARKit metadata a device with this scene's bug would report.
pub fn session_metas(spec: &SceneSpec) -> Result<SessionPair> {
    spec.validate()?;
    let k = &spec.true_intrinsics;
    let (w, h) = spec.reference_dimensions;
    let f_true = k.f * w as f64 / k.ref_w as f64;
    let (f_av, f_ar, (ar_w, ar_h)) = match spec.injected_bug {
        InjectedBug::None => (f_true, f_true, (w, h)),
        InjectedBug::FocalLie(l) => (f_true * l, f_true * l * l, (w, h)),
        InjectedBug::ZoomStretch(s) => {
            let ar_w = 4 * (w as f64 * s / 4.0).round() as u32;
            (f_true, f_true, (ar_w, ar_w / 4 * 3))
        }
    };
    let meta = |api: Api, f: f64, dims: (u32, u32), color: (u32, u32)| -> Result<CaptureMeta> {
        let depth = scaled_intrinsics(k, dims.0, dims.1, f)?;
        let cs = color.0 as f64 / k.ref_w as f64;
        Ok(CaptureMeta {
            device: spec.device.clone(),
            api,
            os_version: spec.os_version.clone(),
            lens_distortion_center: (depth.cx, depth.cy),
            intrinsic_reference_dimensions: dims,
            depth_intrinsics_unscaled: depth,
            color_intrinsics: Intrinsics::new(k.f * cs, k.cx * cs, k.cy * cs, color.0, color.1)?,
            forward_lut: None,
            inverse_lut: None,
            ultra_wide: false,
            extra: Map::new(),
        })
    };
    let av = meta(Api::Av, f_av, (w, h), (640, 480))?;
    let ar = meta(Api::ArKit, f_ar, (ar_w, ar_h), (1440, 1080))?;
    av.validate()?;
    ar.validate()?;
    SessionPair::new(av, ar)
}

/// Renders one view. Views of a `ZoomStretch` scene carry the zoomed depth
/// and ARKit metadata; all others carry AV metadata.
pub fn render_view(spec: &SceneSpec, view_index: usize) -> Result<CaptureBundle> {
    let poses = spec.view_poses();
    let pose = poses.get(view_index).ok_or_else(|| {
        Error::DomainError(format!("view {view_index} out of range ({} views)", poses.len()))
    })?;
    let metas = session_metas(spec)?;
    render_view_with(spec, pose, view_index, &metas)
}

fn render_view_with(spec: &SceneSpec, pose: &Pose, view_index: usize, metas: &SessionPair) -> Result<CaptureBundle> {
    let k = &spec.true_intrinsics;
    let (corners, mut g) = observe_corners(spec, pose, view_index)?;
    let mut depth = render_plane_depth(pose, k);
    if spec.depth_noise_sigma > 0.0 {
        for z in depth.data.iter_mut() {
            let n = g.sample();
            if z.is_finite() {
                let noisy = *z as f64 + spec.depth_noise_sigma * n;
                *z = if noisy > 0.0 { noisy as f32 } else { f32::NAN };
            }
        }
    }
    let mut depth = DepthMap::new(depth)?;
    let meta = match spec.injected_bug {
        InjectedBug::ZoomStretch(s) => {
            depth = zoom_depth_map(&depth, k, ZoomFactors::uniform(s)?)?;
            metas.ar.clone()
        }
        _ => metas.av.clone(),
    };
    Ok(CaptureBundle {
        meta,
        depth,
        rgb: Some(render_checker(&spec.board, pose, k)),
        corners: Some(corners),
        board: Some(spec.board.layout()),
    })
}

/// Clean depth of one view: no noise, no injected bug.
pub fn clean_depth(spec: &SceneSpec, view_index: usize) -> Result<DepthMap> {
    let poses = spec.view_poses();
    let pose = poses
        .get(view_index)
        .ok_or_else(|| Error::DomainError(format!("view {view_index} out of range")))?;
    DepthMap::new(render_plane_depth(pose, &spec.true_intrinsics))
}

pub fn render_all(spec: &SceneSpec) -> Result<Vec<CaptureBundle>> {
    let metas = session_metas(spec)?;
    let poses = spec.view_poses();
    poses
        .par_iter()
        .enumerate()
        .map(|(i, p)| render_view_with(spec, p, i, &metas))
        .collect()
}

/// Corners of every view matched with the board, without rendering rasters.
pub fn calibration_views(spec: &SceneSpec) -> Result<Vec<CalibrationView>> {
    spec.validate()?;
    let layout = spec.board.layout();
    spec.view_poses()
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let (obs, _) = observe_corners(spec, p, i)?;
            Ok(CalibrationView::new(crate::io::match_corners(&obs, &layout)?))
        })
        .collect()
}

/// Exact correspondences of one view (no noise), for pose tests.
pub fn exact_correspondences(board: &BoardSpec, pose: &Pose, k: &Intrinsics) -> Result<Vec<Correspondence>> {
    board
        .corners()
        .into_iter()
        .map(|(id, p)| {
            Ok(Correspondence {
                id,
                board_point: p,
                pixel: project(&pose.transform(&p), k)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub views: usize,
    pub view_dirs: Vec<String>,
}

pub fn view_dir_name(i: usize) -> String {
    format!("view_{i:03}")
}

/// Writes `scene.json`, `board.json`, `meta.json` (AV), `meta_arkit.json` and
/// one `view_NNN/` bundle per pose into `out`.
pub fn generate_dataset(spec: &SceneSpec, out: &Path) -> Result<DatasetSummary> {
    let bundles = render_all(spec)?;
    let metas = session_metas(spec)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let scene = serde_json::to_string_pretty(spec)? + "\n";
    std::fs::write(out.join("scene.json"), scene).map_err(|e| Error::io(out.join("scene.json"), e))?;
    crate::io::write_board(out.join("board.json"), &spec.board.layout())?;
    metas.av.write(out.join("meta.json"))?;
    metas.ar.write(out.join("meta_arkit.json"))?;
    let mut dirs = Vec::new();
    for (i, b) in bundles.iter().enumerate() {
        let name = view_dir_name(i);
        b.write(out.join(&name))?;
        dirs.push(name);
    }
    Ok(DatasetSummary {
        views: bundles.len(),
        view_dirs: dirs,
    })
}

pub fn generate_calibration_dataset(spec: &SceneSpec, out: &Path) -> Result<DatasetSummary> {
    if spec.view_count() < 3 {
        return Err(Error::DomainError(format!(
            "a calibration dataset needs at least 3 views, spec has {}",
            spec.view_count()
        )));
    }
    generate_dataset(spec, out)
}

/// Barrel-style table `m(r) = k1 * (r / r_max)^2` sampled at `len` entries.
pub fn synthetic_lut(k1: f64, len: usize, center: (f64, f64), ref_w: u32, ref_h: u32) -> Result<RadialLut> {
    let m = (0..len)
        .map(|i| {
            let t = i as f64 / (len - 1).max(1) as f64;
            k1 * t * t
        })
        .collect();
    RadialLut::new(m, center, ref_w, ref_h)
}

/// Table that undoes `forward`: entry at radius `r'` holds `r / r' - 1` where
/// `r * (1 + m(r)) = r'`, solved by bisection.
pub fn inverse_lut(forward: &RadialLut, len: usize) -> Result<RadialLut> {
    let r_max = forward.r_max();
    let g = |r: f64| r * (1.0 + forward.magnification_at(r));
    let mut m = Vec::with_capacity(len);
    for i in 0..len {
        let rp = r_max * i as f64 / (len - 1).max(1) as f64;
        if i == 0 {
            m.push(1.0 / (1.0 + forward.magnification_at(0.0)) - 1.0);
            continue;
        }
        let (mut lo, mut hi) = (0.0, 2.0 * r_max);
        while g(hi) < rp {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < rp {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        m.push(0.5 * (lo + hi) / rp - 1.0);
    }
    let (w, h) = forward.reference_dimensions();
    RadialLut::new(m, forward.center(), w, h)
}
