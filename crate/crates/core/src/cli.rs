//! The `depthaudit` command line.
//!
//! Exit codes: 0 on success (or a healthy audit), 2 when an audit finds
//! issues or a fix is refused because the verdict does not call for it, 1 on
//! any error. Settings resolve as flags, then the `--config` JSON file, then
//! built-in defaults.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use crate::audit::{audit_report, classify_with, AuditConfig, IssueClass};
use crate::bench::{generate_dataset, SceneSpec};
use crate::calibration::{calibrate_dataset, focal_discrepancy, CalibrationView, DEFAULT_VOXEL_SIZE};
use crate::camera::{unproject_all, Intrinsics};
use crate::correction::{correct_focal_ar, correct_focal_av, zoom_depth_map, zoom_factors};
use crate::error::{Error, Result};
use crate::io::{match_corners, read_board, read_corners, write_ply, CaptureBundle, BOARD_FILE, CORNERS_FILE};
use crate::metadata::{find_pair, fixture_database, load_fixture_dir, meta_ratios, Api, CaptureMeta, SessionPair};
use crate::verification::{emit_histogram, verify_depth_with, VerifyOptions, DEFAULT_BIN_WIDTH_MM};

/// Environment variable naming a directory of metadata records that replaces
/// the bundled fixtures.
pub const FIXTURES_ENV: &str = "DEPTHAUDIT_FIXTURES";

#[derive(Debug, Parser)]
#[command(name = "depthaudit", version, about = "Audit and correct TrueDepth RGB-D capture metadata")]
pub struct Cli {
    /// JSON file with default settings; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify AV/ARKit metadata pairs.
    Audit(AuditArgs),
    /// Undo the ARKit depth zoom of a capture bundle.
    FixDepth(FixDepthArgs),
    /// Write metadata with a corrected depth focal length.
    FixIntrinsics(FixIntrinsicsArgs),
    /// Convert a bundle's depth map into a PLY point cloud.
    Unproject(UnprojectArgs),
    /// Compare depth against board geometry.
    VerifyDepth(VerifyDepthArgs),
    /// Calibrate the focal length from a dataset of board views.
    Calibrate(CalibrateArgs),
    /// Generate synthetic capture bundles from a scene description.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// AV session metadata.
    #[arg(long, requires = "ar", conflicts_with = "fixtures")]
    pub av: Option<PathBuf>,
    /// ARKit session metadata.
    #[arg(long, requires = "av")]
    pub ar: Option<PathBuf>,
    /// Audit the fixture database (bundled, or the directory in DEPTHAUDIT_FIXTURES).
    #[arg(long)]
    pub fixtures: bool,
    /// Only devices whose name starts with this.
    #[arg(long, requires = "fixtures")]
    pub device: Option<String>,
    /// Only this OS version.
    #[arg(long, requires = "fixtures")]
    pub os: Option<String>,
    /// Percent depth focal difference that counts as a wrong focal.
    #[arg(long)]
    pub depth_threshold: Option<f64>,
    /// Percent reference-dimension difference that counts as zoom misalignment.
    #[arg(long)]
    pub ird_threshold: Option<f64>,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the JSON report instead of the text summary.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct FixDepthArgs {
    /// Capture bundle directory whose depth is zoomed.
    pub bundle: PathBuf,
    #[arg(long)]
    pub av_meta: PathBuf,
    #[arg(long)]
    pub ar_meta: PathBuf,
    /// Output bundle directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Apply the zoom even if the audit does not report a zoom misalignment.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SessionArg {
    Av,
    Ar,
}

#[derive(Debug, Args)]
pub struct FixIntrinsicsArgs {
    #[arg(long)]
    pub av_meta: PathBuf,
    #[arg(long)]
    pub ar_meta: PathBuf,
    /// Which session's metadata to correct.
    #[arg(long, value_enum)]
    pub session: SessionArg,
    /// Output metadata file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IntrinsicsArgs {
    /// `factory`, `corrected` (needs --av-meta and --ar-meta) or a JSON file
    /// holding intrinsics or capture metadata.
    #[arg(long)]
    pub intrinsics: Option<String>,
    /// AV metadata of the device, for `--intrinsics corrected`.
    #[arg(long, requires = "ar_meta")]
    pub av_meta: Option<PathBuf>,
    /// ARKit metadata of the device, for `--intrinsics corrected`.
    #[arg(long, requires = "av_meta")]
    pub ar_meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct UnprojectArgs {
    pub bundle: PathBuf,
    #[command(flatten)]
    pub intrinsics: IntrinsicsArgs,
    /// Output PLY file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyDepthArgs {
    /// Bundle with depth.f32, corners.csv and board.json.
    pub bundle: PathBuf,
    #[command(flatten)]
    pub intrinsics: IntrinsicsArgs,
    /// Directory for report.json, hist.svg and hist.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Histogram bin width in millimeters.
    #[arg(long)]
    pub bin_width: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Dataset directory: meta.json, board.json and view subdirectories with corners.csv.
    #[arg(required_unless_present = "compare")]
    pub dataset: Option<PathBuf>,
    /// Viewpoint voxel edge in millimeters.
    #[arg(long)]
    pub voxel_mm: Option<f64>,
    /// Initial guess: `factory` (the dataset's meta.json) or a JSON intrinsics/metadata file.
    #[arg(long)]
    pub init: Option<String>,
    /// Factory focal to compare against (VGA px); defaults to the initial guess.
    #[arg(long)]
    pub factory_f: Option<f64>,
    /// Skip calibration and report the discrepancy of this focal against --factory-f.
    #[arg(long, requires = "factory_f")]
    pub compare: Option<f64>,
    /// Output JSON file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene description (JSON).
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads for rendering; output does not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Settings file. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub audit: Option<AuditConfig>,
    pub voxel_mm: Option<f64>,
    pub bin_width_mm: Option<f64>,
    pub intrinsics: Option<String>,
    pub threads: Option<usize>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Failure modes of a command, mapped to exit codes.
enum Outcome {
    Ok,
    Issues,
}

struct Ctx<'a> {
    config: Config,
    out: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn say(&mut self, s: impl AsRef<str>) {
        let _ = writeln!(self.out, "{}", s.as_ref());
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::Issues) => 2,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<Outcome> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let mut ctx = Ctx { config, out };
    match cli.command {
        Command::Audit(a) => cmd_audit(&mut ctx, a),
        Command::FixDepth(a) => cmd_fix_depth(&mut ctx, a),
        Command::FixIntrinsics(a) => cmd_fix_intrinsics(&mut ctx, a),
        Command::Unproject(a) => cmd_unproject(&mut ctx, a),
        Command::VerifyDepth(a) => cmd_verify_depth(&mut ctx, a),
        Command::Calibrate(a) => cmd_calibrate(&mut ctx, a),
        Command::Simulate(a) => cmd_simulate(&mut ctx, a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_pair(av: &Path, ar: &Path) -> Result<SessionPair> {
    SessionPair::new(CaptureMeta::from_path(av)?, CaptureMeta::from_path(ar)?)
}

fn fixture_pairs() -> Result<Vec<SessionPair>> {
    match std::env::var_os(FIXTURES_ENV) {
        Some(dir) if !dir.is_empty() => load_fixture_dir(PathBuf::from(dir)),
        _ => Ok(fixture_database()),
    }
}

fn audit_config(ctx: &Ctx, a: &AuditArgs) -> AuditConfig {
    let base = ctx.config.audit.unwrap_or_default();
    AuditConfig {
        depth_threshold_pct: a.depth_threshold.unwrap_or(base.depth_threshold_pct),
        ird_threshold_pct: a.ird_threshold.unwrap_or(base.ird_threshold_pct),
    }
}

fn cmd_audit(ctx: &mut Ctx, a: AuditArgs) -> Result<Outcome> {
    let cfg = audit_config(ctx, &a);
    let pairs = match (&a.av, &a.ar, a.fixtures) {
        (Some(av), Some(ar), false) => vec![load_pair(av, ar)?],
        (None, None, true) => {
            let all = fixture_pairs()?;
            let selected: Vec<SessionPair> = match (&a.device, &a.os) {
                (Some(d), os) => find_pair(&all, d, os.as_deref())
                    .map(|p| vec![p.clone()])
                    .unwrap_or_default(),
                (None, Some(os)) => all
                    .iter()
                    .filter(|p| p.av.os_version.trim_start_matches("iOS ") == os.trim_start_matches("iOS "))
                    .cloned()
                    .collect(),
                (None, None) => all,
            };
            if selected.is_empty() {
                return Err(Error::DomainError("no fixture pair matches the filters".into()));
            }
            selected
        }
        _ => {
            return Err(Error::DomainError(
                "give either --av and --ar, or --fixtures".into(),
            ))
        }
    };
    let verdicts = pairs
        .iter()
        .map(|p| classify_with(p, &cfg))
        .collect::<Result<Vec<_>>>()?;
    let report = audit_report(&verdicts)?;
    if let Some(path) = &a.out {
        write_text(path, &report.to_json_string())?;
    }
    if a.json {
        let s = report.to_json_string();
        let _ = write!(ctx.out, "{s}");
    } else {
        let s = report.summary();
        let _ = write!(ctx.out, "{s}");
        for v in &report.verdicts {
            for n in &v.notes {
                ctx.say(format!("  {}: {n}", v.device));
            }
        }
    }
    Ok(if report.any_issue() { Outcome::Issues } else { Outcome::Ok })
}

fn cmd_fix_depth(ctx: &mut Ctx, a: FixDepthArgs) -> Result<Outcome> {
    let pair = load_pair(&a.av_meta, &a.ar_meta)?;
    let verdict = classify_with(&pair, &ctx.config.audit.unwrap_or_default())?;
    if verdict.class != IssueClass::ZoomMisalignment && !a.force {
        ctx.say(format!(
            "{}: verdict is {:?}, not ZoomMisalignment; nothing written (use --force to zoom anyway)",
            verdict.device, verdict.class
        ));
        return Ok(Outcome::Issues);
    }
    let mut bundle = CaptureBundle::read(&a.bundle)?;
    let z = zoom_factors(&pair)?;
    let k = pair.ar.depth_intrinsics_vga()?;
    bundle.depth = zoom_depth_map(&bundle.depth, &k, z)?;
    bundle.meta.push_correction(json!({
        "kind": "depth_zoom",
        "zoom": [z.zx, z.zy],
        "about": [k.cx, k.cy],
        "verdict": format!("{:?}", verdict.class),
        "forced": verdict.class != IssueClass::ZoomMisalignment,
    }));
    bundle.write(&a.out)?;
    ctx.say(format!(
        "zoomed depth by ({:.6}, {:.6}) about ({:.3}, {:.3}); wrote {}",
        z.zx,
        z.zy,
        k.cx,
        k.cy,
        a.out.display()
    ));
    Ok(Outcome::Ok)
}

fn cmd_fix_intrinsics(ctx: &mut Ctx, a: FixIntrinsicsArgs) -> Result<Outcome> {
    let pair = load_pair(&a.av_meta, &a.ar_meta)?;
    let cfg = ctx.config.audit.unwrap_or_default();
    let ratios = meta_ratios(&pair)?;
    let api = match a.session {
        SessionArg::Av => Api::Av,
        SessionArg::Ar => Api::ArKit,
    };
    let mut meta = pair.session(api).clone();
    if ratios.depth_diff_percent().abs() < cfg.depth_threshold_pct {
        meta.push_correction(json!({
            "kind": "depth_focal",
            "session": api.as_str(),
            "note": "no correction needed",
        }));
        meta.write(&a.out)?;
        ctx.say(format!(
            "no correction needed: depth focal lengths agree within {:.2}%",
            ratios.depth_diff_percent().abs()
        ));
        return Ok(Outcome::Ok);
    }
    let (f_av, f_ar) = (pair.av.depth_f(), pair.ar.depth_f());
    let fix = match api {
        Api::Av => correct_focal_av(f_av, f_ar, pair.av.intrinsic_reference_dimensions.0 as f64)?,
        Api::ArKit => correct_focal_ar(f_ar, f_av, pair.ar.intrinsic_reference_dimensions.0 as f64)?,
    };
    let before = meta.depth_f();
    meta.depth_intrinsics_unscaled = meta.depth_intrinsics_unscaled.with_focal(fix.f_corrected)?;
    meta.push_correction(json!({
        "kind": "depth_focal",
        "session": api.as_str(),
        "f_unscaled_before": before,
        "f_unscaled_corrected": fix.f_corrected,
        "f_vga_corrected": fix.f_vga,
    }));
    meta.write(&a.out)?;
    ctx.say(format!(
        "{} session: depth focal {:.2} -> {:.2} px unscaled, {:.2} px at 640x480",
        api, before, fix.f_corrected, fix.f_vga
    ));
    Ok(Outcome::Ok)
}

/// Depth intrinsics at 640x480 for a bundle, per `--intrinsics`.
fn resolve_intrinsics(ctx: &Ctx, args: &IntrinsicsArgs, meta: &CaptureMeta) -> Result<(Intrinsics, String)> {
    let choice = args
        .intrinsics
        .clone()
        .or_else(|| ctx.config.intrinsics.clone())
        .unwrap_or_else(|| "factory".into());
    match choice.as_str() {
        "factory" => Ok((meta.depth_intrinsics_vga()?, choice)),
        "corrected" => {
            let (Some(av), Some(ar)) = (&args.av_meta, &args.ar_meta) else {
                return Err(Error::DomainError(
                    "--intrinsics corrected needs --av-meta and --ar-meta".into(),
                ));
            };
            let pair = load_pair(av, ar)?;
            let (f_av, f_ar) = (pair.av.depth_f(), pair.ar.depth_f());
            let fix = match meta.api {
                Api::Av => correct_focal_av(f_av, f_ar, pair.av.intrinsic_reference_dimensions.0 as f64)?,
                Api::ArKit => correct_focal_ar(f_ar, f_av, pair.ar.intrinsic_reference_dimensions.0 as f64)?,
            };
            Ok((meta.depth_intrinsics_vga()?.with_focal(fix.f_vga)?, choice))
        }
        path => Ok((intrinsics_from_file(Path::new(path))?, "file".into())),
    }
}

/// Reads intrinsics from either a serialized [`Intrinsics`] or capture metadata.
fn intrinsics_from_file(path: &Path) -> Result<Intrinsics> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if let Ok(k) = serde_json::from_slice::<Intrinsics>(&bytes) {
        k.validate()?;
        return crate::camera::rescale_intrinsics(&k, 640, 480);
    }
    crate::metadata::parse_meta(&bytes)?.depth_intrinsics_vga()
}

fn cmd_unproject(ctx: &mut Ctx, a: UnprojectArgs) -> Result<Outcome> {
    let bundle = CaptureBundle::read(&a.bundle)?;
    let (k, label) = resolve_intrinsics(ctx, &a.intrinsics, &bundle.meta)?;
    let pts = unproject_all(&bundle.depth, &k);
    write_ply(&a.out, &pts)?;
    ctx.say(format!(
        "{} points with {label} intrinsics (f = {:.2} px) -> {}",
        pts.len(),
        k.f,
        a.out.display()
    ));
    Ok(Outcome::Ok)
}

fn cmd_verify_depth(ctx: &mut Ctx, a: VerifyDepthArgs) -> Result<Outcome> {
    let bundle = CaptureBundle::read(&a.bundle)?;
    let corrs = bundle.correspondences()?;
    let (k, label) = resolve_intrinsics(ctx, &a.intrinsics, &bundle.meta)?;
    let opts = VerifyOptions {
        bin_width_mm: a
            .bin_width
            .or(ctx.config.bin_width_mm)
            .unwrap_or(DEFAULT_BIN_WIDTH_MM),
        label,
    };
    let report = verify_depth_with(&bundle.depth, &corrs, &k, &opts)?;
    let docs = emit_histogram(&[&report])?;
    write_text(&a.out.join("report.json"), &report.to_json_string())?;
    write_text(&a.out.join("hist.svg"), &docs.svg)?;
    write_text(&a.out.join("hist.csv"), &docs.csv[0])?;
    ctx.say(report.summary());
    Ok(Outcome::Ok)
}

fn dataset_views(dir: &Path) -> Result<Vec<CalibrationView>> {
    let top_board = dir.join(BOARD_FILE);
    let top_board = if top_board.is_file() { Some(read_board(&top_board)?) } else { None };
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(CORNERS_FILE).is_file())
        .collect();
    subdirs.sort();
    subdirs
        .iter()
        .map(|d| {
            let obs = read_corners(d.join(CORNERS_FILE))?;
            let local = d.join(BOARD_FILE);
            let board = if local.is_file() {
                read_board(&local)?
            } else {
                top_board
                    .clone()
                    .ok_or_else(|| Error::format("dataset", format!("no board.json for {}", d.display())))?
            };
            Ok(CalibrationView::new(match_corners(&obs, &board)?))
        })
        .collect()
}

fn cmd_calibrate(ctx: &mut Ctx, a: CalibrateArgs) -> Result<Outcome> {
    if let Some(f_cal) = a.compare {
        let f_fac = a.factory_f.expect("clap enforces --factory-f");
        let d = focal_discrepancy(f_fac, f_cal)?;
        ctx.say(format!("factory {f_fac:.2} px vs calibrated {f_cal:.2} px: {d:.2}%"));
        if let Some(path) = &a.out {
            let doc = json!({
                "schema_version": 1,
                "factory_f": f_fac,
                "f": f_cal,
                "focal_discrepancy_pct": d,
            });
            write_text(path, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
        }
        return Ok(Outcome::Ok);
    }
    let dir = a.dataset.as_deref().expect("clap enforces the dataset");
    let k_init = match a.init.as_deref().unwrap_or("factory") {
        "factory" => CaptureMeta::from_path(dir.join("meta.json"))?.depth_intrinsics_vga()?,
        path => intrinsics_from_file(Path::new(path))?,
    };
    let voxel = a
        .voxel_mm
        .or(ctx.config.voxel_mm)
        .map_or(DEFAULT_VOXEL_SIZE, |mm| mm / 1000.0);
    let views = dataset_views(dir)?;
    let res = calibrate_dataset(views, &k_init, voxel)?;
    let factory_f = a.factory_f.unwrap_or(k_init.f);
    let d = focal_discrepancy(factory_f, res.f)?;
    let mut doc = serde_json::to_value(&res)?;
    let obj = doc.as_object_mut().expect("result is an object");
    obj.shift_insert(0, "schema_version".into(), json!(1));
    obj.insert("factory_f".into(), json!(factory_f));
    obj.insert("focal_discrepancy_pct".into(), json!(d));
    obj.insert("voxel_size_m".into(), json!(voxel));
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    let out = a.out.clone().unwrap_or_else(|| dir.join("calibration.json"));
    write_text(&out, &text)?;
    if res.ill_conditioned {
        ctx.say(format!(
            "warning: normal equations are ill-conditioned (estimate {:.3e})",
            res.condition_estimate
        ));
    }
    ctx.say(format!(
        "f = {:.4} px from {} views ({} rejected for corners, {} for pose, {} as duplicate viewpoints); rms {:.4} px; factory {:.2} px differs by {:.2}%",
        res.f,
        res.views_used,
        res.views_rejected_corners,
        res.views_rejected_pose,
        res.views_rejected_voxel,
        res.rms_reproj,
        factory_f,
        d
    ));
    Ok(Outcome::Ok)
}

fn cmd_simulate(ctx: &mut Ctx, a: SimulateArgs) -> Result<Outcome> {
    let bytes = std::fs::read(&a.scene).map_err(|e| Error::io(&a.scene, e))?;
    let spec: SceneSpec = serde_json::from_slice(&bytes)?;
    spec.validate()?;
    let threads = a.threads.or(ctx.config.threads);
    let summary = match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::DomainError(format!("thread pool: {e}")))?;
            pool.install(|| generate_dataset(&spec, &a.out))?
        }
        None => generate_dataset(&spec, &a.out)?,
    };
    ctx.say(format!("wrote {} views to {}", summary.views, a.out.display()));
    Ok(Outcome::Ok)
}
