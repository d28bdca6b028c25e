//! Focal-length-only calibration from many views of a planar board.
//!
//! Aspect, skew and principal point stay fixed at the initial guess; only `f`
//! and the per-view poses are optimized, jointly, in one LM problem.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector, Point3, Rotation3, SMatrix, Vector3, Vector6};
use rayon::prelude::*;
use serde::Serialize;

use crate::camera::Intrinsics;
use crate::error::{Error, Result};
use crate::lm::{self, condition_estimate, LeastSquaresProblem, LmSettings, NormalEquations};
use crate::pose::{project_with_jacobian, right_jacobian, solve_pnp, wrap_axis_angle, Correspondence, Pose, PoseRecord};

/// Views with fewer detected corners are discarded before calibration.
pub const MIN_CORNERS: usize = 10;
pub const MIN_VIEWS: usize = 3;
pub const DEFAULT_VOXEL_SIZE: f64 = 0.030;
/// `J^T J` condition estimates above this raise the ill-conditioned flag.
pub const ILL_CONDITIONED: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationView {
    pub correspondences: Vec<Correspondence>,
    /// Camera center in the board frame, from a single-view pose solve.
    pub camera_center_estimate: Option<Point3<f64>>,
    pub accepted: bool,
}

impl CalibrationView {
    pub fn new(correspondences: Vec<Correspondence>) -> Self {
        let accepted = correspondences.len() >= MIN_CORNERS;
        CalibrationView {
            correspondences,
            camera_center_estimate: None,
            accepted,
        }
    }
}

/// Solves each view's pose with `k` and records its camera center. Views whose
/// solve fails keep no estimate and are marked unaccepted.
pub fn estimate_camera_centers(views: &mut [CalibrationView], k: &Intrinsics) {
    views.par_iter_mut().for_each(|v| {
        if v.correspondences.len() < MIN_CORNERS {
            v.accepted = false;
            return;
        }
        match solve_pnp(&v.correspondences, k) {
            Ok(sol) => v.camera_center_estimate = Some(sol.pose.camera_center()),
            Err(_) => {
                v.camera_center_estimate = None;
                v.accepted = false;
            }
        }
    });
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSelection {
    pub views: Vec<CalibrationView>,
    pub rejected_corners: usize,
    pub rejected_pose: usize,
    pub rejected_voxel: usize,
}

fn voxel_key(c: &Point3<f64>, size: f64) -> (i64, i64, i64) {
    let k = |x: f64| (x / size).floor() as i64;
    (k(c.x), k(c.y), k(c.z))
}

/// Keeps the first view (input order) per occupied voxel of camera centers.
/// Views with too few corners go first, then views without a center estimate.
pub fn select_views(views: &[CalibrationView], voxel_size: f64) -> Result<ViewSelection> {
    if !(voxel_size.is_finite() && voxel_size > 0.0) {
        return Err(Error::DomainError(format!("voxel size must be > 0, got {voxel_size}")));
    }
    let mut seen = HashSet::new();
    let mut out = ViewSelection {
        views: Vec::new(),
        rejected_corners: 0,
        rejected_pose: 0,
        rejected_voxel: 0,
    };
    for v in views {
        if v.correspondences.len() < MIN_CORNERS {
            out.rejected_corners += 1;
            continue;
        }
        let Some(c) = v.camera_center_estimate else {
            out.rejected_pose += 1;
            continue;
        };
        if seen.insert(voxel_key(&c, voxel_size)) {
            out.views.push(v.clone());
        } else {
            out.rejected_voxel += 1;
        }
    }
    if out.views.is_empty() {
        return Err(Error::NoUsableViews(format!(
            "all {} views rejected ({} too few corners, {} pose failures, {} duplicate viewpoints)",
            views.len(),
            out.rejected_corners,
            out.rejected_pose,
            out.rejected_voxel
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationResult {
    pub f: f64,
    pub per_view_poses: Vec<PoseRecord>,
    /// Per-corner RMS reprojection error, px.
    pub rms_reproj: f64,
    pub views_used: usize,
    pub views_rejected_corners: usize,
    pub views_rejected_pose: usize,
    pub views_rejected_voxel: usize,
    pub condition_estimate: f64,
    pub ill_conditioned: bool,
    pub iterations: usize,
    /// Objective after the start and after every accepted step.
    #[serde(skip)]
    pub accepted_costs: Vec<f64>,
}

impl CalibrationResult {
    pub fn poses(&self) -> Vec<Pose> {
        self.per_view_poses.iter().map(|&r| r.into()).collect()
    }
}

struct FocalProblem<'a> {
    views: Vec<&'a [Correspondence]>,
    cx: f64,
    cy: f64,
}

/// One view's share of the normal equations. Parameters are `[f, pose]`.
struct ViewBlock {
    ff: f64,
    fp: Vector6<f64>,
    pp: SMatrix<f64, 6, 6>,
    gf: f64,
    gp: Vector6<f64>,
    cost: f64,
}

impl FocalProblem<'_> {
    fn view_cost(&self, f: f64, p: &[f64], corrs: &[Correspondence]) -> f64 {
        let pose = Pose::from_params(p);
        let mut c = 0.0;
        for k in corrs {
            let q = pose.transform(&k.board_point);
            let du = f * q.x / q.z + self.cx - k.pixel.0;
            let dv = f * q.y / q.z + self.cy - k.pixel.1;
            c += du * du + dv * dv;
        }
        0.5 * c
    }

    fn view_block(&self, f: f64, p: &[f64], corrs: &[Correspondence]) -> ViewBlock {
        let w = Vector3::new(p[0], p[1], p[2]);
        let r = Rotation3::new(w);
        let jr = right_jacobian(&w);
        let t = Vector3::new(p[3], p[4], p[5]);
        let mut b = ViewBlock {
            ff: 0.0,
            fp: Vector6::zeros(),
            pp: SMatrix::zeros(),
            gf: 0.0,
            gp: Vector6::zeros(),
            cost: 0.0,
        };
        for k in corrs {
            let pr = project_with_jacobian(&r, &jr, &t, &k.board_point);
            let res = [
                f * pr.xy.x + self.cx - k.pixel.0,
                f * pr.xy.y + self.cy - k.pixel.1,
            ];
            for a in 0..2 {
                let jf = pr.xy[a];
                let jp: Vector6<f64> = pr.d_pose.row(a).transpose() * f;
                b.ff += jf * jf;
                b.fp += jp * jf;
                b.pp += jp * jp.transpose();
                b.gf += jf * res[a];
                b.gp += jp * res[a];
                b.cost += 0.5 * res[a] * res[a];
            }
        }
        b
    }

    fn n_points(&self) -> usize {
        self.views.iter().map(|v| v.len()).sum()
    }
}

impl LeastSquaresProblem for FocalProblem<'_> {
    fn cost(&self, x: &DVector<f64>) -> f64 {
        let f = x[0];
        if !(f > 0.0) {
            return f64::INFINITY;
        }
        let per_view: Vec<f64> = self
            .views
            .par_iter()
            .enumerate()
            .map(|(i, v)| self.view_cost(f, &x.as_slice()[1 + 6 * i..7 + 6 * i], v))
            .collect();
        per_view.iter().sum()
    }

    fn normal_equations(&self, x: &DVector<f64>) -> NormalEquations {
        let f = x[0];
        let blocks: Vec<ViewBlock> = self
            .views
            .par_iter()
            .enumerate()
            .map(|(i, v)| self.view_block(f, &x.as_slice()[1 + 6 * i..7 + 6 * i], v))
            .collect();
        let n = x.len();
        let mut jtj = DMatrix::zeros(n, n);
        let mut jtr = DVector::zeros(n);
        let mut cost = 0.0;
        // fixed reduction order keeps results independent of scheduling
        for (i, b) in blocks.iter().enumerate() {
            let o = 1 + 6 * i;
            jtj[(0, 0)] += b.ff;
            jtj.view_mut((0, o), (1, 6)).copy_from(&b.fp.transpose());
            jtj.view_mut((o, 0), (6, 1)).copy_from(&b.fp);
            jtj.view_mut((o, o), (6, 6)).copy_from(&b.pp);
            jtr[0] += b.gf;
            jtr.rows_mut(o, 6).copy_from(&b.gp);
            cost += b.cost;
        }
        NormalEquations { jtj, jtr, cost }
    }

    fn retract(&self, x: &DVector<f64>, delta: &DVector<f64>) -> DVector<f64> {
        let mut y = x + delta;
        for i in 0..self.views.len() {
            let o = 1 + 6 * i;
            let w = wrap_axis_angle(Vector3::new(y[o], y[o + 1], y[o + 2]));
            y.rows_mut(o, 3).copy_from(&w);
        }
        y
    }
}

/// Jointly refines `f` and every view's pose, starting from `k_init` and
/// per-view poses solved with it.
pub fn calibrate_focal(views: &[CalibrationView], k_init: &Intrinsics) -> Result<CalibrationResult> {
    calibrate_focal_with(views, k_init, &LmSettings::default())
}

pub fn calibrate_focal_with(
    views: &[CalibrationView],
    k_init: &Intrinsics,
    settings: &LmSettings,
) -> Result<CalibrationResult> {
    if views.len() < MIN_VIEWS {
        return Err(Error::NoUsableViews(format!(
            "{} views given, at least {MIN_VIEWS} needed",
            views.len()
        )));
    }
    k_init.validate()?;
    let init: Vec<Pose> = views
        .par_iter()
        .map(|v| solve_pnp(&v.correspondences, k_init).map(|s| s.pose))
        .collect::<Result<_>>()?;

    let mut x0 = DVector::zeros(1 + 6 * views.len());
    x0[0] = k_init.f;
    for (i, p) in init.iter().enumerate() {
        x0.rows_mut(1 + 6 * i, 6).copy_from_slice(&p.to_params());
    }
    let problem = FocalProblem {
        views: views.iter().map(|v| v.correspondences.as_slice()).collect(),
        cx: k_init.cx,
        cy: k_init.cy,
    };
    let report = lm::minimize(&problem, x0, settings)?;
    let f = report.params[0];
    if !(f > 0.0) {
        return Err(Error::NumericalFailure);
    }
    let cond = condition_estimate(&report.jtj);
    Ok(CalibrationResult {
        f,
        per_view_poses: (0..views.len())
            .map(|i| {
                let p = Pose::from_params(&report.params.as_slice()[1 + 6 * i..7 + 6 * i]);
                PoseRecord::from(&p)
            })
            .collect(),
        rms_reproj: (2.0 * report.cost / problem.n_points() as f64).sqrt(),
        views_used: views.len(),
        views_rejected_corners: 0,
        views_rejected_pose: 0,
        views_rejected_voxel: 0,
        condition_estimate: cond,
        ill_conditioned: !(cond <= ILL_CONDITIONED),
        iterations: report.iterations,
        accepted_costs: report.accepted_costs,
    })
}

/// Center estimation, voxel selection and calibration in one call.
pub fn calibrate_dataset(views: Vec<CalibrationView>, k_init: &Intrinsics, voxel_size: f64) -> Result<CalibrationResult> {
    let mut views = views;
    estimate_camera_centers(&mut views, k_init);
    let sel = select_views(&views, voxel_size)?;
    let mut res = calibrate_focal(&sel.views, k_init)?;
    res.views_rejected_corners = sel.rejected_corners;
    res.views_rejected_pose = sel.rejected_pose;
    res.views_rejected_voxel = sel.rejected_voxel;
    Ok(res)
}

/// `100 * |f_factory - f_calibrated| / f_factory`
pub fn focal_discrepancy(f_factory: f64, f_calibrated: f64) -> Result<f64> {
    if !(f_factory > 0.0 && f_calibrated > 0.0) {
        return Err(Error::DomainError(format!(
            "focal lengths must be > 0, got {f_factory} and {f_calibrated}"
        )));
    }
    Ok(100.0 * (f_factory - f_calibrated).abs() / f_factory)
}
