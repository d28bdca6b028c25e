//! Planar perspective-n-point: DLT homography, decomposition into a pose, and
//! Levenberg–Marquardt refinement of the reprojection error.
//!
//! Rotations are parameterized by axis-angle vectors. The analytic Jacobian
//! uses the right Jacobian of SO(3), so it is the true derivative with respect
//! to the axis-angle parameters (not a local tangent-space chart).

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Point3, Rotation3, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::Intrinsics;
use crate::error::{Error, Result};
use crate::lm::{self, LeastSquaresProblem, LmSettings, NormalEquations};

/// Rigid transform mapping board coordinates to camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation: Rotation3::new(axis_angle),
            translation,
        }
    }

    pub fn axis_angle(&self) -> Vector3<f64> {
        log_rotation(&self.rotation)
    }

    pub fn transform(&self, p: &Point3<f64>) -> Point3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let r = self.rotation.inverse();
        Pose {
            rotation: r,
            translation: -(r * self.translation),
        }
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Camera center expressed in the board frame.
    pub fn camera_center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.inverse() * self.translation))
    }

    /// Angle of the relative rotation between two poses, radians.
    pub fn rotation_error(&self, other: &Pose) -> f64 {
        log_rotation(&(self.rotation.inverse() * other.rotation)).norm()
    }

    pub(crate) fn to_params(self) -> [f64; 6] {
        let w = self.axis_angle();
        let t = self.translation;
        [w.x, w.y, w.z, t.x, t.y, t.z]
    }

    pub(crate) fn from_params(p: &[f64]) -> Pose {
        Pose::from_axis_angle(Vector3::new(p[0], p[1], p[2]), Vector3::new(p[3], p[4], p[5]))
    }
}

/// Serialized form: axis-angle (radians) and translation (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub axis_angle: [f64; 3],
    pub translation: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        let w = p.axis_angle();
        PoseRecord {
            axis_angle: [w.x, w.y, w.z],
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl From<PoseRecord> for Pose {
    fn from(r: PoseRecord) -> Self {
        Pose::from_axis_angle(Vector3::from(r.axis_angle), Vector3::from(r.translation))
    }
}

/// A detected board corner: its id, board-frame position and pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub id: u32,
    pub board_point: Point3<f64>,
    pub pixel: (f64, f64),
}

/// A correspondence whose image point is in normalized camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedCorrespondence {
    pub id: u32,
    pub board_point: Point3<f64>,
    pub point: Vector2<f64>,
}

pub fn normalize_points(corrs: &[Correspondence], k: &Intrinsics) -> Vec<NormalizedCorrespondence> {
    corrs
        .iter()
        .map(|c| {
            let (x, y) = k.normalize(c.pixel.0, c.pixel.1);
            NormalizedCorrespondence {
                id: c.id,
                board_point: c.board_point,
                point: Vector2::new(x, y),
            }
        })
        .collect()
}

pub fn denormalize_points(corrs: &[NormalizedCorrespondence], k: &Intrinsics) -> Vec<Correspondence> {
    corrs
        .iter()
        .map(|c| Correspondence {
            id: c.id,
            board_point: c.board_point,
            pixel: k.denormalize(c.point.x, c.point.y),
        })
        .collect()
}

const PLANAR_TOL: f64 = 1e-9;

/// Similarity taking points to zero centroid and mean distance sqrt(2).
fn hartley(points: impl Iterator<Item = Vector2<f64>> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let c = points.clone().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean_dist = points.map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

/// DLT homography from board `(X, Y)` to normalized image points, with
/// Hartley normalization. The result has unit Frobenius norm.
pub fn estimate_homography(corrs: &[NormalizedCorrespondence]) -> Result<Matrix3<f64>> {
    if corrs.len() < 4 {
        return Err(Error::InsufficientPoints {
            needed: 4,
            got: corrs.len(),
        });
    }
    if let Some(c) = corrs.iter().find(|c| c.board_point.z.abs() > PLANAR_TOL) {
        return Err(Error::DegenerateConfiguration(format!(
            "board point {} is off the z = 0 plane",
            c.id
        )));
    }
    let src = corrs.iter().map(|c| c.board_point.xy().coords);
    let dst = corrs.iter().map(|c| c.point);
    let ts = hartley(src);
    let td = hartley(dst);

    let rows = (2 * corrs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, c) in corrs.iter().enumerate() {
        let p = ts * c.board_point.xy().coords.push(1.0);
        let q = td * c.point.push(1.0);
        let (x, y) = (p.x / p.z, p.y / p.z);
        let (u, v) = (q.x / q.z, q.y / q.z);
        let r0 = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u];
        let r1 = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, -v];
        for k in 0..9 {
            a[(2 * i, k)] = r0[k];
            a[(2 * i + 1, k)] = r1[k];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::NumericalFailure)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let s = &svd.singular_values;
    let largest = s[order[order.len() - 1]];
    if !(largest > 0.0) || s[order[1]] <= 1e-10 * largest {
        return Err(Error::DegenerateConfiguration(
            "homography system is rank deficient (collinear or repeated points)".into(),
        ));
    }
    let h = v_t.row(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().ok_or(Error::NumericalFailure)?;
    let hm = td_inv * hn * ts;
    let norm = hm.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::NumericalFailure);
    }
    Ok(hm / norm)
}

/// Nearest rotation (Frobenius) to a 3x3 matrix.
fn nearest_rotation(m: &Matrix3<f64>) -> Result<Rotation3<f64>> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.ok_or(Error::NumericalFailure)?, svd.v_t.ok_or(Error::NumericalFailure)?);
    let d = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
    Ok(Rotation3::from_matrix_unchecked(r))
}

/// Decomposes a calibrated-coordinates homography `H ∝ [r1 r2 t]`.
pub fn pose_from_homography(h: &Matrix3<f64>) -> Result<Pose> {
    let h1 = h.column(0).into_owned();
    let n1 = h1.norm();
    if !(n1 > 1e-15) || !n1.is_finite() {
        return Err(Error::DegenerateConfiguration("first homography column vanishes".into()));
    }
    let mut lambda = 1.0 / n1;
    if h[(2, 2)] * lambda < 0.0 {
        lambda = -lambda;
    }
    let r1 = h1 * lambda;
    let r2 = h.column(1).into_owned() * lambda;
    let t = h.column(2).into_owned() * lambda;
    if !(t.z > 0.0) {
        return Err(Error::DegenerateConfiguration(
            "board is not in front of the camera under either sign".into(),
        ));
    }
    let r3 = r1.cross(&r2);
    let m = Matrix3::from_columns(&[r1, r2, r3]);
    Ok(Pose::new(nearest_rotation(&m)?, t))
}

/// Axis-angle of a rotation, robust to rounding drift near the identity.
pub(crate) fn log_rotation(r: &Rotation3<f64>) -> Vector3<f64> {
    let m = r.matrix();
    let v = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5;
    let s = v.norm();
    let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);
    if theta < 1e-8 {
        return v;
    }
    if c > -0.9 {
        return v * (theta / s);
    }
    // near pi the antisymmetric part vanishes; read the axis off R + R^T
    let b = (m + m.transpose()) * 0.5 - Matrix3::identity() * c;
    let col = (0..3).max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)])).unwrap();
    let mut axis = b.column(col).into_owned().normalize();
    if axis.dot(&v) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right Jacobian of SO(3): `Exp(w + d) ≈ Exp(w) Exp(J_r(w) d)`.
pub(crate) fn right_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = skew(w);
    let k2 = k * k;
    let (a, b) = if theta < 1e-6 {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    };
    Matrix3::identity() - k * a + k2 * b
}

/// Wraps an axis-angle vector into the ball of radius pi.
pub(crate) fn wrap_axis_angle(w: Vector3<f64>) -> Vector3<f64> {
    let theta = w.norm();
    if theta > std::f64::consts::PI {
        w * (1.0 - 2.0 * std::f64::consts::PI / theta)
    } else {
        w
    }
}

/// Projection of a board point and its derivatives.
pub(crate) struct Projected {
    /// Normalized image point `(x/z, y/z)`.
    pub xy: Vector2<f64>,
    /// d(xy)/d(axis-angle, translation).
    pub d_pose: SMatrix<f64, 2, 6>,
}

pub(crate) fn project_with_jacobian(
    r: &Rotation3<f64>,
    jr: &Matrix3<f64>,
    t: &Vector3<f64>,
    x: &Point3<f64>,
) -> Projected {
    let rx = r * x.coords;
    let p = rx + t;
    let iz = 1.0 / p.z;
    let dpi = Matrix2x3::new(iz, 0.0, -p.x * iz * iz, 0.0, iz, -p.y * iz * iz);
    // d(R X)/dw = -R [X]x J_r(w)
    let drot = -(r.matrix() * skew(&x.coords) * jr);
    let mut d_pose = SMatrix::<f64, 2, 6>::zeros();
    d_pose.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dpi * drot));
    d_pose.fixed_view_mut::<2, 3>(0, 3).copy_from(&dpi);
    Projected {
        xy: Vector2::new(p.x * iz, p.y * iz),
        d_pose,
    }
}

struct PoseProblem<'a> {
    corrs: &'a [NormalizedCorrespondence],
}

impl PoseProblem<'_> {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let pose = Pose::from_params(x.as_slice());
        let mut r = DVector::zeros(2 * self.corrs.len());
        for (i, c) in self.corrs.iter().enumerate() {
            let p = pose.transform(&c.board_point);
            r[2 * i] = p.x / p.z - c.point.x;
            r[2 * i + 1] = p.y / p.z - c.point.y;
        }
        r
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let w = Vector3::new(x[0], x[1], x[2]);
        let r = Rotation3::new(w);
        let jr = right_jacobian(&w);
        let t = Vector3::new(x[3], x[4], x[5]);
        let mut j = DMatrix::zeros(2 * self.corrs.len(), 6);
        for (i, c) in self.corrs.iter().enumerate() {
            let pr = project_with_jacobian(&r, &jr, &t, &c.board_point);
            j.view_mut((2 * i, 0), (2, 6)).copy_from(&pr.d_pose);
        }
        j
    }
}

impl LeastSquaresProblem for PoseProblem<'_> {
    fn cost(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.residuals(x).norm_squared()
    }

    fn normal_equations(&self, x: &DVector<f64>) -> NormalEquations {
        let r = self.residuals(x);
        let j = self.jacobian(x);
        NormalEquations {
            jtj: j.transpose() * &j,
            jtr: j.transpose() * &r,
            cost: 0.5 * r.norm_squared(),
        }
    }

    fn retract(&self, x: &DVector<f64>, delta: &DVector<f64>) -> DVector<f64> {
        let mut y = x + delta;
        let w = wrap_axis_angle(Vector3::new(y[0], y[1], y[2]));
        y[0] = w.x;
        y[1] = w.y;
        y[2] = w.z;
        y
    }
}

/// Stacked reprojection residuals `(x/z - x_obs, y/z - y_obs)` for a pose.
pub fn pose_residuals(corrs: &[NormalizedCorrespondence], pose: &Pose) -> DVector<f64> {
    PoseProblem { corrs }.residuals(&DVector::from_row_slice(&pose.to_params()))
}

/// Analytic Jacobian of [`pose_residuals`] w.r.t. `[axis_angle, translation]`.
pub fn pose_jacobian(corrs: &[NormalizedCorrespondence], pose: &Pose) -> DMatrix<f64> {
    PoseProblem { corrs }.jacobian(&DVector::from_row_slice(&pose.to_params()))
}

/// Root mean squared 2D reprojection error per point.
fn rms_per_point(cost: f64, n: usize) -> f64 {
    (2.0 * cost / n as f64).sqrt()
}

/// Refines a pose by minimizing normalized reprojection error. Returns the
/// pose and the per-point RMS error in normalized units.
pub fn refine_pose_lm(corrs: &[NormalizedCorrespondence], init: &Pose) -> Result<(Pose, f64)> {
    refine_pose_lm_with(corrs, init, &LmSettings::default())
}

pub fn refine_pose_lm_with(
    corrs: &[NormalizedCorrespondence],
    init: &Pose,
    settings: &LmSettings,
) -> Result<(Pose, f64)> {
    if corrs.len() < 4 {
        return Err(Error::InsufficientPoints {
            needed: 4,
            got: corrs.len(),
        });
    }
    let x0 = init.to_params();
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure);
    }
    let problem = PoseProblem { corrs };
    let report = lm::minimize(&problem, DVector::from_row_slice(&x0), settings)?;
    Ok((
        Pose::from_params(report.params.as_slice()),
        rms_per_point(report.cost, corrs.len()),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpSolution {
    pub pose: Pose,
    /// Per-point RMS reprojection error in pixels.
    pub rms_px: f64,
}

/// Full planar PnP: normalize, homography, decompose, refine.
pub fn solve_pnp(corrs: &[Correspondence], k: &Intrinsics) -> Result<PnpSolution> {
    let norm = normalize_points(corrs, k);
    let h = estimate_homography(&norm)?;
    let init = pose_from_homography(&h)?;
    let (pose, rms) = refine_pose_lm(&norm, &init)?;
    Ok(PnpSolution {
        pose,
        rms_px: rms * k.f,
    })
}
