//! Auditing and correcting factory metadata of TrueDepth RGB-D captures.
//!
//! The pieces, roughly in pipeline order:
//!
//! - [`camera`]: pinhole intrinsics, depth maps, projection and unprojection.
//! - [`distortion`]: radial lookup tables and image warping.
//! - [`metadata`]: per-session capture metadata and the bundled device records.
//! - [`audit`]: sorting AV/ARKit pairs into healthy, zoom-misaligned or wrong-focal.
//! - [`correction`]: zoom and focal fixes, ARKit frame normalization.
//! - [`pose`], [`calibration`]: planar PnP and focal-only calibration.
//! - [`verification`]: depth against board geometry, overlays, histograms.
//! - [`bench`]: synthetic scenes with injected metadata bugs.
//! - [`io`], [`cli`]: file formats and the `depthaudit` command line.

pub mod audit;
pub mod bench;
pub mod calibration;
pub mod camera;
pub mod cli;
pub mod correction;
pub mod distortion;
pub mod error;
pub mod io;
pub mod lm;
pub mod metadata;
pub mod pose;
pub mod verification;

pub use audit::{audit_report, classify, classify_with, AuditConfig, AuditReport, AuditVerdict, IssueClass};
pub use camera::{
    project, rescale_intrinsics, sample_bilinear, unproject, unproject_all, DepthMap, Intrinsics, Raster, RgbImage,
};
pub use correction::{correct_focal_ar, correct_focal_av, zoom_depth_map, zoom_factors, FocalCorrection, ZoomFactors};
pub use error::{Error, Result};
pub use metadata::{fixture_database, meta_ratios, Api, CaptureMeta, MetaRatios, SessionPair};
pub use pose::{solve_pnp, Correspondence, Pose};
