//! Sorting a device's AV/ARKit metadata pair into one of three outcomes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::correction::{correct_focal_ar, correct_focal_av, zoom_factors, ZoomFactors};
use crate::error::{Error, Result};
use crate::metadata::{meta_ratios, SessionPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IssueClass {
    Healthy,
    ZoomMisalignment,
    WrongFocal,
}

impl IssueClass {
    pub fn is_issue(self) -> bool {
        self != IssueClass::Healthy
    }
}

/// Percent thresholds separating healthy pairs from defective ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub depth_threshold_pct: f64,
    pub ird_threshold_pct: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            depth_threshold_pct: 1.0,
            ird_threshold_pct: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditVerdict {
    pub device: String,
    pub os_version: String,
    pub class: IssueClass,
    /// `|100 * (f_ar / f_av - 1)|`
    pub depth_intrinsics_diff: f64,
    /// `|100 * (IRD_ar_w / IRD_av_w - 1)|`
    pub ird_diff: f64,
    pub recommended_zoom: Option<ZoomFactors>,
    /// VGA-scaled.
    pub recommended_focal_av: Option<f64>,
    /// VGA-scaled.
    pub recommended_focal_ar: Option<f64>,
    pub notes: Vec<String>,
}

pub fn classify(pair: &SessionPair) -> Result<AuditVerdict> {
    classify_with(pair, &AuditConfig::default())
}

pub fn classify_with(pair: &SessionPair, cfg: &AuditConfig) -> Result<AuditVerdict> {
    let ratios = meta_ratios(pair)?;
    let depth_diff = ratios.depth_diff_percent().abs();
    let ird_diff = ratios.ird_diff_percent().abs();
    let focal_bad = depth_diff >= cfg.depth_threshold_pct;
    let zoom_bad = ird_diff >= cfg.ird_threshold_pct;

    let mut v = AuditVerdict {
        device: pair.device().to_string(),
        os_version: pair.av.os_version.clone(),
        class: IssueClass::Healthy,
        depth_intrinsics_diff: depth_diff,
        ird_diff,
        recommended_zoom: None,
        recommended_focal_av: None,
        recommended_focal_ar: None,
        notes: Vec::new(),
    };

    if focal_bad {
        let av = correct_focal_av(
            pair.av.depth_f(),
            pair.ar.depth_f(),
            pair.av.intrinsic_reference_dimensions.0 as f64,
        )?;
        let ar = correct_focal_ar(
            pair.ar.depth_f(),
            pair.av.depth_f(),
            pair.ar.intrinsic_reference_dimensions.0 as f64,
        )?;
        v.class = IssueClass::WrongFocal;
        v.recommended_focal_av = Some(av.f_vga);
        v.recommended_focal_ar = Some(ar.f_vga);
        v.notes.push(format!(
            "depth focal differs by {depth_diff:.2}% between sessions; replace the AV VGA focal with {:.2} px and the ARKit VGA focal with {:.2} px",
            av.f_vga, ar.f_vga
        ));
        if zoom_bad {
            v.notes.push(format!(
                "reference dimensions also differ by {ird_diff:.1}%; WrongFocal takes precedence over ZoomMisalignment"
            ));
        }
    } else if zoom_bad {
        let z = zoom_factors(pair)?;
        v.class = IssueClass::ZoomMisalignment;
        v.recommended_zoom = Some(z);
        v.notes.push(format!(
            "ARKit depth is stretched relative to color; zoom ARKit depth about the principal point by ({:.5}, {:.5})",
            z.zx, z.zy
        ));
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassCounts {
    pub healthy: usize,
    pub zoom_misalignment: usize,
    pub wrong_focal: usize,
}

/// Machine-readable audit result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub counts: ClassCounts,
    pub recommendations: usize,
    pub verdicts: Vec<AuditVerdict>,
}

impl AuditReport {
    pub fn any_issue(&self) -> bool {
        self.verdicts.iter().any(|v| v.class.is_issue())
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for v in &self.verdicts {
            let _ = write!(
                s,
                "{:<24} iOS {:<7} {:<16} depth {:>6.2}%  ird {:>5.1}%",
                v.device,
                v.os_version,
                format!("{:?}", v.class),
                v.depth_intrinsics_diff,
                v.ird_diff
            );
            if let Some(z) = v.recommended_zoom {
                let _ = write!(s, "  zoom ({:.4}, {:.4})", z.zx, z.zy);
            }
            if let (Some(a), Some(r)) = (v.recommended_focal_av, v.recommended_focal_ar) {
                let _ = write!(s, "  f_av {a:.2} px  f_ar {r:.2} px");
            }
            s.push('\n');
        }
        let c = &self.counts;
        let _ = writeln!(
            s,
            "{} healthy, {} zoom misalignment, {} wrong focal",
            c.healthy, c.zoom_misalignment, c.wrong_focal
        );
        s
    }
}

pub fn audit_report(verdicts: &[AuditVerdict]) -> Result<AuditReport> {
    if verdicts.is_empty() {
        return Err(Error::EmptyReport);
    }
    let count = |c: IssueClass| verdicts.iter().filter(|v| v.class == c).count();
    Ok(AuditReport {
        schema_version: 1,
        counts: ClassCounts {
            healthy: count(IssueClass::Healthy),
            zoom_misalignment: count(IssueClass::ZoomMisalignment),
            wrong_focal: count(IssueClass::WrongFocal),
        },
        recommendations: verdicts.iter().filter(|v| v.class.is_issue()).count(),
        verdicts: verdicts.to_vec(),
    })
}
