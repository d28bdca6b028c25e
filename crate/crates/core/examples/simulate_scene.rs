//! Writes a synthetic dataset with the focal bug injected, then audits its
//! metadata pair.

use depthaudit::bench::{generate_dataset, InjectedBug, SceneSpec};
use depthaudit::{classify, CaptureMeta, SessionPair};

fn main() -> depthaudit::Result<()> {
    let mut spec = SceneSpec::calibration_default(565.0, 5, 2024);
    spec.corner_noise_sigma = 0.3;
    spec.depth_noise_sigma = 0.001;
    spec.injected_bug = InjectedBug::FocalLie(1.0754);

    let out = std::env::temp_dir().join("depthaudit_sim");
    let summary = generate_dataset(&spec, &out)?;
    println!("{} views in {}: {}", summary.views, out.display(), summary.view_dirs.join(", "));

    let pair = SessionPair::new(
        CaptureMeta::from_path(out.join("meta.json"))?,
        CaptureMeta::from_path(out.join("meta_arkit.json"))?,
    )?;
    let v = classify(&pair)?;
    println!("audit: {:?} (depth focal mismatch {:.2}%)", v.class, v.depth_intrinsics_diff);
    Ok(())
}
