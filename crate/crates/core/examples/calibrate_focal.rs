//! Focal-only calibration on a noisy synthetic board sweep, started from a
//! factory value that is 6% off.

use depthaudit::bench::{calibration_views, SceneSpec};
use depthaudit::calibration::{calibrate_dataset, focal_discrepancy, DEFAULT_VOXEL_SIZE};

fn main() -> depthaudit::Result<()> {
    let f_true = 565.85;
    let mut spec = SceneSpec::calibration_default(f_true, 50, 3);
    spec.corner_noise_sigma = 0.5;
    let views = calibration_views(&spec)?;
    let factory = spec.true_intrinsics.with_focal(f_true * 1.06)?;

    let res = calibrate_dataset(views, &factory, DEFAULT_VOXEL_SIZE)?;
    println!(
        "f = {:.3} px (true {f_true}) from {} views, {} dropped as duplicate viewpoints",
        res.f, res.views_used, res.views_rejected_voxel
    );
    println!("rms {:.3} px after {} iterations", res.rms_reproj, res.iterations);
    println!("factory value differs by {:.2}%", focal_discrepancy(factory.f, res.f)?);
    Ok(())
}
