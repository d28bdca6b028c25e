//! Corrected depth focal lengths for a wrong-focal device pair.

use depthaudit::metadata::find_pair;
use depthaudit::{correct_focal_ar, correct_focal_av, fixture_database, meta_ratios};

fn main() -> depthaudit::Result<()> {
    let db = fixture_database();
    let pair = find_pair(&db, "iPad 12.9'' 5gen", Some("14")).expect("bundled record");
    let r = meta_ratios(pair)?;
    println!("depth focal mismatch {:.2}%", r.depth_diff_percent());

    let (f_av, f_ar) = (pair.av.depth_f(), pair.ar.depth_f());
    let av = correct_focal_av(f_av, f_ar, pair.av.intrinsic_reference_dimensions.0 as f64)?;
    let ar = correct_focal_ar(f_ar, f_av, pair.ar.intrinsic_reference_dimensions.0 as f64)?;
    println!("AV:    {f_av:.2} -> {:.2} px unscaled, {:.2} px at 640x480", av.f_corrected, av.f_vga);
    println!("ARKit: {f_ar:.2} -> {:.2} px unscaled, {:.2} px at 640x480", ar.f_corrected, ar.f_vga);
    Ok(())
}
