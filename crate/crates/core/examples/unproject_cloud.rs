//! Renders a tilted board, back-projects its depth and writes a PLY cloud.

use depthaudit::bench::{render_view, SceneSpec};
use depthaudit::io::write_ply;
use depthaudit::unproject_all;

fn main() -> depthaudit::Result<()> {
    let spec = SceneSpec::calibration_default(565.0, 4, 9);
    let view = render_view(&spec, 2)?;
    let k = view.meta.depth_intrinsics_vga()?;
    let pts = unproject_all(&view.depth, &k);
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
    println!("{} points, z in [{lo:.4}, {hi:.4}] m", pts.len());
    let out = std::env::temp_dir().join("depthaudit_board.ply");
    write_ply(&out, &pts)?;
    println!("cloud -> {}", out.display());
    Ok(())
}
