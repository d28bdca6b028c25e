//! Injects the zoom bug into a synthetic ARKit depth map, then undoes it with
//! the factors recovered from the two sessions' metadata.

use depthaudit::bench::{clean_depth, render_view, session_metas, InjectedBug, SceneSpec};
use depthaudit::{zoom_depth_map, zoom_factors};

fn main() -> depthaudit::Result<()> {
    let mut spec = SceneSpec::calibration_default(565.0, 1, 7);
    spec.injected_bug = InjectedBug::ZoomStretch(1.0 / 0.95074);
    let view = render_view(&spec, 0)?;
    let pair = session_metas(&spec)?;
    let z = zoom_factors(&pair)?;
    println!("zoom from metadata: ({:.5}, {:.5})", z.zx, z.zy);

    let k = pair.ar.depth_intrinsics_vga()?;
    let fixed = zoom_depth_map(&view.depth, &k, z)?;
    let truth = clean_depth(&spec, 0)?;

    let rms = |d: &depthaudit::DepthMap| {
        let (mut se, mut n) = (0.0, 0);
        for j in 48..432 {
            for i in 64..576 {
                let (a, b) = (d.get(i, j), truth.get(i, j));
                if a.is_finite() && b.is_finite() {
                    se += ((a - b) as f64).powi(2);
                    n += 1;
                }
            }
        }
        (se / n as f64).sqrt() * 1000.0
    };
    println!("interior RMS vs clean depth: bugged {:.3} mm, fixed {:.6} mm", rms(&view.depth), rms(&fixed));
    Ok(())
}
