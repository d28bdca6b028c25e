//! Radial lookup tables: a forward/inverse pair and an image undistortion.

use depthaudit::bench::{inverse_lut, synthetic_lut};
use depthaudit::distortion::{warp_image, warp_point};
use depthaudit::Raster;

fn main() -> depthaudit::Result<()> {
    let fwd = synthetic_lut(0.04, 64, (321.3, 238.8), 640, 480)?;
    let inv = inverse_lut(&fwd, 64)?;
    println!("r_max {:.2} px, edge magnification {:.4}", fwd.r_max(), fwd.magnifications()[63]);

    for (u, v) in [(320.0, 240.0), (100.0, 50.0), (600.0, 460.0)] {
        let (a, b) = warp_point(&fwd, u, v);
        let (c, d) = warp_point(&inv, a, b);
        println!("({u:5.1}, {v:5.1}) -> ({a:7.3}, {b:7.3}) -> ({c:7.3}, {d:7.3})");
    }

    let grid = Raster::from_fn(640, 480, |i, j| if (i / 40 + j / 40) % 2 == 0 { 1.0f32 } else { 0.0 });
    let warped = warp_image(&grid, &fwd)?;
    let changed = warped.data.iter().zip(&grid.data).filter(|(a, b)| a != b).count();
    println!("{changed} of {} pixels changed by the warp", grid.data.len());
    Ok(())
}
