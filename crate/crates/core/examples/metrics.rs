//! PSNR, SSIM and MS-SSIM of a scene against increasingly noisy copies.

use hmjnd::eval::metrics::psnr_from_mse;
use hmjnd::eval::{inject, ms_ssim, mse, psnr, ssim, JndMap};
use hmjnd::io::synth_bundle;

fn main() -> hmjnd::Result<()> {
    println!("PSNR at MSE 100: {:.4} dB", psnr_from_mse(100.0));
    let b = synth_bundle(2, 96, 96)?;
    let map = JndMap::constant(96, 96, 0.01)?;
    println!("alpha  mse       psnr     ssim    ms_ssim");
    for alpha in [0.0, 1.0, 2.0, 4.0, 8.0] {
        let noisy = inject(&b.rgb, &map, alpha, 1)?.image;
        let m = mse(&noisy, &b.rgb)?;
        let p = if m > 0.0 { psnr(&noisy, &b.rgb)? } else { f64::INFINITY };
        println!(
            "{alpha:5.1}  {m:8.3}  {p:7.3}  {:.4}  {:.4}",
            ssim(&noisy, &b.rgb)?,
            ms_ssim(&noisy, &b.rgb)?
        );
    }
    Ok(())
}
