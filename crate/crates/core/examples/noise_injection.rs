//! Calibrates JND-shaped noise to a target MSE and reports the error
//! before and after clamping.
//!
//! Usage: `noise_injection [target_mse]`.

use hmjnd::eval::{calibrate_alpha, inject, psnr, JndMap};
use hmjnd::io::synth_corpus;

fn main() -> hmjnd::Result<()> {
    let target: f64 = std::env::args()
        .nth(1)
        .map_or(100.0, |s| s.parse().expect("target MSE"));
    println!("scene  alpha     mse_pre   mse_post  psnr");
    for (k, b) in synth_corpus(0, 6, 48, 48)?.iter().enumerate() {
        let gt = b.ground_truth.as_ref().expect("synthetic ground truth");
        let map = JndMap::from_difference(&b.rgb, gt)?;
        let alpha = calibrate_alpha(&map, target)?;
        let inj = inject(&b.rgb, &map, alpha, k as u64)?;
        println!(
            "{k:5}  {alpha:8.4}  {:8.3}  {:8.3}  {:.3}",
            inj.mse_pre_clip,
            inj.mse_post_clip,
            psnr(&inj.image, &b.rgb)?
        );
    }
    Ok(())
}
