//! Sign-randomized noise injection scaled by a visibility-threshold map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics::mse_raw;
use super::JndMap;
use crate::error::{Error, Result};
use crate::io::ImagePlane;

/// Scale that brings `α·I_vt` noise to `target_mse` (8-bit squared units),
/// ignoring the final clamp to `[0, 1]`.
pub fn calibrate_alpha(i_vt: &JndMap, target_mse: f64) -> Result<f64> {
    if !(target_mse > 0.0 && target_mse.is_finite()) {
        return Err(Error::Param(format!("target MSE must be positive, got {target_mse}")));
    }
    let energy: f64 = i_vt.values().iter().map(|v| (255.0 * v).powi(2)).sum::<f64>() / i_vt.values().len() as f64;
    if energy == 0.0 {
        return Err(Error::UnboundedAlpha);
    }
    Ok((target_mse / energy).sqrt())
}

/// One `±1` per pixel, uniform and independent.
pub fn sign_field(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect()
}

/// A contaminated image with its error before and after clamping.
#[derive(Clone, Debug)]
pub struct Injection {
    pub image: ImagePlane,
    pub mse_pre_clip: f64,
    pub mse_post_clip: f64,
}

/// `I_ori + α·γ·I_vt`, the same sign at every channel of a pixel.
pub fn inject(i_ori: &ImagePlane, i_vt: &JndMap, alpha: f64, seed: u64) -> Result<Injection> {
    if !i_vt.matches(i_ori) {
        return Err(Error::shape(format!(
            "{}x{} threshold map for a {}x{} image",
            i_vt.width(),
            i_vt.height(),
            i_ori.width(),
            i_ori.height()
        )));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Param(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    let c = i_ori.channels();
    let signs = sign_field(seed, i_ori.pixels());
    let raw: Vec<f64> = i_ori
        .data()
        .iter()
        .enumerate()
        .map(|(j, &v)| v + alpha * signs[j / c] * i_vt.values()[j / c])
        .collect();
    let mse_pre_clip = mse_raw(&raw, i_ori.data());
    let image = ImagePlane::from_clamped(i_ori.width(), i_ori.height(), c, raw)?;
    let mse_post_clip = mse_raw(image.data(), i_ori.data());
    Ok(Injection {
        image,
        mse_pre_clip,
        mse_post_clip,
    })
}

pub fn inject_noise(i_ori: &ImagePlane, i_vt: &JndMap, alpha: f64, seed: u64) -> Result<ImagePlane> {
    inject(i_ori, i_vt, alpha, seed).map(|r| r.image)
}
