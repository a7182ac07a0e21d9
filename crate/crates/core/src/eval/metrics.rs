//! Full-reference quality metrics on the 0–255 scale.

use crate::error::{Error, Result};
use crate::io::ImagePlane;

const PEAK: f64 = 255.0;
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Per-scale weights of the five-scale MS-SSIM.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

fn check_dims(a: &ImagePlane, b: &ImagePlane) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::shape(format!(
            "images differ: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

/// Mean squared error over all samples, on the 0–255 scale.
pub fn mse(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    check_dims(a, b)?;
    Ok(mse_raw(a.data(), b.data()))
}

pub(crate) fn mse_raw(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (PEAK * (x - y)).powi(2)).sum();
    s / a.len() as f64
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

pub fn mse_from_psnr(psnr: f64) -> f64 {
    PEAK * PEAK / 10f64.powf(psnr / 10.0)
}

/// `10·log10(255²/MSE)`; `+inf` for identical images.
pub fn psnr(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Grayscale plane on the 0–255 scale.
#[derive(Clone, Debug)]
struct Gray {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Gray {
    fn from_plane(p: &ImagePlane) -> Self {
        Gray {
            w: p.width(),
            h: p.height(),
            v: p.luma().into_iter().map(|x| x * PEAK).collect(),
        }
    }

    /// 2×2 mean, dropping an odd trailing row/column.
    fn downsample(&self) -> Self {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut v = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let at = |dx, dy| self.v[(2 * y + dy) * self.w + 2 * x + dx];
                v.push((at(0, 0) + at(1, 0) + at(0, 1) + at(1, 1)) / 4.0);
            }
        }
        Gray { w, h, v }
    }
}

fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter evaluated at valid positions only.
fn filter_valid(img: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..WINDOW).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn ssim_components(a: &Gray, b: &Gray) -> Result<(f64, f64)> {
    if a.w < WINDOW || a.h < WINDOW {
        return Err(Error::shape(format!(
            "{}x{} image is smaller than the {WINDOW}x{WINDOW} window",
            a.w, a.h
        )));
    }
    let k = gaussian_kernel();
    let (w, h) = (a.w, a.h);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(&a.v, w, h, &k);
    let mu_b = filter_valid(&b.v, w, h, &k);
    let aa = filter_valid(&prod(&a.v, &a.v), w, h, &k);
    let bb = filter_valid(&prod(&b.v, &b.v), w, h, &k);
    let ab = filter_valid(&prod(&a.v, &b.v), w, h, &k);
    let c1 = (K1 * PEAK).powi(2);
    let c2 = (K2 * PEAK).powi(2);
    let (mut s_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        s_sum += l * cs;
        cs_sum += cs;
    }
    let n = mu_a.len() as f64;
    Ok((s_sum / n, cs_sum / n))
}

/// Mean SSIM of the BT.601 luma planes over all valid window positions.
pub fn ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    check_dims(a, b)?;
    Ok(ssim_components(&Gray::from_plane(a), &Gray::from_plane(b))?.0)
}

/// Number of scales usable on a `w×h` image: the coarsest scale must still
/// hold one full window.
pub fn ms_ssim_scales(w: usize, h: usize) -> usize {
    let min = w.min(h);
    (1..=MS_SSIM_WEIGHTS.len())
        .rev()
        .find(|&m| min >> (m - 1) >= WINDOW)
        .unwrap_or(0)
}

/// Multi-scale SSIM on luma, in `[0, 1]`. Images too small for five scales
/// use fewer, with the leading weights renormalized to sum to one.
pub fn ms_ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    check_dims(a, b)?;
    let scales = ms_ssim_scales(a.width(), a.height());
    if scales == 0 {
        return Err(Error::shape(format!(
            "{}x{} image is smaller than the {WINDOW}x{WINDOW} window",
            a.width(),
            a.height()
        )));
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let total: f64 = weights.iter().sum();
    let (mut ga, mut gb) = (Gray::from_plane(a), Gray::from_plane(b));
    let mut score = 1.0;
    for (j, w) in weights.iter().enumerate() {
        let (s, cs) = ssim_components(&ga, &gb)?;
        let term = if j + 1 == scales { s } else { cs };
        score *= term.max(0.0).powf(w / total);
        if j + 1 < scales {
            ga = ga.downsample();
            gb = gb.downsample();
        }
    }
    Ok(score.clamp(0.0, 1.0))
}
