//! Full-range YCbCr planes in 8-bit units.

use crate::error::Result;
use crate::io::ImagePlane;

/// `[Y]` for a gray plane, `[Y, Cb, Cr]` for RGB.
pub fn to_ycc(img: &ImagePlane) -> Vec<Vec<f64>> {
    if img.channels() == 1 {
        return vec![img.data().iter().map(|v| v * 255.0).collect()];
    }
    let mut planes: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(img.pixels())).collect();
    for p in img.data().chunks_exact(3) {
        let (r, g, b) = (p[0] * 255.0, p[1] * 255.0, p[2] * 255.0);
        planes[0].push(0.299 * r + 0.587 * g + 0.114 * b);
        planes[1].push(128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b);
        planes[2].push(128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b);
    }
    planes
}

/// Inverse of [`to_ycc`], clamped to `[0, 1]`.
pub fn from_ycc(planes: &[Vec<f64>], width: usize, height: usize) -> Result<ImagePlane> {
    if planes.len() == 1 {
        return ImagePlane::from_clamped(width, height, 1, planes[0].iter().map(|v| v / 255.0).collect());
    }
    let mut data = Vec::with_capacity(width * height * 3);
    let n = width * height;
    for ((&y, &cb), &cr) in planes[0][..n].iter().zip(&planes[1][..n]).zip(&planes[2][..n]) {
        let (cb, cr) = (cb - 128.0, cr - 128.0);
        data.push((y + 1.402 * cr) / 255.0);
        data.push((y - 0.344136 * cb - 0.714136 * cr) / 255.0);
        data.push((y + 1.772 * cb) / 255.0);
    }
    ImagePlane::from_clamped(width, height, 3, data)
}
