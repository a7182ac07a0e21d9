use std::path::Path;

use crate::error::{Error, Result};
use crate::io::ImagePlane;
use crate::tensor::{hmt, Tensor};

/// Per-pixel visibility thresholds in `[0, 1]` intensity units.
#[derive(Clone, Debug, PartialEq)]
pub struct JndMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl JndMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} map needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Contract(format!(
                "visibility threshold {bad} is not a finite value >= 0"
            )));
        }
        Ok(JndMap { width, height, values })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Channel-mean absolute difference between two images.
    pub fn from_difference(a: &ImagePlane, b: &ImagePlane) -> Result<Self> {
        if !a.same_dims(b) {
            return Err(Error::shape("images differ in size"));
        }
        let c = a.channels();
        let values = a
            .data()
            .chunks_exact(c)
            .zip(b.data().chunks_exact(c))
            .map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).abs()).sum::<f64>() / c as f64)
            .collect();
        Self::new(a.width(), a.height(), values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn matches(&self, image: &ImagePlane) -> bool {
        self.width == image.width() && self.height == image.height()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::shape("crop outside map"));
        }
        let values = (y0..y0 + h)
            .flat_map(|y| {
                self.values[y * self.width + x0..y * self.width + x0 + w]
                    .iter()
                    .copied()
            })
            .collect();
        Self::new(w, h, values)
    }

    /// `(H, W)` tensor for the HMT1 container.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width], self.values.clone()).expect("consistent")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [h, w] => Self::new(w, h, t.data().iter().map(|v| v.max(0.0)).collect()),
            ref s => Err(Error::shape(format!("JND map tensor must be (H, W), got {s:?}"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        hmt::save(&self.to_tensor(), path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor(&hmt::load(path)?)
    }

    /// Grayscale rendering normalized by the map maximum; brighter means a
    /// larger threshold.
    pub fn visualize(&self) -> ImagePlane {
        let max = self.max();
        let values = self
            .values
            .iter()
            .map(|&v| if max > 0.0 { v / max } else { 0.0 })
            .collect();
        ImagePlane::from_clamped(self.width, self.height, 1, values).expect("consistent")
    }
}
