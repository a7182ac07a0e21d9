//! Threshold-guided pixel preprocessing and residual filtering on 8-bit luma.

use std::fmt;

use super::color;
use crate::error::{Error, Result};
use crate::eval::JndMap;
use crate::io::ImagePlane;

pub const BLOCK: usize = 8;

/// Substituted for a zero block variance in [`filter_residual`].
pub const VARIANCE_EPS: f64 = 1e-6;

/// Largest residual magnitude of 8-bit data. Filtered residuals are clipped
/// to it: the gain `i_vt / var_block` exceeds one in blocks flatter than
/// their threshold.
pub const RESIDUAL_LIMIT: f64 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelBranch {
    ClampToMean,
    ShiftUp,
    ShiftDown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualBranch {
    Zeroed,
    Negative,
    Positive,
}

/// Moves `value` toward the block mean by at most `vt`, snapping to the mean
/// when it is already within `vt`.
pub fn preprocess_pixel(value: f64, block_mean: f64, vt: f64) -> (f64, PixelBranch) {
    let d = value - block_mean;
    if d.abs() <= vt {
        (block_mean, PixelBranch::ClampToMean)
    } else if d < -vt {
        (value + vt, PixelBranch::ShiftUp)
    } else {
        (value - vt, PixelBranch::ShiftDown)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilteredResidual {
    pub value: f64,
    pub branch: ResidualBranch,
    /// The block variance was zero and replaced by [`VARIANCE_EPS`].
    pub guarded: bool,
}

/// Residual filter with its branch and division-guard flag.
pub fn filter_residual_traced(r: f64, vt: f64, var_local: f64, var_block: f64) -> FilteredResidual {
    let guarded = var_block == 0.0;
    let vb = if guarded { VARIANCE_EPS } else { var_block };
    let (value, branch) = if r.abs() <= vt && var_local > var_block {
        (0.0, ResidualBranch::Zeroed)
    } else if r < 0.0 {
        ((r * vt.abs() / vb).min(r + vt), ResidualBranch::Negative)
    } else {
        ((r * vt.abs() / vb).max(r - vt), ResidualBranch::Positive)
    };
    FilteredResidual { value, branch, guarded }
}

pub fn filter_residual(r: f64, vt: f64, var_local: f64, var_block: f64) -> f64 {
    filter_residual_traced(r, vt, var_local, var_block).value
}

/// How often each branch fired, plus the number of guarded divisions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BranchCounts {
    pub clamp_to_mean: u64,
    pub shift_up: u64,
    pub shift_down: u64,
    pub zeroed: u64,
    pub negative: u64,
    pub positive: u64,
    pub guarded: u64,
    /// Filtered residuals clipped to [`RESIDUAL_LIMIT`].
    pub clipped: u64,
}

impl BranchCounts {
    pub fn record_pixel(&mut self, b: PixelBranch) {
        match b {
            PixelBranch::ClampToMean => self.clamp_to_mean += 1,
            PixelBranch::ShiftUp => self.shift_up += 1,
            PixelBranch::ShiftDown => self.shift_down += 1,
        }
    }

    pub fn record_residual(&mut self, f: &FilteredResidual) {
        match f.branch {
            ResidualBranch::Zeroed => self.zeroed += 1,
            ResidualBranch::Negative => self.negative += 1,
            ResidualBranch::Positive => self.positive += 1,
        }
        self.guarded += f.guarded as u64;
    }

    pub fn pixel_total(&self) -> u64 {
        self.clamp_to_mean + self.shift_up + self.shift_down
    }

    pub fn residual_total(&self) -> u64 {
        self.zeroed + self.negative + self.positive
    }
}

/// `name=count` pairs joined by `;`, safe inside one CSV cell.
impl fmt::Display for BranchCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "clamp_to_mean={};shift_up={};shift_down={};zeroed={};negative={};positive={};guarded={};clipped={}",
            self.clamp_to_mean,
            self.shift_up,
            self.shift_down,
            self.zeroed,
            self.negative,
            self.positive,
            self.guarded,
            self.clipped
        )
    }
}

/// Per-block means and variances plus per-pixel 3×3 variances of one plane.
/// Edge blocks cover only the pixels inside the image; the 3×3 window
/// replicates border pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockContext {
    width: usize,
    height: usize,
    blocks_x: usize,
    block_mean: Vec<f64>,
    block_var: Vec<f64>,
    local_var: Vec<f64>,
}

fn mean_var(vals: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = vals.clone().count() as f64;
    let m = vals.clone().sum::<f64>() / n;
    let v = vals.map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.max(0.0))
}

impl BlockContext {
    pub fn new(plane: &[f64], width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || plane.len() != width * height {
            return Err(Error::shape(format!(
                "plane of {} values does not match {width}x{height}",
                plane.len()
            )));
        }
        let blocks_x = width.div_ceil(BLOCK);
        let blocks_y = height.div_ceil(BLOCK);
        let mut block_mean = Vec::with_capacity(blocks_x * blocks_y);
        let mut block_var = Vec::with_capacity(blocks_x * blocks_y);
        for by in 0..blocks_y {
            for bx in 0..blocks_x {
                let ys = by * BLOCK..((by + 1) * BLOCK).min(height);
                let xs = bx * BLOCK..((bx + 1) * BLOCK).min(width);
                let it = ys.flat_map(move |y| xs.clone().map(move |x| plane[y * width + x]));
                let (m, v) = mean_var(it);
                block_mean.push(m);
                block_var.push(v);
            }
        }
        let mut local_var = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let it = (-1i64..=1).flat_map(|dy| {
                    (-1i64..=1).map(move |dx| {
                        let yy = (y as i64 + dy).clamp(0, height as i64 - 1) as usize;
                        let xx = (x as i64 + dx).clamp(0, width as i64 - 1) as usize;
                        plane[yy * width + xx]
                    })
                });
                local_var.push(mean_var(it).1);
            }
        }
        Ok(BlockContext {
            width,
            height,
            blocks_x,
            block_mean,
            block_var,
            local_var,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn block_index(&self, x: usize, y: usize) -> usize {
        (y / BLOCK) * self.blocks_x + x / BLOCK
    }

    pub fn block_means(&self) -> &[f64] {
        &self.block_mean
    }

    pub fn block_mean(&self, x: usize, y: usize) -> f64 {
        self.block_mean[self.block_index(x, y)]
    }

    pub fn block_var(&self, x: usize, y: usize) -> f64 {
        self.block_var[self.block_index(x, y)]
    }

    pub fn local_var(&self, x: usize, y: usize) -> f64 {
        self.local_var[y * self.width + x]
    }
}

/// Applies [`preprocess_pixel`] to an 8-bit plane with thresholds in 8-bit
/// units, clamping the result to `[0, 255]`.
pub fn preprocess_plane(
    plane: &[f64],
    width: usize,
    height: usize,
    vt: &[f64],
    counts: &mut BranchCounts,
) -> Result<Vec<f64>> {
    if vt.len() != plane.len() {
        return Err(Error::shape("threshold plane does not match the image plane"));
    }
    let ctx = BlockContext::new(plane, width, height)?;
    let mut out = Vec::with_capacity(plane.len());
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let (v, b) = preprocess_pixel(plane[i], ctx.block_mean(x, y), vt[i]);
            counts.record_pixel(b);
            out.push(v.clamp(0.0, 255.0));
        }
    }
    Ok(out)
}

fn check_dims(image: &ImagePlane, i_vt: &JndMap) -> Result<()> {
    if !i_vt.matches(image) {
        return Err(Error::DimensionMismatch {
            plane: "i_vt",
            got_w: i_vt.width(),
            got_h: i_vt.height(),
            want_w: image.width(),
            want_h: image.height(),
        });
    }
    Ok(())
}

/// Thresholds of a map in 8-bit units.
pub(crate) fn vt_8bit(i_vt: &JndMap) -> Vec<f64> {
    i_vt.values().iter().map(|v| v * 255.0).collect()
}

/// Preprocesses the luma of `i_ori`, keeps its chroma and returns the image
/// with the branch counts.
pub fn preprocess_jpeg_counted(i_ori: &ImagePlane, i_vt: &JndMap) -> Result<(ImagePlane, BranchCounts)> {
    check_dims(i_ori, i_vt)?;
    let mut ycc = color::to_ycc(i_ori);
    let mut counts = BranchCounts::default();
    ycc[0] = preprocess_plane(&ycc[0], i_ori.width(), i_ori.height(), &vt_8bit(i_vt), &mut counts)?;
    Ok((color::from_ycc(&ycc, i_ori.width(), i_ori.height())?, counts))
}

pub fn preprocess_jpeg(i_ori: &ImagePlane, i_vt: &JndMap) -> Result<ImagePlane> {
    preprocess_jpeg_counted(i_ori, i_vt).map(|(img, _)| img)
}

/// Filters the residual of an 8-bit plane against its context, clipping
/// to [`RESIDUAL_LIMIT`].
pub fn filter_residual_plane(
    residual: &[f64],
    ctx: &BlockContext,
    vt: &[f64],
    counts: &mut BranchCounts,
) -> Result<Vec<f64>> {
    let (w, h) = (ctx.width(), ctx.height());
    if residual.len() != w * h || vt.len() != w * h {
        return Err(Error::shape("residual or threshold plane does not match the context"));
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let f = filter_residual_traced(residual[i], vt[i], ctx.local_var(x, y), ctx.block_var(x, y));
            counts.record_residual(&f);
            if f.value.abs() > RESIDUAL_LIMIT {
                counts.clipped += 1;
            }
            out.push(f.value.clamp(-RESIDUAL_LIMIT, RESIDUAL_LIMIT));
        }
    }
    Ok(out)
}
