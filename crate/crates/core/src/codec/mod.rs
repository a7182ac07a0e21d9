//! Block-DCT image codec with optional visibility-threshold guidance.
//!
//! Three pipelines share the same transform, quantizer and entropy model:
//! `plain` codes the image as is, `jpeg_pre` first pulls luma toward each
//! 8×8 block mean, and `residual` predicts each luma block by its rounded
//! mean and codes the filtered prediction residual. Chroma always takes the
//! plain path. Planes are rounded to 8-bit YCbCr before coding. Rates are
//! order-0 entropy estimates, not coded sizes.

mod color;
pub mod dct;
pub mod entropy;
pub mod jnd;
pub mod quant;

use std::fmt;
use std::str::FromStr;

pub use color::{from_ycc, to_ycc};
pub use entropy::{bpp_estimate, Symbol};
pub use jnd::{
    filter_residual, filter_residual_traced, preprocess_jpeg, preprocess_jpeg_counted, preprocess_pixel, BlockContext,
    BranchCounts, FilteredResidual, PixelBranch, ResidualBranch,
};

use crate::error::{Error, Result};
use crate::eval::{ms_ssim, psnr, JndMap};
use crate::io::ImagePlane;
use dct::{Block, N};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodecMode {
    Plain,
    JpegPre,
    Residual,
}

impl fmt::Display for CodecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodecMode::Plain => "plain",
            CodecMode::JpegPre => "jpeg_pre",
            CodecMode::Residual => "residual",
        })
    }
}

impl FromStr for CodecMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(CodecMode::Plain),
            "jpeg_pre" => Ok(CodecMode::JpegPre),
            "residual" => Ok(CodecMode::Residual),
            _ => Err(Error::Usage(format!(
                "unknown codec mode {s:?}; expected plain, jpeg_pre or residual"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodecStats {
    pub bpp: f64,
    /// Reconstruction against the original image.
    pub psnr: f64,
    pub ms_ssim: f64,
    /// Pixel branches sum to the pixel count in `jpeg_pre` mode, residual
    /// branches in `residual` mode; both stay zero in `plain` mode.
    pub counts: BranchCounts,
    pub symbols: usize,
}

impl CodecStats {
    pub const CSV_HEADER: &'static str = "bpp,psnr,ms_ssim,branch_counts";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.bpp, self.psnr, self.ms_ssim, self.counts)
    }
}

#[derive(Clone, Debug)]
pub struct Compressed {
    pub stats: CodecStats,
    pub reconstruction: ImagePlane,
}

/// Codes one 8-bit plane block by block in raster order, appending symbols
/// and returning the decoded plane. Planes are padded to whole blocks by
/// edge replication. Each block's DC level is sent as a difference to the
/// previous block's.
fn code_plane(plane: &[f64], width: usize, height: usize, table: &[u16; 64], out: &mut Vec<Symbol>) -> Vec<f64> {
    let mut decoded = vec![0.0; width * height];
    let mut prev_dc = 0;
    for by in (0..height).step_by(N) {
        for bx in (0..width).step_by(N) {
            let block: Block = std::array::from_fn(|i| {
                let y = (by + i / N).min(height - 1);
                let x = (bx + i % N).min(width - 1);
                plane[y * width + x]
            });
            let levels = quant::quantize(&dct::forward(&block), table);
            let mut sent = levels;
            sent[0] -= prev_dc;
            prev_dc = levels[0];
            entropy::encode_block(&sent, out);
            let rec = dct::inverse(&quant::dequantize(&levels, table));
            for (i, v) in rec.iter().enumerate() {
                let (y, x) = (by + i / N, bx + i % N);
                if y < height && x < width {
                    decoded[y * width + x] = *v;
                }
            }
        }
    }
    decoded
}

/// Codes `image` with the given pipeline at JPEG `quality` (1..=100).
pub fn compress(image: &ImagePlane, i_vt: &JndMap, mode: CodecMode, quality: u8) -> Result<Compressed> {
    if !i_vt.matches(image) {
        return Err(Error::DimensionMismatch {
            plane: "i_vt",
            got_w: i_vt.width(),
            got_h: i_vt.height(),
            want_w: image.width(),
            want_h: image.height(),
        });
    }
    let (w, h) = (image.width(), image.height());
    let luma_table = quant::scaled_table(&quant::LUMA_TABLE, quality)?;
    let chroma_table = quant::scaled_table(&quant::CHROMA_TABLE, quality)?;
    let vt = jnd::vt_8bit(i_vt);
    let mut counts = BranchCounts::default();
    let mut symbols = Vec::new();
    let mut ycc: Vec<Vec<f64>> = to_ycc(image)
        .into_iter()
        .map(|p| p.into_iter().map(f64::round).collect())
        .collect();

    let luma = match mode {
        CodecMode::Plain => code_plane(&ycc[0], w, h, &luma_table, &mut symbols),
        CodecMode::JpegPre => {
            let pre = jnd::preprocess_plane(&ycc[0], w, h, &vt, &mut counts)?;
            code_plane(&pre, w, h, &luma_table, &mut symbols)
        }
        CodecMode::Residual => {
            let ctx = BlockContext::new(&ycc[0], w, h)?;
            let mut prev = 0;
            for m in ctx.block_means() {
                let p = m.round() as i32;
                symbols.push(Symbol::Predictor(p - prev));
                prev = p;
            }
            let pred: Vec<f64> = (0..w * h).map(|i| ctx.block_mean(i % w, i / w).round()).collect();
            let residual: Vec<f64> = ycc[0].iter().zip(&pred).map(|(y, p)| y - p).collect();
            let filtered = jnd::filter_residual_plane(&residual, &ctx, &vt, &mut counts)?;
            let decoded = code_plane(&filtered, w, h, &luma_table, &mut symbols);
            decoded.iter().zip(&pred).map(|(r, p)| r + p).collect()
        }
    };
    ycc[0] = luma;
    for plane in ycc.iter_mut().skip(1) {
        *plane = code_plane(plane, w, h, &chroma_table, &mut symbols);
    }
    let reconstruction = from_ycc(&ycc, w, h)?;
    let stats = CodecStats {
        bpp: bpp_estimate(&symbols, w * h),
        psnr: psnr(&reconstruction, image)?,
        ms_ssim: ms_ssim(&reconstruction, image)?,
        counts,
        symbols: symbols.len(),
    };
    Ok(Compressed { stats, reconstruction })
}
