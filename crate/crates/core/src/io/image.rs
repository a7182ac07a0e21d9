//! 8-bit binary PGM (`P5`) / PPM (`P6`) raster I/O.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Raster of normalized intensities in `[0, 1]`, interleaved row-major
/// (`(y * width + x) * channels + c`).
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImagePlane {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::shape(format!("image must have 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::shape(format!(
                "{width}x{height}x{channels} image needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("intensity {bad} outside [0, 1]")));
        }
        Ok(ImagePlane {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a plane, clamping every value into `[0, 1]`.
    pub fn from_clamped(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::new(width, height, channels, data)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_dims(&self, other: &ImagePlane) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Single channel view: the plane itself or BT.601 luma of an RGB plane.
    pub fn luma(&self) -> Vec<f64> {
        match self.channels {
            1 => self.data.clone(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect(),
        }
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    /// Planar `(1, C, H, W)` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let hw = self.pixels();
        let mut out = vec![0.0; hw * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * hw + i] = v;
            }
        }
        Tensor::new(vec![1, self.channels, self.height, self.width], out).expect("consistent by construction")
    }

    /// Inverse of [`ImagePlane::to_tensor`] for one batch entry, clamping to `[0, 1]`.
    pub fn from_planar(width: usize, height: usize, channels: usize, planar: &[f64]) -> Result<Self> {
        let hw = width * height;
        if planar.len() != hw * channels {
            return Err(Error::shape("planar buffer does not match image size"));
        }
        let mut data = vec![0.0; hw * channels];
        for c in 0..channels {
            for i in 0..hw {
                data[i * channels + c] = planar[c * hw + i].clamp(0.0, 1.0);
            }
        }
        Self::new(width, height, channels, data)
    }

    /// Rectangular crop.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::shape("crop outside image"));
        }
        let mut data = Vec::with_capacity(w * h * self.channels);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        Self::new(w, h, self.channels, data)
    }

    /// 8-bit quantization, `round(v × 255)` with halves rounded up.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_bytes(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        )
    }
}

pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Encodes a plane as binary PGM (1 channel) or PPM (3 channels).
pub fn encode_pnm(plane: &ImagePlane) -> Vec<u8> {
    let magic = if plane.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", plane.width, plane.height).into_bytes();
    out.extend(plane.to_bytes());
    out
}

pub fn save_image(plane: &ImagePlane, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&encode_pnm(plane)))
        .map_err(|e| Error::file(path, e))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImagePlane> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_pnm(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse {
                offset: start,
                msg: format!("expected {what}"),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                offset: start,
                msg: format!("invalid {what}"),
            })
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<ImagePlane> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => {
            return Err(Error::Parse {
                offset: 0,
                msg: "expected P5 or P6 magic".into(),
            })
        }
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Parse {
            offset: maxval_at,
            msg: format!("only 8-bit images (maxval 255) are supported, got {maxval}"),
        });
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => {
            return Err(Error::Parse {
                offset: cur.pos,
                msg: "missing whitespace after header".into(),
            })
        }
    }
    let need = width * height * channels;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(Error::Parse {
            offset: cur.pos + payload.len(),
            msg: format!("truncated payload: need {need} bytes, have {}", payload.len()),
        });
    }
    ImagePlane::from_bytes(width, height, channels, &payload[..need])
}
