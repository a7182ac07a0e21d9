//! Deterministic desk-scale multimodal scenes.
//!
//! A scene is a smooth background plus a few flat or textured objects.
//! Depth, saliency and segmentation are derived from the object layout. The
//! ground truth darkens textured objects by a bounded amount that grows with
//! depth, falls with saliency and varies with object class, so every prior
//! carries information about the target that the RGB image alone lacks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bundle::{LabelMap, ModalityBundle};
use super::image::ImagePlane;
use crate::error::{Error, Result};

pub const SYNTH_CLASSES: usize = 8;
pub const MIN_SYNTH_SIZE: usize = 16;

/// A synthesized bundle together with the generator's own texture layout.
#[derive(Clone, Debug)]
pub struct SynthScene {
    pub bundle: ModalityBundle,
    /// `true` where a textured object is visible.
    pub texture_mask: Vec<bool>,
    /// Texture amplitude normalized to `[0, 1]`; zero on flat regions.
    pub texture_energy: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Object {
    label: u8,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    ellipse: bool,
    color: [f64; 3],
    depth_offset: f64,
    texture: Option<Texture>,
}

#[derive(Clone, Debug)]
struct Texture {
    amplitude: f64,
    fx: f64,
    fy: f64,
    phase: f64,
}

const MAX_TEXTURE_AMPLITUDE: f64 = 0.16;
/// Largest ground-truth perturbation, reached on a maximally textured,
/// distant, non-salient object of the strongest class.
const GT_CONTRAST: f64 = 0.08;

impl Object {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        if self.ellipse {
            dx * dx + dy * dy <= 1.0
        } else {
            dx.abs() <= 1.0 && dy.abs() <= 1.0
        }
    }
}

/// Per-class weight of the ground-truth perturbation.
fn class_strength(label: u8) -> f64 {
    0.35 + 0.65 * label as f64 / (SYNTH_CLASSES - 1) as f64
}

/// Seed of scene `index` in the corpus drawn with `seed`.
pub fn corpus_scene_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(10_000).wrapping_add(index as u64)
}

/// `n` scenes with seeds from [`corpus_scene_seed`].
pub fn synth_corpus(seed: u64, n: usize, width: usize, height: usize) -> Result<Vec<ModalityBundle>> {
    (0..n)
        .map(|k| synth_bundle(corpus_scene_seed(seed, k), width, height))
        .collect()
}

pub fn synth_bundle(seed: u64, width: usize, height: usize) -> Result<ModalityBundle> {
    synth_scene(seed, width, height).map(|s| s.bundle)
}

pub fn synth_scene(seed: u64, width: usize, height: usize) -> Result<SynthScene> {
    if width < MIN_SYNTH_SIZE || height < MIN_SYNTH_SIZE {
        return Err(Error::Param(format!(
            "synthetic scenes need at least {MIN_SYNTH_SIZE}x{MIN_SYNTH_SIZE}, got {width}x{height}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);

    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.35..0.65));
    let tilt: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.2..0.2));

    let mut labels: Vec<u8> = (1..SYNTH_CLASSES as u8).collect();
    labels.shuffle(&mut rng);
    let count = rng.gen_range(3..=4);
    let min_r = (w.min(h) / 6.0).max(3.0);
    let objects: Vec<Object> = (0..count)
        .map(|i| {
            let rx = rng.gen_range(min_r..w / 3.0);
            let ry = rng.gen_range(min_r..h / 3.0);
            // the first object is always textured, the second always flat
            let textured = match i {
                0 => true,
                1 => false,
                _ => rng.gen_bool(0.5),
            };
            Object {
                label: labels[i],
                cx: rng.gen_range(rx * 0.5..w - rx * 0.5),
                cy: rng.gen_range(ry * 0.5..h - ry * 0.5),
                rx,
                ry,
                ellipse: rng.gen_bool(0.5),
                color: std::array::from_fn(|_| rng.gen_range(0.3..0.7)),
                depth_offset: rng.gen_range(-0.15..0.2),
                texture: textured.then(|| {
                    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                    let freq = rng.gen_range(0.6..1.6);
                    Texture {
                        amplitude: rng.gen_range(0.08..MAX_TEXTURE_AMPLITUDE),
                        fx: freq * angle.cos(),
                        fy: freq * angle.sin(),
                        phase: rng.gen_range(0.0..std::f64::consts::TAU),
                    }
                }),
            }
        })
        .collect();
    let salient = rng.gen_range(0..objects.len());

    let n = width * height;
    let mut rgb = vec![0.0; n * 3];
    let mut depth = vec![0.0; n];
    let mut label_map = vec![0u8; n];
    let mut energy = vec![0.0; n];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
            let owner = objects.iter().rev().find(|o| o.contains(xf, yf));
            let mut d = 0.15 + 0.6 * yf / h;
            // draw the texture noise for every pixel so the stream does not
            // depend on the layout
            let grain: f64 = rng.gen_range(-1.0..1.0);
            for c in 0..3 {
                rgb[i * 3 + c] = match owner {
                    None => base[c] + tilt[c] * (xf / w - 0.5),
                    Some(o) => {
                        let t = o.texture.as_ref().map_or(0.0, |t| {
                            t.amplitude * (0.6 * (t.fx * xf + t.fy * yf + t.phase).sin() + 0.4 * grain)
                        });
                        o.color[c] + t
                    }
                };
            }
            if let Some(o) = owner {
                d += o.depth_offset;
                label_map[i] = o.label;
                if let Some(t) = &o.texture {
                    energy[i] = t.amplitude / MAX_TEXTURE_AMPLITUDE;
                }
            }
            depth[i] = d.clamp(0.0, 1.0);
        }
    }

    let so = &objects[salient];
    let sigma2 = ((so.rx + so.ry) * 0.5).powi(2);
    let saliency: Vec<f64> = (0..n)
        .map(|i| {
            let dx = (i % width) as f64 + 0.5 - so.cx;
            let dy = (i / width) as f64 + 0.5 - so.cy;
            (-(dx * dx + dy * dy) / (2.0 * sigma2)).exp()
        })
        .collect();

    let gt: Vec<f64> = (0..n * 3)
        .map(|j| {
            let i = j / 3;
            let class = if label_map[i] == 0 {
                0.0
            } else {
                class_strength(label_map[i])
            };
            let strength = energy[i] * (0.4 * depth[i] + 0.3 * (1.0 - saliency[i]) + 0.3 * class);
            rgb[j] - GT_CONTRAST * strength
        })
        .collect();

    let labels = LabelMap {
        labels: label_map,
        num_classes: SYNTH_CLASSES,
    };
    let bundle = ModalityBundle::with_labels(
        ImagePlane::from_clamped(width, height, 3, rgb)?,
        ImagePlane::from_clamped(width, height, 1, saliency)?,
        ImagePlane::from_clamped(width, height, 1, depth)?,
        labels.to_plane(width, height)?,
        labels,
        Some(ImagePlane::from_clamped(width, height, 3, gt)?),
    )?;
    Ok(SynthScene {
        bundle,
        texture_mask: energy.iter().map(|&e| e > 0.0).collect(),
        texture_energy: energy,
    })
}
