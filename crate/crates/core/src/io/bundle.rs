use std::fmt;
use std::path::Path;

use super::image::{load_image, save_image, ImagePlane};
use crate::error::{Error, Result};
use crate::tensor::{hmt, Tensor};

pub const MAX_CLASSES: usize = 32;

/// Prior modalities derived from the RGB image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Saliency,
    Depth,
    Segmentation,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Saliency, Modality::Depth, Modality::Segmentation];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Saliency => "saliency",
            Modality::Depth => "depth",
            Modality::Segmentation => "segmentation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "saliency" | "sa" => Ok(Modality::Saliency),
            "depth" | "de" => Ok(Modality::Depth),
            "segmentation" | "se" => Ok(Modality::Segmentation),
            other => Err(Error::Config(format!("unknown modality {other:?}"))),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Segmentation class indices alongside the scaled plane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub labels: Vec<u8>,
    pub num_classes: usize,
}

impl LabelMap {
    /// Plane holding `index / (K - 1)`.
    pub fn to_plane(&self, width: usize, height: usize) -> Result<ImagePlane> {
        let denom = (self.num_classes.max(2) - 1) as f64;
        ImagePlane::new(
            width,
            height,
            1,
            self.labels.iter().map(|&l| l as f64 / denom).collect(),
        )
    }

    /// Recovers class indices from a stored plane by ranking its distinct
    /// 8-bit levels.
    pub fn from_plane(plane: &ImagePlane) -> Result<Self> {
        let bytes = plane.to_bytes();
        let mut levels: Vec<u8> = bytes.clone();
        levels.sort_unstable();
        levels.dedup();
        if levels.len() > MAX_CLASSES {
            return Err(Error::Contract(format!(
                "segmentation has {} distinct labels, at most {MAX_CLASSES} allowed",
                levels.len()
            )));
        }
        let labels = bytes
            .iter()
            .map(|b| levels.binary_search(b).expect("level present") as u8)
            .collect();
        Ok(LabelMap {
            labels,
            num_classes: levels.len(),
        })
    }
}

/// Aligned RGB image plus its saliency, depth and segmentation priors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityBundle {
    pub rgb: ImagePlane,
    pub saliency: ImagePlane,
    pub depth: ImagePlane,
    pub segmentation: ImagePlane,
    pub labels: LabelMap,
    pub ground_truth: Option<ImagePlane>,
}

fn check_dims(plane: &ImagePlane, name: &'static str, channels: usize, w: usize, h: usize) -> Result<()> {
    if plane.width() != w || plane.height() != h {
        return Err(Error::DimensionMismatch {
            plane: name,
            got_w: plane.width(),
            got_h: plane.height(),
            want_w: w,
            want_h: h,
        });
    }
    if plane.channels() != channels {
        return Err(Error::shape(format!(
            "{name} must have {channels} channel(s), has {}",
            plane.channels()
        )));
    }
    Ok(())
}

impl ModalityBundle {
    pub fn new(
        rgb: ImagePlane,
        saliency: ImagePlane,
        depth: ImagePlane,
        segmentation: ImagePlane,
        ground_truth: Option<ImagePlane>,
    ) -> Result<Self> {
        let labels = LabelMap::from_plane(&segmentation)?;
        Self::with_labels(rgb, saliency, depth, segmentation, labels, ground_truth)
    }

    pub fn with_labels(
        rgb: ImagePlane,
        saliency: ImagePlane,
        depth: ImagePlane,
        segmentation: ImagePlane,
        labels: LabelMap,
        ground_truth: Option<ImagePlane>,
    ) -> Result<Self> {
        let (w, h) = (rgb.width(), rgb.height());
        check_dims(&rgb, "rgb", 3, w, h)?;
        check_dims(&saliency, "saliency", 1, w, h)?;
        check_dims(&depth, "depth", 1, w, h)?;
        check_dims(&segmentation, "segmentation", 1, w, h)?;
        if let Some(gt) = &ground_truth {
            check_dims(gt, "ground_truth", 3, w, h)?;
        }
        if labels.labels.len() != w * h
            || labels.num_classes > MAX_CLASSES
            || labels.labels.iter().any(|&l| l as usize >= labels.num_classes)
        {
            return Err(Error::Contract("label map does not match segmentation".into()));
        }
        Ok(ModalityBundle {
            rgb,
            saliency,
            depth,
            segmentation,
            labels,
            ground_truth,
        })
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    pub fn prior(&self, m: Modality) -> &ImagePlane {
        match m {
            Modality::Saliency => &self.saliency,
            Modality::Depth => &self.depth,
            Modality::Segmentation => &self.segmentation,
        }
    }

    /// Same window of every plane.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        let mut labels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let s = y * self.width() + x0;
            labels.extend_from_slice(&self.labels.labels[s..s + w]);
        }
        Self::with_labels(
            self.rgb.crop(x0, y0, w, h)?,
            self.saliency.crop(x0, y0, w, h)?,
            self.depth.crop(x0, y0, w, h)?,
            self.segmentation.crop(x0, y0, w, h)?,
            LabelMap {
                labels,
                num_classes: self.labels.num_classes,
            },
            self.ground_truth.as_ref().map(|g| g.crop(x0, y0, w, h)).transpose()?,
        )
    }

    /// Replaces every disabled prior by a copy of an enabled one. The
    /// substitute is `preferred` when it is enabled, else the first enabled
    /// modality. With nothing enabled all three priors become blank planes,
    /// so the prior branch carries no scene information at all.
    pub fn with_enabled(&self, enabled: &[Modality], preferred: Modality) -> Result<Self> {
        let source: ImagePlane = if enabled.contains(&preferred) {
            self.prior(preferred).clone()
        } else if let Some(&m) = Modality::ALL.iter().find(|m| enabled.contains(m)) {
            self.prior(m).clone()
        } else {
            ImagePlane::filled(self.width(), self.height(), 1, 0.0)?
        };
        let pick = |m: Modality| {
            if enabled.contains(&m) {
                self.prior(m).clone()
            } else {
                source.clone()
            }
        };
        let segmentation = pick(Modality::Segmentation);
        let labels = if enabled.contains(&Modality::Segmentation) {
            self.labels.clone()
        } else {
            LabelMap::from_plane(&segmentation).unwrap_or_else(|_| self.labels.clone())
        };
        Self::with_labels(
            self.rgb.clone(),
            pick(Modality::Saliency),
            pick(Modality::Depth),
            segmentation,
            labels,
            self.ground_truth.clone(),
        )
    }
}

pub const RGB_FILE: &str = "rgb.ppm";
pub const SALIENCY_FILE: &str = "saliency.pgm";
pub const DEPTH_FILE: &str = "depth.pgm";
pub const SEGMENTATION_FILE: &str = "segmentation.pgm";
pub const GT_FILE: &str = "gt.ppm";
/// Raw class indices as an `(H, W)` HMT1 record followed by a one-element
/// record holding the class count.
pub const LABELS_FILE: &str = "labels.hmt";

fn save_labels(labels: &LabelMap, width: usize, height: usize, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    let idx = labels.labels.iter().map(|&l| l as f64).collect();
    hmt::encode(&Tensor::new(vec![height, width], idx)?, &mut buf);
    hmt::encode(&Tensor::new(vec![1], vec![labels.num_classes as f64])?, &mut buf);
    std::fs::write(path, buf).map_err(|e| Error::file(path, e))
}

fn load_labels(path: &Path) -> Result<LabelMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    let mut pos = 0;
    let idx = hmt::decode_at(&bytes, &mut pos)?;
    let k = hmt::decode_at(&bytes, &mut pos)?;
    let bad = || Error::Contract(format!("{} is not a valid label map", path.display()));
    if pos != bytes.len() || k.len() != 1 {
        return Err(bad());
    }
    let num_classes = k.data()[0] as usize;
    let labels = idx
        .data()
        .iter()
        .map(|&v| {
            let l = v as usize;
            (v >= 0.0 && v.fract() == 0.0 && l < num_classes).then_some(l as u8)
        })
        .collect::<Option<Vec<u8>>>()
        .ok_or_else(bad)?;
    Ok(LabelMap { labels, num_classes })
}

/// Loads `rgb.ppm`, `saliency.pgm`, `depth.pgm`, `segmentation.pgm` and the
/// optional `gt.ppm` from `dir`. Class indices come from `labels.hmt` when
/// present, otherwise from the distinct levels of the segmentation plane.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<ModalityBundle> {
    let dir = dir.as_ref();
    let required = [
        ("rgb", RGB_FILE),
        ("saliency", SALIENCY_FILE),
        ("depth", DEPTH_FILE),
        ("segmentation", SEGMENTATION_FILE),
    ];
    for (name, file) in required {
        if !dir.join(file).is_file() {
            return Err(Error::MissingModality(name));
        }
    }
    let gt_path = dir.join(GT_FILE);
    let gt = if gt_path.is_file() {
        Some(load_image(gt_path)?)
    } else {
        None
    };
    let segmentation = load_image(dir.join(SEGMENTATION_FILE))?;
    let labels_path = dir.join(LABELS_FILE);
    let labels = if labels_path.is_file() {
        load_labels(&labels_path)?
    } else {
        LabelMap::from_plane(&segmentation)?
    };
    ModalityBundle::with_labels(
        load_image(dir.join(RGB_FILE))?,
        load_image(dir.join(SALIENCY_FILE))?,
        load_image(dir.join(DEPTH_FILE))?,
        segmentation,
        labels,
        gt,
    )
}

pub fn save_bundle(bundle: &ModalityBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    save_image(&bundle.rgb, dir.join(RGB_FILE))?;
    save_image(&bundle.saliency, dir.join(SALIENCY_FILE))?;
    save_image(&bundle.depth, dir.join(DEPTH_FILE))?;
    save_image(&bundle.segmentation, dir.join(SEGMENTATION_FILE))?;
    save_labels(&bundle.labels, bundle.width(), bundle.height(), &dir.join(LABELS_FILE))?;
    if let Some(gt) = &bundle.ground_truth {
        save_image(gt, dir.join(GT_FILE))?;
    }
    Ok(())
}
