//! Modality and module ablation sweeps.
//!
//! Each row trains a fresh network from the same seed with some priors
//! replaced by copies of an enabled one, or with a fusion or alignment
//! module swapped for its concatenation baseline, then scores the
//! redundancy-removed predictions against the ground truth.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::eval::{psnr, ssim};
use crate::io::{Modality, ModalityBundle};
use crate::model::{AlignmentKind, FusionKind, ModelConfig};
use crate::train::{train, TrainConfig};

/// Training settings for sweeps on small synthetic corpora.
///
/// The feature-alignment term is off. Its L1 gradient has the same size
/// however close the features already are, and on rows whose priors lack
/// texture it drags the image features toward flat prior features,
/// erasing the texture cue the target depends on. Even at weight 1e-3
/// this reorders the rows by how much texture survives in the priors
/// rather than by how informative they are.
pub fn sweep_train_config() -> TrainConfig {
    TrainConfig {
        lambda_fea: 0.0,
        epochs: 100,
        ..TrainConfig::toy()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AblationRow {
    /// 1 for the modality table, 2 for the module table.
    pub table: u8,
    pub label: String,
    pub enabled: Vec<Modality>,
    pub fusion: FusionKind,
    pub alignment: AlignmentKind,
}

impl AblationRow {
    fn has(&self, m: Modality) -> bool {
        self.enabled.contains(&m)
    }

    fn same_setup(&self, other: &AblationRow) -> bool {
        self.enabled == other.enabled && self.fusion == other.fusion && self.alignment == other.alignment
    }
}

/// Five modality rows (none, each single modality, all) with both modules
/// on, then four module rows over all modalities.
pub fn table_rows() -> Vec<AblationRow> {
    use Modality::*;
    let modality = |label: &str, enabled: &[Modality]| AblationRow {
        table: 1,
        label: label.into(),
        enabled: enabled.to_vec(),
        fusion: FusionKind::Hmpf,
        alignment: AlignmentKind::Hmfa,
    };
    let module = |label: &str, fusion, alignment| AblationRow {
        table: 2,
        label: label.into(),
        enabled: Modality::ALL.to_vec(),
        fusion,
        alignment,
    };
    vec![
        modality("none", &[]),
        modality("sa", &[Saliency]),
        modality("de", &[Depth]),
        modality("se", &[Segmentation]),
        modality("all", &[Saliency, Depth, Segmentation]),
        module("concat+concat_se", FusionKind::Concat, AlignmentKind::ConcatSe),
        module("concat+hmfa", FusionKind::Concat, AlignmentKind::Hmfa),
        module("hmpf+concat_se", FusionKind::Hmpf, AlignmentKind::ConcatSe),
        module("hmpf+hmfa", FusionKind::Hmpf, AlignmentKind::Hmfa),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub row: AblationRow,
    pub psnr_gt_rr: f64,
    pub ssim_gt_rr: f64,
}

impl AblationResult {
    pub const CSV_HEADER: &'static str = "table,row,saliency,depth,segmentation,hmpf,hmfa,psnr_gt_rr,ssim_gt_rr";

    pub fn csv_row(&self) -> String {
        let r = &self.row;
        let flag = |b: bool| if b { "1" } else { "0" };
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.table,
            r.label,
            flag(r.has(Modality::Saliency)),
            flag(r.has(Modality::Depth)),
            flag(r.has(Modality::Segmentation)),
            flag(r.fusion == FusionKind::Hmpf),
            flag(r.alignment == AlignmentKind::Hmfa),
            self.psnr_gt_rr,
            self.ssim_gt_rr
        );
        s
    }
}

fn substitute(bundles: &[ModalityBundle], row: &AblationRow, preferred: Modality) -> Result<Vec<ModalityBundle>> {
    bundles
        .iter()
        .map(|b| b.with_enabled(&row.enabled, preferred))
        .collect()
}

/// Trains one row on `train_set` and returns mean PSNR and SSIM of its
/// predictions on `eval_set`.
pub fn run_row(
    train_set: &[ModalityBundle],
    eval_set: &[ModalityBundle],
    row: &AblationRow,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    preferred: Modality,
) -> Result<AblationResult> {
    if eval_set.is_empty() {
        return Err(Error::Contract("empty evaluation set".into()));
    }
    let cfg = ModelConfig {
        fusion: row.fusion,
        alignment: row.alignment,
        ..model_cfg.clone()
    };
    let trained = train(&substitute(train_set, row, preferred)?, &cfg, train_cfg)?;
    let (mut p, mut s) = (0.0, 0.0);
    for (i, b) in substitute(eval_set, row, preferred)?.iter().enumerate() {
        let gt = b
            .ground_truth
            .as_ref()
            .ok_or_else(|| Error::MissingGroundTruth(format!("evaluation item {i}")))?;
        let pred = trained.model.predict(&trained.store, b)?;
        p += psnr(&pred.i_rr, gt)?;
        s += ssim(&pred.i_rr, gt)?;
    }
    let n = eval_set.len() as f64;
    Ok(AblationResult {
        row: row.clone(),
        psnr_gt_rr: p / n,
        ssim_gt_rr: s / n,
    })
}

/// Runs `rows` in order, handing each result to `sink` as soon as it is
/// ready. Rows with the same setup as an earlier row reuse its result.
pub fn run_ablation(
    train_set: &[ModalityBundle],
    eval_set: &[ModalityBundle],
    rows: &[AblationRow],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    preferred: Modality,
    mut sink: impl FnMut(&AblationResult) -> Result<()>,
) -> Result<Vec<AblationResult>> {
    let mut out: Vec<AblationResult> = Vec::with_capacity(rows.len());
    for row in rows {
        let result = match out.iter().find(|r| r.row.same_setup(row)) {
            Some(prev) => AblationResult {
                row: row.clone(),
                ..prev.clone()
            },
            None => run_row(train_set, eval_set, row, model_cfg, train_cfg, preferred)?,
        };
        sink(&result)?;
        out.push(result);
    }
    Ok(out)
}
