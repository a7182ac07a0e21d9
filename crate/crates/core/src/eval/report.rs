//! Batch evaluation: per-image calibration, injection and metrics.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use super::metrics::{ms_ssim, psnr, ssim};
use super::noise::{calibrate_alpha, inject};
use super::JndMap;
use crate::error::{Error, Result};
use crate::io::{ImagePlane, ModalityBundle};
use crate::model::Model;
use crate::tensor::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    /// PSNR between the redundancy-removed image and the ground truth.
    PsnrGt,
    /// SSIM between the redundancy-removed image and the ground truth.
    SsimGt,
    /// MS-SSIM between the contaminated image and the original.
    MsSsim,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::PsnrGt, Metric::SsimGt, Metric::MsSsim];

    pub fn needs_ground_truth(self) -> bool {
        matches!(self, Metric::PsnrGt | Metric::SsimGt)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::PsnrGt => "psnr_gt",
            Metric::SsimGt => "ssim_gt",
            Metric::MsSsim => "ms_ssim",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psnr_gt" => Ok(Metric::PsnrGt),
            "ssim_gt" => Ok(Metric::SsimGt),
            "ms_ssim" => Ok(Metric::MsSsim),
            _ => Err(Error::Usage(format!(
                "unknown metric {s:?}; expected psnr_gt, ssim_gt or ms_ssim"
            ))),
        }
    }
}

/// Parses a comma-separated metric list; `all` selects every metric.
pub fn parse_metrics(s: &str) -> Result<Vec<Metric>> {
    if s == "all" {
        return Ok(Metric::ALL.to_vec());
    }
    let mut out: Vec<Metric> = s.split(',').map(|m| m.trim().parse()).collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

/// One image to evaluate.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub id: String,
    pub original: ImagePlane,
    pub i_vt: JndMap,
    pub i_rr: Option<ImagePlane>,
    pub ground_truth: Option<ImagePlane>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub target_mse: f64,
    pub seed: u64,
    pub metrics: Vec<Metric>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            target_mse: 100.0,
            seed: 0,
            metrics: Metric::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub alpha: f64,
    pub mse_pre_clip: f64,
    pub mse_post_clip: f64,
    pub psnr_gt_rr: Option<f64>,
    pub ssim_gt_rr: Option<f64>,
    pub ms_ssim_ori_con: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Skipped {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub target_mse: f64,
    /// Sorted by id.
    pub rows: Vec<EvalRow>,
    pub skipped: Vec<Skipped>,
}

fn mean_of(rows: &[EvalRow], f: impl Fn(&EvalRow) -> Option<f64>) -> Option<f64> {
    if rows.is_empty() {
        return None;
    }
    let vals: Option<Vec<f64>> = rows.iter().map(f).collect();
    vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

impl EvalReport {
    /// Arithmetic means of every column over the evaluated rows.
    pub fn mean(&self) -> Option<EvalRow> {
        if self.rows.is_empty() {
            return None;
        }
        let r = &self.rows;
        Some(EvalRow {
            id: "mean".into(),
            alpha: mean_of(r, |x| Some(x.alpha))?,
            mse_pre_clip: mean_of(r, |x| Some(x.mse_pre_clip))?,
            mse_post_clip: mean_of(r, |x| Some(x.mse_post_clip))?,
            psnr_gt_rr: mean_of(r, |x| x.psnr_gt_rr),
            ssim_gt_rr: mean_of(r, |x| x.ssim_gt_rr),
            ms_ssim_ori_con: mean_of(r, |x| x.ms_ssim_ori_con),
        })
    }

    pub const CSV_HEADER: &'static str = "id,alpha,mse_pre_clip,mse_post_clip,psnr_gt_rr,ssim_gt_rr,ms_ssim_ori_con";

    /// One line per image, then the `mean` line, then `# skipped` comments.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in self.rows.iter().chain(self.mean().as_ref()) {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.id,
                r.alpha,
                r.mse_pre_clip,
                r.mse_post_clip,
                cell(r.psnr_gt_rr),
                cell(r.ssim_gt_rr),
                cell(r.ms_ssim_ori_con)
            );
        }
        for k in &self.skipped {
            let _ = writeln!(s, "# skipped {}: {}", k.id, k.reason);
        }
        s
    }

    pub fn to_table(&self) -> String {
        let f = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |v| format!("{v:.p$}"));
        let mut s = format!(
            "{:<16} {:>8} {:>10} {:>10} {:>10} {:>8} {:>8}\n",
            "id", "alpha", "mse_pre", "mse_post", "psnr_gt", "ssim_gt", "ms_ssim"
        );
        for r in self.rows.iter().chain(self.mean().as_ref()) {
            let _ = writeln!(
                s,
                "{:<16} {:>8.4} {:>10.4} {:>10.4} {:>10} {:>8} {:>8}",
                r.id,
                r.alpha,
                r.mse_pre_clip,
                r.mse_post_clip,
                f(r.psnr_gt_rr, 4),
                f(r.ssim_gt_rr, 4),
                f(r.ms_ssim_ori_con, 4)
            );
        }
        for k in &self.skipped {
            let _ = writeln!(s, "skipped {}: {}", k.id, k.reason);
        }
        s
    }
}

/// Evaluates every item with its own calibrated scale. Item `k` in id order
/// draws its sign field from `seed + k`.
pub fn evaluate(mut items: Vec<EvalItem>, opts: &EvalOptions) -> Result<EvalReport> {
    items.sort_by(|a, b| a.id.cmp(&b.id));
    let wants = |m| opts.metrics.contains(&m);
    let gt_metrics = opts.metrics.iter().any(|m| m.needs_ground_truth());
    for item in &items {
        if gt_metrics {
            if item.ground_truth.is_none() {
                return Err(Error::MissingGroundTruth(item.id.clone()));
            }
            if item.i_rr.is_none() {
                return Err(Error::Contract(format!(
                    "{}: ground-truth metrics need the redundancy-removed image",
                    item.id
                )));
            }
        }
        if !item.i_vt.matches(&item.original) {
            return Err(Error::shape(format!(
                "{}: threshold map does not match the image",
                item.id
            )));
        }
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (k, item) in items.iter().enumerate() {
        let alpha = match calibrate_alpha(&item.i_vt, opts.target_mse) {
            Ok(a) => a,
            Err(Error::UnboundedAlpha) => {
                skipped.push(Skipped {
                    id: item.id.clone(),
                    reason: "threshold map is zero everywhere".into(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let inj = inject(&item.original, &item.i_vt, alpha, opts.seed.wrapping_add(k as u64))?;
        let gt_pair = item.ground_truth.as_ref().zip(item.i_rr.as_ref());
        let on_gt = |m: Metric, f: fn(&ImagePlane, &ImagePlane) -> Result<f64>| -> Result<Option<f64>> {
            match gt_pair {
                Some((gt, rr)) if wants(m) => f(rr, gt).map(Some),
                _ => Ok(None),
            }
        };
        rows.push(EvalRow {
            id: item.id.clone(),
            alpha,
            mse_pre_clip: inj.mse_pre_clip,
            mse_post_clip: inj.mse_post_clip,
            psnr_gt_rr: on_gt(Metric::PsnrGt, psnr)?,
            ssim_gt_rr: on_gt(Metric::SsimGt, ssim)?,
            ms_ssim_ori_con: if wants(Metric::MsSsim) {
                Some(ms_ssim(&item.original, &inj.image)?)
            } else {
                None
            },
        });
    }
    Ok(EvalReport {
        target_mse: opts.target_mse,
        rows,
        skipped,
    })
}

/// Runs the model on each bundle and evaluates its predictions.
pub fn evaluate_model(
    model: &Model,
    store: &ParamStore,
    bundles: &[(String, ModalityBundle)],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let items = bundles
        .iter()
        .map(|(id, b)| {
            let p = model.predict(store, b)?;
            Ok(EvalItem {
                id: id.clone(),
                original: b.rgb.clone(),
                i_vt: p.i_vt,
                i_rr: Some(p.i_rr),
                ground_truth: b.ground_truth.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate(items, opts)
}
