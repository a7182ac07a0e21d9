//! Noise-injection evaluation and image quality metrics.

mod jnd_map;
pub mod metrics;
pub mod noise;
mod report;

pub use jnd_map::JndMap;
pub use metrics::{ms_ssim, mse, psnr, ssim};
pub use noise::{calibrate_alpha, inject, inject_noise, Injection};
pub use report::{
    evaluate, evaluate_model, parse_metrics, EvalItem, EvalOptions, EvalReport, EvalRow, Metric, Skipped,
};
