//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.
//!
//! `cargo test --release --test acceptance` runs everything (about 20
//! minutes on one core, most of it the ablation sweep). Set
//! `HMJND_CRITERIA=2,3` to run a subset.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use hmjnd::ablation::{run_ablation, sweep_train_config, table_rows};
use hmjnd::codec::{compress, preprocess_pixel, CodecMode};
use hmjnd::eval::metrics::psnr_from_mse;
use hmjnd::eval::{calibrate_alpha, inject, ms_ssim, ssim, JndMap};
use hmjnd::io::{synth_corpus, ImagePlane, Modality};
use hmjnd::model::{Model, ModelConfig};
use hmjnd::train::{check_network_gradients, dataset_loss, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Criterion = fn() -> hmjnd::Result<Outcome>;

fn c1_scale_statement() -> hmjnd::Result<Outcome> {
    Ok(outcome(
        true,
        "informational: absolute table values, the reported average MS-SSIM and the reported bit-rate saving \
         need full datasets, pretrained modality networks and real codecs; the criteria below are \
         property-level substitutes"
            .into(),
    ))
}

fn c2_gradients() -> hmjnd::Result<Outcome> {
    let start = Instant::now();
    let suite = common::op_suite();
    let op_fail: Vec<&str> = suite
        .reports
        .iter()
        .filter(|(_, r)| !r.failures.is_empty())
        .map(|(n, _)| *n)
        .collect();
    let op_coords: usize = suite.reports.iter().map(|(_, r)| r.checked).sum();
    let net = check_network_gradients(50, 1e-5, 1e-3, 7)?;
    let elapsed = start.elapsed();
    let pass = op_fail.is_empty() && net.pass_rate() >= 0.99 && elapsed < Duration::from_secs(60);
    Ok(outcome(
        pass,
        format!(
            "{} op checks ({} coords), failing ops {:?}; network {}/{} coords within 1e-3 ({:.2}%), worst {:.2e}; {:.1?}",
            suite.reports.len(),
            op_coords,
            op_fail,
            net.checked - net.failures.len(),
            net.checked,
            100.0 * net.pass_rate(),
            net.worst_rel,
            elapsed
        ),
    ))
}

fn c3_overfit() -> hmjnd::Result<Outcome> {
    let start = Instant::now();
    let data = synth_corpus(0, 4, 32, 32)?;
    let model_cfg = ModelConfig::toy();
    let cfg = TrainConfig {
        epochs: 500,
        seed: 1,
        ..TrainConfig::toy()
    };
    let (m, s) = Model::init(&model_cfg, cfg.seed)?;
    let before = dataset_loss(&m, &s, &data, &cfg)?.total;
    let out = train(&data, &model_cfg, &cfg)?;
    let after = dataset_loss(&out.model, &out.store, &data, &cfg)?.total;
    let steps = out.log.records.len();
    let elapsed = start.elapsed();
    let ratio = after / before;
    Ok(outcome(
        ratio <= 0.1 && steps <= 500 && elapsed < Duration::from_secs(300),
        format!("loss {before:.3e} -> {after:.3e}, ratio {ratio:.4} after {steps} steps; {elapsed:.1?}"),
    ))
}

fn c4_ablation() -> hmjnd::Result<Outcome> {
    let start = Instant::now();
    let rows = table_rows();
    let mut wins = 0;
    let mut per_seed = Vec::new();
    for seed in 0..5u64 {
        let data = synth_corpus(seed, 20, 32, 32)?;
        let cfg = TrainConfig {
            seed,
            ..sweep_train_config()
        };
        let results = run_ablation(
            &data,
            &data,
            &rows,
            &ModelConfig::toy(),
            &cfg,
            Modality::Saliency,
            |_| Ok(()),
        )?;
        let all = results
            .iter()
            .find(|r| r.row.table == 1 && r.row.label == "all")
            .expect("modality table has an all row");
        let beaten_by: Vec<String> = results
            .iter()
            .filter(|r| !(r.row.table == 2 && r.row.label == "hmpf+hmfa") && r.row.label != "all")
            .filter(|r| r.psnr_gt_rr > all.psnr_gt_rr)
            .map(|r| format!("{} {:.2}", r.row.label, r.psnr_gt_rr))
            .collect();
        if beaten_by.is_empty() {
            wins += 1;
        }
        per_seed.push(format!("s{seed}: all {:.2} beaten by {:?}", all.psnr_gt_rr, beaten_by));
    }
    let elapsed = start.elapsed();
    Ok(outcome(
        wins >= 4 && elapsed < Duration::from_secs(1800),
        format!(
            "all-row on top in {wins}/5 seeds ({}); {elapsed:.1?}",
            per_seed.join("; ")
        ),
    ))
}

/// Synthetic scene colors squeezed into [0.2, 0.8].
fn mid_range(img: &ImagePlane) -> hmjnd::Result<ImagePlane> {
    let d = img.data().iter().map(|v| 0.2 + 0.6 * v).collect();
    ImagePlane::new(img.width(), img.height(), img.channels(), d)
}

fn c5_calibration() -> hmjnd::Result<Outcome> {
    let (mut worst_pre, mut worst_post) = (0.0f64, 0.0f64);
    let corpus = synth_corpus(11, 20, 48, 48)?;
    for (k, b) in corpus.iter().enumerate() {
        let gt = b.ground_truth.as_ref().expect("synthetic scenes carry ground truth");
        let map = JndMap::from_difference(&b.rgb, gt)?;
        let img = mid_range(&b.rgb)?;
        let alpha = calibrate_alpha(&map, 100.0)?;
        let inj = inject(&img, &map, alpha, k as u64)?;
        worst_pre = worst_pre.max((inj.mse_pre_clip - 100.0).abs() / 100.0);
        worst_post = worst_post.max((inj.mse_post_clip - 100.0).abs() / 100.0);
    }
    Ok(outcome(
        worst_pre <= 1e-6 && worst_post <= 0.05,
        format!(
            "20 images, worst relative error pre-clip {worst_pre:.2e}, post-clip {:.2}%",
            100.0 * worst_post
        ),
    ))
}

fn c6_metrics() -> hmjnd::Result<Outcome> {
    let p = psnr_from_mse(100.0);
    let corpus = synth_corpus(12, 20, 64, 64)?;
    let (mut worst_id, mut monotone) = (0.0f64, 0);
    let map = JndMap::constant(64, 64, 0.02)?;
    for (k, b) in corpus.iter().enumerate() {
        worst_id = worst_id
            .max((ssim(&b.rgb, &b.rgb)? - 1.0).abs())
            .max((ms_ssim(&b.rgb, &b.rgb)? - 1.0).abs());
        let mut scores = Vec::new();
        for alpha in [1.0, 2.0, 4.0] {
            let noisy = inject(&b.rgb, &map, alpha, 100 + k as u64)?.image;
            scores.push(ms_ssim(&noisy, &b.rgb)?);
        }
        if scores[0] > scores[1] && scores[1] > scores[2] {
            monotone += 1;
        }
    }
    Ok(outcome(
        (p - 28.1308).abs() <= 1e-3 && worst_id <= 1e-9 && monotone == corpus.len(),
        format!(
            "PSNR(MSE=100) {p:.5} dB; identity worst |1-SSIM| {worst_id:.1e}; MS-SSIM decreasing on {monotone}/{}",
            corpus.len()
        ),
    ))
}

/// Clamp target rule written as explicit branches.
fn pixel_branches(p: f64, mean: f64, vt: f64) -> f64 {
    if (mean - p).abs() <= vt {
        mean
    } else if p > mean {
        p - vt
    } else {
        p + vt
    }
}

fn c7_pixel_rule() -> hmjnd::Result<Outcome> {
    let mut mismatches = 0;
    for p in 0..=255 {
        for mean in (0..=255).step_by(5) {
            for vt in 0..=20 {
                let (p, mean, vt) = (p as f64, mean as f64, vt as f64);
                if preprocess_pixel(p, mean, vt).0 != pixel_branches(p, mean, vt) {
                    mismatches += 1;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut violations = 0;
    for _ in 0..1_000_000 {
        let (p, mean, vt) = (
            rng.gen_range(0.0..=255.0),
            rng.gen_range(0.0..=255.0),
            rng.gen_range(0.0..=40.0),
        );
        // `p - vt` rounds, so allow float slack far below one 8-bit level.
        if (preprocess_pixel(p, mean, vt).0 - p).abs() > vt + 1e-12 {
            violations += 1;
        }
    }
    Ok(outcome(
        mismatches == 0 && violations == 0,
        format!("{mismatches} oracle mismatches over 269892 cases; {violations} bound violations in 1e6 random cases"),
    ))
}

/// Residual rule written as explicit branches on the signed residual.
fn residual_branches(r: f64, vt: f64, var_local: f64, var_block: f64) -> f64 {
    let vb = if var_block == 0.0 {
        hmjnd::codec::jnd::VARIANCE_EPS
    } else {
        var_block
    };
    let scaled = r * vt / vb;
    if r.abs() <= vt && var_local > var_block {
        0.0
    } else if r >= 0.0 {
        scaled.max(r - vt)
    } else {
        scaled.min(r + vt)
    }
}

fn c8_residual_rule() -> hmjnd::Result<Outcome> {
    let vars = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];
    let (mut cases, mut mismatches, mut flips) = (0, 0, 0);
    for k in -64..=64 {
        let r = k as f64 * 0.5;
        for vt in 0..=10 {
            let vt = vt as f64;
            for &vl in &vars {
                for &vb in &vars {
                    cases += 1;
                    let got = hmjnd::codec::filter_residual(r, vt, vl, vb);
                    if got != residual_branches(r, vt, vl, vb) {
                        mismatches += 1;
                    }
                    if (r < 0.0 && got > 0.0) || (r >= 0.0 && got < 0.0) {
                        flips += 1;
                    }
                }
            }
        }
    }
    Ok(outcome(
        mismatches == 0 && flips == 0,
        format!("{mismatches} oracle mismatches, {flips} sign flips over {cases} cases"),
    ))
}

fn c9_compression() -> hmjnd::Result<Outcome> {
    let corpus = synth_corpus(13, 20, 64, 64)?;
    let map = JndMap::constant(64, 64, 0.02)?;
    let (mut not_worse, mut saving, mut min_ms) = (0, 0.0, f64::INFINITY);
    for b in &corpus {
        let plain = compress(&b.rgb, &map, CodecMode::Plain, 50)?.stats;
        let pre = compress(&b.rgb, &map, CodecMode::JpegPre, 50)?.stats;
        if pre.bpp <= plain.bpp {
            not_worse += 1;
        }
        saving += (plain.bpp - pre.bpp) / plain.bpp / corpus.len() as f64;
        min_ms = min_ms.min(pre.ms_ssim);
    }
    let frac = not_worse as f64 / corpus.len() as f64;
    Ok(outcome(
        frac >= 0.9 && saving > 0.0 && min_ms >= 0.90,
        format!(
            "jpeg_pre bpp <= plain on {not_worse}/{}, mean saving {:.2}%, min MS-SSIM {min_ms:.4}",
            corpus.len(),
            100.0 * saving
        ),
    ))
}

fn hmjnd_bin(args: &[&str]) -> hmjnd::Result<()> {
    let status = Command::new(env!("CARGO_BIN_EXE_hmjnd")).args(args).output()?;
    if status.status.success() {
        Ok(())
    } else {
        Err(hmjnd::Error::Contract(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&status.stderr).trim()
        )))
    }
}

fn tree(dir: &Path) -> hmjnd::Result<Vec<(PathBuf, Vec<u8>)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p)?));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn c10_determinism() -> hmjnd::Result<Outcome> {
    let tmp = tempfile::TempDir::new()?;
    let at = |n: &str| tmp.path().join(n).to_string_lossy().into_owned();
    hmjnd_bin(&[
        "synth",
        "--n",
        "3",
        "--width",
        "32",
        "--height",
        "32",
        "--out-dir",
        &at("data"),
    ])?;
    hmjnd_bin(&[
        "train",
        "--dataset",
        &at("data"),
        "--preset",
        "toy",
        "--epochs",
        "5",
        "--out-dir",
        &at("train1"),
    ])?;
    let ckpt = format!("{}/checkpoint", at("train1"));
    hmjnd_bin(&[
        "evaluate",
        "--dataset",
        &at("data"),
        "--checkpoint",
        &ckpt,
        "--gt",
        "--out-dir",
        &at("eval1"),
    ])?;
    hmjnd_bin(&[
        "compress",
        "--input",
        &format!("{}/scene_000", at("data")),
        "--jnd",
        &ckpt,
        "--mode",
        "jpeg_pre",
        "--out-dir",
        &at("comp1"),
    ])?;
    let mut same = Vec::new();
    for cmd in ["train", "eval", "comp"] {
        let (a, b) = (at(&format!("{cmd}1")), at(&format!("{cmd}2")));
        let command = if cmd == "eval" {
            "evaluate"
        } else if cmd == "comp" {
            "compress"
        } else {
            "train"
        };
        hmjnd_bin(&[command, "--config", &format!("{a}/manifest.txt"), "--out-dir", &b])?;
        same.push((command, tree(Path::new(&a))? == tree(Path::new(&b))?));
    }
    Ok(outcome(
        same.iter().all(|(_, s)| *s),
        format!("bit-identical replay from manifest: {same:?}"),
    ))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, Criterion); 10] = [
        (1, "scale statement", c1_scale_statement),
        (2, "gradient suite", c2_gradients),
        (3, "overfit", c3_overfit),
        (4, "ablation ordering", c4_ablation),
        (5, "noise calibration", c5_calibration),
        (6, "metric closed forms", c6_metrics),
        (7, "pixel rule", c7_pixel_rule),
        (8, "residual rule", c8_residual_rule),
        (9, "compression direction", c9_compression),
        (10, "manifest determinism", c10_determinism),
    ];
    let only: Option<Vec<u32>> = std::env::var("HMJND_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {id:2} {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
