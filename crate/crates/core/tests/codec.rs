//! Codec rules against independent oracles, plus corpus-level properties.

use hmjnd::codec::jnd::{preprocess_plane, BlockContext, VARIANCE_EPS};
use hmjnd::codec::{
    compress, filter_residual, preprocess_jpeg_counted, preprocess_pixel, to_ycc, BranchCounts, CodecMode,
};
use hmjnd::eval::JndMap;
use hmjnd::io::synth_corpus;

/// Pixel rule written as "subtract the clamped deviation".
fn pixel_oracle(p: f64, mean: f64, vt: f64) -> f64 {
    p - (p - mean).clamp(-vt, vt)
}

/// Residual rule written on magnitudes and restored sign.
fn residual_oracle(r: f64, vt: f64, var_local: f64, var_block: f64) -> f64 {
    let vb = if var_block == 0.0 { VARIANCE_EPS } else { var_block };
    if r.abs() <= vt && var_local > var_block {
        return 0.0;
    }
    let m = (r.abs() * vt / vb).max(r.abs() - vt);
    if r < 0.0 {
        -m
    } else {
        m
    }
}

#[test]
fn pixel_rule_matches_oracle_exhaustively() {
    let mut mismatches = 0;
    for p in 0..=255 {
        for mean in (0..=255).step_by(5) {
            for vt in 0..=20 {
                let (p, mean, vt) = (p as f64, mean as f64, vt as f64);
                if preprocess_pixel(p, mean, vt).0 != pixel_oracle(p, mean, vt) {
                    mismatches += 1;
                }
            }
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn residual_rule_matches_oracle_on_grid() {
    let vars = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];
    let mut mismatches = 0;
    for k in -64..=64 {
        let r = k as f64 * 0.5;
        for vt in 0..=10 {
            let vt = vt as f64;
            for &vl in &vars {
                for &vb in &vars {
                    let got = filter_residual(r, vt, vl, vb);
                    if got != residual_oracle(r, vt, vl, vb) {
                        mismatches += 1;
                    }
                    assert!(if r < 0.0 { got <= 0.0 } else { got >= 0.0 }, "sign flipped at r={r}");
                }
            }
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn zero_residual_stays_zero() {
    for vt in [0.0, 1.0, 7.5] {
        for (vl, vb) in [(0.0, 0.0), (1.0, 4.0), (9.0, 2.0)] {
            assert_eq!(filter_residual(0.0, vt, vl, vb), 0.0);
        }
    }
}

#[test]
fn preprocessing_never_raises_block_variance() {
    for b in synth_corpus(3, 6, 40, 32).unwrap() {
        let (w, h) = (b.width(), b.height());
        let luma = to_ycc(&b.rgb).remove(0);
        let vt: Vec<f64> = (0..w * h).map(|i| 2.0 + (i % 7) as f64).collect();
        let mut counts = BranchCounts::default();
        let out = preprocess_plane(&luma, w, h, &vt, &mut counts).unwrap();
        assert_eq!(counts.pixel_total(), (w * h) as u64);
        for (i, (a, o)) in luma.iter().zip(&out).enumerate() {
            assert!((a - o).abs() <= vt[i] + 1e-9);
        }
        let before = BlockContext::new(&luma, w, h).unwrap();
        let after = BlockContext::new(&out, w, h).unwrap();
        for by in (0..h).step_by(8) {
            for bx in (0..w).step_by(8) {
                assert!(after.block_var(bx, by) <= before.block_var(bx, by) + 1e-9);
            }
        }
    }
}

#[test]
fn zero_threshold_preprocessing_is_identity() {
    for b in synth_corpus(4, 3, 32, 32).unwrap() {
        let vt = JndMap::constant(32, 32, 0.0).unwrap();
        let (out, counts) = preprocess_jpeg_counted(&b.rgb, &vt).unwrap();
        assert_eq!(counts.pixel_total(), 32 * 32);
        let diff = out
            .data()
            .iter()
            .zip(b.rgb.data())
            .map(|(a, c)| (a - c).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-6, "{diff}");
    }
}

#[test]
fn quality_100_round_trip_exceeds_50_db() {
    for b in synth_corpus(5, 6, 32, 32).unwrap() {
        let vt = JndMap::constant(32, 32, 0.0).unwrap();
        let c = compress(&b.rgb, &vt, CodecMode::Plain, 100).unwrap();
        assert!(c.stats.psnr > 50.0, "{}", c.stats.psnr);
    }
}

#[test]
fn branch_counters_cover_every_pixel() {
    let b = &synth_corpus(6, 1, 24, 24).unwrap()[0];
    let vt = JndMap::constant(24, 24, 0.02).unwrap();
    let pre = compress(&b.rgb, &vt, CodecMode::JpegPre, 50).unwrap();
    assert_eq!(pre.stats.counts.pixel_total(), 576);
    assert_eq!(pre.stats.counts.residual_total(), 0);
    let res = compress(&b.rgb, &vt, CodecMode::Residual, 50).unwrap();
    assert_eq!(res.stats.counts.residual_total(), 576);
    assert!(res.stats.ms_ssim > 0.5);
}

#[test]
fn mismatched_map_is_rejected() {
    let b = &synth_corpus(6, 1, 24, 24).unwrap()[0];
    let vt = JndMap::constant(16, 24, 0.02).unwrap();
    assert!(compress(&b.rgb, &vt, CodecMode::Plain, 50).is_err());
}
