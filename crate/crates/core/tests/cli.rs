//! The `hmjnd` binary end to end: outputs, manifests and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

fn hmjnd(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_hmjnd"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn ok(args: &[&str]) -> String {
    let (code, stdout, stderr) = hmjnd(args);
    assert_eq!(code, 0, "{args:?} failed: {stderr}");
    stdout
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir` with its bytes, sorted by relative path.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn synth(tmp: &TempDir, name: &str, n: usize, size: usize) -> PathBuf {
    let dir = tmp.path().join(name);
    let (n, size) = (n.to_string(), size.to_string());
    ok(&[
        "synth",
        "--n",
        &n,
        "--width",
        &size,
        "--height",
        &size,
        "--seed",
        "4",
        "--out-dir",
        s(&dir),
    ]);
    dir
}

#[test]
fn synth_writes_bundles_and_an_index() {
    let tmp = TempDir::new().unwrap();
    let dir = synth(&tmp, "data", 3, 16);
    let index = fs::read_to_string(dir.join("index.txt")).unwrap();
    assert_eq!(index.lines().count(), 3);
    for name in index.lines() {
        let images = fs::read_dir(dir.join(name))
            .unwrap()
            .filter(|e| {
                let p = e.as_ref().unwrap().path();
                matches!(p.extension().and_then(|x| x.to_str()), Some("ppm" | "pgm"))
            })
            .count();
        assert_eq!(images, 5, "{name}");
        assert!(dir.join(name).join("labels.hmt").is_file());
    }
    let again = synth(&tmp, "again", 3, 16);
    assert_eq!(snapshot(&dir), snapshot(&again));

    let empty = synth(&tmp, "empty", 0, 16);
    assert_eq!(fs::read_to_string(empty.join("index.txt")).unwrap(), "");
}

#[test]
fn train_predict_evaluate_and_replay() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp, "data", 2, 16);
    let run1 = tmp.path().join("train1");
    ok(&[
        "train",
        "--dataset",
        s(&data),
        "--preset",
        "toy",
        "--epochs",
        "2",
        "--patch",
        "16",
        "--set",
        "channels=4",
        "--out-dir",
        s(&run1),
    ]);
    let losses = fs::read_to_string(run1.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().next(), Some("epoch,step,loss_total,loss_fea,loss_pix"));
    let manifest = fs::read_to_string(run1.join("manifest.txt")).unwrap();
    assert!(manifest.starts_with("version=hmjnd "));
    assert!(manifest.contains("command=train") && manifest.contains("channels=4"));

    let run2 = tmp.path().join("train2");
    ok(&[
        "train",
        "--config",
        s(&run1.join("manifest.txt")),
        "--out-dir",
        s(&run2),
    ]);
    assert_eq!(snapshot(&run1), snapshot(&run2));

    let ckpt = run1.join("checkpoint");
    let pred = tmp.path().join("pred");
    ok(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&data.join("scene_000")),
        "--out-dir",
        s(&pred),
    ]);
    for f in ["i_rr.ppm", "i_vt.pgm"] {
        assert!(pred.join(f).is_file(), "{f}");
    }
    assert_eq!(&fs::read(pred.join("i_vt.hmt")).unwrap()[..4], b"HMT1");

    let ev1 = tmp.path().join("eval1");
    ok(&[
        "evaluate",
        "--dataset",
        s(&data),
        "--checkpoint",
        s(&ckpt),
        "--gt",
        "--out-dir",
        s(&ev1),
    ]);
    assert!(fs::read_to_string(ev1.join("report.csv")).unwrap().starts_with("id,"));
    let ev2 = tmp.path().join("eval2");
    ok(&[
        "evaluate",
        "--config",
        s(&ev1.join("manifest.txt")),
        "--out-dir",
        s(&ev2),
    ]);
    assert_eq!(snapshot(&ev1), snapshot(&ev2));
}

#[test]
fn compress_writes_stats_and_replays() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp, "data", 1, 24);
    let c1 = tmp.path().join("c1");
    let scene = data.join("scene_000");
    ok(&[
        "compress",
        "--input",
        s(&scene),
        "--jnd-const",
        "0.02",
        "--mode",
        "residual",
        "--out-dir",
        s(&c1),
    ]);
    let stats = fs::read_to_string(c1.join("stats.csv")).unwrap();
    assert_eq!(stats.lines().next(), Some("bpp,psnr,ms_ssim,branch_counts"));
    assert_eq!(stats.lines().nth(1).unwrap().split(',').count(), 4);
    assert!(c1.join("reconstruction.ppm").is_file());
    let c2 = tmp.path().join("c2");
    ok(&["compress", "--config", s(&c1.join("manifest.txt")), "--out-dir", s(&c2)]);
    assert_eq!(snapshot(&c1), snapshot(&c2));

    let inj = tmp.path().join("inj");
    ok(&[
        "inject",
        "--input",
        s(&scene.join("rgb.ppm")),
        "--jnd-const",
        "0.03",
        "--out-dir",
        s(&inj),
    ]);
    assert!(inj.join("contaminated.ppm").is_file());
}

#[test]
fn ablate_flushes_every_row() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp, "data", 2, 16);
    let out = tmp.path().join("abl");
    ok(&[
        "ablate",
        "--dataset",
        s(&data),
        "--epochs",
        "1",
        "--patch",
        "16",
        "--set",
        "channels=4",
        "--out-dir",
        s(&out),
    ]);
    let table = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 10);
    assert!(table.lines().skip(1).all(|l| l.split(',').count() == 9));
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(hmjnd(&["frobnicate"]).0, 2);
    assert_eq!(hmjnd(&["synth", "--bogus", "1", "--out-dir", s(&out)]).0, 2);

    let data = synth(&tmp, "data", 1, 16);
    let (code, _, err) = hmjnd(&[
        "evaluate",
        "--dataset",
        s(&data),
        "--checkpoint",
        s(&out),
        "--metric",
        "psnr_gt",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code, 2, "{err}");

    let cfg = tmp.path().join("bad.txt");
    fs::write(&cfg, "colour=blue\n").unwrap();
    assert_eq!(hmjnd(&["synth", "--config", s(&cfg), "--out-dir", s(&out)]).0, 2);
    let synth_manifest = data.join("manifest.txt");
    assert_eq!(
        hmjnd(&["train", "--config", s(&synth_manifest), "--out-dir", s(&out)]).0,
        2
    );

    let missing = tmp.path().join("nope");
    assert_eq!(hmjnd(&["train", "--dataset", s(&missing), "--out-dir", s(&out)]).0, 1);
    let blocked = tmp.path().join("file");
    fs::write(&blocked, "").unwrap();
    assert_eq!(hmjnd(&["synth", "--n", "1", "--out-dir", s(&blocked.join("sub"))]).0, 1);
}
