//! Image files, bundle directories and the scene generator.

use std::fs;

use hmjnd::io::{
    load_bundle, load_image, save_bundle, save_image, synth_bundle, synth_scene, ImagePlane, DEPTH_FILE, LABELS_FILE,
};
use hmjnd::Error;

#[test]
fn bundle_round_trip_stays_within_one_step() {
    let dir = tempfile::tempdir().unwrap();
    let b = synth_bundle(11, 24, 20).unwrap();
    save_bundle(&b, dir.path()).unwrap();
    let l = load_bundle(dir.path()).unwrap();
    let planes = [
        (&b.rgb, &l.rgb),
        (&b.saliency, &l.saliency),
        (&b.depth, &l.depth),
        (&b.segmentation, &l.segmentation),
        (b.ground_truth.as_ref().unwrap(), l.ground_truth.as_ref().unwrap()),
    ];
    for (a, c) in planes {
        assert!(a.same_dims(c));
        assert!(a
            .data()
            .iter()
            .zip(c.data())
            .all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-12));
    }
    assert_eq!(b.labels, l.labels);
}

#[test]
fn second_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let img = ImagePlane::from_clamped(5, 3, 3, (0..45).map(|i| (i as f64 * 0.123).fract()).collect()).unwrap();
    let (p1, p2) = (dir.path().join("a.ppm"), dir.path().join("b.ppm"));
    save_image(&img, &p1).unwrap();
    save_image(&load_image(&p1).unwrap(), &p2).unwrap();
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
}

#[test]
fn missing_depth_is_named() {
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&synth_bundle(1, 16, 16).unwrap(), dir.path()).unwrap();
    fs::remove_file(dir.path().join(DEPTH_FILE)).unwrap();
    let e = load_bundle(dir.path()).unwrap_err();
    assert_eq!(e.to_string(), "missing modality: depth");
}

#[test]
fn mismatched_plane_is_named() {
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&synth_bundle(1, 16, 16).unwrap(), dir.path()).unwrap();
    save_image(&ImagePlane::filled(8, 8, 1, 0.5).unwrap(), dir.path().join(DEPTH_FILE)).unwrap();
    match load_bundle(dir.path()).unwrap_err() {
        Error::DimensionMismatch { plane, .. } => assert_eq!(plane, "depth"),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn ground_truth_departs_more_on_texture() {
    for seed in 0..10 {
        let s = synth_scene(seed, 32, 32).unwrap();
        let gt = s.bundle.ground_truth.as_ref().unwrap();
        let (mut flat, mut nf, mut tex, mut nt) = (0.0, 0, 0.0, 0);
        for p in 0..32 * 32 {
            let d: f64 = (0..3)
                .map(|c| (gt.data()[p * 3 + c] - s.bundle.rgb.data()[p * 3 + c]).abs())
                .sum();
            if s.texture_mask[p] {
                tex += d;
                nt += 1;
            } else {
                flat += d;
                nf += 1;
            }
        }
        assert!(nt > 0 && nf > 0);
        assert!(flat / nf as f64 <= tex / nt as f64, "seed {seed}");
    }
}

#[test]
fn scenes_have_several_labels_and_fixed_size() {
    let b = synth_bundle(1, 32, 32).unwrap();
    for p in [&b.saliency, &b.depth, &b.segmentation] {
        assert_eq!((p.width(), p.height(), p.channels()), (32, 32, 1));
    }
    let mut labels = b.labels.labels.clone();
    labels.sort_unstable();
    labels.dedup();
    assert!(labels.len() >= 2);
}

#[test]
fn labels_fall_back_to_plane_levels() {
    let dir = tempfile::tempdir().unwrap();
    let b = synth_bundle(11, 24, 20).unwrap();
    save_bundle(&b, dir.path()).unwrap();
    fs::remove_file(dir.path().join(LABELS_FILE)).unwrap();
    let l = load_bundle(dir.path()).unwrap();
    let distinct: std::collections::BTreeSet<u8> = b.labels.labels.iter().copied().collect();
    assert_eq!(l.labels.num_classes, distinct.len());
    // Same partition of pixels, possibly renumbered.
    let (a, c) = (&b.labels.labels, &l.labels.labels);
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            assert_eq!(a[i] == a[j], c[i] == c[j]);
        }
    }
}

#[test]
fn out_of_range_label_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = synth_bundle(11, 24, 20).unwrap();
    b.labels.num_classes = 2;
    save_bundle(&b, dir.path()).unwrap();
    assert!(load_bundle(dir.path()).is_err());
}
