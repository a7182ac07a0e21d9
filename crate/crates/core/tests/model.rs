//! Fusion, alignment and full-network behaviour against straight-line oracles.

use hmjnd::hmfa::{
    hmfa_forward, reshape_head, sta_block, windowed_cross_attention, AttentionProj, EncoderCall, EncoderKind,
    HmfaParams,
};
use hmjnd::hmpf::{fuse_saliency_depth, hmpf_forward, modulate_with_segmentation, se_gate, HmpfParams};
use hmjnd::io::synth_bundle;
use hmjnd::model::{load_checkpoint, save_checkpoint, AlignmentKind, FusionKind, Model, ModelConfig};
use hmjnd::nn::{Conv, ConvStack, Dense, Init, SeGate};
use hmjnd::tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use hmjnd::train::check_network_gradients;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

fn randomize_biases(store: &mut ParamStore, seed: u64) {
    let mut r = rng(seed);
    for (name, p) in store.iter_mut() {
        if name.ends_with(".bias") {
            p.value.iter_mut().for_each(|v| *v = r.gen_range(-0.3..0.3));
        }
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn fill(store: &mut ParamStore, id: ParamId, v: f64) {
    store.get_mut(id).value.iter_mut().for_each(|x| *x = v);
}

/// `x · Wᵀ + b` on one row.
fn dense_row(store: &ParamStore, d: &Dense, x: &[f64]) -> Vec<f64> {
    let w = &store.get(d.weight).value;
    let b = &store.get(d.bias).value;
    (0..b.len())
        .map(|o| b[o] + x.iter().enumerate().map(|(i, xi)| w[o * x.len() + i] * xi).sum::<f64>())
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn se_gate_matches_straight_line_oracle() {
    let mut store = ParamStore::new();
    let gate = SeGate::new(&mut store, &mut rng(1), "gate", 8, 2, Init::Normal(0.5)).unwrap();
    randomize_biases(&mut store, 2);
    let (n, c, hw) = (2, 8, 5 * 6);
    let f = random(&[n, c, 5, 6], 3);
    let mut g = Graph::new();
    let x = g.input(f.clone());
    let out = se_gate(&mut g, &store, x, &gate).unwrap();
    let mut expected = vec![0.0; f.len()];
    for img in 0..n {
        let pooled: Vec<f64> = (0..c)
            .map(|ch| f.data()[(img * c + ch) * hw..][..hw].iter().sum::<f64>() / hw as f64)
            .collect();
        let hidden: Vec<f64> = dense_row(&store, &gate.reduce, &pooled)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        let weights: Vec<f64> = dense_row(&store, &gate.expand, &hidden)
            .into_iter()
            .map(sigmoid)
            .collect();
        for (ch, &wt) in weights.iter().enumerate() {
            assert!(wt > 0.0 && wt < 1.0);
            for p in 0..hw {
                let i = (img * c + ch) * hw + p;
                expected[i] = f.data()[i] * (1.0 + wt);
            }
        }
    }
    assert!(max_diff(g.value(out), &expected) < 1e-6);
}

fn zero_gates(store: &mut ParamStore, p: &HmpfParams) {
    for gate in [&p.gate_sum, &p.gate_sub] {
        for d in [&gate.reduce, &gate.expand] {
            fill(store, d.weight, 0.0);
            fill(store, d.bias, 0.0);
        }
    }
}

fn hmpf_params(seed: u64) -> (ParamStore, HmpfParams) {
    let mut store = ParamStore::new();
    let p = HmpfParams::new(&mut store, &mut rng(seed), 8, 2, Init::Normal(0.3)).unwrap();
    randomize_biases(&mut store, seed + 1);
    (store, p)
}

#[test]
fn zero_gate_scales_by_one_and_a_half() {
    let (mut store, p) = hmpf_params(4);
    zero_gates(&mut store, &p);
    let f = random(&[1, 8, 4, 4], 5);
    let mut g = Graph::new();
    let x = g.input(f.clone());
    let out = se_gate(&mut g, &store, x, &p.gate_sum).unwrap();
    let expected: Vec<f64> = f.data().iter().map(|v| 1.5 * v).collect();
    assert!(max_diff(g.value(out), &expected) < 1e-12);

    let b = random(&[1, 8, 4, 4], 6);
    let mut g = Graph::new();
    let (va, vb) = (g.input(f.clone()), g.input(b));
    let fused = fuse_saliency_depth(&mut g, &store, va, vb, &p).unwrap();
    let expected: Vec<f64> = f.data().iter().map(|v| 3.0 * v).collect();
    assert!(max_diff(g.value(fused), &expected) < 1e-12);
}

#[test]
fn swapping_fusion_inputs_only_flips_the_offset_path() {
    let (store, p) = hmpf_params(7);
    let (a, b) = (random(&[1, 8, 5, 5], 8), random(&[1, 8, 5, 5], 9));
    let mut g = Graph::new();
    let (va, vb) = (g.input(a), g.input(b));
    let ab = fuse_saliency_depth(&mut g, &store, va, vb, &p).unwrap();
    let ba = fuse_saliency_depth(&mut g, &store, vb, va, &p).unwrap();
    let lhs = g.sub(ab, ba).unwrap();
    let d1 = g.sub(va, vb).unwrap();
    let d2 = g.sub(vb, va).unwrap();
    let s1 = se_gate(&mut g, &store, d1, &p.gate_sub).unwrap();
    let s2 = se_gate(&mut g, &store, d2, &p.gate_sub).unwrap();
    let rhs = g.sub(s1, s2).unwrap();
    assert!(max_diff(g.value(lhs), g.value(rhs)) < 1e-12);
}

/// Sets the last layer of a stack to a constant output.
fn constant_stack(store: &mut ParamStore, stack: &ConvStack, value: f64) {
    let last = stack.layers.last().unwrap();
    fill(store, last.weight, 0.0);
    fill(store, last.bias, value);
}

#[test]
fn segmentation_modulation_identity_and_shift() {
    let (mut store, p) = hmpf_params(10);
    constant_stack(&mut store, &p.mod_gamma, 1.0);
    constant_stack(&mut store, &p.mod_beta, 0.0);
    let (f, s) = (random(&[1, 8, 6, 6], 11), random(&[1, 8, 6, 6], 12));
    let mut g = Graph::new();
    let (vf, vs) = (g.input(f.clone()), g.input(s.clone()));
    let out = modulate_with_segmentation(&mut g, &store, vf, vs, &p).unwrap();
    assert_eq!(g.value(out), f.data());

    let (store, p) = hmpf_params(13);
    let mut g = Graph::new();
    let zero = g.input(Tensor::zeros(&[1, 8, 6, 6]));
    let vs = g.input(s);
    let out = modulate_with_segmentation(&mut g, &store, zero, vs, &p).unwrap();
    let beta = p.mod_beta.forward(&mut g, &store, vs).unwrap();
    assert_eq!(g.value(out), g.value(beta));
}

#[test]
fn fusion_preserves_spatial_size() {
    let (store, p) = hmpf_params(14);
    for (h, w) in [(3, 3), (5, 9), (8, 8)] {
        let mut g = Graph::new();
        let planes: Vec<Var> = (0..3).map(|k| g.input(random(&[1, 1, h, w], 20 + k))).collect();
        let out = hmpf_forward(&mut g, &store, planes[0], planes[1], planes[2], &p).unwrap();
        assert_eq!(g.shape(out), &[1, 8, h, w]);
    }
}

#[test]
fn alignment_trace_follows_the_block_recursion() {
    let mut store = ParamStore::new();
    let p = HmfaParams::new(&mut store, &mut rng(15), 4, 3, 4, 2, 2, Init::Normal(0.2)).unwrap();
    let mut g = Graph::new();
    let f_pr = g.input(random(&[1, 4, 8, 8], 16));
    let f_r = g.input(random(&[1, 4, 8, 8], 17));
    let mut trace = Vec::new();
    let out = hmfa_forward(&mut g, &store, f_pr, f_r, &p, Some(&mut trace)).unwrap();
    assert_eq!(g.shape(out), &[1, 4, 8, 8]);
    let expected: Vec<EncoderCall> = (1..=3)
        .flat_map(|i| {
            [
                EncoderCall {
                    block: i,
                    kind: EncoderKind::Window,
                    shift: 0,
                    kv_source: 2 * i - 2,
                },
                EncoderCall {
                    block: i,
                    kind: EncoderKind::ShiftedWindow,
                    shift: 2,
                    kv_source: 2 * i - 1,
                },
            ]
        })
        .collect();
    assert_eq!(trace, expected);
    assert_eq!(p.conv_blocks.len(), 5);
}

/// Dense oracle: every pixel attends to the pixels of its shifted window
/// that are within one window of it in the unrolled plane.
fn attention_oracle(
    store: &ParamStore,
    proj: &AttentionProj,
    q: &Tensor,
    kv: &Tensor,
    window: usize,
    shift: usize,
) -> Vec<f64> {
    let [_, c, h, w] = q.shape()[..] else { panic!() };
    let at = |t: &Tensor, p: usize| -> Vec<f64> { (0..c).map(|ch| t.data()[ch * h * w + p]).collect() };
    let win = |p: usize| {
        let (y, x) = (p / w, p % w);
        (((y + h - shift) % h) / window, ((x + w - shift) % w) / window)
    };
    let mut out = vec![0.0; c * h * w];
    for p in 0..h * w {
        let qp = dense_row(store, &proj.query, &at(q, p));
        let (py, px) = ((p / w) as i64, (p % w) as i64);
        let keys: Vec<usize> = (0..h * w)
            .filter(|&j| {
                let (jy, jx) = ((j / w) as i64, (j % w) as i64);
                win(j) == win(p) && (jy - py).abs() < window as i64 && (jx - px).abs() < window as i64
            })
            .collect();
        let scores: Vec<f64> = keys
            .iter()
            .map(|&j| {
                let kj = dense_row(store, &proj.key, &at(kv, j));
                qp.iter().zip(&kj).map(|(a, b)| a * b).sum::<f64>() / (c as f64).sqrt()
            })
            .collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - top).exp()).sum();
        let mut mixed = vec![0.0; c];
        for (&j, s) in keys.iter().zip(&scores) {
            let vj = dense_row(store, &proj.value, &at(kv, j));
            let a = (s - top).exp() / z;
            mixed.iter_mut().zip(&vj).for_each(|(m, v)| *m += a * v);
        }
        let o = dense_row(store, &proj.output, &mixed);
        for ch in 0..c {
            out[ch * h * w + p] = o[ch];
        }
    }
    out
}

#[test]
fn windowed_attention_matches_dense_oracle() {
    let mut store = ParamStore::new();
    let proj = AttentionProj::new(&mut store, &mut rng(18), "attn", 4, Init::Normal(0.5)).unwrap();
    randomize_biases(&mut store, 19);
    let (q, kv) = (random(&[1, 4, 8, 8], 20), random(&[1, 4, 8, 8], 21));
    for shift in [0, 2] {
        let mut g = Graph::new();
        let (vq, vkv) = (g.input(q.clone()), g.input(kv.clone()));
        let out = windowed_cross_attention(&mut g, &store, vq, vkv, vkv, 1, 4, shift, &proj).unwrap();
        let d = max_diff(g.value(out), &attention_oracle(&store, &proj, &q, &kv, 4, shift));
        assert!(d < 1e-6, "shift {shift}: {d}");
    }
}

#[test]
fn constant_values_pass_through_attention() {
    let mut store = ParamStore::new();
    let proj = AttentionProj::new(&mut store, &mut rng(22), "attn", 2, Init::Normal(0.0)).unwrap();
    for d in [&proj.query, &proj.key, &proj.value, &proj.output] {
        let w = &mut store.get_mut(d.weight).value;
        w.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    }
    let mut g = Graph::new();
    let q = g.input(random(&[1, 2, 4, 4], 23));
    let kv = g.input(Tensor::from_fn(&[1, 2, 4, 4], |i| if i < 16 { 0.7 } else { -0.2 }));
    let out = windowed_cross_attention(&mut g, &store, q, kv, kv, 2, 4, 0, &proj).unwrap();
    assert!(g.value(out)[..16].iter().all(|v| (v - 0.7).abs() < 1e-12));
    assert!(g.value(out)[16..].iter().all(|v| (v + 0.2).abs() < 1e-12));
}

#[test]
fn alignment_block_matches_composition_oracle() {
    let mut store = ParamStore::new();
    let p = HmfaParams::new(&mut store, &mut rng(24), 4, 2, 4, 2, 2, Init::Normal(0.3)).unwrap();
    randomize_biases(&mut store, 25);
    let mut g = Graph::new();
    let f_pr = g.input(random(&[1, 4, 8, 8], 26));
    let f_q = g.input(random(&[1, 4, 8, 8], 27));
    let got = sta_block(&mut g, &store, f_q, f_pr, 2, &p, None).unwrap();

    let encoder = |g: &mut Graph, enc: &hmjnd::hmfa::Encoder, q: Var, kv: Var| -> Var {
        let nq = enc.norm_q.forward(g, &store, q).unwrap();
        let nkv = enc.norm_kv.forward(g, &store, kv).unwrap();
        let a = windowed_cross_attention(g, &store, nq, nkv, nkv, 2, 4, enc.shift, &enc.attn).unwrap();
        let x = g.add(q, a).unwrap();
        let hdn = enc.norm_mlp.forward(g, &store, x).unwrap();
        let hdn = enc.fc1.forward(g, &store, hdn).unwrap();
        let hdn = g.relu(hdn);
        let hdn = enc.fc2.forward(g, &store, hdn).unwrap();
        g.add(x, hdn).unwrap()
    };
    let kv2 = p.conv_blocks[1].forward(&mut g, &store, f_pr).unwrap();
    let kv3 = p.conv_blocks[2].forward(&mut g, &store, f_pr).unwrap();
    let m = encoder(&mut g, &p.blocks[1].wme, f_q, kv2);
    let want = encoder(&mut g, &p.blocks[1].swme, m, kv3);
    assert!(max_diff(g.value(got), g.value(want)) < 1e-6);
}

#[test]
fn reshape_head_is_a_clamped_residual() {
    let mut store = ParamStore::new();
    let head = Conv::new(&mut store, &mut rng(28), "head", 4, 3, 1, Init::Normal(0.3)).unwrap();
    let img = Tensor::from_fn(&[1, 3, 4, 4], |i| (i as f64 * 0.37).fract());
    let f_an = random(&[1, 4, 4, 4], 29);
    fill(&mut store, head.weight, 0.0);
    let mut g = Graph::new();
    let (vf, vi) = (g.input(f_an.clone()), g.input(img.clone()));
    let out = reshape_head(&mut g, &store, vf, vi, &head).unwrap();
    assert_eq!(g.value(out), img.data());

    fill(&mut store, head.bias, 2.0);
    let mut g = Graph::new();
    let (vf, vi) = (g.input(f_an), g.input(img));
    let out = reshape_head(&mut g, &store, vf, vi, &head).unwrap();
    assert!(g.value(out).iter().all(|&v| v == 1.0));
}

#[test]
fn predictions_are_deterministic_and_in_range() {
    let bundle = synth_bundle(30, 16, 16).unwrap();
    for (fusion, alignment) in [
        (FusionKind::Hmpf, AlignmentKind::Hmfa),
        (FusionKind::Concat, AlignmentKind::ConcatSe),
    ] {
        let cfg = ModelConfig {
            fusion,
            alignment,
            ..ModelConfig::toy()
        };
        let (m1, s1) = Model::init(&cfg, 3).unwrap();
        let (m2, s2) = Model::init(&cfg, 3).unwrap();
        let a = m1.predict(&s1, &bundle).unwrap();
        let b = m2.predict(&s2, &bundle).unwrap();
        assert_eq!(a.i_rr, b.i_rr);
        assert!(a.i_rr.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.i_vt.values().iter().all(|v| *v >= 0.0));
        assert_eq!((a.i_vt.width(), a.i_vt.height()), (16, 16));
    }
}

#[test]
fn checkpoint_round_trip_reproduces_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig {
        fusion: FusionKind::Concat,
        ..ModelConfig::toy()
    };
    let (model, store) = Model::init(&cfg, 31).unwrap();
    save_checkpoint(dir.path(), &cfg, &store).unwrap();
    let (loaded, loaded_store) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(loaded.cfg, cfg);
    let bundle = synth_bundle(32, 16, 16).unwrap();
    assert_eq!(
        model.predict(&store, &bundle).unwrap().i_rr,
        loaded.predict(&loaded_store, &bundle).unwrap().i_rr
    );
}

#[test]
fn full_network_gradients_match_central_differences() {
    let report = check_network_gradients(50, 1e-5, 1e-3, 7).unwrap();
    assert!(report.checked > 1000);
    assert!(
        report.pass_rate() >= 0.99,
        "{:.4} worst {:.3e}",
        report.pass_rate(),
        report.worst_rel
    );
}
