//! Composite loss, Adam, the learning-rate schedule and the training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::io::{synth_bundle, ModalityBundle, MIN_SYNTH_SIZE};
use crate::model::{InitScheme, Model, ModelConfig, ModelInputs};
use crate::tensor::gradcheck::{check_params, GradCheckReport};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda_fea: f64,
    pub lambda_pix: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub patch: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_fea: 0.1,
            lambda_pix: 1.0,
            batch: 4,
            epochs: 50,
            lr: 1e-4,
            patch: 32,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Settings that fit the toy network on a handful of 32×32 scenes. The
    /// feature term is weighted down because at full weight it pulls the
    /// shared embeddings toward each other faster than the pixel term can
    /// use them.
    pub fn toy() -> Self {
        TrainConfig {
            lambda_fea: 0.01,
            lr: 3e-3,
            batch: 4,
            patch: 32,
            ..Self::default()
        }
    }

    pub const KEYS: [&'static str; 10] = [
        "lambda_fea",
        "lambda_pix",
        "batch",
        "epochs",
        "lr",
        "patch",
        "seed",
        "beta1",
        "beta2",
        "eps",
    ];

    pub fn apply(&mut self, kv: &KvConfig) -> Result<()> {
        kv.read("lambda_fea", &mut self.lambda_fea)?;
        kv.read("lambda_pix", &mut self.lambda_pix)?;
        kv.read("batch", &mut self.batch)?;
        kv.read("epochs", &mut self.epochs)?;
        kv.read("lr", &mut self.lr)?;
        kv.read("patch", &mut self.patch)?;
        kv.read("seed", &mut self.seed)?;
        kv.read("beta1", &mut self.beta1)?;
        kv.read("beta2", &mut self.beta2)?;
        kv.read("eps", &mut self.eps)?;
        Ok(())
    }

    pub fn write(&self, kv: &mut KvConfig) {
        kv.set("lambda_fea", self.lambda_fea);
        kv.set("lambda_pix", self.lambda_pix);
        kv.set("batch", self.batch);
        kv.set("epochs", self.epochs);
        kv.set("lr", self.lr);
        kv.set("patch", self.patch);
        kv.set("seed", self.seed);
        kv.set("beta1", self.beta1);
        kv.set("beta2", self.beta2);
        kv.set("eps", self.eps);
    }

    /// Checks the weights and that patches tile into whole attention windows.
    pub fn validate(&self, window: usize) -> Result<()> {
        if !(self.lambda_fea >= 0.0 && self.lambda_pix >= 0.0) || self.lambda_fea + self.lambda_pix <= 0.0 {
            return Err(Error::Config(format!(
                "loss weights must be >= 0 with a positive sum, got lambda_fea={} lambda_pix={}",
                self.lambda_fea, self.lambda_pix
            )));
        }
        if self.batch == 0 || self.patch == 0 {
            return Err(Error::Config("batch and patch must be positive".into()));
        }
        if window > 0 && !self.patch.is_multiple_of(window) {
            return Err(Error::Config(format!(
                "patch {} is not a multiple of the attention window {window}",
                self.patch
            )));
        }
        if self.lr.is_nan()
            || self.lr < 0.0
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.eps.is_nan()
            || self.eps <= 0.0
        {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        Ok(())
    }
}

/// Graph nodes of the loss and its two terms.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub fea: Var,
    pub pix: Var,
}

/// `λ_fea·mean|F_r − F_pr| + λ_pix·mean((I_rr − I_gt)²)`. The reported
/// `fea`/`pix` terms are unweighted.
pub fn loss_overall(
    g: &mut Graph,
    f_r: Var,
    f_pr: Var,
    i_rr: Var,
    i_gt: Var,
    lambda_fea: f64,
    lambda_pix: f64,
) -> Result<LossVars> {
    for (a, b, what) in [(f_r, f_pr, "feature"), (i_rr, i_gt, "image")] {
        if g.shape(a) != g.shape(b) {
            return Err(Error::shape(format!(
                "{what} pair differs: {:?} vs {:?}",
                g.shape(a),
                g.shape(b)
            )));
        }
    }
    let d = g.sub(f_r, f_pr)?;
    let d = g.abs(d);
    let fea = g.mean(d);
    let e = g.sub(i_rr, i_gt)?;
    let e = g.square(e);
    let pix = g.mean(e);
    let wf = g.scale(fea, lambda_fea);
    let wp = g.scale(pix, lambda_pix);
    let total = g.add(wf, wp)?;
    Ok(LossVars { total, fea, pix })
}

/// Top-left corners of `patch`-sized tiles covering `0..len`; the last tile
/// is pulled back to end at the edge.
fn tile_starts(len: usize, patch: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..len / patch).map(|i| i * patch).collect();
    if !len.is_multiple_of(patch) {
        starts.push(len - patch);
    }
    starts
}

/// Full-size patches covering every pixel, in raster order.
pub fn patch_partition(bundle: &ModalityBundle, patch: usize) -> Result<Vec<ModalityBundle>> {
    let (w, h) = (bundle.width(), bundle.height());
    if patch == 0 || patch > w || patch > h {
        return Err(Error::shape(format!("patch {patch} does not fit a {w}x{h} image")));
    }
    let xs = tile_starts(w, patch);
    let mut out = Vec::new();
    for y in tile_starts(h, patch) {
        for &x in &xs {
            out.push(bundle.crop(x, y, patch, patch)?);
        }
    }
    Ok(out)
}

/// Adam with bias correction over every parameter. Consumes the gradients:
/// a second call without a new backward pass is an error.
pub fn adam_step(store: &mut ParamStore, lr: f64, betas: (f64, f64), eps: f64) -> Result<()> {
    if !store.grads_ready() {
        return Err(Error::Contract("optimizer step without gradients".into()));
    }
    store.step += 1;
    let t = store.step as i32;
    let (b1, b2) = betas;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (_, p) in store.iter_mut() {
        for i in 0..p.value.len() {
            let g = p.grad[i];
            p.m[i] = b1 * p.m[i] + (1.0 - b1) * g;
            p.v[i] = b2 * p.v[i] + (1.0 - b2) * g * g;
            let m_hat = p.m[i] / c1;
            let v_hat = p.v[i] / c2;
            p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    store.grads_ready = false;
    Ok(())
}

/// Linear decay from the initial rate at epoch 0 to zero at `cfg.epochs`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    if cfg.epochs == 0 {
        return cfg.lr;
    }
    cfg.lr * (1.0 - epoch.min(cfg.epochs) as f64 / cfg.epochs as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub total: f64,
    pub fea: f64,
    pub pix: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossLog {
    pub records: Vec<LossRecord>,
}

impl LossLog {
    pub const HEADER: &'static str = "epoch,step,loss_total,loss_fea,loss_pix";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{},{}", r.epoch, r.step, r.total, r.fea, r.pix);
        }
        s
    }

    /// Mean total loss of each epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.records {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.total;
            out[r.epoch].1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }
}

pub struct Trained {
    pub model: Model,
    pub store: ParamStore,
    pub log: LossLog,
}

fn ground_truth_tensor(batch: &[&ModalityBundle]) -> Result<Tensor> {
    let first = batch[0].ground_truth.as_ref().expect("checked");
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(batch.len() * 3 * w * h);
    for b in batch {
        data.extend_from_slice(b.ground_truth.as_ref().expect("checked").to_tensor().data());
    }
    Tensor::new(vec![batch.len(), 3, h, w], data)
}

/// Builds the loss graph for one batch.
fn batch_loss(
    model: &Model,
    store: &ParamStore,
    batch: &[&ModalityBundle],
    cfg: &TrainConfig,
) -> Result<(Graph, LossVars)> {
    let mut g = Graph::new();
    let inputs = ModelInputs::from_bundles(batch)?;
    let vars = model.forward(&mut g, store, &inputs, None)?;
    let gt = g.input(ground_truth_tensor(batch)?);
    let loss = loss_overall(
        &mut g,
        vars.f_r,
        vars.f_pr,
        vars.i_rr,
        gt,
        cfg.lambda_fea,
        cfg.lambda_pix,
    )?;
    Ok((g, loss))
}

fn check_dataset(dataset: &[ModalityBundle]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    if let Some(i) = dataset.iter().position(|b| b.ground_truth.is_none()) {
        return Err(Error::MissingGroundTruth(format!("training item {i}")));
    }
    Ok(())
}

/// Loss of the current parameters averaged over all patches of `dataset`,
/// one patch per forward pass.
pub fn dataset_loss(
    model: &Model,
    store: &ParamStore,
    dataset: &[ModalityBundle],
    cfg: &TrainConfig,
) -> Result<LossRecord> {
    check_dataset(dataset)?;
    let mut acc = LossRecord {
        epoch: 0,
        step: 0,
        total: 0.0,
        fea: 0.0,
        pix: 0.0,
    };
    let mut n = 0usize;
    for b in dataset {
        for p in patch_partition(b, cfg.patch)? {
            let (g, loss) = batch_loss(model, store, &[&p], cfg)?;
            acc.total += g.scalar(loss.total);
            acc.fea += g.scalar(loss.fea);
            acc.pix += g.scalar(loss.pix);
            n += 1;
        }
    }
    let n = n as f64;
    acc.total /= n;
    acc.fea /= n;
    acc.pix /= n;
    Ok(acc)
}

/// Central-difference check of every parameter gradient of the composite
/// loss on the toy network at an 8×8 input.
///
/// The point is made generic first: weights are drawn with standard
/// deviation 0.1 and biases are randomized, so no ReLU input or feature
/// difference sits exactly at a kink.
pub fn check_network_gradients(samples: usize, h: f64, tol: f64, seed: u64) -> Result<GradCheckReport> {
    let cfg = ModelConfig {
        init_scheme: InitScheme::Normal,
        init_std: 0.1,
        ..ModelConfig::toy()
    };
    let (model, mut store) = Model::init(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (name, p) in store.iter_mut() {
        if name.ends_with(".bias") {
            for v in p.value.iter_mut() {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
    }
    let bundle = synth_bundle(seed, MIN_SYNTH_SIZE, MIN_SYNTH_SIZE)?.crop(0, 0, 8, 8)?;
    let inputs = ModelInputs::from_bundles(&[&bundle])?;
    let gt = ground_truth_tensor(&[&bundle])?;
    check_params(&mut store, samples, h, tol, seed, |g, store| {
        let v = model.forward(g, store, &inputs, None)?;
        let gt = g.input(gt.clone());
        Ok(loss_overall(g, v.f_r, v.f_pr, v.i_rr, gt, 0.1, 1.0)?.total)
    })
}

/// Trains from the initialization seeded by `cfg.seed`.
pub fn train(dataset: &[ModalityBundle], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Trained> {
    let (model, store) = Model::init(model_cfg, cfg.seed)?;
    train_from(dataset, model, store, cfg)
}

/// Continues training given parameters. Deterministic in `(dataset, cfg)`.
pub fn train_from(
    dataset: &[ModalityBundle],
    model: Model,
    mut store: ParamStore,
    cfg: &TrainConfig,
) -> Result<Trained> {
    check_dataset(dataset)?;
    let window = match model.cfg.alignment {
        crate::model::AlignmentKind::Hmfa => model.cfg.window,
        crate::model::AlignmentKind::ConcatSe => 0,
    };
    cfg.validate(window)?;
    let mut patches = Vec::new();
    for b in dataset {
        patches.extend(patch_partition(b, cfg.patch)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut log = LossLog::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = lr_at(epoch, cfg);
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&ModalityBundle> = chunk.iter().map(|&i| &patches[i]).collect();
            let (g, loss) = batch_loss(&model, &store, &batch, cfg)?;
            g.backward_into(loss.total, &mut store)?;
            adam_step(&mut store, lr, (cfg.beta1, cfg.beta2), cfg.eps)?;
            log.records.push(LossRecord {
                epoch,
                step,
                total: g.scalar(loss.total),
                fea: g.scalar(loss.fea),
                pix: g.scalar(loss.pix),
            });
            step += 1;
        }
    }
    Ok(Trained { model, store, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synth_bundle;

    fn scalar_store(x: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.insert("x", Tensor::new(vec![1], vec![x]).unwrap()).unwrap();
        s.get_mut(id).grad[0] = grad;
        s.mark_grads_ready();
        s
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = scalar_store(1.0, 1.0);
        adam_step(&mut s, 0.1, (0.9, 0.999), 1e-8).unwrap();
        assert!((s.by_name("x").unwrap().value[0] - 0.9).abs() < 1e-6);
        assert_eq!(s.step(), 1);
        assert!(adam_step(&mut s, 0.1, (0.9, 0.999), 1e-8).is_err());
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let mut s = scalar_store(1.0, 0.0);
        adam_step(&mut s, 0.1, (0.9, 0.999), 1e-8).unwrap();
        assert_eq!(s.by_name("x").unwrap().value[0], 1.0);
    }

    #[test]
    fn adam_minimizes_square() {
        let mut s = scalar_store(1.0, 0.0);
        for _ in 0..100 {
            let x = s.by_name("x").unwrap().value[0];
            s.by_name_mut("x").unwrap().grad[0] = 2.0 * x;
            s.mark_grads_ready();
            adam_step(&mut s, 0.1, (0.9, 0.999), 1e-8).unwrap();
        }
        assert!(s.by_name("x").unwrap().value[0].abs() < 1e-2);
    }

    #[test]
    fn schedule_is_linear() {
        let cfg = TrainConfig {
            epochs: 200,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(0, &cfg), 1e-4);
        assert_eq!(lr_at(200, &cfg), 0.0);
        assert!((lr_at(100, &cfg) - 5e-5).abs() < 1e-18);
    }

    #[test]
    fn tiles_are_edge_anchored() {
        assert_eq!(tile_starts(448, 224), vec![0, 224]);
        assert_eq!(tile_starts(300, 224), vec![0, 76]);
        assert_eq!(tile_starts(224, 224), vec![0]);
    }

    #[test]
    fn partition_covers_every_pixel() {
        let b = synth_bundle(3, 40, 24).unwrap();
        let patches = patch_partition(&b, 16).unwrap();
        assert_eq!(patches.len(), 3 * 2);
        assert!(patch_partition(&b, 25).is_err());
        let mut covered = vec![false; 40 * 24];
        for y in tile_starts(24, 16) {
            for x in tile_starts(40, 16) {
                for yy in y..y + 16 {
                    for xx in x..x + 16 {
                        covered[yy * 40 + xx] = true;
                    }
                }
            }
        }
        assert!(covered.iter().all(|&c| c));
        assert_eq!(patches[1].rgb, b.rgb.crop(16, 0, 16, 16).unwrap());
    }

    #[test]
    fn loss_closed_forms() {
        let mut g = Graph::new();
        let t = |v: f64| Tensor::new(vec![1, 2, 2, 2], vec![v; 8]).unwrap();
        let (a, b, c, d) = (g.input(t(1.0)), g.input(t(0.0)), g.input(t(0.5)), g.input(t(0.0)));
        let l = loss_overall(&mut g, a, b, c, d, 1.0, 0.0).unwrap();
        assert_eq!(g.scalar(l.total), 1.0);
        let l = loss_overall(&mut g, a, b, c, d, 0.0, 1.0).unwrap();
        assert_eq!(g.scalar(l.total), 0.25);
        let l = loss_overall(&mut g, a, a, c, c, 1.0, 1.0).unwrap();
        assert_eq!(g.scalar(l.total), 0.0);
    }

    #[test]
    fn rejects_missing_ground_truth() {
        let mut b = synth_bundle(1, 16, 16).unwrap();
        b.ground_truth = None;
        let err = train(&[b], &ModelConfig::toy(), &TrainConfig::default());
        assert!(matches!(err, Err(Error::MissingGroundTruth(_))));
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let b = synth_bundle(1, 16, 16).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            patch: 16,
            ..TrainConfig::default()
        };
        let out = train(&[b], &ModelConfig::toy(), &cfg).unwrap();
        let (_, init) = Model::init(&ModelConfig::toy(), cfg.seed).unwrap();
        for ((_, a), (_, b)) in out.store.iter().zip(init.iter()) {
            assert_eq!(a.value, b.value);
        }
        assert!(out.log.records.is_empty());
    }
}
