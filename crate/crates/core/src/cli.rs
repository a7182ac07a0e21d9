//! Command-line front end.
//!
//! Every setting of a command is a `key=value` entry. Values are resolved
//! from built-in defaults, then the `--config` file, then flags, and the
//! resolved set is written to `manifest.txt` in the output directory.
//! Passing that manifest back through `--config` reproduces the run.

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::ablation::{run_ablation, sweep_train_config, table_rows, AblationResult};
use crate::codec::{compress, CodecMode, CodecStats};
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::eval::{calibrate_alpha, evaluate_model, inject, parse_metrics, EvalOptions, JndMap};
use crate::io::{
    corpus_scene_seed, load_bundle, load_image, save_bundle, save_image, synth_bundle, ImagePlane, Modality,
    ModalityBundle, RGB_FILE,
};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig};
use crate::train::{train, LossLog, TrainConfig};

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
pub const MANIFEST: &str = "manifest.txt";
pub const INDEX: &str = "index.txt";

#[derive(Debug, Parser)]
#[command(
    name = "hmjnd",
    version,
    about = "Multimodal JND prediction, evaluation and JND-guided coding"
)]
pub struct Cli {
    /// key=value file applied before flags; a previous run's manifest works
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for every output of the command
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic scenes in the bundle layout
    Synth(SynthArgs),
    /// Train a network and save a checkpoint and loss log
    Train(TrainArgs),
    /// Predict the redundancy-removed image and threshold map of one bundle
    Predict(PredictArgs),
    /// Noise-injection evaluation of a checkpoint over a dataset
    Evaluate(EvaluateArgs),
    /// Inject threshold-shaped noise at a target MSE
    Inject(InjectArgs),
    /// Code an image with the block-DCT codec
    Compress(CompressArgs),
    /// Train and score every ablation row
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
}

/// Model and training settings shared by `train` and `ablate`.
#[derive(Debug, Args)]
pub struct FitArgs {
    /// Directory of bundles (listed in index.txt, or every subdirectory)
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Base settings: default, toy or sweep
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda_fea: Option<f64>,
    #[arg(long)]
    pub lambda_pix: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    /// Any other model or training key, as key=value
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Bundle directory
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Score against each bundle's ground truth
    #[arg(long)]
    pub gt: bool,
    /// Comma-separated subset of psnr_gt, ssim_gt, ms_ssim, or `all`
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub target_mse: Option<f64>,
}

/// Where a threshold map comes from.
#[derive(Debug, Args)]
pub struct JndArgs {
    /// Image file or bundle directory
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// HMT1 map file, or a checkpoint directory applied to a bundle input
    #[arg(long)]
    pub jnd: Option<PathBuf>,
    /// Constant map value instead of --jnd
    #[arg(long)]
    pub jnd_const: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    #[command(flatten)]
    pub source: JndArgs,
    #[arg(long)]
    pub target_mse: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[command(flatten)]
    pub source: JndArgs,
    /// plain, jpeg_pre or residual
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub quality: Option<u8>,
    /// Stats file name inside the output directory
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Scored on this dataset instead of the training one
    #[arg(long)]
    pub eval_dataset: Option<PathBuf>,
    /// Modality whose plane stands in for disabled ones
    #[arg(long)]
    pub substitute: Option<String>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 on runtime failure, 2 on usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Config(_) => 2,
        _ => 1,
    }
}

/// Settings of one command: the layered key set plus the keys it accepts.
struct Settings {
    kv: KvConfig,
    command: &'static str,
}

const META_KEYS: [&str; 2] = ["command", "version"];

impl Settings {
    fn new(cli: &Cli, command: &'static str, known: &[&str], flags: KvConfig) -> Result<Self> {
        let mut kv = match &cli.config {
            Some(p) => KvConfig::load(p)?,
            None => KvConfig::new(),
        };
        if let Some(c) = kv.get("command") {
            if c != command {
                return Err(Error::Config(format!("config is for command {c:?}, not {command:?}")));
            }
        }
        kv.merge(&flags);
        if let Some(s) = cli.seed {
            kv.set("seed", s);
        }
        let mut allowed: Vec<&str> = known.to_vec();
        allowed.extend(META_KEYS);
        allowed.push("seed");
        kv.check_known(&allowed)?;
        kv.remove("version");
        kv.set("command", command);
        Ok(Settings { kv, command })
    }

    /// Reads `key`, records the resolved value and returns it.
    fn value<T: FromStr + Display>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let mut v = default;
        self.kv.read(key, &mut v)?;
        self.kv.set(key, &v);
        Ok(v)
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.kv
            .get(key)
            .filter(|v| !v.is_empty())
            .map(|v| v.parse().map_err(|e| Error::Config(format!("{key}={v}: {e}"))))
            .transpose()
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        self.optional::<PathBuf>(key)?
            .ok_or_else(|| Error::Usage(format!("{} needs --{}", self.command, key.replace('_', "-"))))
    }

    fn manifest(&self) -> String {
        format!("version={VERSION}\n{}", self.kv.to_text())
    }
}

fn flag<T: Display>(kv: &mut KvConfig, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        kv.set(key, v);
    }
}

fn path_flag(kv: &mut KvConfig, key: &str, v: &Option<PathBuf>) {
    if let Some(p) = v {
        kv.set(key, p.display());
    }
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    let dir = cli
        .out_dir
        .as_deref()
        .ok_or_else(|| Error::Usage("--out-dir is required".into()))?;
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    Ok(dir)
}

fn write_file(path: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, contents).map_err(|e| Error::file(path, e))
}

fn finish(dir: &Path, s: &Settings) -> Result<()> {
    write_file(dir.join(MANIFEST), s.manifest())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Predict(a) => cmd_predict(cli, a),
        Command::Evaluate(a) => cmd_evaluate(cli, a),
        Command::Inject(a) => cmd_inject(cli, a),
        Command::Compress(a) => cmd_compress(cli, a),
        Command::Ablate(a) => cmd_ablate(cli, a),
    }
}

/// Bundle directories of a dataset with their ids: the entries of
/// `index.txt` when present, else every subdirectory holding an RGB image.
pub fn dataset_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let index = root.join(INDEX);
    let names: Vec<String> = if index.exists() {
        fs::read_to_string(&index)
            .map_err(|e| Error::file(&index, e))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect()
    } else {
        let mut v: Vec<String> = fs::read_dir(root)
            .map_err(|e| Error::file(root, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(RGB_FILE).exists())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        v.sort();
        v
    };
    Ok(names.into_iter().map(|n| (n.clone(), root.join(n))).collect())
}

pub fn load_dataset(root: &Path) -> Result<Vec<(String, ModalityBundle)>> {
    dataset_dirs(root)?
        .into_iter()
        .map(|(id, dir)| Ok((id, load_bundle(dir)?)))
        .collect()
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let mut flags = KvConfig::new();
    flag(&mut flags, "n", &a.n);
    flag(&mut flags, "width", &a.width);
    flag(&mut flags, "height", &a.height);
    let mut s = Settings::new(cli, "synth", &["n", "width", "height"], flags)?;
    let n = s.value("n", 8usize)?;
    let width = s.value("width", 32usize)?;
    let height = s.value("height", 32usize)?;
    let seed = s.value("seed", 0u64)?;
    let dir = out_dir(cli)?;
    let mut index = String::new();
    for k in 0..n {
        let name = format!("scene_{k:03}");
        save_bundle(
            &synth_bundle(corpus_scene_seed(seed, k), width, height)?,
            dir.join(&name),
        )?;
        index.push_str(&name);
        index.push('\n');
    }
    write_file(dir.join(INDEX), index)?;
    finish(dir, &s)
}

const FIT_FLAG_KEYS: [&str; 2] = ["dataset", "preset"];

fn fit_flags(a: &FitArgs) -> Result<KvConfig> {
    let mut kv = KvConfig::new();
    path_flag(&mut kv, "dataset", &a.dataset);
    flag(&mut kv, "preset", &a.preset);
    flag(&mut kv, "epochs", &a.epochs);
    flag(&mut kv, "lr", &a.lr);
    flag(&mut kv, "lambda_fea", &a.lambda_fea);
    flag(&mut kv, "lambda_pix", &a.lambda_pix);
    flag(&mut kv, "batch", &a.batch);
    flag(&mut kv, "patch", &a.patch);
    for item in &a.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {item:?}")))?;
        kv.set(k.trim(), v.trim());
    }
    Ok(kv)
}

fn fit_keys(extra: &[&'static str]) -> Vec<&'static str> {
    let mut keys: Vec<&str> = FIT_FLAG_KEYS.to_vec();
    keys.extend(ModelConfig::KEYS);
    keys.extend(TrainConfig::KEYS);
    keys.extend(extra);
    keys
}

/// Resolves preset, model and training settings, recording all of them.
fn fit_configs(s: &mut Settings, default_preset: &str) -> Result<(ModelConfig, TrainConfig)> {
    let preset = s.value("preset", default_preset.to_string())?;
    let (mut model, mut train) = match preset.as_str() {
        "default" => (ModelConfig::default(), TrainConfig::default()),
        "toy" => (ModelConfig::toy(), TrainConfig::toy()),
        "sweep" => (ModelConfig::toy(), sweep_train_config()),
        p => {
            return Err(Error::Config(format!(
                "unknown preset {p:?}; expected default, toy or sweep"
            )))
        }
    };
    model.apply(&s.kv)?;
    train.apply(&s.kv)?;
    model.write(&mut s.kv);
    train.write(&mut s.kv);
    Ok((model, train))
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut s = Settings::new(cli, "train", &fit_keys(&[]), fit_flags(&a.fit)?)?;
    let dataset = s.path("dataset")?;
    let (model_cfg, train_cfg) = fit_configs(&mut s, "default")?;
    let dir = out_dir(cli)?;
    let data: Vec<ModalityBundle> = load_dataset(&dataset)?.into_iter().map(|(_, b)| b).collect();
    let trained = train(&data, &model_cfg, &train_cfg)?;
    save_checkpoint(dir.join("checkpoint"), &model_cfg, &trained.store)?;
    write_file(dir.join("losses.csv"), trained.log.to_csv())?;
    print_epochs(&trained.log);
    finish(dir, &s)
}

fn print_epochs(log: &LossLog) {
    let means = log.epoch_means();
    let every = means.len().div_ceil(10).max(1);
    for (e, l) in means.iter().enumerate() {
        if e % every == 0 || e + 1 == means.len() {
            println!("epoch {e:4}  loss {l:.6e}");
        }
    }
}

fn cmd_predict(cli: &Cli, a: &PredictArgs) -> Result<()> {
    let mut flags = KvConfig::new();
    path_flag(&mut flags, "checkpoint", &a.checkpoint);
    path_flag(&mut flags, "input", &a.input);
    let s = Settings::new(cli, "predict", &["checkpoint", "input"], flags)?;
    let (model, store) = load_checkpoint(s.path("checkpoint")?)?;
    let bundle = load_bundle(s.path("input")?)?;
    let dir = out_dir(cli)?;
    let p = model.predict(&store, &bundle)?;
    save_image(&p.i_rr, dir.join("i_rr.ppm"))?;
    p.i_vt.save(dir.join("i_vt.hmt"))?;
    save_image(&p.i_vt.visualize(), dir.join("i_vt.pgm"))?;
    finish(dir, &s)
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let mut flags = KvConfig::new();
    path_flag(&mut flags, "dataset", &a.dataset);
    path_flag(&mut flags, "checkpoint", &a.checkpoint);
    if a.gt {
        flags.set("gt", true);
    }
    flag(&mut flags, "metric", &a.metric);
    flag(&mut flags, "target_mse", &a.target_mse);
    let keys = ["dataset", "checkpoint", "gt", "metric", "target_mse"];
    let mut s = Settings::new(cli, "evaluate", &keys, flags)?;
    let gt = s.value("gt", false)?;
    let metric = s.value("metric", if gt { "all" } else { "ms_ssim" }.to_string())?;
    let metrics = parse_metrics(&metric)?;
    if !gt {
        if let Some(m) = metrics.iter().find(|m| m.needs_ground_truth()) {
            return Err(Error::Usage(format!("metric {m} needs --gt")));
        }
    }
    let opts = EvalOptions {
        target_mse: s.value("target_mse", 100.0)?,
        seed: s.value("seed", 0u64)?,
        metrics,
    };
    let (model, store) = load_checkpoint(s.path("checkpoint")?)?;
    let data = load_dataset(&s.path("dataset")?)?;
    let dir = out_dir(cli)?;
    let report = evaluate_model(&model, &store, &data, &opts)?;
    write_file(dir.join("report.csv"), report.to_csv())?;
    let table = report.to_table();
    write_file(dir.join("report.txt"), &table)?;
    print!("{table}");
    finish(dir, &s)
}

const JND_KEYS: [&str; 3] = ["input", "jnd", "jnd_const"];

fn jnd_flags(a: &JndArgs) -> KvConfig {
    let mut kv = KvConfig::new();
    path_flag(&mut kv, "input", &a.input);
    path_flag(&mut kv, "jnd", &a.jnd);
    flag(&mut kv, "jnd_const", &a.jnd_const);
    kv
}

/// Loads the input image and its threshold map.
fn image_and_map(s: &Settings) -> Result<(ImagePlane, JndMap)> {
    let input = s.path("input")?;
    let bundle = if input.is_dir() {
        Some(load_bundle(&input)?)
    } else {
        None
    };
    let image = match &bundle {
        Some(b) => b.rgb.clone(),
        None => load_image(&input)?,
    };
    let constant: Option<f64> = s.optional("jnd_const")?;
    let jnd: Option<PathBuf> = s.optional("jnd")?;
    let map = match (constant, jnd) {
        (Some(_), Some(_)) => return Err(Error::Usage("give either --jnd or --jnd-const, not both".into())),
        (Some(v), None) => JndMap::constant(image.width(), image.height(), v)?,
        (None, Some(p)) if p.is_dir() => {
            let b = bundle
                .as_ref()
                .ok_or_else(|| Error::Usage("a checkpoint --jnd needs a bundle directory as --input".into()))?;
            let (model, store) = load_checkpoint(&p)?;
            model.predict(&store, b)?.i_vt
        }
        (None, Some(p)) => JndMap::load(&p)?,
        (None, None) => return Err(Error::Usage("needs --jnd or --jnd-const".into())),
    };
    Ok((image, map))
}

fn cmd_inject(cli: &Cli, a: &InjectArgs) -> Result<()> {
    let mut flags = jnd_flags(&a.source);
    flag(&mut flags, "target_mse", &a.target_mse);
    let mut keys = JND_KEYS.to_vec();
    keys.push("target_mse");
    let mut s = Settings::new(cli, "inject", &keys, flags)?;
    let target = s.value("target_mse", 100.0)?;
    let seed = s.value("seed", 0u64)?;
    let (image, map) = image_and_map(&s)?;
    let dir = out_dir(cli)?;
    let alpha = calibrate_alpha(&map, target)?;
    let inj = inject(&image, &map, alpha, seed)?;
    save_image(&inj.image, dir.join("contaminated.ppm"))?;
    write_file(
        dir.join("inject.csv"),
        format!(
            "alpha,mse_pre_clip,mse_post_clip\n{alpha},{},{}\n",
            inj.mse_pre_clip, inj.mse_post_clip
        ),
    )?;
    println!(
        "alpha {alpha:.6}  mse pre-clip {:.6}  post-clip {:.6}",
        inj.mse_pre_clip, inj.mse_post_clip
    );
    finish(dir, &s)
}

fn cmd_compress(cli: &Cli, a: &CompressArgs) -> Result<()> {
    let mut flags = jnd_flags(&a.source);
    flag(&mut flags, "mode", &a.mode);
    flag(&mut flags, "quality", &a.quality);
    flag(&mut flags, "out", &a.out);
    let mut keys = JND_KEYS.to_vec();
    keys.extend(["mode", "quality", "out"]);
    let mut s = Settings::new(cli, "compress", &keys, flags)?;
    let mode: CodecMode = s.value("mode", "jpeg_pre".to_string())?.parse()?;
    let quality = s.value("quality", 50u8)?;
    let out = s.value("out", "stats.csv".to_string())?;
    let (image, map) = image_and_map(&s)?;
    let dir = out_dir(cli)?;
    let c = compress(&image, &map, mode, quality)?;
    write_file(
        dir.join(&out),
        format!("{}\n{}\n", CodecStats::CSV_HEADER, c.stats.csv_row()),
    )?;
    save_image(&c.reconstruction, dir.join("reconstruction.ppm"))?;
    println!(
        "{mode} q{quality}: {:.4} bpp  psnr {:.3} dB  ms-ssim {:.5}",
        c.stats.bpp, c.stats.psnr, c.stats.ms_ssim
    );
    finish(dir, &s)
}

fn cmd_ablate(cli: &Cli, a: &AblateArgs) -> Result<()> {
    let mut flags = fit_flags(&a.fit)?;
    path_flag(&mut flags, "eval_dataset", &a.eval_dataset);
    flag(&mut flags, "substitute", &a.substitute);
    let mut s = Settings::new(cli, "ablate", &fit_keys(&["eval_dataset", "substitute"]), flags)?;
    let dataset = s.path("dataset")?;
    let eval_dataset = s
        .optional::<PathBuf>("eval_dataset")?
        .unwrap_or_else(|| dataset.clone());
    s.kv.set("eval_dataset", eval_dataset.display());
    let substitute = Modality::parse(&s.value("substitute", "saliency".to_string())?)?;
    let (model_cfg, train_cfg) = fit_configs(&mut s, "sweep")?;
    let train_set: Vec<ModalityBundle> = load_dataset(&dataset)?.into_iter().map(|(_, b)| b).collect();
    let eval_set: Vec<ModalityBundle> = load_dataset(&eval_dataset)?.into_iter().map(|(_, b)| b).collect();
    let dir = out_dir(cli)?;
    // the manifest goes first so a partial table can be traced to its settings
    finish(dir, &s)?;
    let path = dir.join("ablation.csv");
    let mut file = fs::File::create(&path).map_err(|e| Error::file(&path, e))?;
    writeln!(file, "{}", AblationResult::CSV_HEADER).map_err(|e| Error::file(&path, e))?;
    println!("{}", AblationResult::CSV_HEADER);
    run_ablation(
        &train_set,
        &eval_set,
        &table_rows(),
        &model_cfg,
        &train_cfg,
        substitute,
        |r| {
            let line = r.csv_row();
            println!("{line}");
            writeln!(file, "{line}")
                .and_then(|_| file.flush())
                .map_err(|e| Error::file(&path, e))
        },
    )?;
    Ok(())
}
