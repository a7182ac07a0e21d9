//! The complete forecasting network and its checkpoints.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::eval::JndMap;
use crate::hmfa::{self, EncoderCall, HmfaParams};
use crate::hmpf::{self, HmpfParams};
use crate::io::{ImagePlane, ModalityBundle};
use crate::nn::{Conv, ConvStack, Init, SeGate};
use crate::tensor::{hmt, Graph, ParamStore, Tensor, Var};

/// How the prior modalities are fused.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionKind {
    /// Summation/subtraction gates with segmentation modulation.
    Hmpf,
    /// Ablation baseline: concatenated priors → three 3×3 convs → 1×1 conv.
    Concat,
}

/// How RGB features are aligned with the fused priors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignmentKind {
    /// Stacked window / shifted-window cross-attention blocks.
    Hmfa,
    /// Ablation baseline: concatenation → SE channel attention → 1×1 conv.
    ConcatSe,
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionKind::Hmpf => "hmpf",
            FusionKind::Concat => "concat",
        })
    }
}

impl FromStr for FusionKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hmpf" => Ok(FusionKind::Hmpf),
            "concat" => Ok(FusionKind::Concat),
            _ => Err(format!("expected hmpf or concat, got {s:?}")),
        }
    }
}

impl fmt::Display for AlignmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlignmentKind::Hmfa => "hmfa",
            AlignmentKind::ConcatSe => "concat_se",
        })
    }
}

impl FromStr for AlignmentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hmfa" => Ok(AlignmentKind::Hmfa),
            "concat_se" => Ok(AlignmentKind::ConcatSe),
            _ => Err(format!("expected hmfa or concat_se, got {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub se_reduction: usize,
    pub window: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_ratio: usize,
    pub init_std: f64,
    pub init_scheme: InitScheme,
    pub fusion: FusionKind,
    pub alignment: AlignmentKind,
}

/// Weight initialization of the whole network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// Every weight drawn with standard deviation `init_std`.
    Normal,
    /// Convolutions scaled by fan-in; `init_std` is ignored.
    FanIn,
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitScheme::Normal => "normal",
            InitScheme::FanIn => "fan_in",
        })
    }
}

impl FromStr for InitScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "normal" => Ok(InitScheme::Normal),
            "fan_in" => Ok(InitScheme::FanIn),
            _ => Err(format!("expected normal or fan_in, got {s:?}")),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 32,
            se_reduction: 4,
            window: 8,
            heads: 2,
            blocks: 3,
            mlp_ratio: 2,
            init_std: 0.02,
            init_scheme: InitScheme::Normal,
            fusion: FusionKind::Hmpf,
            alignment: AlignmentKind::Hmfa,
        }
    }
}

impl ModelConfig {
    pub const KEYS: [&'static str; 10] = [
        "channels",
        "se_reduction",
        "window",
        "heads",
        "blocks",
        "mlp_ratio",
        "init_std",
        "init_scheme",
        "fusion",
        "alignment",
    ];

    /// Small configuration for tests and examples. Fan-in scaling lets the
    /// narrow network train within a few hundred steps.
    pub fn toy() -> Self {
        ModelConfig {
            channels: 8,
            se_reduction: 2,
            window: 4,
            heads: 2,
            blocks: 1,
            init_scheme: InitScheme::FanIn,
            ..Self::default()
        }
    }

    pub fn init(&self) -> Init {
        match self.init_scheme {
            InitScheme::Normal => Init::Normal(self.init_std),
            InitScheme::FanIn => Init::FanIn,
        }
    }

    pub fn apply(&mut self, kv: &KvConfig) -> Result<()> {
        kv.read("channels", &mut self.channels)?;
        kv.read("se_reduction", &mut self.se_reduction)?;
        kv.read("window", &mut self.window)?;
        kv.read("heads", &mut self.heads)?;
        kv.read("blocks", &mut self.blocks)?;
        kv.read("mlp_ratio", &mut self.mlp_ratio)?;
        kv.read("init_std", &mut self.init_std)?;
        kv.read("init_scheme", &mut self.init_scheme)?;
        kv.read("fusion", &mut self.fusion)?;
        kv.read("alignment", &mut self.alignment)?;
        Ok(())
    }

    pub fn write(&self, kv: &mut KvConfig) {
        kv.set("channels", self.channels);
        kv.set("se_reduction", self.se_reduction);
        kv.set("window", self.window);
        kv.set("heads", self.heads);
        kv.set("blocks", self.blocks);
        kv.set("mlp_ratio", self.mlp_ratio);
        kv.set("init_std", self.init_std);
        kv.set("init_scheme", self.init_scheme);
        kv.set("fusion", self.fusion);
        kv.set("alignment", self.alignment);
    }
}

#[derive(Clone, Debug)]
pub enum PriorBranch {
    Hmpf(HmpfParams),
    Concat { convs: ConvStack, reduce: Conv },
}

#[derive(Clone, Debug)]
pub enum AlignBranch {
    Hmfa(HmfaParams),
    ConcatSe { gate: SeGate, proj: Conv },
}

/// Parameter layout of the whole network. Values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub rgb_embed: ConvStack,
    pub prior: PriorBranch,
    pub align: AlignBranch,
    pub head: Conv,
}

/// A batch of stacked planar inputs.
#[derive(Clone, Debug)]
pub struct ModelInputs {
    pub rgb: Tensor,
    pub saliency: Tensor,
    pub depth: Tensor,
    pub segmentation: Tensor,
}

fn stack(planes: &[&ImagePlane]) -> Result<Tensor> {
    let first = planes.first().ok_or_else(|| Error::shape("empty batch"))?;
    let (w, h, c) = (first.width(), first.height(), first.channels());
    let mut data = Vec::with_capacity(planes.len() * w * h * c);
    for p in planes {
        if !p.same_dims(first) {
            return Err(Error::shape("batch entries differ in size"));
        }
        data.extend_from_slice(p.to_tensor().data());
    }
    Tensor::new(vec![planes.len(), c, h, w], data)
}

impl ModelInputs {
    pub fn from_bundles(bundles: &[&ModalityBundle]) -> Result<Self> {
        Ok(ModelInputs {
            rgb: stack(&bundles.iter().map(|b| &b.rgb).collect::<Vec<_>>())?,
            saliency: stack(&bundles.iter().map(|b| &b.saliency).collect::<Vec<_>>())?,
            depth: stack(&bundles.iter().map(|b| &b.depth).collect::<Vec<_>>())?,
            segmentation: stack(&bundles.iter().map(|b| &b.segmentation).collect::<Vec<_>>())?,
        })
    }
}

/// Graph nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub i_ori: Var,
    pub f_r: Var,
    pub f_pr: Var,
    pub f_an: Var,
    pub i_rr: Var,
}

/// Inference output for one bundle.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub i_rr: ImagePlane,
    pub i_vt: JndMap,
    pub f_r: Tensor,
    pub f_pr: Tensor,
}

impl Model {
    /// Builds the network with truncated-normal weights drawn from `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<(Model, ParamStore)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = cfg.channels;
        let std = cfg.init();
        if c == 0 {
            return Err(Error::Param("channels must be positive".into()));
        }
        let rgb_embed = ConvStack::new(&mut store, &mut rng, "hmfa.embed_rgb", &[3, c, c, c], std)?;
        let prior = match cfg.fusion {
            FusionKind::Hmpf => PriorBranch::Hmpf(HmpfParams::new(&mut store, &mut rng, c, cfg.se_reduction, std)?),
            FusionKind::Concat => PriorBranch::Concat {
                convs: ConvStack::new(&mut store, &mut rng, "concat_fusion", &[3, c, c, c], std)?,
                reduce: Conv::new(&mut store, &mut rng, "concat_fusion.reduce", c, c, 1, std)?,
            },
        };
        let align = match cfg.alignment {
            AlignmentKind::Hmfa => AlignBranch::Hmfa(HmfaParams::new(
                &mut store,
                &mut rng,
                c,
                cfg.blocks,
                cfg.window,
                cfg.heads,
                cfg.mlp_ratio,
                std,
            )?),
            AlignmentKind::ConcatSe => AlignBranch::ConcatSe {
                gate: SeGate::new(&mut store, &mut rng, "concat_align.gate", 2 * c, cfg.se_reduction, std)?,
                proj: Conv::new(&mut store, &mut rng, "concat_align.proj", 2 * c, c, 1, std)?,
            },
        };
        // under fan-in scaling the head starts at zero so the untrained
        // network reproduces its input instead of saturating the clamp
        let head_init = match cfg.init_scheme {
            InitScheme::Normal => std,
            InitScheme::FanIn => Init::Normal(0.0),
        };
        let head = Conv::new(&mut store, &mut rng, "hmfa.head", c, 3, 1, head_init)?;
        Ok((
            Model {
                cfg: cfg.clone(),
                rgb_embed,
                prior,
                align,
                head,
            },
            store,
        ))
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        inputs: &ModelInputs,
        trace: Option<&mut Vec<EncoderCall>>,
    ) -> Result<ForwardVars> {
        let i_ori = g.input(inputs.rgb.clone());
        let sa = g.input(inputs.saliency.clone());
        let de = g.input(inputs.depth.clone());
        let se = g.input(inputs.segmentation.clone());
        let f_pr = match &self.prior {
            PriorBranch::Hmpf(p) => hmpf::hmpf_forward(g, store, sa, de, se, p)?,
            PriorBranch::Concat { convs, reduce } => {
                let cat = g.concat_channels(&[sa, de, se])?;
                let f = convs.forward(g, store, cat)?;
                reduce.forward(g, store, f)?
            }
        };
        let f_r = self.rgb_embed.forward(g, store, i_ori)?;
        let f_an = match &self.align {
            AlignBranch::Hmfa(p) => hmfa::hmfa_forward(g, store, f_pr, f_r, p, trace)?,
            AlignBranch::ConcatSe { gate, proj } => {
                let cat = g.concat_channels(&[f_pr, f_r])?;
                let w = gate.weights(g, store, cat)?;
                let gated = g.mul(cat, w)?;
                proj.forward(g, store, gated)?
            }
        };
        let i_rr = hmfa::reshape_head(g, store, f_an, i_ori, &self.head)?;
        Ok(ForwardVars {
            i_ori,
            f_r,
            f_pr,
            f_an,
            i_rr,
        })
    }

    /// Redundancy-removed image, visibility thresholds and intermediate
    /// features for one bundle.
    pub fn predict(&self, store: &ParamStore, bundle: &ModalityBundle) -> Result<Prediction> {
        let mut g = Graph::new();
        let inputs = ModelInputs::from_bundles(&[bundle])?;
        let vars = self.forward(&mut g, store, &inputs, None)?;
        let (w, h) = (bundle.width(), bundle.height());
        let i_rr = ImagePlane::from_planar(w, h, 3, g.value(vars.i_rr))?;
        let i_vt = JndMap::from_difference(&bundle.rgb, &i_rr)?;
        Ok(Prediction {
            i_rr,
            i_vt,
            f_r: g.tensor(vars.f_r),
            f_pr: g.tensor(vars.f_pr),
        })
    }
}

pub const CHECKPOINT_MANIFEST: &str = "manifest.txt";
pub const CHECKPOINT_TENSORS: &str = "tensors.hmt";

/// Writes `manifest.txt` (model config plus one `param.NNNN=path dims` line
/// per parameter) and `tensors.hmt` (the parameters as consecutive HMT1
/// records in manifest order).
pub fn save_checkpoint(dir: impl AsRef<Path>, cfg: &ModelConfig, store: &ParamStore) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let mut kv = KvConfig::new();
    cfg.write(&mut kv);
    let mut bytes = Vec::new();
    for (i, (name, p)) in store.iter().enumerate() {
        let dims: Vec<String> = p.shape.iter().map(|d| d.to_string()).collect();
        kv.set(&format!("param.{i:04}"), format!("{name} {}", dims.join("x")));
        hmt::encode(&Tensor::new(p.shape.clone(), p.value.clone())?, &mut bytes);
    }
    let manifest = dir.join(CHECKPOINT_MANIFEST);
    fs::write(&manifest, kv.to_text()).map_err(|e| Error::file(&manifest, e))?;
    let tensors = dir.join(CHECKPOINT_TENSORS);
    fs::write(&tensors, bytes).map_err(|e| Error::file(&tensors, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(Model, ParamStore)> {
    let dir = dir.as_ref();
    let kv = KvConfig::load(dir.join(CHECKPOINT_MANIFEST))?;
    let mut cfg = ModelConfig::default();
    let mut model_kv = KvConfig::new();
    let mut names = Vec::new();
    for (k, v) in kv.iter() {
        if k.starts_with("param.") {
            let name = v.split_whitespace().next().unwrap_or_default();
            names.push(name.to_string());
        } else {
            model_kv.set(k, v);
        }
    }
    model_kv.check_known(&ModelConfig::KEYS)?;
    cfg.apply(&model_kv)?;
    let tensors = dir.join(CHECKPOINT_TENSORS);
    let bytes = fs::read(&tensors).map_err(|e| Error::file(&tensors, e))?;
    let mut loaded = ParamStore::new();
    let mut pos = 0;
    for name in &names {
        loaded.insert(name, hmt::decode_at(&bytes, &mut pos)?)?;
    }
    if pos != bytes.len() {
        return Err(Error::Parse {
            offset: pos,
            msg: "checkpoint has more tensors than the manifest lists".into(),
        });
    }
    let (model, mut store) = Model::init(&cfg, 0)?;
    store.load_values_from(&loaded)?;
    Ok((model, store))
}
