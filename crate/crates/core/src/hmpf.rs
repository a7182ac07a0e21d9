//! Prior fusion of the saliency, depth and segmentation modalities.
//!
//! Saliency and depth features are combined twice: their sum captures where
//! the two priors agree, their difference where they disagree. Each path is
//! re-weighted by its own squeeze-and-excitation gate, the two are added,
//! and the result is modulated by a scale/shift pair predicted from the
//! segmentation features.

use rand::Rng;

use crate::error::{Error, Result};
use crate::io::ImagePlane;
use crate::nn::{ConvStack, Init, SeGate};
use crate::tensor::{Graph, ParamStore, Var};

#[derive(Clone, Debug)]
pub struct HmpfParams {
    pub embed_sa: ConvStack,
    pub embed_de: ConvStack,
    pub embed_se: ConvStack,
    pub gate_sum: SeGate,
    pub gate_sub: SeGate,
    /// Multiplicative branch of the segmentation modulation.
    pub mod_gamma: ConvStack,
    /// Additive branch of the segmentation modulation.
    pub mod_beta: ConvStack,
    pub channels: usize,
    pub reduction: usize,
}

impl HmpfParams {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        channels: usize,
        reduction: usize,
        init: Init,
    ) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Param(format!(
                "SE reduction {reduction} must divide {channels} channels"
            )));
        }
        let c = channels;
        Ok(HmpfParams {
            embed_sa: ConvStack::new(store, rng, "hmpf.embed_sa", &[1, c, c, c], init)?,
            embed_de: ConvStack::new(store, rng, "hmpf.embed_de", &[1, c, c, c], init)?,
            embed_se: ConvStack::new(store, rng, "hmpf.embed_se", &[1, c, c, c], init)?,
            gate_sum: SeGate::new(store, rng, "hmpf.gate_sum", c, reduction, init)?,
            gate_sub: SeGate::new(store, rng, "hmpf.gate_sub", c, reduction, init)?,
            mod_gamma: ConvStack::new(store, rng, "hmpf.mod_gamma", &[c, c, c], init)?,
            mod_beta: ConvStack::new(store, rng, "hmpf.mod_beta", &[c, c, c], init)?,
            channels,
            reduction,
        })
    }
}

/// Three-layer 3×3 embedding of a prior plane `(N, 1, H, W)` into `(N, C, H, W)`.
pub fn embed_modality(g: &mut Graph, store: &ParamStore, plane: Var, embedder: &ConvStack) -> Result<Var> {
    embedder.forward(g, store, plane)
}

/// Convenience wrapper embedding a single image plane.
pub fn embed_plane(g: &mut Graph, store: &ParamStore, plane: &ImagePlane, embedder: &ConvStack) -> Result<Var> {
    let x = g.input(plane.to_tensor());
    embed_modality(g, store, x, embedder)
}

/// `f ⊗ g(f) ⊕ f`: every channel scaled by `1 + g_c`.
pub fn se_gate(g: &mut Graph, store: &ParamStore, f: Var, gate: &SeGate) -> Result<Var> {
    let weights = gate.weights(g, store, f)?;
    let scaled = g.mul(f, weights)?;
    g.add(scaled, f)
}

/// Summation-enhancement plus subtractive-offset fusion.
pub fn fuse_saliency_depth(
    g: &mut Graph,
    store: &ParamStore,
    f_sa: Var,
    f_de: Var,
    params: &HmpfParams,
) -> Result<Var> {
    if g.shape(f_sa) != g.shape(f_de) {
        return Err(Error::shape(format!(
            "saliency features {:?} vs depth features {:?}",
            g.shape(f_sa),
            g.shape(f_de)
        )));
    }
    let f_sum = g.add(f_sa, f_de)?;
    let f_sub = g.sub(f_sa, f_de)?;
    let f_e = se_gate(g, store, f_sum, &params.gate_sum)?;
    let f_o = se_gate(g, store, f_sub, &params.gate_sub)?;
    g.add(f_e, f_o)
}

/// `f_fuse ⊗ γ(f_se) ⊕ β(f_se)` with independent two-layer conv branches.
pub fn modulate_with_segmentation(
    g: &mut Graph,
    store: &ParamStore,
    f_fuse: Var,
    f_se: Var,
    params: &HmpfParams,
) -> Result<Var> {
    if g.shape(f_fuse) != g.shape(f_se) {
        return Err(Error::shape(format!(
            "fused features {:?} vs segmentation features {:?}",
            g.shape(f_fuse),
            g.shape(f_se)
        )));
    }
    let gamma = params.mod_gamma.forward(g, store, f_se)?;
    let beta = params.mod_beta.forward(g, store, f_se)?;
    let scaled = g.mul(f_fuse, gamma)?;
    g.add(scaled, beta)
}

/// Prior fused features `F_pr` from `(N, 1, H, W)` saliency, depth and
/// segmentation planes.
pub fn hmpf_forward(
    g: &mut Graph,
    store: &ParamStore,
    saliency: Var,
    depth: Var,
    segmentation: Var,
    params: &HmpfParams,
) -> Result<Var> {
    let f_sa = embed_modality(g, store, saliency, &params.embed_sa)?;
    let f_de = embed_modality(g, store, depth, &params.embed_de)?;
    let f_se = embed_modality(g, store, segmentation, &params.embed_se)?;
    let f_fuse = fuse_saliency_depth(g, store, f_sa, f_de, params)?;
    modulate_with_segmentation(g, store, f_fuse, f_se, params)
}
