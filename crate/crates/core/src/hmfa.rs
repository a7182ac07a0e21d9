//! Feature alignment between the RGB stream and the fused priors.
//!
//! Alignment is a chain of blocks, each a window encoder followed by a
//! shifted-window encoder. Queries come from the RGB stream, keys and values
//! from a freshly convolved view of the original prior features.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Conv, ConvStack, Dense, Init, Norm};
use crate::tensor::{Graph, ParamStore, Var, WindowGeometry};

/// Linear projections of a cross-attention layer.
#[derive(Clone, Debug)]
pub struct AttentionProj {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
}

impl AttentionProj {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, c: usize, init: Init) -> Result<Self> {
        Ok(AttentionProj {
            query: Dense::new(store, rng, &format!("{name}.q"), c, c, init)?,
            key: Dense::new(store, rng, &format!("{name}.k"), c, c, init)?,
            value: Dense::new(store, rng, &format!("{name}.v"), c, c, init)?,
            output: Dense::new(store, rng, &format!("{name}.o"), c, c, init)?,
        })
    }
}

/// Which encoder of a block produced a call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    Window,
    ShiftedWindow,
}

/// One encoder invocation, recorded when tracing is requested.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderCall {
    /// 1-based block index.
    pub block: usize,
    pub kind: EncoderKind,
    pub shift: usize,
    /// Index `j` of the conv block applied to `F_pr` for K/V; 0 is `F_pr` itself.
    pub kv_source: usize,
}

/// LayerNorm → cross-attention → residual → LayerNorm → MLP → residual.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub norm_q: Norm,
    pub norm_kv: Norm,
    pub attn: AttentionProj,
    pub norm_mlp: Norm,
    pub fc1: Conv,
    pub fc2: Conv,
    pub shift: usize,
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        c: usize,
        mlp_ratio: usize,
        shift: usize,
        init: Init,
    ) -> Result<Self> {
        let hidden = c * mlp_ratio.max(1);
        Ok(Encoder {
            norm_q: Norm::new(store, &format!("{name}.norm_q"), c)?,
            norm_kv: Norm::new(store, &format!("{name}.norm_kv"), c)?,
            attn: AttentionProj::new(store, rng, &format!("{name}.attn"), c, init)?,
            norm_mlp: Norm::new(store, &format!("{name}.norm_mlp"), c)?,
            fc1: Conv::new(store, rng, &format!("{name}.mlp.fc1"), c, hidden, 1, init)?,
            fc2: Conv::new(store, rng, &format!("{name}.mlp.fc2"), hidden, c, 1, init)?,
            shift,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f_q: Var,
        f_kv: Var,
        heads: usize,
        window: usize,
    ) -> Result<Var> {
        let q = self.norm_q.forward(g, store, f_q)?;
        let kv = self.norm_kv.forward(g, store, f_kv)?;
        let a = windowed_cross_attention(g, store, q, kv, kv, heads, window, self.shift, &self.attn)?;
        let x = g.add(f_q, a)?;
        let h = self.norm_mlp.forward(g, store, x)?;
        let h = self.fc1.forward(g, store, h)?;
        let h = g.relu(h);
        let h = self.fc2.forward(g, store, h)?;
        g.add(x, h)
    }
}

fn project(g: &mut Graph, store: &ParamStore, tokens: Var, dense: &Dense) -> Result<Var> {
    let shape = g.shape(tokens).to_vec();
    let flat = g.reshape(tokens, &[shape[0] * shape[1], shape[2]])?;
    let out = dense.forward(g, store, flat)?;
    g.reshape(out, &shape)
}

/// Per-window multi-head attention of projected `q` against projected `k`,
/// aggregating projected `v`. Maps are `(N, C, H, W)`; the output has `q`'s
/// shape. With `shift > 0` windows are taken after a cyclic roll and pairs
/// that straddle the wrap-around are masked out.
#[allow(clippy::too_many_arguments)]
pub fn windowed_cross_attention(
    g: &mut Graph,
    store: &ParamStore,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    window: usize,
    shift: usize,
    proj: &AttentionProj,
) -> Result<Var> {
    let shape = g.shape(q).to_vec();
    let [_, c, h, w] = shape[..] else {
        return Err(Error::shape(format!("attention maps must be rank 4, got {shape:?}")));
    };
    if g.shape(k) != shape.as_slice() || g.shape(v) != shape.as_slice() {
        return Err(Error::shape(format!(
            "query {:?}, key {:?} and value {:?} maps must align",
            shape,
            g.shape(k),
            g.shape(v)
        )));
    }
    if heads == 0 || c % heads != 0 {
        return Err(Error::Param(format!("{c} channels not divisible by {heads} heads")));
    }
    let geom = Rc::new(WindowGeometry::new(h, w, window, shift)?);
    let tq = g.window_partition_with(q, geom.clone())?;
    let tk = g.window_partition_with(k, geom.clone())?;
    let tv = if v == k {
        tk
    } else {
        g.window_partition_with(v, geom.clone())?
    };
    let pq = project(g, store, tq, &proj.query)?;
    let pk = project(g, store, tk, &proj.key)?;
    let pv = project(g, store, tv, &proj.value)?;
    let mask = geom.shift_mask();
    let attended = g.attention(pq, pk, pv, heads, mask.as_deref())?;
    let out = project(g, store, attended, &proj.output)?;
    g.window_merge_with(out, geom)
}

/// Window encoder plus shifted-window encoder.
#[derive(Clone, Debug)]
pub struct StaBlockParams {
    pub wme: Encoder,
    pub swme: Encoder,
}

#[derive(Clone, Debug)]
pub struct HmfaParams {
    /// Conv blocks `F_conv^1 … F_conv^(2n-1)` applied to `F_pr`.
    pub conv_blocks: Vec<ConvStack>,
    pub blocks: Vec<StaBlockParams>,
    pub window: usize,
    pub heads: usize,
}

impl HmfaParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        channels: usize,
        blocks: usize,
        window: usize,
        heads: usize,
        mlp_ratio: usize,
        init: Init,
    ) -> Result<Self> {
        if blocks == 0 {
            return Err(Error::Param("at least one alignment block is required".into()));
        }
        if window < 2 || !window.is_multiple_of(2) {
            return Err(Error::Param(format!("window must be even and >= 2, got {window}")));
        }
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::Param(format!(
                "{channels} channels not divisible by {heads} heads"
            )));
        }
        let c = channels;
        let conv_blocks = (1..2 * blocks)
            .map(|j| ConvStack::new(store, rng, &format!("hmfa.kv_conv{j}"), &[c, c, c], init))
            .collect::<Result<_>>()?;
        let blocks = (1..=blocks)
            .map(|i| {
                Ok(StaBlockParams {
                    wme: Encoder::new(store, rng, &format!("hmfa.sta{i}.wme"), c, mlp_ratio, 0, init)?,
                    swme: Encoder::new(store, rng, &format!("hmfa.sta{i}.swme"), c, mlp_ratio, window / 2, init)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(HmfaParams {
            conv_blocks,
            blocks,
            window,
            heads,
        })
    }

    fn kv_view(&self, g: &mut Graph, store: &ParamStore, f_pr: Var, j: usize) -> Result<Var> {
        if j == 0 {
            return Ok(f_pr);
        }
        self.conv_blocks[j - 1].forward(g, store, f_pr)
    }
}

/// Block `i` (1-based): `F_m = wmE(f_q, F_conv^(2i-2)(F_pr))` with
/// `F_conv^0 = id`, then `swmE(F_m, F_conv^(2i-1)(F_pr))`.
pub fn sta_block(
    g: &mut Graph,
    store: &ParamStore,
    f_q: Var,
    f_pr: Var,
    i: usize,
    params: &HmfaParams,
    mut trace: Option<&mut Vec<EncoderCall>>,
) -> Result<Var> {
    if i == 0 || i > params.blocks.len() {
        return Err(Error::Param(format!(
            "block index {i} outside 1..={}",
            params.blocks.len()
        )));
    }
    if g.shape(f_q) != g.shape(f_pr) {
        return Err(Error::shape(format!(
            "query stream {:?} and prior stream {:?} differ",
            g.shape(f_q),
            g.shape(f_pr)
        )));
    }
    let block = &params.blocks[i - 1];
    let mut run = |g: &mut Graph, enc: &Encoder, kind, q: Var, j: usize| -> Result<Var> {
        if let Some(t) = trace.as_deref_mut() {
            t.push(EncoderCall {
                block: i,
                kind,
                shift: enc.shift,
                kv_source: j,
            });
        }
        let kv = params.kv_view(g, store, f_pr, j)?;
        enc.forward(g, store, q, kv, params.heads, params.window)
    };
    let f_m = run(g, &block.wme, EncoderKind::Window, f_q, 2 * i - 2)?;
    run(g, &block.swme, EncoderKind::ShiftedWindow, f_m, 2 * i - 1)
}

/// Chains all alignment blocks starting from the RGB features.
pub fn hmfa_forward(
    g: &mut Graph,
    store: &ParamStore,
    f_pr: Var,
    f_r: Var,
    params: &HmfaParams,
    mut trace: Option<&mut Vec<EncoderCall>>,
) -> Result<Var> {
    let mut x = f_r;
    for i in 1..=params.blocks.len() {
        x = sta_block(g, store, x, f_pr, i, params, trace.as_deref_mut())?;
    }
    Ok(x)
}

/// 1×1 conv to a 3-channel residual, added to the input image and clamped
/// to `[0, 1]`.
pub fn reshape_head(g: &mut Graph, store: &ParamStore, f_an: Var, i_ori: Var, head: &Conv) -> Result<Var> {
    let residual = head.forward(g, store, f_an)?;
    let out = g.add(residual, i_ori)?;
    Ok(g.clamp(out, 0.0, 1.0))
}
