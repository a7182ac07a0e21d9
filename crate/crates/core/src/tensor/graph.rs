//! Tape-style reverse-mode differentiation over dense `f64` arrays.
//!
//! Nodes are appended in evaluation order, so every op only references
//! earlier nodes and the graph is acyclic by construction. Backward walks
//! the node list once in reverse.

use std::collections::HashMap;
use std::rc::Rc;

use super::kernels::{col2im_add, gemm, im2col, ConvGeom, Mat};
use super::params::{ParamId, ParamStore};
use super::window::WindowGeometry;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    /// Softmax over the last axis.
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    GlobalAvgPool(Var),
    Act(Var, Activation),
    Binary {
        a: Var,
        b: Var,
        kind: Elementwise,
        /// Number of `a` elements sharing one `b` element.
        inner: usize,
    },
    Scale(Var, f64),
    Abs(Var),
    Square(Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Sum(Var),
    Mean(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        len: usize,
        inner: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Reshape(Var),
    Partition {
        x: Var,
        geom: Rc<WindowGeometry>,
    },
    Merge {
        x: Var,
        geom: Rc<WindowGeometry>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    Concat(Vec<Var>),
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    param: Option<ParamId>,
}

/// A single computation graph. Build one per forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        let (shape, data) = t.into_parts();
        self.push(shape, data, Op::Leaf)
    }

    /// Leaf holding a copy of a stored parameter. Repeated calls with the
    /// same id return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.shape.clone(), p.value.clone(), Op::Leaf);
        self.nodes[v.0].param = Some(id);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn rank4(&self, v: Var, what: &str) -> Result<[usize; 4]> {
        match self.shape(v) {
            &[n, c, h, w] => Ok([n, c, h, w]),
            s => Err(Error::shape(format!("{what}: expected rank 4, got {s:?}"))),
        }
    }

    // ---------------------------------------------------------------- ops

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, ci, h, w] = self.rank4(input, "conv2d input")?;
        let [co, wci, kh, kw] = self.rank4(weight, "conv2d weight")?;
        if wci != ci {
            return Err(Error::shape(format!(
                "conv2d: input has {ci} channels, weight expects {wci}"
            )));
        }
        if kh != kw {
            return Err(Error::shape("conv2d: non-square kernel"));
        }
        if stride == 0 {
            return Err(Error::Param("conv2d: stride must be >= 1".into()));
        }
        if self.shape(bias) != [co] {
            return Err(Error::shape(format!(
                "conv2d: bias shape {:?}, expected [{co}]",
                self.shape(bias)
            )));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape("conv2d: kernel larger than padded input"));
        }
        let geom = ConvGeom {
            channels: ci,
            height: h,
            width: w,
            kernel: kh,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
        };
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let mut out = vec![0.0; n * co * cols];
        let mut col = if geom.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; rows * cols]
        };
        let x = &self.nodes[input.0].value;
        let wt = &self.nodes[weight.0].value;
        let b = &self.nodes[bias.0].value;
        for img in 0..n {
            let src = &x[img * ci * h * w..(img + 1) * ci * h * w];
            let dst_off = img * co * cols;
            for (c, &bc) in b.iter().enumerate() {
                out[dst_off + c * cols..dst_off + (c + 1) * cols].fill(bc);
            }
            let colbuf: &[f64] = if geom.is_pointwise() {
                src
            } else {
                im2col(src, &geom, &mut col);
                &col
            };
            gemm(
                co,
                rows,
                cols,
                wt,
                Mat::rows(0, rows),
                colbuf,
                Mat::rows(0, cols),
                1.0,
                &mut out,
                Mat::rows(dst_off, cols),
            );
        }
        Ok(self.push(
            vec![n, co, geom.out_h, geom.out_w],
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    /// Affine map `x · Wᵀ + b` for `x: (batch, in)`, `W: (out, in)`.
    pub fn fully_connected(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (batch, fin) = match self.shape(input) {
            &[b, f] => (b, f),
            s => return Err(Error::shape(format!("fully_connected input rank 2, got {s:?}"))),
        };
        let (fout, win) = match self.shape(weight) {
            &[o, i] => (o, i),
            s => return Err(Error::shape(format!("fully_connected weight rank 2, got {s:?}"))),
        };
        if win != fin {
            return Err(Error::shape(format!(
                "fully_connected: input has {fin} features, weight expects {win}"
            )));
        }
        if self.shape(bias) != [fout] {
            return Err(Error::shape("fully_connected: bias shape mismatch"));
        }
        let b = &self.nodes[bias.0].value;
        let mut out = Vec::with_capacity(batch * fout);
        for _ in 0..batch {
            out.extend_from_slice(b);
        }
        gemm(
            batch,
            fin,
            fout,
            &self.nodes[input.0].value,
            Mat::rows(0, fin),
            &self.nodes[weight.0].value,
            Mat::rows_t(0, fin),
            1.0,
            &mut out,
            Mat::rows(0, fout),
        );
        Ok(self.push(vec![batch, fout], out, Op::Linear { input, weight, bias }))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.rank4(input, "global_avg_pool")?;
        if h * w == 0 {
            return Err(Error::shape("global_avg_pool: empty spatial extent"));
        }
        let hw = h * w;
        let out = self.nodes[input.0]
            .value
            .chunks(hw)
            .map(|ch| ch.iter().sum::<f64>() / hw as f64)
            .collect();
        Ok(self.push(vec![n, c], out, Op::GlobalAvgPool(input)))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let shape = self.shape(x).to_vec();
        let xs = &self.nodes[x.0].value;
        let out = match kind {
            Activation::Relu => xs.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Sigmoid => xs.iter().map(|&v| sigmoid(v)).collect(),
            Activation::Softmax => {
                let last = *shape.last().unwrap_or(&1);
                let mut out = xs.clone();
                if last > 0 {
                    out.chunks_mut(last).for_each(softmax_in_place);
                }
                out
            }
        };
        self.push(shape, out, Op::Act(x, kind))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Softmax)
    }

    /// Pointwise binary op. `b` may either match `a` exactly or be a prefix
    /// of `a`'s shape (trailing ones allowed), in which case it broadcasts
    /// over the remaining axes, e.g. a `(N, C)` gate over `(N, C, H, W)`.
    pub fn elementwise(&mut self, a: Var, b: Var, kind: Elementwise) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b);
        let mut trimmed = sb.len();
        while trimmed > 0 && sb[trimmed - 1] == 1 {
            trimmed -= 1;
        }
        let compatible = sa == sb || (trimmed <= sa.len() && sa[..trimmed] == sb[..trimmed]);
        if !compatible {
            return Err(Error::shape(format!(
                "elementwise {kind:?}: cannot broadcast {sb:?} onto {sa:?}"
            )));
        }
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let inner = if bv.is_empty() { 1 } else { av.len() / bv.len() };
        let out = av
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bv[i / inner];
                match kind {
                    Elementwise::Add => x + y,
                    Elementwise::Sub => x - y,
                    Elementwise::Mul => x * y,
                }
            })
            .collect();
        Ok(self.push(sa, out, Op::Binary { a, b, kind, inner }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Mul)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.nodes[x.0].value.iter().map(|v| v * factor).collect();
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, factor))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.iter().map(|v| v.abs()).collect();
        self.push(self.shape(x).to_vec(), out, Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.iter().map(|v| v * v).collect();
        self.push(self.shape(x).to_vec(), out, Op::Square(x))
    }

    /// Clamp with pass-through gradient inside `[lo, hi]` and zero outside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.nodes[x.0].value.iter().map(|v| v.clamp(lo, hi)).collect();
        self.push(self.shape(x).to_vec(), out, Op::Clamp { x, lo, hi })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.iter().sum();
        self.push(vec![1], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let m = if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        };
        self.push(vec![1], vec![m], Op::Mean(x))
    }

    /// Normalizes over the channel axis: the last axis for rank ≤ 3, axis 1
    /// for `(N, C, H, W)` feature maps. `gamma`/`beta` have one entry per
    /// channel.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (len, inner) = match shape.as_slice() {
            [.., c] if shape.len() <= 3 => (*c, 1),
            [_, c, h, w] => (*c, h * w),
            _ => return Err(Error::shape(format!("layer_norm: unsupported shape {shape:?}"))),
        };
        if self.shape(gamma) != [len] || self.shape(beta) != [len] {
            return Err(Error::shape("layer_norm: gamma/beta must have one entry per channel"));
        }
        if eps <= 0.0 {
            return Err(Error::Param("layer_norm: epsilon must be positive".into()));
        }
        let xs = &self.nodes[x.0].value;
        let g = &self.nodes[gamma.0].value;
        let b = &self.nodes[beta.0].value;
        let groups = xs.len() / (len * inner).max(1);
        let mut xhat = vec![0.0; xs.len()];
        let mut rstd = vec![0.0; groups * inner];
        let mut out = vec![0.0; xs.len()];
        for o in 0..groups {
            for i in 0..inner {
                let idx = |c: usize| (o * len + c) * inner + i;
                let mean = (0..len).map(|c| xs[idx(c)]).sum::<f64>() / len as f64;
                let var = (0..len).map(|c| (xs[idx(c)] - mean).powi(2)).sum::<f64>() / len as f64;
                let r = 1.0 / (var + eps).sqrt();
                rstd[o * inner + i] = r;
                for c in 0..len {
                    let h = (xs[idx(c)] - mean) * r;
                    xhat[idx(c)] = h;
                    out[idx(c)] = g[c] * h + b[c];
                }
            }
        }
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                len,
                inner,
                xhat,
                rstd,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.nodes[x.0].value.len() {
            return Err(Error::shape(format!(
                "reshape {:?} -> {shape:?} changes element count",
                self.shape(x)
            )));
        }
        let value = self.nodes[x.0].value.clone();
        Ok(self.push(shape.to_vec(), value, Op::Reshape(x)))
    }

    /// `(N, C, H, W)` → `(N·windows, window², C)` token sequences.
    pub fn window_partition(&mut self, x: Var, window: usize, shift: usize) -> Result<Var> {
        let [_, _, h, w] = self.rank4(x, "window_partition")?;
        let geom = Rc::new(WindowGeometry::new(h, w, window, shift)?);
        self.window_partition_with(x, geom)
    }

    pub fn window_partition_with(&mut self, x: Var, geom: Rc<WindowGeometry>) -> Result<Var> {
        let [n, c, h, w] = self.rank4(x, "window_partition")?;
        if (h, w) != (geom.height, geom.width) {
            return Err(Error::shape("window_partition: geometry built for another plane size"));
        }
        let (nw, t) = (geom.windows(), geom.tokens_per_window());
        let xs = &self.nodes[x.0].value;
        let mut out = vec![0.0; n * nw * t * c];
        for img in 0..n {
            for win in 0..nw {
                for tok in 0..t {
                    if let Some(src) = geom.source(win, tok) {
                        let dst = ((img * nw + win) * t + tok) * c;
                        for ch in 0..c {
                            out[dst + ch] = xs[(img * c + ch) * h * w + src];
                        }
                    }
                }
            }
        }
        Ok(self.push(vec![n * nw, t, c], out, Op::Partition { x, geom }))
    }

    /// Inverse of [`Graph::window_partition`]; padding tokens are dropped.
    pub fn window_merge(
        &mut self,
        tokens: Var,
        window: usize,
        shift: usize,
        height: usize,
        width: usize,
    ) -> Result<Var> {
        let geom = Rc::new(WindowGeometry::new(height, width, window, shift)?);
        self.window_merge_with(tokens, geom)
    }

    pub fn window_merge_with(&mut self, tokens: Var, geom: Rc<WindowGeometry>) -> Result<Var> {
        let (b, t, c) = match self.shape(tokens) {
            &[b, t, c] => (b, t, c),
            s => return Err(Error::shape(format!("window_merge: expected rank 3, got {s:?}"))),
        };
        let nw = geom.windows();
        if t != geom.tokens_per_window() || b % nw != 0 {
            return Err(Error::shape("window_merge: token layout does not match geometry"));
        }
        let n = b / nw;
        let (h, w) = (geom.height, geom.width);
        let xs = &self.nodes[tokens.0].value;
        let mut out = vec![0.0; n * c * h * w];
        for img in 0..n {
            for win in 0..nw {
                for tok in 0..t {
                    if let Some(dst) = geom.source(win, tok) {
                        let src = ((img * nw + win) * t + tok) * c;
                        for ch in 0..c {
                            out[(img * c + ch) * h * w + dst] = xs[src + ch];
                        }
                    }
                }
            }
        }
        Ok(self.push(vec![n, c, h, w], out, Op::Merge { x: tokens, geom }))
    }

    /// Multi-head scaled dot-product attention over token batches
    /// `q, k, v: (B, T, C)`. `mask`, if given, is an additive `(M, T, T)`
    /// tensor applied to batch entry `b` as `mask[b % M]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: Option<&[f64]>) -> Result<Var> {
        let shape = self.shape(q).to_vec();
        let (b, t, c) = match shape.as_slice() {
            &[b, t, c] => (b, t, c),
            s => return Err(Error::shape(format!("attention: expected rank 3, got {s:?}"))),
        };
        if self.shape(k) != shape.as_slice() || self.shape(v) != shape.as_slice() {
            return Err(Error::shape("attention: q, k, v shapes differ"));
        }
        if heads == 0 || c % heads != 0 {
            return Err(Error::Param(format!(
                "attention: {c} channels not divisible by {heads} heads"
            )));
        }
        let mask_windows = match mask {
            Some(m) if m.len() % (t * t) != 0 || m.is_empty() => {
                return Err(Error::shape("attention: mask is not (M, T, T)"))
            }
            Some(m) => m.len() / (t * t),
            None => 0,
        };
        let d = c / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let qs = &self.nodes[q.0].value;
        let ks = &self.nodes[k.0].value;
        let vs = &self.nodes[v.0].value;
        let mut probs = vec![0.0; b * heads * t * t];
        let mut out = vec![0.0; b * t * c];
        for bi in 0..b {
            for h in 0..heads {
                let base = bi * t * c + h * d;
                let p_off = (bi * heads + h) * t * t;
                let p = &mut probs[p_off..p_off + t * t];
                gemm(
                    t,
                    d,
                    t,
                    qs,
                    Mat::strided(base, c, 1),
                    ks,
                    Mat::strided(base, 1, c),
                    0.0,
                    p,
                    Mat::rows(0, t),
                );
                let m = mask.map(|m| &m[(bi % mask_windows) * t * t..][..t * t]);
                for (i, row) in p.chunks_mut(t).enumerate() {
                    for (j, s) in row.iter_mut().enumerate() {
                        *s *= scale;
                        if let Some(m) = m {
                            *s += m[i * t + j];
                        }
                    }
                    softmax_in_place(row);
                }
                gemm(
                    t,
                    t,
                    d,
                    p,
                    Mat::rows(0, t),
                    vs,
                    Mat::strided(base, c, 1),
                    0.0,
                    &mut out,
                    Mat::strided(base, c, 1),
                );
            }
        }
        Ok(self.push(shape, out, Op::Attention { q, k, v, heads, probs }))
    }

    /// Concatenates rank-4 tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat_channels: nothing to concatenate"))?;
        let [n, _, h, w] = self.rank4(first, "concat_channels")?;
        let mut total = 0;
        for &p in parts {
            let [pn, pc, ph, pw] = self.rank4(p, "concat_channels")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::shape("concat_channels: batch/spatial sizes differ"));
            }
            total += pc;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total * hw);
        for img in 0..n {
            for &p in parts {
                let pc = self.shape(p)[1];
                out.extend_from_slice(&self.nodes[p.0].value[img * pc * hw..(img + 1) * pc * hw]);
            }
        }
        Ok(self.push(vec![n, total, h, w], out, Op::Concat(parts.to_vec())))
    }

    // ----------------------------------------------------------- backward

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backward_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Graph::backward`] and writes parameter gradients into `store`.
    /// Parameters not reachable from `loss` end up with zero gradient.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(loss)?;
        store.zero_grads();
        for (&id, &var) in &self.params {
            if let Some(g) = grads.get(var) {
                for (dst, src) in store.get_mut(id).grad.iter_mut().zip(g) {
                    *dst += src;
                }
            }
        }
        store.mark_grads_ready();
        Ok(())
    }

    fn val(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => self.conv_backward(*input, *weight, *bias, geom, g, grads),
            Op::Linear { input, weight, bias } => {
                let (batch, fin) = (self.shape(*input)[0], self.shape(*input)[1]);
                let fout = self.shape(*weight)[0];
                {
                    let gx = acc(grads, *input, batch * fin);
                    gemm(
                        batch,
                        fout,
                        fin,
                        g,
                        Mat::rows(0, fout),
                        self.val(*weight),
                        Mat::rows(0, fin),
                        1.0,
                        gx,
                        Mat::rows(0, fin),
                    );
                }
                {
                    let gw = acc(grads, *weight, fout * fin);
                    gemm(
                        fout,
                        batch,
                        fin,
                        g,
                        Mat::rows_t(0, fout),
                        self.val(*input),
                        Mat::rows(0, fin),
                        1.0,
                        gw,
                        Mat::rows(0, fin),
                    );
                }
                let gb = acc(grads, *bias, fout);
                for row in g.chunks(fout) {
                    for (d, s) in gb.iter_mut().zip(row) {
                        *d += s;
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                let len = self.val(*x).len();
                let hw = len / g.len();
                let gx = acc(grads, *x, len);
                for (chunk, &gi) in gx.chunks_mut(hw).zip(g) {
                    let share = gi / hw as f64;
                    chunk.iter_mut().for_each(|v| *v += share);
                }
            }
            Op::Act(x, kind) => {
                let xs = self.val(*x);
                let ys = &node.value;
                let gx = acc(grads, *x, xs.len());
                match kind {
                    Activation::Relu => {
                        for ((d, &xi), &gi) in gx.iter_mut().zip(xs).zip(g) {
                            if xi > 0.0 {
                                *d += gi;
                            }
                        }
                    }
                    Activation::Sigmoid => {
                        for ((d, &y), &gi) in gx.iter_mut().zip(ys).zip(g) {
                            *d += gi * y * (1.0 - y);
                        }
                    }
                    Activation::Softmax => {
                        let last = *node.shape.last().unwrap_or(&1);
                        if last > 0 {
                            for ((d, y), gr) in gx.chunks_mut(last).zip(ys.chunks(last)).zip(g.chunks(last)) {
                                let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                                for j in 0..last {
                                    d[j] += y[j] * (gr[j] - dot);
                                }
                            }
                        }
                    }
                }
            }
            Op::Binary { a, b, kind, inner } => {
                let (a, b, inner) = (*a, *b, *inner);
                let la = self.val(a).len();
                let lb = self.val(b).len();
                match kind {
                    Elementwise::Add | Elementwise::Sub => {
                        let sign = if *kind == Elementwise::Add { 1.0 } else { -1.0 };
                        let ga = acc(grads, a, la);
                        ga.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                        let gb = acc(grads, b, lb);
                        for (i, &s) in g.iter().enumerate() {
                            gb[i / inner] += sign * s;
                        }
                    }
                    Elementwise::Mul => {
                        let bv = self.val(b);
                        let av = self.val(a);
                        let ga = acc(grads, a, la);
                        for (i, &s) in g.iter().enumerate() {
                            ga[i] += s * bv[i / inner];
                        }
                        let gb = acc(grads, b, lb);
                        for (i, &s) in g.iter().enumerate() {
                            gb[i / inner] += s * av[i];
                        }
                    }
                }
            }
            Op::Scale(x, f) => {
                let gx = acc(grads, *x, g.len());
                gx.iter_mut().zip(g).for_each(|(d, s)| *d += s * f);
            }
            Op::Abs(x) => {
                let xs = self.val(*x);
                let gx = acc(grads, *x, xs.len());
                for ((d, &xi), &s) in gx.iter_mut().zip(xs).zip(g) {
                    *d += s * sign(xi);
                }
            }
            Op::Square(x) => {
                let xs = self.val(*x);
                let gx = acc(grads, *x, xs.len());
                for ((d, &xi), &s) in gx.iter_mut().zip(xs).zip(g) {
                    *d += 2.0 * xi * s;
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xs = self.val(*x);
                let gx = acc(grads, *x, xs.len());
                for ((d, &xi), &s) in gx.iter_mut().zip(xs).zip(g) {
                    if xi >= *lo && xi <= *hi {
                        *d += s;
                    }
                }
            }
            Op::Sum(x) => {
                let len = self.val(*x).len();
                acc(grads, *x, len).iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Mean(x) => {
                let len = self.val(*x).len();
                let share = g[0] / len.max(1) as f64;
                acc(grads, *x, len).iter_mut().for_each(|d| *d += share);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                len,
                inner,
                xhat,
                rstd,
            } => {
                let (len, inner) = (*len, *inner);
                let gam = self.val(*gamma);
                let groups = g.len() / (len * inner).max(1);
                {
                    let gg = acc(grads, *gamma, len);
                    for (i, (&s, &h)) in g.iter().zip(xhat).enumerate() {
                        gg[(i / inner) % len] += s * h;
                    }
                }
                {
                    let gb = acc(grads, *beta, len);
                    for (i, &s) in g.iter().enumerate() {
                        gb[(i / inner) % len] += s;
                    }
                }
                let gx = acc(grads, *x, g.len());
                for o in 0..groups {
                    for i in 0..inner {
                        let idx = |c: usize| (o * len + c) * inner + i;
                        let (mut m1, mut m2) = (0.0, 0.0);
                        for c in 0..len {
                            let dh = g[idx(c)] * gam[c];
                            m1 += dh;
                            m2 += dh * xhat[idx(c)];
                        }
                        m1 /= len as f64;
                        m2 /= len as f64;
                        let r = rstd[o * inner + i];
                        for c in 0..len {
                            let dh = g[idx(c)] * gam[c];
                            gx[idx(c)] += r * (dh - m1 - xhat[idx(c)] * m2);
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                let gx = acc(grads, *x, g.len());
                gx.iter_mut().zip(g).for_each(|(d, s)| *d += s);
            }
            Op::Partition { x, geom } => {
                let [n, c, h, w] = self.rank4(*x, "").expect("checked in forward");
                let (nw, t) = (geom.windows(), geom.tokens_per_window());
                let gx = acc(grads, *x, n * c * h * w);
                for img in 0..n {
                    for win in 0..nw {
                        for tok in 0..t {
                            if let Some(src) = geom.source(win, tok) {
                                let off = ((img * nw + win) * t + tok) * c;
                                for ch in 0..c {
                                    gx[(img * c + ch) * h * w + src] += g[off + ch];
                                }
                            }
                        }
                    }
                }
            }
            Op::Merge { x, geom } => {
                let [n, c, h, w] = [node.shape[0], node.shape[1], node.shape[2], node.shape[3]];
                let (nw, t) = (geom.windows(), geom.tokens_per_window());
                let len = self.val(*x).len();
                let gx = acc(grads, *x, len);
                for img in 0..n {
                    for win in 0..nw {
                        for tok in 0..t {
                            if let Some(dst) = geom.source(win, tok) {
                                let off = ((img * nw + win) * t + tok) * c;
                                for ch in 0..c {
                                    gx[off + ch] += g[(img * c + ch) * h * w + dst];
                                }
                            }
                        }
                    }
                }
            }
            Op::Attention { q, k, v, heads, probs } => {
                self.attention_backward(node, *q, *k, *v, *heads, probs, g, grads)
            }
            Op::Concat(parts) => {
                let [n, total, h, w] = [node.shape[0], node.shape[1], node.shape[2], node.shape[3]];
                let hw = h * w;
                let mut ch_off = 0;
                for &p in parts {
                    let pc = self.shape(p)[1];
                    let gp = acc(grads, p, n * pc * hw);
                    for img in 0..n {
                        let src = &g[(img * total + ch_off) * hw..(img * total + ch_off + pc) * hw];
                        for (d, s) in gp[img * pc * hw..(img + 1) * pc * hw].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    ch_off += pc;
                }
            }
        }
    }

    fn conv_backward(
        &self,
        input: Var,
        weight: Var,
        bias: Var,
        geom: &ConvGeom,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let x = self.val(input);
        let wt = self.val(weight);
        let co = self.shape(weight)[0];
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let img_len = geom.channels * geom.height * geom.width;
        let n = x.len() / img_len;
        {
            let gb = acc(grads, bias, co);
            for (i, chunk) in g.chunks(cols).enumerate() {
                gb[i % co] += chunk.iter().sum::<f64>();
            }
        }
        let mut col = vec![0.0; if geom.is_pointwise() { 0 } else { rows * cols }];
        let mut dcol = vec![0.0; rows * cols];
        for img in 0..n {
            let src = &x[img * img_len..(img + 1) * img_len];
            let gout = &g[img * co * cols..(img + 1) * co * cols];
            let colbuf: &[f64] = if geom.is_pointwise() {
                src
            } else {
                im2col(src, geom, &mut col);
                &col
            };
            {
                let gw = acc(grads, weight, co * rows);
                gemm(
                    co,
                    cols,
                    rows,
                    gout,
                    Mat::rows(0, cols),
                    colbuf,
                    Mat::rows_t(0, cols),
                    1.0,
                    gw,
                    Mat::rows(0, rows),
                );
            }
            let gx = acc(grads, input, x.len());
            if geom.is_pointwise() {
                gemm(
                    rows,
                    co,
                    cols,
                    wt,
                    Mat::rows_t(0, rows),
                    gout,
                    Mat::rows(0, cols),
                    1.0,
                    &mut gx[img * img_len..(img + 1) * img_len],
                    Mat::rows(0, cols),
                );
            } else {
                gemm(
                    rows,
                    co,
                    cols,
                    wt,
                    Mat::rows_t(0, rows),
                    gout,
                    Mat::rows(0, cols),
                    0.0,
                    &mut dcol,
                    Mat::rows(0, cols),
                );
                col2im_add(&dcol, geom, &mut gx[img * img_len..(img + 1) * img_len]);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        node: &Node,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (b, t, c) = (node.shape[0], node.shape[1], node.shape[2]);
        let d = c / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let (qs, ks, vs) = (self.val(q), self.val(k), self.val(v));
        let len = b * t * c;
        let mut gq = grads[q.0].take().unwrap_or_else(|| vec![0.0; len]);
        let mut gk = grads[k.0].take().unwrap_or_else(|| vec![0.0; len]);
        let mut gv = grads[v.0].take().unwrap_or_else(|| vec![0.0; len]);
        let mut dp = vec![0.0; t * t];
        for bi in 0..b {
            for h in 0..heads {
                let base = bi * t * c + h * d;
                let p = &probs[(bi * heads + h) * t * t..][..t * t];
                // dV += Pᵀ dO
                gemm(
                    t,
                    t,
                    d,
                    p,
                    Mat::rows_t(0, t),
                    g,
                    Mat::strided(base, c, 1),
                    1.0,
                    &mut gv,
                    Mat::strided(base, c, 1),
                );
                // dP = dO Vᵀ
                gemm(
                    t,
                    d,
                    t,
                    g,
                    Mat::strided(base, c, 1),
                    vs,
                    Mat::strided(base, 1, c),
                    0.0,
                    &mut dp,
                    Mat::rows(0, t),
                );
                // dS = P ⊙ (dP − rowdot) · scale
                for (prow, drow) in p.chunks(t).zip(dp.chunks_mut(t)) {
                    let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                    for (dv, &pv) in drow.iter_mut().zip(prow) {
                        *dv = pv * (*dv - dot) * scale;
                    }
                }
                gemm(
                    t,
                    t,
                    d,
                    &dp,
                    Mat::rows(0, t),
                    ks,
                    Mat::strided(base, c, 1),
                    1.0,
                    &mut gq,
                    Mat::strided(base, c, 1),
                );
                gemm(
                    t,
                    t,
                    d,
                    &dp,
                    Mat::rows_t(0, t),
                    qs,
                    Mat::strided(base, c, 1),
                    1.0,
                    &mut gk,
                    Mat::strided(base, c, 1),
                );
            }
        }
        // q, k, v may alias the same node
        merge_grad(grads, q, gq);
        merge_grad(grads, k, gk);
        merge_grad(grads, v, gv);
    }
}

fn merge_grad(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(d, s)| *d += s),
        slot @ None => *slot = Some(g),
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
