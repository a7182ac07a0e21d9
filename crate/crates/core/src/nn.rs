//! Parameterized layers built on the tensor engine.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Activation, Graph, ParamId, ParamStore, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Weight initialization. Biases start at zero either way.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Truncated normal with one fixed standard deviation for every weight.
    Normal(f64),
    /// Truncated normal scaled by fan-in: `sqrt(2/fan_in)` for convolutions,
    /// `sqrt(1/fan_in)` for dense layers.
    FanIn,
}

impl Init {
    pub fn conv_std(self, fan_in: usize) -> f64 {
        match self {
            Init::Normal(std) => std,
            Init::FanIn => (2.0 / fan_in as f64).sqrt(),
        }
    }

    pub fn dense_std(self, fan_in: usize) -> f64 {
        match self {
            Init::Normal(std) => std,
            Init::FanIn => (1.0 / fan_in as f64).sqrt(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub pad: usize,
}

impl Conv {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        init: Init,
    ) -> Result<Self> {
        Ok(Conv {
            weight: store.insert_normal(
                &format!("{name}.weight"),
                &[cout, cin, kernel, kernel],
                init.conv_std(cin * kernel * kernel),
                rng,
            )?,
            bias: store.insert_const(&format!("{name}.bias"), &[cout], 0.0)?,
            pad: kernel / 2,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, b, 1, self.pad)
    }
}

/// 3×3 convolutions with ReLU between layers and none after the last.
#[derive(Clone, Debug)]
pub struct ConvStack {
    pub layers: Vec<Conv>,
}

impl ConvStack {
    /// `widths = [c_in, c_1, …, c_out]`; layers are named `{name}.conv{i}`.
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, widths: &[usize], init: Init) -> Result<Self> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv::new(store, rng, &format!("{name}.conv{i}"), w[0], w[1], 3, init))
            .collect::<Result<_>>()?;
        Ok(ConvStack { layers })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, mut x: Var) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                x = g.relu(x);
            }
            x = layer.forward(g, store, x)?;
        }
        Ok(x)
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        fin: usize,
        fout: usize,
        init: Init,
    ) -> Result<Self> {
        Ok(Dense {
            weight: store.insert_normal(&format!("{name}.weight"), &[fout, fin], init.dense_std(fin), rng)?,
            bias: store.insert_const(&format!("{name}.bias"), &[fout], 0.0)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.fully_connected(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Norm {
            gamma: store.insert_const(&format!("{name}.gamma"), &[channels], 1.0)?,
            beta: store.insert_const(&format!("{name}.beta"), &[channels], 0.0)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }
}

/// Squeeze-and-excitation channel gate: pool → FC → ReLU → FC → sigmoid.
#[derive(Clone, Debug)]
pub struct SeGate {
    pub reduce: Dense,
    pub expand: Dense,
}

impl SeGate {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        reduction: usize,
        init: Init,
    ) -> Result<Self> {
        let hidden = (channels / reduction.max(1)).max(1);
        Ok(SeGate {
            reduce: Dense::new(store, rng, &format!("{name}.fc_r"), channels, hidden, init)?,
            expand: Dense::new(store, rng, &format!("{name}.fc_s"), hidden, channels, init)?,
        })
    }

    /// Channel weights `g ∈ (0, 1)^(N×C)`.
    pub fn weights(&self, g: &mut Graph, store: &ParamStore, f: Var) -> Result<Var> {
        let pooled = g.global_avg_pool(f)?;
        let hidden = self.reduce.forward(g, store, pooled)?;
        let hidden = g.activation(hidden, Activation::Relu);
        let out = self.expand.forward(g, store, hidden)?;
        Ok(g.activation(out, Activation::Sigmoid))
    }
}
