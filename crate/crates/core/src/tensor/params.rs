use indexmap::IndexMap;
use rand::Rng;
use rand_distr_free::truncated_normal;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// A trainable tensor with its gradient and Adam moment buffers.
#[derive(Clone, Debug)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
}

impl Param {
    fn new(shape: Vec<usize>, value: Vec<f64>) -> Self {
        let n = value.len();
        Param {
            shape,
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Named parameters in insertion order, plus optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: IndexMap<String, Param>,
    pub(crate) step: u64,
    pub(crate) grads_ready: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.params.contains_key(name) {
            return Err(Error::Param(format!("duplicate parameter path {name}")));
        }
        let (shape, data) = tensor.into_parts();
        let (idx, _) = self.params.insert_full(name.to_string(), Param::new(shape, data));
        Ok(ParamId(idx))
    }

    /// Truncated normal (±2σ) initialization.
    pub fn insert_normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut impl Rng) -> Result<ParamId> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| truncated_normal(rng) * std).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn insert_const(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        let n = shape.iter().product();
        self.insert(name, Tensor::new(shape.to_vec(), vec![value; n])?)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.params
            .get_index_of(name)
            .map(ParamId)
            .ok_or_else(|| Error::Param(format!("unknown parameter path {name}")))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.params.get_index(id.0).map(|(k, _)| k.as_str()).unwrap_or("")
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Number of optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Param::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
        self.grads_ready = false;
    }

    /// Whether the gradients currently held come from a completed backward pass.
    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    pub(crate) fn mark_grads_ready(&mut self) {
        self.grads_ready = true;
    }

    /// Copies values from `other` for every path both stores share.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, p) in self.params.iter_mut() {
            let src = other
                .params
                .get(name)
                .ok_or_else(|| Error::Param(format!("checkpoint lacks parameter {name}")))?;
            if src.shape != p.shape {
                return Err(Error::shape(format!(
                    "parameter {name}: checkpoint shape {:?} != model shape {:?}",
                    src.shape, p.shape
                )));
            }
            p.value.copy_from_slice(&src.value);
        }
        Ok(())
    }
}

mod rand_distr_free {
    use rand::Rng;

    /// Standard normal truncated to [-2, 2] by rejection (Box-Muller).
    pub fn truncated_normal(rng: &mut impl Rng) -> f64 {
        loop {
            let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
            let u2: f64 = rng.gen();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            if z.abs() <= 2.0 {
                return z;
            }
        }
    }
}
