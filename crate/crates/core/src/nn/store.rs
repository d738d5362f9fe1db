use indexmap::IndexMap;
use rand::Rng as _;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Handle to one named parameter array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, shape-annotated trainable arrays, kept in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        let (idx, _) = self.params.insert_full(name, value);
        Ok(ParamId(idx))
    }

    /// Adds a `rows x cols` array drawn from `U(-bound, bound)`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut Rng,
    ) -> Result<ParamId> {
        let data = (0..rows * cols)
            .map(|_| if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 })
            .collect();
        self.add(name, Tensor::from_vec(rows, cols, data)?)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.get_index_of(name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0]
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

    /// Total scalar count.
    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.params.iter().enumerate().map(|(i, (k, v))| (ParamId(i), k.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Tensor::is_finite)
    }

    /// Zeroed gradient buffers mirroring every parameter shape.
    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            grads: self.params.values().map(|t| Tensor::zeros(t.rows(), t.cols())).collect(),
        }
    }

    /// Flat view of scalar `k` across all arrays, for finite-difference probes.
    pub fn locate(&self, mut k: usize) -> Option<(ParamId, usize)> {
        for (i, t) in self.params.values().enumerate() {
            if k < t.len() {
                return Some((ParamId(i), k));
            }
            k -= t.len();
        }
        None
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.grads.iter_mut()
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::sum_sq).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Tensor::is_finite)
    }

    pub fn flat_get(&self, id: ParamId, k: usize) -> f64 {
        self.grads[id.0].data()[k]
    }
}

impl ParamStore {
    /// Copies every array of `src` into the same-named array of `self`.
    /// Names and shapes must match exactly.
    pub fn assign_from(&mut self, src: &ParamStore) -> Result<()> {
        if src.len() != self.len() {
            return Err(Error::Shape(format!(
                "store has {} arrays, source {}",
                self.len(),
                src.len()
            )));
        }
        for (name, value) in &src.params {
            let dst = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::Shape(format!("unknown parameter {name}")))?;
            if dst.shape() != value.shape() {
                return Err(Error::Shape(format!(
                    "{name}: shape {:?} vs {:?}",
                    dst.shape(),
                    value.shape()
                )));
            }
            *dst = value.clone();
        }
        Ok(())
    }
}
