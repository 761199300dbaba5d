//! Trainable parameters and their gradient buffers.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::collections::HashSet;

/// Handle to a parameter in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A named trainable tensor with a gradient buffer of the same shape.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
}

/// Owns every parameter of a model. Registration order is the canonical
/// order used by the optimizer and the checkpoint format.
#[derive(Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    names: HashSet<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Register a parameter under a unique path-like name.
    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if !self.names.insert(name.clone()) {
            return Err(Error::invalid(format!("parameter '{}' registered twice", name)));
        }
        let grad = vec![0.0; value.numel()];
        self.params.push(Parameter { name, value, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.grad.len() != g.len() {
            return Err(Error::ShapeMismatch {
                op: "accumulate_grad",
                lhs: p.value.shape().to_vec(),
                rhs: vec![g.len()],
            });
        }
        for (dst, &src) in p.grad.iter_mut().zip(g) {
            *dst += src;
        }
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }
}
