use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Role of a parameter; decides whether the L2 penalty applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    Embedding,
    NormScale,
    NormShift,
}

impl ParamKind {
    pub fn is_regularized(self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::Embedding)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

/// Ordered, named collection of trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, mut tensor: Tensor<T>) -> ParamId {
        tensor.set_requires_grad(true);
        self.params.push(Param {
            name: name.into(),
            kind,
            tensor,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar entries across all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.params
            .iter()
            .flat_map(|p| p.tensor.data().iter().copied())
            .collect()
    }

    pub fn assign_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(Error::shape("assign_flat", &[self.numel()], &[flat.len()]));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.tensor.numel();
            p.tensor.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Sum of squares over regularized, trainable parameters.
    pub fn l2_norm_sq(&self) -> T {
        self.params
            .iter()
            .filter(|p| p.kind.is_regularized() && p.tensor.requires_grad())
            .flat_map(|p| p.tensor.data().iter())
            .map(|&x| x * x)
            .sum()
    }

    /// Adds `2·lambda·w` to the gradient slot of every regularized parameter.
    pub fn add_l2_grad(&mut self, lambda: T) {
        let two = T::lit(2.0);
        for p in &mut self.params {
            if !p.kind.is_regularized() || !p.tensor.requires_grad() {
                continue;
            }
            let delta: Vec<T> = p.tensor.data().iter().map(|&w| two * lambda * w).collect();
            p.tensor
                .accumulate_grad(&delta)
                .expect("shape of own data");
        }
    }

    /// Gradient slots flattened in parameter order (zeros for frozen parameters).
    pub fn flat_grad(&self) -> Vec<T> {
        self.params
            .iter()
            .flat_map(|p| match p.tensor.grad() {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); p.tensor.numel()],
            })
            .collect()
    }
}
