use std::collections::HashMap;

use crate::error::AutogradError;
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors. Names are unique and insertion order is stable,
/// which keeps checkpoints and optimizer state aligned.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, AutogradError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(AutogradError::DuplicateParam(name));
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Checks that `other` holds the same names with the same shapes, in the
    /// same order.
    pub fn check_layout(&self, other: &ParamSet) -> Result<(), AutogradError> {
        if self.len() != other.len() {
            return Err(AutogradError::Layout(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for ((name, t), (other_name, o)) in self.names.iter().zip(&self.tensors).zip(other.names.iter().zip(&other.tensors)) {
            if name != other_name {
                return Err(AutogradError::Layout(format!("expected parameter `{name}`, found `{other_name}`")));
            }
            if t.shape() != o.shape() {
                return Err(AutogradError::Layout(format!(
                    "parameter `{name}`: expected shape {:?}, found {:?}",
                    t.shape(),
                    o.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Per-parameter gradient accumulators, aligned with a [`ParamSet`].
/// `None` means the parameter received no gradient (treated as zero).
#[derive(Clone, Debug, Default)]
pub struct ParamGrads {
    grads: Vec<Option<Tensor>>,
}

impl ParamGrads {
    pub fn new(len: usize) -> Self {
        Self { grads: vec![None; len] }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub(crate) fn slot_mut(&mut self, id: ParamId) -> &mut Option<Tensor> {
        &mut self.grads[id.0]
    }

    /// `self += scale * other`
    pub fn accumulate(&mut self, other: &ParamGrads, scale: f64) {
        assert_eq!(self.grads.len(), other.grads.len(), "gradient sets differ in length");
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(g) = theirs {
                match mine {
                    Some(m) => m.add_scaled(g, scale),
                    None => {
                        let mut t = g.clone();
                        t.scale_in_place(scale);
                        *mine = Some(t);
                    }
                }
            }
        }
    }

    pub fn scale(&mut self, scale: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_in_place(scale);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(Tensor::sum_squares).sum::<f64>().sqrt()
    }

    /// Rescales so that the global L2 norm is at most `max_norm`. Returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Option<&Tensor>)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g.as_ref()))
    }
}
