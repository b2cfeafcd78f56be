use std::collections::BTreeMap;

use crate::autodiff::{grad, Graph, Tensor};
use crate::error::{Error, Result};

/// Named parameter tensors, iterated in sorted name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    /// Replaces the value of an existing parameter, keeping its shape.
    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
        if slot.shape() != t.shape() {
            return Err(Error::shape(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                slot.shape(),
                t.shape()
            )));
        }
        *slot = t;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Copies every parameter into `graph` as a leaf.
    pub fn attach(&self, graph: &Graph) -> ParamStore {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), graph.leaf(v))).collect(),
        }
    }

    pub fn detach(&self) -> ParamStore {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.detach())).collect(),
        }
    }

    /// Subset of parameters whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Builds a store with the same names as `self` from an aligned tensor list.
    pub fn with_values(&self, values: Vec<Tensor>) -> ParamStore {
        assert_eq!(values.len(), self.len());
        ParamStore {
            tensors: self.tensors.keys().cloned().zip(values).collect(),
        }
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.tensors.values().cloned().collect()
    }

    /// Gradients of a scalar loss with respect to every (attached) parameter.
    pub fn gradients(&self, loss: &Tensor) -> Result<Gradients> {
        let g = grad(loss, &self.tensors(), false)?;
        Ok(self.tensors.keys().cloned().zip(g).collect())
    }
}
