use indexmap::IndexMap;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Named learnable tensors, in a fixed insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    items: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.items.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.items.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.items.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.items.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.items.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.items.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.items.values().map(Tensor::numel).sum()
    }

    pub fn scalar_count_with_prefix(&self, prefix: &str) -> usize {
        self.items
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.numel())
            .sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        ParamStore {
            items: self
                .items
                .iter()
                .map(|(k, v)| (k.clone(), v.zeros_like()))
                .collect(),
        }
    }

    /// Registers every tensor as a differentiable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> VarMap {
        VarMap {
            vars: self
                .items
                .iter()
                .map(|(k, v)| (k.clone(), g.param(v.clone())))
                .collect(),
        }
    }

    /// Reads the leaf gradients back out under the parameter names; leaves the
    /// backward pass never reached get zeros.
    pub fn grads(&self, g: &Graph, vars: &VarMap) -> ParamStore {
        let items = self
            .items
            .iter()
            .map(|(k, v)| {
                let grad = vars
                    .vars
                    .get(k)
                    .and_then(|&var| g.grad(var).cloned())
                    .unwrap_or_else(|| v.zeros_like());
                (k.clone(), grad)
            })
            .collect();
        ParamStore { items }
    }

    /// `self += other` elementwise; both stores must share names and shapes.
    pub fn accumulate(&mut self, other: &ParamStore) {
        for (k, v) in self.items.iter_mut() {
            if let Some(o) = other.items.get(k) {
                v.add_assign(o);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.items.values_mut() {
            v.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.items.values().fold(0.0, |m, v| m.max(v.max_abs()))
    }
}

/// Graph handles for a bound [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct VarMap {
    vars: IndexMap<String, Var>,
}

impl VarMap {
    /// Pairs names with graph handles, in order.
    pub fn from_vars<'a>(names: impl IntoIterator<Item = &'a str>, vars: &[Var]) -> Self {
        VarMap {
            vars: names
                .into_iter()
                .map(String::from)
                .zip(vars.iter().copied())
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
