//! Named parameters with per-parameter optimizer state. Iteration is
//! name-ordered everywhere so update order never depends on hashing.

use std::collections::BTreeMap;

use crate::diff::graph::{Gradients, Graph, NodeId};
use crate::diff::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    m: Tensor,
    v: Tensor,
}

#[derive(Copy, Clone, Debug)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Default, Debug)]
pub struct ParameterStore {
    params: BTreeMap<String, Parameter>,
    step: u64,
}

/// Name -> leaf node ids for one recorded graph.
pub struct Binding {
    ids: BTreeMap<String, NodeId>,
}

impl Binding {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, NodeId)>) -> Self {
        Binding {
            ids: pairs.into_iter().collect(),
        }
    }

    pub fn node(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter {name:?} is not bound")))
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Contract(format!(
                "parameter {name:?} already exists"
            )));
        }
        let (rows, cols) = value.shape();
        self.params.insert(
            name.to_string(),
            Parameter {
                value,
                grad: None,
                m: Tensor::zeros(rows, cols),
                v: Tensor::zeros(rows, cols),
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Parameter> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Inserts every parameter into the graph as a leaf.
    pub fn bind(&self, graph: &mut Graph) -> Binding {
        let ids = self
            .params
            .iter()
            .map(|(name, p)| (name.clone(), graph.constant(p.value.clone())))
            .collect();
        Binding { ids }
    }

    /// Adds the graph's gradients for bound leaves into the stored
    /// grads, creating them on first touch.
    pub fn accumulate(&mut self, binding: &Binding, grads: &Gradients) -> Result<()> {
        for (name, &id) in &binding.ids {
            let Some(g) = grads.get(id) else { continue };
            let param = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))?;
            match &mut param.grad {
                Some(acc) => acc.add_scaled(g, 1.0)?,
                slot => *slot = Some(g.clone()),
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// One update over all parameters; every parameter must hold a
    /// gradient. Gradients are cleared afterwards.
    pub fn optimizer_step(&mut self, opt: &Optimizer) -> Result<()> {
        for (name, p) in &self.params {
            if p.grad.is_none() {
                return Err(Error::Contract(format!(
                    "parameter {name:?} has no gradient"
                )));
            }
        }
        self.step += 1;
        let t = self.step;
        for p in self.params.values_mut() {
            let g = p.grad.take().expect("checked above");
            match *opt {
                Optimizer::Sgd { lr } => {
                    p.value.add_scaled(&g, -lr)?;
                }
                Optimizer::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => {
                    let bc1 = 1.0 - beta1.powi(t as i32);
                    let bc2 = 1.0 - beta2.powi(t as i32);
                    let n = p.value.numel();
                    for i in 0..n {
                        let gi = g.data()[i];
                        let m = beta1 * p.m.data()[i] + (1.0 - beta1) * gi;
                        let v = beta2 * p.v.data()[i] + (1.0 - beta2) * gi * gi;
                        p.m.data_mut()[i] = m;
                        p.v.data_mut()[i] = v;
                        let update = (m / bc1) / ((v / bc2).sqrt() + eps);
                        p.value.data_mut()[i] -= lr * update;
                    }
                }
            }
        }
        Ok(())
    }
}
