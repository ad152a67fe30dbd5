use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in creation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    /// `uniform(−1/√fan_in, 1/√fan_in)`
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.add(name, Tensor::uniform(shape, bound, rng))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor, checking names and shapes against `other`.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Data("parameter names differ from the model layout".into()));
        }
        for (mine, theirs) in self.tensors.iter_mut().zip(&other.tensors) {
            if mine.shape() != theirs.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load parameters",
                    left: mine.shape().to_vec(),
                    right: theirs.shape().to_vec(),
                });
            }
            *mine = theirs.clone();
        }
        Ok(())
    }

    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Data(format!("no parameter named `{name}`")))?;
        if self.tensors[id.0].shape() != t.shape() {
            return Err(Error::ShapeMismatch {
                op: "set parameter",
                left: self.tensors[id.0].shape().to_vec(),
                right: t.shape().to_vec(),
            });
        }
        self.tensors[id.0] = t;
        Ok(())
    }
}

/// A graph plus lazily bound parameter leaves for one forward pass.
pub struct Forward<'a> {
    pub g: Graph,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'a> Forward<'a> {
    pub fn new(store: &'a ParamStore, g: Graph) -> Self {
        Forward {
            g,
            store,
            bound: vec![None; store.len()],
        }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.g.param(self.store.get(id));
        self.bound[id.0] = Some(v);
        v
    }

    pub fn train(&self) -> bool {
        self.g.is_train()
    }

    /// Gradient of every parameter after `backward`; unused ones are `None`.
    pub fn param_grads(&self) -> Vec<Option<Vec<f64>>> {
        self.bound
            .iter()
            .map(|b| b.and_then(|v| self.g.grad(v).map(<[f64]>::to_vec)))
            .collect()
    }
}
