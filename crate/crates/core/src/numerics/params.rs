use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use super::optim::RmsProp;
use super::tensor::Tensor;
use super::NumericsError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors. Names are unique; ids are insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> Result<ParamId, NumericsError> {
        if self.names.iter().any(|n| n == name) {
            return Err(NumericsError::DuplicateParam(name.to_string()));
        }
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(ParamId(self.names.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names.iter().zip(&self.tensors).enumerate().map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Ids whose name starts with `prefix`.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.names.iter().enumerate().filter(move |(_, n)| n.starts_with(prefix)).map(|(i, _)| ParamId(i))
    }
}

/// Sparse gradient map keyed by parameter id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grads {
    map: BTreeMap<ParamId, Vec<f64>>,
}

impl Grads {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &[f64]) {
        match self.map.get_mut(&id) {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(grad) {
                    *a += b;
                }
            }
            None => {
                self.map.insert(id, grad.to_vec());
            }
        }
    }

    pub fn merge(&mut self, other: &Grads) {
        for (id, g) in &other.map {
            self.accumulate(*id, g);
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.map.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.map.iter().map(|(id, g)| (*id, g.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn retain(&mut self, mut keep: impl FnMut(ParamId) -> bool) {
        self.map.retain(|id, _| keep(*id));
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.map.values_mut() {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.map.values().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute entry over all tensors, 0 for an empty map.
    pub fn max_abs(&self) -> f64 {
        self.map.values().flat_map(|g| g.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }
}

struct StoreState {
    params: Arc<ParamSet>,
    optimizer: RmsProp,
    version: u64,
}

/// Shared parameters for concurrent actor-learners.
///
/// Snapshots are `Arc` clones taken under a read lock, so a reader never
/// observes a partially applied update. Updates are serialized by the write
/// lock and copy the parameter set only while older snapshots are alive.
pub struct ParamStore {
    state: RwLock<StoreState>,
}

impl ParamStore {
    pub fn new(params: ParamSet, optimizer: RmsProp) -> Self {
        ParamStore { state: RwLock::new(StoreState { params: Arc::new(params), optimizer, version: 0 }) }
    }

    pub fn snapshot(&self) -> (Arc<ParamSet>, u64) {
        let s = self.state.read().expect("param store poisoned");
        (Arc::clone(&s.params), s.version)
    }

    pub fn version(&self) -> u64 {
        self.state.read().expect("param store poisoned").version
    }

    /// Applies one RMSProp step; `lr` gives the learning rate per tensor.
    pub fn apply(&self, grads: &Grads, lr: impl Fn(ParamId) -> f64) -> u64 {
        let mut s = self.state.write().expect("param store poisoned");
        let StoreState { params, optimizer, version } = &mut *s;
        optimizer.update(Arc::make_mut(params), grads, lr);
        *version += 1;
        *version
    }

    pub fn optimizer_state(&self) -> RmsProp {
        self.state.read().expect("param store poisoned").optimizer.clone()
    }

    pub fn into_parts(self) -> (ParamSet, RmsProp) {
        let s = self.state.into_inner().expect("param store poisoned");
        (Arc::try_unwrap(s.params).unwrap_or_else(|a| (*a).clone()), s.optimizer)
    }
}
