//! Named parameter storage and the per-pass binding of parameters into a [`Graph`].

use serde::{Deserialize, Serialize};

use crate::graph::{BatchStats, Gradients, Graph, Var};
use crate::ops::BN_MOMENTUM;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
}

/// Ordered collection of named tensors; ids are insertion indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, kind, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.kind.trainable()).map(|(id, _)| id).collect()
    }

    /// `running = (1 - momentum) · running + momentum · batch`.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        for u in updates {
            for (id, batch) in [(u.mean, &u.stats.mean), (u.var, &u.stats.var)] {
                for (r, b) in self.params[id.0].value.data_mut().iter_mut().zip(batch) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                }
            }
        }
    }
}

/// Running-statistic update produced by a train-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: a fresh graph plus lazily bound parameter leaves.
pub struct Session<'a> {
    pub graph: Graph,
    pub mode: Mode,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    track_grads: bool,
    bn_updates: Vec<BnUpdate>,
}

impl<'a> Session<'a> {
    /// `track_grads` makes trainable parameters gradient leaves; otherwise they are constants.
    pub fn new(store: &'a ParamStore, mode: Mode, track_grads: bool) -> Self {
        Self {
            graph: Graph::new(),
            mode,
            store,
            bound: vec![None; store.len()],
            track_grads,
            bn_updates: Vec::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = self.store.param(id);
        let v = if self.track_grads && p.kind.trainable() {
            self.graph.leaf(p.value.clone())
        } else {
            self.graph.constant(p.value.clone())
        };
        self.bound[id.0] = Some(v);
        v
    }

    pub(crate) fn record_bn(&mut self, update: BnUpdate) {
        self.bn_updates.push(update);
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    /// Gradient for every trainable parameter, zeros for those not reached.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        self.store
            .iter()
            .filter(|(_, p)| p.kind.trainable())
            .map(|(id, p)| match self.bound[id.0] {
                Some(v) => (id, grads.wrt(v)),
                None => (id, Tensor::zeros(p.value.shape().to_vec())),
            })
            .collect()
    }
}
