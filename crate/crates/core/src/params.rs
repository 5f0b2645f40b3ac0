//! Named parameter storage, forward-pass binding and optimizers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation weights are trained on the training split; architecture
/// logits on the validation split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Arch,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.kinds.push(kind);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    /// Replace a value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let cur = &self.values[id.0];
        if cur.shape() != value.shape() {
            return Err(Error::shape("ParamStore::set", cur.shape(), value.shape()));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.kinds[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn ids_of(&self, kind: ParamKind) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(move |&id| self.kinds[id.0] == kind)
    }

    pub fn num_scalars(&self, kind: ParamKind) -> usize {
        self.ids_of(kind).map(|id| self.values[id.0].len()).sum()
    }
}

/// Glorot-uniform initialization for a `fan_in x fan_out` matrix.
pub fn glorot(rng: &mut seed::Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("fan_in x fan_out")
}

/// Affine bias of width `d`, uniform in `+-1/sqrt(fan_in)`.
pub fn bias_init(rng: &mut seed::Rng, fan_in: usize, d: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::vector((0..d).map(|_| rng.gen_range(-bound..bound)).collect())
}

/// One forward pass: a fresh tape plus lazily bound parameter leaves.
pub struct Ctx<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
        }
    }

    /// Continue recording on an existing tape.
    pub fn with_tape(store: &'a ParamStore, tape: Tape) -> Self {
        Self {
            tape,
            store,
            bound: vec![None; store.len()],
        }
    }

    pub fn into_tape(self) -> Tape {
        self.tape
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    /// Tape variable for a parameter; the leaf is created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    /// Use `v` as the value of parameter `id` for the rest of this pass.
    pub fn bind(&mut self, id: ParamId, v: Var) {
        self.bound[id.0] = Some(v);
    }

    /// Gradients of every parameter touched by this pass, in id order.
    pub fn grads(&self) -> Vec<(ParamId, Vec<f64>)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                self.tape.grad(v).map(|g| (ParamId(i), g.to_vec()))
            })
            .collect()
    }
}

/// Gradient descent with optional heavy-ball momentum, restricted to one
/// parameter kind. Parameters of the other kind are never touched.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub kind: ParamKind,
    /// Rescale the gradient of this optimizer's kind to at most this L2 norm.
    pub clip_norm: Option<f64>,
    velocity: Vec<Option<Vec<f64>>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, kind: ParamKind) -> Self {
        Self {
            lr,
            momentum,
            kind,
            clip_norm: None,
            velocity: Vec::new(),
        }
    }

    pub fn with_clip(mut self, clip_norm: Option<f64>) -> Self {
        self.clip_norm = clip_norm;
        self
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Vec<f64>)]) {
        if self.velocity.len() < store.len() {
            self.velocity.resize(store.len(), None);
        }
        let scale = match self.clip_norm {
            Some(max) => {
                let sq: f64 = grads
                    .iter()
                    .filter(|(id, _)| store.kind(*id) == self.kind)
                    .flat_map(|(_, g)| g.iter())
                    .map(|g| g * g)
                    .sum();
                let norm = sq.sqrt();
                if norm > max { max / norm } else { 1.0 }
            }
            None => 1.0,
        };
        for (id, g) in grads {
            if store.kind(*id) != self.kind {
                continue;
            }
            let p = store.get_mut(*id).data_mut();
            if self.momentum == 0.0 {
                for (x, gi) in p.iter_mut().zip(g) {
                    *x -= self.lr * scale * gi;
                }
                continue;
            }
            let v = self.velocity[id.0].get_or_insert_with(|| vec![0.0; g.len()]);
            for ((x, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = self.momentum * *vi + scale * gi;
                *x -= self.lr * *vi;
            }
        }
    }
}
