//! Named parameter tensors partitioned into encoder and decoder sets.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Partition {
    Encoder,
    Decoder,
}

impl Partition {
    pub const ALL: [Partition; 2] = [Partition::Encoder, Partition::Decoder];

    pub(crate) fn tag(self) -> u8 {
        match self {
            Partition::Encoder => 0,
            Partition::Decoder => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Partition::Encoder),
            1 => Some(Partition::Decoder),
            _ => None,
        }
    }

    fn slot(self) -> usize {
        self.tag() as usize
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Encoder => "encoder",
            Partition::Decoder => "decoder",
        })
    }
}

/// Index of a tensor inside a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct ParamEntry<T: Real> {
    pub name: String,
    pub partition: Partition,
    pub value: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ParameterStore<T: Real = f32> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
    trainable: [bool; 2],
}

impl<T: Real> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            entries: Vec::new(),
            index: HashMap::new(),
            trainable: [true, true],
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, partition: Partition, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            partition,
            value,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn set_trainable(&mut self, partition: Partition, trainable: bool) {
        self.trainable[partition.slot()] = trainable;
    }

    pub fn is_trainable(&self, partition: Partition) -> bool {
        self.trainable[partition.slot()]
    }

    /// Scalar parameter count of one partition.
    pub fn count(&self, partition: Partition) -> usize {
        self.entries
            .iter()
            .filter(|e| e.partition == partition)
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// SHA-256 over names, shapes and raw sample bits of one partition.
    pub fn partition_hash(&self, partition: Partition) -> String {
        let mut h = Sha256::new();
        for e in self.entries.iter().filter(|e| e.partition == partition) {
            h.update((e.name.len() as u64).to_le_bytes());
            h.update(e.name.as_bytes());
            for &d in e.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in e.value.data() {
                h.update(v.as_f64().to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// A store holding only the tensors of `partition`.
    pub fn subset(&self, partition: Partition) -> ParameterStore<T> {
        let mut out = ParameterStore::new();
        for e in self.entries.iter().filter(|e| e.partition == partition) {
            out.insert(e.name.clone(), e.partition, e.value.clone())
                .expect("names are unique in the source store");
        }
        out.trainable = self.trainable;
        out
    }

    /// Overwrite tensors of `partition` with same-named tensors from `src`.
    ///
    /// Every `src` tensor of that partition must exist here with the same
    /// shape, and every local tensor of that partition must be present in
    /// `src`; otherwise the name diff is reported.
    pub fn load_partition(&mut self, src: &ParameterStore<T>, partition: Partition) -> Result<()> {
        let theirs: Vec<&ParamEntry<T>> = src.entries.iter().filter(|e| e.partition == partition).collect();
        let missing: Vec<&str> = self
            .entries
            .iter()
            .filter(|e| e.partition == partition && src.by_name(&e.name).is_none())
            .map(|e| e.name.as_str())
            .collect();
        let unexpected: Vec<&str> = theirs
            .iter()
            .filter(|e| self.by_name(&e.name).is_none())
            .map(|e| e.name.as_str())
            .collect();
        if !missing.is_empty() || !unexpected.is_empty() {
            return Err(Error::CheckpointMismatch(format!(
                "{partition} parameters differ; missing from checkpoint: {missing:?}; not in model: {unexpected:?}"
            )));
        }
        for e in theirs {
            let i = self.index[&e.name];
            let local = &mut self.entries[i];
            if local.value.shape() != e.value.shape() || local.partition != partition {
                return Err(Error::CheckpointMismatch(format!(
                    "`{}`: checkpoint shape {:?} vs model shape {:?}",
                    e.name,
                    e.value.shape(),
                    local.value.shape()
                )));
            }
            local.value = e.value.clone();
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    partition: e.partition,
                    value: e.value.cast(),
                })
                .collect(),
            index: self.index.clone(),
            trainable: self.trainable,
        }
    }

    /// Place every tensor on `graph` as a leaf; trainable partitions require grad.
    pub fn bind(&self, graph: &mut Graph<T>) -> Bound {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|e| graph.leaf(e.value.clone(), self.is_trainable(e.partition)))
                .collect(),
        }
    }

    /// Place every tensor on `graph` as a constant, for inference.
    pub fn bind_constants(&self, graph: &mut Graph<T>) -> Bound {
        Bound {
            vars: self.entries.iter().map(|e| graph.constant(e.value.clone())).collect(),
        }
    }
}

/// Graph leaves for a store's tensors, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wrap externally built leaves, one per store tensor in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Per-tensor gradients after `graph.backward`; `None` for frozen tensors.
    pub fn grads<T: Real>(&self, graph: &Graph<T>) -> Vec<Option<Tensor<T>>> {
        self.vars.iter().map(|&v| graph.grad(v)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with the given std, resampled outside ±2 std.
    TruncNormal(f64),
    /// Truncated normal with std `sqrt(2 / fan_in)`.
    Kaiming { fan_in: usize },
}

pub(crate) fn trunc_normal<R: Rng>(rng: &mut R, std: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

impl Init {
    pub fn sample<T: Real, R: Rng>(self, rng: &mut R, shape: &[usize]) -> Tensor<T> {
        match self {
            Init::Zeros => Tensor::zeros(shape.to_vec()),
            Init::Ones => Tensor::full(shape.to_vec(), T::one()),
            Init::TruncNormal(std) => {
                Tensor::from_fn(shape.to_vec(), |_| T::from_f64_lossy(trunc_normal(rng, std)))
            }
            Init::Kaiming { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                Tensor::from_fn(shape.to_vec(), |_| T::from_f64_lossy(trunc_normal(rng, std)))
            }
        }
    }
}
