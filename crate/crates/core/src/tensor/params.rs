use std::collections::HashMap;

use rand::Rng;

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradients for a subset of the parameters of one store, produced by a
/// single backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    entries: Vec<(ParamId, Vec<T>)>,
}

impl<T: Real> Gradients<T> {
    pub(crate) fn push(&mut self, id: ParamId, grad: Vec<T>) {
        match self.entries.iter_mut().find(|(p, _)| *p == id) {
            Some((_, g)) => {
                for (a, b) in g.iter_mut().zip(grad) {
                    *a += b;
                }
            }
            None => self.entries.push((id, grad)),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.entries.iter().find(|(p, _)| *p == id).map(|(_, g)| g.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.entries.iter().map(|(p, g)| (*p, g.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Named trainable tensors with their accumulated gradients.
#[derive(Clone, Debug)]
pub struct ParameterStore<T> {
    names: Vec<String>,
    index: HashMap<String, ParamId>,
    values: Vec<Tensor<T>>,
    grads: Vec<Vec<T>>,
    pending: usize,
    steps: u64,
}

impl<T: Real> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            names: Vec::new(),
            index: HashMap::new(),
            values: Vec::new(),
            grads: Vec::new(),
            pending: 0,
            steps: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Argument(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.values.len());
        self.grads.push(vec![T::zero(); value.len()]);
        self.values.push(value);
        self.index.insert(name.clone(), id);
        self.names.push(name);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| &self.values[id.0])
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    /// Direct mutable access, for finite-difference probes and loading.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.grads[id.0]
    }

    /// Number of backward passes accumulated since the last step.
    pub fn pending(&self) -> usize {
        self.pending
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Adds one backward pass worth of gradients.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.iter() {
            for (acc, v) in self.grads[id.0].iter_mut().zip(g) {
                *acc += *v;
            }
        }
        self.pending += 1;
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
        self.pending = 0;
    }

    /// Plain SGD on the mean of the accumulated gradients, then zeroes them.
    pub fn sgd_step(&mut self, lr: f64) {
        let denom = self.pending.max(1) as f64;
        let scale = T::of(lr / denom);
        for (value, grad) in self.values.iter_mut().zip(&self.grads) {
            for (w, g) in value.data_mut().iter_mut().zip(grad) {
                *w -= scale * *g;
            }
        }
        self.zero_grad();
        self.steps += 1;
    }

    /// L2 norm per parameter, for diagnostics.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.iter().map(|(n, t)| (n.to_string(), t.norm())).collect()
    }

    /// FNV-1a over the bit patterns of every value, in insertion order.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (name, t) in self.iter() {
            eat(name.as_bytes());
            for v in t.data() {
                eat(&v.as_f64().to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            names: self.names.clone(),
            index: self.index.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            grads: self.grads.iter().map(|g| vec![U::zero(); g.len()]).collect(),
            pending: 0,
            steps: self.steps,
        }
    }
}

/// Uniform initialization in `±sqrt(1/fan_in)`.
pub fn fan_in_uniform<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}
