use std::collections::HashMap;
use std::ops::{Deref, DerefMut};

use super::dense::DenseTensor;
use super::real::Real;
use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::SeedRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u32);

impl ParamId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Named trainable tensors, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T = f32> {
    names: Vec<String>,
    tensors: Vec<DenseTensor<T>>,
    lookup: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, t: DenseTensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("parameter {name} registered twice")));
        }
        let id = ParamId(self.tensors.len() as u32);
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(t);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &DenseTensor<T> {
        &self.tensors[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DenseTensor<T> {
        &mut self.tensors[id.index()]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.index()]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len() as u32).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &DenseTensor<T>)> {
        self.ids().map(move |id| (id, self.names[id.index()].as_str(), &self.tensors[id.index()]))
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            lookup: self.lookup.clone(),
        }
    }

    pub fn to_named(&self) -> Vec<(String, DenseTensor<T>)> {
        self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect()
    }

    /// Overwrites every parameter from `named`; names and shapes must match.
    pub fn load_named(&mut self, named: &[(String, DenseTensor<T>)]) -> Result<()> {
        let by_name: HashMap<&str, &DenseTensor<T>> = named.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let src = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::format("ckpt", format!("missing parameter {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::format("ckpt", format!("{name}: shape {:?}, expected {:?}", src.shape(), t.shape())));
            }
            *t = (*src).clone();
        }
        Ok(())
    }
}

/// Registers parameters under dotted scope prefixes with seeded initialization.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore<f32>,
    rng: SeedRng,
    prefix: Vec<String>,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore<f32>, seed: u64) -> Self {
        ParamBuilder {
            store,
            rng: SeedRng::new(seed),
            prefix: Vec::new(),
        }
    }

    pub fn scoped<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        self.prefix.push(name.to_string());
        let out = f(self);
        self.prefix.pop();
        out
    }

    fn full_name(&self, name: &str) -> String {
        let mut s = self.prefix.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(name);
        s
    }

    pub fn tensor(&mut self, name: &str, t: DenseTensor<f32>) -> Result<ParamId> {
        let full = self.full_name(name);
        self.store.add(full, t)
    }

    /// Kaiming-uniform `[fan_in, fan_out]` weight, bound `sqrt(3 / fan_in)`.
    pub fn weight(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let bound = (3.0 / fan_in.max(1) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| self.rng.uniform_in(-bound, bound) as f32).collect();
        self.tensor(name, DenseTensor::new(vec![fan_in, fan_out], data)?)
    }

    pub fn zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<ParamId> {
        self.tensor(name, DenseTensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: Vec<usize>) -> Result<ParamId> {
        self.tensor(name, DenseTensor::full(shape, 1.0))
    }

    pub fn rng(&mut self) -> &mut SeedRng {
        &mut self.rng
    }
}

/// A tape bound to a parameter store. Parameters are recorded lazily on
/// first use.
pub struct Graph<'p, T: Real = f32> {
    tape: Tape<T>,
    store: &'p ParamStore<T>,
    bound: Vec<Option<Var>>,
    trainable: bool,
}

impl<'p, T: Real> Graph<'p, T> {
    /// Parameters are differentiable leaves.
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Graph {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            trainable: true,
        }
    }

    /// Parameters are constants; no gradients are tracked.
    pub fn inference(store: &'p ParamStore<T>) -> Self {
        Graph {
            trainable: false,
            ..Self::new(store)
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.index()] {
            return v;
        }
        let t = self.store.get(id).clone();
        let v = if self.trainable {
            self.tape.leaf(t.with_grad())
        } else {
            self.tape.constant(t)
        };
        self.bound[id.index()] = Some(v);
        v
    }

    /// Records an input tensor given in `f32`.
    pub fn input(&mut self, t: &DenseTensor<f32>) -> Var {
        self.tape.constant(t.cast())
    }

    pub fn backward(self, loss: Var) -> Result<ParamGrads<T>> {
        let mut grads = self.tape.backward(loss)?;
        let per_param = self
            .bound
            .iter()
            .map(|b| b.and_then(|v| grads.take(v)))
            .collect();
        Ok(ParamGrads { per_param, tape: grads })
    }
}

impl<'p, T: Real> Deref for Graph<'p, T> {
    type Target = Tape<T>;

    fn deref(&self) -> &Tape<T> {
        &self.tape
    }
}

impl<'p, T: Real> DerefMut for Graph<'p, T> {
    fn deref_mut(&mut self) -> &mut Tape<T> {
        &mut self.tape
    }
}

/// Gradients indexed by [`ParamId`]; unused parameters have none.
#[derive(Debug)]
pub struct ParamGrads<T> {
    per_param: Vec<Option<DenseTensor<T>>>,
    tape: Gradients<T>,
}

impl<T: Real> ParamGrads<T> {
    pub fn get(&self, id: ParamId) -> Option<&DenseTensor<T>> {
        self.per_param.get(id.index()).and_then(|g| g.as_ref())
    }

    pub fn tape(&self) -> &Gradients<T> {
        &self.tape
    }

    /// Adds `other` into `self`, for summing per-sample gradients.
    pub fn accumulate(&mut self, other: ParamGrads<T>) {
        for (mine, theirs) in self.per_param.iter_mut().zip(other.per_param) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => {
                    for (a, b) in m.data_mut().iter_mut().zip(t.data()) {
                        *a += *b;
                    }
                }
                (None, Some(t)) => *mine = Some(t),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        let s = T::lit(s);
        for g in self.per_param.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.per_param
            .iter()
            .flatten()
            .flat_map(|g| g.data().iter())
            .map(|v| v.f64() * v.f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.per_param.iter().flatten().all(|g| g.all_finite())
    }
}
