//! Named parameter storage and deterministic initialisation.

use std::collections::HashMap;
use std::ops::Index;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Standard deviation of the truncated-normal weight initialisation.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameters in registration order, addressable by id or unique name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), by_name: HashMap::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter name {name}")));
        }
        self.by_name.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(self.tensors.len() - 1))
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

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names.iter().zip(&self.tensors).enumerate().map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Registers every parameter as a borrowed, gradient-requiring leaf.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, T>) -> Bound {
        Bound(self.tensors.iter().map(|t| tape.param(t)).collect())
    }

    /// Sets every parameter whose name satisfies `pred` to zero.
    pub fn zero_where(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            if pred(name) {
                t.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }
}

/// Tape handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wraps handles bound in store order, e.g. leaves created by a gradient check.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Creates named parameters under a dotted prefix. Values are drawn in f64
/// from a seeded ChaCha stream so every precision gets the same weights.
/// Without an RNG all tensors are zero-filled (used when loading).
pub struct ParamBuilder {
    store: ParamStore<f64>,
    prefix: Vec<String>,
    rng: Option<ChaCha8Rng>,
    error: Option<Error>,
}

impl ParamBuilder {
    pub fn seeded(seed: u64) -> Self {
        ParamBuilder { store: ParamStore::new(), prefix: Vec::new(), rng: Some(ChaCha8Rng::seed_from_u64(seed)), error: None }
    }

    pub fn zeroed() -> Self {
        ParamBuilder { store: ParamStore::new(), prefix: Vec::new(), rng: None, error: None }
    }

    pub fn nested<R>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(name.into());
        let r = f(self);
        self.prefix.pop();
        r
    }

    fn full_name(&self, name: &str) -> String {
        let mut s = self.prefix.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(name);
        s
    }

    fn add(&mut self, name: &str, t: Tensor<f64>) -> ParamId {
        let full = self.full_name(name);
        match self.store.add(full, t) {
            Ok(id) => id,
            Err(e) => {
                self.error.get_or_insert(e);
                ParamId(usize::MAX)
            }
        }
    }

    pub fn custom(&mut self, name: &str, shape: &[usize], mut f: impl FnMut(&mut ChaCha8Rng) -> f64) -> ParamId {
        let t = match self.rng.as_mut() {
            Some(rng) => Tensor::from_fn(shape, |_| f(rng)),
            None => Tensor::zeros(shape),
        };
        self.add(name, t)
    }

    /// Normal(0, 0.02) truncated to two standard deviations.
    pub fn trunc_normal(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.custom(name, shape, |rng| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break z * INIT_STD;
            }
        })
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let t = if self.rng.is_some() { Tensor::ones(shape) } else { Tensor::zeros(shape) };
        self.add(name, t)
    }

    pub fn finish<T: Scalar>(self) -> Result<ParamStore<T>> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.store.cast()),
        }
    }
}
