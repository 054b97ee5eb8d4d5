//! Named parameter storage and per-tape binding.

use std::cell::RefCell;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::init::uniform_fan_in;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{Scalar, TensorData};

/// All learned parameters of a model, keyed by path-style names. The
/// `BTreeMap` keeps iteration in sorted name order, which fixes the
/// optimizer update order and the checkpoint layout.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, TensorData<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: TensorData<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::config(format!("parameter {name} registered twice")));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    /// Register a parameter with uniform `+-sqrt(1/fan_in)` values.
    pub fn init_uniform(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        seed: u64,
    ) -> Result<()> {
        let name = name.into();
        let n: usize = shape.iter().product();
        let values = uniform_fan_in(seed, &name, fan_in, n);
        self.insert(name, TensorData::from_f64_slice(shape, &values)?)
    }

    /// Register an all-zero parameter.
    pub fn init_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Result<()> {
        self.insert(name, TensorData::zeros(shape)?)
    }

    pub fn get(&self, name: &str) -> Result<&TensorData<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut TensorData<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &TensorData<T>)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.entries.values().map(|t| t.data.len()).sum()
    }

    /// Convert every value through `f64` (checkpoint loading across
    /// precisions).
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        TensorData {
                            shape: v.shape.clone(),
                            data: v.data.iter().map(|x| U::from_f64(x.as_f64())).collect(),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Binds store parameters to leaves of one tape, each at most once.
pub struct Session<'a, T> {
    pub tape: &'a Tape<T>,
    store: &'a ParamStore<T>,
    bound: RefCell<BTreeMap<String, Var>>,
}

impl<'a, T: Scalar> Session<'a, T> {
    pub fn new(tape: &'a Tape<T>, store: &'a ParamStore<T>) -> Self {
        Session {
            tape,
            store,
            bound: RefCell::new(BTreeMap::new()),
        }
    }

    /// Leaf node carrying the current value of parameter `name`.
    pub fn param(&self, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.borrow().get(name) {
            return Ok(*v);
        }
        let value = self.store.get(name)?.clone();
        let var = self.tape.leaf(value);
        self.bound.borrow_mut().insert(name.to_string(), var);
        Ok(var)
    }

    /// `(name, leaf)` pairs bound so far, in name order.
    pub fn bound_params(&self) -> Vec<(String, Var)> {
        self.bound
            .borrow()
            .iter()
            .map(|(k, v)| (k.clone(), *v))
            .collect()
    }

    /// Collect gradients for every bound parameter.
    pub fn param_gradients(&self, grads: &Gradients<T>) -> BTreeMap<String, Vec<T>> {
        self.bound
            .borrow()
            .iter()
            .map(|(name, var)| {
                let len = self.tape.value_len(*var);
                (name.clone(), grads.grad(*var, len))
            })
            .collect()
    }
}
