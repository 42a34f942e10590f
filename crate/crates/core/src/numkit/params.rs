//! Named registry of trainable arrays with gradient and optimizer slots.

use std::collections::BTreeMap;

use rand::Rng;

use super::matrix::{Matrix, Real};
use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T: Real> {
    pub value: Matrix<T>,
    pub grad: Matrix<T>,
    /// Adam first moment.
    pub m: Matrix<T>,
    /// Adam second moment.
    pub v: Matrix<T>,
}

impl<T: Real> ParamEntry<T> {
    fn new(value: Matrix<T>) -> Self {
        let (r, c) = value.shape();
        Self { value, grad: Matrix::zeros(r, c), m: Matrix::zeros(r, c), v: Matrix::zeros(r, c) }
    }
}

/// Parameters keyed by dotted names (`graph.l0.w`, `head.cls.w`, ...). Iteration
/// order is lexicographic so every pass over the store is deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore<T: Real> {
    entries: BTreeMap<String, ParamEntry<T>>,
    /// Number of optimizer steps taken.
    pub step: u64,
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new(), step: 0 }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name, ParamEntry::new(value));
        Ok(())
    }

    /// Uniform Glorot initialization for a `fan_in × fan_out` weight.
    pub fn insert_glorot<R: Rng>(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Result<()> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let m = Matrix::from_fn(fan_in, fan_out, |_, _| T::lit(rng.random_range(-limit..limit)));
        self.insert(name, m)
    }

    pub fn insert_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<()> {
        self.insert(name, Matrix::zeros(rows, cols))
    }

    pub fn insert_filled(&mut self, name: &str, rows: usize, cols: usize, value: T) -> Result<()> {
        self.insert(name, Matrix::filled(rows, cols, value))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry<T>> {
        self.entries.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Matrix<T>> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Matrix<T>> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry<T>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry<T>)> {
        self.entries.iter_mut()
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

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.fill(T::zero());
        }
    }

    /// Copies every parameter onto `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        let vars = self.entries.iter().map(|(k, e)| (k.clone(), tape.leaf(e.value.clone()))).collect();
        Bound { vars }
    }

    /// Adds the gradients of the bound leaves into the store's gradient slots.
    pub fn accumulate(&mut self, bound: &Bound, grads: &Gradients<T>) {
        for (name, var) in &bound.vars {
            if let (Some(g), Some(e)) = (grads.get(*var), self.entries.get_mut(name)) {
                e.grad.add_assign(g);
            }
        }
    }

    /// Flat copy of all values in name order.
    pub fn flatten(&self) -> Vec<T> {
        self.entries.values().flat_map(|e| e.value.data().iter().copied()).collect()
    }

    pub fn flatten_grads(&self) -> Vec<T> {
        self.entries.values().flat_map(|e| e.grad.data().iter().copied()).collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn unflatten(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.scalar_count(), "unflatten length mismatch");
        let mut off = 0;
        for e in self.entries.values_mut() {
            let n = e.value.len();
            e.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        ParamEntry { value: e.value.cast(), grad: e.grad.cast(), m: e.m.cast(), v: e.v.cast() },
                    )
                })
                .collect(),
            step: self.step,
        }
    }
}

/// Tape handles for a bound [`ParameterStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Panics on an unknown name: parameter names are fixed at model construction.
    pub fn var(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_shapes_paired() {
        let mut s = ParameterStore::<f64>::new();
        s.insert("a", Matrix::zeros(2, 3)).unwrap();
        assert!(s.insert("a", Matrix::zeros(1, 1)).is_err());
        let e = s.get("a").unwrap();
        assert_eq!(e.grad.shape(), e.value.shape());
        assert_eq!(s.scalar_count(), 6);
    }

    #[test]
    fn flatten_roundtrip_and_grad_accumulation() {
        let mut s = ParameterStore::<f64>::new();
        s.insert("b", Matrix::row_vector(vec![1.0, 2.0])).unwrap();
        s.insert("a", Matrix::scalar(5.0)).unwrap();
        assert_eq!(s.flatten(), vec![5.0, 1.0, 2.0]);
        s.unflatten(&[6.0, 7.0, 8.0]);
        assert_eq!(s.value("b").unwrap().data(), &[7.0, 8.0]);

        let mut t = Tape::new();
        let b = s.bind(&mut t);
        let y = t.mul(b.var("a"), b.var("a"));
        let g = t.backward(y);
        s.accumulate(&b, &g);
        s.accumulate(&b, &g);
        assert_eq!(s.get("a").unwrap().grad.data(), &[24.0]);
        s.zero_grads();
        assert_eq!(s.flatten_grads(), vec![0.0; 3]);
    }
}
