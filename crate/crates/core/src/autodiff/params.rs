use indexmap::IndexMap;

use super::tape::{BoundParams, Gradients};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Named learnable arrays of one network plus a parallel gradient buffer.
///
/// Insertion order is preserved, which keeps serialization and optimizer
/// iteration deterministic.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<R> {
    entries: IndexMap<String, Tensor<R>>,
    grads: IndexMap<String, Tensor<R>>,
}

impl<R: Real> Default for ParameterSet<R> {
    fn default() -> Self {
        ParameterSet {
            entries: IndexMap::new(),
            grads: IndexMap::new(),
        }
    }
}

impl<R: Real> ParameterSet<R> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<R>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name {name:?}")));
        }
        self.grads
            .insert(name.clone(), Tensor::zeros(value.shape()));
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<R>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name:?}")))
    }

    /// Replaces a value in place; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor<R>) -> Result<()> {
        let slot = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name:?}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::config(format!(
                "parameter {name:?}: shape {:?} != {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor<R>> {
        self.grads
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name:?}")))
    }

    /// Mutable gradient buffer, for feeding externally computed gradients.
    pub fn grad_mut(&mut self, name: &str) -> Option<&mut Tensor<R>> {
        self.grads.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<R>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut_with_grads(
        &mut self,
    ) -> impl Iterator<Item = (&str, &mut Tensor<R>, &mut Tensor<R>)> {
        self.entries
            .iter_mut()
            .zip(self.grads.values_mut())
            .map(|((k, v), g)| (k.as_str(), v, g))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.values_mut() {
            g.fill(R::zero());
        }
    }

    /// Adds the gradients computed for `bound` into this set's buffers.
    /// Entries the loss did not reach are left untouched (zero after
    /// [`zero_grad`](Self::zero_grad)).
    pub fn accumulate(&mut self, bound: &BoundParams, grads: &Gradients<R>) -> Result<()> {
        for (name, var) in bound.iter() {
            let slot = self
                .grads
                .get_mut(name)
                .ok_or_else(|| Error::config(format!("bound parameter {name:?} not in set")))?;
            if let Some(g) = grads.get(var) {
                slot.add_assign(g);
            }
        }
        Ok(())
    }

    fn check_compatible(&self, other: &ParameterSet<R>) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::config(format!(
                "parameter sets differ in size: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((a, ta), (b, tb)) in self.entries.iter().zip(&other.entries) {
            if a != b || ta.shape() != tb.shape() {
                return Err(Error::config(format!(
                    "parameter mismatch: {a:?}{:?} vs {b:?}{:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }

    /// Exponential moving average toward `source`:
    /// `self <- tau * source + (1 - tau) * self`, entry by entry.
    pub fn ema_blend(&mut self, source: &ParameterSet<R>, tau: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::config(format!("EMA tau {tau} outside [0, 1]")));
        }
        self.check_compatible(source)?;
        let t = R::lit(tau);
        let keep = R::lit(1.0 - tau);
        for (dst, src) in self.entries.values_mut().zip(source.entries.values()) {
            for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = t * s + keep * *d;
            }
        }
        Ok(())
    }

    /// Overwrites every value with the matching entry of `source`.
    pub fn copy_from(&mut self, source: &ParameterSet<R>) -> Result<()> {
        self.check_compatible(source)?;
        for (dst, src) in self.entries.values_mut().zip(source.entries.values()) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Largest elementwise distance to another set with the same layout.
    pub fn max_abs_diff(&self, other: &ParameterSet<R>) -> Result<R> {
        self.check_compatible(other)?;
        Ok(self
            .entries
            .values()
            .zip(other.entries.values())
            .fold(R::zero(), |m, (a, b)| m.max(a.max_abs_diff(b))))
    }

    pub fn cast<S: Real>(&self) -> ParameterSet<S> {
        let mut out = ParameterSet::new();
        for (k, v) in &self.entries {
            out.insert(k.clone(), v.cast()).expect("names unique");
        }
        out
    }
}
