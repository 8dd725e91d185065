//! Flat, stably indexed parameter storage.
//!
//! Every trainable scalar of a network lives in one contiguous vector. The
//! [`ParamLayout`] records which slice belongs to which named tensor, so a
//! global index is simply a position in that vector. Masks, optimizers, loss
//! landscape directions and checkpoints all address parameters this way.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamRole {
    Weight,
    Bias,
}

/// One named tensor inside the flat store.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
    /// Index of the owning layer in the network's layer list.
    pub layer: usize,
    /// First global index of this tensor.
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// Number of output units (filters or rows); dimension 0 of the tensor.
    pub fn units(&self) -> usize {
        self.shape[0]
    }

    /// Scalars per unit: fan-in for a weight, 1 for a bias.
    pub fn unit_len(&self) -> usize {
        self.len() / self.units()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamLayout {
    pub(crate) fn push(&mut self, name: String, shape: Vec<usize>, role: ParamRole, layer: usize) -> usize {
        let entry = ParamEntry {
            name,
            shape,
            role,
            layer,
            offset: self.total,
        };
        self.total += entry.len();
        self.entries.push(entry);
        self.entries.len() - 1
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &ParamEntry {
        &self.entries[i]
    }

    /// Total number of scalar parameters.
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Per-index flag: true where the scalar belongs to a weight tensor.
    pub fn weight_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.total];
        for e in self.entries.iter().filter(|e| e.role == ParamRole::Weight) {
            flags[e.range()].fill(true);
        }
        flags
    }
}

fn check_same(a: &Arc<ParamLayout>, b: &Arc<ParamLayout>, what: &str) -> Result<()> {
    if Arc::ptr_eq(a, b) || a == b {
        Ok(())
    } else {
        Err(Error::Structure(format!(
            "{what}: parameter layouts differ ({} vs {} scalars)",
            a.total(),
            b.total()
        )))
    }
}

/// All trainable parameters of a network, in canonical flattened order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<T = f32> {
    layout: Arc<ParamLayout>,
    values: Vec<T>,
}

impl<T: Real> ParameterStore<T> {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let values = vec![T::zero(); layout.total()];
        ParameterStore { layout, values }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::Structure(format!(
                "layout holds {} parameters, got {} values",
                layout.total(),
                values.len()
            )));
        }
        Ok(ParameterStore { layout, values })
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, entry: usize) -> &[T] {
        &self.values[self.layout.entry(entry).range()]
    }

    pub fn tensor_mut(&mut self, entry: usize) -> &mut [T] {
        let range = self.layout.entry(entry).range();
        &mut self.values[range]
    }

    pub fn by_name(&self, name: &str) -> Option<&[T]> {
        self.layout.find(name).map(|e| &self.values[e.range()])
    }

    pub fn check_mirrors(&self, grads: &Gradients<T>) -> Result<()> {
        check_same(&self.layout, &grads.layout, "gradients")
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            layout: Arc::clone(&self.layout),
            values: self.values.iter().map(|v| U::of_f64(v.as_f64())).collect(),
        }
    }
}

/// Gradient of a scalar loss with respect to every parameter; mirrors
/// [`ParameterStore`] index for index.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T = f32> {
    layout: Arc<ParamLayout>,
    values: Vec<T>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let values = vec![T::zero(); layout.total()];
        Gradients { layout, values }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::Structure(format!(
                "layout holds {} parameters, got {} gradient values",
                layout.total(),
                values.len()
            )));
        }
        Ok(Gradients { layout, values })
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn tensor(&self, entry: usize) -> &[T] {
        &self.values[self.layout.entry(entry).range()]
    }

    /// Disjoint mutable views of a layer's weight and bias tensors.
    pub(crate) fn weight_bias_mut(&mut self, weight: usize, bias: usize) -> (&mut [T], &mut [T]) {
        let w = self.layout.entry(weight).range();
        let b = self.layout.entry(bias).range();
        assert_eq!(w.end, b.start, "bias must directly follow its weight");
        let (head, tail) = self.values[w.start..b.end].split_at_mut(w.len());
        (head, tail)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Arc<ParamLayout> {
        let mut l = ParamLayout::default();
        l.push("a.weight".into(), vec![2, 3], ParamRole::Weight, 0);
        l.push("a.bias".into(), vec![2], ParamRole::Bias, 0);
        Arc::new(l)
    }

    #[test]
    fn offsets_are_dense() {
        let l = layout();
        assert_eq!(l.entry(0).range(), 0..6);
        assert_eq!(l.entry(1).range(), 6..8);
        assert_eq!(l.total(), 8);
        assert_eq!(l.entry(0).unit_len(), 3);
        assert_eq!(
            l.weight_flags(),
            vec![true, true, true, true, true, true, false, false]
        );
    }

    #[test]
    fn gradients_must_mirror_store() {
        let store = ParameterStore::<f32>::zeros(layout());
        assert!(store.check_mirrors(&Gradients::zeros(layout())).is_ok());

        let mut other = ParamLayout::default();
        other.push("b.weight".into(), vec![4], ParamRole::Weight, 0);
        let err = store.check_mirrors(&Gradients::zeros(Arc::new(other)));
        assert!(matches!(err, Err(Error::Structure(_))));
    }
}
