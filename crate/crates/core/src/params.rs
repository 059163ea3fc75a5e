//! Named trainable tensors with gradient slots.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamId;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    #[serde(skip)]
    grads: Vec<Tensor>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.values == other.values
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.grads.push(Tensor::zeros(value.shape()));
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    /// Values for a graph to borrow alongside the grad slots it feeds.
    pub fn split_mut(&mut self) -> (&[Tensor], &mut [Tensor]) {
        (&self.values, &mut self.grads)
    }

    pub(crate) fn values_and_grads_mut(&mut self) -> (&mut [Tensor], &mut [Tensor]) {
        (&mut self.values, &mut self.grads)
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Replaces every value with the corresponding tensor of `snapshot`.
    pub fn restore(&mut self, snapshot: &[Tensor]) -> Result<()> {
        if snapshot.len() != self.values.len()
            || snapshot.iter().zip(&self.values).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::shape("restore", "snapshot does not match parameter layout"));
        }
        self.values.clone_from_slice(snapshot);
        Ok(())
    }

    /// Rebuilds the derived fields after deserialization.
    pub fn rebuild(&mut self) -> Result<()> {
        if self.names.len() != self.values.len() {
            return Err(Error::Data("parameter names and values differ in count".into()));
        }
        self.index = HashMap::with_capacity(self.names.len());
        for (i, n) in self.names.iter().enumerate() {
            if self.index.insert(n.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate parameter name '{n}'")));
            }
        }
        self.grads = self.values.iter().map(|v| Tensor::zeros(v.shape())).collect();
        Ok(())
    }
}

/// Uniform Glorot initialization, limit `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_unique() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(store.add("w", Tensor::zeros(&[3])).is_err());
        assert_eq!(store.id("w"), Some(ParamId(0)));
        assert_eq!(store.grad(ParamId(0)).shape(), &[2]);
    }

    #[test]
    fn glorot_respects_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = glorot_uniform(&[30, 20], 20, 30, &mut rng);
        let limit = (6.0f64 / 50.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() < limit));
    }

    #[test]
    fn serde_round_trip_rebuilds_index() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::vector(vec![1.0, 2.0])).unwrap();
        store.add("b", Tensor::scalar(3.0)).unwrap();
        let json = serde_json::to_string(&store).unwrap();
        let mut back: ParamStore = serde_json::from_str(&json).unwrap();
        back.rebuild().unwrap();
        assert_eq!(back, store);
        assert_eq!(back.id("b"), Some(ParamId(1)));
        assert_eq!(back.grads().len(), 2);
    }
}
