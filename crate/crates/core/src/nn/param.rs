use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Frozen entries (e.g. per-task constants saved with a checkpoint) are
    /// skipped by optimizers and gradient checks.
    pub trainable: bool,
}

/// Named parameters of one model, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, NnError> {
        self.insert(name.into(), value, true)
    }

    pub fn add_frozen(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, NnError> {
        self.insert(name.into(), value, false)
    }

    fn insert(&mut self, name: String, value: Tensor, trainable: bool) -> Result<ParamId, NnError> {
        if self.by_name.contains_key(&name) {
            return Err(NnError::DuplicateParameter(name));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad,
            trainable,
        });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.by_name(name).map(|p| &p.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of trainable scalars.
    pub fn trainable_scalars(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Replaces a parameter's value, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<(), NnError> {
        let id = self
            .id(name)
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))?;
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(NnError::ShapeMismatch {
                op: "set_value",
                left: p.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }
}

/// Seed for a parameter derived from the model seed and the parameter name,
/// so identically named parameters initialize identically across
/// architectures.
pub fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, folded with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn normal_tensor(shape: &[usize], std: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let mut t = Tensor::zeros(shape);
    if std > 0.0 {
        let dist = Normal::new(0.0, std).expect("positive std");
        for v in t.data_mut().iter_mut().take(n) {
            *v = dist.sample(&mut rng) as f32;
        }
    }
    t
}

/// He-normal weights, `std = sqrt(2 / fan_in)`.
pub fn he_normal(fan_in: usize, fan_out: usize, seed: u64) -> Tensor {
    normal_tensor(&[fan_in, fan_out], (2.0 / fan_in as f64).sqrt(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(
            s.add("w", Tensor::zeros(&[2])),
            Err(NnError::DuplicateParameter(_))
        ));
    }

    #[test]
    fn grads_match_value_shapes() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::zeros(&[3, 4])).unwrap();
        s.add_frozen("b", Tensor::zeros(&[2])).unwrap();
        for p in s.iter() {
            assert_eq!(p.grad.shape(), p.value.shape());
        }
        assert_eq!(s.trainable_scalars(), 12);
    }

    #[test]
    fn name_keyed_init_is_stable() {
        let a = he_normal(4, 3, name_seed(5, "expert.0.layer0.weight"));
        let b = he_normal(4, 3, name_seed(5, "expert.0.layer0.weight"));
        let c = he_normal(4, 3, name_seed(5, "expert.1.layer0.weight"));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
