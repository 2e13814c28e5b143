use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autograd::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, init: Init) -> Self {
        Self { name: name.into(), shape, init }
    }

    /// Weight matrix `[fan_in, fan_out]` scaled by fan-in.
    pub fn weight(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Self::new(name, vec![fan_in, fan_out], Init::Uniform(1.0 / (fan_in as f64).sqrt()))
    }
}

/// Named trainable arrays, iterated in name order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self { tensors: BTreeMap::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    /// Draws every parameter from one seeded stream in `specs` order.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for spec in specs {
            let n: usize = spec.shape.iter().product();
            let data: Vec<T> = match spec.init {
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
                Init::Uniform(bound) => {
                    (0..n).map(|_| T::from_f64_lossy(rng.gen_range(-bound..=bound))).collect()
                }
            };
            tensors.insert(spec.name.clone(), Tensor::new(spec.shape.clone(), data));
        }
        Self { tensors }
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor<T>>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Number of scalar trainable values.
    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// SHA-256 over names, shapes and little-endian `f64` values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update(name.as_bytes());
            for d in &t.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in &t.data {
                h.update(v.to_f64_lossy().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_linear_and_embedding() {
        let lin = [ParamSpec::weight("w", 4, 3), ParamSpec::new("b", vec![3], Init::Zeros)];
        assert_eq!(ParamStore::<f32>::init(&lin, 0).count(), 15);
        let emb = [ParamSpec::new("e", vec![6, 8], Init::Uniform(1.0))];
        assert_eq!(ParamStore::<f32>::init(&emb, 0).count(), 48);
    }

    #[test]
    fn init_is_seeded() {
        let specs = [ParamSpec::weight("w", 8, 8)];
        let a = ParamStore::<f32>::init(&specs, 1);
        assert_eq!(a, ParamStore::<f32>::init(&specs, 1));
        assert_ne!(a, ParamStore::<f32>::init(&specs, 2));
        assert_eq!(a.digest(), ParamStore::<f32>::init(&specs, 1).digest());
        let bound = 1.0 / 8f32.sqrt();
        assert!(a.get("w").unwrap().data.iter().all(|v| v.abs() <= bound));
    }
}
