//! Parameter storage, deterministic initialization and the Adam optimizer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Flat, ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    /// Zero-mean normal with fixed standard deviation.
    Normal(f32),
    /// Zero-mean normal with std `sqrt(2 / fan_in)`.
    He { fan_in: usize },
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Shape, init: Init, rng: &mut ChaCha8Rng) -> ParamId {
        let mut value = Tensor::zeros(shape);
        let std = match init {
            Init::Zeros => None,
            Init::Normal(s) => Some(s),
            Init::He { fan_in } => Some((2.0 / fan_in.max(1) as f32).sqrt()),
        };
        if let Some(std) = std {
            let normal = Normal::new(0.0f32, std).expect("positive std");
            value.data_mut().iter_mut().for_each(|v| *v = normal.sample(rng));
        }
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Number of scalar parameters in `ids`.
    pub fn count(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.get(id).len()).sum()
    }

    /// SHA-256 over names, shapes and raw bits of the listed parameters.
    pub fn checksum(&self, ids: &[ParamId]) -> String {
        let mut h = Sha256::new();
        for &id in ids {
            let p = &self.params[id.0];
            h.update(p.name.as_bytes());
            for d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Seeded generator for one named stream.
pub fn stream_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Sparse gradient set keyed by parameter.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads {
    grads: Vec<Option<Tensor>>,
}

impl ParamGrads {
    pub fn new(len: usize) -> Self {
        ParamGrads { grads: vec![None; len] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor, scale: f32) {
        if id.0 >= self.grads.len() {
            self.grads.resize(id.0 + 1, None);
        }
        match &mut self.grads[id.0] {
            Some(t) => t.scaled_add_assign(g, scale),
            slot @ None => {
                *slot = Some(if scale == 1.0 { g.clone() } else { g.map(|v| v * scale) });
            }
        }
    }

    /// `self += scale * other`.
    pub fn merge(&mut self, other: &ParamGrads, scale: f32) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g, scale);
            }
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|_| ParamId(i)))
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Adam over a fixed subset of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub ids: Vec<ParamId>,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore, ids: Vec<ParamId>) -> Self {
        let m: Vec<Tensor> = ids.iter().map(|&id| Tensor::zeros(store.get(id).shape())).collect();
        Adam {
            config,
            v: m.clone(),
            m,
            ids,
            step: 0,
        }
    }

    /// Apply one update. Parameters without a gradient are left untouched.
    pub fn update(&mut self, store: &mut ParamStore, grads: &ParamGrads) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - (beta1 as f64).powi(self.step as i32);
        let bc2 = 1.0 - (beta2 as f64).powi(self.step as i32);
        let step_size = (lr as f64 * bc2.sqrt() / bc1) as f32;
        for (slot, &id) in self.ids.iter().enumerate() {
            let Some(g) = grads.get(id) else { continue };
            let m = self.m[slot].data_mut();
            let v = self.v[slot].data_mut();
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                p[i] -= step_size * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_parameters() {
        let build = || {
            let mut store = ParamStore::new();
            let mut rng = stream_rng(3, "net");
            store.add("w", [4, 3, 2, 2], Init::Normal(0.02), &mut rng);
            store
        };
        let a = build();
        let b = build();
        assert_eq!(a.checksum(&[ParamId(0)]), b.checksum(&[ParamId(0)]));
    }

    #[test]
    fn adam_skips_parameters_without_gradient() {
        let mut rng = stream_rng(1, "x");
        let mut store = ParamStore::new();
        let a = store.add("a", [1, 1, 1, 2], Init::Normal(1.0), &mut rng);
        let b = store.add("b", [1, 1, 1, 2], Init::Normal(1.0), &mut rng);
        let before = store.checksum(&[b]);
        let mut adam = Adam::new(AdamConfig::default(), &store, vec![a, b]);
        let mut grads = ParamGrads::new(store.len());
        grads.accumulate(a, &Tensor::full([1, 1, 1, 2], 1.0), 1.0);
        let a_before = store.get(a).clone();
        adam.update(&mut store, &grads);
        assert_eq!(store.checksum(&[b]), before);
        // first Adam step moves by ~lr against the gradient sign
        for (new, old) in store.get(a).data().iter().zip(a_before.data()) {
            assert!((old - new - 1e-4).abs() < 1e-6);
        }
    }
}
