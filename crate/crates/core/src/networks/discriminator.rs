use rand_chacha::ChaCha8Rng;

use super::layers::{maybe_norm, Conv2d, InitScheme, KERNEL, PAD, STRIDE};
use super::NetworkConfig;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Fully convolutional critic producing an unsquashed patch score map.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub name: String,
    pub layers: Vec<Conv2d>,
    pub input_hw: (usize, usize),
    pub slope: f32,
}

impl Discriminator {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input_hw: (usize, usize),
        cfg: &NetworkConfig,
    ) -> Self {
        let init = InitScheme::Normal { std: cfg.init_std };
        let mut in_ch = 3;
        let layers = cfg
            .discriminator_channels
            .iter()
            .enumerate()
            .map(|(i, &out)| {
                let conv = Conv2d::new(store, rng, &format!("{name}.{i}"), in_ch, out, KERNEL, STRIDE, PAD, 1, init);
                in_ch = out;
                conv
            })
            .collect();
        Discriminator {
            name: name.to_string(),
            layers,
            input_hw,
            slope: cfg.leaky_slope,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, conv) in self.layers.iter().enumerate() {
            h = conv.forward(g, h);
            if i != last {
                h = maybe_norm(g, h, i != 0);
                h = g.leaky_relu(h, self.slope);
            }
        }
        h
    }

    /// Score map for a `[n, 3, H, W]` batch.
    pub fn discriminator_forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        if x.hw() != self.input_hw {
            return Err(Error::shape(
                format!("{} input", self.name),
                format!("{}x{}", self.input_hw.0, self.input_hw.1),
                format!("{}x{}", x.h(), x.w()),
            ));
        }
        let mut g = Graph::inference(store);
        let xv = g.input(x.clone());
        let out = self.forward(&mut g, xv);
        Ok(g.value(out).clone())
    }

    /// Scalar critic value: mean of the score map.
    pub fn critic_value(&self, store: &ParamStore, x: &Tensor) -> Result<f32> {
        Ok(self.discriminator_forward(store, x)?.mean())
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Conv2d::params).collect()
    }
}
