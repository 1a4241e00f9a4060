use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{maybe_norm, Conv2d, ConvTranspose2d, InitScheme, KERNEL, PAD, STRIDE};
use super::NetworkConfig;
use crate::autograd::{Graph, Var};
use crate::data_model::{DepthTile, ImageTile};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Translation direction of a generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    SourceToTarget,
    TargetToSource,
}

impl Direction {
    pub fn tag(self) -> &'static str {
        match self {
            Direction::SourceToTarget => "s2t",
            Direction::TargetToSource => "t2s",
        }
    }
}

/// Stack of stride-2 convolutions with leaky-rectifier activations.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub stages: Vec<Conv2d>,
    pub slope: f32,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: &NetworkConfig) -> Self {
        let mut in_ch = 3;
        let init = InitScheme::Normal { std: cfg.init_std };
        let stages = cfg
            .encoder_channels
            .iter()
            .enumerate()
            .map(|(i, &out)| {
                let conv = Conv2d::new(store, rng, &format!("{name}.{i}"), in_ch, out, KERNEL, STRIDE, PAD, 1, init);
                in_ch = out;
                conv
            })
            .collect();
        Encoder {
            stages,
            slope: cfg.leaky_slope,
        }
    }

    /// All stage activations, shallowest first.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Vec<Var> {
        let last = self.stages.len() - 1;
        let mut feats = Vec::with_capacity(self.stages.len());
        let mut h = x;
        for (i, conv) in self.stages.iter().enumerate() {
            h = conv.forward(g, h);
            h = maybe_norm(g, h, i != 0 && i != last);
            h = g.leaky_relu(h, self.slope);
            feats.push(h);
        }
        feats
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.stages.iter().flat_map(Conv2d::params).collect()
    }
}

/// Final squashing function of a decoder head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadActivation {
    /// Image residual in `[-1, 1]`.
    Tanh,
    /// Depth in `[0, 1]`.
    Sigmoid,
}

/// Mirror of the encoder with concatenated skip connections.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    /// Deepest first; the last entry produces the output channels.
    pub stages: Vec<ConvTranspose2d>,
    pub head: HeadActivation,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &NetworkConfig,
        out_ch: usize,
        head: HeadActivation,
    ) -> Self {
        let ch = &cfg.encoder_channels;
        let n = ch.len();
        let init = InitScheme::Normal { std: cfg.init_std };
        let mut stages = Vec::with_capacity(n);
        for j in (1..n).rev() {
            let in_ch = if j == n - 1 { ch[j] } else { 2 * ch[j] };
            stages.push(ConvTranspose2d::new(store, rng, &format!("{name}.{}", n - 1 - j), in_ch, ch[j - 1], init));
        }
        let in_ch = if n == 1 { ch[0] } else { 2 * ch[0] };
        stages.push(ConvTranspose2d::new(store, rng, &format!("{name}.{}", n - 1), in_ch, out_ch, init));
        Decoder { stages, head }
    }

    pub fn forward(&self, g: &mut Graph<'_>, feats: &[Var], out_hw: (usize, usize)) -> Var {
        let n = feats.len();
        let mut h = feats[n - 1];
        for (k, up) in self.stages.iter().enumerate() {
            let last = k + 1 == self.stages.len();
            if last {
                h = up.forward(g, h, out_hw.0, out_hw.1);
                h = match self.head {
                    HeadActivation::Tanh => g.tanh(h),
                    HeadActivation::Sigmoid => g.sigmoid(h),
                };
            } else {
                let skip = feats[n - 2 - k];
                let (sh, sw) = g.value(skip).hw();
                h = up.forward(g, h, sh, sw);
                h = maybe_norm(g, h, true);
                h = g.relu(h);
                h = g.concat(h, skip);
            }
        }
        h
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.stages.iter().flat_map(ConvTranspose2d::params).collect()
    }
}

/// Graph handles produced by one generator pass.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorOutputs {
    pub translated: Option<Var>,
    pub residual: Option<Var>,
    pub depth: Option<Var>,
}

/// One translation direction: shared encoder feeding a residual image
/// decoder and a depth decoder, followed by the bilinear resize stage.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorBundle {
    pub direction: Direction,
    pub encoder: Encoder,
    pub image_decoder: Decoder,
    pub depth_decoder: Decoder,
    pub from_hw: (usize, usize),
    pub to_hw: (usize, usize),
}

impl GeneratorBundle {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        direction: Direction,
        from_hw: (usize, usize),
        to_hw: (usize, usize),
        cfg: &NetworkConfig,
    ) -> Self {
        let tag = direction.tag();
        let encoder = Encoder::new(store, rng, &format!("g_{tag}.encoder"), cfg);
        let image_decoder = Decoder::new(store, rng, &format!("g_{tag}.image_decoder"), cfg, 3, HeadActivation::Tanh);
        let depth_decoder = Decoder::new(store, rng, &format!("g_{tag}.depth_decoder"), cfg, 1, HeadActivation::Sigmoid);
        GeneratorBundle {
            direction,
            encoder,
            image_decoder,
            depth_decoder,
            from_hw,
            to_hw,
        }
    }

    fn check_input(&self, hw: (usize, usize)) -> Result<()> {
        if hw != self.from_hw {
            return Err(Error::shape(
                format!("generator {} input", self.direction.tag()),
                format!("{}x{}", self.from_hw.0, self.from_hw.1),
                format!("{}x{}", hw.0, hw.1),
            ));
        }
        Ok(())
    }

    /// Graph-level pass. One encoder evaluation feeds whichever heads are requested.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, image: bool, depth: bool) -> GeneratorOutputs {
        let hw = g.value(x).hw();
        let feats = self.encoder.forward(g, x);
        let (translated, residual) = if image {
            let residual = self.image_decoder.forward(g, &feats, hw);
            let sum = g.add(residual, x);
            let resized = g.resize(sum, self.to_hw.0, self.to_hw.1);
            (Some(g.clamp(resized, -1.0, 1.0)), Some(residual))
        } else {
            (None, None)
        };
        let depth = depth.then(|| self.depth_decoder.forward(g, &feats, hw));
        GeneratorOutputs {
            translated,
            residual,
            depth,
        }
    }

    /// Translate a `[n, 3, from_h, from_w]` batch without tracking gradients.
    pub fn translate(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.hw())?;
        let mut g = Graph::inference(store);
        let xv = g.input(x.clone());
        let out = self.forward(&mut g, xv, true, false);
        Ok(g.value(out.translated.expect("image head requested")).clone())
    }

    /// Depth prediction at the input extent, no gradients.
    pub fn predict_depth(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.hw())?;
        let mut g = Graph::inference(store);
        let xv = g.input(x.clone());
        let out = self.forward(&mut g, xv, false, true);
        Ok(g.value(out.depth.expect("depth head requested")).clone())
    }

    /// Translate one tile; also returns the residual at input resolution.
    pub fn generator_forward(&self, store: &ParamStore, x: &ImageTile) -> Result<(ImageTile, Tensor)> {
        self.check_input(x.hw())?;
        let mut g = Graph::inference(store);
        let xv = g.input(x.to_tensor());
        let out = self.forward(&mut g, xv, true, false);
        let translated = ImageTile::from_tensor(g.value(out.translated.expect("image head")), 0)?;
        Ok((translated, g.value(out.residual.expect("image head")).clone()))
    }

    pub fn depth_forward(&self, store: &ParamStore, x: &ImageTile) -> Result<DepthTile> {
        let t = self.predict_depth(store, &x.to_tensor())?;
        DepthTile::from_tensor(&t, 0)
    }

    pub fn encoder_params(&self) -> Vec<ParamId> {
        self.encoder.params()
    }

    pub fn image_params(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.params();
        ids.extend(self.image_decoder.params());
        ids
    }

    pub fn depth_decoder_params(&self) -> Vec<ParamId> {
        self.depth_decoder.params()
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = self.image_params();
        ids.extend(self.depth_decoder.params());
        ids
    }

    /// Zero every image-decoder parameter so the residual is identically zero.
    pub fn zero_residual(&self, store: &mut ParamStore) {
        for id in self.image_decoder.params() {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }
}
