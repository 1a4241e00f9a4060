use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::kernels::ConvGeom;
use crate::params::{Init, ParamId, ParamStore};

/// Weight initialization family for a network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// N(0, std) weights, zero biases.
    Normal { std: f32 },
    /// He-normal weights, zero biases.
    He,
}

impl InitScheme {
    fn weight(self, fan_in: usize) -> Init {
        match self {
            InitScheme::Normal { std } => Init::Normal(std),
            InitScheme::He => Init::He { fan_in },
        }
    }
}

/// Strided or dilated convolution with a `ceil(in / stride)` output.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        dilation: usize,
        init: InitScheme,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            [out_ch, in_ch, kernel, kernel],
            init.weight(in_ch * kernel * kernel),
            rng,
        );
        let bias = store.add(format!("{name}.bias"), [1, 1, 1, out_ch], Init::Zeros, rng);
        Conv2d {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            dilation,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let (h, w) = g.value(x).hw();
        let geom = ConvGeom::ceil_mode(self.in_ch, h, w, self.kernel, self.stride, self.pad, self.dilation);
        let wv = g.param(self.weight);
        let bv = g.param(self.bias);
        g.conv2d(x, wv, Some(bv), geom)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Stride-2 transposed convolution producing an explicitly requested extent
/// of at most twice the input.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
}

pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const PAD: usize = 1;

impl ConvTranspose2d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        init: InitScheme,
    ) -> Self {
        // fan-in of a stride-2 4x4 transposed conv is in_ch * 4 per output pixel
        let weight = store.add(
            format!("{name}.weight"),
            [in_ch, out_ch, KERNEL, KERNEL],
            init.weight(in_ch * KERNEL * KERNEL / (STRIDE * STRIDE)),
            rng,
        );
        let bias = store.add(format!("{name}.bias"), [1, 1, 1, out_ch], Init::Zeros, rng);
        ConvTranspose2d {
            weight,
            bias,
            in_ch,
            out_ch,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, out_h: usize, out_w: usize) -> Var {
        let (h, w) = g.value(x).hw();
        assert!(out_h.div_ceil(STRIDE) == h && out_w.div_ceil(STRIDE) == w, "upsampling extent");
        let geom = ConvGeom::ceil_mode(self.out_ch, out_h, out_w, KERNEL, STRIDE, PAD, 1);
        let wv = g.param(self.weight);
        let bv = g.param(self.bias);
        g.conv_transpose2d(x, wv, Some(bv), geom)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Instance normalization, skipped for single-pixel planes where it is degenerate.
pub fn maybe_norm(g: &mut Graph<'_>, x: Var, enabled: bool) -> Var {
    let (h, w) = g.value(x).hw();
    if enabled && h * w > 1 {
        g.instance_norm(x)
    } else {
        x
    }
}
