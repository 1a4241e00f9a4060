//! Resize-residual generators with depth heads, patch critics and
//! segmentation backbones.

mod discriminator;
mod generator;
pub mod layers;
pub mod segmentation;

use serde::{Deserialize, Serialize};

pub use discriminator::Discriminator;
pub use generator::{Decoder, Direction, Encoder, GeneratorBundle, GeneratorOutputs, HeadActivation};
pub use segmentation::{build_backbone, SegmentationBackbone};

use crate::data_model::DomainSpec;
use crate::error::{Error, Result};
use crate::kernels::{self, Axis};
use crate::params::{stream_rng, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const ENCODER_CHANNELS: [usize; 7] = [64, 128, 256, 512, 512, 512, 512];
pub const DISCRIMINATOR_CHANNELS: [usize; 6] = [64, 128, 256, 512, 512, 1];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub encoder_channels: Vec<usize>,
    pub discriminator_channels: Vec<usize>,
    pub leaky_slope: f32,
    pub init_std: f32,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            encoder_channels: ENCODER_CHANNELS.to_vec(),
            discriminator_channels: DISCRIMINATOR_CHANNELS.to_vec(),
            leaky_slope: 0.2,
            init_std: 0.02,
        }
    }
}

impl NetworkConfig {
    /// Full-depth architecture with every width divided by `divisor`
    /// (the critic's single output channel is kept).
    pub fn narrowed(divisor: usize) -> Self {
        let div = |c: usize| (c / divisor).max(1);
        let mut d: Vec<usize> = DISCRIMINATOR_CHANNELS.iter().map(|&c| div(c)).collect();
        *d.last_mut().expect("non-empty") = 1;
        NetworkConfig {
            encoder_channels: ENCODER_CHANNELS.iter().map(|&c| div(c)).collect(),
            discriminator_channels: d,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return Err(Error::Config("encoder channels must be non-empty and positive".into()));
        }
        if self.discriminator_channels.last() != Some(&1) || self.discriminator_channels.contains(&0) {
            return Err(Error::Config("discriminator channels must be positive and end in 1".into()));
        }
        if !(self.leaky_slope >= 0.0 && self.init_std > 0.0) {
            return Err(Error::Config("leaky_slope must be >= 0 and init_std > 0".into()));
        }
        Ok(())
    }
}

/// Bilinear interpolation with half-pixel centers, applied per channel.
/// Resizing to the input extent returns an exact copy.
pub fn resize_bilinear(x: &Tensor, to_h: usize, to_w: usize) -> Tensor {
    assert!(to_h > 0 && to_w > 0, "resize target must be positive");
    let [n, c, h, w] = x.shape();
    if (h, w) == (to_h, to_w) {
        return x.clone();
    }
    let ys = Axis::new(h, to_h);
    let xs = Axis::new(w, to_w);
    let mut out = Tensor::zeros([n, c, to_h, to_w]);
    let (src_plane, dst_plane) = (h * w, to_h * to_w);
    for p in 0..n * c {
        kernels::resize_plane(
            &x.data()[p * src_plane..(p + 1) * src_plane],
            w,
            &ys,
            &xs,
            &mut out.data_mut()[p * dst_plane..(p + 1) * dst_plane],
        );
    }
    out
}

/// The four networks of the depth-assisted translation model in one store.
#[derive(Clone, Debug, PartialEq)]
pub struct Drdg {
    pub store: ParamStore,
    pub g_st: GeneratorBundle,
    pub g_ts: GeneratorBundle,
    pub d_s: Discriminator,
    pub d_t: Discriminator,
    pub config: NetworkConfig,
}

impl Drdg {
    pub fn generator_params(&self) -> Vec<ParamId> {
        let mut ids = self.g_st.params();
        ids.extend(self.g_ts.params());
        ids
    }

    pub fn critic_params(&self) -> Vec<ParamId> {
        let mut ids = self.d_s.params();
        ids.extend(self.d_t.params());
        ids
    }

    pub fn depth_decoder_params(&self) -> Vec<ParamId> {
        let mut ids = self.g_st.depth_decoder_params();
        ids.extend(self.g_ts.depth_decoder_params());
        ids
    }

    pub fn checksum(&self) -> String {
        let all: Vec<ParamId> = self.store.iter().map(|(id, _)| id).collect();
        self.store.checksum(&all)
    }
}

/// Build both generators and both critics with seed-determined weights.
pub fn build_drdg(source: &DomainSpec, target: &DomainSpec, cfg: &NetworkConfig, seed: u64) -> Result<Drdg> {
    cfg.validate()?;
    let s = source.tile_hw();
    let t = target.tile_hw();
    let mut store = ParamStore::new();
    let mut rng = stream_rng(seed, "drdg.init");
    let g_st = GeneratorBundle::new(&mut store, &mut rng, Direction::SourceToTarget, s, t, cfg);
    let g_ts = GeneratorBundle::new(&mut store, &mut rng, Direction::TargetToSource, t, s, cfg);
    let d_s = Discriminator::new(&mut store, &mut rng, "d_s", s, cfg);
    let d_t = Discriminator::new(&mut store, &mut rng, "d_t", t, cfg);
    Ok(Drdg {
        store,
        g_st,
        g_ts,
        d_s,
        d_t,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use crate::data_model::{DepthStats, DomainRole, ImageTile};

    fn domain(name: &str, hw: usize) -> DomainSpec {
        DomainSpec {
            name: name.into(),
            role: DomainRole::Source,
            tile_height: hw,
            tile_width: hw,
            ground_resolution: 5.0,
            class_count: 6,
            depth_stats: DepthStats { min: 0.0, max: 1.0 },
        }
    }

    fn ramp(shape: [usize; 4]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f32) * 0.013).sin() * 0.9).collect())
    }

    #[test]
    fn two_by_two_to_one_averages() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(resize_bilinear(&x, 1, 1).data(), &[1.5]);
    }

    #[test]
    fn resize_identity_and_constants() {
        let x = ramp([1, 3, 9, 7]);
        assert_eq!(resize_bilinear(&x, 9, 7), x);
        let c = Tensor::full([1, 2, 5, 6], 0.25);
        let r = resize_bilinear(&c, 13, 3);
        assert!(r.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn encoder_and_decoder_extents_for_odd_sizes() {
        let cfg = NetworkConfig::narrowed(32);
        let d = build_drdg(&domain("s", 112), &domain("t", 64), &cfg, 1).unwrap();
        let mut g = Graph::inference(&d.store);
        let x = g.input(ramp([1, 3, 112, 112]));
        let feats = d.g_st.encoder.forward(&mut g, x);
        let sizes: Vec<usize> = feats.iter().map(|&f| g.value(f).h()).collect();
        assert_eq!(sizes, vec![56, 28, 14, 7, 4, 2, 1]);
        let out = d.g_st.forward(&mut g, x, true, true);
        assert_eq!(g.value(out.translated.unwrap()).shape(), [1, 3, 64, 64]);
        assert_eq!(g.value(out.depth.unwrap()).shape(), [1, 1, 112, 112]);
    }

    #[test]
    fn decoder_heads_differ_only_in_final_layer() {
        let cfg = NetworkConfig::narrowed(16);
        let d = build_drdg(&domain("s", 64), &domain("t", 32), &cfg, 5).unwrap();
        let img = d.g_st.image_decoder.params();
        let dep = d.g_st.depth_decoder_params();
        assert_eq!(img.len(), dep.len());
        let n = img.len();
        for (a, b) in img[..n - 2].iter().zip(&dep[..n - 2]) {
            assert_eq!(d.store.get(*a).shape(), d.store.get(*b).shape());
        }
        assert_eq!(d.store.get(img[n - 2]).shape()[1], 3);
        assert_eq!(d.store.get(dep[n - 2]).shape()[1], 1);
        let last = |ids: &[ParamId]| d.store.count(&ids[n - 2..]);
        assert_eq!(d.store.count(&img) - last(&img), d.store.count(&dep) - last(&dep));
    }

    #[test]
    fn same_seed_same_checksum() {
        let cfg = NetworkConfig::narrowed(32);
        let a = build_drdg(&domain("s", 64), &domain("t", 32), &cfg, 9).unwrap();
        let b = build_drdg(&domain("s", 64), &domain("t", 32), &cfg, 9).unwrap();
        let c = build_drdg(&domain("s", 64), &domain("t", 32), &cfg, 10).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
        assert_eq!(a.g_st.from_hw, (64, 64));
        assert_eq!(a.g_ts.to_hw, (64, 64));
    }

    #[test]
    fn wrong_geometry_is_rejected() {
        let cfg = NetworkConfig::narrowed(32);
        let d = build_drdg(&domain("s", 64), &domain("t", 32), &cfg, 1).unwrap();
        let tile = ImageTile::new(32, 32, vec![0.0; 32 * 32 * 3]).unwrap();
        assert!(d.g_st.generator_forward(&d.store, &tile).is_err());
        assert!(d.d_s.discriminator_forward(&d.store, &tile.to_tensor()).is_err());
    }

    #[test]
    fn backbones_preserve_extent() {
        for name in segmentation::backbone_names() {
            let mut store = ParamStore::new();
            let mut rng = stream_rng(1, "seg");
            let net = build_backbone(name, 6, 4, &mut store, &mut rng).unwrap();
            let out = net.scores(&store, &ramp([2, 3, 21, 18]));
            assert_eq!(out.shape(), [2, 6, 21, 18], "{name}");
        }
        let mut store = ParamStore::new();
        assert!(build_backbone("resnet-9000", 6, 4, &mut store, &mut stream_rng(1, "x")).is_err());
    }
}
