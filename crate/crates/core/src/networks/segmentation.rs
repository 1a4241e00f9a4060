//! Segmentation backbones behind a common interface.

use std::fmt::Debug;

use rand_chacha::ChaCha8Rng;

use super::layers::{Conv2d, ConvTranspose2d, InitScheme};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Maps `[n, 3, H, W]` images to `[n, C, H, W]` class scores.
pub trait SegmentationBackbone: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn class_count(&self) -> usize;
    fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var;
    fn params(&self) -> Vec<ParamId>;

    fn scores(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        let mut g = Graph::inference(store);
        let xv = g.input(x.clone());
        let out = self.forward(&mut g, xv);
        g.value(out).clone()
    }
}

pub const COMPACT_UNET: &str = "compact-unet";
pub const DEEPLAB_LITE: &str = "deeplab-lite";

pub fn backbone_names() -> &'static [&'static str] {
    &[COMPACT_UNET, DEEPLAB_LITE]
}

/// Construct a backbone by name, registering its parameters in `store`.
pub fn build_backbone(
    name: &str,
    class_count: usize,
    width: usize,
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
) -> Result<Box<dyn SegmentationBackbone>> {
    match name {
        COMPACT_UNET => Ok(Box::new(CompactUnet::new(store, rng, class_count, width))),
        DEEPLAB_LITE => Ok(Box::new(DeepLabLite::new(store, rng, class_count, width))),
        other => Err(Error::Config(format!(
            "unknown segmentation backbone `{other}` (known: {})",
            backbone_names().join(", ")
        ))),
    }
}

/// Two-level encoder-decoder with skip connections.
#[derive(Debug)]
pub struct CompactUnet {
    classes: usize,
    stem: Conv2d,
    down1: Conv2d,
    down2: Conv2d,
    mid: Conv2d,
    up2: ConvTranspose2d,
    up1: ConvTranspose2d,
    fuse: Conv2d,
    head: Conv2d,
}

impl CompactUnet {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, classes: usize, b: usize) -> Self {
        let he = InitScheme::He;
        CompactUnet {
            classes,
            stem: Conv2d::new(store, rng, "seg.stem", 3, b, 3, 1, 1, 1, he),
            down1: Conv2d::new(store, rng, "seg.down1", b, 2 * b, 4, 2, 1, 1, he),
            down2: Conv2d::new(store, rng, "seg.down2", 2 * b, 4 * b, 4, 2, 1, 1, he),
            mid: Conv2d::new(store, rng, "seg.mid", 4 * b, 4 * b, 3, 1, 1, 1, he),
            up2: ConvTranspose2d::new(store, rng, "seg.up2", 4 * b, 2 * b, he),
            up1: ConvTranspose2d::new(store, rng, "seg.up1", 4 * b, b, he),
            fuse: Conv2d::new(store, rng, "seg.fuse", 2 * b, b, 3, 1, 1, 1, he),
            head: Conv2d::new(store, rng, "seg.head", b, classes, 1, 1, 0, 1, he),
        }
    }
}

impl SegmentationBackbone for CompactUnet {
    fn name(&self) -> &'static str {
        COMPACT_UNET
    }

    fn class_count(&self) -> usize {
        self.classes
    }

    fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let s0 = self.stem.forward(g, x);
        let s0 = g.relu(s0);
        let s1 = self.down1.forward(g, s0);
        let s1 = g.relu(s1);
        let s2 = self.down2.forward(g, s1);
        let s2 = g.relu(s2);
        let m = self.mid.forward(g, s2);
        let m = g.relu(m);
        let (h1, w1) = g.value(s1).hw();
        let u2 = self.up2.forward(g, m, h1, w1);
        let u2 = g.relu(u2);
        let u2 = g.concat(u2, s1);
        let (h0, w0) = g.value(s0).hw();
        let u1 = self.up1.forward(g, u2, h0, w0);
        let u1 = g.relu(u1);
        let u1 = g.concat(u1, s0);
        let f = self.fuse.forward(g, u1);
        let f = g.relu(f);
        self.head.forward(g, f)
    }

    fn params(&self) -> Vec<ParamId> {
        [
            self.stem.params(),
            self.down1.params(),
            self.down2.params(),
            self.mid.params(),
            self.up2.params(),
            self.up1.params(),
            self.fuse.params(),
            self.head.params(),
        ]
        .concat()
    }
}

/// Output-stride-4 encoder with an atrous spatial pyramid pooling head and
/// bilinear upsampling back to the input extent.
#[derive(Debug)]
pub struct DeepLabLite {
    classes: usize,
    stem: Conv2d,
    down: Conv2d,
    body: Conv2d,
    aspp: [Conv2d; 3],
    image_pool: Conv2d,
    project: Conv2d,
    head: Conv2d,
}

impl DeepLabLite {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, classes: usize, b: usize) -> Self {
        let he = InitScheme::He;
        let c = 2 * b;
        DeepLabLite {
            classes,
            stem: Conv2d::new(store, rng, "seg.stem", 3, b, 4, 2, 1, 1, he),
            down: Conv2d::new(store, rng, "seg.down", b, c, 4, 2, 1, 1, he),
            body: Conv2d::new(store, rng, "seg.body", c, c, 3, 1, 1, 1, he),
            aspp: [
                Conv2d::new(store, rng, "seg.aspp.r1", c, b, 1, 1, 0, 1, he),
                Conv2d::new(store, rng, "seg.aspp.r2", c, b, 3, 1, 2, 2, he),
                Conv2d::new(store, rng, "seg.aspp.r3", c, b, 3, 1, 3, 3, he),
            ],
            image_pool: Conv2d::new(store, rng, "seg.aspp.pool", c, b, 1, 1, 0, 1, he),
            project: Conv2d::new(store, rng, "seg.project", 4 * b, c, 1, 1, 0, 1, he),
            head: Conv2d::new(store, rng, "seg.head", c, classes, 1, 1, 0, 1, he),
        }
    }
}

impl SegmentationBackbone for DeepLabLite {
    fn name(&self) -> &'static str {
        DEEPLAB_LITE
    }

    fn class_count(&self) -> usize {
        self.classes
    }

    fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let (h, w) = g.value(x).hw();
        let f = self.stem.forward(g, x);
        let f = g.relu(f);
        let f = self.down.forward(g, f);
        let f = g.relu(f);
        let f = self.body.forward(g, f);
        let f = g.relu(f);
        let (fh, fw) = g.value(f).hw();
        let mut cat: Option<Var> = None;
        for branch in &self.aspp {
            let y = branch.forward(g, f);
            let y = g.relu(y);
            cat = Some(match cat {
                Some(c) => g.concat(c, y),
                None => y,
            });
        }
        let p = g.global_avg_pool(f);
        let p = self.image_pool.forward(g, p);
        let p = g.relu(p);
        let p = g.broadcast(p, fh, fw);
        let cat = g.concat(cat.expect("three branches"), p);
        let y = self.project.forward(g, cat);
        let y = g.relu(y);
        let y = self.head.forward(g, y);
        g.resize(y, h, w)
    }

    fn params(&self) -> Vec<ParamId> {
        let mut ids = [self.stem.params(), self.down.params(), self.body.params()].concat();
        for b in &self.aspp {
            ids.extend(b.params());
        }
        ids.extend(self.image_pool.params());
        ids.extend(self.project.params());
        ids.extend(self.head.params());
        ids
    }
}
