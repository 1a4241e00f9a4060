//! Value types shared by every stage: domains, tiles and sample triples.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Raw DSM value range used for normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthStats {
    pub min: f64,
    pub max: f64,
}

/// Whether a domain's samples are annotated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainRole {
    /// Annotated source: label and depth required.
    Source,
    /// Unannotated target: depth required, labels forbidden.
    Target,
    /// Held-out target ground truth used only for scoring: label required.
    Evaluation,
    /// Source images translated to target geometry: label required.
    Translated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub role: DomainRole,
    pub tile_height: usize,
    pub tile_width: usize,
    /// Centimetres per pixel.
    pub ground_resolution: f64,
    pub class_count: usize,
    pub depth_stats: DepthStats,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tile_height == 0 || self.tile_width == 0 {
            return Err(Error::Config(format!("domain `{}` has an empty tile geometry", self.name)));
        }
        if self.class_count < 2 {
            return Err(Error::Config(format!("domain `{}` needs at least two classes", self.name)));
        }
        if self.depth_stats.min > self.depth_stats.max {
            return Err(Error::Config(format!(
                "domain `{}` depth stats min {} exceeds max {}",
                self.name, self.depth_stats.min, self.depth_stats.max
            )));
        }
        Ok(())
    }

    pub fn tile_hw(&self) -> (usize, usize) {
        (self.tile_height, self.tile_width)
    }
}

/// RGB tile stored row-major as `H × W × 3`, values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTile {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// Single-band depth tile, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthTile {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// Class index map, values in `0..class_count`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelTile {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

fn check_range(field: &str, data: &[f32], min: f32, max: f32) -> Result<()> {
    match data.iter().find(|v| !(**v >= min && **v <= max)) {
        Some(&v) => Err(Error::Range {
            field: field.into(),
            value: v as f64,
            min: min as f64,
            max: max as f64,
        }),
        None => Ok(()),
    }
}

impl ImageTile {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape("image", format!("{height}x{width}x3"), data.len()));
        }
        check_range("image", &data, -1.0, 1.0)?;
        Ok(ImageTile { height, width, data })
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// `[1, 3, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * 3];
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = px[c];
            }
        }
        Tensor::from_vec([1, 3, self.height, self.width], out)
    }

    /// Build from batch item `i` of a `[n, 3, H, W]` tensor, clamping to `[-1, 1]`.
    pub fn from_tensor(t: &Tensor, i: usize) -> Result<Self> {
        if t.c() != 3 {
            return Err(Error::shape("image channels", 3, t.c()));
        }
        let (h, w) = t.hw();
        let plane = h * w;
        let src = t.sample(i);
        let mut data = vec![0.0; plane * 3];
        for p in 0..plane {
            for c in 0..3 {
                data[p * 3 + c] = src[c * plane + p].clamp(-1.0, 1.0);
            }
        }
        ImageTile::new(h, w, data)
    }
}

impl DepthTile {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("depth", format!("{height}x{width}x1"), data.len()));
        }
        check_range("depth", &data, 0.0, 1.0)?;
        Ok(DepthTile { height, width, data })
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec([1, 1, self.height, self.width], self.data.clone())
    }

    pub fn from_tensor(t: &Tensor, i: usize) -> Result<Self> {
        if t.c() != 1 {
            return Err(Error::shape("depth channels", 1, t.c()));
        }
        let (h, w) = t.hw();
        DepthTile::new(h, w, t.sample(i).iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }
}

impl LabelTile {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("label", format!("{height}x{width}"), data.len()));
        }
        Ok(LabelTile { height, width, data })
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn max_class(&self) -> Option<u8> {
        self.data.iter().copied().max()
    }

    /// Nearest-neighbour resample (half-pixel centers).
    pub fn resize_nearest(&self, to_h: usize, to_w: usize) -> LabelTile {
        let map = |dst: usize, src: usize, i: usize| (((i as f64 + 0.5) * src as f64 / dst as f64).floor() as usize).min(src - 1);
        let mut data = Vec::with_capacity(to_h * to_w);
        for y in 0..to_h {
            let sy = map(to_h, self.height, y);
            for x in 0..to_w {
                data.push(self.get(sy, map(to_w, self.width, x)));
            }
        }
        LabelTile {
            height: to_h,
            width: to_w,
            data,
        }
    }
}

/// Scene-relative placement of a tile, used to deduplicate overlapping
/// edge tiles during evaluation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileOrigin {
    pub scene_id: String,
    pub row: usize,
    pub col: usize,
    pub scene_height: usize,
    pub scene_width: usize,
}

/// One aligned tile: image plus optional label and depth.
#[derive(Clone, Debug)]
pub struct SampleTriple {
    pub tile_id: String,
    pub domain: Arc<DomainSpec>,
    pub image: ImageTile,
    pub label: Option<LabelTile>,
    pub depth: Option<DepthTile>,
    pub origin: Option<TileOrigin>,
}

/// Check all tile invariants and the labelling rules of the sample's domain.
pub fn validate_sample(s: &SampleTriple) -> Result<()> {
    let hw = s.image.hw();
    let want = s.domain.tile_hw();
    if hw != want {
        return Err(Error::shape(
            format!("{}.image", s.tile_id),
            format!("{}x{}", want.0, want.1),
            format!("{}x{}", hw.0, hw.1),
        ));
    }
    check_range(&format!("{}.image", s.tile_id), s.image.data(), -1.0, 1.0)?;
    if let Some(depth) = &s.depth {
        if depth.hw() != hw {
            return Err(Error::shape(
                format!("{}.depth", s.tile_id),
                format!("{}x{}", hw.0, hw.1),
                format!("{}x{}", depth.hw().0, depth.hw().1),
            ));
        }
        check_range(&format!("{}.depth", s.tile_id), depth.data(), 0.0, 1.0)?;
    }
    if let Some(label) = &s.label {
        if label.hw() != hw {
            return Err(Error::shape(
                format!("{}.label", s.tile_id),
                format!("{}x{}", hw.0, hw.1),
                format!("{}x{}", label.hw().0, label.hw().1),
            ));
        }
        if let Some(m) = label.max_class() {
            if m as usize >= s.domain.class_count {
                return Err(Error::Range {
                    field: format!("{}.label", s.tile_id),
                    value: m as f64,
                    min: 0.0,
                    max: (s.domain.class_count - 1) as f64,
                });
            }
        }
    }
    match s.domain.role {
        DomainRole::Source if s.label.is_none() || s.depth.is_none() => Err(Error::Data(format!(
            "source sample `{}` must carry label and depth",
            s.tile_id
        ))),
        DomainRole::Target if s.label.is_some() => Err(Error::Data(format!(
            "target sample `{}` must not carry a label",
            s.tile_id
        ))),
        DomainRole::Target if s.depth.is_none() => Err(Error::Data(format!(
            "target sample `{}` must carry depth",
            s.tile_id
        ))),
        DomainRole::Evaluation | DomainRole::Translated if s.label.is_none() => Err(Error::Data(format!(
            "sample `{}` must carry a label",
            s.tile_id
        ))),
        _ => Ok(()),
    }
}

/// Linear map of `[0, 2^bits - 1]` integers onto `[-1, 1]`.
pub fn normalize_image(height: usize, width: usize, raw: &[u16], bit_depth: u32) -> Result<ImageTile> {
    if raw.len() != height * width * 3 {
        return Err(Error::shape("raw image", format!("{height}x{width}x3"), raw.len()));
    }
    if !(1..=16).contains(&bit_depth) {
        return Err(Error::Config(format!("unsupported bit depth {bit_depth}")));
    }
    let top = ((1u32 << bit_depth) - 1) as f64;
    let data = raw
        .iter()
        .map(|&v| {
            if v as f64 > top {
                Err(Error::Range {
                    field: "raw image".into(),
                    value: v as f64,
                    min: 0.0,
                    max: top,
                })
            } else {
                Ok((2.0 * v as f64 / top - 1.0) as f32)
            }
        })
        .collect::<Result<Vec<f32>>>()?;
    ImageTile::new(height, width, data)
}

/// Inverse of [`normalize_image`], rounding to the nearest integer level.
pub fn denormalize_image(tile: &ImageTile, bit_depth: u32) -> Vec<u16> {
    let top = ((1u32 << bit_depth) - 1) as f64;
    tile.data()
        .iter()
        .map(|&v| (((v as f64 + 1.0) * 0.5 * top).round().clamp(0.0, top)) as u16)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn domain(role: DomainRole, hw: usize) -> Arc<DomainSpec> {
        Arc::new(DomainSpec {
            name: "d".into(),
            role,
            tile_height: hw,
            tile_width: hw,
            ground_resolution: 9.0,
            class_count: 6,
            depth_stats: DepthStats { min: 0.0, max: 10.0 },
        })
    }

    fn sample(role: DomainRole, img: usize, depth: (usize, usize), label: bool) -> SampleTriple {
        SampleTriple {
            tile_id: "t0".into(),
            domain: domain(role, img),
            image: ImageTile::new(img, img, vec![0.0; img * img * 3]).unwrap(),
            depth: Some(DepthTile::new(depth.0, depth.1, vec![0.5; depth.0 * depth.1]).unwrap()),
            label: label.then(|| LabelTile::new(img, img, vec![1; img * img]).unwrap()),
            origin: None,
        }
    }

    #[test]
    fn matching_shapes_validate() {
        validate_sample(&sample(DomainRole::Source, 512, (512, 512), true)).unwrap();
    }

    #[test]
    fn depth_row_short_is_shape_error() {
        let err = validate_sample(&sample(DomainRole::Source, 512, (511, 512), true)).unwrap_err();
        match err {
            Error::ShapeMismatch { field, .. } => assert!(field.ends_with("depth")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn depth_above_one_is_range_error() {
        assert!(matches!(DepthTile::new(1, 2, vec![0.2, 1.5]), Err(Error::Range { .. })));
    }

    #[test]
    fn target_samples_may_not_carry_labels() {
        assert!(validate_sample(&sample(DomainRole::Target, 8, (8, 8), true)).is_err());
        validate_sample(&sample(DomainRole::Target, 8, (8, 8), false)).unwrap();
        assert!(validate_sample(&sample(DomainRole::Source, 8, (8, 8), false)).is_err());
    }

    #[test]
    fn label_beyond_class_count_rejected() {
        let mut s = sample(DomainRole::Source, 4, (4, 4), true);
        s.label = Some(LabelTile::new(4, 4, vec![6; 16]).unwrap());
        assert!(matches!(validate_sample(&s), Err(Error::Range { .. })));
    }

    #[test]
    fn eight_bit_endpoints_and_midpoint() {
        let t = normalize_image(1, 1, &[0, 255, 127], 8).unwrap();
        assert_eq!(t.data()[0], -1.0);
        assert_eq!(t.data()[1], 1.0);
        assert!((t.data()[2] as f64 - (2.0 * 127.0 / 255.0 - 1.0)).abs() < 1e-7);
        assert!((t.data()[2] + 0.00392).abs() < 1e-5);
        assert!(normalize_image(1, 1, &[0, 256, 0], 8).is_err());
    }

    #[test]
    fn eight_bit_round_trip_is_exact() {
        let raw: Vec<u16> = (0..=255).flat_map(|v| [v, 255 - v, v / 2]).collect();
        let t = normalize_image(16, 16, &raw, 8).unwrap();
        assert_eq!(denormalize_image(&t, 8), raw);
    }

    #[test]
    fn tensor_round_trip() {
        let t = ImageTile::new(2, 3, (0..18).map(|i| i as f32 / 18.0).collect()).unwrap();
        assert_eq!(ImageTile::from_tensor(&t.to_tensor(), 0).unwrap(), t);
    }

    #[test]
    fn nearest_resize_keeps_class_values() {
        let l = LabelTile::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        let r = l.resize_nearest(4, 4);
        assert_eq!(r.get(0, 0), 0);
        assert_eq!(r.get(3, 3), 3);
        assert!(r.data().iter().all(|v| *v <= 3));
    }
}
