//! Procedural two-domain aerial scenes with exact labels and DSMs.
//!
//! Both domains draw layouts from one distribution in world units and differ
//! only in palette, pixel noise and ground resolution.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::raster;
use super::tiling::{compute_depth_stats, paint_labels, ColorEntry, SceneRaster, SceneRecord};
use crate::data_model::{DomainRole, DomainSpec};
use crate::error::{Error, Result};
use crate::params::stream_rng;

pub const CLUTTER: u8 = 0;
pub const IMPERVIOUS: u8 = 1;
pub const CAR: u8 = 2;
pub const TREE: u8 = 3;
pub const LOW_VEGETATION: u8 = 4;
pub const BUILDING: u8 = 5;
pub const CLASS_COUNT: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthSide {
    Source,
    Target,
}

impl SynthSide {
    pub fn tag(self) -> &'static str {
        match self {
            SynthSide::Source => "source",
            SynthSide::Target => "target",
        }
    }
}

/// Mean colour and per-object tone jitter (8-bit units) of one class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassPaint {
    pub mean: [f32; 3],
    pub jitter: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Palette {
    /// Indexed by class.
    pub classes: Vec<ClassPaint>,
    /// Per-pixel Gaussian noise (8-bit units).
    pub pixel_noise: f32,
}

/// Inclusive object count range per scene.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectCounts {
    pub buildings: CountRange,
    pub trees: CountRange,
    pub roads: CountRange,
    pub cars: CountRange,
    pub clutter: CountRange,
    pub vegetation_patches: CountRange,
}

/// Height above ground in raw DSM units, `[lo, hi]` per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeightRanges {
    pub classes: Vec<[f32; 2]>,
    pub ground_elevation: f32,
    /// Largest elevation change of the ground plane across a scene.
    pub ground_tilt: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Source scene side in pixels; target scenes cover the same ground extent.
    pub scene_size: usize,
    /// Centimetres per pixel.
    pub source_resolution: f64,
    pub target_resolution: f64,
    pub source_tile: usize,
    pub target_tile: usize,
    pub objects: ObjectCounts,
    pub heights: HeightRanges,
    pub source_palette: Palette,
    pub target_palette: Palette,
    pub seed: u64,
}

fn paint(r: f32, g: f32, b: f32, jitter: f32) -> ClassPaint {
    ClassPaint { mean: [r, g, b], jitter }
}

impl Default for SynthConfig {
    fn default() -> Self {
        let c = |min, max| CountRange { min, max };
        SynthConfig {
            scene_size: 224,
            source_resolution: 5.0,
            target_resolution: 8.75,
            source_tile: 112,
            target_tile: 64,
            objects: ObjectCounts {
                buildings: c(2, 4),
                trees: c(3, 7),
                roads: c(1, 3),
                cars: c(2, 5),
                clutter: c(1, 3),
                vegetation_patches: c(1, 3),
            },
            heights: HeightRanges {
                classes: vec![[0.0, 0.5], [0.0, 0.0], [1.0, 1.8], [2.0, 8.0], [0.0, 0.3], [3.0, 9.0]],
                ground_elevation: 100.0,
                ground_tilt: 0.5,
            },
            // False-colour near-infrared look: vegetation renders red.
            source_palette: Palette {
                classes: vec![
                    paint(170.0, 90.0, 140.0, 14.0),
                    paint(170.0, 165.0, 165.0, 10.0),
                    paint(70.0, 70.0, 190.0, 30.0),
                    paint(200.0, 70.0, 60.0, 12.0),
                    paint(225.0, 135.0, 110.0, 10.0),
                    paint(125.0, 115.0, 150.0, 12.0),
                ],
                pixel_noise: 6.0,
            },
            // True-colour look.
            target_palette: Palette {
                classes: vec![
                    paint(120.0, 80.0, 60.0, 14.0),
                    paint(140.0, 140.0, 130.0, 10.0),
                    paint(200.0, 60.0, 50.0, 30.0),
                    paint(50.0, 90.0, 40.0, 12.0),
                    paint(110.0, 150.0, 70.0, 10.0),
                    paint(175.0, 110.0, 90.0, 12.0),
                ],
                pixel_noise: 8.0,
            },
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.source_tile == 0 || self.target_tile == 0 || self.scene_size < self.source_tile {
            return fail("scene_size must hold at least one source tile".into());
        }
        if !(self.source_resolution > 0.0 && self.target_resolution > 0.0) {
            return fail("ground resolutions must be positive".into());
        }
        if self.target_scene_size() < self.target_tile {
            return fail("target scenes are smaller than one target tile".into());
        }
        for (name, p) in [("source", &self.source_palette), ("target", &self.target_palette)] {
            if p.classes.len() != CLASS_COUNT {
                return fail(format!("{name} palette needs {CLASS_COUNT} classes"));
            }
            if p.pixel_noise < 0.0 || p.classes.iter().any(|c| c.jitter < 0.0) {
                return fail(format!("{name} palette noise must be non-negative"));
            }
        }
        if self.source_palette.classes == self.target_palette.classes {
            return fail("source and target palettes must differ".into());
        }
        let h = &self.heights.classes;
        if h.len() != CLASS_COUNT || h.iter().any(|r| r[0] < 0.0 || r[1] < r[0]) {
            return fail(format!("height ranges need {CLASS_COUNT} non-negative [lo, hi] pairs"));
        }
        if h[BUILDING as usize][0] <= self.heights.ground_tilt || h[TREE as usize][0] <= self.heights.ground_tilt {
            return fail("building and tree heights must lie strictly above the ground".into());
        }
        let o = &self.objects;
        for r in [o.buildings, o.trees, o.roads, o.cars, o.clutter, o.vegetation_patches] {
            if r.min > r.max || r.min == 0 {
                return fail("object count ranges need 1 <= min <= max".into());
            }
        }
        Ok(())
    }

    pub fn target_scene_size(&self) -> usize {
        (self.scene_size as f64 * self.source_resolution / self.target_resolution).round() as usize
    }

    fn extent_cm(&self) -> f64 {
        self.scene_size as f64 * self.source_resolution
    }
}

#[derive(Clone, Copy, Debug)]
struct Oriented {
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
    half_u: f64,
    half_v: f64,
}

impl Oriented {
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        (dx * self.cos + dy * self.sin, -dx * self.sin + dy * self.cos)
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (u, v) = self.local(x, y);
        u.abs() <= self.half_u && v.abs() <= self.half_v
    }
}

#[derive(Clone, Copy, Debug)]
struct Object {
    class: u8,
    shape: Shape,
    height: f64,
    tone: [f32; 3],
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect(Oriented),
    Disk { cx: f64, cy: f64, r: f64 },
    Ellipse(Oriented),
}

struct Layout {
    objects: Vec<Object>,
    tilt: (f64, f64),
}

fn count(rng: &mut ChaCha8Rng, r: CountRange) -> usize {
    rng.random_range(r.min..=r.max)
}

/// Random placement inside the scene with half-sizes drawn as fractions of
/// the extent, roughly axis aligned.
fn oriented(rng: &mut ChaCha8Rng, e: f64, margin: f64, u: (f64, f64), v: (f64, f64), max_angle: f64) -> Oriented {
    let cx = rng.random_range(margin * e..(1.0 - margin) * e);
    let cy = rng.random_range(margin * e..(1.0 - margin) * e);
    let half_u = e * if u.1 > u.0 { rng.random_range(u.0..u.1) } else { u.0 };
    let half_v = e * rng.random_range(v.0..v.1);
    let quarter = if rng.random_bool(0.5) { 0.0 } else { std::f64::consts::FRAC_PI_2 };
    let a = rng.random_range(-max_angle..=max_angle) + quarter;
    Oriented {
        cx,
        cy,
        cos: a.cos(),
        sin: a.sin(),
        half_u,
        half_v,
    }
}

fn layout(cfg: &SynthConfig, palette: &Palette, rng: &mut ChaCha8Rng) -> Layout {
    let e = cfg.extent_cm();
    let o = &cfg.objects;
    let hr = &cfg.heights.classes;
    let mut objects = Vec::new();
    let tone = |rng: &mut ChaCha8Rng, class: u8| -> [f32; 3] {
        let p = palette.classes[class as usize];
        let n = Normal::new(0.0f32, p.jitter.max(f32::MIN_POSITIVE)).expect("finite jitter");
        let shift = n.sample(rng);
        [p.mean[0] + shift + n.sample(rng) * 0.3, p.mean[1] + shift + n.sample(rng) * 0.3, p.mean[2] + shift + n.sample(rng) * 0.3]
    };
    let height = |rng: &mut ChaCha8Rng, class: u8| -> f64 {
        let [lo, hi] = hr[class as usize];
        if hi > lo {
            rng.random_range(lo as f64..hi as f64)
        } else {
            lo as f64
        }
    };

    for _ in 0..count(rng, o.vegetation_patches) {
        let s = oriented(rng, e, 0.0, (0.15, 0.35), (0.1, 0.25), 0.6);
        let (h, t) = (height(rng, LOW_VEGETATION), tone(rng, LOW_VEGETATION));
        objects.push(Object { class: LOW_VEGETATION, shape: Shape::Ellipse(s), height: h, tone: t });
    }
    for _ in 0..count(rng, o.clutter) {
        let s = oriented(rng, e, 0.0, (0.03, 0.08), (0.02, 0.06), 0.8);
        let (h, t) = (height(rng, CLUTTER), tone(rng, CLUTTER));
        objects.push(Object { class: CLUTTER, shape: Shape::Rect(s), height: h, tone: t });
    }
    let mut roads = Vec::new();
    for _ in 0..count(rng, o.roads) {
        let s = oriented(rng, e, 0.15, (2.0, 2.0), (0.05, 0.08), 0.3);
        roads.push(s);
        let t = tone(rng, IMPERVIOUS);
        objects.push(Object { class: IMPERVIOUS, shape: Shape::Rect(s), height: hr[IMPERVIOUS as usize][0] as f64, tone: t });
    }
    for _ in 0..count(rng, o.buildings) {
        let s = oriented(rng, e, 0.1, (0.08, 0.16), (0.06, 0.12), 0.25);
        let (h, t) = (height(rng, BUILDING), tone(rng, BUILDING));
        objects.push(Object { class: BUILDING, shape: Shape::Rect(s), height: h, tone: t });
    }
    for _ in 0..count(rng, o.trees) {
        let cx = rng.random_range(0.0..e);
        let cy = rng.random_range(0.0..e);
        let r = e * rng.random_range(0.04..0.08);
        let (h, t) = (height(rng, TREE), tone(rng, TREE));
        objects.push(Object { class: TREE, shape: Shape::Disk { cx, cy, r }, height: h, tone: t });
    }
    for _ in 0..count(rng, o.cars) {
        let road = roads[rng.random_range(0..roads.len())];
        let along = rng.random_range(-0.45 * e..0.45 * e);
        let across = rng.random_range(-0.5..0.5) * road.half_v;
        let cx = road.cx + along * road.cos - across * road.sin;
        let cy = road.cy + along * road.sin + across * road.cos;
        let s = Oriented {
            cx,
            cy,
            half_u: e * 0.03,
            half_v: e * 0.014,
            ..road
        };
        let (h, t) = (height(rng, CAR), tone(rng, CAR));
        objects.push(Object { class: CAR, shape: Shape::Rect(s), height: h, tone: t });
    }
    let tilt = cfg.heights.ground_tilt as f64 / e;
    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    Layout {
        objects,
        tilt: (tilt * a.cos() * 0.7, tilt * a.sin() * 0.7),
    }
}

/// Render one layout at the given resolution.
fn render(cfg: &SynthConfig, lay: &Layout, palette: &Palette, res: f64, size: usize, id: String, rng: &mut ChaCha8Rng) -> SceneRaster {
    let n = size * size;
    let mut rgb = vec![0u8; n * 3];
    let mut dsm = vec![0f32; n];
    let mut label = vec![LOW_VEGETATION; n];
    let base = palette.classes[LOW_VEGETATION as usize].mean;
    let noise = Normal::new(0.0f32, palette.pixel_noise.max(f32::MIN_POSITIVE)).expect("finite noise");
    let e = cfg.extent_cm();
    for py in 0..size {
        for px in 0..size {
            let (x, y) = ((px as f64 + 0.5) * res, (py as f64 + 0.5) * res);
            let ground = cfg.heights.ground_elevation as f64 + lay.tilt.0 * (x - e / 2.0) + lay.tilt.1 * (y - e / 2.0);
            let mut class = LOW_VEGETATION;
            let mut h = 0.0;
            let mut color = base;
            let mut shade = 1.0f32;
            for obj in &lay.objects {
                let hit = match obj.shape {
                    Shape::Rect(r) => {
                        let inside = r.contains(x, y);
                        if inside && obj.class == BUILDING {
                            // Pitched roof: one side darker.
                            shade = if r.local(x, y).1 < 0.0 { 0.85 } else { 1.0 };
                        }
                        inside
                    }
                    Shape::Ellipse(r) => {
                        let (u, v) = r.local(x, y);
                        (u / r.half_u).powi(2) + (v / r.half_v).powi(2) <= 1.0
                    }
                    Shape::Disk { cx, cy, r } => {
                        let d2 = ((x - cx).powi(2) + (y - cy).powi(2)) / (r * r);
                        if d2 <= 1.0 {
                            shade = 1.1 - 0.3 * d2 as f32;
                            true
                        } else {
                            false
                        }
                    }
                };
                if hit {
                    class = obj.class;
                    color = obj.tone;
                    h = match obj.shape {
                        Shape::Disk { cx, cy, r } => {
                            let d2 = ((x - cx).powi(2) + (y - cy).powi(2)) / (r * r);
                            obj.height * (0.6 + 0.4 * (1.0 - d2).max(0.0).sqrt())
                        }
                        _ => obj.height,
                    };
                    if obj.class != BUILDING && obj.class != TREE {
                        shade = 1.0;
                    }
                }
            }
            let i = py * size + px;
            label[i] = class;
            dsm[i] = (ground + h) as f32;
            for ch in 0..3 {
                rgb[i * 3 + ch] = (color[ch] * shade + noise.sample(rng)).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    SceneRaster {
        id,
        height: size,
        width: size,
        rgb,
        dsm,
        label: Some(label),
    }
}

/// Generate `n_scenes` labelled scenes of one side plus its domain description.
/// Scene `i` depends only on `(cfg.seed, side, first_index + i)`.
pub fn generate_synthetic_domain(cfg: &SynthConfig, side: SynthSide, first_index: usize, n_scenes: usize) -> Result<(Vec<SceneRaster>, DomainSpec)> {
    cfg.validate()?;
    if n_scenes == 0 {
        return Err(Error::Config("n_scenes must be positive".into()));
    }
    let (palette, res, size, tile, role) = match side {
        SynthSide::Source => (&cfg.source_palette, cfg.source_resolution, cfg.scene_size, cfg.source_tile, DomainRole::Source),
        SynthSide::Target => (&cfg.target_palette, cfg.target_resolution, cfg.target_scene_size(), cfg.target_tile, DomainRole::Target),
    };
    let scenes: Vec<SceneRaster> = (first_index..first_index + n_scenes)
        .map(|i| {
            let mut lay_rng = stream_rng(cfg.seed, &format!("synth.layout.{}.{i}", side.tag()));
            let lay = layout(cfg, palette, &mut lay_rng);
            let mut px_rng = stream_rng(cfg.seed, &format!("synth.pixels.{}.{i}", side.tag()));
            render(cfg, &lay, palette, res, size, format!("{}{i:03}", side.tag()), &mut px_rng)
        })
        .collect();
    let domain = DomainSpec {
        name: format!("synthetic-{}", side.tag()),
        role,
        tile_height: tile,
        tile_width: tile,
        ground_resolution: res,
        class_count: CLASS_COUNT,
        depth_stats: compute_depth_stats(&scenes)?,
    };
    Ok((scenes, domain))
}

/// Persist scenes as RGB PNG, float DSM TIFF and colour label PNG.
pub fn write_scenes(dir: &Path, scenes: &[SceneRaster], color_map: &[ColorEntry]) -> Result<Vec<SceneRecord>> {
    std::fs::create_dir_all(dir)?;
    scenes
        .iter()
        .map(|s| {
            let rgb = format!("{}_rgb.png", s.id);
            let dsm = format!("{}_dsm.tif", s.id);
            raster::write_rgb(&dir.join(&rgb), s.height, s.width, &s.rgb)?;
            raster::write_f32(&dir.join(&dsm), s.height, s.width, &s.dsm)?;
            let label_path = match &s.label {
                Some(l) => {
                    let name = format!("{}_label.png", s.id);
                    raster::write_rgb(&dir.join(&name), s.height, s.width, &paint_labels(l, color_map))?;
                    Some(name.into())
                }
                None => None,
            };
            Ok(SceneRecord {
                id: s.id.clone(),
                rgb_path: rgb.into(),
                dsm_path: dsm.into(),
                label_path,
                height: s.height,
                width: s.width,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::tiling::isprs_color_map;

    fn small() -> SynthConfig {
        SynthConfig {
            scene_size: 64,
            source_tile: 32,
            target_tile: 16,
            target_resolution: 10.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = small();
        let a = generate_synthetic_domain(&cfg, SynthSide::Source, 0, 2).unwrap();
        let b = generate_synthetic_domain(&cfg, SynthSide::Source, 0, 2).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_domain(&SynthConfig { seed: 8, ..cfg }, SynthSide::Source, 0, 2).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn target_scene_matches_ground_extent() {
        let cfg = SynthConfig::default();
        assert_eq!(cfg.target_scene_size(), 128);
        let (t, d) = generate_synthetic_domain(&small(), SynthSide::Target, 0, 1).unwrap();
        assert_eq!((t[0].height, d.tile_height, d.role), (32, 16, DomainRole::Target));
    }

    #[test]
    fn buildings_stand_above_adjacent_roads() {
        let (scenes, _) = generate_synthetic_domain(&SynthConfig::default(), SynthSide::Source, 0, 4).unwrap();
        let mut pairs = 0;
        for s in &scenes {
            let l = s.label.as_ref().unwrap();
            for y in 0..s.height {
                for x in 0..s.width - 1 {
                    for (a, b) in [(y * s.width + x, y * s.width + x + 1), (x * s.width + y, (x + 1) * s.width + y)] {
                        let (a, b) = if l[a] == BUILDING { (a, b) } else { (b, a) };
                        if l[a] == BUILDING && l[b] == IMPERVIOUS {
                            pairs += 1;
                            assert!(s.dsm[a] > s.dsm[b]);
                        }
                    }
                }
            }
        }
        assert!(pairs > 0);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.target_palette = cfg.source_palette.clone();
        assert!(cfg.validate().is_err());
        let mut cfg = SynthConfig::default();
        cfg.heights.classes[BUILDING as usize] = [0.0, 3.0];
        assert!(cfg.validate().is_err());
        assert!(generate_synthetic_domain(&SynthConfig::default(), SynthSide::Source, 0, 0).is_err());
    }

    #[test]
    fn written_scenes_reload_identically() {
        let dir = tempfile::tempdir().unwrap();
        let (scenes, _) = generate_synthetic_domain(&small(), SynthSide::Source, 0, 1).unwrap();
        let map = isprs_color_map();
        let recs = write_scenes(dir.path(), &scenes, &map).unwrap();
        assert_eq!(recs[0].load(dir.path(), &map).unwrap(), scenes[0]);
    }
}
