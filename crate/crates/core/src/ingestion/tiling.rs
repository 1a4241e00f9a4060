use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::raster;
use crate::data_model::{
    normalize_image, DepthStats, DepthTile, DomainRole, DomainSpec, ImageTile, LabelTile, SampleTriple, TileOrigin,
};
use crate::error::{Error, Result};

/// ISPRS-style colour of each class, indexed by class.
pub const ISPRS_COLORS: [[u8; 3]; 6] = [
    [255, 0, 0],     // clutter / background
    [255, 255, 255], // impervious surface
    [255, 255, 0],   // car
    [0, 255, 0],     // tree
    [0, 255, 255],   // low vegetation
    [0, 0, 255],     // building
];

pub const CLASS_NAMES: [&str; 6] = ["clutter", "impervious", "car", "tree", "low_vegetation", "building"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorEntry {
    pub class: u8,
    pub rgb: [u8; 3],
}

pub fn isprs_color_map() -> Vec<ColorEntry> {
    ISPRS_COLORS
        .iter()
        .enumerate()
        .map(|(i, &rgb)| ColorEntry { class: i as u8, rgb })
        .collect()
}

/// A full scene held in memory (interleaved RGB bytes, raw DSM).
#[derive(Clone, Debug, PartialEq)]
pub struct SceneRaster {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub rgb: Vec<u8>,
    pub dsm: Vec<f32>,
    pub label: Option<Vec<u8>>,
}

/// File references of one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub id: String,
    pub rgb_path: PathBuf,
    pub dsm_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_path: Option<PathBuf>,
    pub height: usize,
    pub width: usize,
}

impl SceneRecord {
    /// Load the scene, decoding the colour label raster through `color_map`.
    pub fn load(&self, base: &std::path::Path, color_map: &[ColorEntry]) -> Result<SceneRaster> {
        let (h, w, rgb) = raster::read_rgb(&base.join(&self.rgb_path))?;
        let (dh, dw, dsm) = raster::read_f32(&base.join(&self.dsm_path))?;
        if (h, w) != (self.height, self.width) || (dh, dw) != (h, w) {
            return Err(Error::shape(
                format!("scene {} rasters", self.id),
                format!("{}x{}", self.height, self.width),
                format!("rgb {h}x{w}, dsm {dh}x{dw}"),
            ));
        }
        let label = match &self.label_path {
            Some(p) => {
                let (lh, lw, colors) = raster::read_rgb(&base.join(p))?;
                if (lh, lw) != (h, w) {
                    return Err(Error::shape(format!("scene {} label", self.id), format!("{h}x{w}"), format!("{lh}x{lw}")));
                }
                Some(labels_from_color(h, w, &colors, color_map)?.data().to_vec())
            }
            None => None,
        };
        Ok(SceneRaster {
            id: self.id.clone(),
            height: h,
            width: w,
            rgb,
            dsm,
            label,
        })
    }
}

/// Global min and max DSM value over every scene of one domain.
pub fn compute_depth_stats<'a>(scenes: impl IntoIterator<Item = &'a SceneRaster>) -> Result<DepthStats> {
    let mut stats: Option<DepthStats> = None;
    for s in scenes {
        for &v in &s.dsm {
            if !v.is_finite() {
                return Err(Error::Data(format!("scene {} has a non-finite DSM value", s.id)));
            }
            let v = v as f64;
            stats = Some(match stats {
                None => DepthStats { min: v, max: v },
                Some(st) => DepthStats {
                    min: st.min.min(v),
                    max: st.max.max(v),
                },
            });
        }
    }
    stats.ok_or_else(|| Error::Data("no DSM values to compute depth statistics from".into()))
}

/// `(raw - min) / (max - min)` clamped to `[0, 1]`; all zeros for a degenerate range.
pub fn normalize_dsm(height: usize, width: usize, raw: &[f32], stats: DepthStats) -> Result<DepthTile> {
    if stats.min > stats.max {
        return Err(Error::Config(format!("depth stats min {} exceeds max {}", stats.min, stats.max)));
    }
    let span = stats.max - stats.min;
    let data = raw
        .iter()
        .map(|&v| {
            if span == 0.0 {
                0.0
            } else {
                ((v as f64 - stats.min) / span).clamp(0.0, 1.0) as f32
            }
        })
        .collect();
    DepthTile::new(height, width, data)
}

/// Exact colour lookup; colours absent from the map become class 0.
pub fn labels_from_color(height: usize, width: usize, raster: &[u8], color_map: &[ColorEntry]) -> Result<LabelTile> {
    let mut seen = HashSet::new();
    for e in color_map {
        if !seen.insert(e.rgb) {
            return Err(Error::Config(format!("duplicate colour {:?} in colour map", e.rgb)));
        }
    }
    if raster.len() != height * width * 3 {
        return Err(Error::shape("label raster", height * width * 3, raster.len()));
    }
    let data = raster
        .chunks_exact(3)
        .map(|px| {
            color_map
                .iter()
                .find(|e| e.rgb == [px[0], px[1], px[2]])
                .map_or(0, |e| e.class)
        })
        .collect();
    LabelTile::new(height, width, data)
}

/// Paint class indices with the colour map (inverse of [`labels_from_color`]).
pub fn paint_labels(labels: &[u8], color_map: &[ColorEntry]) -> Vec<u8> {
    labels
        .iter()
        .flat_map(|&c| color_map.iter().find(|e| e.class == c).map_or([0, 0, 0], |e| e.rgb))
        .collect()
}

/// Tile anchors along one axis. With `edge_anchor`, a final anchor at
/// `dim - tile` is appended whenever the regular grid stops short of the edge.
pub fn tile_anchors(dim: usize, tile: usize, stride: usize, edge_anchor: bool) -> Vec<usize> {
    let mut out = Vec::new();
    let mut a = 0;
    while a + tile <= dim {
        out.push(a);
        a += stride;
    }
    if edge_anchor {
        if let Some(&last) = out.last() {
            if last + tile < dim {
                out.push(dim - tile);
            }
        }
    }
    out
}

/// Cut a scene into domain-sized tiles.
pub fn clip_tiles(scene: &SceneRaster, domain: &Arc<DomainSpec>, stride: usize, edge_anchor: bool) -> Result<Vec<SampleTriple>> {
    let (th, tw) = domain.tile_hw();
    if scene.height < th || scene.width < tw {
        return Err(Error::Data(format!(
            "scene {} ({}x{}) is smaller than the {}x{} tile",
            scene.id, scene.height, scene.width, th, tw
        )));
    }
    if stride == 0 {
        return Err(Error::Config("tile stride must be positive".into()));
    }
    let keep_label = domain.role != DomainRole::Target;
    if keep_label && scene.label.is_none() {
        return Err(Error::Data(format!("scene {} has no label raster", scene.id)));
    }
    let mut out = Vec::new();
    for &r in &tile_anchors(scene.height, th, stride, edge_anchor) {
        for &c in &tile_anchors(scene.width, tw, stride, edge_anchor) {
            let mut rgb = Vec::with_capacity(th * tw * 3);
            let mut dsm = Vec::with_capacity(th * tw);
            let mut lab = Vec::with_capacity(th * tw);
            for y in r..r + th {
                let row = y * scene.width;
                rgb.extend(scene.rgb[(row + c) * 3..(row + c + tw) * 3].iter().map(|&v| v as u16));
                dsm.extend_from_slice(&scene.dsm[row + c..row + c + tw]);
                if let (true, Some(l)) = (keep_label, &scene.label) {
                    lab.extend_from_slice(&l[row + c..row + c + tw]);
                }
            }
            let image: ImageTile = normalize_image(th, tw, &rgb, 8)?;
            let depth = normalize_dsm(th, tw, &dsm, domain.depth_stats)?;
            let label = if keep_label { Some(LabelTile::new(th, tw, lab)?) } else { None };
            out.push(SampleTriple {
                tile_id: format!("{}_r{r}_c{c}", scene.id),
                domain: Arc::clone(domain),
                image,
                label,
                depth: Some(depth),
                origin: Some(TileOrigin {
                    scene_id: scene.id.clone(),
                    row: r,
                    col: c,
                    scene_height: scene.height,
                    scene_width: scene.width,
                }),
            });
        }
    }
    Ok(out)
}
