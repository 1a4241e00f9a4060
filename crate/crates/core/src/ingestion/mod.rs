//! Dataset construction: scene tiling, DSM normalization, colour label
//! decoding, synthetic scenes and manifests.

mod manifest;
pub mod raster;
mod synth;
mod tiling;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use manifest::{
    check_disjoint, load_samples, read_manifest, write_dataset, write_manifest, DatasetManifest, SampleRef, Split,
    MANIFEST_SCHEMA,
};
pub use synth::{
    generate_synthetic_domain, write_scenes, ClassPaint, CountRange, HeightRanges, ObjectCounts, Palette, SynthConfig,
    SynthSide, BUILDING, CAR, CLASS_COUNT, CLUTTER, IMPERVIOUS, LOW_VEGETATION, TREE,
};
pub use tiling::{
    clip_tiles, compute_depth_stats, isprs_color_map, labels_from_color, normalize_dsm, paint_labels, tile_anchors,
    ColorEntry, SceneRaster, SceneRecord, CLASS_NAMES, ISPRS_COLORS,
};

use crate::data_model::{DepthStats, DomainRole, DomainSpec, SampleTriple};
use crate::error::{Error, Result};

/// Index of scene files written next to the rasters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneIndex {
    pub schema_version: u32,
    pub color_map: Vec<ColorEntry>,
    pub scenes: Vec<SceneRecord>,
}

pub const SCENE_INDEX: &str = "scenes.toml";

pub fn write_scene_index(dir: &Path, index: &SceneIndex) -> Result<()> {
    let text = toml::to_string(index).map_err(|e| Error::Schema(e.to_string()))?;
    std::fs::write(dir.join(SCENE_INDEX), text)?;
    Ok(())
}

pub fn read_scene_index(dir: &Path) -> Result<SceneIndex> {
    let path = dir.join(SCENE_INDEX);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let text = std::fs::read_to_string(&path)?;
    toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

/// How one domain's scenes are cut into a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub name: String,
    pub role: DomainRole,
    pub tile_size: usize,
    /// Defaults to `tile_size`.
    #[serde(default)]
    pub stride: Option<usize>,
    pub ground_resolution: f64,
    pub class_count: usize,
    /// Computed from the scenes when absent.
    #[serde(default)]
    pub depth_stats: Option<DepthStats>,
    /// Add overlapping tiles flush with the scene edge.
    #[serde(default = "yes")]
    pub edge_anchor: bool,
    /// Scene ids held out as the test split; the rest form the training split.
    #[serde(default)]
    pub test_scenes: Vec<String>,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl IngestConfig {
    pub fn domain(&self, stats: DepthStats) -> DomainSpec {
        DomainSpec {
            name: self.name.clone(),
            role: self.role,
            tile_height: self.tile_size,
            tile_width: self.tile_size,
            ground_resolution: self.ground_resolution,
            class_count: self.class_count,
            depth_stats: stats,
        }
    }
}

/// Tile a set of in-memory scenes for one domain. Labels are dropped when the
/// domain role is `Target`.
pub fn tile_scenes(scenes: &[SceneRaster], domain: &DomainSpec, stride: usize, edge_anchor: bool) -> Result<Vec<SampleTriple>> {
    domain.validate()?;
    let d = Arc::new(domain.clone());
    let mut out = Vec::new();
    for s in scenes {
        out.extend(clip_tiles(s, &d, stride, edge_anchor)?);
    }
    Ok(out)
}

/// Read a scene directory and write train (and, if requested, test)
/// datasets under `out`. Test tiles of a target domain keep their labels
/// under the evaluation role. Returns the manifest paths.
pub fn ingest(scenes_dir: &Path, cfg: &IngestConfig, out: &Path) -> Result<Vec<std::path::PathBuf>> {
    let index = read_scene_index(scenes_dir)?;
    let scenes = index
        .scenes
        .iter()
        .map(|r| r.load(scenes_dir, &index.color_map))
        .collect::<Result<Vec<_>>>()?;
    if scenes.is_empty() {
        return Err(Error::Data(format!("{} lists no scenes", scenes_dir.join(SCENE_INDEX).display())));
    }
    for id in &cfg.test_scenes {
        if !scenes.iter().any(|s| &s.id == id) {
            return Err(Error::Config(format!("test scene `{id}` is not in the scene index")));
        }
    }
    let (test, train): (Vec<SceneRaster>, Vec<SceneRaster>) = scenes.into_iter().partition(|s| cfg.test_scenes.contains(&s.id));
    if train.is_empty() {
        return Err(Error::Config("every scene is held out; the training split is empty".into()));
    }
    let stats = match cfg.depth_stats {
        Some(s) => s,
        None => compute_depth_stats(train.iter().chain(&test))?,
    };
    let stride = cfg.stride.unwrap_or(cfg.tile_size);
    let domain = cfg.domain(stats);
    let mut paths = vec![write_dataset(
        out,
        Split::Train,
        cfg.seed,
        &domain,
        &index.color_map,
        &tile_scenes(&train, &domain, stride, cfg.edge_anchor)?,
        None,
    )?];
    if !test.is_empty() {
        let eval_domain = DomainSpec {
            role: if cfg.role == DomainRole::Target { DomainRole::Evaluation } else { cfg.role },
            ..domain
        };
        let tiles = tile_scenes(&test, &eval_domain, cfg.tile_size, true)?;
        paths.push(write_dataset(out, Split::Test, cfg.seed, &eval_domain, &index.color_map, &tiles, None)?);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ingest_splits_by_scene_and_strips_target_labels() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            scene_size: 64,
            source_tile: 32,
            target_tile: 16,
            target_resolution: 10.0,
            ..SynthConfig::default()
        };
        let (scenes, domain) = generate_synthetic_domain(&cfg, SynthSide::Target, 0, 3).unwrap();
        let map = isprs_color_map();
        let records = write_scenes(dir.path(), &scenes, &map).unwrap();
        write_scene_index(dir.path(), &SceneIndex { schema_version: 1, color_map: map, scenes: records }).unwrap();
        let icfg = IngestConfig {
            name: domain.name.clone(),
            role: DomainRole::Target,
            tile_size: 16,
            stride: None,
            ground_resolution: 10.0,
            class_count: 6,
            depth_stats: None,
            edge_anchor: true,
            test_scenes: vec!["target002".into()],
            seed: 3,
        };
        let out = dir.path().join("ds");
        let paths = ingest(dir.path(), &icfg, &out).unwrap();
        let train = read_manifest(&paths[0]).unwrap();
        let test = read_manifest(&paths[1]).unwrap();
        check_disjoint(&train, &test).unwrap();
        assert_eq!((train.samples.len(), test.samples.len()), (8, 4));
        assert!(train.samples.iter().all(|s| s.label.is_none()));
        assert_eq!(test.domain.role, DomainRole::Evaluation);
        assert_eq!(train.domain.depth_stats, domain.depth_stats);
        let loaded = load_samples(&test, &paths[1]).unwrap();
        assert!(loaded.iter().all(|s| s.label.is_some()));
    }
}
