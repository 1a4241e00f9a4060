//! TOML dataset manifests with tile paths relative to the manifest file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::raster;
use super::tiling::ColorEntry;
use crate::data_model::{denormalize_image, normalize_image, validate_sample, DepthTile, DomainSpec, LabelTile, SampleTriple, TileOrigin};
use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRef {
    pub tile_id: String,
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<TileOrigin>,
    /// Original-geometry DSM of a translated tile; kept for bookkeeping only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_depth: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub split: Split,
    pub seed: u64,
    pub domain: DomainSpec,
    pub color_map: Vec<ColorEntry>,
    pub samples: Vec<SampleRef>,
}

impl DatasetManifest {
    pub fn scene_ids(&self) -> HashSet<&str> {
        self.samples
            .iter()
            .filter_map(|s| s.origin.as_ref().map(|o| o.scene_id.as_str()))
            .collect()
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    for s in &manifest.samples {
        for p in [Some(&s.image), s.label.as_ref(), s.depth.as_ref(), s.source_depth.as_ref()].into_iter().flatten() {
            if p.is_absolute() {
                return Err(Error::Schema(format!("manifest path {} must be relative", p.display())));
            }
        }
    }
    let text = toml::to_string(manifest).map_err(|e| Error::Schema(e.to_string()))?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Parse a manifest and check that every referenced file exists.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let m: DatasetManifest = toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    if m.schema_version != MANIFEST_SCHEMA {
        return Err(Error::Schema(format!(
            "{}: schema version {} (expected {MANIFEST_SCHEMA})",
            path.display(),
            m.schema_version
        )));
    }
    m.domain.validate()?;
    let base = base_dir(path);
    for s in &m.samples {
        for p in [Some(&s.image), s.label.as_ref(), s.depth.as_ref(), s.source_depth.as_ref()].into_iter().flatten() {
            if !base.join(p).exists() {
                return Err(Error::MissingFile(base.join(p)));
            }
        }
    }
    Ok(m)
}

/// Decode every tile of a manifest located at `path`.
pub fn load_samples(m: &DatasetManifest, path: &Path) -> Result<Vec<SampleTriple>> {
    let base = base_dir(path);
    let domain = Arc::new(m.domain.clone());
    m.samples
        .iter()
        .map(|r| {
            let (h, w, rgb) = raster::read_rgb(&base.join(&r.image))?;
            let raw: Vec<u16> = rgb.into_iter().map(u16::from).collect();
            let image = normalize_image(h, w, &raw, 8)?;
            let label = match &r.label {
                Some(p) => {
                    let (lh, lw, l) = raster::read_gray(&base.join(p))?;
                    Some(LabelTile::new(lh, lw, l)?)
                }
                None => None,
            };
            let depth = match &r.depth {
                Some(p) => {
                    let (dh, dw, d) = raster::read_f32(&base.join(p))?;
                    Some(DepthTile::new(dh, dw, d)?)
                }
                None => None,
            };
            let s = SampleTriple {
                tile_id: r.tile_id.clone(),
                domain: Arc::clone(&domain),
                image,
                label,
                depth,
                origin: r.origin.clone(),
            };
            validate_sample(&s)?;
            Ok(s)
        })
        .collect()
}

/// Write tiles under `dir/tiles` and a manifest at `dir/<split>.toml`;
/// returns the manifest path. `source_depths`, when given, holds one
/// bookkeeping DSM per sample at its pre-translation geometry.
pub fn write_dataset(
    dir: &Path,
    split: Split,
    seed: u64,
    domain: &DomainSpec,
    color_map: &[ColorEntry],
    samples: &[SampleTriple],
    source_depths: Option<&[DepthTile]>,
) -> Result<PathBuf> {
    if let Some(d) = source_depths {
        if d.len() != samples.len() {
            return Err(Error::shape("source depths", samples.len(), d.len()));
        }
    }
    let tiles = dir.join("tiles");
    std::fs::create_dir_all(&tiles)?;
    let mut refs = Vec::with_capacity(samples.len());
    let mut seen = HashSet::new();
    for (i, s) in samples.iter().enumerate() {
        validate_sample(s)?;
        if !seen.insert(s.tile_id.as_str()) {
            return Err(Error::Data(format!("duplicate tile id `{}`", s.tile_id)));
        }
        let (h, w) = s.image.hw();
        let stem = format!("{}_{}", split.as_str(), s.tile_id);
        let image = PathBuf::from("tiles").join(format!("{stem}_rgb.png"));
        let bytes: Vec<u8> = denormalize_image(&s.image, 8).into_iter().map(|v| v as u8).collect();
        raster::write_rgb(&dir.join(&image), h, w, &bytes)?;
        let label = match &s.label {
            Some(l) => {
                let p = PathBuf::from("tiles").join(format!("{stem}_label.png"));
                raster::write_gray(&dir.join(&p), h, w, l.data())?;
                Some(p)
            }
            None => None,
        };
        let depth = match &s.depth {
            Some(d) => {
                let p = PathBuf::from("tiles").join(format!("{stem}_depth.tif"));
                raster::write_f32(&dir.join(&p), h, w, d.data())?;
                Some(p)
            }
            None => None,
        };
        let source_depth = match source_depths {
            Some(all) => {
                let d = &all[i];
                let (dh, dw) = d.hw();
                let p = PathBuf::from("tiles").join(format!("{stem}_source_depth.tif"));
                raster::write_f32(&dir.join(&p), dh, dw, d.data())?;
                Some(p)
            }
            None => None,
        };
        refs.push(SampleRef {
            tile_id: s.tile_id.clone(),
            image,
            label,
            depth,
            origin: s.origin.clone(),
            source_depth,
        });
    }
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA,
        split,
        seed,
        domain: domain.clone(),
        color_map: color_map.to_vec(),
        samples: refs,
    };
    let path = dir.join(format!("{}.toml", split.as_str()));
    write_manifest(&manifest, &path)?;
    Ok(path)
}

/// Evaluation and validation splits must not share scenes with training.
pub fn check_disjoint(train: &DatasetManifest, other: &DatasetManifest) -> Result<()> {
    let a = train.scene_ids();
    if let Some(id) = other.scene_ids().into_iter().find(|id| a.contains(id)) {
        return Err(Error::Data(format!(
            "scene `{id}` appears in both {} and {}",
            train.split.as_str(),
            other.split.as_str()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{DepthStats, DomainRole, ImageTile};
    use crate::ingestion::tiling::isprs_color_map;

    fn sample(i: usize, domain: &Arc<DomainSpec>) -> SampleTriple {
        SampleTriple {
            tile_id: format!("t{i}"),
            domain: Arc::clone(domain),
            image: normalize_image(4, 4, &(0..48).map(|v| (v * 5 + i) as u16).collect::<Vec<_>>(), 8).unwrap(),
            label: Some(LabelTile::new(4, 4, (0..16).map(|v| (v % 6) as u8).collect()).unwrap()),
            depth: Some(DepthTile::new(4, 4, (0..16).map(|v| v as f32 / 15.0).collect()).unwrap()),
            origin: Some(TileOrigin {
                scene_id: format!("s{i}"),
                row: 0,
                col: 0,
                scene_height: 4,
                scene_width: 4,
            }),
        }
    }

    fn domain() -> Arc<DomainSpec> {
        Arc::new(DomainSpec {
            name: "d".into(),
            role: DomainRole::Source,
            tile_height: 4,
            tile_width: 4,
            ground_resolution: 5.0,
            class_count: 6,
            depth_stats: DepthStats { min: 1.0, max: 2.5 },
        })
    }

    #[test]
    fn round_trip_keeps_order_and_bits() {
        let dir = tempfile::tempdir().unwrap();
        let d = domain();
        let samples: Vec<_> = (0..3).map(|i| sample(i, &d)).collect();
        let path = write_dataset(dir.path(), Split::Train, 7, &d, &isprs_color_map(), &samples, None).unwrap();
        let m = read_manifest(&path).unwrap();
        assert_eq!(m.samples.len(), 3);
        assert_eq!(m.samples.iter().map(|s| s.tile_id.as_str()).collect::<Vec<_>>(), ["t0", "t1", "t2"]);
        assert!(m.samples.iter().all(|s| s.image.is_relative()));
        let back = load_samples(&m, &path).unwrap();
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.image, b.image);
            assert_eq!(a.label, b.label);
            assert_eq!(a.depth, b.depth);
            assert_eq!(a.origin, b.origin);
        }
        let again = dir.path().join("copy.toml");
        write_manifest(&m, &again).unwrap();
        assert_eq!(read_manifest(&again).unwrap(), m);
    }

    #[test]
    fn deleted_tile_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let d = domain();
        let path = write_dataset(dir.path(), Split::Test, 1, &d, &isprs_color_map(), &[sample(0, &d)], None).unwrap();
        let m = read_manifest(&path).unwrap();
        std::fs::remove_file(dir.path().join(&m.samples[0].image)).unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::MissingFile(_))));
    }

    #[test]
    fn schema_violations_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.toml");
        std::fs::write(&p, "schema_version = 1\nsplit = \"train\"\nbogus = 3\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::Schema(_))));
    }

    #[test]
    fn overlapping_scenes_rejected() {
        let d = domain();
        let dir = tempfile::tempdir().unwrap();
        let a = write_dataset(&dir.path().join("a"), Split::Train, 1, &d, &[], &[sample(0, &d), sample(1, &d)], None).unwrap();
        let b = write_dataset(&dir.path().join("b"), Split::Test, 1, &d, &[], &[sample(1, &d)], None).unwrap();
        let c = write_dataset(&dir.path().join("c"), Split::Test, 1, &d, &[], &[sample(2, &d)], None).unwrap();
        let (a, b, c) = (read_manifest(&a).unwrap(), read_manifest(&b).unwrap(), read_manifest(&c).unwrap());
        assert!(check_disjoint(&a, &b).is_err());
        assert!(check_disjoint(&a, &c).is_ok());
    }

    #[test]
    fn mismatched_tile_geometry_fails_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let d = domain();
        let path = write_dataset(dir.path(), Split::Train, 1, &d, &[], &[sample(0, &d)], None).unwrap();
        let mut m = read_manifest(&path).unwrap();
        m.domain.tile_height = 5;
        let _ = ImageTile::new(4, 4, vec![0.0; 48]).unwrap();
        assert!(load_samples(&m, &path).is_err());
    }
}
