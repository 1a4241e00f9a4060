//! End-to-end orchestration: data preparation, the per-seed ablation grid,
//! aggregated reporting and qualitative figure panels.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_model::{denormalize_image, SampleTriple};
use crate::error::{Error, Result};
use crate::evaluation::{aggregate_seeds, evaluate, median, write_report, EvalReport};
use crate::ingestion::{
    generate_synthetic_domain, ingest, isprs_color_map, load_samples, paint_labels, raster, read_manifest, write_dataset,
    write_scene_index, write_scenes, ColorEntry, IngestConfig, SceneIndex, Split, SynthConfig, SynthSide,
};
use crate::params::stream_rng;
use crate::segmentation_trainer::{
    fit, read_predictions, resize_to_target, write_predictions, SegTrainConfig, FINAL_CHECKPOINT as SEG_CHECKPOINT,
    LOG_FILE as SEG_LOG,
};
use crate::translation_trainer::{mean_color_distance, translate_dataset, TranslationConfig, TranslationTrainer};

pub const PIPELINE_SCHEMA: u32 = 1;
/// Overrides the directory under which run directories are created.
pub const RUN_ROOT_ENV: &str = "UDA_RUN_ROOT";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const INDEX_FILE: &str = "index.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

/// Cells of the depth-loss ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Drdg,
    WoDsl,
    WoDccl,
    Rdg,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Drdg, Ablation::WoDsl, Ablation::WoDccl, Ablation::Rdg];

    /// `(enable_dsl, enable_dccl)`.
    pub fn flags(self) -> (bool, bool) {
        match self {
            Ablation::Drdg => (true, true),
            Ablation::WoDsl => (false, true),
            Ablation::WoDccl => (true, false),
            Ablation::Rdg => (false, false),
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Ablation::Drdg => "drdg",
            Ablation::WoDsl => "wo-dsl",
            Ablation::WoDccl => "wo-dccl",
            Ablation::Rdg => "rdg",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Drdg => "DRDG",
            Ablation::WoDsl => "DRDG (w/o DSL)",
            Ablation::WoDccl => "DRDG (w/o DCCL)",
            Ablation::Rdg => "RDG",
        }
    }
}

pub const BASELINE: &str = "baseline";

/// Where the two domains come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// Generate both domains; the last `target_test_scenes` target scenes
    /// form the evaluation split.
    Synthetic {
        #[serde(default)]
        synth: SynthConfig,
        source_scenes: usize,
        target_train_scenes: usize,
        target_test_scenes: usize,
    },
    /// Existing manifests; relative paths are resolved against the config file.
    Manifests {
        source_train: PathBuf,
        target_train: PathBuf,
        target_test: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FigureConfig {
    pub tiles: usize,
    pub seed: u64,
}

impl Default for FigureConfig {
    fn default() -> Self {
        FigureConfig { tiles: 2, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub data: DataSource,
    /// Per-seed values override the `seed` fields of both stage configs.
    pub seeds: Vec<u64>,
    pub ablations: Vec<Ablation>,
    #[serde(default = "yes")]
    pub baseline: bool,
    #[serde(default)]
    pub translation: TranslationConfig,
    #[serde(default)]
    pub segmentation: SegTrainConfig,
    #[serde(default)]
    pub figures: FigureConfig,
    /// Parent of run directories unless the environment override is set.
    #[serde(default = "default_root")]
    pub run_root: PathBuf,
}

fn yes() -> bool {
    true
}

fn default_root() -> PathBuf {
    PathBuf::from("runs")
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != PIPELINE_SCHEMA {
            return Err(Error::Config(format!(
                "pipeline schema version {} (expected {PIPELINE_SCHEMA})",
                self.schema_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        for (i, a) in self.ablations.iter().enumerate() {
            if self.ablations[..i].contains(a) {
                return Err(Error::Config(format!("ablation `{}` listed twice", a.key())));
            }
        }
        if self.ablations.is_empty() && !self.baseline {
            return Err(Error::Config("nothing to run: no ablation cells and no baseline".into()));
        }
        self.translation.validate()?;
        self.segmentation.validate()?;
        if let DataSource::Synthetic {
            synth,
            source_scenes,
            target_train_scenes,
            target_test_scenes,
        } = &self.data
        {
            synth.validate()?;
            if *source_scenes == 0 || *target_train_scenes == 0 || *target_test_scenes == 0 {
                return Err(Error::Config("synthetic scene counts must be positive".into()));
            }
        }
        Ok(())
    }

    /// Read a TOML config; unknown keys are rejected. Relative manifest paths
    /// and the run root become absolute against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let mut cfg: PipelineConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = std::path::absolute(&base)?;
        if let DataSource::Manifests {
            source_train,
            target_train,
            target_test,
        } = &mut cfg.data
        {
            for p in [source_train, target_train, target_test] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        if cfg.run_root.is_relative() {
            cfg.run_root = base.join(&cfg.run_root);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Identity of a run: hash of everything that affects its outputs.
    pub fn digest(&self) -> Result<String> {
        let mut identity = self.clone();
        identity.run_root = PathBuf::new();
        let json = serde_json::to_vec(&identity).map_err(|e| Error::Schema(e.to_string()))?;
        let hash = Sha256::digest(&json);
        Ok(hash[..8].iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn run_dir(&self) -> Result<PathBuf> {
        let root = std::env::var_os(RUN_ROOT_ENV).map_or_else(|| self.run_root.clone(), PathBuf::from);
        Ok(root.join(format!("run-{}", self.digest()?)))
    }
}

/// Outcome of one (seed, cell) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: String,
    pub seed: u64,
    /// Error message when a stage failed.
    pub error: Option<String>,
    /// Process exit code of the failure, if any.
    pub error_code: Option<i32>,
    pub report: Option<EvalReport>,
    /// Mean colour distance of translated source tiles to the target
    /// training set, before and after stage-1 training.
    pub color_distance_init: Option<f64>,
    pub color_distance_final: Option<f64>,
    pub depth_decoder_checksum: Option<(String, String)>,
    pub final_seg_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub label: String,
    pub aggregated: Option<EvalReport>,
    pub median_miou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub run_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub results: Vec<CellResult>,
    pub summaries: Vec<CellSummary>,
    /// Wall-clock seconds for data preparation and per (cell, seed); kept out
    /// of the report file, which must be reproducible, and written to
    /// `timings.json` instead.
    #[serde(skip)]
    pub timings: Timings,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub data_seconds: f64,
    pub cells: Vec<(String, u64, f64)>,
}

impl Timings {
    pub fn cell_total(&self, cell: &str) -> f64 {
        self.cells.iter().filter(|(c, _, _)| c == cell).map(|(_, _, t)| t).sum()
    }
}

impl PipelineReport {
    pub fn summary(&self, cell: &str) -> Option<&CellSummary> {
        self.summaries.iter().find(|s| s.cell == cell)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CellResult> {
        self.results.iter().filter(|r| r.error.is_some())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for sum in &self.summaries {
            match &sum.aggregated {
                Some(r) => s.push_str(&r.render_table(&format!("== {} (mean over seeds)", sum.label))),
                None => s.push_str(&format!("== {}: no successful seed\n", sum.label)),
            }
            s.push('\n');
        }
        s.push_str(&format!("{:<18} {:>12} {:>12}\n", "cell", "median mIoU", "mean mIoU"));
        for sum in &self.summaries {
            let med = sum.median_miou.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
            let mean = sum.aggregated.as_ref().map_or("-".to_string(), |r| format!("{:.2}", 100.0 * r.miou));
            s.push_str(&format!("{:<18} {:>12} {:>12}\n", sum.label, med, mean));
        }
        for f in self.failures() {
            s.push_str(&format!("FAILED {} seed {}: {}\n", f.cell, f.seed, f.error.as_deref().unwrap_or("")));
        }
        s
    }
}

/// Prepared datasets of one run.
struct Datasets {
    source_train: PathBuf,
    target_train: PathBuf,
    target_test: PathBuf,
}

fn prepare_data(cfg: &PipelineConfig, run: &Path) -> Result<Datasets> {
    match &cfg.data {
        DataSource::Manifests {
            source_train,
            target_train,
            target_test,
        } => Ok(Datasets {
            source_train: source_train.clone(),
            target_train: target_train.clone(),
            target_test: target_test.clone(),
        }),
        DataSource::Synthetic {
            synth,
            source_scenes,
            target_train_scenes,
            target_test_scenes,
        } => {
            let data = run.join("data");
            let map = isprs_color_map();
            let mut made = Vec::new();
            for (side, n, tile, res) in [
                (SynthSide::Source, *source_scenes, synth.source_tile, synth.source_resolution),
                (SynthSide::Target, target_train_scenes + target_test_scenes, synth.target_tile, synth.target_resolution),
            ] {
                let (scenes, domain) = generate_synthetic_domain(synth, side, 0, n)?;
                let dir = data.join(side.tag());
                let scene_dir = dir.join("scenes");
                let records = write_scenes(&scene_dir, &scenes, &map)?;
                write_scene_index(
                    &scene_dir,
                    &SceneIndex {
                        schema_version: 1,
                        color_map: map.clone(),
                        scenes: records,
                    },
                )?;
                let test_scenes = match side {
                    SynthSide::Source => Vec::new(),
                    SynthSide::Target => scenes[*target_train_scenes..].iter().map(|s| s.id.clone()).collect(),
                };
                let icfg = IngestConfig {
                    name: domain.name.clone(),
                    role: domain.role,
                    tile_size: tile,
                    stride: None,
                    ground_resolution: res,
                    class_count: domain.class_count,
                    depth_stats: Some(domain.depth_stats),
                    edge_anchor: true,
                    test_scenes,
                    seed: synth.seed,
                };
                made.push(ingest(&scene_dir, &icfg, &dir)?);
            }
            Ok(Datasets {
                source_train: made[0][0].clone(),
                target_train: made[1][0].clone(),
                target_test: made[1][1].clone(),
            })
        }
    }
}

fn load(path: &Path) -> Result<(Vec<SampleTriple>, Vec<ColorEntry>)> {
    let m = read_manifest(path)?;
    Ok((load_samples(&m, path)?, m.color_map))
}

struct Loaded {
    source: Vec<SampleTriple>,
    target: Vec<SampleTriple>,
    test: Vec<SampleTriple>,
    color_map: Vec<ColorEntry>,
}

fn train_and_score(seg: &SegTrainConfig, train: &[SampleTriple], test: &[SampleTriple], dir: &Path) -> Result<(EvalReport, f64)> {
    std::fs::create_dir_all(dir)?;
    let mut lines = String::new();
    let (model, records) = fit(seg, train, |r| {
        lines.push_str(&serde_json::to_string(r).map_err(|e| Error::Schema(e.to_string()))?);
        lines.push('\n');
        Ok(())
    })?;
    std::fs::write(dir.join(SEG_LOG), lines)?;
    model.save(&dir.join(SEG_CHECKPOINT), &records.iter().map(|r| r.loss).collect::<Vec<_>>())?;
    let preds = model.predict(&test.iter().map(|s| s.image.clone()).collect::<Vec<_>>())?;
    let ids: Vec<&str> = test.iter().map(|s| s.tile_id.as_str()).collect();
    write_predictions(&dir.join("predictions"), &ids, &preds)?;
    let named: Vec<(String, _)> = ids.iter().map(|s| s.to_string()).zip(preds).collect();
    let report = EvalReport::from_matrix(&evaluate(&named, test)?);
    write_report(&report, &dir.join("eval.json"), &dir.display().to_string())?;
    Ok((report, records.last().map_or(f64::NAN, |r| r.loss)))
}

fn run_baseline(cfg: &PipelineConfig, seed: u64, data: &Loaded, dir: &Path) -> Result<CellResult> {
    let target_domain = &data.target[0].domain;
    let seg = SegTrainConfig { seed, ..cfg.segmentation.clone() };
    let resized = resize_to_target(&data.source, target_domain)?;
    let (report, loss) = train_and_score(&seg, &resized, &data.test, dir)?;
    let images: Vec<_> = resized.iter().map(|s| s.image.clone()).collect();
    let target: Vec<_> = data.target.iter().map(|s| s.image.clone()).collect();
    let d = mean_color_distance(&images, &target);
    Ok(CellResult {
        cell: BASELINE.into(),
        seed,
        error: None,
        error_code: None,
        report: Some(report),
        color_distance_init: Some(d),
        color_distance_final: Some(d),
        depth_decoder_checksum: None,
        final_seg_loss: Some(loss),
    })
}

fn run_cell(cfg: &PipelineConfig, seed: u64, cell: Ablation, data: &Loaded, dir: &Path) -> Result<CellResult> {
    let (enable_dsl, enable_dccl) = cell.flags();
    let tcfg = TranslationConfig {
        seed,
        enable_dsl,
        enable_dccl,
        ..cfg.translation.clone()
    };
    let mut trainer = TranslationTrainer::new(tcfg, &data.source, &data.target)?;
    let target_images: Vec<_> = data.target.iter().map(|s| s.image.clone()).collect();
    let target_domain = (*data.target[0].domain).clone();
    let distance = |t: &TranslationTrainer| -> Result<f64> {
        let m = &t.state.model;
        let (tr, _) = translate_dataset(&m.g_st, &m.store, &data.source, &target_domain)?;
        Ok(mean_color_distance(&tr.iter().map(|s| s.image.clone()).collect::<Vec<_>>(), &target_images))
    };
    let init = distance(&trainer)?;
    let depth_before = trainer.state.model.store.checksum(&trainer.state.model.depth_decoder_params());
    trainer.run(Some(&dir.join("translation")))?;
    let depth_after = trainer.state.model.store.checksum(&trainer.state.model.depth_decoder_params());
    let m = &trainer.state.model;
    let (translated, depths) = translate_dataset(&m.g_st, &m.store, &data.source, &target_domain)?;
    let tdomain = (*translated[0].domain).clone();
    write_dataset(
        &dir.join("translated"),
        Split::Train,
        seed,
        &tdomain,
        &data.color_map,
        &translated,
        (!depths.is_empty()).then_some(depths.as_slice()),
    )?;
    let fin = mean_color_distance(&translated.iter().map(|s| s.image.clone()).collect::<Vec<_>>(), &target_images);
    let seg = SegTrainConfig { seed, ..cfg.segmentation.clone() };
    let (report, loss) = train_and_score(&seg, &translated, &data.test, &dir.join("segmentation"))?;
    Ok(CellResult {
        cell: cell.key().into(),
        seed,
        error: None,
        error_code: None,
        report: Some(report),
        color_distance_init: Some(init),
        color_distance_final: Some(fin),
        depth_decoder_checksum: Some((depth_before, depth_after)),
        final_seg_loss: Some(loss),
    })
}

fn failed(cell: &str, seed: u64, e: &Error) -> CellResult {
    CellResult {
        cell: cell.into(),
        seed,
        error: Some(e.to_string()),
        error_code: Some(e.exit_code()),
        report: None,
        color_distance_init: None,
        color_distance_final: None,
        depth_decoder_checksum: None,
        final_seg_loss: None,
    }
}

/// Relative paths of every file under `dir`, sorted.
fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let e = e.map_err(|e| Error::Io(e.into()))?;
        if e.file_type().is_file() {
            if let Ok(rel) = e.path().strip_prefix(dir) {
                out.push(rel.to_path_buf());
            }
        }
    }
    Ok(out)
}

/// Rewrite the run index so it lists every file in the run directory.
pub fn write_index(run: &Path) -> Result<()> {
    let mut files = list_files(run)?;
    files.retain(|p| p != Path::new(INDEX_FILE));
    let json = serde_json::to_string_pretty(&serde_json::json!({ "files": files })).map_err(|e| Error::Schema(e.to_string()))?;
    std::fs::write(run.join(INDEX_FILE), json)?;
    Ok(())
}

pub fn read_index(run: &Path) -> Result<Vec<PathBuf>> {
    let path = run.join(INDEX_FILE);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    #[derive(Deserialize)]
    struct Index {
        files: Vec<PathBuf>,
    }
    let idx: Index = serde_json::from_slice(&std::fs::read(&path)?).map_err(|e| Error::Schema(e.to_string()))?;
    Ok(idx.files)
}

fn seed_dir(run: &Path, seed: u64) -> PathBuf {
    run.join(format!("seed_{seed}"))
}

/// Run every (seed, cell) pair and the per-seed baseline. A failing cell is
/// recorded and the remaining cells still run. Everything is written under
/// the content-addressed run directory, which is recreated from scratch.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let run = cfg.run_dir()?;
    if run.exists() {
        std::fs::remove_dir_all(&run)?;
    }
    std::fs::create_dir_all(&run)?;
    std::fs::write(run.join(RESOLVED_CONFIG), toml::to_string(cfg).map_err(|e| Error::Schema(e.to_string()))?)?;
    let clock = Instant::now();
    let sets = prepare_data(cfg, &run)?;
    let (source, color_map) = load(&sets.source_train)?;
    let (target, _) = load(&sets.target_train)?;
    let (test, _) = load(&sets.target_test)?;
    if test.iter().any(|s| s.label.is_none()) {
        return Err(Error::Data("evaluation split must be labeled".into()));
    }
    if target.is_empty() || test.is_empty() {
        return Err(Error::Data("target train and test splits must be non-empty".into()));
    }
    let data = Loaded {
        source,
        target,
        test,
        color_map,
    };
    let mut timings = Timings {
        data_seconds: clock.elapsed().as_secs_f64(),
        cells: Vec::new(),
    };
    let mut results = Vec::new();
    for &seed in &cfg.seeds {
        let sd = seed_dir(&run, seed);
        if cfg.baseline {
            let clock = Instant::now();
            let r = run_baseline(cfg, seed, &data, &sd.join(BASELINE)).unwrap_or_else(|e| failed(BASELINE, seed, &e));
            timings.cells.push((BASELINE.into(), seed, clock.elapsed().as_secs_f64()));
            results.push(r);
        }
        for &cell in &cfg.ablations {
            let clock = Instant::now();
            let r = run_cell(cfg, seed, cell, &data, &sd.join(cell.key())).unwrap_or_else(|e| failed(cell.key(), seed, &e));
            timings.cells.push((cell.key().into(), seed, clock.elapsed().as_secs_f64()));
            results.push(r);
        }
    }
    let mut cells: Vec<(String, String)> = Vec::new();
    if cfg.baseline {
        cells.push((BASELINE.into(), "Baseline (source only)".into()));
    }
    cells.extend(cfg.ablations.iter().map(|a| (a.key().to_string(), a.label().to_string())));
    let mut summaries = Vec::new();
    for (key, label) in cells {
        let ok: Vec<(Option<u64>, EvalReport)> = results
            .iter()
            .filter(|r| r.cell == key)
            .filter_map(|r| r.report.clone().map(|rep| (Some(r.seed), rep)))
            .collect();
        let aggregated = if ok.is_empty() { None } else { Some(aggregate_seeds(&ok)?) };
        let median_miou = (!ok.is_empty()).then(|| median(&ok.iter().map(|(_, r)| r.miou).collect::<Vec<_>>()));
        summaries.push(CellSummary {
            cell: key,
            label,
            aggregated,
            median_miou,
        });
    }
    let report = PipelineReport {
        run_dir: run.clone(),
        seeds: cfg.seeds.clone(),
        results,
        summaries,
        timings,
    };
    std::fs::write(
        run.join("timings.json"),
        serde_json::to_string_pretty(&report.timings).map_err(|e| Error::Schema(e.to_string()))?,
    )?;
    std::fs::write(
        run.join(REPORT_JSON),
        serde_json::to_string_pretty(&report).map_err(|e| Error::Schema(e.to_string()))?,
    )?;
    std::fs::write(run.join(REPORT_TEXT), report.render())?;
    let manifests = serde_json::json!({
        "source_train": sets.source_train,
        "target_train": sets.target_train,
        "target_test": sets.target_test,
    });
    std::fs::write(run.join("datasets.json"), manifests.to_string())?;
    write_index(&run)?;
    Ok(report)
}

fn read_report(run: &Path) -> Result<PipelineReport> {
    let p = run.join(REPORT_JSON);
    if !p.exists() {
        return Err(Error::MissingFile(p));
    }
    serde_json::from_slice(&std::fs::read(&p)?).map_err(|e| Error::Schema(format!("{}: {e}", p.display())))
}

const GAP: usize = 2;
const SWATCH: usize = 12;

/// Side-by-side panels for a seeded sample of test tiles: target image,
/// ground truth, baseline prediction, then one prediction per ablation cell
/// (first seed), with a strip of class-colour swatches underneath.
pub fn emit_figures(run: &Path, tiles: usize, seed: u64) -> Result<Vec<PathBuf>> {
    let report = read_report(run)?;
    let datasets: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("datasets.json"))?)
        .map_err(|e| Error::Schema(e.to_string()))?;
    let test_path = PathBuf::from(
        datasets["target_test"]
            .as_str()
            .ok_or_else(|| Error::Schema("datasets.json has no target_test".into()))?,
    );
    let (test, color_map) = load(&test_path)?;
    let first_seed = *report.seeds.first().ok_or_else(|| Error::Schema("report lists no seeds".into()))?;
    let cell_dirs: Vec<PathBuf> = report
        .summaries
        .iter()
        .map(|s| {
            let base = seed_dir(run, first_seed).join(&s.cell);
            if s.cell == BASELINE {
                base.join("predictions")
            } else {
                base.join("segmentation").join("predictions")
            }
        })
        .collect();
    let preds = cell_dirs.iter().map(|d| read_predictions(d)).collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..test.len()).collect();
    order.shuffle(&mut stream_rng(seed, "figures"));
    order.truncate(tiles);
    order.sort_unstable();
    let out_dir = run.join("figures");
    std::fs::create_dir_all(&out_dir)?;
    let mut written = Vec::new();
    for &i in &order {
        let s = &test[i];
        let (h, w) = s.image.hw();
        let mut columns: Vec<Vec<u8>> = vec![denormalize_image(&s.image, 8).into_iter().map(|v| v as u8).collect()];
        let gt = s.label.as_ref().ok_or_else(|| Error::Data(format!("test tile `{}` has no label", s.tile_id)))?;
        columns.push(paint_labels(gt.data(), &color_map));
        for (p, dir) in preds.iter().zip(&cell_dirs) {
            let (_, l) = p
                .iter()
                .find(|(id, _)| *id == s.tile_id)
                .ok_or_else(|| Error::Data(format!("{} has no prediction for `{}`", dir.display(), s.tile_id)))?;
            columns.push(paint_labels(l.data(), &color_map));
        }
        let (pw, ph, rgb) = compose_panel(&columns, h, w, &color_map);
        let path = out_dir.join(format!("{}.png", s.tile_id));
        raster::write_rgb(&path, ph, pw, &rgb)?;
        written.push(path);
    }
    let legend: String = color_map
        .iter()
        .map(|e| format!("{} {:?} {}\n", e.class, e.rgb, crate::evaluation::class_names(color_map.len())[e.class as usize]))
        .collect();
    let mut columns = vec!["target image".to_string(), "ground truth".to_string()];
    columns.extend(report.summaries.iter().map(|s| s.label.clone()));
    std::fs::write(out_dir.join("legend.txt"), format!("columns: {}\n{legend}", columns.join(" | ")))?;
    write_index(run)?;
    Ok(written)
}

/// Lay out equally sized RGB tiles left to right on a white canvas and add
/// one swatch per colour-map entry below them. Returns `(width, height, rgb)`.
pub fn compose_panel(columns: &[Vec<u8>], h: usize, w: usize, color_map: &[ColorEntry]) -> (usize, usize, Vec<u8>) {
    let n = columns.len();
    let width = (n * w + (n + 1) * GAP).max(color_map.len() * (SWATCH + GAP) + GAP);
    let height = h + SWATCH + 3 * GAP;
    let mut rgb = vec![255u8; width * height * 3];
    let mut put = |y: usize, x: usize, px: &[u8]| {
        let o = (y * width + x) * 3;
        rgb[o..o + 3].copy_from_slice(px);
    };
    for (k, col) in columns.iter().enumerate() {
        let x0 = GAP + k * (w + GAP);
        for y in 0..h {
            for x in 0..w {
                put(GAP + y, x0 + x, &col[(y * w + x) * 3..(y * w + x) * 3 + 3]);
            }
        }
    }
    for (k, e) in color_map.iter().enumerate() {
        let x0 = GAP + k * (SWATCH + GAP);
        for y in 0..SWATCH {
            for x in 0..SWATCH {
                put(h + 2 * GAP + y, x0 + x, &e.rgb);
            }
        }
    }
    (width, height, rgb)
}
