use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use uda_core::evaluation::evaluate_dir;
use uda_core::ingestion::{
    generate_synthetic_domain, ingest, isprs_color_map, load_samples, read_manifest, write_scene_index, write_scenes,
    IngestConfig, SceneIndex, SynthConfig, SynthSide,
};
use uda_core::pipeline::{emit_figures, run_pipeline, PipelineConfig};
use uda_core::segmentation_trainer::{predict_manifest, source_only_baseline, train_segmentation, SegTrainConfig};
use uda_core::translation_trainer::{resume, train_translation, translate_manifest, TranslationConfig, TranslationTrainer};
use uda_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "uda", version, about = "Depth-assisted cross-domain aerial segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Side {
    Source,
    Target,
    Both,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic scenes for one or both domains
    Synth {
        /// Generator settings (TOML); defaults when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scenes per domain
        #[arg(long)]
        scenes: usize,
        #[arg(long, value_enum, default_value = "both")]
        side: Side,
        /// Index of the first generated scene
        #[arg(long, default_value_t = 0)]
        first: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tile a scene directory into train (and test) manifests
    Ingest {
        #[arg(long)]
        scenes: PathBuf,
        /// Domain and tiling settings (TOML)
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 1: train the translation model
    TrainTranslate {
        /// Translation settings (TOML); ignored when resuming
        #[arg(long, required_unless_present = "resume")]
        config: Option<PathBuf>,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a translation checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Translate a labeled source manifest into a target-style dataset
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 2: train a segmentation model
    TrainSeg {
        /// Segmentation settings (TOML); defaults when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train the source-only baseline: resize `--data` to the geometry
        /// of this target manifest instead of using translated tiles
        #[arg(long)]
        baseline_target: Option<PathBuf>,
    },
    /// Predict label rasters for every tile of a manifest
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against a labeled manifest
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// JSON report; a text table is written next to it
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full ablation grid from one config file
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Also render figure panels for the configured tiles
        #[arg(long)]
        figures: bool,
    },
    /// Render qualitative panels for a completed run
    Figures {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 2)]
        tiles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), load_toml)
}

fn synth(cfg: &SynthConfig, scenes: usize, side: Side, first: usize, out: &Path) -> Result<()> {
    let sides: &[SynthSide] = match side {
        Side::Source => &[SynthSide::Source],
        Side::Target => &[SynthSide::Target],
        Side::Both => &[SynthSide::Source, SynthSide::Target],
    };
    let map = isprs_color_map();
    for &s in sides {
        let (rasters, domain) = generate_synthetic_domain(cfg, s, first, scenes)?;
        let dir = out.join(s.tag());
        let records = write_scenes(&dir, &rasters, &map)?;
        write_scene_index(
            &dir,
            &SceneIndex {
                schema_version: 1,
                color_map: map.clone(),
                scenes: records,
            },
        )?;
        println!(
            "{}: {} scenes, depth range [{:.2}, {:.2}] m -> {}",
            domain.name,
            rasters.len(),
            domain.depth_stats.min,
            domain.depth_stats.max,
            dir.display()
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            config,
            scenes,
            side,
            first,
            out,
        } => {
            let cfg: SynthConfig = load_or_default(config.as_deref())?;
            synth(&cfg, scenes, side, first, &out)
        }
        Command::Ingest { scenes, domain, out } => {
            let cfg: IngestConfig = load_toml(&domain)?;
            for p in ingest(&scenes, &cfg, &out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::TrainTranslate {
            config,
            source,
            target,
            out,
            resume: from,
        } => {
            let ckpt = match from {
                Some(ckpt) => {
                    let (cfg, state) = resume(&ckpt)?;
                    let load = |p: &Path| -> Result<_> { load_samples(&read_manifest(p)?, p) };
                    let mut trainer = TranslationTrainer::with_state(cfg, state, &load(&source)?, &load(&target)?)?;
                    println!("resuming at step {} of {}", trainer.state.step, trainer.cfg.steps);
                    trainer.run(Some(&out))?;
                    out.join(uda_core::translation_trainer::FINAL_CHECKPOINT)
                }
                None => {
                    let cfg: TranslationConfig = load_toml(config.as_deref().expect("required by clap"))?;
                    train_translation(&cfg, &source, &target, &out)?
                }
            };
            println!("{}", ckpt.display());
            Ok(())
        }
        Command::Translate { checkpoint, data, out } => {
            println!("{}", translate_manifest(&checkpoint, &data, &out)?.display());
            Ok(())
        }
        Command::TrainSeg {
            config,
            data,
            out,
            baseline_target,
        } => {
            let cfg: SegTrainConfig = load_or_default(config.as_deref())?;
            let ckpt = match baseline_target {
                Some(t) => source_only_baseline(&cfg, &data, &read_manifest(&t)?.domain, &out)?,
                None => train_segmentation(&cfg, &data, &out)?,
            };
            println!("{}", ckpt.display());
            Ok(())
        }
        Command::Predict { checkpoint, data, out } => {
            println!("{}", predict_manifest(&checkpoint, &data, &out)?.display());
            Ok(())
        }
        Command::Eval { pred, gt, out } => {
            let report = evaluate_dir(&pred, &gt, &out)?;
            print!("{}", report.render_table(&format!("evaluation of {}", pred.display())));
            Ok(())
        }
        Command::Pipeline { config, figures } => {
            let cfg = PipelineConfig::load(&config)?;
            let report = run_pipeline(&cfg)?;
            print!("{}", report.render());
            println!("run directory: {}", report.run_dir.display());
            if figures {
                for p in emit_figures(&report.run_dir, cfg.figures.tiles, cfg.figures.seed)? {
                    println!("{}", p.display());
                }
            }
            // Cells fail independently; surface the first failure's code.
            let first = report.failures().next().cloned();
            match first {
                Some(f) => Err(match f.error_code {
                    Some(4) => Error::NonFinite {
                        term: format!("cell {} seed {}", f.cell, f.seed),
                        step: 0,
                    },
                    Some(2) => Error::Config(f.error.unwrap_or_default()),
                    _ => Error::Data(f.error.unwrap_or_default()),
                }),
                None => Ok(()),
            }
        }
        Command::Figures { run, tiles, seed } => {
            for p in emit_figures(&run, tiles, seed)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
