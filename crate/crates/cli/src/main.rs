//! `uqih`: command-line entry point of the calibration harness.
//!
//! Exit codes: 0 success, 1 fatal error, 2 partial success (some inputs
//! failed and were recorded).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use uqih_core::cwssim::{self, PyramidConfig};
use uqih_core::fid::{self, ToyEmbedder};
use uqih_core::manifest::{read_json, write_json, ImageManifest};
use uqih_core::preprocess::{self, PatchSpec, PipelineOptions};
use uqih_core::protocol::{self, SweepConfig};
use uqih_core::uq::{self, UqOptions};
use uqih_core::{image, io, report};

const RUN_CONFIG_FILE: &str = "run-config.json";
const DEFAULT_OUT: &str = "uqih-out";

#[derive(Debug, Parser)]
#[command(name = "uqih", version, about = "Uncertainty-calibration harness for image-to-image translation models")]
struct Cli {
    /// Base seed for every stochastic step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads shared by all parallel stages.
    #[arg(long, global = true, env = "UQIH_THREADS")]
    threads: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    log_level: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Re-run from a recorded run-config.json; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "snake_case")]
enum Command {
    /// Segment, normalise and cut images into equalised patches.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 256)]
        patch_size: usize,
        #[arg(long, default_value_t = 246)]
        stride: usize,
        #[arg(long, default_value_t = 0.99)]
        fill_threshold: f64,
        #[arg(long, default_value_t = 2224)]
        canvas: usize,
        /// Keep every foreground component, not only the largest.
        #[arg(long)]
        all_components: bool,
    },
    /// Write one Gaussian-noise corrupted copy of a test set per level.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = protocol::DEFAULT_LEVELS)]
        levels: Vec<f64>,
    },
    /// Sigma maps, PSD per image and mPSD of a stack manifest.
    Uq {
        #[arg(long)]
        stacks: PathBuf,
        /// Register samples to their source before computing uncertainty.
        #[arg(long)]
        align: bool,
        #[arg(long, default_value_t = uq::DEFAULT_CROP)]
        crop: usize,
        #[arg(long, default_value_t = uq::DEFAULT_MAX_SHIFT)]
        max_shift: usize,
    },
    /// FID between two image manifests or embedding files.
    Fid {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        #[arg(long, default_value = "toy-area8x8")]
        provider: String,
    },
    /// CW-SSIM between two image manifests, paired by source_id.
    Cwssim {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 4)]
        levels: usize,
        #[arg(long, default_value_t = 6)]
        orientations: usize,
        #[arg(long, default_value_t = 7)]
        window: usize,
        #[arg(long, default_value_t = 0.01)]
        stability_k: f64,
    },
    /// FID and mPSD per noise level, correlations and report.
    Calibrate {
        #[arg(long)]
        sweep: PathBuf,
        /// One stack manifest per noise level, in level order.
        #[arg(long, num_args = 1.., required = true)]
        stacks: Vec<PathBuf>,
        /// Target set: image manifest (.json) or embedding file.
        #[arg(long)]
        target: PathBuf,
    },
    /// Re-render the report files from a curve.json.
    Report {
        #[arg(long)]
        curve: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunConfig {
    seed: u64,
    threads: Option<usize>,
    log_level: String,
    out: PathBuf,
    command: Command,
}

enum Outcome {
    Complete,
    Partial,
}

fn resolve(cli: Cli) -> Result<RunConfig> {
    let base = match &cli.config {
        Some(path) => Some(read_json::<RunConfig>(path).with_context(|| format!("reading {}", path.display()))?),
        None => None,
    };
    let command = match (cli.command, &base) {
        (Some(c), _) => c,
        (None, Some(b)) => b.command.clone(),
        (None, None) => bail!("a subcommand is required unless --config is given"),
    };
    Ok(RunConfig {
        seed: cli.seed.or(base.as_ref().map(|b| b.seed)).unwrap_or(0),
        threads: cli.threads.or(base.as_ref().and_then(|b| b.threads)),
        log_level: cli.log_level.or(base.as_ref().map(|b| b.log_level.clone())).unwrap_or_else(|| "warn".into()),
        out: cli.out.or(base.as_ref().map(|b| b.out.clone())).unwrap_or_else(|| DEFAULT_OUT.into()),
        command,
    })
}

fn partial_if(failed: bool) -> Outcome {
    if failed {
        Outcome::Partial
    } else {
        Outcome::Complete
    }
}

/// Loads every image of a manifest, keyed by source_id.
fn load_by_id(path: &Path) -> Result<BTreeMap<String, std::result::Result<uqih_core::Image, String>>> {
    let manifest = ImageManifest::load(path)?;
    Ok(manifest
        .entries
        .iter()
        .map(|e| (e.source_id.clone(), io::load_image(&e.path).map_err(|err| err.to_string())))
        .collect())
}

/// Embeds an image manifest with `provider`, or loads an embedding file as is.
fn fid_side(path: &Path, provider: &str) -> Result<fid::EmbeddingSet> {
    if path.extension().is_some_and(|e| e == "json") {
        let Some(embedder) = ToyEmbedder::from_provider_id(provider) else {
            bail!("provider {provider:?} cannot embed images in-process; pass embedding files instead");
        };
        Ok(protocol::embed_manifest(path, &embedder)?)
    } else {
        Ok(fid::load_embeddings(path)?)
    }
}

#[derive(Serialize)]
struct FidReport {
    fid: f64,
    provider_id: String,
    n_real: usize,
    n_generated: usize,
}

#[derive(Serialize)]
struct PairScore {
    source_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct CwssimReport {
    mean: f64,
    config: PyramidConfig,
    pairs: Vec<PairScore>,
}

fn run(cfg: &RunConfig) -> Result<Outcome> {
    let out = &cfg.out;
    match &cfg.command {
        Command::Preprocess { manifest, patch_size, stride, fill_threshold, canvas, all_components } => {
            let spec =
                PatchSpec { patch_size: *patch_size, stride: *stride, fill_threshold: *fill_threshold, canvas: *canvas };
            let opts = PipelineOptions { largest_component: !all_components };
            let result = preprocess::run_pipeline(manifest, &spec, &opts, out)?;
            log::info!("{} patches, {} failed images", result.patches.len(), result.errors.len());
            Ok(partial_if(!result.errors.is_empty()))
        }
        Command::Augment { manifest, levels } => {
            let sweep = SweepConfig { noise_levels: levels.clone(), seed: cfg.seed, ..SweepConfig::default() };
            let sets = protocol::make_noisy_testsets(manifest, &sweep, out)?;
            write_json(&out.join("augment.json"), &sets)?;
            Ok(partial_if(sets.iter().any(|s| !s.failures.is_empty())))
        }
        Command::Uq { stacks, align, crop, max_shift } => {
            let opts = UqOptions { align: *align, crop: *crop, max_shift: *max_shift };
            let eval = uq::evaluate_stacks(stacks, &opts)?;
            uq::write_evaluation(&eval, out)?;
            println!("{}", eval.mpsd);
            Ok(partial_if(!eval.skipped.is_empty()))
        }
        Command::Fid { real, generated, provider } => {
            let a = fid_side(real, provider)?;
            let b = fid_side(generated, provider)?;
            let value = fid::fid_embeddings(&a, &b)?;
            let report =
                FidReport { fid: value, provider_id: a.provider_id().to_string(), n_real: a.n(), n_generated: b.n() };
            write_json(&out.join("fid.json"), &report)?;
            println!("{value}");
            Ok(Outcome::Complete)
        }
        Command::Cwssim { a, b, levels, orientations, window, stability_k } => {
            let pcfg = PyramidConfig {
                levels: *levels,
                orientations: *orientations,
                window: *window,
                stability_k: *stability_k,
            };
            pcfg.validate()?;
            let left = load_by_id(a)?;
            let right = load_by_id(b)?;
            let mut ids: Vec<&String> = left.keys().chain(right.keys()).collect();
            ids.sort();
            ids.dedup();
            let scored: Vec<PairScore> = {
                use rayon::prelude::*;
                ids.par_iter()
                    .map(|id| {
                        let score = || -> std::result::Result<f64, String> {
                            let x = left.get(*id).ok_or("missing from --a")?.as_ref().map_err(Clone::clone)?;
                            let y = right.get(*id).ok_or("missing from --b")?.as_ref().map_err(Clone::clone)?;
                            let x = image::channel_average(x).map_err(|e| e.to_string())?;
                            let y = image::channel_average(y).map_err(|e| e.to_string())?;
                            cwssim::cwssim(&x, &y, &pcfg).map_err(|e| e.to_string())
                        };
                        match score() {
                            Ok(s) => PairScore { source_id: (*id).clone(), score: Some(s), error: None },
                            Err(e) => PairScore { source_id: (*id).clone(), score: None, error: Some(e) },
                        }
                    })
                    .collect()
            };
            let ok: Vec<f64> = scored.iter().filter_map(|p| p.score).collect();
            if ok.is_empty() {
                bail!("no image pair could be scored");
            }
            let mean = ok.iter().sum::<f64>() / ok.len() as f64;
            let failed = ok.len() < scored.len();
            write_json(&out.join("cwssim.json"), &CwssimReport { mean, config: pcfg, pairs: scored })?;
            println!("{mean}");
            Ok(partial_if(failed))
        }
        Command::Calibrate { sweep, stacks, target } => {
            let sweep_cfg: SweepConfig = read_json(sweep)?;
            let result = protocol::calibrate(&sweep_cfg, stacks, target)?;
            let mut partial = false;
            for outcome in &result.outcomes {
                let dir = out.join("levels").join(protocol::level_dir_name(outcome.result.noise_percent));
                uq::write_evaluation(&outcome.evaluation, &dir)?;
                partial |= !outcome.evaluation.skipped.is_empty();
            }
            report::emit_report(&result.curve, out)?;
            Ok(partial_if(partial))
        }
        Command::Report { curve } => {
            let curve = protocol::load_curve(curve)?;
            report::emit_report(&curve, out)?;
            Ok(Outcome::Complete)
        }
    }
}

fn init_logging(level: &str) {
    let filter = level.parse().unwrap_or_else(|_| {
        eprintln!("unknown log level {level:?}, using warn");
        log::LevelFilter::Warn
    });
    let _ = env_logger::Builder::new().filter_level(filter).format_timestamp(None).try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cfg = match resolve(cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    init_logging(&cfg.log_level);

    let setup = || -> Result<()> {
        if let Some(n) = cfg.threads {
            if n == 0 {
                bail!("--threads must be at least 1");
            }
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
        }
        write_json(&cfg.out.join(RUN_CONFIG_FILE), &cfg)?;
        Ok(())
    };
    let result = setup().and_then(|()| run(&cfg));
    match result {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => {
            log::warn!("completed with failures; see outputs under {}", cfg.out.display());
            ExitCode::from(2)
        }
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
