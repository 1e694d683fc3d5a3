//! `activeseg`: batch entry points for every pipeline stage.
//!
//! Stages hand files to each other: `synth` writes a dataset manifest,
//! `train-pixel` a probability field, `watershed` an over-segmentation,
//! `train-boundary` a boundary model, `agglomerate` the final segmentation,
//! and `evaluate` compares any segmentation with groundtruth.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use activeseg::active::{GroundTruthOracle, LoopStatus};
use activeseg::active_pixel::{oracle_pool, run_pixel_loop, PixelLoopConfig};
use activeseg::agglomerate::{agglomerate, sweep_thresholds, AgglomerationConfig};
use activeseg::boundary::{boundary_feature_bank, derive_boundary_truth, run_boundary_loop, BoundaryLoopConfig, RegionAdjacencyGraph};
use activeseg::features::{compute_pixel_features, FeatureBank, DEFAULT_SCALES};
use activeseg::forest::{self, EnsembleModel, ForestConfig};
use activeseg::io::{self, DatasetManifest};
use activeseg::metrics::{evaluate, Evaluation};
use activeseg::oversegment::{watershed, SeedRule, WatershedConfig};
use activeseg::synth::{generate_synthetic_volume, SynthConfig};
use activeseg::{Dims, SegmentationMap, CLASS_COUNT};
use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Parser)]
#[command(name = "activeseg", version, about = "Active-learning segmentation of EM stacks")]
struct Cli {
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with stage settings; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with class labels and groundtruth bodies.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Volume size as XxY or XxYxZ.
        #[arg(long)]
        size: Option<String>,
        #[arg(long)]
        cells: Option<usize>,
        #[arg(long)]
        mitochondria: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Compute the pixel feature bank of a dataset.
    Features {
        #[arg(long)]
        manifest: PathBuf,
        /// Header path of the feature matrix to write.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated smoothing scales.
        #[arg(long)]
        scales: Option<String>,
    },
    /// Train the pixel classifier; writes model.bin, probabilities.json and report.json.
    TrainPixel {
        #[arg(long)]
        manifest: PathBuf,
        /// Precomputed feature bank; computed from the images when absent.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Run the full query loop, answering from the manifest's labels.
        #[arg(long)]
        oracle: bool,
        /// Groundtruth samples per class in the oracle's initial pool.
        #[arg(long, default_value_t = 1000)]
        pool_per_class: usize,
        /// Without --oracle: JSON list of [voxel, class] pairs to train on.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Number of query batches.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Seeded watershed of the membrane channel.
    Watershed {
        #[arg(long)]
        probabilities: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ws_threshold: Option<f64>,
        #[arg(long)]
        ws_min_size: Option<usize>,
        /// Keep every below-threshold component as a seed.
        #[arg(long)]
        keep_all: bool,
    },
    /// Train the boundary classifier; writes model.bin and report.json.
    TrainBoundary {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        probabilities: PathBuf,
        #[arg(long)]
        oversegmentation: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run the full query loop, answering from the manifest's groundtruth.
        #[arg(long)]
        oracle: bool,
        /// Without --oracle: JSON list of [boundary, 0|1] pairs to train on.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Merge over-segmentation regions with a boundary model.
    Agglomerate {
        #[arg(long)]
        probabilities: PathBuf,
        #[arg(long)]
        oversegmentation: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Segmentation header, or a directory when --sweep is given.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        inclusion_threshold: Option<f64>,
        /// Comma-separated ascending thresholds; writes one segmentation each and sweep.json.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Compare segmentations with groundtruth; prints metrics JSON.
    Evaluate {
        /// Groundtruth segmentation header.
        #[arg(long, conflicts_with = "manifest")]
        groundtruth: Option<PathBuf>,
        /// Dataset manifest whose groundtruth to use.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, conflicts_with = "sweep")]
        segmentation: Option<PathBuf>,
        /// sweep.json written by `agglomerate --sweep`.
        #[arg(long)]
        sweep: Option<PathBuf>,
        /// With --sweep: also write one CSV row per threshold.
        #[arg(long, requires = "sweep")]
        csv: Option<PathBuf>,
    },
    /// Run the annotation session service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory holding session state.
        #[arg(long, default_value = "sessions")]
        root: PathBuf,
    },
}

/// Contents of `--config`. Every section is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Settings {
    synth: Option<SynthConfig>,
    scales: Option<Vec<f64>>,
    pixel: PixelLoopConfig,
    watershed: WatershedConfig,
    boundary: BoundaryLoopConfig,
    agglomeration: AgglomerationConfig,
}

impl Settings {
    fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Settings> {
        let mut s: Settings = match path {
            Some(p) => io::read_json(p)?,
            None => Settings::default(),
        };
        if let Some(seed) = seed {
            s.pixel.seed = seed;
            s.boundary.seed = seed;
            if let Some(synth) = s.synth.as_mut() {
                synth.seed = seed;
            }
        }
        Ok(s)
    }

    fn scales(&self) -> Vec<f64> {
        self.scales.clone().unwrap_or_else(|| DEFAULT_SCALES.to_vec())
    }
}

#[derive(Serialize, Deserialize)]
struct SweepEntry {
    theta: f64,
    segmentation: PathBuf,
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|t| t.trim().parse::<f64>().with_context(|| format!("bad number {t:?}"))).collect()
}

fn parse_size(s: &str) -> Result<Dims> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|t| t.parse::<usize>().with_context(|| format!("bad size {s:?}")))
        .collect::<Result<_>>()?;
    match parts[..] {
        [x, y] => Ok(Dims::planar(x, y)?),
        [x, y, z] => Ok(Dims::new(x, y, z)?),
        _ => Err(anyhow!("size must be XxY or XxYxZ, got {s:?}")),
    }
}

fn load_manifest(path: &Path) -> Result<io::Dataset> {
    let manifest = DatasetManifest::load(path)?;
    manifest.validate()?;
    Ok(io::load_dataset(&manifest)?)
}

fn pixel_bank(features: Option<&Path>, volume: &activeseg::RasterVolume, scales: &[f64]) -> Result<FeatureBank> {
    match features {
        Some(p) => {
            let (bank, dims) = FeatureBank::load(p)?;
            if bank.n() != volume.len() || dims.is_some_and(|d| d != volume.dims()) {
                return Err(activeseg::Error::DimensionMismatch(format!(
                    "feature bank has {} rows, the volume {} voxels",
                    bank.n(),
                    volume.len()
                ))
                .into());
            }
            Ok(bank)
        }
        None => Ok(compute_pixel_features(volume, scales)?),
    }
}

fn read_pairs(path: &Path) -> Result<Vec<(usize, usize)>> {
    Ok(io::read_json(path)?)
}

/// Trains directly on hand-given labels, without a query loop.
fn train_on(bank: &FeatureBank, pairs: &[(usize, usize)], k: usize, cfg: ForestConfig) -> Result<EnsembleModel> {
    if let Some(&(s, _)) = pairs.iter().find(|p| p.0 >= bank.n()) {
        return Err(anyhow!("labeled sample {s} is out of range (n = {})", bank.n()));
    }
    let idx: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let labels: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    Ok(forest::train(&bank.select(&idx), &labels, k, &cfg)?)
}

fn emit(value: serde_json::Value) {
    use std::io::Write;
    // a closed pipe downstream is not our failure
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&value).expect("json"));
}

fn boundary_inputs(probabilities: &Path, oversegmentation: &Path) -> Result<(SegmentationMap, RegionAdjacencyGraph)> {
    let field = io::load_probability_field(probabilities)?;
    let seg = io::load_segmentation(oversegmentation)?;
    if field.dims() != seg.dims() {
        return Err(activeseg::Error::DimensionMismatch(format!(
            "probabilities {:?} vs over-segmentation {:?}",
            field.dims(),
            seg.dims()
        ))
        .into());
    }
    let rag = RegionAdjacencyGraph::build(&seg, &field)?;
    Ok((seg, rag))
}

fn run(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Synth { out, size, cells, mitochondria, noise } => {
            let mut cfg = settings.synth.unwrap_or_else(|| SynthConfig::desk_fixture(cli.seed.unwrap_or(1)));
            if let Some(s) = size {
                cfg.dims = parse_size(&s)?;
            }
            cfg.cell_count = cells.unwrap_or(cfg.cell_count);
            cfg.mito_count = mitochondria.unwrap_or(cfg.mito_count);
            cfg.noise_sigma = noise.unwrap_or(cfg.noise_sigma);
            let data = generate_synthetic_volume(&cfg)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let manifest = io::save_dataset(&out, &data.volume, Some(&data.labels), Some(&data.segmentation))?;
            emit(json!({"manifest": manifest, "dims": cfg.dims, "regions": data.segmentation.region_count()}));
        }
        Command::Features { manifest, out, scales } => {
            let data = load_manifest(&manifest)?;
            let scales = match scales {
                Some(s) => parse_list(&s)?,
                None => settings.scales(),
            };
            let bank = compute_pixel_features(&data.volume, &scales)?;
            bank.save(&out, Some(data.volume.dims()))?;
            emit(json!({"features": out, "n": bank.n(), "d": bank.d()}));
        }
        Command::TrainPixel { manifest, features, out, oracle, pool_per_class, labels, budget } => {
            let data = load_manifest(&manifest)?;
            let dims = data.volume.dims();
            let bank = Arc::new(pixel_bank(features.as_deref(), &data.volume, &settings.scales())?);
            let mut cfg = settings.pixel;
            cfg.budget = budget.unwrap_or(cfg.budget);
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let (model, report) = if oracle {
                let truth = data.labels.ok_or_else(|| anyhow!("--oracle needs label planes in the manifest"))?;
                let pool = oracle_pool(&truth, pool_per_class, cfg.seed);
                let mut source = GroundTruthOracle::new(truth.iter().map(|l| l.index()).collect());
                let session = run_pixel_loop(bank.clone(), &pool, &mut source, cfg)?;
                let model = session.model().cloned().ok_or_else(|| anyhow!("the loop produced no model"))?;
                let report = json!({
                    "batches": session.batches_done(),
                    "labeled": session.training_set().len(),
                    "history": session.history(),
                });
                (model, report)
            } else {
                let path = labels.ok_or_else(|| anyhow!("give --oracle or --labels"))?;
                let pairs = read_pairs(&path)?;
                let model = train_on(&bank, &pairs, CLASS_COUNT, ForestConfig::new(cfg.tree_count, cfg.seed))?;
                (model, json!({"batches": 0, "labeled": pairs.len(), "history": []}))
            };
            model.save(&out.join("model.bin"))?;
            let field = model.predict_field(&bank, dims)?;
            io::save_probability_field(&field, &out.join("probabilities.json"))?;
            io::write_json(&out.join("report.json"), &report)?;
            emit(json!({"model": out.join("model.bin"), "probabilities": out.join("probabilities.json"), "report": report}));
        }
        Command::Watershed { probabilities, out, ws_threshold, ws_min_size, keep_all } => {
            let field = io::load_probability_field(&probabilities)?;
            let mut cfg = settings.watershed;
            cfg.threshold = ws_threshold.unwrap_or(cfg.threshold);
            cfg.min_size = ws_min_size.unwrap_or(cfg.min_size);
            if keep_all {
                cfg.rule = SeedRule::KeepAll;
            }
            let (seeds, seg) = watershed(&field, &cfg)?;
            io::save_segmentation(&seg, &out)?;
            emit(json!({"segmentation": out, "seeds": seeds.seed_count(), "regions": seg.region_count()}));
        }
        Command::TrainBoundary { manifest, probabilities, oversegmentation, out, oracle, labels } => {
            let data = load_manifest(&manifest)?;
            let (seg, rag) = boundary_inputs(&probabilities, &oversegmentation)?;
            if seg.dims() != data.volume.dims() {
                return Err(activeseg::Error::DimensionMismatch(format!(
                    "image {:?} vs over-segmentation {:?}",
                    data.volume.dims(),
                    seg.dims()
                ))
                .into());
            }
            let bank = Arc::new(boundary_feature_bank(&rag)?);
            let cfg = settings.boundary;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let (model, report) = if oracle {
                let (Some(gt), Some(classes)) = (data.segmentation.as_ref(), data.labels.as_ref()) else {
                    return Err(anyhow!("--oracle needs groundtruth segmentation and label planes in the manifest"));
                };
                let truth = derive_boundary_truth(&rag, &seg, gt, classes)?;
                let mut source = GroundTruthOracle::new(truth.classes());
                let session = run_boundary_loop(bank, &mut source, cfg)?;
                debug_assert_eq!(session.status(), LoopStatus::Done);
                let model = session.model().cloned().ok_or_else(|| anyhow!("the loop produced no model"))?;
                let report = json!({
                    "boundaries": rag.boundary_count(),
                    "labeled": session.labeled().len(),
                    "budget": session.budget(),
                    "stop_reason": session.stop_reason(),
                    "history": session.history(),
                });
                (model, report)
            } else {
                let path = labels.ok_or_else(|| anyhow!("give --oracle or --labels"))?;
                let pairs = read_pairs(&path)?;
                let mut fc = ForestConfig::new(cfg.tree_count, cfg.seed);
                fc.max_depth = cfg.max_depth;
                let model = train_on(&bank, &pairs, 2, fc)?;
                (model, json!({"boundaries": rag.boundary_count(), "labeled": pairs.len(), "history": []}))
            };
            model.save(&out.join("model.bin"))?;
            io::write_json(&out.join("report.json"), &report)?;
            emit(json!({"model": out.join("model.bin"), "report": report}));
        }
        Command::Agglomerate { probabilities, oversegmentation, model, out, threshold, inclusion_threshold, sweep } => {
            let (seg, rag) = boundary_inputs(&probabilities, &oversegmentation)?;
            let model = EnsembleModel::load(&model)?;
            let mut cfg = settings.agglomeration;
            cfg.merge_threshold = threshold.unwrap_or(cfg.merge_threshold);
            cfg.inclusion_threshold = inclusion_threshold.unwrap_or(cfg.inclusion_threshold);
            cfg.validate()?;
            match sweep {
                None => {
                    let result = agglomerate(&rag, &seg, &model, &cfg)?;
                    io::save_segmentation(&result, &out)?;
                    emit(json!({"segmentation": out, "regions": result.region_count()}));
                }
                Some(list) => {
                    let thetas = parse_list(&list)?;
                    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
                    let mut index = Vec::new();
                    for (i, (theta, result)) in
                        sweep_thresholds(&rag, &seg, &model, &thetas, cfg.inclusion_threshold)?.into_iter().enumerate()
                    {
                        let name = PathBuf::from(format!("segmentation_{i:03}.json"));
                        io::save_segmentation(&result, &out.join(&name))?;
                        index.push(SweepEntry { theta, segmentation: name });
                    }
                    io::write_json(&out.join("sweep.json"), &index)?;
                    emit(json!({"sweep": out.join("sweep.json"), "thresholds": thetas.len()}));
                }
            }
        }
        Command::Evaluate { groundtruth, manifest, segmentation, sweep, csv } => {
            let gt = match (groundtruth, manifest) {
                (Some(p), _) => io::load_segmentation(&p)?,
                (None, Some(m)) => load_manifest(&m)?
                    .segmentation
                    .ok_or_else(|| anyhow!("the manifest has no groundtruth segmentation"))?,
                (None, None) => return Err(anyhow!("give --groundtruth or --manifest")),
            };
            match (segmentation, sweep) {
                (Some(p), None) => {
                    let e = evaluate(&gt, &io::load_segmentation(&p)?)?;
                    emit(serde_json::to_value(e)?);
                }
                (None, Some(index_path)) => {
                    let index: Vec<SweepEntry> = io::read_json(&index_path)?;
                    let base = index_path.parent().unwrap_or(Path::new("."));
                    let mut rows: Vec<(f64, Evaluation)> = Vec::with_capacity(index.len());
                    for entry in &index {
                        let sg = io::load_segmentation(&base.join(&entry.segmentation))?;
                        rows.push((entry.theta, evaluate(&gt, &sg)?));
                    }
                    if let Some(csv) = csv {
                        let mut text = String::from("theta,vi_over,vi_under,rand_over,rand_under,rand_f\n");
                        for (theta, e) in &rows {
                            text.push_str(&format!(
                                "{theta},{},{},{},{},{}\n",
                                e.vi.over, e.vi.under, e.rand.over, e.rand.under, e.rand_f
                            ));
                        }
                        std::fs::write(&csv, text).with_context(|| format!("writing {}", csv.display()))?;
                    }
                    emit(serde_json::to_value(
                        rows.iter().map(|(theta, e)| json!({"theta": theta, "metrics": e})).collect::<Vec<_>>(),
                    )?);
                }
                _ => return Err(anyhow!("give exactly one of --segmentation or --sweep")),
            }
        }
        Command::Serve { addr, root } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(activeseg_server::serve(addr, root))?;
        }
    }
    Ok(())
}

/// Exit code and error kind for a failure.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    use activeseg::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::DimensionMismatch(_)) => (2, "dimension_mismatch"),
        Some(E::MissingFile(_)) => (1, "missing_file"),
        Some(E::Io { .. }) => (1, "io"),
        Some(E::Json { .. } | E::Image { .. } | E::UnsupportedBitDepth { .. }) => (1, "invalid_input"),
        Some(E::NoMembraneSamples) => (1, "no_membrane_samples"),
        Some(_) => (1, "invalid_argument"),
        None => (1, "invalid_usage"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = classify(&err);
            let body = json!({"error": kind, "message": format!("{err:#}")});
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
