//! Command-line stages. Each reads its predecessors' artifacts from disk
//! and writes one versioned artifact under the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::convnet::{NetworkParams, NetworkSpec};
use crate::data::io::{read_label_map, read_manifest, write_label_map, write_manifest, ManifestEntry};
use crate::data::{generate_synthetic_scenes, load_split, ClassCatalog, DatasetSplit, SplitRole, SynthConfig};
use crate::ensemble::{train_ensemble, EnsembleModel};
use crate::error::{Error, Result};
use crate::integration::{evaluate, infer_labels, mode_energy, ParseMode};
use crate::metric::{train_metric, train_metric_fine_tune, LossNorm, MetricParams};
use crate::sampler::{derive_seed, Strategy};
use crate::transfer::TransferIndex;

pub const ENSEMBLE_FILE: &str = "local.pens";
pub const METRIC_FILE: &str = "metric.pmtr";
pub const TUNED_NET_FILE: &str = "metric.pnet";
pub const INDEX_FILE: &str = "index.pidx";
pub const PRED_DIR: &str = "pred";
pub const PRED_MANIFEST: &str = "pred.tsv";
pub const EVAL_FILE: &str = "eval.txt";
pub const CONFUSION_FILE: &str = "confusion.csv";

#[derive(Debug, Parser)]
#[command(name = "sceneparse", version, about = "Scene parsing with local and global beliefs")]
pub struct Cli {
    /// Experiment configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic train/test corpus.
    Synth(SynthArgs),
    /// Train the CNN ensemble.
    TrainLocal(TrainLocalArgs),
    /// Learn the pixel metric on top of the trained features.
    TrainMetric(TrainMetricArgs),
    /// Index the training split for retrieval and label transfer.
    BuildIndex(BuildIndexArgs),
    /// Label the test split.
    Parse(ParseArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub preset: Option<String>,
    /// Training images (defaults to the preset's count).
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub test_images: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Training manifest.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Class list, one name per line.
    #[arg(long)]
    pub classes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainLocalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Sampling strategy per member (gs, cs, hs, tcs); repeatable.
    #[arg(long = "sampler")]
    pub samplers: Vec<String>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Network preset (desk or full).
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainMetricArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Ensemble whose feature network is used.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Also update the feature network through the metric loss.
    #[arg(long)]
    pub fine_tune: bool,
    #[arg(long, value_parser = ["pairs", "features"])]
    pub loss_norm: Option<String>,
}

#[derive(Debug, Args)]
pub struct BuildIndexArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Network for cell features (e.g. one fine-tuned by `train-metric`).
    #[arg(long)]
    pub pixel_net: Option<PathBuf>,
    /// Make the global belief uniform.
    #[arg(long)]
    pub uniform_prior: bool,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Test manifest.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<PathBuf>,
    #[arg(long, default_value = "integrated", value_parser = ["local", "global", "integrated"])]
    pub mode: String,
    /// Learned metric for pixel similarity.
    #[arg(long)]
    pub metric: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction manifest written by `parse`.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<PathBuf>,
}

/// Resolved configuration for one invocation.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

/// Runs one command.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli)?;
    match cli.command {
        Command::Synth(a) => {
            if let Some(p) = a.preset {
                cfg.synth_preset = p;
            }
            if a.images.is_some() {
                cfg.synth_images = a.images;
            }
            if let Some(n) = a.test_images {
                cfg.test_images = n;
            }
            cmd_synth(&cfg)
        }
        Command::TrainLocal(a) => {
            apply_data(&mut cfg, &a.data);
            if !a.samplers.is_empty() {
                cfg.strategies = a.samplers.iter().map(|s| s.parse()).collect::<Result<_>>()?;
            }
            if let Some(e) = a.eta {
                cfg.eta = e;
            }
            if let Some(e) = a.epochs {
                cfg.local.epochs = e;
            }
            if let Some(p) = a.preset {
                cfg.net_preset = p;
            }
            cmd_train_local(&cfg)
        }
        Command::TrainMetric(a) => {
            apply_data(&mut cfg, &a.data);
            if a.fine_tune {
                cfg.fine_tune = true;
            }
            if let Some(n) = a.loss_norm {
                cfg.metric.norm = n.parse::<LossNorm>()?;
            }
            cmd_train_metric(&cfg, a.model.as_deref())
        }
        Command::BuildIndex(a) => {
            apply_data(&mut cfg, &a.data);
            if a.uniform_prior {
                cfg.uniform_prior = true;
            }
            cmd_build_index(&cfg, a.model.as_deref(), a.pixel_net.as_deref())
        }
        Command::Parse(a) => {
            if a.test.is_some() {
                cfg.test_manifest = a.test.clone();
            }
            if a.classes.is_some() {
                cfg.classes_file = a.classes.clone();
            }
            let mode: ParseMode = a.mode.parse()?;
            cmd_parse(&cfg, mode, a.index.as_deref(), a.model.as_deref(), a.metric.as_deref())
        }
        Command::Eval(a) => {
            if a.test.is_some() {
                cfg.test_manifest = a.test.clone();
            }
            if a.classes.is_some() {
                cfg.classes_file = a.classes.clone();
            }
            cmd_eval(&cfg, a.pred.as_deref()).map(|_| ())
        }
    }
}

fn apply_data(cfg: &mut ExperimentConfig, data: &DataArgs) {
    if data.train.is_some() {
        cfg.train_manifest = data.train.clone();
    }
    if data.classes.is_some() {
        cfg.classes_file = data.classes.clone();
    }
}

/// Creates the output directory; its parent must already exist.
fn ensure_out(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        return Ok(());
    }
    fs::create_dir(dir).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot create {}: {e}", dir.display()),
        ))
    })
}

fn catalog(cfg: &ExperimentConfig) -> Result<ClassCatalog> {
    let path = cfg.classes_path();
    ClassCatalog::load(&path).map_err(|e| e.context(path.display()))
}

fn load_train(cfg: &ExperimentConfig) -> Result<DatasetSplit> {
    load_split(&cfg.train_path(), &catalog(cfg)?, SplitRole::Train)
}

fn or_default(path: Option<&Path>, cfg: &ExperimentConfig, name: &str) -> PathBuf {
    path.map_or_else(|| cfg.out.join(name), Path::to_path_buf)
}

pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<()> {
    let mut synth = SynthConfig::preset(&cfg.synth_preset)?;
    if let Some(n) = cfg.synth_images {
        synth.images = n;
    }
    ensure_out(&cfg.out)?;
    let train = generate_synthetic_scenes(&synth, cfg.seed)?;
    synth.images = cfg.test_images;
    let mut test = generate_synthetic_scenes(&synth, derive_seed(cfg.seed, 1))?;
    test.role = SplitRole::Test;
    train.catalog.save(&cfg.out.join("classes.txt"))?;
    crate::data::save_split(&train, &cfg.out.join("train.tsv"))?;
    crate::data::save_split(&test, &cfg.out.join("test.tsv"))?;
    log::info!(
        "wrote {} training and {} test images to {}",
        train.len(),
        test.len(),
        cfg.out.display()
    );
    Ok(())
}

pub fn cmd_train_local(cfg: &ExperimentConfig) -> Result<()> {
    let split = load_train(cfg)?;
    let spec = NetworkSpec::preset(&cfg.net_preset, split.class_count())?;
    let sampling = cfg.sampling(Strategy::Global)?;
    let model = train_ensemble(&split, &cfg.strategies, &spec, &sampling, &cfg.local_train()?)?;
    ensure_out(&cfg.out)?;
    model.save(&cfg.out.join(ENSEMBLE_FILE))
}

pub fn cmd_train_metric(cfg: &ExperimentConfig, model: Option<&Path>) -> Result<()> {
    let split = load_train(cfg)?;
    let model = EnsembleModel::load(&or_default(model, cfg, ENSEMBLE_FILE))?;
    let mcfg = cfg.metric_train()?;
    ensure_out(&cfg.out)?;
    if cfg.fine_tune {
        let (w, net) = train_metric_fine_tune(&split, model.feature_extractor(), &mcfg)?;
        w.save(&cfg.out.join(METRIC_FILE))?;
        return net.save(&cfg.out.join(TUNED_NET_FILE));
    }
    let (features, labels) = labeled_cell_features(&split, model.feature_extractor())?;
    let (w, _) = train_metric(&features, &labels, &mcfg)?;
    w.save(&cfg.out.join(METRIC_FILE))
}

/// Feature and majority label of every labeled cell of a split.
pub fn labeled_cell_features(split: &DatasetSplit, net: &NetworkParams) -> Result<(Vec<Vec<f64>>, Vec<u16>)> {
    let stride = net.spec.cell_stride();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for rec in &split.records {
        let f = crate::convnet::extract_features(net, &rec.image.preprocess())?;
        let cells = crate::transfer::cell_labels(&rec.labels, stride, split.class_count())?;
        for (i, &l) in cells.iter().enumerate() {
            if l != crate::data::UNLABELED {
                features.push(f.cell(i).to_vec());
                labels.push(l);
            }
        }
    }
    Ok((features, labels))
}

pub fn cmd_build_index(cfg: &ExperimentConfig, model: Option<&Path>, pixel_net: Option<&Path>) -> Result<()> {
    let split = load_train(cfg)?;
    let model = EnsembleModel::load(&or_default(model, cfg, ENSEMBLE_FILE))?;
    let pixel = pixel_net.map(NetworkParams::load).transpose()?;
    let retrieval = cfg.retrieval_config()?;
    let index = TransferIndex::build(
        &split,
        model.feature_extractor(),
        pixel.as_ref(),
        retrieval.pyramid,
        cfg.eta,
        cfg.uniform_prior,
    )?;
    ensure_out(&cfg.out)?;
    index.save(&cfg.out.join(INDEX_FILE))
}

pub fn cmd_parse(
    cfg: &ExperimentConfig,
    mode: ParseMode,
    index: Option<&Path>,
    model: Option<&Path>,
    metric: Option<&Path>,
) -> Result<()> {
    let catalog = catalog(cfg)?;
    let test_path = cfg.test_path();
    let test = load_split(&test_path, &catalog, SplitRole::Test)?;
    let model = match mode {
        ParseMode::Global => None,
        _ => Some(EnsembleModel::load(&or_default(model, cfg, ENSEMBLE_FILE))?),
    };
    let index = match mode {
        ParseMode::Local => None,
        _ => Some(TransferIndex::load(&or_default(index, cfg, INDEX_FILE))?),
    };
    if let Some(ix) = &index {
        if ix.classes != catalog.count() {
            return Err(Error::Shape(format!(
                "index has {} classes, catalog has {}",
                ix.classes,
                catalog.count()
            )));
        }
    }
    let metric = metric.map(MetricParams::load).transpose()?;
    let retrieval = cfg.retrieval_config()?;
    let pred_dir = cfg.out.join(PRED_DIR);
    ensure_out(&cfg.out)?;
    ensure_out(&pred_dir)?;
    let test_base = test_path.parent().map(Path::to_path_buf).unwrap_or_default();
    // image paths relative to the prediction manifest
    let rel_base = match (fs::canonicalize(&test_base), fs::canonicalize(&pred_dir)) {
        (Ok(from), Ok(to)) => pathdiff::diff_paths(from, to).unwrap_or_else(|| test_base.clone()),
        _ => test_base.clone(),
    };
    let originals = read_manifest(&test_path)?;
    let mut entries = Vec::with_capacity(test.len());
    for (i, rec) in test.records.iter().enumerate() {
        let image = rec.image.preprocess();
        let local = match &model {
            Some(m) => Some(m.analyze(&image)?.1),
            None => None,
        };
        let global = match &index {
            Some(ix) => {
                let (descriptor, features) = ix.describe(&image)?;
                Some(
                    ix.global_belief(
                        &descriptor,
                        &features,
                        &retrieval,
                        metric.as_ref(),
                        derive_seed(cfg.seed, i as u64),
                    )?
                    .0,
                )
            }
            None => None,
        };
        let first = local.as_ref().or(global.as_ref()).expect("mode needs a belief");
        let energy = mode_energy(mode, first, global.as_ref()).map_err(|e| e.context(format!("record {i}")))?;
        let labels = infer_labels(&energy);
        let name = PathBuf::from(format!("{i:05}.pgm"));
        write_label_map(&pred_dir.join(&name), &labels)?;
        entries.push(ManifestEntry {
            image: rel_base.join(&originals[i].image),
            labels: name,
            scene: rec.scene,
        });
    }
    write_manifest(&pred_dir.join(PRED_MANIFEST), &entries)
}

/// Writes the report and confusion matrix, returning the report text.
pub fn cmd_eval(cfg: &ExperimentConfig, pred: Option<&Path>) -> Result<String> {
    let catalog = catalog(cfg)?;
    let test = load_split(&cfg.test_path(), &catalog, SplitRole::Test)?;
    let pred_manifest = pred.map_or_else(|| cfg.out.join(PRED_DIR).join(PRED_MANIFEST), Path::to_path_buf);
    let base = pred_manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let entries = read_manifest(&pred_manifest)?;
    if entries.len() != test.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} test images",
            entries.len(),
            test.len()
        )));
    }
    let preds = entries
        .iter()
        .map(|e| read_label_map(&base.join(&e.labels)))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<_> = test.records.iter().map(|r| r.labels.clone()).collect();
    let report = evaluate(&preds, &truth, catalog.count())?;
    let text = report.to_text(&catalog);
    ensure_out(&cfg.out)?;
    fs::write(cfg.out.join(EVAL_FILE), &text)?;
    fs::write(cfg.out.join(CONFUSION_FILE), report.confusion_csv(&catalog))?;
    print!("{text}");
    Ok(text)
}
