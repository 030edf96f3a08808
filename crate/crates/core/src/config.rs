//! Experiment configuration: UTF-8 `key = value` lines with `#` comments
//! and dotted keys. Every key has a default, so an empty file is valid.

use std::path::{Path, PathBuf};

use crate::convnet::{LossWeighting, TrainConfig};
use crate::error::{Error, Result};
use crate::metric::MetricLossConfig;
use crate::sampler::{SamplingConfig, Strategy};
use crate::transfer::{KernelParams, PyramidConfig, RetrievalConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Paths default to `train.tsv`, `test.tsv` and `classes.txt` under
    /// `out`, where `synth` writes them.
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub classes_file: Option<PathBuf>,
    pub synth_preset: String,
    pub synth_images: Option<usize>,
    pub test_images: usize,

    pub strategies: Vec<Strategy>,
    pub eta: f64,
    pub epoch_size: usize,

    pub net_preset: String,
    pub local: TrainConfig,
    pub metric: MetricLossConfig,
    pub fine_tune: bool,
    pub retrieval: RetrievalConfig,
    pub uniform_prior: bool,

    pub seed: u64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train_manifest: None,
            test_manifest: None,
            classes_file: None,
            synth_preset: "two-scene".into(),
            synth_images: None,
            test_images: 20,
            strategies: Strategy::ALL.to_vec(),
            eta: 0.05,
            epoch_size: 10_000,
            net_preset: "desk".into(),
            local: TrainConfig::default(),
            metric: MetricLossConfig::default(),
            fine_tune: false,
            retrieval: RetrievalConfig::default(),
            uniform_prior: false,
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

fn value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::parse(path, m),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), v.trim()).map_err(|e| {
                Error::Config(format!(
                    "line {}: {}",
                    n + 1,
                    e.to_string().trim_start_matches("configuration error: ")
                ))
            })?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "data.train" => self.train_manifest = Some(v.into()),
            "data.test" => self.test_manifest = Some(v.into()),
            "data.classes" => self.classes_file = Some(v.into()),
            "synth.preset" => self.synth_preset = v.into(),
            "synth.images" => self.synth_images = Some(value(key, v)?),
            "synth.test_images" => self.test_images = value(key, v)?,
            "sampler.strategies" => {
                self.strategies = v
                    .split(',')
                    .map(|s| s.trim())
                    .filter(|s| !s.is_empty())
                    .map(Strategy::from_str_config)
                    .collect::<Result<_>>()?
            }
            "sampler.eta" => self.eta = value(key, v)?,
            "sampler.epoch_size" => self.epoch_size = value(key, v)?,
            "net.preset" => self.net_preset = v.into(),
            "local.lr" => self.local.learning_rate = value(key, v)?,
            "local.lr_decay" => self.local.lr_decay = value(key, v)?,
            "local.decay_epoch" => self.local.decay_epoch = value(key, v)?,
            "local.momentum" => self.local.momentum = value(key, v)?,
            "local.batch" => self.local.batch_size = value(key, v)?,
            "local.epochs" => self.local.epochs = value(key, v)?,
            "local.loss" => self.local.loss = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "metric.tau" => self.metric.tau = value(key, v)?,
            "metric.lambda" => self.metric.lambda = value(key, v)?,
            "metric.batch" => self.metric.batch_size = value(key, v)?,
            "metric.per_class" => self.metric.per_class = value(key, v)?,
            "metric.lr" => self.metric.learning_rate = value(key, v)?,
            "metric.lr_decay" => self.metric.lr_decay = value(key, v)?,
            "metric.epochs" => self.metric.epochs = value(key, v)?,
            "metric.loss_norm" => self.metric.norm = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "metric.fine_tune" => self.fine_tune = boolean(key, v)?,
            "retrieval.exemplars" => self.retrieval.exemplars = value(key, v)?,
            "retrieval.k" => self.retrieval.k = value(key, v)?,
            "retrieval.alpha" => self.retrieval.kernel.alpha = value(key, v)?,
            "retrieval.gamma" => self.retrieval.kernel.gamma = value(key, v)?,
            "retrieval.pyramid_levels" => self.retrieval.pyramid.levels = value(key, v)?,
            "retrieval.uniform_prior" => self.uniform_prior = boolean(key, v)?,
            "seed" => self.seed = value(key, v)?,
            "out" => self.out = v.into(),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let p = |p: &Path| p.display().to_string();
        let strategies: Vec<&str> = self.strategies.iter().map(|s| s.tag()).collect();
        let mut text = String::new();
        let optional = [
            ("data.train", self.train_manifest.as_deref().map(p)),
            ("data.test", self.test_manifest.as_deref().map(p)),
            ("data.classes", self.classes_file.as_deref().map(p)),
            ("synth.images", self.synth_images.map(|n| n.to_string())),
        ];
        for (k, v) in optional {
            if let Some(v) = v {
                text.push_str(&format!("{k} = {v}\n"));
            }
        }
        let lines = [
            ("synth.preset", self.synth_preset.clone()),
            ("synth.test_images", self.test_images.to_string()),
            ("sampler.strategies", strategies.join(",")),
            ("sampler.eta", self.eta.to_string()),
            ("sampler.epoch_size", self.epoch_size.to_string()),
            ("net.preset", self.net_preset.clone()),
            ("local.lr", self.local.learning_rate.to_string()),
            ("local.lr_decay", self.local.lr_decay.to_string()),
            ("local.decay_epoch", self.local.decay_epoch.to_string()),
            ("local.momentum", self.local.momentum.to_string()),
            ("local.batch", self.local.batch_size.to_string()),
            ("local.epochs", self.local.epochs.to_string()),
            (
                "local.loss",
                match self.local.loss {
                    LossWeighting::Plain => "plain".into(),
                    LossWeighting::InverseFrequency => "inverse-frequency".into(),
                },
            ),
            ("metric.tau", self.metric.tau.to_string()),
            ("metric.lambda", self.metric.lambda.to_string()),
            ("metric.batch", self.metric.batch_size.to_string()),
            ("metric.per_class", self.metric.per_class.to_string()),
            ("metric.lr", self.metric.learning_rate.to_string()),
            ("metric.lr_decay", self.metric.lr_decay.to_string()),
            ("metric.epochs", self.metric.epochs.to_string()),
            ("metric.loss_norm", self.metric.norm.tag().into()),
            ("metric.fine_tune", self.fine_tune.to_string()),
            ("retrieval.exemplars", self.retrieval.exemplars.to_string()),
            ("retrieval.k", self.retrieval.k.to_string()),
            ("retrieval.alpha", self.retrieval.kernel.alpha.to_string()),
            ("retrieval.gamma", self.retrieval.kernel.gamma.to_string()),
            ("retrieval.pyramid_levels", self.retrieval.pyramid.levels.to_string()),
            ("retrieval.uniform_prior", self.uniform_prior.to_string()),
            ("seed", self.seed.to_string()),
            ("out", p(&self.out)),
        ];
        for (k, v) in lines {
            text.push_str(&format!("{k} = {v}\n"));
        }
        text
    }

    pub fn train_path(&self) -> PathBuf {
        self.train_manifest
            .clone()
            .unwrap_or_else(|| self.out.join("train.tsv"))
    }

    pub fn test_path(&self) -> PathBuf {
        self.test_manifest.clone().unwrap_or_else(|| self.out.join("test.tsv"))
    }

    /// Explicit class list, else `classes.txt` beside the training manifest.
    pub fn classes_path(&self) -> PathBuf {
        self.classes_file.clone().unwrap_or_else(|| {
            self.train_path()
                .parent()
                .map_or_else(|| PathBuf::from("classes.txt"), |d| d.join("classes.txt"))
        })
    }

    pub fn sampling(&self, strategy: Strategy) -> Result<SamplingConfig> {
        SamplingConfig::new(strategy, self.epoch_size, self.eta, self.seed).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn local_train(&self) -> Result<TrainConfig> {
        let c = TrainConfig {
            seed: self.seed,
            ..self.local.clone()
        };
        c.validate()?;
        Ok(c)
    }

    pub fn metric_train(&self) -> Result<MetricLossConfig> {
        let c = MetricLossConfig {
            seed: self.seed,
            ..self.metric.clone()
        };
        c.validate()?;
        Ok(c)
    }

    pub fn retrieval_config(&self) -> Result<RetrievalConfig> {
        let r = &self.retrieval;
        Ok(RetrievalConfig {
            kernel: KernelParams::new(r.kernel.alpha, r.kernel.gamma)?,
            pyramid: PyramidConfig::new(r.pyramid.levels)?,
            ..r.clone()
        })
    }
}

impl Strategy {
    fn from_str_config(s: &str) -> Result<Self> {
        s.parse().map_err(|e: Error| Error::Config(e.to_string()))
    }
}
