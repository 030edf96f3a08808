//! Large-margin Mahalanobis metric learning on pixel features.
//!
//! The metric is `M = WᵀW` for a linear map `W`. For a batch of features
//! with labels, every unordered pair `(i, j)` contributes the hinge
//! `g = max(0, 1 − ℓ(τ − ‖W(x_i − x_j)‖²))` where `ℓ = +1` for same-class
//! pairs and `−1` otherwise, and the loss is
//! `λ/2 ‖W‖²_F + 1/(2N) Σ g`.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{Reader, Writer};
use crate::convnet::{self, NetworkParams, ParamSet};
use crate::data::{patch::extract_patch_chw, ClassId, DatasetSplit};
use crate::error::{Error, Result};
use crate::sampler::{derive_seed, PixelPools};

const MAGIC: &[u8; 4] = b"PMTR";
const VERSION: u32 = 1;

/// Row-major `rows × cols` linear map.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricParams {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
}

impl MetricParams {
    pub fn new(rows: usize, cols: usize, w: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || w.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} metric", w.len())));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("metric has non-finite entries".into()));
        }
        Ok(Self { rows, cols, w })
    }

    pub fn identity(d: usize) -> Self {
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        Self { rows: d, cols: d, w }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.w.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `W x`.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Shape(format!(
                "feature of width {} for a metric taking {}",
                x.len(),
                self.cols
            )));
        }
        Ok(self.apply(x))
    }

    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &v) in self.w.chunks_exact(self.cols).zip(y) {
            out.iter_mut().zip(row).for_each(|(o, a)| *o += a * v);
        }
        out
    }

    /// `(a − b)ᵀ WᵀW (a − b)`.
    pub fn mahalanobis_sq(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        Ok(self.transform(&d)?.iter().map(|v| v * v).sum())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(MAGIC, VERSION);
        w.u32(self.rows as u32);
        w.u32(self.cols as u32);
        w.f64s(&self.w);
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, "metric");
        r.expect_magic(MAGIC, VERSION)?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let w = r.f64s(rows.saturating_mul(cols))?;
        r.finish()?;
        Self::new(rows, cols, w).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?).map_err(|e| e.context(path.display()))
    }
}

/// What `N` counts in the `1/(2N)` factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossNorm {
    Pairs,
    Features,
}

impl std::str::FromStr for LossNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairs" => Ok(Self::Pairs),
            "features" => Ok(Self::Features),
            other => Err(Error::Argument(format!(
                "unknown loss normalization {other:?} (expected pairs or features)"
            ))),
        }
    }
}

impl LossNorm {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Pairs => "pairs",
            Self::Features => "features",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricLossConfig {
    pub tau: f64,
    pub lambda: f64,
    pub batch_size: usize,
    /// Features drawn per class in each epoch.
    pub per_class: usize,
    pub learning_rate: f64,
    /// Per-epoch multiplicative decay of the learning rate.
    pub lr_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub norm: LossNorm,
}

impl Default for MetricLossConfig {
    fn default() -> Self {
        Self {
            tau: 3.0,
            lambda: 0.01,
            batch_size: 200,
            per_class: 200,
            learning_rate: 1e-3,
            lr_decay: 0.9,
            epochs: 20,
            seed: 0,
            norm: LossNorm::Pairs,
        }
    }
}

impl MetricLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0) {
            return Err(Error::Config(format!("margin must exceed 1, got {}", self.tau)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "regularizer must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.batch_size < 2 || self.per_class == 0 {
            return Err(Error::Config("metric batches need at least two features".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::Config("metric learning rate and decay must be positive".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch as i32)
    }
}

fn check_batch<F: AsRef<[f64]>>(w: &MetricParams, features: &[F], labels: &[ClassId]) -> Result<()> {
    if features.len() < 2 {
        return Err(Error::Argument(
            "metric loss needs a batch of at least two features".into(),
        ));
    }
    if features.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} features but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if let Some(f) = features.iter().find(|f| f.as_ref().len() != w.cols) {
        return Err(Error::Shape(format!(
            "feature of width {} for a metric taking {}",
            f.as_ref().len(),
            w.cols
        )));
    }
    Ok(())
}

fn normalizer(n: usize, norm: LossNorm) -> f64 {
    match norm {
        LossNorm::Pairs => (n * (n - 1) / 2) as f64,
        LossNorm::Features => n as f64,
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn hinge_arg(same: bool, tau: f64, d2: f64) -> f64 {
    let l = if same { 1.0 } else { -1.0 };
    1.0 - l * (tau - d2)
}

pub fn metric_loss<F: AsRef<[f64]>>(
    w: &MetricParams,
    features: &[F],
    labels: &[ClassId],
    config: &MetricLossConfig,
) -> Result<f64> {
    check_batch(w, features, labels)?;
    let y: Vec<Vec<f64>> = features.iter().map(|f| w.apply(f.as_ref())).collect();
    let mut sum = 0.0;
    for i in 0..y.len() {
        for j in i + 1..y.len() {
            sum += hinge_arg(labels[i] == labels[j], config.tau, sq_dist(&y[i], &y[j])).max(0.0);
        }
    }
    let reg = 0.5 * config.lambda * w.w.iter().map(|v| v * v).sum::<f64>();
    Ok(reg + sum / (2.0 * normalizer(y.len(), config.norm)))
}

/// Returns `(∂L/∂W` row-major, `∂L/∂x_i` per feature`)`.
pub fn metric_gradients<F: AsRef<[f64]>>(
    w: &MetricParams,
    features: &[F],
    labels: &[ClassId],
    config: &MetricLossConfig,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    check_batch(w, features, labels)?;
    let n = features.len();
    let y: Vec<Vec<f64>> = features.iter().map(|f| w.apply(f.as_ref())).collect();
    // u_i = Σ_j ℓ g′ (y_i − y_j); then ∂W = λW + Σ u_i x_iᵀ / N and
    // ∂x_i = Wᵀ u_i / N.
    let mut u = vec![vec![0.0; w.rows]; n];
    for i in 0..n {
        for j in i + 1..n {
            let same = labels[i] == labels[j];
            if hinge_arg(same, config.tau, sq_dist(&y[i], &y[j])) <= 0.0 {
                continue;
            }
            let l = if same { 1.0 } else { -1.0 };
            for k in 0..w.rows {
                let d = l * (y[i][k] - y[j][k]);
                u[i][k] += d;
                u[j][k] -= d;
            }
        }
    }
    let norm = normalizer(n, config.norm);
    let mut dw: Vec<f64> = w.w.iter().map(|v| config.lambda * v).collect();
    for (ui, f) in u.iter().zip(features) {
        let x = f.as_ref();
        for (r, &ur) in ui.iter().enumerate() {
            if ur == 0.0 {
                continue;
            }
            let row = &mut dw[r * w.cols..(r + 1) * w.cols];
            row.iter_mut().zip(x).for_each(|(g, xv)| *g += ur * xv / norm);
        }
    }
    let dx = u
        .iter()
        .map(|ui| w.apply_transpose(ui).into_iter().map(|v| v / norm).collect())
        .collect();
    Ok((dw, dx))
}

/// Class-balanced draw of `per_class` indices per present class, with
/// replacement only for classes holding fewer items.
fn class_sample(labels: &[ClassId], per_class: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut pools = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        pools[l as usize].push(i);
    }
    let mut out = Vec::new();
    for pool in pools.iter().filter(|p| !p.is_empty()) {
        if pool.len() >= per_class {
            out.extend(index::sample(rng, pool.len(), per_class).into_iter().map(|j| pool[j]));
        } else {
            out.extend((0..per_class).map(|_| pool[rng.gen_range(0..pool.len())]));
        }
    }
    out.shuffle(rng);
    out
}

fn distinct_classes(labels: &[ClassId]) -> usize {
    let mut seen: Vec<ClassId> = labels.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Learns `W` (starting from identity) on fixed features. Returns the
/// metric and the Frobenius norm of `W` after each epoch.
pub fn train_metric<F: AsRef<[f64]>>(
    features: &[F],
    labels: &[ClassId],
    config: &MetricLossConfig,
) -> Result<(MetricParams, Vec<f64>)> {
    config.validate()?;
    if features.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} features but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if distinct_classes(labels) < 2 {
        return Err(Error::EmptyData("metric learning needs at least two classes".into()));
    }
    let d = features[0].as_ref().len();
    let mut w = MetricParams::identity(d);
    let mut norms = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, epoch as u64));
        let order = class_sample(labels, config.per_class, &mut rng);
        let lr = config.learning_rate_at(epoch);
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| features[i].as_ref()).collect();
            let ls: Vec<ClassId> = chunk.iter().map(|&i| labels[i]).collect();
            let (dw, _) = metric_gradients(&w, &xs, &ls, config)?;
            w.w.iter_mut().zip(&dw).for_each(|(v, g)| *v -= lr * g);
        }
        norms.push(w.frobenius_norm());
        log::info!("metric epoch {epoch}: |W| = {:.5}", w.frobenius_norm());
    }
    Ok((w, norms))
}

/// Joint training: the metric loss is also back-propagated into the
/// feature network (initialized from `network`). Batches are
/// class-sampled pixels of `split`.
pub fn train_metric_fine_tune(
    split: &DatasetSplit,
    network: &NetworkParams,
    config: &MetricLossConfig,
) -> Result<(MetricParams, NetworkParams)> {
    config.validate()?;
    let pools = PixelPools::new(split)?;
    if pools.table().counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::EmptyData("metric learning needs at least two classes".into()));
    }
    let spec = network.spec.clone();
    let images = split.preprocessed_images();
    let mut net = network.clone();
    let mut w = MetricParams::identity(spec.feature_dim());
    let present: Vec<ClassId> = (0..split.class_count() as ClassId)
        .filter(|&c| !pools.pool(c).is_empty())
        .collect();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, epoch as u64));
        let mut refs = Vec::new();
        for &c in &present {
            let pool = pools.pool(c);
            for _ in 0..config.per_class {
                refs.push((pool[rng.gen_range(0..pool.len())], c));
            }
        }
        refs.shuffle(&mut rng);
        let lr = config.learning_rate_at(epoch);
        for chunk in refs.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let mut batch = vec![vec![0.0; spec.input_len()]; chunk.len()];
            for (buf, (r, _)) in batch.iter_mut().zip(chunk) {
                extract_patch_chw(
                    &images[r.image as usize],
                    (r.row as usize, r.col as usize),
                    spec.input_side,
                    buf,
                )?;
            }
            let labels: Vec<ClassId> = chunk.iter().map(|&(_, c)| c).collect();
            let (_, cache) = convnet::forward(&net, &batch)?;
            let feats: Vec<&[f64]> = (0..chunk.len()).map(|i| cache.features(i)).collect();
            let (dw, dx) = metric_gradients(&w, &feats, &labels, config)?;
            let grads: ParamSet = convnet::backward_from_features(&net, &cache, &dx)?;
            w.w.iter_mut().zip(&dw).for_each(|(v, g)| *v -= lr * g);
            for (v, g) in net.values.values_mut().zip(grads.flatten()) {
                *v -= lr * g;
            }
        }
        log::info!("fine-tune epoch {epoch}: |W| = {:.5}", w.frobenius_norm());
    }
    Ok((w, net))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(tau: f64, lambda: f64) -> MetricLossConfig {
        MetricLossConfig {
            tau,
            lambda,
            ..MetricLossConfig::default()
        }
    }

    #[test]
    fn hinge_cases() {
        let w = MetricParams::identity(1);
        // same class, distance² 1: inactive
        let l = metric_loss(&w, &[[0.0], [1.0]], &[0, 0], &cfg(3.0, 0.0)).unwrap();
        assert_eq!(l, 0.0);
        // different class, distance² 5: inactive
        let l = metric_loss(&w, &[[0.0], [5f64.sqrt()]], &[0, 1], &cfg(3.0, 0.0)).unwrap();
        assert!(l.abs() < 1e-15);
        // same class, distance² 3: g = 1, one pair
        let l = metric_loss(&w, &[[0.0], [3f64.sqrt()]], &[0, 0], &cfg(3.0, 0.0)).unwrap();
        assert!((l - 0.5).abs() < 1e-12);
    }

    #[test]
    fn inactive_hinges_leave_only_the_regularizer() {
        let w = MetricParams::new(1, 1, vec![1.0]).unwrap();
        let (dw, dx) = metric_gradients(&w, &[[0.0], [1.0]], &[0, 0], &cfg(3.0, 0.0)).unwrap();
        assert_eq!(dw, vec![0.0]);
        assert!(dx.iter().flatten().all(|&v| v == 0.0));
        let (dw, _) = metric_gradients(&w, &[[0.0], [1.0]], &[0, 0], &cfg(3.0, 0.25)).unwrap();
        assert_eq!(dw, vec![0.25]);
    }

    #[test]
    fn single_feature_batch_is_rejected() {
        let w = MetricParams::identity(2);
        assert!(metric_loss(&w, &[[0.0, 1.0]], &[0], &cfg(3.0, 0.0)).is_err());
        assert!(train_metric(&[[0.0, 1.0], [1.0, 0.0]], &[1, 1], &MetricLossConfig::default()).is_err());
    }

    #[test]
    fn transform_matches_mahalanobis_form() {
        let w = MetricParams::new(2, 3, vec![0.5, -1.0, 2.0, 0.0, 3.0, 1.5]).unwrap();
        let (a, b) = ([1.0, 2.0, -0.5], [0.25, -1.0, 4.0]);
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        // dᵀ WᵀW d computed column by column
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..2).map(|k| w.w[k * 3 + i] * w.w[k * 3 + j]).sum();
            }
        }
        let quad: f64 = (0..3).map(|i| (0..3).map(|j| d[i] * m[i][j] * d[j]).sum::<f64>()).sum();
        assert!((w.mahalanobis_sq(&a, &b).unwrap() - quad).abs() < 1e-10);
        assert_eq!(MetricParams::identity(3).transform(&a).unwrap(), a.to_vec());
        assert!(w.transform(&[1.0]).is_err());
    }

    #[test]
    fn metric_bytes_round_trip() {
        let w = MetricParams::new(2, 2, vec![1.0, 0.5, -0.25, 2.0]).unwrap();
        let bytes = w.to_bytes();
        assert_eq!(&bytes[..4], b"PMTR");
        assert_eq!(MetricParams::from_bytes(&bytes).unwrap(), w);
        assert!(MetricParams::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn heavy_regularization_shrinks_w_monotonically() {
        let feats: Vec<[f64; 2]> = (0..40).map(|i| [i as f64 * 0.1, (i % 2) as f64]).collect();
        let labels: Vec<ClassId> = (0..40).map(|i| (i % 2) as ClassId).collect();
        let c = MetricLossConfig {
            lambda: 1e3,
            learning_rate: 1e-4,
            lr_decay: 1.0,
            batch_size: 20,
            per_class: 20,
            epochs: 20,
            ..MetricLossConfig::default()
        };
        let (_, norms) = train_metric(&feats, &labels, &c).unwrap();
        assert!(norms.windows(2).all(|p| p[1] <= p[0]));
        assert!(norms[19] < 0.5 * 2f64.sqrt());
    }
}
