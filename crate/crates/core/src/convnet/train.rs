use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{backward, cross_entropy, forward};
use super::{NetworkParams, NetworkSpec, ParamSet};
use crate::data::{patch::extract_patch_chw, DatasetSplit};
use crate::error::{Error, Result};
use crate::sampler::{derive_seed, PixelPools, SamplingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossWeighting {
    Plain,
    /// Each class's loss scaled by the inverse of its training frequency.
    InverseFrequency,
}

impl std::str::FromStr for LossWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Self::Plain),
            "inverse-frequency" => Ok(Self::InverseFrequency),
            other => Err(Error::Argument(format!(
                "unknown loss weighting {other:?} (expected plain or inverse-frequency)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_decay: f64,
    /// The rate is multiplied by `lr_decay` every `decay_epoch` epochs
    /// (0 disables decay).
    pub decay_epoch: usize,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossWeighting,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            lr_decay: 0.1,
            decay_epoch: 20,
            momentum: 0.9,
            batch_size: 100,
            epochs: 30,
            seed: 0,
            loss: LossWeighting::Plain,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.lr_decay > 0.0) {
            return Err(Error::Config(format!(
                "learning-rate decay must be positive, got {}",
                self.lr_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Step schedule: `lr · decay^⌊epoch / decay_epoch⌋`.
pub fn learning_rate(config: &TrainConfig, epoch: usize) -> f64 {
    if config.decay_epoch == 0 {
        return config.learning_rate;
    }
    config.learning_rate * config.lr_decay.powi((epoch / config.decay_epoch) as i32)
}

/// Momentum update `v ← μv − lr·g; w ← w + v`.
pub fn sgd_step(params: &mut NetworkParams, grads: &ParamSet, config: &TrainConfig, epoch: usize) -> Result<()> {
    if !params.values.same_shape(grads) {
        return Err(Error::Shape("gradient shapes do not match the parameters".into()));
    }
    let lr = learning_rate(config, epoch);
    let mu = config.momentum;
    let v = &mut params.velocity;
    for (vs, gs) in v
        .weights
        .iter_mut()
        .zip(&grads.weights)
        .chain(v.biases.iter_mut().zip(&grads.biases))
    {
        vs.iter_mut().zip(gs).for_each(|(v, g)| *v = mu * *v - lr * g);
    }
    let velocity = params.velocity.clone();
    params.values.add_scaled(&velocity, 1.0);
    Ok(())
}

/// Weights `1 / (K f_c)` over the K classes present, so a globally drawn
/// sample has expected weight one.
fn inverse_frequency_weights(pools: &PixelPools) -> Vec<f64> {
    let t = pools.table();
    let present = t.counts.iter().filter(|&&c| c > 0).count() as f64;
    t.frequencies
        .iter()
        .map(|&f| if f > 0.0 { 1.0 / (present * f) } else { 0.0 })
        .collect()
}

/// Trains from freshly initialized weights; see [`train_with_history`].
pub fn train(
    split: &DatasetSplit,
    sampling: &SamplingConfig,
    spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<NetworkParams> {
    Ok(train_with_history(split, sampling, spec, config)?.0)
}

/// Trains a network, redrawing the sample list at the start of every
/// epoch. Also returns the mean training loss of each epoch.
pub fn train_with_history(
    split: &DatasetSplit,
    sampling: &SamplingConfig,
    spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<(NetworkParams, Vec<f64>)> {
    config.validate()?;
    sampling.validate()?;
    if spec.classes() != split.class_count() {
        return Err(Error::Shape(format!(
            "network has {} outputs but the split has {} classes",
            spec.classes(),
            split.class_count()
        )));
    }
    if spec.input_channels != 3 {
        return Err(Error::Shape("image networks take three-channel input".into()));
    }
    let mut params = NetworkParams::init(spec, &mut ChaCha8Rng::seed_from_u64(config.seed));
    if config.epochs == 0 {
        return Ok((params, Vec::new()));
    }
    let pools = PixelPools::new(split)?;
    let weights = match config.loss {
        LossWeighting::Plain => None,
        LossWeighting::InverseFrequency => Some(inverse_frequency_weights(&pools)),
    };
    let images = split.preprocessed_images();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let epoch_cfg = SamplingConfig {
            seed: derive_seed(sampling.seed, epoch as u64),
            ..sampling.clone()
        };
        let samples = pools.sample_epoch(&epoch_cfg)?;
        let mut total = 0.0;
        for (refs, labels) in samples
            .refs
            .chunks(config.batch_size)
            .zip(samples.labels.chunks(config.batch_size))
        {
            let mut batch = vec![vec![0.0; spec.input_len()]; refs.len()];
            for (buf, r) in batch.iter_mut().zip(refs) {
                extract_patch_chw(
                    &images[r.image as usize],
                    (r.row as usize, r.col as usize),
                    spec.input_side,
                    buf,
                )?;
            }
            let (probs, cache) = forward(&params, &batch)?;
            total += cross_entropy(&probs, labels, weights.as_deref()) * refs.len() as f64;
            let grads = backward(&params, &cache, labels, weights.as_deref())?;
            sgd_step(&mut params, &grads, config, epoch)?;
        }
        let mean = total / samples.len().max(1) as f64;
        log::info!(
            "epoch {epoch}: {} loss {mean:.5} lr {}",
            sampling.strategy,
            learning_rate(config, epoch)
        );
        history.push(mean);
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convnet::Layer;
    use crate::data::{ClassCatalog, LabelMap, RgbImage, SceneRecord, SplitRole};
    use crate::sampler::Strategy;

    fn tiny() -> NetworkParams {
        let spec = NetworkSpec::new(1, 2, vec![Layer::Dense { width: 2 }]).unwrap();
        let mut p = NetworkParams::zeros(&spec);
        p.values.weights[0] = vec![1.0, -2.0, 0.5, 3.0];
        p.values.biases[0] = vec![0.25, -1.0];
        p
    }

    fn cfg(lr: f64, momentum: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            momentum,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn unit_rate_without_momentum_cancels_the_weights() {
        let mut p = tiny();
        let g = p.values.clone();
        sgd_step(&mut p, &g, &cfg(1.0, 0.0), 0).unwrap();
        assert!(p.values.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn second_momentum_step_moves_nineteen_tenths() {
        let mut p = tiny();
        let start = p.values.flatten();
        let mut g = p.values.clone();
        g.values_mut().for_each(|v| *v = 0.5);
        let c = cfg(0.1, 0.9);
        sgd_step(&mut p, &g, &c, 0).unwrap();
        let mid = p.values.flatten();
        sgd_step(&mut p, &g, &c, 0).unwrap();
        let end = p.values.flatten();
        for ((a, b), e) in start.iter().zip(&mid).zip(&end) {
            let first = b - a;
            let second = e - b;
            assert!((second - 1.9 * first).abs() < 1e-15);
        }
    }

    #[test]
    fn rate_drops_tenfold_at_epoch_twenty() {
        let c = TrainConfig::default();
        assert_eq!(learning_rate(&c, 19), 0.01);
        assert!((learning_rate(&c, 20) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(cfg(0.0, 0.5).validate().is_err());
        assert!(cfg(0.1, 1.0).validate().is_err());
    }

    fn two_color_split() -> DatasetSplit {
        // left half dark, right half bright; labels follow the color
        let (h, w) = (16, 16);
        let mut rgb = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..h {
            for c in 0..w {
                let dark = c < w / 2;
                rgb.extend(if dark { [20, 30, 40] } else { [220, 200, 210] });
                labels.push(if dark { 0 } else { 1 });
            }
        }
        let rec = SceneRecord::new(
            RgbImage::new(h, w, rgb).unwrap(),
            LabelMap::new(h, w, labels).unwrap(),
            None,
        )
        .unwrap();
        DatasetSplit::new(ClassCatalog::numbered(2).unwrap(), SplitRole::Train, vec![rec]).unwrap()
    }

    #[test]
    fn zero_epochs_returns_the_initialization() {
        let split = two_color_split();
        let spec = NetworkSpec::desk(2);
        let c = TrainConfig {
            epochs: 0,
            seed: 4,
            ..TrainConfig::default()
        };
        let s = SamplingConfig::new(Strategy::Global, 100, 0.05, 1).unwrap();
        let p = train(&split, &s, &spec, &c).unwrap();
        assert_eq!(p, NetworkParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(4)));
    }

    #[test]
    fn class_count_mismatch_is_a_shape_error() {
        let split = two_color_split();
        let s = SamplingConfig::new(Strategy::Global, 100, 0.05, 1).unwrap();
        let c = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&split, &s, &NetworkSpec::desk(3), &c),
            Err(Error::Shape(_))
        ));
    }
}
