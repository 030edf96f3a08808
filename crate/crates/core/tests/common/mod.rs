//! Independent oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sceneparse::convnet::{self, Layer, NetworkParams, NetworkSpec, ParamSet};
use sceneparse::data::{ClassCatalog, ClassId, DatasetSplit, LabelMap, RgbImage, SceneRecord, SplitRole};
use sceneparse::metric::{metric_gradients, metric_loss, MetricLossConfig, MetricParams};
use sceneparse::transfer::{KernelParams, TransferPixel};

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Small networks that together exercise every layer kind, including
/// strided convolutions and overlapping pools.
pub fn gradient_specs() -> Vec<NetworkSpec> {
    let conv = |kernel, filters, stride| Layer::Conv {
        kernel,
        filters,
        stride,
    };
    vec![
        NetworkSpec::desk(4),
        NetworkSpec::new(
            9,
            3,
            vec![
                conv(3, 4, 2),
                Layer::Relu,
                Layer::MaxPool { window: 2, stride: 1 },
                Layer::Dense { width: 5 },
                Layer::Relu,
                Layer::Dense { width: 3 },
            ],
        )
        .unwrap(),
        NetworkSpec::new(
            7,
            2,
            vec![
                conv(2, 3, 1),
                Layer::MaxPool { window: 3, stride: 2 },
                Layer::Dense { width: 2 },
            ],
        )
        .unwrap(),
    ]
}

fn with_biases(spec: &NetworkSpec, seed: u64) -> NetworkParams {
    let mut r = rng(seed);
    let mut p = NetworkParams::init(spec, &mut r);
    for b in p.values.biases.iter_mut().flatten() {
        *b = r.gen_range(-0.1..0.1);
    }
    p
}

/// Largest relative error between backprop and central differences of
/// the batch loss, over every parameter.
pub fn network_gradient_error(spec: &NetworkSpec, seed: u64, weighted: bool) -> f64 {
    let mut r = rng(seed ^ 0xABCD);
    let params = with_biases(spec, seed);
    let batch: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut r, spec.input_len(), 1.0)).collect();
    let targets: Vec<ClassId> = (0..3).map(|_| r.gen_range(0..spec.classes()) as ClassId).collect();
    let weights: Vec<f64> = (0..spec.classes()).map(|_| r.gen_range(0.5..2.0)).collect();
    let w = weighted.then_some(weights.as_slice());
    let loss = |p: &NetworkParams| {
        let (probs, _) = convnet::forward(p, &batch).unwrap();
        convnet::cross_entropy(&probs, &targets, w)
    };
    let (_, cache) = convnet::forward(&params, &batch).unwrap();
    let analytic = convnet::backward(&params, &cache, &targets, w).unwrap().flatten();
    max_fd_error(&params, &analytic, loss)
}

/// Same check for gradients injected at the feature layer through a
/// fixed linear functional of the features.
pub fn feature_gradient_error(spec: &NetworkSpec, seed: u64) -> f64 {
    let mut r = rng(seed ^ 0x1234);
    let params = with_biases(spec, seed);
    let batch: Vec<Vec<f64>> = (0..2).map(|_| random_vec(&mut r, spec.input_len(), 1.0)).collect();
    let coeffs: Vec<Vec<f64>> = (0..2).map(|_| random_vec(&mut r, spec.feature_dim(), 1.0)).collect();
    let loss = |p: &NetworkParams| {
        let (_, cache) = convnet::forward(p, &batch).unwrap();
        (0..2)
            .map(|i| {
                cache
                    .features(i)
                    .iter()
                    .zip(&coeffs[i])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .sum::<f64>()
    };
    let (_, cache) = convnet::forward(&params, &batch).unwrap();
    let analytic = convnet::backward_from_features(&params, &cache, &coeffs)
        .unwrap()
        .flatten();
    max_fd_error(&params, &analytic, loss)
}

fn max_fd_error(params: &NetworkParams, analytic: &[f64], loss: impl Fn(&NetworkParams) -> f64) -> f64 {
    let n = params.values.len();
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let mut plus = params.clone();
        let mut minus = params.clone();
        bump(&mut plus.values, k, FD_STEP);
        bump(&mut minus.values, k, -FD_STEP);
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic[k], numeric));
    }
    worst
}

fn bump(set: &mut ParamSet, k: usize, by: f64) {
    *set.values_mut().nth(k).unwrap() += by;
}

/// Largest relative error of the metric gradients (W and every feature).
pub fn metric_gradient_error(batch: usize, dim: usize, seed: u64, cfg: &MetricLossConfig) -> f64 {
    let mut r = rng(seed);
    let w = MetricParams::new(dim, dim, random_vec(&mut r, dim * dim, 1.0)).unwrap();
    let feats: Vec<Vec<f64>> = (0..batch).map(|_| random_vec(&mut r, dim, 1.0)).collect();
    let labels: Vec<ClassId> = (0..batch).map(|_| r.gen_range(0..3)).collect();
    let (dw, dx) = metric_gradients(&w, &feats, &labels, cfg).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..w.w.len() {
        let mut p = w.clone();
        let mut m = w.clone();
        p.w[k] += FD_STEP;
        m.w[k] -= FD_STEP;
        let num = (metric_loss(&p, &feats, &labels, cfg).unwrap() - metric_loss(&m, &feats, &labels, cfg).unwrap())
            / (2.0 * FD_STEP);
        worst = worst.max(rel_err(dw[k], num));
    }
    for i in 0..batch {
        for k in 0..dim {
            let mut p = feats.clone();
            let mut m = feats.clone();
            p[i][k] += FD_STEP;
            m[i][k] -= FD_STEP;
            let num = (metric_loss(&w, &p, &labels, cfg).unwrap() - metric_loss(&w, &m, &labels, cfg).unwrap())
                / (2.0 * FD_STEP);
            worst = worst.max(rel_err(dx[i][k], num));
        }
    }
    worst
}

/// Pair-sum loss over ordered pairs `i ≠ j`, normalized by their count.
pub fn metric_loss_oracle(w: &MetricParams, feats: &[Vec<f64>], labels: &[ClassId], tau: f64, lambda: f64) -> f64 {
    let n = feats.len();
    let mut sum = 0.0;
    let mut pairs = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let diff: Vec<f64> = feats[i].iter().zip(&feats[j]).map(|(a, b)| a - b).collect();
            let mut d2 = 0.0;
            for row in 0..w.rows {
                let v: f64 = (0..w.cols).map(|c| w.w[row * w.cols + c] * diff[c]).sum();
                d2 += v * v;
            }
            let l = if labels[i] == labels[j] { 1.0 } else { -1.0 };
            sum += f64::max(0.0, 1.0 - l * (tau - d2));
            pairs += 1.0;
        }
    }
    let frob: f64 = w.w.iter().map(|v| v * v).sum();
    lambda / 2.0 * frob + sum / (2.0 * pairs)
}

/// Repeated-scan selection of the `k` smallest keys, ties to the lower
/// position.
pub fn select_smallest(keys: &[f64], k: usize) -> Vec<usize> {
    let mut taken = vec![false; keys.len()];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for (i, &d) in keys.iter().enumerate() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| d < keys[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        out.push(b);
    }
    out
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Scores every transfer entry with the raw kernel, keeps the `k` best and
/// renormalizes their votes.
pub fn voting_oracle(q: &[f64], z: f64, set: &[TransferPixel], k: usize, p: &KernelParams, classes: usize) -> Vec<f64> {
    let neg_sim: Vec<f64> = set
        .iter()
        .map(|t| -((-p.alpha * euclid(q, &t.feature)).exp() * (-p.gamma * (z - t.z).abs()).exp()))
        .collect();
    let keep = select_smallest(&neg_sim, k.min(set.len()));
    let mut votes = vec![0.0; classes];
    let mut total = 0.0;
    for i in keep {
        votes[set[i].label as usize] -= neg_sim[i];
        total -= neg_sim[i];
    }
    votes.iter_mut().for_each(|v| *v /= total);
    votes
}

/// Single-image split whose labels hold `counts[c]` pixels of class c.
pub fn split_with_counts(counts: &[usize]) -> DatasetSplit {
    let labels: Vec<ClassId> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c as ClassId, n))
        .collect();
    let w = labels.len();
    let rec = SceneRecord::new(
        RgbImage::new(1, w, vec![0; 3 * w]).unwrap(),
        LabelMap::new(1, w, labels).unwrap(),
        None,
    )
    .unwrap();
    DatasetSplit::new(
        ClassCatalog::numbered(counts.len()).unwrap(),
        SplitRole::Train,
        vec![rec],
    )
    .unwrap()
}
