use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{cell_height, ExemplarSet, IndexedImage};
use crate::convnet::{CellGrid, PixelFeatureMap};
use crate::data::{ClassId, UNLABELED};
use crate::error::{Error, Result};
use crate::metric::MetricParams;
use crate::sampler::RarityPartition;

/// Per-cell class distributions transferred from exemplars.
pub type GlobalBeliefMap = CellGrid;

/// Exponential falloff rates of the feature (`alpha`) and height
/// (`gamma`) terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            alpha: 15.0,
            gamma: 5.0,
        }
    }
}

impl KernelParams {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        if !(alpha >= 0.0 && gamma >= 0.0) {
            return Err(Error::Config(format!(
                "kernel falloffs must be non-negative, got {alpha} and {gamma}"
            )));
        }
        Ok(Self { alpha, gamma })
    }
}

/// One labeled cell available for voting.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferPixel {
    pub image: u32,
    pub cell: (u32, u32),
    pub feature: Vec<f64>,
    pub z: f64,
    pub label: ClassId,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransferSet {
    pub pixels: Vec<TransferPixel>,
    /// Number of leading entries that come from the exemplars themselves.
    pub exemplar_count: usize,
    pub warnings: Vec<String>,
}

impl TransferSet {
    pub fn auxiliary(&self) -> &[TransferPixel] {
        &self.pixels[self.exemplar_count..]
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for p in &self.pixels {
            counts[p.label as usize] += 1;
        }
        counts
    }
}

fn cell_pixel(img: &IndexedImage, image: usize, cell: usize) -> TransferPixel {
    let f = &img.features;
    let (r, c) = (cell / f.cols, cell % f.cols);
    TransferPixel {
        image: image as u32,
        cell: (r as u32, c as u32),
        feature: f.cell(cell).to_vec(),
        z: cell_height(r, f.rows),
        label: img.cell_labels[cell],
    }
}

/// Every labeled cell of the exemplars, then auxiliary cells drawn from
/// outside the exemplars so that each rare class reaches `k` entries.
pub fn build_transfer_set(
    exemplars: &ExemplarSet,
    gallery: &[IndexedImage],
    k: usize,
    rarity: &RarityPartition,
    seed: u64,
) -> Result<TransferSet> {
    if k == 0 {
        return Err(Error::Argument("transfer neighbor count must be at least 1".into()));
    }
    let mut set = TransferSet::default();
    for &i in &exemplars.indices {
        let img = gallery
            .get(i)
            .ok_or_else(|| Error::Argument(format!("exemplar {i} is outside the gallery")))?;
        for cell in 0..img.cell_labels.len() {
            if img.cell_labels[cell] != UNLABELED {
                set.pixels.push(cell_pixel(img, i, cell));
            }
        }
    }
    set.exemplar_count = set.pixels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &class in &rarity.rare {
        let have = set.pixels[..set.exemplar_count]
            .iter()
            .filter(|p| p.label == class)
            .count();
        if have >= k {
            continue;
        }
        let need = k - have;
        let mut pool = Vec::new();
        for (i, img) in gallery.iter().enumerate() {
            if exemplars.contains(i) {
                continue;
            }
            pool.extend(
                img.cell_labels
                    .iter()
                    .enumerate()
                    .filter(|&(_, &l)| l == class)
                    .map(|(cell, _)| (i, cell)),
            );
        }
        if pool.is_empty() {
            set.warnings.push(format!(
                "rare class {class} has no cells outside the exemplars; left at {have} of {k}"
            ));
            continue;
        }
        let picks: Vec<usize> = if pool.len() >= need {
            index::sample(&mut rng, pool.len(), need).into_vec()
        } else {
            (0..need).map(|_| rng.gen_range(0..pool.len())).collect()
        };
        for j in picks {
            let (i, cell) = pool[j];
            set.pixels.push(cell_pixel(&gallery[i], i, cell));
        }
    }
    Ok(set)
}

fn norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `exp(−α‖x_a − x_b‖) · exp(−γ|z_a − z_b|)`, features mapped by `metric`
/// first when given.
pub fn similarity(
    a: &[f64],
    za: f64,
    b: &[f64],
    zb: f64,
    params: &KernelParams,
    metric: Option<&MetricParams>,
) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape("features differ in width".into()));
    }
    let dx = match metric {
        Some(m) => norm(&m.transform(a)?, &m.transform(b)?),
        None => norm(a, b),
    };
    Ok((-params.alpha * dx).exp() * (-params.gamma * (za - zb).abs()).exp())
}

/// Votes of the `k` most similar entries; `feats` are already mapped by
/// the metric.
fn vote(
    query: &[f64],
    z: f64,
    feats: &[Vec<f64>],
    pixels: &[TransferPixel],
    k: usize,
    params: &KernelParams,
    classes: usize,
) -> Vec<f64> {
    let mut dist: Vec<(f64, usize)> = feats
        .iter()
        .zip(pixels)
        .enumerate()
        .map(|(i, (f, p))| (params.alpha * norm(query, f) + params.gamma * (z - p.z).abs(), i))
        .collect();
    let k = k.min(dist.len());
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, order);
        dist.truncate(k);
    }
    dist.sort_by(order);
    // weights relative to the best neighbor; the common factor cancels
    let best = dist[0].0;
    let mut p = vec![0.0; classes];
    let mut total = 0.0;
    for &(d, i) in &dist {
        let w = (best - d).exp();
        p[pixels[i].label as usize] += w;
        total += w;
    }
    p.iter_mut().for_each(|v| *v /= total);
    p
}

fn check_set(pixels: &[TransferPixel], dim: usize, classes: usize) -> Result<()> {
    if pixels.is_empty() {
        return Err(Error::EmptyData("transfer set is empty".into()));
    }
    for p in pixels {
        if p.feature.len() != dim {
            return Err(Error::Shape("transfer feature width differs from the query".into()));
        }
        if p.label as usize >= classes {
            return Err(Error::Validation(format!("transfer label {} is not a class", p.label)));
        }
    }
    Ok(())
}

fn mapped(pixels: &[TransferPixel], metric: Option<&MetricParams>) -> Result<Vec<Vec<f64>>> {
    pixels
        .iter()
        .map(|p| match metric {
            Some(m) => m.transform(&p.feature),
            None => Ok(p.feature.clone()),
        })
        .collect()
}

/// Class distribution of one query cell from its `k` nearest transfer
/// entries under the combined distance `α‖Δx‖ + γ|Δz|`.
pub fn global_belief(
    feature: &[f64],
    z: f64,
    transfer: &[TransferPixel],
    k: usize,
    params: &KernelParams,
    metric: Option<&MetricParams>,
    classes: usize,
) -> Result<Vec<f64>> {
    check_set(transfer, feature.len(), classes)?;
    if k == 0 {
        return Err(Error::Argument("neighbor count must be at least 1".into()));
    }
    let feats = mapped(transfer, metric)?;
    let q = match metric {
        Some(m) => m.transform(feature)?,
        None => feature.to_vec(),
    };
    Ok(vote(&q, z, &feats, transfer, k, params, classes))
}

/// [`global_belief`] for every cell of a query feature map.
pub fn global_belief_map(
    query: &PixelFeatureMap,
    transfer: &[TransferPixel],
    k: usize,
    params: &KernelParams,
    metric: Option<&MetricParams>,
    classes: usize,
) -> Result<GlobalBeliefMap> {
    check_set(transfer, query.dim, classes)?;
    if k == 0 {
        return Err(Error::Argument("neighbor count must be at least 1".into()));
    }
    let feats = mapped(transfer, metric)?;
    let mut values = Vec::with_capacity(query.cells() * classes);
    for r in 0..query.rows {
        let z = cell_height(r, query.rows);
        for c in 0..query.cols {
            let q = match metric {
                Some(m) => m.transform(query.at(r, c))?,
                None => query.at(r, c).to_vec(),
            };
            values.extend(vote(&q, z, &feats, transfer, k, params, classes));
        }
    }
    CellGrid::new(query.height, query.width, query.stride, classes, values)
}

/// 1/|L| everywhere on the grid of `like`.
pub fn uniform_belief_map(like: &CellGrid, classes: usize) -> GlobalBeliefMap {
    CellGrid {
        dim: classes,
        values: vec![1.0 / classes as f64; like.cells() * classes],
        ..like.clone()
    }
}
