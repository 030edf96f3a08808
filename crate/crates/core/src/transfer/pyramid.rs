use crate::convnet::PixelFeatureMap;
use crate::data::RgbImage;
use crate::error::{Error, Result};

/// Spatial pyramid: level `l` splits the grid into `2^l × 2^l` regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PyramidConfig {
    pub levels: usize,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self { levels: 2 }
    }
}

impl PyramidConfig {
    pub fn new(levels: usize) -> Result<Self> {
        if levels == 0 || levels > 8 {
            return Err(Error::Config(format!("pyramid needs 1 to 8 levels, got {levels}")));
        }
        Ok(Self { levels })
    }

    pub fn region_count(&self) -> usize {
        (0..self.levels).map(|l| 1usize << (2 * l)).sum()
    }

    pub fn descriptor_dim(&self, feature_dim: usize) -> usize {
        self.region_count() * feature_dim
    }
}

pub type GlobalFeature = Vec<f64>;

/// Splits `0..n` into `parts` index ranges of equal length with the
/// remainder going to the last one. When `n < parts`, part `i` is the single
/// index `min(i, n - 1)`.
pub(crate) fn split_ranges(n: usize, parts: usize) -> Vec<(usize, usize)> {
    if n < parts {
        return (0..parts).map(|i| (i.min(n - 1), i.min(n - 1) + 1)).collect();
    }
    let base = n / parts;
    (0..parts)
        .map(|i| (i * base, if i + 1 == parts { n } else { (i + 1) * base }))
        .collect()
}

/// Concatenated per-region means of the cell features, coarse levels
/// first, regions row-major within a level.
pub fn pool_global_feature(features: &PixelFeatureMap, pyramid: &PyramidConfig) -> Result<GlobalFeature> {
    if features.cells() == 0 {
        return Err(Error::EmptyData("feature map has no cells".into()));
    }
    let d = features.dim;
    let mut out = Vec::with_capacity(pyramid.descriptor_dim(d));
    for level in 0..pyramid.levels {
        let g = 1 << level;
        let rows = split_ranges(features.rows, g);
        let cols = split_ranges(features.cols, g);
        for &(r0, r1) in &rows {
            for &(c0, c1) in &cols {
                let mut sum = vec![0.0; d];
                for r in r0..r1 {
                    for c in c0..c1 {
                        sum.iter_mut().zip(features.at(r, c)).for_each(|(s, v)| *s += v);
                    }
                }
                let n = ((r1 - r0) * (c1 - c0)) as f64;
                out.extend(sum.into_iter().map(|s| s / n));
            }
        }
    }
    Ok(out)
}

/// Joint RGB histogram with `bins` levels per channel, normalized to sum 1.
pub fn color_histogram(image: &RgbImage, bins: usize) -> Vec<f64> {
    let bins = bins.max(1);
    let mut h = vec![0.0; bins * bins * bins];
    let q = |v: u8| v as usize * bins / 256;
    for px in image.data().chunks_exact(3) {
        h[(q(px[0]) * bins + q(px[1])) * bins + q(px[2])] += 1.0;
    }
    let n = (image.height() * image.width()).max(1) as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convnet::CellGrid;

    fn grid(rows: usize, cols: usize, dim: usize, f: impl Fn(usize, usize, usize) -> f64) -> CellGrid {
        let mut v = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                for k in 0..dim {
                    v.push(f(r, c, k));
                }
            }
        }
        CellGrid::new(rows * 8, cols * 8, 8, dim, v).unwrap()
    }

    #[test]
    fn two_levels_give_five_regions() {
        let p = PyramidConfig::default();
        assert_eq!(p.region_count(), 5);
        assert_eq!(p.descriptor_dim(64), 320);
        let g = grid(3, 5, 64, |r, c, k| (r * 7 + c * 3 + k) as f64);
        assert_eq!(pool_global_feature(&g, &p).unwrap().len(), 320);
    }

    #[test]
    fn constant_map_pools_to_the_constant() {
        let g = grid(4, 3, 2, |_, _, k| [1.5, -2.0][k]);
        let h = pool_global_feature(&g, &PyramidConfig::default()).unwrap();
        for region in h.chunks(2) {
            assert_eq!(region, [1.5, -2.0]);
        }
    }

    #[test]
    fn level_zero_is_the_grand_mean() {
        let g = grid(2, 2, 3, |r, c, k| (r * 10 + c * 5 + k * k) as f64 * 0.25);
        let h = pool_global_feature(&g, &PyramidConfig::new(1).unwrap()).unwrap();
        for k in 0..3 {
            let mean = (g.at(0, 0)[k] + g.at(0, 1)[k] + g.at(1, 0)[k] + g.at(1, 1)[k]) / 4.0;
            assert!((h[k] - mean).abs() < 1e-15);
        }
        // stacking the grid on itself keeps level 0
        let mut v = g.values.clone();
        v.extend_from_slice(&g.values);
        let tall = CellGrid::new(32, 16, 8, 3, v).unwrap();
        assert_eq!(pool_global_feature(&tall, &PyramidConfig::new(1).unwrap()).unwrap(), h);
    }

    #[test]
    fn remainders_go_to_the_last_region() {
        assert_eq!(split_ranges(5, 2), vec![(0, 2), (2, 5)]);
        assert_eq!(split_ranges(1, 2), vec![(0, 1), (0, 1)]);
        assert_eq!(split_ranges(4, 4), vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
    }

    #[test]
    fn histogram_sums_to_one() {
        let img = RgbImage::new(2, 2, vec![0, 0, 0, 255, 255, 255, 10, 10, 10, 128, 0, 0]).unwrap();
        let h = color_histogram(&img, 4);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(h[0], 0.5);
    }
}
