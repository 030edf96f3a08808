use super::{DatasetSplit, UNLABELED};
use crate::error::{Error, Result};

/// Per-class pixel counts over a split, normalized over labeled pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassFrequencyTable {
    pub counts: Vec<u64>,
    pub frequencies: Vec<f64>,
    pub labeled: u64,
}

impl ClassFrequencyTable {
    /// Builds a table from raw counts. Fails when every count is zero.
    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        let labeled: u64 = counts.iter().sum();
        if labeled == 0 {
            return Err(Error::EmptyData("no labeled pixels".into()));
        }
        let frequencies = counts.iter().map(|&c| c as f64 / labeled as f64).collect();
        Ok(Self {
            counts,
            frequencies,
            labeled,
        })
    }

    pub fn class_count(&self) -> usize {
        self.counts.len()
    }

    pub fn frequency(&self, class: usize) -> f64 {
        self.frequencies[class]
    }

    /// Ratio between the most and least frequent classes that occur.
    pub fn imbalance_ratio(&self) -> f64 {
        let present = self.counts.iter().filter(|&&c| c > 0);
        let max = present.clone().max().copied().unwrap_or(0) as f64;
        let min = present.min().copied().unwrap_or(1) as f64;
        max / min
    }
}

/// Tallies labeled pixels per class; unlabeled pixels are ignored.
pub fn compute_class_frequencies(split: &DatasetSplit) -> Result<ClassFrequencyTable> {
    if split.is_empty() {
        return Err(Error::EmptyData("split has no records".into()));
    }
    let mut counts = vec![0u64; split.class_count()];
    for rec in &split.records {
        for &l in rec.labels.labels() {
            if l != UNLABELED {
                counts[l as usize] += 1;
            }
        }
    }
    ClassFrequencyTable::from_counts(counts).map_err(|_| Error::EmptyData("split has no labeled pixels".into()))
}
