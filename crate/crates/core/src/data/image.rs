use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

/// Dense class identifier in `0..|L|`.
pub type ClassId = u16;

/// Label value marking a pixel without annotation. Never a valid class.
pub const UNLABELED: ClassId = u16::MAX;

/// The label set: class names with dense ids `0..count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCatalog {
    names: Vec<String>,
}

impl ClassCatalog {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::Argument("class catalog needs at least one class".into()));
        }
        if names.len() >= UNLABELED as usize {
            return Err(Error::Argument(format!(
                "{} classes exceed the 16-bit label range",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.is_empty() || n.chars().any(char::is_whitespace) {
                return Err(Error::Argument(format!("invalid class name {n:?}")));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::Argument(format!("duplicate class name {n:?}")));
            }
        }
        Ok(Self { names })
    }

    /// Anonymous catalog `class0..class{n-1}`.
    pub fn numbered(count: usize) -> Result<Self> {
        Self::new((0..count).map(|i| format!("class{i}")))
    }

    /// Number of classes |L| (the sentinel is not counted).
    pub fn count(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<ClassId> {
        self.names.iter().position(|n| n == name).map(|i| i as ClassId)
    }

    pub fn unlabeled_id(&self) -> ClassId {
        UNLABELED
    }

    pub fn is_class(&self, id: ClassId) -> bool {
        (id as usize) < self.names.len()
    }

    /// Reads a catalog file: one class name per line, `#` comments allowed.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let names: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Self::new(names).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for n in &self.names {
            text.push_str(n);
            text.push('\n');
        }
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Raw 8-bit RGB raster, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Argument(format!(
                "image must be non-empty, got {height}x{width}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{height}x{width} RGB image needs {} bytes, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Global mean subtraction followed by division by the standard
    /// deviation, computed over all channels jointly.
    pub fn preprocess(&self) -> SceneImage {
        let values: Vec<f64> = self.data.iter().map(|&v| v as f64).collect();
        SceneImage::normalized(self.height, self.width, values)
    }
}

/// Real-valued 3-channel raster, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SceneImage {
    /// Wraps values as-is (no normalization).
    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Argument(format!(
                "image must be non-empty, got {height}x{width}"
            )));
        }
        if values.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{height}x{width} image needs {} values, got {}",
                height * width * 3,
                values.len()
            )));
        }
        Ok(Self { height, width, values })
    }

    /// Zero-mean, unit-variance copy of `values`. A constant image maps to
    /// all zeros.
    pub fn normalized(height: usize, width: usize, mut values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let scale = if var > 1e-24 { 1.0 / var.sqrt() } else { 0.0 };
        for v in &mut values {
            *v = (*v - mean) * scale;
        }
        Self { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[(row * self.width + col) * 3 + channel]
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * 3;
        &self.values[i..i + 3]
    }

    /// Mean and (population) variance over all channels jointly.
    pub fn moments(&self) -> (f64, f64) {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let var = self.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var)
    }
}

/// Per-pixel class annotation; [`UNLABELED`] marks missing labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<ClassId>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<ClassId>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Argument(format!(
                "label map must be non-empty, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} label map needs {} entries, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, label: ClassId) -> Result<Self> {
        Self::new(height, width, vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> ClassId {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, label: ClassId) {
        self.labels[row * self.width + col] = label;
    }

    pub fn is_labeled(&self, row: usize, col: usize) -> bool {
        self.get(row, col) != UNLABELED
    }

    /// Checks that every labeled entry is a class of `catalog`.
    pub fn validate(&self, catalog: &ClassCatalog) -> Result<()> {
        if let Some((i, &l)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l != UNLABELED && !catalog.is_class(l))
        {
            return Err(Error::Validation(format!(
                "label {l} at pixel ({}, {}) is neither a class id below {} nor the unlabeled sentinel {UNLABELED}",
                i / self.width,
                i % self.width,
                catalog.count()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preprocess_gives_zero_mean_unit_variance() {
        let data: Vec<u8> = (0..5 * 7 * 3).map(|i| ((i * 37) % 251) as u8).collect();
        let img = RgbImage::new(5, 7, data).unwrap().preprocess();
        let (mean, var) = img.moments();
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_image_maps_to_zeros() {
        let img = RgbImage::new(2, 2, vec![9; 12]).unwrap().preprocess();
        assert!(img.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn catalog_rejects_duplicates_and_empty() {
        assert!(ClassCatalog::new(Vec::<String>::new()).is_err());
        assert!(ClassCatalog::new(["a", "a"]).is_err());
        let c = ClassCatalog::new(["sky", "sea"]).unwrap();
        assert_eq!(c.count(), 2);
        assert!(!c.is_class(c.unlabeled_id()));
        assert_eq!(c.id_of("sea"), Some(1));
    }

    #[test]
    fn label_validation_flags_out_of_range() {
        let c = ClassCatalog::numbered(2).unwrap();
        let ok = LabelMap::new(1, 3, vec![0, 1, UNLABELED]).unwrap();
        assert!(ok.validate(&c).is_ok());
        let bad = LabelMap::new(1, 3, vec![0, 2, 1]).unwrap();
        assert!(matches!(bad.validate(&c), Err(Error::Validation(_))));
    }
}
