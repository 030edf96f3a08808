//! Scene rasters, label maps, dataset splits and their on-disk formats.

mod image;
pub mod io;
pub(crate) mod patch;
mod stats;
pub mod synth;

pub use image::{ClassCatalog, ClassId, LabelMap, RgbImage, SceneImage, UNLABELED};
pub use io::{load_split, save_split};
pub use patch::{extract_patch, mirror_index, Patch};
pub use stats::{compute_class_frequencies, ClassFrequencyTable};
pub use synth::{generate_synthetic_scenes, SynthConfig};

use crate::error::{Error, Result};

/// Scene category identifier attached to an image (e.g. "coast", "city").
pub type SceneId = u32;

/// Whether a split is used for fitting or for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRole {
    Train,
    Test,
}

/// One annotated image.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub image: RgbImage,
    pub labels: LabelMap,
    pub scene: Option<SceneId>,
}

impl SceneRecord {
    pub fn new(image: RgbImage, labels: LabelMap, scene: Option<SceneId>) -> Result<Self> {
        if image.height() != labels.height() || image.width() != labels.width() {
            return Err(Error::Shape(format!(
                "image is {}x{} but its label map is {}x{}",
                image.height(),
                image.width(),
                labels.height(),
                labels.width()
            )));
        }
        Ok(Self { image, labels, scene })
    }
}

/// A sequence of annotated images sharing one class catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub catalog: ClassCatalog,
    pub role: SplitRole,
    pub records: Vec<SceneRecord>,
}

impl DatasetSplit {
    /// Builds a split, checking that every label is either a catalog class
    /// or the unlabeled sentinel.
    pub fn new(catalog: ClassCatalog, role: SplitRole, records: Vec<SceneRecord>) -> Result<Self> {
        for (i, rec) in records.iter().enumerate() {
            rec.labels
                .validate(&catalog)
                .map_err(|e| Error::Validation(format!("record {i}: {e}")))?;
        }
        Ok(Self { catalog, role, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.catalog.count()
    }

    /// Preprocessed copies of every image, in record order.
    pub fn preprocessed_images(&self) -> Vec<SceneImage> {
        self.records.iter().map(|r| r.image.preprocess()).collect()
    }

    /// Splits off the records at the given indices into a new split with `role`.
    pub fn subset(&self, indices: &[usize], role: SplitRole) -> DatasetSplit {
        DatasetSplit {
            catalog: self.catalog.clone(),
            role,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}
