use std::path::Path;

use super::{
    build_transfer_set, global_belief_map, pool_global_feature, retrieve_exemplars, uniform_belief_map,
    GlobalBeliefMap, GlobalFeature, KernelParams, PyramidConfig, TransferSet,
};
use crate::binio::{Reader, Writer};
use crate::convnet::{extract_features, CellGrid, NetworkParams, PixelFeatureMap};
use crate::data::{compute_class_frequencies, ClassId, DatasetSplit, LabelMap, SceneId, SceneImage, UNLABELED};
use crate::error::{Error, Result};
use crate::metric::MetricParams;
use crate::sampler::{classify_rarity, RarityPartition};

const MAGIC: &[u8; 4] = b"PIDX";
const VERSION: u32 = 1;

/// Majority label of each `stride × stride` block, ties to the lowest id.
/// Blocks where unlabeled pixels outnumber every class get [`UNLABELED`].
pub fn cell_labels(labels: &LabelMap, stride: usize, classes: usize) -> Result<Vec<ClassId>> {
    let (h, w) = (labels.height(), labels.width());
    let (rows, cols) = crate::convnet::grid_dims(h, w, stride)?;
    let mut out = Vec::with_capacity(rows * cols);
    let mut counts = vec![0usize; classes];
    for r in 0..rows {
        for c in 0..cols {
            counts.iter_mut().for_each(|v| *v = 0);
            let mut unlabeled = 0;
            for y in r * stride..((r + 1) * stride).min(h) {
                for x in c * stride..((c + 1) * stride).min(w) {
                    match labels.get(y, x) {
                        UNLABELED => unlabeled += 1,
                        l => counts[l as usize] += 1,
                    }
                }
            }
            let (best, n) = counts
                .iter()
                .enumerate()
                .fold((0, 0), |acc, (i, &n)| if n > acc.1 { (i, n) } else { acc });
            out.push(if unlabeled > n || n == 0 {
                UNLABELED
            } else {
                best as ClassId
            });
        }
    }
    Ok(out)
}

/// A training image prepared for retrieval and transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedImage {
    pub descriptor: GlobalFeature,
    pub features: PixelFeatureMap,
    pub cell_labels: Vec<ClassId>,
    pub scene: Option<SceneId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalConfig {
    pub exemplars: usize,
    /// Voting neighbors per cell; also the per-rare-class target count of
    /// the transfer set.
    pub k: usize,
    pub kernel: KernelParams,
    pub pyramid: PyramidConfig,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            exemplars: 5,
            k: 200,
            kernel: KernelParams::default(),
            pyramid: PyramidConfig::default(),
        }
    }
}

/// Sealed gallery of training images plus the networks that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferIndex {
    pub classes: usize,
    pub pyramid: PyramidConfig,
    pub rarity: RarityPartition,
    /// When set, the global belief is uniform and retrieval is skipped.
    pub uniform_prior: bool,
    pub images: Vec<IndexedImage>,
    pub descriptor_net: NetworkParams,
    /// Network for cell features when it differs from `descriptor_net`.
    pub pixel_net: Option<NetworkParams>,
}

impl TransferIndex {
    pub fn build(
        split: &DatasetSplit,
        descriptor_net: &NetworkParams,
        pixel_net: Option<&NetworkParams>,
        pyramid: PyramidConfig,
        eta: f64,
        uniform_prior: bool,
    ) -> Result<Self> {
        if split.is_empty() {
            return Err(Error::EmptyData("index needs at least one training image".into()));
        }
        if let Some(p) = pixel_net {
            if p.spec.feature_dim() != descriptor_net.spec.feature_dim()
                || p.spec.cell_stride() != descriptor_net.spec.cell_stride()
            {
                return Err(Error::Shape(
                    "pixel and descriptor networks differ in feature geometry".into(),
                ));
            }
        }
        let classes = split.class_count();
        let rarity = classify_rarity(&compute_class_frequencies(split)?, eta);
        let mut index = Self {
            classes,
            pyramid,
            rarity,
            uniform_prior,
            images: Vec::with_capacity(split.len()),
            descriptor_net: descriptor_net.clone(),
            pixel_net: pixel_net.cloned(),
        };
        let stride = descriptor_net.spec.cell_stride();
        for (i, rec) in split.records.iter().enumerate() {
            let (descriptor, features) = index
                .describe(&rec.image.preprocess())
                .map_err(|e| e.context(format!("record {i}")))?;
            index.images.push(IndexedImage {
                descriptor,
                features,
                cell_labels: cell_labels(&rec.labels, stride, classes)?,
                scene: rec.scene,
            });
        }
        Ok(index)
    }

    /// Scene descriptor and cell features of an image.
    pub fn describe(&self, image: &SceneImage) -> Result<(GlobalFeature, PixelFeatureMap)> {
        let base = extract_features(&self.descriptor_net, image)?;
        let descriptor = pool_global_feature(&base, &self.pyramid)?;
        let features = match &self.pixel_net {
            Some(p) => extract_features(p, image)?,
            None => base,
        };
        Ok((descriptor, features))
    }

    pub fn descriptors(&self) -> Vec<&[f64]> {
        self.images.iter().map(|i| i.descriptor.as_slice()).collect()
    }

    /// Global belief for a query already passed through [`Self::describe`].
    pub fn global_belief(
        &self,
        descriptor: &[f64],
        features: &PixelFeatureMap,
        config: &RetrievalConfig,
        metric: Option<&MetricParams>,
        seed: u64,
    ) -> Result<(GlobalBeliefMap, TransferSet)> {
        if self.uniform_prior {
            return Ok((uniform_belief_map(features, self.classes), TransferSet::default()));
        }
        let size = config.exemplars.min(self.images.len());
        let exemplars = retrieve_exemplars(descriptor, &self.descriptors(), size)?;
        let set = build_transfer_set(&exemplars, &self.images, config.k, &self.rarity, seed)?;
        for w in &set.warnings {
            log::warn!("{w}");
        }
        let map = global_belief_map(features, &set.pixels, config.k, &config.kernel, metric, self.classes)?;
        Ok((map, set))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(MAGIC, VERSION);
        w.u32(self.classes as u32);
        w.u32(self.pyramid.levels as u32);
        w.u8(u8::from(self.uniform_prior));
        for set in [&self.rarity.frequent, &self.rarity.rare] {
            w.u32(set.len() as u32);
            set.iter().for_each(|&c| w.u16(c));
        }
        w.bytes(&self.descriptor_net.to_bytes());
        match &self.pixel_net {
            Some(p) => {
                w.u8(1);
                w.bytes(&p.to_bytes());
            }
            None => w.u8(0),
        }
        w.u32(self.images.len() as u32);
        for img in &self.images {
            let f = &img.features;
            w.u32(f.height as u32);
            w.u32(f.width as u32);
            w.u32(f.stride as u32);
            w.u32(f.dim as u32);
            match img.scene {
                Some(s) => {
                    w.u8(1);
                    w.u32(s);
                }
                None => w.u8(0),
            }
            w.u32(img.descriptor.len() as u32);
            w.f64s(&img.descriptor);
            w.f64s(&f.values);
            img.cell_labels.iter().for_each(|&l| w.u16(l));
        }
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, "index");
        r.expect_magic(MAGIC, VERSION)?;
        let classes = r.u32()? as usize;
        let pyramid = PyramidConfig::new(r.u32()? as usize).map_err(|e| Error::Format(e.to_string()))?;
        let uniform_prior = r.u8()? != 0;
        let mut rarity = RarityPartition::default();
        for set in [&mut rarity.frequent, &mut rarity.rare] {
            for _ in 0..r.u32()? {
                set.insert(r.u16()?);
            }
        }
        let descriptor_net = NetworkParams::from_bytes(r.bytes()?)?;
        let pixel_net = match r.u8()? {
            0 => None,
            _ => Some(NetworkParams::from_bytes(r.bytes()?)?),
        };
        let n = r.u32()? as usize;
        let mut images = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let height = r.u32()? as usize;
            let width = r.u32()? as usize;
            let stride = r.u32()? as usize;
            let dim = r.u32()? as usize;
            let scene = match r.u8()? {
                0 => None,
                _ => Some(r.u32()?),
            };
            let dlen = r.u32()? as usize;
            let descriptor = r.f64s(dlen)?;
            let (rows, cols) =
                crate::convnet::grid_dims(height, width, stride).map_err(|e| Error::Format(e.to_string()))?;
            let values = r.f64s(rows * cols * dim)?;
            let features =
                CellGrid::new(height, width, stride, dim, values).map_err(|e| Error::Format(e.to_string()))?;
            let cell_labels = (0..rows * cols).map(|_| r.u16()).collect::<Result<Vec<_>>>()?;
            if cell_labels.iter().any(|&l| l != UNLABELED && l as usize >= classes) {
                return Err(Error::Format("index holds a cell label outside the catalog".into()));
            }
            images.push(IndexedImage {
                descriptor,
                features,
                cell_labels,
                scene,
            });
        }
        r.finish()?;
        Ok(Self {
            classes,
            pyramid,
            rarity,
            uniform_prior,
            images,
            descriptor_net,
            pixel_net,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?).map_err(|e| e.context(path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convnet::NetworkSpec;
    use crate::data::{generate_synthetic_scenes, SynthConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cell_majority_with_ties_and_sentinels() {
        // 2x4 map, stride 2: cells [0,0,1,1] tie -> 0; [2,U,U,U] -> U; ...
        let u = UNLABELED;
        let lm = LabelMap::new(2, 4, vec![0, 1, 2, u, 1, 0, u, u]).unwrap();
        assert_eq!(cell_labels(&lm, 2, 3).unwrap(), vec![0, u]);
        let lm = LabelMap::new(2, 2, vec![2, 2, u, 1]).unwrap();
        assert_eq!(cell_labels(&lm, 2, 3).unwrap(), vec![2]);
    }

    #[test]
    fn index_bytes_round_trip() {
        let mut cfg = SynthConfig::toy();
        cfg.images = 4;
        let split = generate_synthetic_scenes(&cfg, 2).unwrap();
        let net = NetworkParams::init(
            &NetworkSpec::desk(split.class_count()),
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        let index = TransferIndex::build(&split, &net, None, PyramidConfig::default(), 0.05, false).unwrap();
        assert_eq!(index.images.len(), 4);
        assert_eq!(index.images[0].descriptor.len(), 5 * 16);
        let bytes = index.to_bytes();
        assert_eq!(&bytes[..4], b"PIDX");
        assert_eq!(TransferIndex::from_bytes(&bytes).unwrap(), index);
        assert!(TransferIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
