//! CNN ensembles: one network per sampling strategy, fused by averaging.

use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::convnet::{self, CellGrid, LocalBeliefMap, NetworkParams, NetworkSpec, PixelFeatureMap, TrainConfig};
use crate::data::{DatasetSplit, SceneImage};
use crate::error::{Error, Result};
use crate::sampler::{SamplingConfig, Strategy};

const MAGIC: &[u8; 4] = b"PENS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMember {
    pub strategy: Strategy,
    pub params: NetworkParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    members: Vec<EnsembleMember>,
}

impl EnsembleModel {
    pub fn new(members: Vec<EnsembleMember>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Argument("an ensemble needs at least one member".into()))?;
        if let Some(m) = members.iter().find(|m| m.params.spec != first.params.spec) {
            return Err(Error::Shape(format!(
                "{} member does not share the ensemble's network spec",
                m.strategy
            )));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[EnsembleMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.members[0].params.spec
    }

    pub fn strategies(&self) -> Vec<Strategy> {
        self.members.iter().map(|m| m.strategy).collect()
    }

    /// Network whose truncated output serves as the pixel feature: the
    /// first globally sampled member, else the first member.
    pub fn feature_extractor(&self) -> &NetworkParams {
        &self
            .members
            .iter()
            .find(|m| m.strategy == Strategy::Global)
            .unwrap_or(&self.members[0])
            .params
    }

    /// Pixel features (from [`Self::feature_extractor`]) and the fused
    /// local belief.
    pub fn analyze(&self, image: &SceneImage) -> Result<(PixelFeatureMap, LocalBeliefMap)> {
        let extractor = self.feature_extractor();
        let mut features = None;
        let mut maps = Vec::with_capacity(self.members.len());
        for m in &self.members {
            let (f, p) = convnet::map_image(&m.params, image)?;
            if features.is_none() && std::ptr::eq(&m.params, extractor) {
                features = Some(f);
            }
            maps.push(p);
        }
        Ok((features.expect("extractor is a member"), fuse_maps(&maps)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(MAGIC, VERSION);
        w.u32(self.members.len() as u32);
        for m in &self.members {
            w.str(m.strategy.tag());
            w.bytes(&m.params.to_bytes());
        }
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, "ensemble");
        r.expect_magic(MAGIC, VERSION)?;
        let n = r.u32()? as usize;
        let mut members = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let strategy = r
                .str()?
                .parse()
                .map_err(|e: Error| Error::Format(format!("ensemble member: {e}")))?;
            let params = NetworkParams::from_bytes(r.bytes()?)?;
            members.push(EnsembleMember { strategy, params });
        }
        r.finish()?;
        Self::new(members).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?).map_err(|e| e.context(path.display()))
    }
}

/// Trains one member per strategy. Member `i` uses `seed + i` for both its
/// initialization and its sampler.
pub fn train_ensemble(
    split: &DatasetSplit,
    strategies: &[Strategy],
    spec: &NetworkSpec,
    sampling: &SamplingConfig,
    config: &TrainConfig,
) -> Result<EnsembleModel> {
    if strategies.is_empty() {
        return Err(Error::Argument("no sampling strategies given".into()));
    }
    let mut members = Vec::with_capacity(strategies.len());
    for (i, &strategy) in strategies.iter().enumerate() {
        let s = SamplingConfig {
            strategy,
            seed: sampling.seed.wrapping_add(i as u64),
            ..sampling.clone()
        };
        let c = TrainConfig {
            seed: config.seed.wrapping_add(i as u64),
            ..config.clone()
        };
        log::info!("training member {i} ({strategy})");
        let params = convnet::train(split, &s, spec, &c).map_err(|e| e.context(format!("{strategy} member")))?;
        members.push(EnsembleMember { strategy, params });
    }
    EnsembleModel::new(members)
}

/// Component-wise arithmetic mean of member distributions.
pub fn ensemble_fuse<D: AsRef<[f64]>>(members: &[D]) -> Result<Vec<f64>> {
    let first = members
        .first()
        .ok_or_else(|| Error::Argument("nothing to fuse".into()))?
        .as_ref();
    let mut out = vec![0.0; first.len()];
    for m in members {
        let m = m.as_ref();
        if m.len() != out.len() {
            return Err(Error::Shape("member distributions differ in length".into()));
        }
        out.iter_mut().zip(m).for_each(|(o, p)| *o += p);
    }
    let n = members.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// Cell-wise [`ensemble_fuse`] of per-member maps with identical geometry.
pub fn fuse_maps(maps: &[CellGrid]) -> Result<CellGrid> {
    let first = maps.first().ok_or_else(|| Error::Argument("nothing to fuse".into()))?;
    if maps
        .iter()
        .any(|m| (m.rows, m.cols, m.dim) != (first.rows, first.cols, first.dim))
    {
        return Err(Error::Shape("member maps differ in geometry".into()));
    }
    let values: Vec<&[f64]> = maps.iter().map(|m| m.values.as_slice()).collect();
    Ok(CellGrid {
        values: ensemble_fuse(&values)?,
        ..first.clone()
    })
}

/// Fused per-cell class distributions of every member.
pub fn local_belief_map(model: &EnsembleModel, image: &SceneImage) -> Result<LocalBeliefMap> {
    let maps = model
        .members
        .iter()
        .map(|m| convnet::map_image(&m.params, image).map(|(_, p)| p))
        .collect::<Result<Vec<_>>>()?;
    fuse_maps(&maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn member(strategy: Strategy, seed: u64) -> EnsembleMember {
        let spec = NetworkSpec::desk(3);
        EnsembleMember {
            strategy,
            params: NetworkParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    fn image() -> SceneImage {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        SceneImage::normalized(16, 24, (0..16 * 24 * 3).map(|_| rng.gen_range(0.0..1.0)).collect())
    }

    #[test]
    fn fuse_is_the_mean() {
        assert_eq!(ensemble_fuse(&[[0.3, 0.7]]).unwrap(), vec![0.3, 0.7]);
        let f = ensemble_fuse(&[[0.2, 0.8], [0.6, 0.4]]).unwrap();
        assert!((f[0] - 0.4).abs() < 1e-15 && (f[1] - 0.6).abs() < 1e-15);
        let same = vec![[0.125, 0.375, 0.5]; 7];
        assert_eq!(ensemble_fuse(&same).unwrap(), vec![0.125, 0.375, 0.5]);
        assert!(ensemble_fuse::<Vec<f64>>(&[]).is_err());
    }

    #[test]
    fn removing_a_member_changes_only_its_share() {
        let ps = [[0.1, 0.2, 0.7], [0.5, 0.25, 0.25], [0.3, 0.3, 0.4]];
        let all = ensemble_fuse(&ps).unwrap();
        let rest = ensemble_fuse(&ps[..2]).unwrap();
        for j in 0..3 {
            assert!((all[j] - (2.0 * rest[j] + ps[2][j]) / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn belief_map_is_mean_of_member_maps_and_order_free() {
        let model = EnsembleModel::new(vec![
            member(Strategy::Global, 1),
            member(Strategy::Class, 2),
            member(Strategy::Hybrid, 3),
        ])
        .unwrap();
        let img = image();
        let map = local_belief_map(&model, &img).unwrap();
        for cell in map.iter_cells() {
            assert!((cell.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let per: Vec<CellGrid> = model
            .members()
            .iter()
            .map(|m| convnet::map_image(&m.params, &img).unwrap().1)
            .collect();
        for (i, v) in map.values.iter().enumerate() {
            let mean = per.iter().map(|p| p.values[i]).sum::<f64>() / 3.0;
            assert!((v - mean).abs() < 1e-15);
        }
        let mut reversed = model.members().to_vec();
        reversed.reverse();
        let rmap = local_belief_map(&EnsembleModel::new(reversed).unwrap(), &img).unwrap();
        for (a, b) in map.values.iter().zip(&rmap.values) {
            assert!((a - b).abs() < 1e-15);
        }
        let (features, fused) = model.analyze(&img).unwrap();
        assert_eq!(fused, map);
        assert_eq!(
            features,
            convnet::extract_features(&model.members()[0].params, &img).unwrap()
        );
    }

    #[test]
    fn mismatched_specs_are_rejected() {
        let other = EnsembleMember {
            strategy: Strategy::Class,
            params: NetworkParams::zeros(&NetworkSpec::desk(4)),
        };
        assert!(EnsembleModel::new(vec![member(Strategy::Global, 0), other]).is_err());
        assert!(EnsembleModel::new(Vec::new()).is_err());
    }

    #[test]
    fn ensemble_bytes_round_trip() {
        let model = EnsembleModel::new(vec![member(Strategy::TruncatedClass, 4), member(Strategy::Global, 5)]).unwrap();
        let back = EnsembleModel::from_bytes(&model.to_bytes()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.feature_extractor(), &model.members()[1].params);
    }
}
