use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Layer, NetworkSpec};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PNET";
const VERSION: u32 = 1;

/// One weight tensor and one bias vector per convolution or dense layer, in
/// layer order. Convolution weights are laid out
/// `[filter][in_channel][row][col]`, dense weights `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl ParamSet {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let shapes = spec.shapes().expect("validated spec");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, layer) in spec.layers.iter().enumerate() {
            let (c, h, w) = shapes[i];
            match *layer {
                Layer::Conv { kernel, filters, .. } => {
                    weights.push(vec![0.0; filters * c * kernel * kernel]);
                    biases.push(vec![0.0; filters]);
                }
                Layer::Dense { width } => {
                    weights.push(vec![0.0; width * c * h * w]);
                    biases.push(vec![0.0; width]);
                }
                _ => {}
            }
        }
        Self { weights, biases }
    }

    pub fn len(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All values, weights then bias of each layer in order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.weights.len() == other.weights.len()
            && self.biases.len() == other.biases.len()
            && self.weights.iter().zip(&other.weights).all(|(a, b)| a.len() == b.len())
            && self.biases.iter().zip(&other.biases).all(|(a, b)| a.len() == b.len())
    }

    pub(crate) fn add_scaled(&mut self, other: &ParamSet, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub spec: NetworkSpec,
    pub values: ParamSet,
    pub velocity: ParamSet,
}

impl NetworkParams {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            spec: spec.clone(),
            values: ParamSet::zeros(spec),
            velocity: ParamSet::zeros(spec),
        }
    }

    /// Weights uniform in ±sqrt(6 / (fan_in + fan_out)), zero biases.
    pub fn init(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(spec);
        let shapes = spec.shapes().expect("validated spec");
        let mut k = 0;
        for (i, layer) in spec.layers.iter().enumerate() {
            let (c, h, w) = shapes[i];
            let (fan_in, fan_out) = match *layer {
                Layer::Conv { kernel, filters, .. } => (c * kernel * kernel, filters * kernel * kernel),
                Layer::Dense { width } => (c * h * w, width),
                _ => continue,
            };
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut p.values.weights[k] {
                *v = rng.gen_range(-a..=a);
            }
            k += 1;
        }
        p
    }

    pub fn from_values(spec: &NetworkSpec, values: ParamSet) -> Result<Self> {
        let mut p = Self::zeros(spec);
        if !p.values.same_shape(&values) {
            return Err(Error::Shape("parameter shapes do not match the network spec".into()));
        }
        p.values = values;
        Ok(p)
    }

    /// Serialized model: magic, version, spec, then parameters as
    /// little-endian f64 in layer order (weights before biases). Momentum
    /// buffers are not stored.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(MAGIC, VERSION);
        self.spec.write(&mut w);
        w.f64s(&self.values.flatten());
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, "network");
        r.expect_magic(MAGIC, VERSION)?;
        let spec = NetworkSpec::read(&mut r)?;
        let mut p = Self::zeros(&spec);
        for v in p.values.values_mut() {
            *v = r.f64()?;
        }
        r.finish()?;
        Ok(p)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn init_respects_glorot_bounds() {
        let spec = NetworkSpec::desk(4);
        let p = NetworkParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(0));
        let a = (6.0f64 / (27 + 72) as f64).sqrt();
        assert!(p.values.weights[0].iter().all(|v| v.abs() <= a));
        assert!(p.values.weights[0].iter().any(|v| v.abs() > a / 2.0));
        assert!(p.values.biases.iter().flatten().all(|&b| b == 0.0));
    }

    #[test]
    fn model_bytes_round_trip() {
        let spec = NetworkSpec::desk(5);
        let p = NetworkParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(3));
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"PNET");
        let q = NetworkParams::from_bytes(&bytes).unwrap();
        assert_eq!(p.spec, q.spec);
        assert_eq!(p.values, q.values);
    }

    #[test]
    fn corrupt_models_are_rejected() {
        let spec = NetworkSpec::desk(2);
        let bytes = NetworkParams::zeros(&spec).to_bytes();
        assert!(matches!(
            NetworkParams::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(NetworkParams::from_bytes(&bad), Err(Error::Format(_))));
        let mut newer = bytes;
        newer[4] = 99;
        assert!(matches!(NetworkParams::from_bytes(&newer), Err(Error::Format(_))));
    }
}
