//! A small convolutional patch classifier written from scratch.
//!
//! A [`NetworkSpec`] is a sequence of valid (unpadded) convolutions,
//! rectifiers, max-pools and dense layers ending in a dense layer with one
//! output per class, followed by softmax. The input to that last layer is
//! the feature vector used by [`extract_features`].

mod features;
mod layers;
mod params;
mod train;

pub use features::{cell_center, extract_features, grid_dims, map_image, CellGrid, LocalBeliefMap, PixelFeatureMap};
pub use layers::{backward, backward_from_features, cross_entropy, forward, softmax, ForwardCache};
pub use params::{NetworkParams, ParamSet};
pub use train::{learning_rate, sgd_step, train, train_with_history, LossWeighting, TrainConfig};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Conv {
        kernel: usize,
        filters: usize,
        stride: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Dense {
        width: usize,
    },
}

impl Layer {
    fn has_params(&self) -> bool {
        matches!(self, Layer::Conv { .. } | Layer::Dense { .. })
    }
}

/// Shape of an activation: channels, height, width. Dense outputs are
/// `(width, 1, 1)`.
pub type Shape = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_side: usize,
    pub input_channels: usize,
    pub layers: Vec<Layer>,
}

impl NetworkSpec {
    pub fn new(input_side: usize, input_channels: usize, layers: Vec<Layer>) -> Result<Self> {
        let spec = Self {
            input_side,
            input_channels,
            layers,
        };
        spec.shapes()?;
        Ok(spec)
    }

    /// Desk-scale network: 17×17 patches, three conv/pool blocks, 16-wide
    /// features, cell stride 8.
    pub fn desk(classes: usize) -> Self {
        Self::three_block(17, [3, 2, 2], [8, 16, 16], 16, classes)
    }

    /// Larger approximation of the reference architecture: 65×65 patches,
    /// 64-wide features, cell stride 8.
    pub fn full(classes: usize) -> Self {
        Self::three_block(65, [5, 5, 5], [16, 32, 64], 64, classes)
    }

    pub fn preset(name: &str, classes: usize) -> Result<Self> {
        let spec = match name {
            "desk" => Self::desk(classes),
            "full" => Self::full(classes),
            other => {
                return Err(Error::Argument(format!(
                    "unknown network preset {other:?} (expected desk or full)"
                )))
            }
        };
        spec.shapes()?;
        Ok(spec)
    }

    fn three_block(side: usize, kernels: [usize; 3], filters: [usize; 3], feature: usize, classes: usize) -> Self {
        let mut layers = Vec::new();
        for (k, f) in kernels.into_iter().zip(filters) {
            layers.push(Layer::Conv {
                kernel: k,
                filters: f,
                stride: 1,
            });
            layers.push(Layer::Relu);
            layers.push(Layer::MaxPool { window: 2, stride: 2 });
        }
        layers.push(Layer::Dense { width: feature });
        layers.push(Layer::Relu);
        layers.push(Layer::Dense { width: classes });
        Self {
            input_side: side,
            input_channels: 3,
            layers,
        }
    }

    /// Activation shapes: entry 0 is the input, entry `i + 1` the output of
    /// layer `i`.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        if self.input_side == 0 || self.input_channels == 0 {
            return Err(Error::Shape("network input must be non-empty".into()));
        }
        match self.layers.last() {
            Some(Layer::Dense { .. }) => {}
            _ => return Err(Error::Shape("network must end with a dense layer".into())),
        }
        let mut shape = (self.input_channels, self.input_side, self.input_side);
        let mut out = vec![shape];
        for (i, layer) in self.layers.iter().enumerate() {
            let (c, h, w) = shape;
            shape = match *layer {
                Layer::Conv {
                    kernel,
                    filters,
                    stride,
                } => {
                    if kernel == 0 || filters == 0 || stride == 0 || kernel > h || kernel > w {
                        return Err(Error::Shape(format!(
                            "layer {i}: convolution does not fit a {h}x{w} input"
                        )));
                    }
                    (filters, (h - kernel) / stride + 1, (w - kernel) / stride + 1)
                }
                Layer::Relu => shape,
                Layer::MaxPool { window, stride } => {
                    if window == 0 || stride == 0 || window > h || window > w {
                        return Err(Error::Shape(format!("layer {i}: pooling does not fit a {h}x{w} input")));
                    }
                    (c, (h - window) / stride + 1, (w - window) / stride + 1)
                }
                Layer::Dense { width } => {
                    if width == 0 {
                        return Err(Error::Shape(format!("layer {i}: dense layer has zero width")));
                    }
                    (width, 1, 1)
                }
            };
            out.push(shape);
        }
        Ok(out)
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Dense { width }) => *width,
            _ => 0,
        }
    }

    /// Width of the input to the final dense layer.
    pub fn feature_dim(&self) -> usize {
        let shapes = self.shapes().expect("validated spec");
        let (c, h, w) = shapes[shapes.len() - 2];
        c * h * w
    }

    /// Product of all layer strides; 2^p for p stride-2 pools.
    pub fn cell_stride(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match *l {
                Layer::Conv { stride, .. } | Layer::MaxPool { stride, .. } => stride,
                _ => 1,
            })
            .product()
    }

    pub fn pool_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, Layer::MaxPool { .. }))
            .count()
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_side * self.input_side
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.u32(self.input_side as u32);
        w.u32(self.input_channels as u32);
        w.u32(self.layers.len() as u32);
        for layer in &self.layers {
            match *layer {
                Layer::Conv {
                    kernel,
                    filters,
                    stride,
                } => {
                    w.u8(0);
                    w.u32(kernel as u32);
                    w.u32(filters as u32);
                    w.u32(stride as u32);
                }
                Layer::Relu => w.u8(1),
                Layer::MaxPool { window, stride } => {
                    w.u8(2);
                    w.u32(window as u32);
                    w.u32(stride as u32);
                }
                Layer::Dense { width } => {
                    w.u8(3);
                    w.u32(width as u32);
                }
            }
        }
    }

    pub(crate) fn read(r: &mut Reader) -> Result<Self> {
        let input_side = r.u32()? as usize;
        let input_channels = r.u32()? as usize;
        let n = r.u32()? as usize;
        let mut layers = Vec::new();
        for _ in 0..n {
            let layer = match r.u8()? {
                0 => Layer::Conv {
                    kernel: r.u32()? as usize,
                    filters: r.u32()? as usize,
                    stride: r.u32()? as usize,
                },
                1 => Layer::Relu,
                2 => Layer::MaxPool {
                    window: r.u32()? as usize,
                    stride: r.u32()? as usize,
                },
                3 => Layer::Dense {
                    width: r.u32()? as usize,
                },
                t => return Err(Error::Format(format!("unknown layer tag {t}"))),
            };
            layers.push(layer);
        }
        Self::new(input_side, input_channels, layers).map_err(|e| Error::Format(format!("invalid network spec: {e}")))
    }
}
