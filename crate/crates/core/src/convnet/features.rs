use super::layers::{run_layers, softmax};
use super::NetworkParams;
use crate::data::{patch::extract_patch_chw, SceneImage};
use crate::error::{Error, Result};

/// Row-major grid of per-cell vectors laid over an image at a fixed stride.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub stride: usize,
    /// Size of the image the grid covers.
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// Per-cell feature vectors.
pub type PixelFeatureMap = CellGrid;
/// Per-cell class distributions.
pub type LocalBeliefMap = CellGrid;

impl CellGrid {
    pub fn new(height: usize, width: usize, stride: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        let (rows, cols) = grid_dims(height, width, stride)?;
        if values.len() != rows * cols * dim {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} grid of width {dim}",
                values.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            dim,
            stride,
            height,
            width,
            values,
        })
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn at(&self, row: usize, col: usize) -> &[f64] {
        self.cell(row * self.cols + col)
    }

    pub fn cell(&self, index: usize) -> &[f64] {
        &self.values[index * self.dim..(index + 1) * self.dim]
    }

    pub fn cell_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.values[index * self.dim..(index + 1) * self.dim]
    }

    pub fn iter_cells(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim.max(1))
    }

    /// Cell containing pixel `(row, col)`.
    pub fn cell_of_pixel(&self, row: usize, col: usize) -> usize {
        (row / self.stride).min(self.rows - 1) * self.cols + (col / self.stride).min(self.cols - 1)
    }
}

/// ⌈h/s⌉ × ⌈w/s⌉; the image must hold at least one full cell.
pub fn grid_dims(height: usize, width: usize, stride: usize) -> Result<(usize, usize)> {
    if stride == 0 || height < stride || width < stride {
        return Err(Error::Shape(format!(
            "a {height}x{width} image is smaller than one {stride}x{stride} cell"
        )));
    }
    Ok((height.div_ceil(stride), width.div_ceil(stride)))
}

/// Pixel at the center of cell index `i` along an axis of length `len`,
/// clamped for the partial cell at the far edge.
pub fn cell_center(i: usize, stride: usize, len: usize) -> usize {
    (i * stride + stride / 2).min(len - 1)
}

fn map_cells(params: &NetworkParams, image: &SceneImage, with_probs: bool) -> Result<(CellGrid, Option<CellGrid>)> {
    let spec = &params.spec;
    if spec.input_channels != 3 {
        return Err(Error::Shape("image networks take three-channel input".into()));
    }
    let stride = spec.cell_stride();
    let (h, w) = (image.height(), image.width());
    let (rows, cols) = grid_dims(h, w, stride)?;
    let shapes = spec.shapes()?;
    let depth = spec.layers.len();
    let upto = if with_probs { depth } else { depth - 1 };
    let d = spec.feature_dim();
    let k = spec.classes();
    let mut feats = Vec::with_capacity(rows * cols * d);
    let mut probs = Vec::with_capacity(if with_probs { rows * cols * k } else { 0 });
    let mut patch = vec![0.0; spec.input_len()];
    for r in 0..rows {
        for c in 0..cols {
            extract_patch_chw(
                image,
                (cell_center(r, stride, h), cell_center(c, stride, w)),
                spec.input_side,
                &mut patch,
            )?;
            let (acts, _) = run_layers(params, &shapes, &patch, upto);
            feats.extend_from_slice(&acts[depth - 1]);
            if with_probs {
                probs.extend(softmax(&acts[depth]));
            }
        }
    }
    let features = CellGrid::new(h, w, stride, d, feats)?;
    let beliefs = if with_probs {
        Some(CellGrid::new(h, w, stride, k, probs)?)
    } else {
        None
    };
    Ok((features, beliefs))
}

/// Feature vector of the patch centered on each cell.
pub fn extract_features(params: &NetworkParams, image: &SceneImage) -> Result<PixelFeatureMap> {
    Ok(map_cells(params, image, false)?.0)
}

/// Features and class distributions of every cell in one pass.
pub fn map_image(params: &NetworkParams, image: &SceneImage) -> Result<(PixelFeatureMap, LocalBeliefMap)> {
    let (f, p) = map_cells(params, image, true)?;
    Ok((f, p.expect("requested")))
}
