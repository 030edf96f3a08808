//! Non-parametric global belief: pyramid-pooled scene descriptors,
//! exemplar retrieval, and kernel-weighted label transfer from the cells of
//! the retrieved training images.

mod belief;
mod index;
mod pyramid;
mod retrieval;

pub use belief::{
    build_transfer_set, global_belief, global_belief_map, similarity, uniform_belief_map, GlobalBeliefMap,
    KernelParams, TransferPixel, TransferSet,
};
pub use index::{cell_labels, IndexedImage, RetrievalConfig, TransferIndex};
pub use pyramid::{color_histogram, pool_global_feature, GlobalFeature, PyramidConfig};
pub use retrieval::{knn_matching_score, retrieve_exemplars, ExemplarSet};

/// Normalized height of cell row `row` in a grid of `rows` rows.
pub fn cell_height(row: usize, rows: usize) -> f64 {
    (row as f64 + 0.5) / rows as f64
}
