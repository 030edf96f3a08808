use crate::error::{Error, Result};

/// Gallery indices in ascending distance order (ties by index) with their
/// Euclidean distances.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarSet {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl ExemplarSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.contains(&index)
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// The `size` gallery entries nearest to `query` by exact scan.
pub fn retrieve_exemplars<G: AsRef<[f64]>>(query: &[f64], gallery: &[G], size: usize) -> Result<ExemplarSet> {
    if gallery.is_empty() {
        return Err(Error::EmptyData("retrieval gallery is empty".into()));
    }
    if size > gallery.len() {
        return Err(Error::Argument(format!(
            "cannot retrieve {size} exemplars from a gallery of {}",
            gallery.len()
        )));
    }
    let mut scored = Vec::with_capacity(gallery.len());
    for (i, g) in gallery.iter().enumerate() {
        let g = g.as_ref();
        if g.len() != query.len() {
            return Err(Error::Shape(format!(
                "gallery descriptor {i} has width {}, query has {}",
                g.len(),
                query.len()
            )));
        }
        scored.push((euclidean(query, g), i));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.truncate(size);
    Ok(ExemplarSet {
        indices: scored.iter().map(|s| s.1).collect(),
        distances: scored.iter().map(|s| s.0).collect(),
    })
}

/// Mean fraction of each query's `k` nearest gallery entries that share its
/// scene id.
pub fn knn_matching_score<A: AsRef<[f64]>, B: AsRef<[f64]>>(
    queries: &[A],
    query_ids: &[u32],
    gallery: &[B],
    gallery_ids: &[u32],
    k: usize,
) -> Result<f64> {
    if queries.len() != query_ids.len() || gallery.len() != gallery_ids.len() {
        return Err(Error::Shape("every descriptor needs a scene id".into()));
    }
    if queries.is_empty() || k == 0 {
        return Err(Error::Argument("matching score needs queries and k >= 1".into()));
    }
    let mut genuine = 0usize;
    for (q, &id) in queries.iter().zip(query_ids) {
        let nn = retrieve_exemplars(q.as_ref(), gallery, k)?;
        genuine += nn.indices.iter().filter(|&&i| gallery_ids[i] == id).count();
    }
    Ok(genuine as f64 / (queries.len() * k) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_ranks_first() {
        let gallery = vec![vec![1.0, 1.0], vec![0.0, 3.0], vec![2.0, -1.0]];
        let s = retrieve_exemplars(&[0.0, 3.0], &gallery, 1).unwrap();
        assert_eq!(s.indices, vec![1]);
        assert_eq!(s.distances, vec![0.0]);
        let all = retrieve_exemplars(&[0.0, 0.0], &gallery, 3).unwrap();
        assert_eq!(all.indices, vec![0, 2, 1]);
        assert!(retrieve_exemplars(&[0.0, 0.0], &gallery, 4).is_err());
    }

    #[test]
    fn ties_go_to_the_lower_index() {
        let gallery = vec![vec![1.0], vec![-1.0], vec![1.0]];
        assert_eq!(retrieve_exemplars(&[0.0], &gallery, 3).unwrap().indices, vec![0, 1, 2]);
    }

    #[test]
    fn matching_score_arithmetic() {
        // query 0 has neighbors {same, other}; query 1 both same
        let gallery = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
        let ids = [0, 1, 1, 1];
        let s = knn_matching_score(&[vec![0.0], vec![10.0]], &[0, 1], &gallery, &ids, 2).unwrap();
        assert!((s - 0.75).abs() < 1e-15);
        let s = knn_matching_score(&[vec![10.0]], &[1], &gallery, &ids, 2).unwrap();
        assert_eq!(s, 1.0);
        let s = knn_matching_score(&[vec![10.0]], &[5], &gallery, &ids, 2).unwrap();
        assert_eq!(s, 0.0);
    }
}
