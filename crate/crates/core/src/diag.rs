//! Cosine-similarity grids over update vectors and the token error rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::UpdateDelta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum GridSubject {
    ClientUpdates,
    PseudoGradients,
    CentralUpdates,
}

impl std::fmt::Display for GridSubject {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            GridSubject::ClientUpdates => "client_updates",
            GridSubject::PseudoGradients => "pseudo_gradients",
            GridSubject::CentralUpdates => "central_updates",
        };
        f.write_str(s)
    }
}

/// Square matrix of cosine similarities between update vectors.
///
/// Symmetric, unit diagonal for nonzero vectors, entries in [-1, 1].
/// Zero-norm vectors produce similarity 0 and are listed in
/// `zero_norm_indices` instead of poisoning the grid with NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGrid {
    pub labels: Vec<String>,
    /// Row-major `n x n`.
    pub values: Vec<f64>,
    pub layer_name: String,
    pub subject: GridSubject,
    pub zero_norm_indices: Vec<usize>,
}

impl SimilarityGrid {
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size() + j]
    }
}

/// Slice each update down to a layer (or keep the whole vector for
/// `"all"`), checking that all updates share a layout.
pub fn slice_updates(updates: &[UpdateDelta], layer: &str) -> Result<Vec<Vec<f64>>> {
    if updates.is_empty() {
        return Err(Error::EmptyInput("updates".into()));
    }
    let layout = &updates[0].layout;
    for u in updates {
        if u.layout.as_ref() != layout.as_ref() {
            return Err(Error::LayoutMismatch("similarity grid inputs".into()));
        }
    }
    if layer == "all" {
        return Ok(updates.iter().map(|u| u.values.clone()).collect());
    }
    let range = layout.range(layer)?;
    Ok(updates.iter().map(|u| u.values[range.clone()].to_vec()).collect())
}

/// Cosine-similarity grid over pre-sliced vectors.
pub fn similarity_grid(
    vectors: &[Vec<f64>],
    labels: Vec<String>,
    layer_name: &str,
    subject: GridSubject,
) -> Result<SimilarityGrid> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::InvalidConfig("similarity grid needs at least 2 vectors".into()));
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            context: "grid labels".into(),
            expected: n,
            got: labels.len(),
        });
    }
    let dim = vectors[0].len();
    for v in vectors {
        if v.len() != dim {
            return Err(Error::LayoutMismatch("similarity grid vector lengths".into()));
        }
    }
    let norms: Vec<f64> = vectors.iter().map(|v| crate::params::l2_norm(v)).collect();
    let zero_norm_indices: Vec<usize> =
        norms.iter().enumerate().filter(|(_, n)| **n == 0.0).map(|(i, _)| i).collect();

    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else if i == j {
                1.0
            } else {
                let dot: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
                dot / (norms[i] * norms[j])
            };
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
    }
    Ok(SimilarityGrid { labels, values, layer_name: layer_name.to_string(), subject, zero_norm_indices })
}

/// Grid over a chosen layer of full update vectors.
pub fn similarity_grid_over_layer(
    updates: &[UpdateDelta],
    layer: &str,
    labels: Vec<String>,
    subject: GridSubject,
) -> Result<SimilarityGrid> {
    let vectors = slice_updates(updates, layer)?;
    similarity_grid(&vectors, labels, layer, subject)
}

/// Arithmetic mean over the strictly off-diagonal entries.
pub fn mean_offdiag(grid: &SimilarityGrid) -> Result<f64> {
    let n = grid.size();
    if n < 2 {
        return Err(Error::InvalidConfig("mean_offdiag needs n >= 2".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += grid.at(i, j);
            }
        }
    }
    Ok(total / (n * (n - 1)) as f64)
}

/// Unit-cost edit distance.
pub fn levenshtein(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Token error rate: total edit distance over total reference length.
pub fn token_error_rate(hyps: &[Vec<usize>], refs: &[Vec<usize>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::DimensionMismatch {
            context: "token_error_rate lists".into(),
            expected: refs.len(),
            got: hyps.len(),
        });
    }
    let ref_total: usize = refs.iter().map(|r| r.len()).sum();
    if refs.is_empty() || ref_total == 0 {
        return Err(Error::EmptyInput("reference corpus".into()));
    }
    let dist: usize = hyps.iter().zip(refs).map(|(h, r)| levenshtein(h, r)).sum();
    Ok(dist as f64 / ref_total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_of(vs: &[Vec<f64>]) -> SimilarityGrid {
        let labels = (0..vs.len()).map(|i| i.to_string()).collect();
        similarity_grid(vs, labels, "all", GridSubject::ClientUpdates).unwrap()
    }

    #[test]
    fn identical_vectors_give_ones() {
        let g = grid_of(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]);
        assert!(g.values.iter().all(|v| (*v - 1.0).abs() < 1e-12));
        assert!((mean_offdiag(&g).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_pair_gives_zero_offdiag() {
        let g = grid_of(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(g.at(0, 1), 0.0);
        assert_eq!(g.at(0, 0), 1.0);
    }

    #[test]
    fn antipodal_pair_gives_minus_one() {
        let g = grid_of(&[vec![0.5, -1.0], vec![-0.5, 1.0]]);
        assert!((g.at(0, 1) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_vector_is_flagged_not_nan() {
        let g = grid_of(&[vec![0.0, 0.0], vec![1.0, 1.0]]);
        assert_eq!(g.zero_norm_indices, vec![0]);
        assert_eq!(g.at(0, 0), 0.0);
        assert_eq!(g.at(0, 1), 0.0);
        assert!(g.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mean_offdiag_matches_examples() {
        let g = SimilarityGrid {
            labels: vec!["a".into(), "b".into()],
            values: vec![1.0, 0.14, 0.14, 1.0],
            layer_name: "all".into(),
            subject: GridSubject::ClientUpdates,
            zero_norm_indices: vec![],
        };
        assert!((mean_offdiag(&g).unwrap() - 0.14).abs() < 1e-15);

        let mut balanced = vec![1.0; 9];
        // off-diagonals alternate +x/-x in a cancelling pattern
        let x = 0.37;
        balanced[1] = x;
        balanced[3] = x;
        balanced[2] = -x;
        balanced[6] = -x;
        balanced[5] = x;
        balanced[7] = x;
        let g3 = SimilarityGrid {
            labels: vec!["a".into(), "b".into(), "c".into()],
            values: balanced,
            layer_name: "all".into(),
            subject: GridSubject::CentralUpdates,
            zero_norm_indices: vec![],
        };
        assert!((mean_offdiag(&g3).unwrap() - x / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ter_examples() {
        assert_eq!(token_error_rate(&[vec![0, 1]], &[vec![0, 1]]).unwrap(), 0.0);
        let ter = token_error_rate(&[vec![0, 2]], &[vec![0, 1, 2]]).unwrap();
        assert!((ter - 1.0 / 3.0).abs() < 1e-15);
        let all_del = token_error_rate(&[vec![], vec![]], &[vec![0, 1], vec![2]]).unwrap();
        assert_eq!(all_del, 1.0);
        assert!(token_error_rate(&[], &[]).is_err());
    }

    #[test]
    fn levenshtein_hand_case() {
        assert_eq!(levenshtein(&[0, 2], &[0, 1, 2]), 1);
        assert_eq!(levenshtein(&[], &[1, 2, 3]), 3);
        assert_eq!(levenshtein(&[1, 2, 3], &[1, 2, 3]), 0);
    }

    #[test]
    fn grid_needs_two_vectors() {
        let labels = vec!["x".to_string()];
        assert!(similarity_grid(&[vec![1.0]], labels, "all", GridSubject::ClientUpdates).is_err());
    }
}
