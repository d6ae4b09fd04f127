//! Exact L2 k-nearest-neighbor decoding against a labeled public set.
//!
//! Distances are screened in blocks with an f32 matrix product using
//! `‖q‖² − 2q·x + ‖x‖²`. Every row whose screened distance could, within the
//! rounding bound of that expansion, belong to the true top-k is then
//! rescored exactly in f64, so results match a naive full sort.

use std::collections::HashMap;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::EmbeddingSet;

pub const DEFAULT_K: usize = 100;

/// Queries per screening block.
const QUERY_BLOCK: usize = 16;
/// Public rows per screening block.
const ROW_BLOCK: usize = 4096;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KnnError {
    #[error("public set has unlabeled rows (first at row {0})")]
    UnlabeledPublicSet(usize),
    #[error("public set is empty")]
    EmptyPublicSet,
    #[error("query dim {query} does not match index dim {index}")]
    DimMismatch { query: usize, index: usize },
    #[error("k = {k} exceeds public set size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("query row {0} has no true label")]
    UnlabeledQuery(usize),
}

/// Immutable search structure over the embedded public set.
#[derive(Debug)]
pub struct KnnIndex {
    public: EmbeddingSet,
    norms: Vec<f64>,
    norms_f32: Vec<f32>,
    max_norm: f64,
    num_classes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub row: usize,
    pub sq_dist: f64,
}

/// Neighbors sorted ascending by distance, then by row index.
pub type NeighborList = Vec<Neighbor>;

pub fn build_index(public: EmbeddingSet) -> Result<KnnIndex, KnnError> {
    if public.is_empty() {
        return Err(KnnError::EmptyPublicSet);
    }
    if let Some(row) = public.labels().iter().position(|&l| l < 0) {
        return Err(KnnError::UnlabeledPublicSet(row));
    }
    let norms: Vec<f64> = (0..public.len()).map(|i| sq_norm(public.row(i))).collect();
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    let num_classes = public.labels().iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    Ok(KnnIndex {
        norms_f32: norms.iter().map(|&v| v as f32).collect(),
        public,
        norms,
        max_norm,
        num_classes,
    })
}

fn sq_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum()
}

/// Squared L2 distance accumulated in f64.
pub fn exact_sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

impl KnnIndex {
    pub fn public(&self) -> &EmbeddingSet {
        &self.public
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.public.len()
    }

    pub fn is_empty(&self) -> bool {
        self.public.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.public.dim()
    }

    fn check(&self, dim: usize, k: usize) -> Result<(), KnnError> {
        if dim != self.dim() {
            return Err(KnnError::DimMismatch { query: dim, index: self.dim() });
        }
        if k == 0 {
            return Err(KnnError::ZeroK);
        }
        if k > self.len() {
            return Err(KnnError::KTooLarge { k, n: self.len() });
        }
        Ok(())
    }

    pub fn query(&self, q: &[f32], k: usize) -> Result<NeighborList, KnnError> {
        self.check(q.len(), k)?;
        Ok(self.search_block(q, 1, k).pop().unwrap())
    }

    /// Neighbors for every row of a row-major `n × dim` query matrix, in row order.
    pub fn query_rows(&self, rows: &[f32], dim: usize, k: usize) -> Result<Vec<NeighborList>, KnnError> {
        self.check(dim, k)?;
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        Ok(rows
            .par_chunks(QUERY_BLOCK * dim)
            .flat_map_iter(|block| self.search_block(block, block.len() / dim, k))
            .collect())
    }

    pub fn query_set(&self, queries: &EmbeddingSet, k: usize) -> Result<Vec<NeighborList>, KnnError> {
        self.query_rows(queries.rows(), queries.dim(), k)
    }

    fn search_block(&self, block: &[f32], nq: usize, k: usize) -> Vec<NeighborList> {
        let dim = self.dim();
        let n = self.len();
        let q = ArrayView2::from_shape((nq, dim), block).expect("block shape");
        let x = ArrayView2::from_shape((n, dim), self.public.rows()).expect("public shape");
        let q_norms: Vec<f64> = block.chunks_exact(dim.max(1)).take(nq).map(sq_norm).collect();

        let mut approx = vec![vec![0f32; n]; nq];
        let mut gram = Array2::<f32>::zeros((nq, ROW_BLOCK.min(n)));
        for start in (0..n).step_by(ROW_BLOCK) {
            let end = (start + ROW_BLOCK).min(n);
            let xs = x.slice(ndarray::s![start..end, ..]);
            let mut g = gram.slice_mut(ndarray::s![.., ..end - start]);
            general_mat_mul(1.0, &q, &xs.t(), 0.0, &mut g);
            for (qi, dists) in approx.iter_mut().enumerate() {
                let qn = q_norms[qi] as f32;
                for (j, d) in dists[start..end].iter_mut().enumerate() {
                    *d = qn - 2.0 * g[[qi, j]] + self.norms_f32[start + j];
                }
            }
        }

        approx
            .into_iter()
            .enumerate()
            .map(|(qi, dists)| {
                let qrow = &block[qi * dim..(qi + 1) * dim];
                // Rounding bound of the f32 expansion for this query.
                let tol = (2.0 * dim as f64 + 8.0)
                    * f64::from(f32::EPSILON)
                    * (q_norms[qi] + self.max_norm)
                    + f64::from(f32::MIN_POSITIVE);
                let mut scratch = dists.clone();
                let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
                let cutoff = f64::from(*kth) + 2.0 * tol;
                let mut cands: Vec<Neighbor> = dists
                    .iter()
                    .enumerate()
                    .filter(|(_, &d)| f64::from(d) <= cutoff)
                    .map(|(row, _)| Neighbor { row, sq_dist: exact_sq_dist(qrow, self.public.row(row)) })
                    .collect();
                cands.sort_by(|a, b| a.sq_dist.total_cmp(&b.sq_dist).then(a.row.cmp(&b.row)));
                cands.truncate(k);
                cands
            })
            .collect()
    }

    pub fn label(&self, row: usize) -> i32 {
        self.public.labels()[row]
    }

    pub fn id(&self, row: usize) -> &str {
        &self.public.ids()[row]
    }
}

/// Per-example label inference result for one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub example_id: String,
    pub true_label: i32,
    pub predicted_label: i32,
    /// Neighbor label counts divided by k.
    pub probs: Vec<f64>,
    /// Negative entropy of `probs` (natural log); 0 for one-hot.
    pub confidence: f64,
    pub neighbor_ids: Vec<String>,
    pub neighbor_sq_dists: Vec<f64>,
}

impl InferenceRecord {
    pub fn is_correct(&self) -> bool {
        self.predicted_label == self.true_label
    }
}

/// `Σ p ln p` with `0 ln 0 = 0`.
pub fn negative_entropy(probs: &[f64]) -> f64 {
    probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum()
}

/// Majority vote over neighbor labels. Ties go to the class with the smaller
/// summed distance, then to the smaller class index.
fn vote(neighbors: &[Neighbor], index: &KnnIndex, num_classes: usize) -> (i32, Vec<f64>) {
    let mut counts = vec![0usize; num_classes];
    let mut dist_sum = vec![0f64; num_classes];
    for n in neighbors {
        let l = index.label(n.row) as usize;
        counts[l] += 1;
        dist_sum[l] += n.sq_dist;
    }
    let mut best = 0;
    for c in 1..num_classes {
        let better = counts[c] > counts[best] || (counts[c] == counts[best] && dist_sum[c] < dist_sum[best]);
        if better {
            best = c;
        }
    }
    let k = neighbors.len() as f64;
    (best as i32, counts.iter().map(|&c| c as f64 / k).collect())
}

fn record_from(
    index: &KnnIndex,
    neighbors: &[Neighbor],
    example_id: &str,
    true_label: i32,
    num_classes: usize,
) -> InferenceRecord {
    let (predicted_label, probs) = vote(neighbors, index, num_classes);
    InferenceRecord {
        example_id: example_id.to_string(),
        true_label,
        predicted_label,
        confidence: negative_entropy(&probs),
        probs,
        neighbor_ids: neighbors.iter().map(|n| index.id(n.row).to_string()).collect(),
        neighbor_sq_dists: neighbors.iter().map(|n| n.sq_dist).collect(),
    }
}

fn class_count(index: &KnnIndex, queries: &EmbeddingSet) -> Result<usize, KnnError> {
    if let Some(row) = queries.labels().iter().position(|&l| l < 0) {
        return Err(KnnError::UnlabeledQuery(row));
    }
    let q_max = queries.labels().iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    Ok(index.num_classes().max(q_max))
}

/// One record per query row, in query order.
pub fn infer(index: &KnnIndex, queries: &EmbeddingSet, k: usize) -> Result<Vec<InferenceRecord>, KnnError> {
    let num_classes = class_count(index, queries)?;
    let neighbors = index.query_set(queries, k)?;
    Ok(neighbors
        .par_iter()
        .enumerate()
        .map(|(i, nl)| record_from(index, nl, &queries.ids()[i], queries.labels()[i], num_classes))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KAccuracy {
    pub k: usize,
    pub accuracy: f64,
}

/// Label-inference accuracy for every k; neighbors are computed once at the
/// largest k and truncated, which matches per-k search under the tie-break.
pub fn sweep_k(index: &KnnIndex, queries: &EmbeddingSet, k_values: &[usize]) -> Result<Vec<KAccuracy>, KnnError> {
    let Some(&k_max) = k_values.iter().max() else {
        return Ok(Vec::new());
    };
    if k_values.contains(&0) {
        return Err(KnnError::ZeroK);
    }
    let num_classes = class_count(index, queries)?;
    let neighbors = index.query_set(queries, k_max)?;
    Ok(k_values
        .iter()
        .map(|&k| {
            let correct = neighbors
                .iter()
                .zip(queries.labels())
                .filter(|(nl, &label)| vote(&nl[..k], index, num_classes).0 == label)
                .count();
            let accuracy = if queries.is_empty() { 0.0 } else { correct as f64 / queries.len() as f64 };
            KAccuracy { k, accuracy }
        })
        .collect())
}

/// Id → row lookup for the public set.
pub fn public_id_index(index: &KnnIndex) -> HashMap<&str, usize> {
    index.public().id_index()
}
