//! Linear probe: multinomial logistic regression on frozen embeddings, used
//! to report the train/test accuracy gap next to the déjà vu score.
//!
//! Features are standardized with train-set statistics. The objective is mean
//! cross-entropy plus `l2/2 · ‖W‖²` (bias unregularized), minimized by seeded
//! mini-batch gradient descent with a cosine-decayed step size.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::ProbeSummary;
use crate::store::EmbeddingSet;

#[derive(Debug, Error, PartialEq)]
pub enum ProbeError {
    #[error("training set needs at least two classes")]
    SingleClass,
    #[error("loss became non-finite at epoch {0}; lower the step size")]
    NonFiniteLoss(usize),
    #[error("embedding dim {got} does not match probe dim {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("row {0} is unlabeled")]
    Unlabeled(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub step_size: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 50, step_size: 0.5, l2: 1e-4, batch_size: 64, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    /// C × dim.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub feature_mean: Array1<f64>,
    pub feature_scale: Array1<f64>,
    pub config: ProbeConfig,
    /// Full-train-set objective before training and after each epoch.
    pub loss_history: Vec<f64>,
}

/// Row-wise softmax in place, numerically stabilized.
pub fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

/// Objective and its gradient with respect to `(weights, bias)`.
pub fn loss_and_grad(
    weights: &Array2<f64>,
    bias: &Array1<f64>,
    x: ArrayView2<f64>,
    y: &[usize],
    l2: f64,
) -> (f64, Array2<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let mut probs = x.dot(&weights.t()) + bias;
    softmax_rows(&mut probs);
    let mut loss = 0.0;
    for (i, &c) in y.iter().enumerate() {
        loss -= probs[[i, c]].max(f64::MIN_POSITIVE).ln();
        probs[[i, c]] -= 1.0;
    }
    loss = loss / n + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    let delta = probs / n;
    let grad_w = delta.t().dot(&x) + weights * l2;
    let grad_b = delta.sum_axis(Axis(0));
    (loss, grad_w, grad_b)
}

fn labels_of(set: &EmbeddingSet) -> Result<Vec<usize>, ProbeError> {
    set.labels()
        .iter()
        .enumerate()
        .map(|(i, &l)| if l < 0 { Err(ProbeError::Unlabeled(i)) } else { Ok(l as usize) })
        .collect()
}

fn as_matrix(set: &EmbeddingSet) -> Array2<f64> {
    Array2::from_shape_fn((set.len(), set.dim()), |(i, j)| f64::from(set.rows()[i * set.dim() + j]))
}

impl ProbeModel {
    fn standardize(&self, set: &EmbeddingSet) -> Result<Array2<f64>, ProbeError> {
        if set.dim() != self.weights.ncols() {
            return Err(ProbeError::DimMismatch { expected: self.weights.ncols(), got: set.dim() });
        }
        Ok((as_matrix(set) - &self.feature_mean) / &self.feature_scale)
    }

    /// Class probabilities, one row per example.
    pub fn predict_proba(&self, set: &EmbeddingSet) -> Result<Array2<f64>, ProbeError> {
        let x = self.standardize(set)?;
        let mut logits = x.dot(&self.weights.t()) + &self.bias;
        softmax_rows(&mut logits);
        Ok(logits)
    }

    /// Argmax class, smallest index on ties.
    pub fn predict(&self, set: &EmbeddingSet) -> Result<Vec<usize>, ProbeError> {
        let p = self.predict_proba(set)?;
        Ok(p.rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }

    pub fn accuracy(&self, set: &EmbeddingSet) -> Result<f64, ProbeError> {
        let labels = labels_of(set)?;
        if labels.is_empty() {
            return Ok(0.0);
        }
        let pred = self.predict(set)?;
        Ok(pred.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
    }
}

pub fn train_probe(train: &EmbeddingSet, config: &ProbeConfig) -> Result<ProbeModel, ProbeError> {
    let y = labels_of(train)?;
    let num_classes = y.iter().map(|&c| c + 1).max().unwrap_or(0);
    let distinct = y.iter().collect::<std::collections::BTreeSet<_>>().len();
    if distinct < 2 {
        return Err(ProbeError::SingleClass);
    }
    let raw = as_matrix(train);
    let mean = raw.mean_axis(Axis(0)).expect("non-empty");
    let scale = raw.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    let x = (raw - &mean) / &scale;

    let dim = train.dim();
    let mut model = ProbeModel {
        weights: Array2::zeros((num_classes, dim)),
        bias: Array1::zeros(num_classes),
        feature_mean: mean,
        feature_scale: scale,
        config: config.clone(),
        loss_history: Vec::with_capacity(config.epochs + 1),
    };
    let full_loss = |m: &ProbeModel| loss_and_grad(&m.weights, &m.bias, x.view(), &y, config.l2).0;
    model.loss_history.push(full_loss(&model));

    let n = y.len();
    let batch = config.batch_size.clamp(1, n);
    let steps_per_epoch = n.div_ceil(batch);
    let total_steps = (config.epochs * steps_per_epoch).max(1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let xb = x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let (_, gw, gb) = loss_and_grad(&model.weights, &model.bias, xb.view(), &yb, config.l2);
            let lr = config.step_size * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps).cos());
            model.weights.scaled_add(-lr, &gw);
            model.bias.scaled_add(-lr, &gb);
            step += 1;
        }
        let loss = full_loss(&model);
        if !loss.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
            return Err(ProbeError::NonFiniteLoss(epoch));
        }
        model.loss_history.push(loss);
    }
    Ok(model)
}

/// Train accuracy, test accuracy, and their difference.
pub fn probe_gap(model: &ProbeModel, train: &EmbeddingSet, test: &EmbeddingSet) -> Result<ProbeSummary, ProbeError> {
    let train_accuracy = model.accuracy(train)?;
    let test_accuracy = model.accuracy(test)?;
    Ok(ProbeSummary { train_accuracy, test_accuracy, gap: train_accuracy - test_accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{EmbeddingMeta, ViewKind};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn make_set(rows: Vec<f32>, labels: Vec<i32>, dim: usize) -> EmbeddingSet {
        let n = labels.len();
        EmbeddingSet::new(dim, rows, (0..n).map(|i| format!("r{i}")).collect(), labels, EmbeddingMeta::new("p", 0, 0, ViewKind::Full))
            .unwrap()
    }

    fn blobs(n_per: usize, sep: f32, shift: f32, seed: u64) -> EmbeddingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            let center = if c == 0 { -sep } else { sep };
            for _ in 0..n_per {
                let a: f32 = StandardNormal.sample(&mut rng);
                let b: f32 = StandardNormal.sample(&mut rng);
                rows.extend([center + 0.3 * a + shift, 0.3 * b]);
                labels.push(c);
            }
        }
        make_set(rows, labels, 2)
    }

    #[test]
    fn separable_blobs() {
        let train = blobs(100, 2.0, 0.0, 1);
        let model = train_probe(&train, &ProbeConfig::default()).unwrap();
        assert!(model.accuracy(&train).unwrap() >= 0.99);
        assert!(model.loss_history.last().unwrap() <= &model.loss_history[0]);
        let same = probe_gap(&model, &train, &train).unwrap();
        assert_eq!(same.gap, 0.0);
        // Shifting the test distribution toward the other class hurts test accuracy.
        let shifted = blobs(100, 2.0, 2.5, 2);
        let g = probe_gap(&model, &train, &shifted).unwrap();
        assert!(g.gap > 0.0, "{g:?}");
    }

    #[test]
    fn shuffled_labels_are_at_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dim = 8;
        let gen = |n: usize, rng: &mut ChaCha8Rng| {
            let rows: Vec<f32> = (0..n * dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
            let labels: Vec<i32> = (0..n).map(|_| rng.random_range(0..10)).collect();
            make_set(rows, labels, dim)
        };
        let train = gen(500, &mut rng);
        let test = gen(2000, &mut rng);
        let model = train_probe(&train, &ProbeConfig::default()).unwrap();
        let acc = model.accuracy(&test).unwrap();
        assert!((acc - 0.1).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn zero_epochs_predicts_uniformly() {
        let train = blobs(50, 1.0, 0.0, 3);
        let cfg = ProbeConfig { epochs: 0, ..Default::default() };
        let model = train_probe(&train, &cfg).unwrap();
        let p = model.predict_proba(&train).unwrap();
        assert!(p.iter().all(|&v| (v - 0.5).abs() < 1e-12));
        assert!((model.accuracy(&train).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (c, d, n) = (5, 8, 12);
        let w = Array2::from_shape_fn((c, d), |_| rng.random_range(-1.0..1.0));
        let b = Array1::from_shape_fn(c, |_| rng.random_range(-1.0..1.0));
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let y: Vec<usize> = (0..n).map(|i| i % c).collect();
        let (_, gw, gb) = loss_and_grad(&w, &b, x.view(), &y, 0.05);
        let h = 1e-5;
        let f = |w: &Array2<f64>, b: &Array1<f64>| loss_and_grad(w, b, x.view(), &y, 0.05).0;
        for i in 0..c {
            for j in 0..d {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp[[i, j]] += h;
                wm[[i, j]] -= h;
                let num = (f(&wp, &b) - f(&wm, &b)) / (2.0 * h);
                assert!((num - gw[[i, j]]).abs() <= 1e-4 * num.abs().max(1e-3), "w[{i},{j}]");
            }
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[i] += h;
            bm[i] -= h;
            let num = (f(&w, &bp) - f(&w, &bm)) / (2.0 * h);
            assert!((num - gb[i]).abs() <= 1e-4 * num.abs().max(1e-3), "b[{i}]");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let train = blobs(40, 1.0, 0.0, 6);
        let a = train_probe(&train, &ProbeConfig::default()).unwrap();
        let b = train_probe(&train, &ProbeConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors() {
        let one = make_set(vec![1.0, 2.0], vec![3, 3], 1);
        assert_eq!(train_probe(&one, &ProbeConfig::default()).unwrap_err(), ProbeError::SingleClass);
        let train = blobs(20, 1.0, 0.0, 4);
        let diverge = ProbeConfig { step_size: 1e300, l2: 1.0, ..Default::default() };
        assert!(matches!(train_probe(&train, &diverge), Err(ProbeError::NonFiniteLoss(_))));
        let model = train_probe(&train, &ProbeConfig::default()).unwrap();
        let wrong = make_set(vec![1.0; 3], vec![0], 3);
        assert!(matches!(model.accuracy(&wrong), Err(ProbeError::DimMismatch { .. })));
    }
}
