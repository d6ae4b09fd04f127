//! Memorization metrics over paired target/reference inference records.
//!
//! Each model ranks the audited examples by its own KNN confidence. The
//! accuracy over its top p% is the curve value at p, and the déjà vu score at
//! p is target accuracy minus reference accuracy. The sample-level partition
//! classifies every example by which of the two models recovers its label.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knn::{InferenceRecord, KnnIndex};

/// Default confidence level for the headline score.
pub const DEFAULT_P: f64 = 20.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no inference records")]
    EmptyRecords,
    #[error("records are not aligned: {0}")]
    MisalignedRecords(String),
    #[error("percentile {0} outside (0, 100]")]
    BadPercentile(f64),
    #[error("reports cannot be averaged: {0}")]
    IncompatibleReports(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceCurve {
    /// Sorted, distinct values in (0, 100].
    pub percentiles: Vec<f64>,
    /// Top-p% accuracy for each percentile, same order.
    pub accuracy: Vec<f64>,
}

impl ConfidenceCurve {
    pub fn accuracy_at(&self, p: f64) -> Option<f64> {
        self.percentiles.iter().position(|&q| q == p).map(|i| self.accuracy[i])
    }
}

/// Number of examples in the top p% of `n`: `⌈p·n/100⌉`.
pub fn top_count(p: f64, n: usize) -> usize {
    ((p * n as f64 / 100.0).ceil() as usize).min(n)
}

fn check_percentile(p: f64) -> Result<(), MetricsError> {
    if p > 0.0 && p <= 100.0 {
        Ok(())
    } else {
        Err(MetricsError::BadPercentile(p))
    }
}

/// Records sorted by confidence (descending), ties broken by example id.
fn ranked(records: &[InferenceRecord]) -> Vec<&InferenceRecord> {
    let mut v: Vec<&InferenceRecord> = records.iter().collect();
    v.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.example_id.cmp(&b.example_id))
    });
    v
}

fn top_accuracy(ranked: &[&InferenceRecord], p: f64) -> f64 {
    let m = top_count(p, ranked.len());
    if m == 0 {
        return 0.0;
    }
    ranked[..m].iter().filter(|r| r.is_correct()).count() as f64 / m as f64
}

pub fn confidence_curve(records: &[InferenceRecord], percentiles: &[f64]) -> Result<ConfidenceCurve, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    let mut ps = percentiles.to_vec();
    for &p in &ps {
        check_percentile(p)?;
    }
    ps.sort_by(f64::total_cmp);
    ps.dedup();
    let order = ranked(records);
    let accuracy = ps.iter().map(|&p| top_accuracy(&order, p)).collect();
    Ok(ConfidenceCurve { percentiles: ps, accuracy })
}

fn check_aligned(target: &[InferenceRecord], reference: &[InferenceRecord]) -> Result<(), MetricsError> {
    if target.len() != reference.len() {
        return Err(MetricsError::MisalignedRecords(format!(
            "{} target records vs {} reference records",
            target.len(),
            reference.len()
        )));
    }
    let t: BTreeSet<&str> = target.iter().map(|r| r.example_id.as_str()).collect();
    let r: BTreeSet<&str> = reference.iter().map(|r| r.example_id.as_str()).collect();
    if t.len() != target.len() {
        return Err(MetricsError::MisalignedRecords("duplicate example id".into()));
    }
    if let Some(id) = t.symmetric_difference(&r).next() {
        return Err(MetricsError::MisalignedRecords(format!("example `{id}` is in only one record list")));
    }
    for (a, b) in pair_up(target, reference) {
        if a.true_label != b.true_label {
            return Err(MetricsError::MisalignedRecords(format!(
                "example `{}` has true label {} vs {}",
                a.example_id, a.true_label, b.true_label
            )));
        }
    }
    Ok(())
}

/// Pairs records by example id, in canonical id order.
fn pair_up<'a>(
    target: &'a [InferenceRecord],
    reference: &'a [InferenceRecord],
) -> Vec<(&'a InferenceRecord, &'a InferenceRecord)> {
    let by_id: HashMap<&str, &InferenceRecord> =
        reference.iter().map(|r| (r.example_id.as_str(), r)).collect();
    let mut pairs: Vec<_> = target
        .iter()
        .filter_map(|t| by_id.get(t.example_id.as_str()).map(|r| (t, *r)))
        .collect();
    pairs.sort_by(|a, b| a.0.example_id.cmp(&b.0.example_id));
    pairs
}

/// Target top-p% accuracy minus reference top-p% accuracy; each model ranks by
/// its own confidence.
pub fn dejavu_score(
    target: &[InferenceRecord],
    reference: &[InferenceRecord],
    p: f64,
) -> Result<f64, MetricsError> {
    check_percentile(p)?;
    if target.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    check_aligned(target, reference)?;
    Ok(top_accuracy(&ranked(target), p) - top_accuracy(&ranked(reference), p))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounts {
    /// Neither model recovers the label.
    pub unassociated: u64,
    /// Only the target model recovers it.
    pub memorized: u64,
    /// Only the reference model recovers it.
    pub misrepresented: u64,
    /// Both recover it.
    pub correlated: u64,
    pub total: u64,
}

/// Which of the four partition cells an example falls into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Unassociated,
    Memorized,
    Misrepresented,
    Correlated,
}

impl Category {
    pub fn of(target_correct: bool, reference_correct: bool) -> Self {
        match (target_correct, reference_correct) {
            (false, false) => Category::Unassociated,
            (true, false) => Category::Memorized,
            (false, true) => Category::Misrepresented,
            (true, true) => Category::Correlated,
        }
    }
}

/// Per-example categories in canonical id order.
pub fn categorize(
    target: &[InferenceRecord],
    reference: &[InferenceRecord],
) -> Result<Vec<(String, Category)>, MetricsError> {
    check_aligned(target, reference)?;
    Ok(pair_up(target, reference)
        .into_iter()
        .map(|(t, r)| (t.example_id.clone(), Category::of(t.is_correct(), r.is_correct())))
        .collect())
}

pub fn partition(target: &[InferenceRecord], reference: &[InferenceRecord]) -> Result<PartitionCounts, MetricsError> {
    let mut counts = PartitionCounts::default();
    for (_, cat) in categorize(target, reference)? {
        match cat {
            Category::Unassociated => counts.unassociated += 1,
            Category::Memorized => counts.memorized += 1,
            Category::Misrepresented => counts.misrepresented += 1,
            Category::Correlated => counts.correlated += 1,
        }
        counts.total += 1;
    }
    Ok(counts)
}

/// Partition counts as reals so that role-swapped reports can be averaged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub unassociated: f64,
    pub memorized: f64,
    pub misrepresented: f64,
    pub correlated: f64,
    pub total: f64,
}

impl From<PartitionCounts> for PartitionSummary {
    fn from(c: PartitionCounts) -> Self {
        Self {
            unassociated: c.unassociated as f64,
            memorized: c.memorized as f64,
            misrepresented: c.misrepresented as f64,
            correlated: c.correlated as f64,
            total: c.total as f64,
        }
    }
}

impl PartitionSummary {
    /// Fractions of the total, in the order unassociated, memorized,
    /// misrepresented, correlated.
    pub fn shares(&self) -> [f64; 4] {
        let t = if self.total > 0.0 { self.total } else { 1.0 };
        [
            self.unassociated / t,
            self.memorized / t,
            self.misrepresented / t,
            self.correlated / t,
        ]
    }

    fn mean(a: &Self, b: &Self) -> Self {
        Self {
            unassociated: mean2(a.unassociated, b.unassociated),
            memorized: mean2(a.memorized, b.memorized),
            misrepresented: mean2(a.misrepresented, b.misrepresented),
            correlated: mean2(a.correlated, b.correlated),
            total: mean2(a.total, b.total),
        }
    }
}

/// Commutative and idempotent in floating point.
fn mean2(a: f64, b: f64) -> f64 {
    if a == b {
        a
    } else {
        (a + b) / 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreAt {
    pub p: f64,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    /// Sorted model tags that acted as target.
    pub target_models: Vec<String>,
    /// Sorted model tags that acted as reference.
    pub reference_models: Vec<String>,
    pub k: usize,
    pub split_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DejaVuReport {
    pub curve_target: ConfidenceCurve,
    pub curve_reference: ConfidenceCurve,
    /// `curve_target − curve_reference` at every percentile.
    pub score_at_p: Vec<ScoreAt>,
    pub p_default: f64,
    pub score: f64,
    pub partition: PartitionSummary,
    pub metadata: ReportMetadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_probe: Option<ProbeSummary>,
}

impl DejaVuReport {
    /// Builds a single-direction report. `p_default` is added to the curve
    /// percentiles when missing.
    pub fn build(
        target: &[InferenceRecord],
        reference: &[InferenceRecord],
        percentiles: &[f64],
        p_default: f64,
        metadata: ReportMetadata,
    ) -> Result<Self, MetricsError> {
        check_aligned(target, reference)?;
        let mut ps = percentiles.to_vec();
        ps.push(p_default);
        let curve_target = confidence_curve(target, &ps)?;
        let curve_reference = confidence_curve(reference, &ps)?;
        let score_at_p: Vec<ScoreAt> = curve_target
            .percentiles
            .iter()
            .zip(curve_target.accuracy.iter().zip(&curve_reference.accuracy))
            .map(|(&p, (&t, &r))| ScoreAt { p, score: t - r })
            .collect();
        let score = score_at_p.iter().find(|s| s.p == p_default).map(|s| s.score).unwrap_or(0.0);
        Ok(Self {
            curve_target,
            curve_reference,
            score_at_p,
            p_default,
            score,
            partition: partition(target, reference)?.into(),
            metadata,
            linear_probe: None,
        })
    }

    pub fn score_at(&self, p: f64) -> Option<f64> {
        self.score_at_p.iter().find(|s| s.p == p).map(|s| s.score)
    }
}

fn union_sorted(a: &[String], b: &[String]) -> Vec<String> {
    a.iter().chain(b).cloned().collect::<BTreeSet<_>>().into_iter().collect()
}

fn mean_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| mean2(x, y)).collect()
}

/// Element-wise mean of two reports, normally the A→B and B→A directions.
pub fn role_swap_average(ab: &DejaVuReport, ba: &DejaVuReport) -> Result<DejaVuReport, MetricsError> {
    if ab.metadata.k != ba.metadata.k {
        return Err(MetricsError::IncompatibleReports(format!("k {} vs {}", ab.metadata.k, ba.metadata.k)));
    }
    if ab.curve_target.percentiles != ba.curve_target.percentiles
        || ab.curve_reference.percentiles != ba.curve_reference.percentiles
    {
        return Err(MetricsError::IncompatibleReports("percentile grids differ".into()));
    }
    if ab.p_default != ba.p_default {
        return Err(MetricsError::IncompatibleReports("default p differs".into()));
    }
    let curve = |a: &ConfidenceCurve, b: &ConfidenceCurve| ConfidenceCurve {
        percentiles: a.percentiles.clone(),
        accuracy: mean_vec(&a.accuracy, &b.accuracy),
    };
    let linear_probe = match (ab.linear_probe, ba.linear_probe) {
        (Some(x), Some(y)) => Some(ProbeSummary {
            train_accuracy: mean2(x.train_accuracy, y.train_accuracy),
            test_accuracy: mean2(x.test_accuracy, y.test_accuracy),
            gap: mean2(x.gap, y.gap),
        }),
        (x, y) => x.or(y).filter(|_| x == y),
    };
    let split_seed = if ab.metadata.split_seed == ba.metadata.split_seed { ab.metadata.split_seed } else { None };
    Ok(DejaVuReport {
        curve_target: curve(&ab.curve_target, &ba.curve_target),
        curve_reference: curve(&ab.curve_reference, &ba.curve_reference),
        score_at_p: ab
            .score_at_p
            .iter()
            .zip(&ba.score_at_p)
            .map(|(x, y)| ScoreAt { p: x.p, score: mean2(x.score, y.score) })
            .collect(),
        p_default: ab.p_default,
        score: mean2(ab.score, ba.score),
        partition: PartitionSummary::mean(&ab.partition, &ba.partition),
        metadata: ReportMetadata {
            target_models: union_sorted(&ab.metadata.target_models, &ba.metadata.target_models),
            reference_models: union_sorted(&ab.metadata.reference_models, &ba.metadata.reference_models),
            k: ab.metadata.k,
            split_seed,
        },
        linear_probe,
    })
}

/// Ranked example selection; `truncated` is set when fewer than the requested
/// number of examples were available.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub ids: Vec<String>,
    pub truncated: bool,
}

fn select_ranked(
    target: &[InferenceRecord],
    reference: &[InferenceRecord],
    n: usize,
    category: Category,
    key: impl Fn(&InferenceRecord, &InferenceRecord) -> f64,
) -> Result<Selection, MetricsError> {
    check_aligned(target, reference)?;
    let mut scored: Vec<(f64, &str)> = pair_up(target, reference)
        .into_iter()
        .filter(|(t, r)| Category::of(t.is_correct(), r.is_correct()) == category)
        .map(|(t, r)| (key(t, r), t.example_id.as_str()))
        .collect();
    scored.sort_by(|a, b| match b.0.total_cmp(&a.0) {
        Ordering::Equal => a.1.cmp(b.1),
        o => o,
    });
    let truncated = scored.len() < n;
    Ok(Selection { ids: scored.into_iter().take(n).map(|(_, id)| id.to_string()).collect(), truncated })
}

/// Memorized examples with the largest target-minus-reference confidence.
pub fn select_most_memorized(
    target: &[InferenceRecord],
    reference: &[InferenceRecord],
    n: usize,
) -> Result<Selection, MetricsError> {
    select_ranked(target, reference, n, Category::Memorized, |t, r| t.confidence - r.confidence)
}

/// Correlated examples with the largest minimum confidence of the two models.
pub fn select_most_correlated(
    target: &[InferenceRecord],
    reference: &[InferenceRecord],
    n: usize,
) -> Result<Selection, MetricsError> {
    select_ranked(target, reference, n, Category::Correlated, |t, r| t.confidence.min(r.confidence))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelEntry {
    pub public_id: String,
    pub label: i32,
    pub sq_dist: f64,
}

/// The first `m` neighbors of a record with their public labels, for display.
pub fn neighbor_panel(record: &InferenceRecord, index: &KnnIndex, m: usize) -> Vec<PanelEntry> {
    let rows = index.public().id_index();
    record
        .neighbor_ids
        .iter()
        .zip(&record.neighbor_sq_dists)
        .take(m)
        .map(|(id, &sq_dist)| PanelEntry {
            public_id: id.clone(),
            label: rows.get(id.as_str()).map(|&r| index.label(r)).unwrap_or(-1),
            sq_dist,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, truth: i32, pred: i32, conf: f64) -> InferenceRecord {
        InferenceRecord {
            example_id: id.into(),
            true_label: truth,
            predicted_label: pred,
            probs: vec![],
            confidence: conf,
            neighbor_ids: vec![],
            neighbor_sq_dists: vec![],
        }
    }

    fn meta() -> ReportMetadata {
        ReportMetadata { target_models: vec!["A".into()], reference_models: vec!["B".into()], k: 100, split_seed: Some(1) }
    }

    #[test]
    fn all_correct_curve() {
        let rs: Vec<_> = (0..7).map(|i| rec(&format!("e{i}"), 1, 1, -(i as f64))).collect();
        let c = confidence_curve(&rs, &[1.0, 50.0, 100.0]).unwrap();
        assert_eq!(c.accuracy, vec![1.0, 1.0, 1.0]);
        assert_eq!(confidence_curve(&[], &[20.0]).unwrap_err(), MetricsError::EmptyRecords);
    }

    #[test]
    fn top_three_confident_correct() {
        let mut rs = Vec::new();
        for i in 0..10 {
            let correct = i < 3;
            rs.push(rec(&format!("e{i}"), 0, if correct { 0 } else { 1 }, -(i as f64) * 0.1));
        }
        let c = confidence_curve(&rs, &[30.0, 100.0]).unwrap();
        assert_eq!(c.accuracy_at(30.0), Some(1.0));
        assert_eq!(c.accuracy_at(100.0), Some(0.3));
    }

    #[test]
    fn confidence_ties_break_by_id() {
        let rs = vec![rec("b", 0, 0, 0.0), rec("a", 0, 1, 0.0)];
        let c = confidence_curve(&rs, &[50.0]).unwrap();
        assert_eq!(c.accuracy, vec![0.0]);
    }

    #[test]
    fn score_examples() {
        // 20 records; top 20% = 4 records.
        let mut t = Vec::new();
        let mut r = Vec::new();
        for i in 0..20 {
            let id = format!("e{i:02}");
            t.push(rec(&id, 0, if i < 4 { 0 } else { 1 }, -(i as f64)));
            r.push(rec(&id, 0, if i == 0 { 0 } else { 1 }, -(i as f64)));
        }
        assert_eq!(dejavu_score(&t, &r, 20.0).unwrap(), 0.75);
        assert_eq!(dejavu_score(&t, &t, 20.0).unwrap(), 0.0);
        assert!(matches!(dejavu_score(&t, &r[1..], 20.0), Err(MetricsError::MisalignedRecords(_))));
        assert!(matches!(dejavu_score(&t, &r, 0.0), Err(MetricsError::BadPercentile(_))));
    }

    #[test]
    fn partition_truth_table() {
        let mut t = Vec::new();
        let mut r = Vec::new();
        // 20 examples: cycle through (tc, rc) patterns with known multiplicities.
        let pattern = [(true, true), (true, false), (true, false), (false, true), (false, false)];
        for i in 0..20 {
            let (tc, rc) = pattern[i % 5];
            let id = format!("x{i}");
            t.push(rec(&id, 2, if tc { 2 } else { 0 }, 0.0));
            r.push(rec(&id, 2, if rc { 2 } else { 0 }, 0.0));
        }
        let p = partition(&t, &r).unwrap();
        assert_eq!(
            p,
            PartitionCounts { unassociated: 4, memorized: 8, misrepresented: 4, correlated: 4, total: 20 }
        );
        let both: Vec<_> = (0..5).map(|i| rec(&format!("y{i}"), 0, 0, 0.0)).collect();
        assert_eq!(partition(&both, &both).unwrap().correlated, 5);
    }

    #[test]
    fn role_swap_arithmetic() {
        let t: Vec<_> = (0..10).map(|i| rec(&format!("e{i}"), 0, i % 2, -(i as f64))).collect();
        let r: Vec<_> = (0..10).map(|i| rec(&format!("e{i}"), 0, i % 3, -(i as f64))).collect();
        let mut a = DejaVuReport::build(&t, &r, &[10.0, 50.0], 20.0, meta()).unwrap();
        let mut b = a.clone();
        a.score = 0.10;
        b.score = 0.30;
        b.metadata.target_models = vec!["B".into()];
        b.metadata.reference_models = vec!["A".into()];
        let avg = role_swap_average(&a, &b).unwrap();
        assert!((avg.score - 0.20).abs() < 1e-15);
        assert_eq!(avg, role_swap_average(&b, &a).unwrap());
        assert_eq!(role_swap_average(&a, &a).unwrap(), a);
        assert_eq!(avg.metadata.target_models, vec!["A", "B"]);
        b.metadata.k = 50;
        assert!(matches!(role_swap_average(&a, &b), Err(MetricsError::IncompatibleReports(_))));
    }

    #[test]
    fn memorized_selection_order() {
        // Five memorized examples with gaps 0.5, 0.9, 0.1, 0.9, 0.3 plus one correlated.
        let gaps = [0.5, 0.9, 0.1, 0.9, 0.3];
        let mut t = Vec::new();
        let mut r = Vec::new();
        for (i, g) in gaps.iter().enumerate() {
            let id = format!("m{i}");
            t.push(rec(&id, 1, 1, -0.1));
            r.push(rec(&id, 1, 0, -0.1 - g));
        }
        t.push(rec("c", 1, 1, 0.0));
        r.push(rec("c", 1, 1, -5.0));
        let s = select_most_memorized(&t, &r, 4).unwrap();
        assert_eq!(s.ids, vec!["m1", "m3", "m0", "m4"]);
        assert!(!s.truncated);
        let s = select_most_memorized(&t, &r, 10).unwrap();
        assert_eq!(s.ids.len(), 5);
        assert!(s.truncated);
        let s = select_most_correlated(&t, &r, 3).unwrap();
        assert_eq!(s.ids, vec!["c"]);
        let none = select_most_memorized(&t[5..], &r[5..], 3).unwrap();
        assert!(none.ids.is_empty());
    }

    #[test]
    fn correlated_selection_uses_min_confidence() {
        let t = vec![rec("a", 0, 0, -0.1), rec("b", 0, 0, -0.5), rec("c", 0, 0, -0.2)];
        let r = vec![rec("a", 0, 0, -0.9), rec("b", 0, 0, -0.5), rec("c", 0, 0, -0.3)];
        let s = select_most_correlated(&t, &r, 3).unwrap();
        assert_eq!(s.ids, vec!["c", "b", "a"]);
    }

    #[test]
    fn top_count_rounds_up() {
        assert_eq!(top_count(20.0, 10), 2);
        assert_eq!(top_count(1.0, 10), 1);
        assert_eq!(top_count(100.0, 10), 10);
        assert_eq!(top_count(33.0, 10), 4);
    }
}
