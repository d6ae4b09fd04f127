//! Two-model audit: decode the periphery embeddings of one private set with
//! both models' public-set KNNs, build the report, then repeat with the roles
//! swapped and average.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knn::{build_index, infer, InferenceRecord, KnnError, KnnIndex};
use crate::metrics::{role_swap_average, DejaVuReport, MetricsError, ReportMetadata, DEFAULT_P};
use crate::probe::{probe_gap, train_probe, ProbeConfig, ProbeError};
use crate::store::EmbeddingSet;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("model `{model}` {view} embeddings lack {count} required ids (first: `{first}`)")]
    MissingIds { model: String, view: &'static str, count: usize, first: String },
    #[error("audited set is empty")]
    EmptyAuditSet,
    #[error(transparent)]
    Knn(#[from] KnnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

/// One model's embeddings: periphery crops of the private sets, and full
/// views of (at least) the public set.
#[derive(Clone, Debug)]
pub struct ModelEmbeddings {
    pub tag: String,
    pub periphery: EmbeddingSet,
    pub full: EmbeddingSet,
}

/// Which ids belong to the private sets and the public set.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditSets {
    pub set_a: Vec<String>,
    pub set_b: Vec<String>,
    pub set_x: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditParams {
    pub k: usize,
    pub percentiles: Vec<f64>,
    pub p: f64,
    pub normalize: bool,
    pub role_swap: bool,
    pub probe: Option<ProbeConfig>,
    pub split_seed: Option<u64>,
}

impl Default for AuditParams {
    fn default() -> Self {
        Self {
            k: crate::knn::DEFAULT_K,
            percentiles: default_percentiles(),
            p: DEFAULT_P,
            normalize: false,
            role_swap: true,
            probe: None,
            split_seed: None,
        }
    }
}

pub fn default_percentiles() -> Vec<f64> {
    vec![1.0, 2.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0]
}

#[derive(Clone, Debug)]
pub struct DirectionOutcome {
    pub target_records: Vec<InferenceRecord>,
    pub reference_records: Vec<InferenceRecord>,
    pub report: DejaVuReport,
}

#[derive(Clone, Debug)]
pub struct AuditOutcome {
    /// Target trained on A, audited on A.
    pub ab: DirectionOutcome,
    /// Target trained on B, audited on B.
    pub ba: Option<DirectionOutcome>,
    /// Role-swap average when both directions ran, else the A→B report.
    pub report: DejaVuReport,
}

fn pick(set: &EmbeddingSet, ids: &[String], model: &str, view: &'static str) -> Result<EmbeddingSet, PipelineError> {
    let index = set.id_index();
    let missing: Vec<&String> = ids.iter().filter(|id| !index.contains_key(id.as_str())).collect();
    if let Some(first) = missing.first() {
        return Err(PipelineError::MissingIds {
            model: model.to_string(),
            view,
            count: missing.len(),
            first: (*first).clone(),
        });
    }
    Ok(set.subset(ids))
}

fn prepared(set: EmbeddingSet, normalize: bool) -> EmbeddingSet {
    if normalize {
        set.l2_normalized()
    } else {
        set
    }
}

/// Public-set KNN index for one model.
pub fn model_index(model: &ModelEmbeddings, public_ids: &[String], normalize: bool) -> Result<KnnIndex, PipelineError> {
    let public = pick(&model.full, public_ids, &model.tag, "full")?;
    Ok(build_index(prepared(public, normalize))?)
}

/// Records for one model decoding the periphery crops of `audited`.
pub fn decode(
    model: &ModelEmbeddings,
    index: &KnnIndex,
    audited: &[String],
    k: usize,
    normalize: bool,
) -> Result<Vec<InferenceRecord>, PipelineError> {
    let queries = prepared(pick(&model.periphery, audited, &model.tag, "periphery")?, normalize);
    Ok(infer(index, &queries, k)?)
}

#[allow(clippy::too_many_arguments)]
fn direction(
    target: &ModelEmbeddings,
    target_index: &KnnIndex,
    reference: &ModelEmbeddings,
    reference_index: &KnnIndex,
    audited: &[String],
    held_out: &[String],
    params: &AuditParams,
) -> Result<DirectionOutcome, PipelineError> {
    if audited.is_empty() {
        return Err(PipelineError::EmptyAuditSet);
    }
    let target_records = decode(target, target_index, audited, params.k, params.normalize)?;
    let reference_records = decode(reference, reference_index, audited, params.k, params.normalize)?;
    let metadata = ReportMetadata {
        target_models: vec![target.tag.clone()],
        reference_models: vec![reference.tag.clone()],
        k: params.k,
        split_seed: params.split_seed,
    };
    let mut report =
        DejaVuReport::build(&target_records, &reference_records, &params.percentiles, params.p, metadata)?;
    if let Some(cfg) = &params.probe {
        let train = pick(&target.full, audited, &target.tag, "full")?;
        let test = pick(&target.full, held_out, &target.tag, "full")?;
        let model = train_probe(&train, cfg)?;
        report.linear_probe = Some(probe_gap(&model, &train, &test)?);
    }
    Ok(DirectionOutcome { target_records, reference_records, report })
}

/// Runs A→B and, when `role_swap` is set, B→A, averaging the two reports.
pub fn audit_pair(
    model_a: &ModelEmbeddings,
    model_b: &ModelEmbeddings,
    sets: &AuditSets,
    params: &AuditParams,
) -> Result<AuditOutcome, PipelineError> {
    let (index_a, index_b) = rayon::join(
        || model_index(model_a, &sets.set_x, params.normalize),
        || model_index(model_b, &sets.set_x, params.normalize),
    );
    let (index_a, index_b) = (index_a?, index_b?);
    let ab = direction(model_a, &index_a, model_b, &index_b, &sets.set_a, &sets.set_b, params)?;
    if !params.role_swap {
        let report = ab.report.clone();
        return Ok(AuditOutcome { ab, ba: None, report });
    }
    let ba = direction(model_b, &index_b, model_a, &index_a, &sets.set_b, &sets.set_a, params)?;
    let report = role_swap_average(&ab.report, &ba.report)?;
    Ok(AuditOutcome { ab, ba: Some(ba), report })
}
