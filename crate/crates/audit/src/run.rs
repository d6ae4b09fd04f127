//! Audit and sweep drivers: load stores named by the config, run the
//! two-model pipeline, and write JSON and CSV outputs.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use dejavu_core::knn::InferenceRecord;
use dejavu_core::metrics::{categorize, select_most_correlated, select_most_memorized, Category, DejaVuReport, Selection};
use dejavu_core::pipeline::{audit_pair, AuditOutcome, AuditParams, AuditSets, DirectionOutcome, ModelEmbeddings};
use dejavu_core::split::{SetName, SplitManifest};
use dejavu_core::store::read_store;

use crate::config::{AuditConfig, AxisValue, Resolved, SweepAxis};
use crate::CliError;

/// How many examples the report lists per selection.
pub const SELECTION_SIZE: usize = 10;

pub struct AuditInputs {
    pub sets: AuditSets,
    pub target: ModelEmbeddings,
    pub reference: ModelEmbeddings,
    pub split_seed: Option<u64>,
}

pub fn load_inputs(config: &AuditConfig, base: &Path) -> Result<AuditInputs> {
    config.check()?;
    let paths = Resolved::new(config, base);
    paths.validate()?;
    let manifest = SplitManifest::read(BufReader::new(File::open(&paths.split_manifest)?))
        .with_context(|| format!("reading split manifest {}", paths.split_manifest.display()))?;
    let ids = |set| manifest.ids(set).into_iter().map(String::from).collect::<Vec<_>>();
    let sets = AuditSets { set_a: ids(SetName::A), set_b: ids(SetName::B), set_x: ids(SetName::X) };
    let load = |p: &PathBuf| read_store(p).with_context(|| format!("reading store {}", p.display()));
    let target = ModelEmbeddings {
        tag: config.stores.target_model.clone(),
        periphery: load(&paths.target_query)?,
        full: load(&paths.target_public)?,
    };
    let reference = ModelEmbeddings {
        tag: config.stores.reference_model.clone(),
        periphery: load(&paths.reference_query)?,
        full: load(&paths.reference_public)?,
    };
    Ok(AuditInputs { sets, target, reference, split_seed: manifest.seed })
}

pub fn audit_params(config: &AuditConfig, split_seed: Option<u64>) -> AuditParams {
    AuditParams {
        k: config.k,
        percentiles: config.percentiles.clone(),
        p: config.p,
        normalize: config.normalize,
        role_swap: config.role_swap,
        probe: config.probe_config(),
        split_seed,
    }
}

pub struct AuditRun {
    pub config: AuditConfig,
    pub outcome: AuditOutcome,
}

pub fn run_audit(config: &AuditConfig, base: &Path) -> Result<AuditRun> {
    let inputs = load_inputs(config, base)?;
    let params = audit_params(config, inputs.split_seed);
    let outcome = audit_pair(&inputs.target, &inputs.reference, &inputs.sets, &params)?;
    Ok(AuditRun { config: config.clone(), outcome })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionSummary {
    pub target: String,
    pub reference: String,
    pub audited_set: String,
    pub report: DejaVuReport,
    pub most_memorized: Selection,
    pub most_correlated: Selection,
}

/// Everything written to `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    /// Effective config after CLI overrides.
    pub config: AuditConfig,
    pub report: DejaVuReport,
    pub directions: Vec<DirectionSummary>,
}

fn summarize(d: &DirectionOutcome, audited_set: &str) -> Result<DirectionSummary> {
    Ok(DirectionSummary {
        target: d.report.metadata.target_models.join("+"),
        reference: d.report.metadata.reference_models.join("+"),
        audited_set: audited_set.to_string(),
        report: d.report.clone(),
        most_memorized: select_most_memorized(&d.target_records, &d.reference_records, SELECTION_SIZE)?,
        most_correlated: select_most_correlated(&d.target_records, &d.reference_records, SELECTION_SIZE)?,
    })
}

impl AuditRun {
    pub fn document(&self) -> Result<ReportDocument> {
        let mut directions = vec![summarize(&self.outcome.ab, "A")?];
        if let Some(ba) = &self.outcome.ba {
            directions.push(summarize(ba, "B")?);
        }
        Ok(ReportDocument { config: self.config.clone(), report: self.outcome.report.clone(), directions })
    }
}

/// One per-example row of `records.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub audited_set: String,
    pub example_id: String,
    pub true_label: i32,
    pub target_predicted: i32,
    pub target_confidence: f64,
    pub reference_predicted: i32,
    pub reference_confidence: f64,
    pub category: Category,
}

fn by_id(recs: &[InferenceRecord]) -> HashMap<&str, &InferenceRecord> {
    recs.iter().map(|r| (r.example_id.as_str(), r)).collect()
}

pub fn record_rows(audited_set: &str, target: &[InferenceRecord], reference: &[InferenceRecord]) -> Result<Vec<RecordRow>> {
    let cats = categorize(target, reference)?;
    let (t, r) = (by_id(target), by_id(reference));
    Ok(cats
        .into_iter()
        .map(|(id, category)| {
            let (tr, rr) = (t[id.as_str()], r[id.as_str()]);
            RecordRow {
                audited_set: audited_set.to_string(),
                true_label: tr.true_label,
                target_predicted: tr.predicted_label,
                target_confidence: tr.confidence,
                reference_predicted: rr.predicted_label,
                reference_confidence: rr.confidence,
                category,
                example_id: id,
            }
        })
        .collect())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json`, `records.csv` and the plots; returns the file names.
pub fn write_audit(run: &AuditRun, out_dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let doc = run.document()?;
    write_json(&doc, &out_dir.join("report.json"))?;
    let mut rows = record_rows("A", &run.outcome.ab.target_records, &run.outcome.ab.reference_records)?;
    if let Some(ba) = &run.outcome.ba {
        rows.extend(record_rows("B", &ba.target_records, &ba.reference_records)?);
    }
    write_csv(&rows, &out_dir.join("records.csv"))?;
    let mut files = vec!["report.json".to_string(), "records.csv".to_string()];
    files.extend(crate::plot::render_report(Some(&doc), None, out_dir)?.files);
    Ok(files)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Missing,
    Failed,
}

impl CellStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Missing => "missing",
            CellStatus::Failed => "failed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: AxisValue,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<DejaVuReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepDocument {
    pub config: AuditConfig,
    pub axis: SweepAxis,
    /// Set when at least one cell has no result.
    pub partial: bool,
    pub cells: Vec<SweepCell>,
}

/// One observation of the tidy sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub metric: String,
    pub estimate: Option<f64>,
    pub status: String,
}

fn run_cell(config: &AuditConfig, base: &Path, axis: SweepAxis, value: &AxisValue) -> SweepCell {
    let fail = |status, error: String| SweepCell { value: value.clone(), status, error: Some(error), report: None };
    let cell_config = match config.for_axis_value(axis, value) {
        Ok(c) => c,
        Err(e) => return fail(CellStatus::Failed, e.to_string()),
    };
    if let Err(CliError::MissingInput { role, path }) = Resolved::new(&cell_config, base).validate() {
        let e = CliError::MissingAxisInput { axis: axis.as_str(), value: value.to_string(), role, path };
        return fail(CellStatus::Missing, e.to_string());
    }
    match run_audit(&cell_config, base) {
        Ok(run) => SweepCell { value: value.clone(), status: CellStatus::Ok, error: None, report: Some(run.outcome.report) },
        Err(e) => fail(CellStatus::Failed, format!("{e:#}")),
    }
}

/// Audits every axis value in parallel. Cells that cannot run are kept with
/// their error and the document is marked partial.
pub fn run_sweep(config: &AuditConfig, base: &Path) -> Result<SweepDocument> {
    config.check()?;
    let spec = config.sweep.clone().ok_or(CliError::NoSweep)?;
    if spec.values.is_empty() {
        return Err(CliError::InvalidConfig("sweep.values is empty".into()).into());
    }
    let cells: Vec<SweepCell> = spec.values.par_iter().map(|v| run_cell(config, base, spec.axis, v)).collect();
    if cells.iter().all(|c| c.status != CellStatus::Ok) {
        let first = cells[0].error.clone().unwrap_or_default();
        return Err(CliError::AllCellsFailed(first).into());
    }
    let partial = cells.iter().any(|c| c.status != CellStatus::Ok);
    Ok(SweepDocument { config: config.clone(), axis: spec.axis, partial, cells })
}

fn metric_values(report: &DejaVuReport) -> Vec<(&'static str, f64)> {
    let at = |c: &dejavu_core::metrics::ConfidenceCurve| c.accuracy_at(report.p_default).unwrap_or(f64::NAN);
    let shares = report.partition.shares();
    let mut v = vec![
        ("dejavu_score", report.score),
        ("target_accuracy", at(&report.curve_target)),
        ("reference_accuracy", at(&report.curve_reference)),
        ("unassociated_share", shares[0]),
        ("memorized_share", shares[1]),
        ("misrepresented_share", shares[2]),
        ("correlated_share", shares[3]),
    ];
    if let Some(p) = report.linear_probe {
        v.extend([
            ("probe_train_accuracy", p.train_accuracy),
            ("probe_test_accuracy", p.test_accuracy),
            ("probe_gap", p.gap),
        ]);
    }
    v
}

pub fn sweep_rows(doc: &SweepDocument) -> Vec<SweepRow> {
    let names: Vec<&str> = doc
        .cells
        .iter()
        .find_map(|c| c.report.as_ref())
        .map(|r| metric_values(r).into_iter().map(|(n, _)| n).collect())
        .unwrap_or_default();
    let mut rows = Vec::new();
    for cell in &doc.cells {
        let values = cell.report.as_ref().map(metric_values).unwrap_or_default();
        for name in &names {
            rows.push(SweepRow {
                axis: doc.axis.as_str().to_string(),
                value: cell.value.to_string(),
                metric: name.to_string(),
                estimate: values.iter().find(|(n, _)| n == name).map(|&(_, v)| v),
                status: cell.status.as_str().to_string(),
            });
        }
    }
    rows
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = r.deserialize().collect::<Result<Vec<SweepRow>, _>>();
    rows.with_context(|| format!("parsing {}", path.display()))
}

/// Writes `sweep.csv`, `sweep.json` and the plots; returns the file names.
pub fn write_sweep(doc: &SweepDocument, out_dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let rows = sweep_rows(doc);
    write_csv(&rows, &out_dir.join("sweep.csv"))?;
    write_json(doc, &out_dir.join("sweep.json"))?;
    let mut files = vec!["sweep.csv".to_string(), "sweep.json".to_string()];
    files.extend(crate::plot::render_report(None, Some(&rows), out_dir)?.files);
    Ok(files)
}

pub fn write_report_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_json(value, path)
}
