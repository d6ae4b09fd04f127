//! `synth`: run the synthetic lab and lay its outputs out exactly as an
//! external extractor would, so every other verb can consume them.
//!
//! ```text
//! out/
//!   lab.json            effective lab config
//!   scenes.jsonl        every generated scene
//!   oracle.jsonl        planted ground truth
//!   split.tsv           A / B / X manifest
//!   stores/*.emb        {model}_{view}_layer{L}_ep{E}.emb for every checkpoint and layer
//!   audit.toml          audit config pointing at the above
//! ```

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};

use dejavu_core::lab::experiment::{MODEL_A, MODEL_B};
use dejavu_core::lab::{run_lab, LabConfig, LabRun};
use dejavu_core::split::{ManifestRow, SetName, SplitManifest};

use crate::config::{AuditConfig, AxisValue, StoreLayout, SweepAxis, SweepSpec};
use crate::run::write_report_json;

pub const LAYERS: [u8; 2] = [0, 1];

/// Config fields left as written; `--seed` sets both the scene and training seeds.
pub fn apply_seed(config: &mut LabConfig, seed: Option<u64>) {
    if let Some(s) = seed {
        config.scenes.seed = s;
        config.train.seed = s;
    }
}

pub fn load_lab_config(path: Option<&Path>) -> Result<LabConfig> {
    match path {
        None => Ok(LabConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

pub fn manifest(run: &LabRun) -> SplitManifest {
    let mut rows = Vec::new();
    for (set, scenes) in [(SetName::A, &run.scenes.train_a), (SetName::B, &run.scenes.train_b), (SetName::X, &run.scenes.public)] {
        rows.extend(scenes.iter().map(|s| ManifestRow {
            example_id: s.example_id.clone(),
            set,
            class_label: s.class_label,
        }));
    }
    let n = |v: &Vec<_>| v.len();
    SplitManifest {
        seed: Some(run.config.scenes.seed),
        sizes: Some(format!("{},{},{}", n(&run.scenes.train_a), n(&run.scenes.train_b), n(&run.scenes.public))),
        rows,
    }
}

/// Audit config matching the written layout: the last checkpoint at the
/// output layer, with an epoch sweep over every checkpoint.
pub fn audit_config_for(run: &LabRun) -> AuditConfig {
    let epochs: Vec<usize> = run.model_a.checkpoints.iter().map(|c| c.epoch).collect();
    AuditConfig {
        seed: run.config.scenes.seed,
        output_dir: "audit-out".into(),
        stores: StoreLayout {
            dir: "stores".into(),
            split_manifest: "split.tsv".into(),
            target_model: MODEL_A.into(),
            reference_model: MODEL_B.into(),
            epoch: epochs.last().copied().unwrap_or(0) as u32,
            layer: 1,
            ..Default::default()
        },
        sweep: Some(SweepSpec { axis: SweepAxis::Epochs, values: epochs.iter().map(|&e| AxisValue::Int(e as i64)).collect() }),
        ..Default::default()
    }
}

pub fn write_lab(run: &LabRun, out: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut files = Vec::new();
    write_report_json(&run.config, &out.join("lab.json"))?;
    files.push("lab.json".to_string());
    run.scenes.write_scenes_jsonl(BufWriter::new(File::create(out.join("scenes.jsonl"))?))?;
    run.scenes.oracle.write_jsonl(BufWriter::new(File::create(out.join("oracle.jsonl"))?))?;
    files.extend(["scenes.jsonl".to_string(), "oracle.jsonl".to_string()]);
    manifest(run).write(BufWriter::new(File::create(out.join("split.tsv"))?))?;
    files.push("split.tsv".to_string());
    let stores = out.join("stores");
    for c in &run.model_a.checkpoints {
        for layer in LAYERS {
            for name in run.export_stores(&stores, c.epoch, layer)? {
                files.push(format!("stores/{name}"));
            }
        }
    }
    let audit = toml::to_string(&audit_config_for(run))?;
    std::fs::write(out.join("audit.toml"), audit)?;
    files.push("audit.toml".to_string());
    Ok(files)
}

pub fn run_synth(config: &LabConfig, out: &Path) -> Result<(LabRun, Vec<String>)> {
    let run = run_lab(config)?;
    let files = write_lab(&run, out)?;
    Ok((run, files))
}
