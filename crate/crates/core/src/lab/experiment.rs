//! End-to-end lab run: generate scenes, train one encoder per private set,
//! embed background and full views, and audit the pair.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encoder::{embed_views, train_toy, SceneView, ToyEncoder, TrainConfig};
use super::scenes::{generate_scenes, LabError, Scene, SceneConfig, SceneSet};
use crate::pipeline::{audit_pair, AuditOutcome, AuditParams, AuditSets, ModelEmbeddings};
use crate::split::SetName;
use crate::store::{write_store, EmbeddingMeta};

pub const MODEL_A: &str = "modelA";
pub const MODEL_B: &str = "modelB";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabConfig {
    pub scenes: SceneConfig,
    /// Model B trains with `train.seed + 1`.
    pub train: TrainConfig,
}

#[derive(Clone, Debug)]
pub struct LabRun {
    pub config: LabConfig,
    pub scenes: SceneSet,
    pub model_a: ToyEncoder,
    pub model_b: ToyEncoder,
}

pub fn run_lab(config: &LabConfig) -> Result<LabRun, LabError> {
    let scenes = generate_scenes(&config.scenes)?;
    let cfg_b = TrainConfig { seed: config.train.seed.wrapping_add(1), ..config.train.clone() };
    let (a, b) = rayon::join(|| train_toy(&scenes.train_a, &config.train), || train_toy(&scenes.train_b, &cfg_b));
    Ok(LabRun { config: config.clone(), scenes, model_a: a?, model_b: b? })
}

impl LabRun {
    pub fn sets(&self) -> AuditSets {
        let ids = |s: &[Scene]| s.iter().map(|s| s.example_id.clone()).collect::<Vec<_>>();
        AuditSets { set_a: ids(&self.scenes.train_a), set_b: ids(&self.scenes.train_b), set_x: ids(&self.scenes.public) }
    }

    fn encoder(&self, which: SetName) -> (&ToyEncoder, &'static str) {
        match which {
            SetName::B => (&self.model_b, MODEL_B),
            _ => (&self.model_a, MODEL_A),
        }
    }

    /// Background views of both private sets and full views of every scene.
    pub fn model_embeddings(&self, which: SetName, epoch: usize, layer: u8) -> Result<ModelEmbeddings, LabError> {
        let (enc, tag) = self.encoder(which);
        let params = enc.checkpoint(epoch)?;
        let meta = EmbeddingMeta::new(tag, layer, epoch as u32, SceneView::Full.view_kind());
        let private: Vec<Scene> = self.scenes.train_a.iter().chain(&self.scenes.train_b).cloned().collect();
        let all: Vec<Scene> = self.scenes.all().cloned().collect();
        Ok(ModelEmbeddings {
            tag: tag.to_string(),
            periphery: embed_views(params, &private, SceneView::Background, layer, meta.clone()),
            full: embed_views(params, &all, SceneView::Full, layer, meta),
        })
    }

    pub fn audit(&self, epoch: usize, layer: u8, params: &AuditParams) -> Result<AuditOutcome, LabError> {
        let a = self.model_embeddings(SetName::A, epoch, layer)?;
        let b = self.model_embeddings(SetName::B, epoch, layer)?;
        Ok(audit_pair(&a, &b, &self.sets(), params)?)
    }

    /// Writes both models' stores for one (epoch, layer) under `dir`.
    pub fn export_stores(&self, dir: &Path, epoch: usize, layer: u8) -> Result<Vec<String>, LabError> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for which in [SetName::A, SetName::B] {
            let m = self.model_embeddings(which, epoch, layer)?;
            for set in [&m.periphery, &m.full] {
                let name = set.meta().file_name();
                write_store(set, dir.join(&name))?;
                written.push(name);
            }
        }
        Ok(written)
    }
}
