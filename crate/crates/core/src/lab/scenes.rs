//! Synthetic background + object scenes with a planted memorization ledger.
//!
//! Every scene pairs an object vector, drawn around its class centroid, with
//! a background vector. With probability `correlation` the background comes
//! from a class-specific pool (any model trained on similar data can read the
//! class off it); otherwise it is a fresh draw unique to the scene and carries
//! no class signal, so only a model trained on that scene can associate it
//! with the object.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::split::SetName;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("training loss became non-finite at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("no checkpoint at epoch {0}")]
    MissingCheckpoint(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error(transparent)]
    Pipeline(#[from] crate::pipeline::PipelineError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub num_classes: usize,
    /// Scenes per class in each private training set.
    pub scenes_per_class: usize,
    /// Scenes per class in the public set.
    pub public_per_class: usize,
    pub background_dim: usize,
    pub object_dim: usize,
    /// Probability that a scene draws its background from its class pool.
    pub correlation: f64,
    pub background_jitter: f64,
    pub object_jitter: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            scenes_per_class: 40,
            public_per_class: 300,
            background_dim: 32,
            object_dim: 16,
            correlation: 0.0,
            background_jitter: 0.3,
            object_jitter: 0.5,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), LabError> {
        let bad = |m: &str| Err(LabError::InvalidConfig(m.to_string()));
        if self.num_classes < 2 {
            return bad("need at least two classes");
        }
        if self.background_dim == 0 || self.object_dim == 0 {
            return bad("background_dim and object_dim must be at least 1");
        }
        if self.scenes_per_class == 0 || self.public_per_class == 0 {
            return bad("scenes_per_class and public_per_class must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return bad("correlation must lie in [0, 1]");
        }
        if !(self.background_jitter > 0.0 && self.object_jitter > 0.0) {
            return bad("jitters must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundKind {
    /// Drawn from the class pool; recoverable through correlation.
    ClassPool,
    /// Drawn fresh for this scene; recoverable only by memorization.
    Unique,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub example_id: String,
    pub class_label: u32,
    pub background: Vec<f64>,
    pub object: Vec<f64>,
}

impl Scene {
    pub fn input_dim(&self) -> usize {
        self.background.len() + self.object.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub example_id: String,
    pub class_label: u32,
    pub set: SetName,
    pub background: BackgroundKind,
}

/// Ground truth for every generated scene.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MemorizationOracle {
    pub num_classes: usize,
    pub entries: Vec<OracleEntry>,
}

impl MemorizationOracle {
    pub fn entries_in(&self, set: SetName) -> impl Iterator<Item = &OracleEntry> {
        self.entries.iter().filter(move |e| e.set == set)
    }

    /// Ids of scenes in `set` whose background is unique.
    pub fn planted_unique(&self, set: SetName) -> Vec<&str> {
        self.entries_in(set)
            .filter(|e| e.background == BackgroundKind::Unique)
            .map(|e| e.example_id.as_str())
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), LabError> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R, num_classes: usize) -> Result<Self, LabError> {
        let mut entries = Vec::new();
        for line in r.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                entries.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { num_classes, entries })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSet {
    pub config: SceneConfig,
    pub train_a: Vec<Scene>,
    pub train_b: Vec<Scene>,
    pub public: Vec<Scene>,
    pub oracle: MemorizationOracle,
    /// Class object centroids, one per class.
    pub object_centroids: Vec<Vec<f64>>,
    /// Class background-pool centroids, one per class.
    pub background_centroids: Vec<Vec<f64>>,
}

impl SceneSet {
    pub fn all(&self) -> impl Iterator<Item = &Scene> {
        self.train_a.iter().chain(&self.train_b).chain(&self.public)
    }

    pub fn write_scenes_jsonl<W: Write>(&self, mut w: W) -> Result<(), LabError> {
        for s in self.all() {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

pub fn generate_scenes(config: &SceneConfig) -> Result<SceneSet, LabError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let object_centroids: Vec<Vec<f64>> =
        (0..config.num_classes).map(|_| gaussian(&mut rng, config.object_dim, 1.0)).collect();
    let background_centroids: Vec<Vec<f64>> =
        (0..config.num_classes).map(|_| gaussian(&mut rng, config.background_dim, 1.0)).collect();

    let mut oracle = MemorizationOracle { num_classes: config.num_classes, entries: Vec::new() };
    let mut make_set = |set: SetName, prefix: &str, per_class: usize, rng: &mut ChaCha8Rng| {
        let mut scenes = Vec::with_capacity(per_class * config.num_classes);
        for i in 0..per_class * config.num_classes {
            let class = i % config.num_classes;
            let pooled = rng.random_bool(config.correlation);
            let background = if pooled {
                let mut b = gaussian(rng, config.background_dim, config.background_jitter);
                b.iter_mut().zip(&background_centroids[class]).for_each(|(v, c)| *v += c);
                b
            } else {
                gaussian(rng, config.background_dim, 1.0)
            };
            let mut object = gaussian(rng, config.object_dim, config.object_jitter);
            object.iter_mut().zip(&object_centroids[class]).for_each(|(v, c)| *v += c);
            let example_id = format!("{prefix}{i:06}");
            oracle.entries.push(OracleEntry {
                example_id: example_id.clone(),
                class_label: class as u32,
                set,
                background: if pooled { BackgroundKind::ClassPool } else { BackgroundKind::Unique },
            });
            scenes.push(Scene { example_id, class_label: class as u32, background, object });
        }
        scenes
    };
    let train_a = make_set(SetName::A, "a", config.scenes_per_class, &mut rng);
    let train_b = make_set(SetName::B, "b", config.scenes_per_class, &mut rng);
    let public = make_set(SetName::X, "x", config.public_per_class, &mut rng);
    Ok(SceneSet {
        config: config.clone(),
        train_a,
        train_b,
        public,
        oracle,
        object_centroids,
        background_centroids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_bytes() {
        let cfg = SceneConfig { scenes_per_class: 3, public_per_class: 4, ..Default::default() };
        let a = generate_scenes(&cfg).unwrap();
        let b = generate_scenes(&cfg).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_scenes_jsonl(&mut ba).unwrap();
        b.write_scenes_jsonl(&mut bb).unwrap();
        assert_eq!(ba, bb);
        let other = generate_scenes(&SceneConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(other.train_a, a.train_a);
    }

    #[test]
    fn oracle_marks_backgrounds() {
        let mut cfg = SceneConfig { scenes_per_class: 5, public_per_class: 5, correlation: 1.0, ..Default::default() };
        let s = generate_scenes(&cfg).unwrap();
        assert!(s.oracle.entries.iter().all(|e| e.background == BackgroundKind::ClassPool));
        cfg.correlation = 0.0;
        let s = generate_scenes(&cfg).unwrap();
        assert_eq!(s.oracle.planted_unique(SetName::A).len(), 50);
        assert_eq!(s.oracle.entries.len(), 50 + 50 + 50);
        let mut buf = Vec::new();
        s.oracle.write_jsonl(&mut buf).unwrap();
        let back = MemorizationOracle::read_jsonl(buf.as_slice(), 10).unwrap();
        assert_eq!(back, s.oracle);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SceneConfig { num_classes: 1, ..Default::default() },
            SceneConfig { correlation: 1.5, ..Default::default() },
            SceneConfig { object_jitter: 0.0, ..Default::default() },
            SceneConfig { background_dim: 0, ..Default::default() },
        ] {
            assert!(matches!(generate_scenes(&cfg), Err(LabError::InvalidConfig(_))));
        }
    }
}
