//! Declarative audit configuration (TOML), with CLI overrides applied on top.
//!
//! Store files are found by name: `{dir}/{model}_{view}_layer{L}_ep{E}.emb`.
//! `dir` and `split_manifest` may contain `{value}`, which the dataset-size
//! and hyperparameter sweeps replace with each axis value.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use dejavu_core::knn::DEFAULT_K;
use dejavu_core::metrics::DEFAULT_P;
use dejavu_core::pipeline::default_percentiles;
use dejavu_core::probe::ProbeConfig;
use dejavu_core::store::{store_file_name, ViewKind};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// Feeds the linear probe; recorded in the report.
    pub seed: u64,
    pub k: usize,
    pub p: f64,
    pub percentiles: Vec<f64>,
    pub normalize: bool,
    pub role_swap: bool,
    pub output_dir: String,
    pub stores: StoreLayout,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSettings>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k: DEFAULT_K,
            p: DEFAULT_P,
            percentiles: default_percentiles(),
            normalize: false,
            role_swap: true,
            output_dir: "audit-out".into(),
            stores: StoreLayout::default(),
            probe: None,
            sweep: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreLayout {
    pub dir: String,
    pub split_manifest: String,
    pub target_model: String,
    pub reference_model: String,
    pub query_view: ViewKind,
    pub public_view: ViewKind,
    pub epoch: u32,
    pub layer: u8,
}

impl Default for StoreLayout {
    fn default() -> Self {
        Self {
            dir: "stores".into(),
            split_manifest: "split.tsv".into(),
            target_model: "modelA".into(),
            reference_model: "modelB".into(),
            query_view: ViewKind::Periphery,
            public_view: ViewKind::Full,
            epoch: 0,
            layer: 0,
        }
    }
}

/// Probe hyperparameters; the seed comes from the top-level config seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSettings {
    pub epochs: usize,
    pub step_size: f64,
    pub l2: f64,
    pub batch_size: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        let d = ProbeConfig::default();
        Self { epochs: d.epochs, step_size: d.step_size, l2: d.l2, batch_size: d.batch_size }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Epochs,
    DatasetSize,
    K,
    Layer,
    Hyperparam,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Epochs => "epochs",
            SweepAxis::DatasetSize => "dataset_size",
            SweepAxis::K => "k",
            SweepAxis::Layer => "layer",
            SweepAxis::Hyperparam => "hyperparam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "epochs" | "epoch" => SweepAxis::Epochs,
            "dataset_size" | "dataset-size" => SweepAxis::DatasetSize,
            "k" => SweepAxis::K,
            "layer" => SweepAxis::Layer,
            "hyperparam" => SweepAxis::Hyperparam,
            _ => return None,
        })
    }

    /// Axes whose values are substituted into the store paths.
    pub fn uses_template(self) -> bool {
        matches!(self, SweepAxis::DatasetSize | SweepAxis::Hyperparam)
    }
}

/// An axis value as written in the config: integer, real, or text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Int(i64),
    Real(f64),
    Text(String),
}

impl fmt::Display for AxisValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisValue::Int(v) => write!(f, "{v}"),
            AxisValue::Real(v) => write!(f, "{v}"),
            AxisValue::Text(v) => f.write_str(v),
        }
    }
}

impl AxisValue {
    /// Integers stay integers so `50` and `"50"` render the same.
    pub fn parse(s: &str) -> Self {
        if let Ok(v) = s.parse() {
            AxisValue::Int(v)
        } else if let Ok(v) = s.parse() {
            AxisValue::Real(v)
        } else {
            AxisValue::Text(s.to_string())
        }
    }

    fn as_uint(&self, axis: SweepAxis) -> Result<u64, CliError> {
        match self {
            AxisValue::Int(v) if *v >= 0 => Ok(*v as u64),
            _ => Err(CliError::InvalidConfig(format!("{} values must be non-negative integers, got `{self}`", axis.as_str()))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<AxisValue>,
}

/// Command-line overrides; `None` keeps the file value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub k: Option<usize>,
    pub p: Option<f64>,
    pub seed: Option<u64>,
    pub normalize: bool,
    pub output_dir: Option<String>,
    pub epoch: Option<u32>,
    pub layer: Option<u8>,
}

impl AuditConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(k) = o.k {
            self.k = k;
        }
        if let Some(p) = o.p {
            self.p = p;
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        self.normalize |= o.normalize;
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
        if let Some(e) = o.epoch {
            self.stores.epoch = e;
        }
        if let Some(l) = o.layer {
            self.stores.layer = l;
        }
    }

    pub fn probe_config(&self) -> Option<ProbeConfig> {
        self.probe.as_ref().map(|p| ProbeConfig {
            epochs: p.epochs,
            step_size: p.step_size,
            l2: p.l2,
            batch_size: p.batch_size,
            seed: self.seed,
        })
    }

    /// Checks scalar fields; file existence is checked by [`Resolved::validate`].
    pub fn check(&self) -> Result<(), CliError> {
        if self.k == 0 {
            return Err(CliError::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.p > 0.0 && self.p <= 100.0) {
            return Err(CliError::InvalidConfig(format!("p must lie in (0, 100], got {}", self.p)));
        }
        if let Some(bad) = self.percentiles.iter().find(|&&q| !(q > 0.0 && q <= 100.0)) {
            return Err(CliError::InvalidConfig(format!("percentile {bad} outside (0, 100]")));
        }
        if self.stores.layer > 3 {
            return Err(CliError::InvalidConfig("layer must be in 0..=3".into()));
        }
        Ok(())
    }

    /// The config for one sweep cell.
    pub fn for_axis_value(&self, axis: SweepAxis, value: &AxisValue) -> Result<Self, CliError> {
        let mut c = self.clone();
        c.sweep = None;
        match axis {
            SweepAxis::Epochs => c.stores.epoch = u32::try_from(value.as_uint(axis)?).map_err(|_| too_big(axis))?,
            SweepAxis::Layer => c.stores.layer = u8::try_from(value.as_uint(axis)?).map_err(|_| too_big(axis))?,
            SweepAxis::K => c.k = value.as_uint(axis)? as usize,
            SweepAxis::DatasetSize | SweepAxis::Hyperparam => {
                if !self.stores.dir.contains("{value}") && !self.stores.split_manifest.contains("{value}") {
                    return Err(CliError::InvalidConfig(format!(
                        "the {} axis needs `{{value}}` in stores.dir or stores.split_manifest",
                        axis.as_str()
                    )));
                }
                let v = value.to_string();
                c.stores.dir = c.stores.dir.replace("{value}", &v);
                c.stores.split_manifest = c.stores.split_manifest.replace("{value}", &v);
            }
        }
        c.check()?;
        Ok(c)
    }
}

fn too_big(axis: SweepAxis) -> CliError {
    CliError::InvalidConfig(format!("{} value out of range", axis.as_str()))
}

/// Concrete input paths for one audit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Resolved {
    pub split_manifest: PathBuf,
    pub target_query: PathBuf,
    pub target_public: PathBuf,
    pub reference_query: PathBuf,
    pub reference_public: PathBuf,
}

impl Resolved {
    /// Relative paths are taken from `base`, normally the config file's directory.
    pub fn new(config: &AuditConfig, base: &Path) -> Self {
        let s = &config.stores;
        let dir = base.join(&s.dir);
        let file = |model: &str, view: ViewKind| dir.join(store_file_name(model, view, s.layer, s.epoch));
        Self {
            split_manifest: base.join(&s.split_manifest),
            target_query: file(&s.target_model, s.query_view),
            target_public: file(&s.target_model, s.public_view),
            reference_query: file(&s.reference_model, s.query_view),
            reference_public: file(&s.reference_model, s.public_view),
        }
    }

    pub fn all(&self) -> [(&'static str, &Path); 5] {
        [
            ("split manifest", self.split_manifest.as_path()),
            ("target query store", self.target_query.as_path()),
            ("target public store", self.target_public.as_path()),
            ("reference query store", self.reference_query.as_path()),
            ("reference public store", self.reference_public.as_path()),
        ]
    }

    /// Every referenced file must exist.
    pub fn validate(&self) -> Result<(), CliError> {
        for (role, path) in self.all() {
            if !path.is_file() {
                return Err(CliError::MissingInput { role, path: path.to_path_buf() });
            }
        }
        Ok(())
    }
}
