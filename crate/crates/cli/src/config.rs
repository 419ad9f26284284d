//! Run configuration files.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::Context;
use gcgnet::baselines::{FusionConfig, LinearConfig};
use gcgnet::checkpoint::ModelSpec;
use gcgnet::data::{load_csv, synth_generate, Dataset, MaskSpec, SynthSpec};
use gcgnet::model::{ModelConfig, Variant};
use gcgnet::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Raised for malformed configs and bad arguments; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub data: DataSection,
    #[serde(default = "default_model")]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub experiment: Experiment,
}

/// Either `csv` or `synth` must be given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub endo: Vec<String>,
    #[serde(default)]
    pub exo: Vec<String>,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    /// Stride of training windows; evaluation always uses stride 1.
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub synth_seed: u64,
    pub synth: Option<SynthSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    /// Overrides the model's ablation variant.
    pub variant: Option<Variant>,
    /// Train and evaluate with future exogenous inputs.
    pub future_exo: bool,
    /// Extra test evaluations, each `kind:ratio:seed`.
    pub masks: Vec<String>,
    /// Report metrics in the original data units instead of standardized ones.
    pub original_units: bool,
}

impl Default for Experiment {
    fn default() -> Self {
        Self {
            variant: None,
            future_exo: true,
            masks: Vec::new(),
            original_units: false,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

fn default_model() -> ModelSpec {
    ModelSpec::Gcgnet(ModelConfig::default())
}

fn default_split() -> [f64; 3] {
    [0.7, 0.1, 0.2]
}

fn default_stride() -> usize {
    1
}

fn default_true() -> bool {
    true
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn write_toml<T: Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    let text = toml::to_string(value).context("cannot serialize config")?;
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn anchor(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Reads a config; relative paths inside it are taken from its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let mut cfg: Self = read_toml(path)?;
        let base = std::path::absolute(path)?
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        cfg.output_dir = anchor(&base, &cfg.output_dir);
        if let Some(csv) = &cfg.data.csv {
            cfg.data.csv = Some(anchor(&base, csv));
        }
        Ok(cfg)
    }

    pub fn masks(&self) -> anyhow::Result<Vec<MaskSpec>> {
        self.experiment
            .masks
            .iter()
            .map(|m| m.parse().map_err(anyhow::Error::from))
            .collect()
    }

    /// Loads the data and fills the model's channel counts and experiment
    /// overrides into the model section.
    pub fn resolve(&mut self) -> anyhow::Result<Dataset> {
        let ds = self.data.load()?;
        if self.data.stride == 0 {
            return Err(usage("data.stride must be ≥ 1"));
        }
        self.masks()?;
        let (n, d) = (ds.n_endo(), ds.n_exo());
        let exp = &self.experiment;
        match &mut self.model {
            ModelSpec::Gcgnet(c) => {
                c.n_endo = n;
                c.n_exo = d;
                c.future_exo_available = exp.future_exo;
                if let Some(v) = exp.variant {
                    c.variant = v;
                }
            }
            ModelSpec::Linear(LinearConfig { n_endo, n_exo, .. }) | ModelSpec::Fusion(FusionConfig { n_endo, n_exo, .. }) => {
                *n_endo = n;
                *n_exo = d;
                if exp.variant.is_some_and(|v| v != Variant::Full) {
                    return Err(usage("ablation variants apply only to the gcgnet model"));
                }
            }
        }
        Ok(ds)
    }
}

impl DataSection {
    pub fn load(&self) -> anyhow::Result<Dataset> {
        match (&self.csv, &self.synth) {
            (Some(path), None) => {
                if self.endo.is_empty() {
                    return Err(usage("data.endo must name at least one column"));
                }
                Ok(load_csv(path, &self.endo, &self.exo)?)
            }
            (None, Some(spec)) => {
                let ds = synth_generate(spec, self.synth_seed)?.dataset;
                let names_match = (self.endo.is_empty() || self.endo == ds.endo_names)
                    && (self.exo.is_empty() || self.exo == ds.exo_names);
                if !names_match {
                    return Err(usage(format!(
                        "synthetic data has columns {:?} + {:?}",
                        ds.endo_names, ds.exo_names
                    )));
                }
                Ok(ds)
            }
            _ => Err(usage("data needs exactly one of `csv` or `synth`")),
        }
    }
}
