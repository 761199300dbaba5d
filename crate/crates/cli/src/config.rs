//! Experiment configuration: TOML file plus flag overrides.

use anyhow::{bail, Context, Result};
use deepifsac::baselines::KnnConfig;
use deepifsac::missingness::MissingKind;
use deepifsac::model::{AttentionMode, ModelConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// On-disk experiment file. Unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub seed: Option<u64>,
    pub output_dir: Option<String>,
    pub parallelism: Option<usize>,
    pub methods: Option<Vec<String>>,
    pub kinds: Option<Vec<String>>,
    pub rates: Option<Vec<f64>>,
    #[serde(default)]
    pub datasets: Vec<DatasetEntry>,
    pub model: Option<ModelOverrides>,
    pub knn: Option<KnnOverrides>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    /// CSV path or `synthetic:ROWSxCOLS[xFACTORS][@SEED]`.
    pub source: String,
    /// Report identifier; defaults to one derived from the source.
    pub id: Option<String>,
    pub drop_column: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub embed_dim: Option<usize>,
    pub heads: Option<usize>,
    pub blocks: Option<usize>,
    pub dropout: Option<f64>,
    pub p_cutmix: Option<f64>,
    pub temperature: Option<f64>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub mode: Option<String>,
    pub lambda_contrastive: Option<f64>,
}

impl ModelOverrides {
    pub fn apply(&self, base: &mut ModelConfig) -> Result<()> {
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    base.$field = v;
                }
            };
        }
        set!(embed_dim);
        set!(heads);
        set!(blocks);
        set!(dropout);
        set!(p_cutmix);
        set!(temperature);
        set!(lr);
        set!(weight_decay);
        set!(batch_size);
        set!(epochs);
        set!(lambda_contrastive);
        if let Some(mode) = &self.mode {
            base.mode = mode
                .parse::<AttentionMode>()
                .with_context(|| format!("model.mode = '{mode}'"))?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ModelOverrides) {
        macro_rules! take {
            ($field:ident) => {
                if other.$field.is_some() {
                    self.$field = other.$field;
                }
            };
        }
        take!(embed_dim);
        take!(heads);
        take!(blocks);
        take!(dropout);
        take!(p_cutmix);
        take!(temperature);
        take!(lr);
        take!(weight_decay);
        take!(batch_size);
        take!(epochs);
        take!(lambda_contrastive);
        if other.mode.is_some() {
            self.mode = other.mode.clone();
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct KnnOverrides {
    pub k: Option<usize>,
}

pub fn read_experiment_file(path: &Path) -> Result<ExperimentFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let file: ExperimentFile = toml::from_str(&text).with_context(|| {
        format!("parsing config {} (unknown keys are rejected)", path.display())
    })?;
    Ok(file)
}

/// Fully resolved benchmark plan; this is what gets hashed into the manifest.
#[derive(Clone, Debug, Serialize)]
pub struct ResolvedExperiment {
    pub seed: u64,
    pub parallelism: usize,
    pub methods: Vec<String>,
    pub kinds: Vec<String>,
    pub rates: Vec<f64>,
    pub datasets: Vec<DatasetEntry>,
    pub model: ModelConfig,
    pub knn_k: usize,
}

impl ResolvedExperiment {
    pub fn parse_kinds(&self) -> Result<Vec<MissingKind>> {
        self.kinds
            .iter()
            .map(|k| k.parse::<MissingKind>().map_err(anyhow::Error::from))
            .collect()
    }

    pub fn knn_config(&self) -> KnnConfig {
        KnnConfig { k: self.knn_k }
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            bail!("no datasets configured: give [[datasets]] entries or --data");
        }
        if self.methods.is_empty() {
            bail!("no methods configured");
        }
        if self.rates.is_empty() || self.kinds.is_empty() {
            bail!("need at least one missing kind and rate");
        }
        for r in &self.rates {
            if !(*r > 0.0 && *r < 1.0) {
                bail!("rate {r} outside (0,1)");
            }
        }
        self.model.validate()?;
        Ok(())
    }
}
