//! Run configuration: a TOML file with `dataset`, `hierarchy`, `model`,
//! `train`, `synth` and `output` sections, patched by `--set` overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use dhan_core::data::{SampleMode, SamplingOptions, SubsampleMode};
use dhan_core::{HierarchySpec, ModelConfig, SynthConfig, TrainConfig, Variant};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub hierarchy: HierarchySection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub synth: SynthSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Label written into metrics rows.
    pub name: String,
    /// Raw review lines; read by `prepare`.
    pub reviews: Option<PathBuf>,
    /// Raw item metadata lines; read by `prepare`.
    pub metadata: Option<PathBuf>,
    /// Directory holding `train.tsv`, `test.tsv` and `vocab.tsv`; defaults
    /// to the output directory.
    pub prepared: Option<PathBuf>,
    pub mode: SampleMode,
    pub t_max: usize,
    pub neg_ratio: usize,
    /// Categories with at most this many items are dropped; 0 keeps all.
    pub min_category_items: usize,
    pub subsample: f64,
    pub subsample_mode: SubsampleMode,
    pub test_fraction: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let sampling = SamplingOptions::default();
        DatasetSection {
            name: "synth".into(),
            reviews: None,
            metadata: None,
            prepared: None,
            mode: SampleMode::Din,
            t_max: sampling.t_max,
            neg_ratio: sampling.neg_ratio,
            min_category_items: 0,
            subsample: 1.0,
            subsample_mode: SubsampleMode::Events,
            test_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchySection {
    pub dimensions: Vec<dhan_core::Dimension>,
}

impl Default for HierarchySection {
    fn default() -> Self {
        HierarchySection {
            dimensions: ModelConfig::default().hierarchy.dimensions,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub variant: Variant,
    pub embedding_dim: usize,
    pub attention_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub attr_embedding: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            variant: m.variant,
            embedding_dim: m.embedding_dim,
            attention_hidden: m.attention_hidden,
            head_hidden: m.head_hidden,
            attr_embedding: m.attr_embedding,
        }
    }
}

/// Synthetic corpus shape; the seed comes from `--seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub users: usize,
    pub items_per_category: usize,
    pub categories: usize,
    pub history_len: usize,
    pub signal_strength: f64,
    pub brands_per_category: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        SynthSection {
            users: s.users,
            items_per_category: s.items_per_category,
            categories: s.categories,
            history_len: s.history_len,
            signal_strength: s.signal_strength,
            brands_per_category: s.brands_per_category,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies `section.key=value` overrides and
    /// deserializes, rejecting unknown sections and keys.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e| anyhow::anyhow!("invalid configuration: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            bail!("dataset.test_fraction must be in (0, 1)");
        }
        if !(d.subsample > 0.0 && d.subsample <= 1.0) {
            bail!("dataset.subsample must be in (0, 1]");
        }
        if d.t_max == 0 || d.neg_ratio == 0 {
            bail!("dataset.t_max and dataset.neg_ratio must be at least 1");
        }
        for (key, p) in [("dataset.reviews", &d.reviews), ("dataset.metadata", &d.metadata)] {
            if let Some(p) = p {
                if !p.is_file() {
                    bail!("{key}: no such file {}", p.display());
                }
            }
        }
        self.hierarchy_spec()
            .validate()
            .map_err(|e| anyhow::anyhow!("hierarchy: {e}"))?;
        self.train.validate()?;
        self.synth_config(0).validate()?;
        Ok(())
    }

    pub fn hierarchy_spec(&self) -> HierarchySpec {
        HierarchySpec {
            dimensions: self.hierarchy.dimensions.clone(),
        }
    }

    pub fn model_config(&self, variant: Variant) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            variant,
            embedding_dim: m.embedding_dim,
            t_max: self.dataset.t_max,
            attention_hidden: m.attention_hidden.clone(),
            head_hidden: m.head_hidden.clone(),
            attr_embedding: m.attr_embedding,
            hierarchy: self.hierarchy_spec(),
        }
    }

    pub fn synth_config(&self, seed: u64) -> SynthConfig {
        let s = &self.synth;
        SynthConfig {
            users: s.users,
            items_per_category: s.items_per_category,
            categories: s.categories,
            history_len: s.history_len,
            signal_strength: s.signal_strength,
            brands_per_category: s.brands_per_category,
            seed,
        }
    }

    pub fn sampling(&self) -> SamplingOptions {
        SamplingOptions {
            t_max: self.dataset.t_max,
            neg_ratio: self.dataset.neg_ratio,
        }
    }

    pub fn prepared_dir(&self) -> &Path {
        self.dataset.prepared.as_deref().unwrap_or(&self.output.dir)
    }
}

/// `a.b=value`: the value is parsed as a TOML literal, falling back to a
/// bare string, so `--set dataset.name=books` needs no quoting.
fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .with_context(|| format!("override `{spec}` is not of the form section.key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.len() != 2 || parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` must be section.key");
    }
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let section = table
        .entry(parts[0].to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    match section {
        Value::Table(t) => {
            t.insert(parts[1].to_string(), value);
            Ok(())
        }
        _ => bail!("config entry `{}` is not a section", parts[0]),
    }
}
