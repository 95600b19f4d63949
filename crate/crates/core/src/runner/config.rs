use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::catalog::Attribute;
use crate::embedder::{EmbedderConfig, GraphEncoderConfig, Hyper};
use crate::protocol::{Convention, ExperimentSpec, SplitSizing};
use crate::synthbench::SynthConfig;

/// Declarative description of a benchmark run. Relative paths are taken
/// from the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_run_id")]
    pub run_id: String,
    /// Parent of `runs/<run_id>`.
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Concurrent jobs; all cores when absent.
    #[serde(default)]
    pub workers: Option<usize>,
    pub data: DataConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub hyper: Hyper,
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub fusions: Vec<FusionConfig>,
    pub experiments: Vec<ExperimentSpec>,
    #[serde(default)]
    pub fairness: FairnessConfig,
}

fn default_run_id() -> String {
    "run".into()
}

fn default_out_dir() -> PathBuf {
    PathBuf::from(".")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Manifests on disk; every model names its own feature store.
    Manifest {
        identities: PathBuf,
        videos: PathBuf,
        /// Fixed split; drawn from `protocol.split` when absent.
        #[serde(default)]
        split: Option<PathBuf>,
    },
    /// Synthetic corpora generated at run start (one per dataset), shared
    /// by every model that names no store.
    Synthetic { corpora: Vec<SynthConfig> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub convention: Convention,
    /// Window length F.
    pub window: usize,
    pub split: SplitSizing,
    pub stratify: Vec<Attribute>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            convention: Convention::default(),
            window: 32,
            split: SplitSizing::Fraction(0.3),
            stratify: Attribute::ALL.to_vec(),
        }
    }
}

/// One embedder family. Architecture fields left out take the embedder defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub store: Option<PathBuf>,
    #[serde(default)]
    pub heads: Option<usize>,
    #[serde(default)]
    pub attention_dim: Option<usize>,
    #[serde(default)]
    pub projection_dim: Option<usize>,
    #[serde(default)]
    pub graph_encoder: Option<GraphEncoderConfig>,
}

impl ModelConfig {
    pub fn embedder_config(&self, input_dim: usize, window_len: usize, seed: u64) -> EmbedderConfig {
        let base = EmbedderConfig::new(input_dim);
        EmbedderConfig {
            heads: self.heads.unwrap_or(base.heads),
            attention_dim: self.attention_dim.unwrap_or(base.attention_dim),
            projection_dim: self.projection_dim.unwrap_or(base.projection_dim),
            window_len,
            graph_encoder: self.graph_encoder.clone(),
            seed,
            ..base
        }
    }
}

/// Mean-score fusion of several models, usable as a model in experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub name: String,
    pub members: Vec<String>,
    #[serde(default)]
    pub zscore: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FairnessConfig {
    pub enabled: bool,
    pub attributes: Vec<Attribute>,
}

impl Default for FairnessConfig {
    fn default() -> Self {
        Self { enabled: false, attributes: Attribute::ALL.to_vec() }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| RunError::Config(format!("{origin}: {e}")))
    }

    /// Reads a config file, resolves its relative paths and checks it.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    /// The effective config, every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        if let DataConfig::Manifest { identities, videos, split } = &mut self.data {
            fix(identities);
            fix(videos);
            if let Some(s) = split {
                fix(s);
            }
        }
        for m in &mut self.models {
            if let Some(s) = &mut m.store {
                fix(s);
            }
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join("runs").join(&self.run_id)
    }

    pub fn model_names(&self) -> Vec<&str> {
        self.models.iter().map(|m| m.name.as_str()).chain(self.fusions.iter().map(|f| f.name.as_str())).collect()
    }

    pub fn model(&self, name: &str) -> Option<&ModelConfig> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn fusion(&self, name: &str) -> Option<&FusionConfig> {
        self.fusions.iter().find(|f| f.name == name)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) || self.run_id.starts_with('.') {
            return bad(format!("run_id {:?} must be a plain directory name", self.run_id));
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if self.models.is_empty() {
            return bad("no models defined".into());
        }
        let names = self.model_names();
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.contains([',', '/', '\\']) {
                return bad(format!("model name {n:?} must be non-empty without ',', '/' or '\\\\'"));
            }
            if names[..i].contains(n) {
                return bad(format!("model name {n} is defined twice"));
            }
        }
        for f in &self.fusions {
            if f.members.is_empty() {
                return bad(format!("fusion {} has no members", f.name));
            }
            if let Some(m) = f.members.iter().find(|m| self.model(m).is_none()) {
                return bad(format!("fusion {} member {m} is not a trained model", f.name));
            }
        }
        let synthetic = matches!(self.data, DataConfig::Synthetic { .. });
        if let Some(m) = self.models.iter().find(|m| m.store.is_none() && !synthetic) {
            return bad(format!("model {} needs a store when data comes from manifests", m.name));
        }
        if let DataConfig::Synthetic { corpora } = &self.data {
            if corpora.is_empty() {
                return bad("synthetic data lists no corpora".into());
            }
        }
        if self.protocol.window < 2 {
            return bad(format!("window {} must be at least 2", self.protocol.window));
        }
        if self.experiments.is_empty() {
            return bad("no experiments".into());
        }
        Ok(())
    }
}
