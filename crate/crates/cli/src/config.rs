use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use tnn_maxwell::domains::DomainSpec;
use tnn_maxwell::training::TrainConfig;

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

/// One `solve` run. Training and model fields sit at the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Built-in domain name or path to a domain JSON file.
    pub domain: String,
    /// Checked against the domain when present.
    #[serde(default)]
    pub dim: Option<usize>,
    /// Keep union groups of decomposed domains.
    #[serde(default = "default_true")]
    pub union_groups: bool,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl RunConfig {
    /// Reads a config file, or the `config` echo inside a `report.json`.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let value = match value.get("config") {
            Some(inner) if value.get("report").is_some() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(value).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Resolves and checks the domain against this config.
    pub fn domain(&self) -> anyhow::Result<DomainSpec> {
        let mut domain = DomainSpec::resolve(&self.domain)?;
        if !self.union_groups {
            domain = domain.without_unions();
        }
        if let Some(d) = self.dim {
            if d != domain.dim {
                bail!("config dim {d} does not match domain `{}` (dim {})", domain.name, domain.dim);
            }
        }
        self.train.validate(&domain)?;
        Ok(domain)
    }
}
