//! TOML run configuration. Every section is optional; see
//! `docs/config.md` and `configs/run.toml`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use causebench::benchmark::{BenchmarkConfig, FidelityConfig};
use causebench::io::AtomSpec;
use causebench::model::{FitConfig, KnobConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub model: Option<PathBuf>,
    pub sample: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub benchmark: Option<PathBuf>,
    pub plots: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the seed of every stage when set.
    pub seed: Option<u64>,
    pub atoms: AtomSpec,
    pub fit: FitConfig,
    pub knobs: KnobConfig,
    pub fidelity: FidelityConfig,
    pub benchmark: BenchmarkConfig,
    pub outputs: Outputs,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        self.knobs.validate()?;
        self.fidelity.validate()?;
        self.benchmark.validate()?;
        if let AtomSpec::Auto { min_frequency } = self.atoms {
            if !(min_frequency > 0.0 && min_frequency <= 1.0) {
                anyhow::bail!(causebench::Error::InvalidArgument(format!(
                    "atoms.min_frequency must lie in (0, 1], got {min_frequency}"
                )));
            }
        }
        Ok(())
    }

    /// Applies `seed` to every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self.fit.seed = seed;
        self.fidelity.seed = seed;
        self.benchmark.base_seed = seed;
        self
    }
}
