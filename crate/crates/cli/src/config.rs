//! Pipeline configuration file. Every field is optional; command-line flags
//! take precedence.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use ifim_core::profile::ProfileSet;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    /// Model profile file (TOML or JSON).
    pub profiles: Option<PathBuf>,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub serve: ServeSection,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub backend: Option<String>,
    pub model: Option<String>,
    pub retries: Option<usize>,
    pub concurrency: Option<usize>,
    pub min_lines: Option<usize>,
    pub max_lines: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub context_lines: Option<usize>,
    pub confidence: Option<f64>,
    pub margin: Option<f64>,
    pub proportion: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub backend: Option<String>,
    pub model: Option<String>,
    pub profile: Option<String>,
    pub timeout_s: Option<f64>,
    pub max_new_tokens: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeSection {
    pub bind: Option<String>,
    pub backend: Option<String>,
    pub model: Option<String>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // profile paths are relative to the config file
        if let (Some(p), Some(dir)) = (&cfg.profiles, path.parent()) {
            if p.is_relative() {
                cfg.profiles = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    /// The profile file from `flag`, else from the config, else the builtin
    /// set.
    pub fn profile_set(&self, flag: Option<&Path>) -> Result<ProfileSet> {
        match flag.or(self.profiles.as_deref()) {
            Some(path) => ProfileSet::load(path)
                .with_context(|| format!("loading profiles from {}", path.display())),
            None => Ok(ProfileSet::builtin()),
        }
    }
}
