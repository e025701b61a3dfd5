//! Output files: config hashing, stamped CSVs and run manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::Invocation;

pub const FORMAT_VERSION: u32 = 1;

/// SHA-256 of the result-relevant part of the rendered configuration.
pub fn config_hash(cfg: &RunConfig) -> String {
    format!("{:x}", Sha256::digest(cfg.render_results()))
}

/// The comment line every CSV output starts with.
pub fn stamp(cfg: &RunConfig) -> String {
    format!("config_hash={} seed={}", config_hash(cfg), cfg.seed)
}

pub fn stamped_csv(cfg: &RunConfig, body: &str) -> String {
    format!("# {}\n{body}", stamp(cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    /// Full rendered configuration, including the seed.
    pub config: String,
    pub invocation: Invocation,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(cfg: &RunConfig, invocation: &Invocation, outputs: &[&str]) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config_hash: config_hash(cfg),
            config: cfg.render(),
            invocation: invocation.clone(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn read(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        if m.format_version != FORMAT_VERSION {
            return Err(format!("{}: unsupported manifest format {}", path.display(), m.format_version));
        }
        Ok(m)
    }
}

/// Files produced by a command, written only after everything succeeded.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), contents.into()));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut text = serde_json::to_string_pretty(value).expect("serializable report");
        text.push('\n');
        self.add(name, text);
    }

    /// Writes every file plus `manifest.json` into `dir`.
    pub fn commit(mut self, dir: &Path, cfg: &RunConfig, invocation: &Invocation) -> hanam::Result<Vec<PathBuf>> {
        let mut names: Vec<&str> = self.files.iter().map(|(n, _)| n.as_str()).collect();
        names.push("manifest.json");
        let manifest = Manifest::new(cfg, invocation, &names);
        self.add_json("manifest.json", &manifest);
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            hanam::io::write_atomic(&path, bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_output_settings_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        b.jobs = 8;
        assert_eq!(config_hash(&a), config_hash(&b));
        b.seed = 2;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
