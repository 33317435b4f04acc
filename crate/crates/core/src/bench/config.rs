use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::TokenLayout;
use crate::error::{Error, Result};
use crate::pipeline::DiTConfig;
use crate::tensor::Precision;

/// Environment variable consulted for the worker thread count.
pub const THREADS_ENV: &str = "COBRA_ATTN_THREADS";

/// Settings shared by every subcommand. JSON config files use the same keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub sl: usize,
    pub sr: usize,
    pub n_refs: Vec<usize>,
    pub steps: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub seed: u64,
    pub repeats: usize,
    pub precision: Precision,
    pub threads: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sl: 256,
            sr: 64,
            n_refs: vec![4, 16, 32, 64, 128],
            steps: 10,
            dim: 64,
            depth: 4,
            heads: 4,
            seed: 0,
            repeats: 5,
            precision: Precision::F32,
            threads: None,
        }
    }
}

impl BenchConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.sl == 0 || self.sr == 0 {
            return Err(Error::Config("sl and sr must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.n_refs.is_empty() {
            return Err(Error::Config("n_refs must list at least one count".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        self.model_config(None).validate()
    }

    pub fn layout(&self, n_refs: usize) -> Result<TokenLayout> {
        TokenLayout::new(self.sl, self.sr, n_refs)
    }

    /// Model shape for timing and equivalence runs: tokens are fed directly,
    /// so patch and latent factor are 1.
    pub fn model_config(&self, guider_depth: Option<usize>) -> DiTConfig {
        DiTConfig {
            depth: self.depth,
            dim: self.dim,
            heads: self.heads,
            patch: 1,
            factor: 1,
            guider_depth: guider_depth.unwrap_or(0),
            mlp_ratio: 2,
            lora_rank: Some(4),
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Explicit setting first, then [`THREADS_ENV`], then `fallback`.
pub fn resolve_threads(explicit: Option<usize>, fallback: Option<usize>) -> Result<Option<usize>> {
    if explicit.is_some() {
        return Ok(explicit);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        },
        Err(_) => Ok(fallback),
    }
}

/// Parses `"4,16,32"`.
pub fn parse_count_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{s:?} in {text:?} is not a count")))
        })
        .collect()
}
