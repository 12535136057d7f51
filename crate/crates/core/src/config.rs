//! TOML application config. Every section is optional; unknown keys are
//! rejected.
//!
//! ```toml
//! cache_dir = ".ragbench-cache"
//! output_dir = "out"
//!
//! [embedder]
//! kind = "remote"
//! endpoint_url = "http://localhost:8080"
//! model = "nomic-embed-text"
//!
//! [llm]
//! kind = "remote"
//! endpoint_url = "http://localhost:8080"
//! model = "llama-3-8b-instruct"
//!
//! [rag]
//! top_k = 4
//!
//! [metric]
//! judge = "lexical"
//!
//! [sweep]
//! chunk_sizes = [250, 500, 1000, 2000, 4000, 8000]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embed::EmbedderConfig;
use crate::error::{Error, Result};
use crate::llm::LlmConfig;
use crate::metrics::MetricConfig;
use crate::rag::RagConfig;
use crate::sweep::{SweepConfig, DEFAULT_CHUNK_SIZES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub chunk_sizes: Vec<usize>,
    pub overlap: usize,
    pub keep_going: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            chunk_sizes: DEFAULT_CHUNK_SIZES.to_vec(),
            overlap: 0,
            keep_going: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub cache_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub embedder: EmbedderConfig,
    pub llm: LlmConfig,
    /// Endpoint for the remote judge; falls back to `llm` when absent.
    pub judge_llm: Option<LlmConfig>,
    pub rag: RagConfig,
    pub metric: MetricConfig,
    pub sweep: SweepSection,
}

impl AppConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: AppConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.embedder.validate()?;
        self.llm.validate()?;
        if let Some(j) = &self.judge_llm {
            j.validate()?;
        }
        self.sweep_config().validate()
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            chunk_sizes: self.sweep.chunk_sizes.clone(),
            overlap: self.sweep.overlap,
            keep_going: self.sweep.keep_going,
            rag: self.rag.clone(),
            metric: self.metric.clone(),
            embedder: self.embedder.clone(),
        }
    }
}
