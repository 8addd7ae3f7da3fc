//! Run configuration: TOML file, environment overrides, flag overrides, in
//! ascending precedence over the built-in defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use claimlens_core::docstore::{DEFAULT_CHUNK_OVERLAP, DEFAULT_CHUNK_SIZE, DEFAULT_TOP_M};
use claimlens_core::embed::EmbedderConfig;
use claimlens_core::ingest::{DEFAULT_MERGE_THRESHOLD, DEFAULT_SPAN_BATCH};
use claimlens_core::provider::ProviderConfig;
use claimlens_core::retrieval::RetrievalParams;

pub const ENV_PROVIDER_ENDPOINT: &str = "CLAIMLENS_PROVIDER_ENDPOINT";
pub const ENV_PROVIDER_MODEL: &str = "CLAIMLENS_PROVIDER_MODEL";
pub const ENV_PROVIDER_API_KEY: &str = "CLAIMLENS_PROVIDER_API_KEY";
pub const ENV_EMBEDDER_ENDPOINT: &str = "CLAIMLENS_EMBEDDER_ENDPOINT";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StorePaths {
    pub schema: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub docstore: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestSection {
    pub merge_threshold: f64,
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub span_batch: usize,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            merge_threshold: DEFAULT_MERGE_THRESHOLD,
            chunk_size: DEFAULT_CHUNK_SIZE,
            chunk_overlap: DEFAULT_CHUNK_OVERLAP,
            span_batch: DEFAULT_SPAN_BATCH,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalSection {
    pub top_n: usize,
    pub threshold: f64,
    pub k: usize,
    pub top_m: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let params = RetrievalParams::default();
        RetrievalSection {
            top_n: params.top_n,
            threshold: params.threshold,
            k: params.k,
            top_m: DEFAULT_TOP_M,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub parallelism: usize,
    pub definitions_file: Option<PathBuf>,
    pub fewshot_file: Option<PathBuf>,
    pub prompt_mode: Option<String>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            parallelism: 1,
            definitions_file: None,
            fewshot_file: None,
            prompt_mode: None,
        }
    }
}

fn default_provider() -> ProviderConfig {
    ProviderConfig::Mock { scripts: vec![] }
}

/// The full run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(default = "default_provider")]
    pub provider: ProviderConfig,
    pub embedder: EmbedderConfig,
    pub stores: StorePaths,
    pub ingest: IngestSection,
    pub retrieval: RetrievalSection,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            provider: default_provider(),
            embedder: EmbedderConfig::default(),
            stores: StorePaths::default(),
            ingest: IngestSection::default(),
            retrieval: RetrievalSection::default(),
            run: RunSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig, String> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| format!("config file {}: {e}", p.display()))?;
                toml::from_str(&text).map_err(|e| format!("config file {}: {e}", p.display()))?
            }
            None => RunConfig::default(),
        };
        config.apply_env();
        Ok(config)
    }

    /// Environment variables override the file; flags override both.
    fn apply_env(&mut self) {
        if let ProviderConfig::Http {
            endpoint,
            model,
            api_key,
            ..
        } = &mut self.provider
        {
            if let Ok(v) = std::env::var(ENV_PROVIDER_ENDPOINT) {
                *endpoint = v;
            }
            if let Ok(v) = std::env::var(ENV_PROVIDER_MODEL) {
                *model = v;
            }
            if let Ok(v) = std::env::var(ENV_PROVIDER_API_KEY) {
                *api_key = Some(v);
            }
        }
        if let EmbedderConfig::Remote { endpoint, .. } = &mut self.embedder {
            if let Ok(v) = std::env::var(ENV_EMBEDDER_ENDPOINT) {
                *endpoint = v;
            }
        }
    }

    pub fn retrieval_params(&self) -> RetrievalParams {
        RetrievalParams {
            top_n: self.retrieval.top_n,
            threshold: self.retrieval.threshold,
            k: self.retrieval.k,
        }
    }
}
