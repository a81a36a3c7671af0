//! TOML run configuration.
//!
//! Every section is optional; missing keys take the library defaults, and
//! command-line flags override whatever the file says.
//!
//! ```toml
//! seed = 7
//!
//! [backend]
//! kind = "http"            # or "mock"
//! endpoint = "http://127.0.0.1:8000/complete"
//! timeout_secs = 60
//! max_concurrent = 4
//! retries = 2
//! retry_backoff_ms = 200
//! label = "rinna-youri-7b"
//! iterations = 500
//! mock = "oracle"          # mock answers: "oracle" or "none"
//!
//! [generation]
//! temperature = 0.01
//! top_k = 5
//! do_sample = true
//! max_new_tokens = 30
//!
//! [scoring]
//! beta = 0.5
//! weights = [1, 1, 1, 1, 1, 1]
//! normalize = { strip_currency = false }
//!
//! [template]
//! leading_space = true
//! instruction_marker = "### Question:"
//! category_connector = "の"
//! response_marker = "\n ### は:"
//! terminator = "です。"
//!
//! [chunking]
//! max_len = 512
//! ```

use std::path::Path;

use anyhow::Context;
use receipt_ner::backend::{BackendConfig, GenerationParams};
use receipt_ner::bio_codec::ChunkingConfig;
use receipt_ner::prompting::PromptTemplate;
use receipt_ner::scoring::ScoringConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MockMode {
    /// Answer with the first ground-truth form.
    #[default]
    Oracle,
    /// Answer `None` everywhere.
    None,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSection {
    #[serde(flatten)]
    pub config: BackendConfig,
    pub mock: MockMode,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub backend: BackendSection,
    pub generation: GenerationParams,
    pub scoring: ScoringConfig,
    pub template: PromptTemplate,
    pub chunking: ChunkingConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: FileConfig = toml::from_str(text)?;
        cfg.template.validate()?;
        cfg.scoring.validate()?;
        Ok(cfg)
    }
}
