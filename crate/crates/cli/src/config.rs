use std::path::{Path, PathBuf};

use refground::eval::BenchmarkConfig;
use refground::models::TrainingConfig;
use refground::scene::{ProposalMode, SceneConfig};
use refground::EngineConfig;
use serde::{Deserialize, Serialize};

/// Settings file. Every section is optional; flags and `REFGROUND_*`
/// variables take precedence over it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub corpus: CorpusSection,
    pub training: TrainingConfig,
    pub engine: EngineConfig,
    pub ground: ProposalSection,
    pub eval: EvalSection,
    pub benchmark: BenchmarkConfig,
    pub act: ActSection,
    pub serve: ServeSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub scenes: usize,
    pub seed: u64,
    pub scene: SceneConfig,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            scenes: 2450,
            seed: 0,
            scene: SceneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProposalSection {
    pub proposals: ProposalMode,
    pub proposal_seed: u64,
}

impl Default for ProposalSection {
    fn default() -> Self {
        ProposalSection {
            proposals: ProposalMode::GroundTruth,
            proposal_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Partitions to score; missing ones are skipped.
    pub partitions: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            partitions: ["val", "test_a", "test_b"].map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActSection {
    pub points: usize,
    pub seed: u64,
}

impl Default for ActSection {
    fn default() -> Self {
        ActSection { points: 500, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeSection {
    pub host: String,
    pub port: u16,
    pub session_timeout_secs: u64,
    pub static_dir: Option<PathBuf>,
    pub proposals: ProposalMode,
    pub proposal_seed: u64,
}

impl Default for ServeSection {
    fn default() -> Self {
        ServeSection {
            host: "127.0.0.1".into(),
            port: 8080,
            session_timeout_secs: 30 * 60,
            static_dir: None,
            proposals: ProposalMode::GroundTruth,
            proposal_seed: 0,
        }
    }
}

pub fn load(path: Option<&Path>) -> Result<CliConfig, String> {
    let Some(path) = path else {
        return Ok(CliConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}
