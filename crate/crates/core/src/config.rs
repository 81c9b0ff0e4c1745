//! Run configuration, read from TOML or JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::EpisodeConfig;
use crate::harness::{Aggregation, EvalOptions};
use crate::kb::{DEFAULT_ALPHA, DEFAULT_EPSILON};
use crate::reward::RewardWeights;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("config TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub w_format: f64,
    pub w_answer: f64,
    pub w_performance: f64,
    pub gamma: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        let w = RewardWeights::default();
        RewardSection {
            w_format: w.format,
            w_answer: w.answer,
            w_performance: w.performance,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KbSection {
    pub alpha: f64,
    pub epsilon: f64,
    /// Knowledge base file. The built-in seed is used when absent.
    pub path: Option<PathBuf>,
}

impl Default for KbSection {
    fn default() -> Self {
        KbSection {
            alpha: DEFAULT_ALPHA,
            epsilon: DEFAULT_EPSILON,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub max_turns: usize,
    pub temperature: f64,
    pub retrieval_k: usize,
    pub repair: bool,
    pub write_back: bool,
}

impl Default for AgentSection {
    fn default() -> Self {
        let e = EpisodeConfig::default();
        AgentSection {
            max_turns: e.max_turns,
            temperature: 0.0,
            retrieval_k: e.retrieval_k,
            repair: e.repair,
            write_back: e.write_back,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessSection {
    pub workers: usize,
    pub aggregation: Aggregation,
}

impl Default for HarnessSection {
    fn default() -> Self {
        HarnessSection {
            workers: EvalOptions::default().workers,
            aggregation: Aggregation::Arithmetic,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    /// `opt` binary. Discovered when absent.
    pub opt: Option<PathBuf>,
    pub timeout_secs: Option<u64>,
    pub workdir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub reward: RewardSection,
    pub kb: KbSection,
    pub agent: AgentSection,
    pub harness: HarnessSection,
    pub env: EnvSection,
}

impl Config {
    /// `.json` files are read as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Config = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !self.weights().is_valid() {
            return bad("reward weights must be finite and nonnegative");
        }
        if !(self.reward.gamma > 0.0 && self.reward.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.kb.alpha) {
            return bad("alpha must be in [0, 1]");
        }
        if !self.kb.epsilon.is_finite() {
            return bad("epsilon must be finite");
        }
        if self.agent.max_turns == 0 || self.agent.retrieval_k == 0 {
            return bad("max_turns and retrieval_k must be at least 1");
        }
        Ok(())
    }

    pub fn weights(&self) -> RewardWeights {
        RewardWeights {
            format: self.reward.w_format,
            answer: self.reward.w_answer,
            performance: self.reward.w_performance,
        }
    }

    pub fn episode(&self) -> EpisodeConfig {
        EpisodeConfig {
            max_turns: self.agent.max_turns,
            weights: self.weights(),
            gamma: self.reward.gamma,
            repair: self.agent.repair,
            retrieval_k: self.agent.retrieval_k,
            write_back: self.agent.write_back,
        }
    }

    /// Evaluation options. Knowledge write-back stays off during evaluation.
    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            workers: self.harness.workers,
            aggregation: self.harness.aggregation,
            episode: EpisodeConfig {
                write_back: false,
                ..self.episode()
            },
        }
    }
}
