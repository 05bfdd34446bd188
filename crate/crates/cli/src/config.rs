//! Run configuration: defaults, optional TOML file, then command-line flags.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use weavecache::simulator::{EpisodeConfig, StreamConfig, DEFAULT_TAU};
use weavecache::{
    PipelineConfig, DEFAULT_DELTA_NATS, DEFAULT_K, DEFAULT_M_COARSE, DEFAULT_WINDOW_C,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySection {
    pub window_c: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub k: usize,
    pub m_coarse: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateSection {
    pub delta_nats: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnswererSection {
    pub tau: f64,
}

/// Every tunable the binary knows about. Sections mirror the config file:
///
/// ```toml
/// [memory]
/// window_c = 64
/// [retrieval]
/// k = 64
/// m_coarse = 256
/// [gate]
/// delta_nats = 0.6
/// [answerer]
/// tau = 0.1
/// [stream]
/// n_frames = 500
/// seed = 7
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub memory: MemorySection,
    pub retrieval: RetrievalSection,
    pub gate: GateSection,
    pub answerer: AnswererSection,
    pub stream: StreamConfig,
}

impl Default for MemorySection {
    fn default() -> Self {
        Self {
            window_c: DEFAULT_WINDOW_C,
        }
    }
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            m_coarse: DEFAULT_M_COARSE,
        }
    }
}

impl Default for GateSection {
    fn default() -> Self {
        Self {
            delta_nats: DEFAULT_DELTA_NATS,
        }
    }
}

impl Default for AnswererSection {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn episode(&self) -> EpisodeConfig {
        EpisodeConfig {
            pipeline: PipelineConfig {
                delta: self.gate.delta_nats,
                k: self.retrieval.k,
                m_coarse: self.retrieval.m_coarse,
                window_c: self.memory.window_c,
            },
            tau: self.answerer.tau,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.retrieval.k, 64);
        assert_eq!(cfg.gate.delta_nats, 0.6);
        assert_eq!(cfg.memory.window_c, 64);
        assert_eq!(cfg.retrieval.m_coarse, 256);
        assert_eq!(cfg.answerer.tau, 0.1);
        assert_eq!(cfg.episode().pipeline, PipelineConfig::default());
    }

    #[test]
    fn partial_file_overrides_only_named_keys() {
        let cfg = RunConfig::parse("[gate]\ndelta_nats = 0.8\n[stream]\nseed = 9\n").unwrap();
        assert_eq!(cfg.gate.delta_nats, 0.8);
        assert_eq!(cfg.stream.seed, 9);
        assert_eq!(cfg.retrieval.k, 64);
        assert_eq!(cfg.stream.n_frames, 500);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("[gate]\nthreshold = 1\n").is_err());
    }
}
