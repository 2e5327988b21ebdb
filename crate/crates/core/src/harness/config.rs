//! Run configuration shared by the command-line tools, read from TOML.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cfm::CfmConfig;
use crate::error::{Result, UniddError};
use crate::features::{NetConfig, NetMode};
use crate::harness::dataset::MixtureConfig;
use crate::harness::eval::EvalConfig;
use crate::harness::squeeze::hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    /// Input width followed by one width per layer.
    pub widths: Vec<usize>,
    pub mode: NetMode,
    pub seed: u64,
}

impl Default for NetSection {
    fn default() -> Self {
        NetSection {
            widths: vec![32, 128],
            mode: NetMode::Flat,
            seed: 0,
        }
    }
}

impl NetSection {
    pub fn to_config(&self) -> NetConfig {
        NetConfig {
            widths: self.widths.clone(),
            mode: self.mode,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SqueezeSection {
    pub ridge_beta: f64,
}

impl Default for SqueezeSection {
    fn default() -> Self {
        SqueezeSection { ridge_beta: 0.1 }
    }
}

/// One explicit comparison row; unset `cfm` fields take the library defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantEntry {
    pub name: String,
    #[serde(default)]
    pub cfm: CfmConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    /// Distillation seeds of every comparison row.
    pub seeds: Vec<u64>,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
    /// Explicit rows; when empty the standard filter set built from `[cfm]` is used.
    pub variants: Vec<VariantEntry>,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            seeds: (0..5).collect(),
            jobs: 0,
            variants: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Distillation seed.
    pub seed: u64,
    pub dataset: MixtureConfig,
    pub net: NetSection,
    pub squeeze: SqueezeSection,
    pub cfm: CfmConfig,
    pub eval: EvalConfig,
    pub compare: CompareSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| UniddError::InvalidConfig(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("run config serializes")))
    }
}
