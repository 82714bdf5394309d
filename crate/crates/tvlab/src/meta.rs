// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance stamped into every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl Meta {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Meta { config_hash: config_hash.into(), seed, version: VERSION.to_string() }
    }

    /// One-line form used in CSV and PNM comments.
    pub fn comment(&self) -> String {
        format!("tvlab {} config={} seed={}", self.version, self.config_hash, self.seed)
    }

    pub fn parse_comment(line: &str) -> Option<Meta> {
        let mut parts = line.trim().trim_start_matches('#').split_whitespace();
        if parts.next()? != "tvlab" {
            return None;
        }
        let version = parts.next()?.to_string();
        let config_hash = parts.next()?.strip_prefix("config=")?.to_string();
        let seed = parts.next()?.strip_prefix("seed=")?.parse().ok()?;
        Some(Meta { config_hash, seed, version })
    }
}
