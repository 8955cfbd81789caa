//! Optional TOML run file. Each subcommand reads its own section; every key
//! is optional and command-line flags win over it.
//!
//! ```toml
//! [optimize-block]
//! users = 2
//! antennas = 64
//!
//! [simulate]
//! ebn0_grid = [0, 10, 20]
//! methods = ["wf", "wfq"]
//!
//! [bathtub]
//! block_len = 64
//! ```

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default, rename = "optimize-block")]
    pub optimize_block: BlockSection,
    #[serde(default)]
    pub simulate: SimSection,
    #[serde(default)]
    pub bathtub: BathtubSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSection {
    pub users: Option<usize>,
    pub antennas: Option<usize>,
    pub overlap: Option<usize>,
    pub coherence: Option<usize>,
    pub pow2: Option<bool>,
    pub whole_frames: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub paper_scale: Option<bool>,
    pub users: Option<usize>,
    pub antennas: Option<usize>,
    pub taps: Option<usize>,
    pub pdp: Option<String>,
    pub eva_sample_period_ns: Option<f64>,
    pub modulation: Option<usize>,
    pub coherence: Option<usize>,
    pub realizations: Option<usize>,
    pub ebn0_grid: Option<Vec<f64>>,
    pub block_lens: Option<Vec<usize>>,
    pub overlap: Option<usize>,
    /// Zero selects the unquantized receiver.
    pub bits: Option<u32>,
    pub quantizer: Option<String>,
    pub methods: Option<Vec<String>>,
    pub sigma_eta2: Option<f64>,
    pub include_edges: Option<bool>,
    pub ebn0_ref_block_len: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathtubSection {
    pub block_len: Option<usize>,
    pub ebn0_db: Option<f64>,
    pub method: Option<String>,
}

pub fn load(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}
