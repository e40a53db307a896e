//! Versioned JSON checkpoint container with atomic writes.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::approx::{Adam, MaskedApproximator};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::features::FeatureExpectation;
use crate::lagrange::ConstraintGroup;

pub const CHECKPOINT_FORMAT: &str = "dominic-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    /// Completed learning iterations.
    pub iteration: usize,
    /// Single-skill expert trained on extrinsic rewards only.
    pub expert: bool,
    pub config: RunConfig,
    pub net: MaskedApproximator,
    pub optimizer: Adam,
    pub groups: Vec<ConstraintGroup>,
    pub feature_expectation: FeatureExpectation,
    pub expert_values: Vec<f64>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        serde_json::to_writer(&mut tmp, self)?;
        tmp.flush()?;
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{} is not a valid checkpoint: {e}", path.display())))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported checkpoint format {} v{}",
                path.display(),
                ckpt.format,
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}
