//! Run configuration: TOML schema, dotted-path overrides and a stable hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::approx::ApproxConfig;
use crate::diversity::DiversityConfig;
use crate::envs::{EnvConfig, EnvKind};
use crate::error::{config, Error, Result};
use crate::features::{FeatureMode, FeaturesConfig};
use crate::lagrange::{ExpertSource, LagrangeConfig};
use crate::rewards::RewardConfig;
use crate::trainer::TrainerConfig;

/// Environment variable that, when set, prefixes every relative output directory.
pub const OUTPUT_ROOT_VAR: &str = "DOMINIC_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run_id: String,
    pub seed: u64,
    pub output_dir: String,
    pub env: EnvConfig,
    pub rewards: RewardConfig,
    pub features: FeaturesConfig,
    pub diversity: DiversityConfig,
    pub lagrange: LagrangeConfig,
    pub approx: ApproxConfig,
    pub trainer: TrainerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: "run".into(),
            seed: 0,
            output_dir: "runs".into(),
            env: EnvConfig::default(),
            rewards: RewardConfig::default(),
            features: FeaturesConfig::default(),
            diversity: DiversityConfig::default(),
            lagrange: LagrangeConfig::default(),
            approx: ApproxConfig::default(),
            trainer: TrainerConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Loads `path` and applies `key.path=value` overrides (values parsed as TOML,
    /// falling back to a bare string).
    pub fn load_with_overrides(path: &Path, overrides: &[String]) -> Result<Self> {
        let cfg = Self::load(path)?;
        cfg.with_overrides(overrides)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not of the form key.path=value")))?;
            set_path(&mut doc, key.trim(), parse_value(raw.trim()))?;
        }
        let cfg: RunConfig = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.rewards.validate()?;
        self.features.validate()?;
        self.diversity.validate()?;
        self.lagrange.validate()?;
        self.approx.validate()?;
        self.trainer.validate()?;
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return config("run_id must be a non-empty name without path separators");
        }
        if self.lagrange.expert_source == ExpertSource::Oracle && self.env.kind != EnvKind::Gridworld {
            return config("lagrange: expert_source = \"oracle\" needs a gridworld environment");
        }
        if !self.rewards.rest_action.is_empty() && self.rewards.rest_action.len() != self.env.action_dim() {
            return config("rewards: rest_action length must match the action dimension");
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, ignoring where outputs are written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = String::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// `<root>/<output_dir>/<run_id>`, where the root comes from the environment.
    pub fn run_dir(&self) -> PathBuf {
        let base = match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) => PathBuf::from(root).join(&self.output_dir),
            None => PathBuf::from(&self.output_dir),
        };
        base.join(&self.run_id)
    }

    pub fn feature_dim(&self) -> usize {
        self.features.mode.dim(&self.env)
    }

    pub fn feature_mode(&self) -> FeatureMode {
        self.features.mode
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(doc: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = doc;
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{}` is not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = table
            .entry((*part).to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    config(format!("override `{key}` is empty"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn hash_ignores_key_order_and_output_dir() {
        let a = RunConfig::from_toml_str("seed = 3\n[env]\nwidth = 7.0\nheight = 7.0\n").unwrap();
        let b = RunConfig::from_toml_str(
            "output_dir = \"elsewhere\"\n[env]\nheight = 7.0\nwidth = 7.0\n[trainer]\n\nseed = 3\n",
        );
        // `seed` under [trainer] is an unknown key
        assert!(b.is_err());
        let b = RunConfig::from_toml_str("output_dir = \"elsewhere\"\nseed = 3\n[env]\nheight = 7.0\nwidth = 7.0\n")
            .unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig::from_toml_str("seed = 4\n[env]\nwidth = 7.0\nheight = 7.0\n").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn unknown_keys_report_their_line() {
        let err = RunConfig::from_toml_str("seed = 1\n\n[env]\nwidht = 3.0\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 4"), "{err}");
        assert!(err.contains("widht"), "{err}");
    }

    #[test]
    fn overrides_apply_dotted_paths() {
        let c = RunConfig::default()
            .with_overrides(&[
                "trainer.iterations=170".into(),
                "lagrange.alpha=[0.5, 0.7, 0.9]".into(),
                "run_id=abc".into(),
            ])
            .unwrap();
        assert_eq!(c.trainer.iterations, 170);
        assert_eq!(c.lagrange.alpha, vec![0.5, 0.7, 0.9]);
        assert_eq!(c.run_id, "abc");
        assert!(RunConfig::default()
            .with_overrides(&["trainer.bogus=1".into()])
            .is_err());
        assert!(RunConfig::default().with_overrides(&["no-equals".into()]).is_err());
    }
}
