//! Run configuration stored as flat `key = value` TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::joints::{BANDWIDTH_RANGE, DEFAULT_BANDWIDTH};
use crate::skinning::K;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("writing config: {0}")]
    Write(#[from] toml::ser::Error),
    #[error("config value `{key}` = {value} is outside {range}")]
    Range { key: &'static str, value: String, range: &'static str },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Width multiplier applied to every layer; 1.0 is the full network.
    pub width_scale: f64,
    pub seed: u64,
    pub radius: f64,
    pub voxel_resolution: usize,
    /// Overrides the learned bandwidth at inference time.
    pub bandwidth: Option<f64>,
    pub symmetry: bool,
    pub max_edges: usize,
    pub k: usize,

    pub attention_lr: f64,
    pub attention_epochs: usize,
    pub joint_warmup_steps: usize,
    pub joint_warmup_lr: f64,
    pub joint_lr: f64,
    pub joint_steps: usize,
    pub joint_batch: usize,
    pub unroll_steps: usize,

    pub conn_lr: f64,
    pub conn_steps: usize,
    pub conn_batch: usize,
    pub negative_ratio: usize,

    pub skin_lr: f64,
    pub skin_steps: usize,
    pub skin_batch: usize,

    pub data_dir: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            width_scale: 1.0,
            seed: 0,
            radius: 0.06,
            voxel_resolution: 88,
            bandwidth: None,
            symmetry: true,
            max_edges: 15,
            k: K,
            attention_lr: 1e-4,
            attention_epochs: 50,
            joint_warmup_steps: 0,
            joint_warmup_lr: 1e-3,
            joint_lr: 1e-6,
            joint_steps: 2000,
            joint_batch: 2,
            unroll_steps: 10,
            conn_lr: 1e-3,
            conn_steps: 500,
            conn_batch: 12,
            negative_ratio: 3,
            skin_lr: 1e-4,
            skin_steps: 2000,
            skin_batch: 2,
            data_dir: None,
            checkpoint_dir: None,
        }
    }
}

fn check<T: PartialOrd + ToString>(key: &'static str, v: T, lo: T, hi: T, range: &'static str) -> Result<(), ConfigError> {
    if v < lo || v > hi {
        return Err(ConfigError::Range { key, value: v.to_string(), range });
    }
    Ok(())
}

impl RunConfig {
    /// Narrow networks and short schedules that overfit the bundled
    /// characters on a laptop CPU.
    pub fn desk() -> Self {
        Self {
            width_scale: 0.125,
            voxel_resolution: 64,
            attention_epochs: 10,
            joint_warmup_steps: 1200,
            joint_lr: 1e-4,
            joint_steps: 600,
            conn_lr: 3e-3,
            conn_steps: 400,
            conn_batch: 5,
            skin_lr: 1e-3,
            skin_steps: 600,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check("width_scale", self.width_scale, 1e-3, 1.0, "[0.001, 1]")?;
        check("radius", self.radius, 1e-4, 1.0, "[0.0001, 1]")?;
        check("voxel_resolution", self.voxel_resolution, 8, 512, "[8, 512]")?;
        if let Some(h) = self.bandwidth {
            check("bandwidth", h, BANDWIDTH_RANGE.0, BANDWIDTH_RANGE.1, "[0.01, 0.1]")?;
        }
        check("max_edges", self.max_edges, 1, 1000, "[1, 1000]")?;
        check("k", self.k, K, K, "[5, 5]")?;
        for (key, lr) in [
            ("attention_lr", self.attention_lr),
            ("joint_warmup_lr", self.joint_warmup_lr),
            ("joint_lr", self.joint_lr),
            ("conn_lr", self.conn_lr),
            ("skin_lr", self.skin_lr),
        ] {
            check(key, lr, 0.0, 1.0, "[0, 1]")?;
        }
        for (key, b) in [("joint_batch", self.joint_batch), ("conn_batch", self.conn_batch), ("skin_batch", self.skin_batch)] {
            check(key, b, 1, 4096, "[1, 4096]")?;
        }
        check("unroll_steps", self.unroll_steps, 0, 100, "[0, 100]")?;
        check("negative_ratio", self.negative_ratio, 0, 100, "[0, 100]")?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Default inference bandwidth when neither the config nor the
    /// checkpoint provides one.
    pub fn fallback_bandwidth() -> f64 {
        DEFAULT_BANDWIDTH
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::desk();
        c.bandwidth = Some(0.03);
        c.data_dir = Some("assets".into());
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn partial_files_use_defaults_and_ranges_are_checked() {
        let c = RunConfig::from_toml("seed = 7\nskin_lr = 0.001\n").unwrap();
        assert_eq!((c.seed, c.skin_lr, c.k), (7, 1e-3, 5));
        assert!(matches!(RunConfig::from_toml("bandwidth = 0.5\n"), Err(ConfigError::Range { key: "bandwidth", .. })));
        assert!(RunConfig::from_toml("typo = 1\n").is_err());
    }
}
