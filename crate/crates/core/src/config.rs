//! Run configuration: one flat key set covering both encoders, pretraining,
//! and fine-tuning, loaded from JSON with explicit override precedence
//! (command-line flags > config file > preset defaults).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::psmiles::StarStrategy;
use crate::seq_encoder::SeqConfig;
use crate::struct_encoder::StructConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key:?} expects {expected}")]
    BadValue { key: String, expected: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path} is not a JSON object: {msg}")]
    NotAnObject { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// Flat configuration for every subcommand. Serialized into checkpoints as
/// the architecture snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,

    // 1D sequence encoder
    pub seq_dim: usize,
    pub seq_layers: usize,
    pub seq_heads: usize,
    pub seq_ff: usize,
    pub seq_max_len: usize,

    // 3D structure encoder
    pub struct_atom_dim: usize,
    pub struct_pair_dim: usize,
    pub struct_layers: usize,
    pub struct_ff: usize,
    pub basis_max_dist: f64,

    // pretraining
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub tau: f64,
    pub noise_scale: f64,
    pub mask_rate: f64,
    pub contrast_dim: usize,
    pub strategy: String,

    // fine-tuning
    pub folds: usize,
    pub ft_epochs: usize,
    pub ft_batch_size: usize,
    pub ft_lr: f64,
    pub head_hidden: usize,
    pub freeze_encoder: bool,
}

impl Default for RunConfig {
    /// Desk-scale defaults: small encoders trainable on a laptop CPU in
    /// minutes. The published-scale architecture is available via
    /// [`RunConfig::paper_scale`].
    fn default() -> Self {
        Self {
            seed: 42,
            seq_dim: 64,
            seq_layers: 2,
            seq_heads: 4,
            seq_ff: 128,
            seq_max_len: 128,
            struct_atom_dim: 64,
            struct_pair_dim: 8,
            struct_layers: 3,
            struct_ff: 128,
            basis_max_dist: 10.0,
            batch_size: 16,
            steps: 300,
            lr: 1e-3,
            tau: 0.1,
            noise_scale: 1.0,
            mask_rate: 0.15,
            contrast_dim: 64,
            strategy: "substitute".into(),
            folds: 5,
            ft_epochs: 40,
            ft_batch_size: 16,
            ft_lr: 1e-3,
            head_hidden: 64,
            freeze_encoder: false,
        }
    }
}

impl RunConfig {
    /// Published-scale architecture preset (6×12 sequence encoder, 15×64
    /// structure encoder, optimizer lr 1e-4, batch 16).
    pub fn paper_scale() -> Self {
        Self {
            seq_dim: 768,
            seq_layers: 6,
            seq_heads: 12,
            seq_ff: 3072,
            seq_max_len: 512,
            struct_atom_dim: 512,
            struct_pair_dim: 64,
            struct_layers: 15,
            struct_ff: 2048,
            lr: 1e-4,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::default()),
            "paper" => Ok(Self::paper_scale()),
            other => Err(ConfigError::BadValue {
                key: "preset".into(),
                expected: format!("\"desk\" or \"paper\", got {other:?}"),
            }),
        }
    }

    pub fn seq_config(&self, vocab_size: usize) -> SeqConfig {
        SeqConfig {
            dim: self.seq_dim,
            layers: self.seq_layers,
            heads: self.seq_heads,
            ff_dim: self.seq_ff,
            max_len: self.seq_max_len,
            vocab_size,
        }
    }

    pub fn struct_config(&self) -> StructConfig {
        StructConfig {
            atom_dim: self.struct_atom_dim,
            pair_dim: self.struct_pair_dim,
            layers: self.struct_layers,
            ff_dim: self.struct_ff,
            basis_max_dist: self.basis_max_dist,
        }
    }

    pub fn star_strategy(&self) -> Result<StarStrategy> {
        StarStrategy::parse(&self.strategy).ok_or_else(|| ConfigError::BadValue {
            key: "strategy".into(),
            expected: format!("keep|remove|substitute, got {:?}", self.strategy),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("seq_dim", self.seq_dim),
            ("seq_layers", self.seq_layers),
            ("seq_heads", self.seq_heads),
            ("seq_ff", self.seq_ff),
            ("seq_max_len", self.seq_max_len),
            ("struct_atom_dim", self.struct_atom_dim),
            ("struct_pair_dim", self.struct_pair_dim),
            ("struct_layers", self.struct_layers),
            ("struct_ff", self.struct_ff),
            ("batch_size", self.batch_size),
            ("contrast_dim", self.contrast_dim),
            ("ft_batch_size", self.ft_batch_size),
            ("head_hidden", self.head_hidden),
        ];
        for (key, value) in positive {
            if value == 0 {
                return Err(ConfigError::Invalid(format!("{key} must be positive")));
            }
        }
        if self.seq_dim % 2 != 0 {
            return Err(ConfigError::Invalid("seq_dim must be even".into()));
        }
        if self.seq_dim % self.seq_heads != 0 {
            return Err(ConfigError::Invalid(
                "seq_heads must divide seq_dim".into(),
            ));
        }
        if self.struct_atom_dim % self.struct_pair_dim != 0 {
            return Err(ConfigError::Invalid(
                "struct_pair_dim must divide struct_atom_dim".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(ConfigError::Invalid("mask_rate must be in [0, 1]".into()));
        }
        if self.tau <= 0.0 {
            return Err(ConfigError::Invalid("tau must be positive".into()));
        }
        if self.noise_scale < 0.0 {
            return Err(ConfigError::Invalid("noise_scale must be >= 0".into()));
        }
        if !(self.lr > 0.0 && self.ft_lr > 0.0) {
            return Err(ConfigError::Invalid("learning rates must be positive".into()));
        }
        if self.basis_max_dist <= 0.0 {
            return Err(ConfigError::Invalid("basis_max_dist must be positive".into()));
        }
        if self.folds < 2 {
            return Err(ConfigError::Invalid("folds must be at least 2".into()));
        }
        self.star_strategy()?;
        Ok(())
    }

    /// Applies a JSON object of overrides onto this config. Every key is
    /// validated; unknown keys are rejected. `"preset"` must be handled by
    /// the caller before other keys (see [`load_config_file`]).
    pub fn apply_overrides(&mut self, map: &serde_json::Map<String, serde_json::Value>) -> Result<()> {
        use serde_json::Value;

        fn as_usize(key: &str, v: &Value) -> Result<usize> {
            v.as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| ConfigError::BadValue {
                    key: key.into(),
                    expected: "a nonnegative integer".into(),
                })
        }
        fn as_f64(key: &str, v: &Value) -> Result<f64> {
            v.as_f64().ok_or_else(|| ConfigError::BadValue {
                key: key.into(),
                expected: "a number".into(),
            })
        }

        for (key, value) in map {
            match key.as_str() {
                "preset" => {} // consumed by the caller
                "seed" => {
                    self.seed = value.as_u64().ok_or_else(|| ConfigError::BadValue {
                        key: key.clone(),
                        expected: "a nonnegative integer".into(),
                    })?
                }
                "seq_dim" => self.seq_dim = as_usize(key, value)?,
                "seq_layers" => self.seq_layers = as_usize(key, value)?,
                "seq_heads" => self.seq_heads = as_usize(key, value)?,
                "seq_ff" => self.seq_ff = as_usize(key, value)?,
                "seq_max_len" => self.seq_max_len = as_usize(key, value)?,
                "struct_atom_dim" => self.struct_atom_dim = as_usize(key, value)?,
                "struct_pair_dim" => self.struct_pair_dim = as_usize(key, value)?,
                "struct_layers" => self.struct_layers = as_usize(key, value)?,
                "struct_ff" => self.struct_ff = as_usize(key, value)?,
                "basis_max_dist" => self.basis_max_dist = as_f64(key, value)?,
                "batch_size" => self.batch_size = as_usize(key, value)?,
                "steps" => self.steps = as_usize(key, value)?,
                "lr" => self.lr = as_f64(key, value)?,
                "tau" => self.tau = as_f64(key, value)?,
                "noise_scale" => self.noise_scale = as_f64(key, value)?,
                "mask_rate" => self.mask_rate = as_f64(key, value)?,
                "contrast_dim" => self.contrast_dim = as_usize(key, value)?,
                "strategy" => {
                    self.strategy = value
                        .as_str()
                        .ok_or_else(|| ConfigError::BadValue {
                            key: key.clone(),
                            expected: "a string".into(),
                        })?
                        .to_string()
                }
                "folds" => self.folds = as_usize(key, value)?,
                "ft_epochs" => self.ft_epochs = as_usize(key, value)?,
                "ft_batch_size" => self.ft_batch_size = as_usize(key, value)?,
                "ft_lr" => self.ft_lr = as_f64(key, value)?,
                "head_hidden" => self.head_hidden = as_usize(key, value)?,
                "freeze_encoder" => {
                    self.freeze_encoder =
                        value.as_bool().ok_or_else(|| ConfigError::BadValue {
                            key: key.clone(),
                            expected: "a boolean".into(),
                        })?
                }
                other => return Err(ConfigError::UnknownKey(other.to_string())),
            }
        }
        Ok(())
    }

    /// Architecture keys that must agree between a checkpoint snapshot and a
    /// requested configuration.
    pub fn arch_matches(&self, other: &RunConfig) -> bool {
        self.seq_dim == other.seq_dim
            && self.seq_layers == other.seq_layers
            && self.seq_heads == other.seq_heads
            && self.seq_ff == other.seq_ff
            && self.seq_max_len == other.seq_max_len
            && self.struct_atom_dim == other.struct_atom_dim
            && self.struct_pair_dim == other.struct_pair_dim
            && self.struct_layers == other.struct_layers
            && self.struct_ff == other.struct_ff
            && self.contrast_dim == other.contrast_dim
    }
}

/// Loads a flat JSON config file on top of a base config. A `"preset"` key
/// ("desk" or "paper") replaces the base before the remaining keys apply.
pub fn load_config_file(path: &std::path::Path, base: RunConfig) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| ConfigError::NotAnObject {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
    let map = value.as_object().ok_or_else(|| ConfigError::NotAnObject {
        path: path.display().to_string(),
        msg: "top level must be an object".into(),
    })?;
    let mut cfg = match map.get("preset") {
        Some(serde_json::Value::String(name)) => RunConfig::preset(name)?,
        Some(_) => {
            return Err(ConfigError::BadValue {
                key: "preset".into(),
                expected: "a string".into(),
            })
        }
        None => base,
    };
    cfg.apply_overrides(map)?;
    Ok(cfg)
}

/// Deterministic sub-seed derivation: independent named streams from one
/// user-facing seed, stable across platforms and releases.
pub fn derive_seed(seed: u64, stream: &str, index: u64) -> u64 {
    // FNV-1a over the stream tag, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed
        .wrapping_add(h)
        .wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        RunConfig::paper_scale().validate().unwrap();
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = RunConfig::default();
        let map = serde_json::from_str::<serde_json::Value>(r#"{"sneaky": 1}"#)
            .unwrap()
            .as_object()
            .unwrap()
            .clone();
        assert!(matches!(
            cfg.apply_overrides(&map),
            Err(ConfigError::UnknownKey(k)) if k == "sneaky"
        ));
    }

    #[test]
    fn type_mismatch_rejected() {
        let mut cfg = RunConfig::default();
        let map = serde_json::from_str::<serde_json::Value>(r#"{"lr": "fast"}"#)
            .unwrap()
            .as_object()
            .unwrap()
            .clone();
        assert!(matches!(cfg.apply_overrides(&map), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn preset_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"preset": "paper", "steps": 7}"#).unwrap();
        let cfg = load_config_file(&path, RunConfig::default()).unwrap();
        assert_eq!(cfg.seq_layers, 6);
        assert_eq!(cfg.steps, 7);
    }

    #[test]
    fn derive_seed_streams_are_distinct_and_stable() {
        let a = derive_seed(42, "mask", 0);
        let b = derive_seed(42, "mask", 1);
        let c = derive_seed(42, "noise", 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(42, "mask", 0));
    }

    #[test]
    fn invalid_strategy_rejected() {
        let cfg = RunConfig {
            strategy: "mangle".into(),
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
