//! Run configuration: every tunable of corpus synthesis, frontends, encoders,
//! objective, training and evaluation in one versioned TOML document.
//!
//! A file names a `preset` (`desk` or `paper`); keys it sets override that
//! preset's values, unknown keys are rejected. The config hash is a SHA-256
//! over the canonical (key-sorted) JSON form of the fully resolved config.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::SyntheticSpec;
use crate::encoders::{EncoderConfig, ScalePreset};
use crate::frontends::{ImageNormConfig, MelConfig};
use crate::objectives::MarginRankingParams;
use crate::trainer::TrainConfig;
use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![1, 5, 10],
            batch_size: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub preset: ScalePreset,
    pub synth: SyntheticSpec,
    pub mel: MelConfig,
    pub image: ImageNormConfig,
    pub encoder: EncoderConfig,
    pub objective: MarginRankingParams,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

impl RunConfig {
    /// Paper-scale shapes and schedule: 1024-frame spectrograms, 256→224
    /// image crops, d = 2048, B = 128, two rounds of 90 epochs.
    pub fn paper() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            preset: ScalePreset::Paper,
            synth: SyntheticSpec::default(),
            mel: MelConfig::default(),
            image: ImageNormConfig::default(),
            encoder: EncoderConfig::paper(),
            objective: MarginRankingParams::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    /// Scaled-down settings for a single CPU core: 256-frame spectrograms
    /// (synthetic captions last at most ~1.6 s), 72→64 image crops, desk
    /// encoders, B = 16, learning rates a tenth of the paper's, two rounds of 15
    /// epochs decaying every 5.
    pub fn desk() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            preset: ScalePreset::Desk,
            synth: SyntheticSpec {
                n_triples: 2200,
                n_val: Some(200),
                ..SyntheticSpec::default()
            },
            mel: MelConfig {
                target_frames: 256,
                ..MelConfig::default()
            },
            image: ImageNormConfig {
                resize_short_side: 72,
                crop: 64,
                ..ImageNormConfig::default()
            },
            encoder: EncoderConfig::desk(),
            objective: MarginRankingParams::default(),
            train: TrainConfig {
                batch_size: 16,
                lr_scale: 0.1,
                epochs_per_round: 15,
                decay_every: 5,
                rounds: 2,
                eval_every: 5,
                ..TrainConfig::default()
            },
            eval: EvalConfig::default(),
        }
    }

    pub fn preset(p: ScalePreset) -> Self {
        match p {
            ScalePreset::Desk => Self::desk(),
            ScalePreset::Paper => Self::paper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.synth.validate()?;
        self.mel.validate()?;
        self.image.validate()?;
        self.encoder.validate()?;
        self.objective.validate()?;
        self.train.validate()?;
        if self.encoder.n_mels != self.mel.n_mels {
            return Err(Error::Config(format!(
                "encoder expects {} mel bins but the frontend produces {}",
                self.encoder.n_mels, self.mel.n_mels
            )));
        }
        if self.synth.sample_rate != self.mel.sample_rate {
            return Err(Error::Config("synth.sample_rate differs from mel.sample_rate".into()));
        }
        self.encoder.audio_trunk_shape(self.mel.target_frames)?;
        self.encoder.image_trunk_shape(self.image.crop)?;
        if self.eval.ks.iter().any(|&k| k == 0) || self.eval.batch_size == 0 {
            return Err(Error::Config("eval.ks entries and eval.batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Parse a TOML document, layering its keys over the named preset.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        match user.get("version") {
            Some(toml::Value::Integer(v)) if *v == CONFIG_VERSION as i64 => {}
            Some(v) => return Err(Error::Config(format!("unsupported config version {v}"))),
            None => return Err(Error::Config("config file must set `version`".into())),
        }
        let preset = match user.get("preset") {
            None => ScalePreset::Desk,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e: toml::de::Error| Error::Config(format!("preset: {e}")))?,
        };
        let mut base = toml::Table::try_from(Self::preset(preset)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, user);
        let cfg: RunConfig = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        canonical(serde_json::to_value(self).expect("config serializes"))
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_value(v.clone()).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let text = self.to_json().to_string();
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn canonical(v: serde_json::Value) -> serde_json::Value {
    match v {
        serde_json::Value::Object(m) => {
            let mut entries: Vec<_> = m.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            serde_json::Value::Object(entries.into_iter().map(|(k, v)| (k, canonical(v))).collect())
        }
        serde_json::Value::Array(a) => serde_json::Value::Array(a.into_iter().map(canonical).collect()),
        other => other,
    }
}
