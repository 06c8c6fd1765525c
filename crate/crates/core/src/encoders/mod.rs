//! The three networks of the embedding map: one image encoder and two
//! architecture-sharing, weight-independent audio encoders.

mod checkpoint;
mod config;
mod layers;
mod model;
mod params;
mod scalar;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use config::{EncoderConfig, LayerSpec, ScalePreset};
pub use model::{expected_shapes, Forward, Model};
pub use params::{is_trainable, ParamSet, Tensor};
pub use scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "i")]
    Image,
    #[serde(rename = "e")]
    AudioE,
    #[serde(rename = "h")]
    AudioH,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Image, Modality::AudioE, Modality::AudioH];

    /// Parameter-name prefix of this modality's encoder.
    pub fn prefix(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::AudioE => "audio_e",
            Modality::AudioH => "audio_h",
        }
    }

    /// One-letter code used in direction and scenario names.
    pub fn code(self) -> char {
        match self {
            Modality::Image => 'i',
            Modality::AudioE => 'e',
            Modality::AudioH => 'h',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        match c.to_ascii_lowercase() {
            'i' => Some(Modality::Image),
            'e' => Some(Modality::AudioE),
            'h' => Some(Modality::AudioH),
            _ => None,
        }
    }

    pub fn is_audio(self) -> bool {
        self != Modality::Image
    }

    /// Whether a parameter name belongs to this modality's encoder.
    pub fn owns(self, param: &str) -> bool {
        param
            .strip_prefix(self.prefix())
            .is_some_and(|rest| rest.starts_with('.'))
    }
}

/// A pooled d-dimensional embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVec {
    pub values: Vec<f32>,
    pub modality: Modality,
}

/// Pre-pooling encoder output, `steps × dim` row-major. Audio steps are
/// down-sampled frames; image steps are flattened grid cells.
#[derive(Clone, Debug, PartialEq)]
pub struct UnpooledEmbedding {
    pub values: Vec<f32>,
    pub steps: usize,
    pub dim: usize,
}

impl UnpooledEmbedding {
    pub fn row(&self, step: usize) -> &[f32] {
        &self.values[step * self.dim..(step + 1) * self.dim]
    }

    /// Column means; equals the pooled embedding.
    pub fn mean(&self) -> Vec<f32> {
        let mut acc = vec![0.0f64; self.dim];
        for s in 0..self.steps {
            for (a, &v) in acc.iter_mut().zip(self.row(s)) {
                *a += v as f64;
            }
        }
        acc.into_iter().map(|a| (a / self.steps as f64) as f32).collect()
    }
}
