//! Triple-structured corpora: manifests, synthetic generation, and batching.

mod batches;
mod manifest;
mod synthetic;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use batches::{batch_indices, split_batches};
pub use manifest::{load_manifest, write_manifest, MANIFEST_FILE};
pub use synthetic::{generate_synthetic, signature_frequencies, Language, SyntheticSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(crate::Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// A concept occurrence inside a spoken caption, in seconds.
///
/// Serialized as `[concept, start_s, end_s]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(u32, f64, f64)", into = "(u32, f64, f64)")]
pub struct Segment {
    pub concept: u32,
    pub start_s: f64,
    pub end_s: f64,
}

impl From<(u32, f64, f64)> for Segment {
    fn from((concept, start_s, end_s): (u32, f64, f64)) -> Self {
        Segment {
            concept,
            start_s,
            end_s,
        }
    }
}

impl From<Segment> for (u32, f64, f64) {
    fn from(s: Segment) -> Self {
        (s.concept, s.start_s, s.end_s)
    }
}

/// One item: an image and its two spoken captions.
///
/// Paths are relative to the corpus root (the manifest's directory).
#[derive(Clone, Debug, PartialEq)]
pub struct Triple {
    pub id: String,
    pub image_ref: PathBuf,
    pub audio_e_ref: PathBuf,
    pub audio_h_ref: PathBuf,
    pub split: Split,
    pub concepts: Option<Vec<u32>>,
    pub segments_e: Option<Vec<Segment>>,
    pub segments_h: Option<Vec<Segment>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub root: PathBuf,
    pub triples: Vec<Triple>,
    pub n_train: usize,
    pub n_val: usize,
}

impl Corpus {
    /// Build a corpus from triples, counting splits. Ids must be unique.
    pub fn new(root: impl Into<PathBuf>, triples: Vec<Triple>) -> crate::Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for t in &triples {
            if !seen.insert(t.id.as_str()) {
                return Err(crate::Error::DuplicateId(t.id.clone()));
            }
        }
        let n_train = triples.iter().filter(|t| t.split == Split::Train).count();
        let n_val = triples.len() - n_train;
        Ok(Corpus {
            root: root.into(),
            triples,
            n_train,
            n_val,
        })
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    /// Indices of the triples in `split`, in manifest order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.triples
            .iter()
            .enumerate()
            .filter(|(_, t)| t.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn find(&self, id: &str) -> Option<&Triple> {
        self.triples.iter().find(|t| t.id == id)
    }
}

pub(crate) fn check_segments(segments: &[Segment]) -> Result<(), String> {
    for s in segments {
        if !(s.start_s.is_finite() && s.end_s.is_finite() && s.start_s >= 0.0 && s.end_s > s.start_s) {
            return Err(format!(
                "segment for concept {} has invalid bounds [{}, {}]",
                s.concept, s.start_s, s.end_s
            ));
        }
    }
    for w in segments.windows(2) {
        if w[1].start_s < w[0].end_s {
            return Err(format!(
                "segments for concepts {} and {} overlap or are unsorted",
                w[0].concept, w[1].concept
            ));
        }
    }
    Ok(())
}
