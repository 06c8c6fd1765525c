use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::{Corpus, Split};
use crate::encoders::{load_checkpoint, CheckpointMeta, Modality, Model};
use crate::features::FeatureStore;
use crate::frontends::Mode;
use crate::objectives::Direction;
use crate::{seed, Error, Result};

/// Eval-mode embeddings of one split, row-aligned by triple id across
/// modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalLibrary {
    pub ids: Vec<String>,
    pub embeddings: BTreeMap<Modality, Vec<Vec<f32>>>,
}

impl RetrievalLibrary {
    pub fn new(ids: Vec<String>, embeddings: BTreeMap<Modality, Vec<Vec<f32>>>) -> Result<Self> {
        for (m, rows) in &embeddings {
            if rows.len() != ids.len() {
                return Err(Error::Shape(format!(
                    "{} has {} rows for {} ids",
                    m.prefix(),
                    rows.len(),
                    ids.len()
                )));
            }
            if let Some(bad) = rows.iter().find(|r| r.len() != rows[0].len()) {
                return Err(Error::Dimension {
                    left: rows[0].len(),
                    right: bad.len(),
                });
            }
        }
        Ok(RetrievalLibrary { ids, embeddings })
    }

    /// Number of items, M.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn rows(&self, m: Modality) -> Result<&[Vec<f32>]> {
        self.embeddings
            .get(&m)
            .map(Vec::as_slice)
            .ok_or(Error::MissingModality(m.prefix()))
    }

    /// Same library with rows reordered: row `i` of the result is row
    /// `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        RetrievalLibrary {
            ids: perm.iter().map(|&i| self.ids[i].clone()).collect(),
            embeddings: self
                .embeddings
                .iter()
                .map(|(m, rows)| (*m, perm.iter().map(|&i| rows[i].clone()).collect()))
                .collect(),
        }
    }
}

/// Recall at each cutoff for one query→target direction.
#[derive(Clone, Debug, PartialEq)]
pub struct RecallReport {
    pub direction: Direction,
    pub recall_at: BTreeMap<usize, f64>,
    pub hits: BTreeMap<usize, usize>,
    pub m: usize,
}

impl RecallReport {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.recall_at.get(&k).copied()
    }
}

/// JSON form of a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r5: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r10: Option<f64>,
    #[serde(rename = "M")]
    pub m: usize,
}

impl From<&RecallReport> for RecallSummary {
    fn from(r: &RecallReport) -> Self {
        RecallSummary {
            r1: r.at(1),
            r5: r.at(5),
            r10: r.at(10),
            m: r.m,
        }
    }
}

fn dot(x: &[f32], y: &[f32]) -> f64 {
    x.iter().zip(y).map(|(&a, &b)| a as f64 * b as f64).sum()
}

fn check_ks(ks: &[usize], m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::EmptyLibrary);
    }
    match ks.iter().find(|&&k| k == 0 || k > m) {
        Some(&k) => Err(Error::CutoffOutOfRange { k, m }),
        None => Ok(()),
    }
}

/// Rank (0-based) of the true target `q` given its query's scores: targets
/// scoring higher come first, ties go to the lower index.
fn rank_of_true(scores: impl Iterator<Item = f64>, q: usize, s_true: f64) -> usize {
    scores
        .enumerate()
        .filter(|&(t, s)| s > s_true || (s == s_true && t < q))
        .count()
}

fn report(direction: Direction, ranks: &[usize], ks: &[usize]) -> RecallReport {
    let m = ranks.len();
    let hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, ranks.iter().filter(|&&r| r < k).count())).collect();
    RecallReport {
        direction,
        recall_at: hits.iter().map(|(&k, &h)| (k, h as f64 / m as f64)).collect(),
        hits,
        m,
    }
}

/// Every library item queries all M targets of the paired modality by dot
/// product; a hit means its own target is within the top k.
pub fn recall_at_k(lib: &RetrievalLibrary, direction: Direction, ks: &[usize]) -> Result<RecallReport> {
    check_ks(ks, lib.len())?;
    let queries = lib.rows(direction.anchor)?;
    let targets = lib.rows(direction.paired)?;
    let ranks: Vec<usize> = queries
        .iter()
        .enumerate()
        .map(|(q, qv)| {
            let scores: Vec<f64> = targets.iter().map(|t| dot(qv, t)).collect();
            rank_of_true(scores.iter().copied(), q, scores[q])
        })
        .collect();
    Ok(report(direction, &ranks, ks))
}

/// All six directions, in the order e2i, i2e, h2i, i2h, e2h, h2e. Each
/// modality pair's score matrix is computed once and read both ways.
pub fn evaluate_all_directions(lib: &RetrievalLibrary, ks: &[usize]) -> Result<Vec<RecallReport>> {
    check_ks(ks, lib.len())?;
    let m = lib.len();
    let mut out = Vec::with_capacity(6);
    for pair in Direction::all().chunks(2) {
        let forward = pair[0];
        let a = lib.rows(forward.anchor)?;
        let b = lib.rows(forward.paired)?;
        let scores: Vec<f64> = a.iter().flat_map(|x| b.iter().map(|y| dot(x, y))).collect();
        let rows: Vec<usize> = (0..m)
            .map(|q| rank_of_true(scores[q * m..(q + 1) * m].iter().copied(), q, scores[q * m + q]))
            .collect();
        let cols: Vec<usize> = (0..m)
            .map(|q| rank_of_true((0..m).map(|t| scores[t * m + q]), q, scores[q * m + q]))
            .collect();
        out.push(report(forward, &rows, ks));
        out.push(report(pair[1], &cols, ks));
    }
    Ok(out)
}

/// `{"e2i": {"r1": …, "r5": …, "r10": …, "M": …}, …}`
pub fn recall_json(reports: &[RecallReport]) -> serde_json::Value {
    let map: serde_json::Map<String, serde_json::Value> = reports
        .iter()
        .map(|r| {
            (
                r.direction.key(),
                serde_json::to_value(RecallSummary::from(r)).expect("summary serializes"),
            )
        })
        .collect();
    serde_json::Value::Object(map)
}

/// Aligned text table: one column group per direction, one column per k.
pub fn recall_table(label: &str, reports: &[RecallReport]) -> String {
    let ks: Vec<usize> = reports
        .first()
        .map(|r| r.recall_at.keys().copied().collect())
        .unwrap_or_default();
    let cell = 6;
    let group = ks.len() * cell;
    let lw = label.len().max(5);
    let mut head = format!("{:lw$}", "");
    let mut sub = format!("{:lw$}", "Model");
    let mut row = format!("{label:lw$}");
    for r in reports {
        let name = format!("{}→{}", r.direction.anchor.code().to_ascii_uppercase(), r.direction.paired.code().to_ascii_uppercase());
        let _ = write!(head, " |{name:^group$}");
        sub.push_str(" |");
        row.push_str(" |");
        for &k in &ks {
            let _ = write!(sub, "{k:>cell$}");
            let v = format!("{:.3}", r.recall_at[&k]);
            let v = v.strip_prefix('0').unwrap_or(&v);
            let _ = write!(row, "{v:>cell$}");
        }
    }
    format!("{head}\n{sub}\n{row}\n")
}

/// Eval-mode embeddings of every item in `store`, processed `batch_size` at a
/// time.
pub fn library_from_store(model: &Model<f32>, store: &FeatureStore, batch_size: usize) -> Result<RetrievalLibrary> {
    if store.len() < 2 {
        return Err(Error::EmptySplit(format!("{} items", store.len())));
    }
    let batch_size = batch_size.max(1);
    let mut embeddings = BTreeMap::new();
    // Eval-mode crops are centered, so this generator is never consulted.
    let mut rng = seed::rng(0, "eval", &[]);
    for m in Modality::ALL {
        let mut rows = Vec::with_capacity(store.len());
        for start in (0..store.len()).step_by(batch_size) {
            let end = (start + batch_size).min(store.len());
            let out = if m.is_audio() {
                let specs: Vec<_> = (start..end).map(|p| store.spectrogram(m, p)).collect();
                model.encode_audio(m, &specs, Mode::Eval)?
            } else {
                let imgs = (start..end)
                    .map(|p| store.image_tensor(p, Mode::Eval, &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                model.encode_image(&imgs.iter().collect::<Vec<_>>())?
            };
            rows.extend(out.into_iter().map(|(e, _)| e.values));
        }
        embeddings.insert(m, rows);
    }
    RetrievalLibrary::new(store.ids.clone(), embeddings)
}

/// Embed every item of `split` with all three encoders.
pub fn embed_split(model: &Model<f32>, cfg: &RunConfig, corpus: &Corpus, split: Split) -> Result<RetrievalLibrary> {
    let store = FeatureStore::for_split(corpus, split, &cfg.mel, &cfg.image, &Modality::ALL)?;
    library_from_store(model, &store, cfg.eval.batch_size)
}

/// Restore a model and its run configuration from a training checkpoint. When
/// `expected` is given, its hash must match the checkpoint's.
pub fn load_model(path: &Path, expected: Option<&RunConfig>) -> Result<(Model<f32>, RunConfig, CheckpointMeta)> {
    let (stored, meta) = load_checkpoint(path)?;
    let cfg = match (expected, &meta.config) {
        (Some(cfg), _) => cfg.clone(),
        (None, Some(v)) => RunConfig::from_json(v)?,
        (None, None) => {
            return Err(Error::Malformed(format!(
                "{} carries no run configuration; supply one",
                path.display()
            )))
        }
    };
    let hash = cfg.config_hash();
    if hash != meta.config_hash {
        return Err(Error::ConfigHashMismatch {
            checkpoint: meta.config_hash,
            config: hash,
        });
    }
    let (params, _) = crate::trainer::split_velocity(stored);
    Ok((Model::from_params(&cfg.encoder, params)?, cfg, meta))
}
