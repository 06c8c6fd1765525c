//! Seeded SGD over a scenario with a two-round step-decay schedule.
//!
//! Within a round the learning rate is divided by `decay_factor` every
//! `decay_every` epochs; each new round restarts from the base rate.
//! All randomness (batch order, imposters, crops) is derived from the run
//! seed and the epoch/batch indices, so an interrupted run resumed from a
//! checkpoint continues exactly as the uninterrupted run would.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::{batch_indices, Corpus, Split};
use crate::encoders::{is_trainable, load_checkpoint, save_checkpoint, CheckpointMeta, Modality, Model, ParamSet};
use crate::evaluation::{evaluate_all_directions, library_from_store, RecallSummary};
use crate::features::FeatureStore;
use crate::frontends::Mode;
use crate::objectives::{sample_imposters, scenario_loss_generic, ScenarioName, ScenarioSpec};
use crate::{seed, Error, Result};

const VELOCITY_PREFIX: &str = "velocity/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub scenario: ScenarioName,
    /// `None` picks 0.001, or 0.01 for the audio-only `e-h` scenario, times
    /// `lr_scale`.
    pub base_lr: Option<f64>,
    pub lr_scale: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub epochs_per_round: usize,
    pub rounds: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Validation recall every this many epochs; 0 disables.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scenario: ScenarioName::HEIH,
            base_lr: None,
            lr_scale: 1.0,
            decay_factor: 10.0,
            decay_every: 30,
            epochs_per_round: 90,
            rounds: 2,
            batch_size: 128,
            seed: 0,
            momentum: 0.0,
            weight_decay: 0.0,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train config: {m}")));
        if self.decay_every == 0 || self.epochs_per_round == 0 || self.rounds == 0 {
            return bad("decay_every, epochs_per_round and rounds must be positive");
        }
        if self.decay_every > self.epochs_per_round {
            return bad("decay_every must not exceed epochs_per_round");
        }
        if self.batch_size < 2 {
            return Err(Error::BatchTooSmall(self.batch_size));
        }
        if !(self.decay_factor > 0.0) || !(self.lr_scale >= 0.0) || !(self.effective_base_lr() >= 0.0) {
            return bad("decay_factor must be positive, lr_scale and base_lr non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must be in [0, 1) and weight_decay non-negative");
        }
        Ok(())
    }

    pub fn effective_base_lr(&self) -> f64 {
        self.base_lr.unwrap_or(
            self.lr_scale
                * match self.scenario {
                    ScenarioName::EH => 0.01,
                    _ => 0.001,
                },
        )
    }

    pub fn total_epochs(&self) -> usize {
        self.rounds * self.epochs_per_round
    }
}

/// Learning rate for a 1-based global epoch index.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    let max = cfg.total_epochs();
    if epoch == 0 || epoch > max {
        return Err(Error::EpochOutOfRange { epoch, max });
    }
    let in_round = (epoch - 1) % cfg.epochs_per_round + 1;
    let steps = (in_round - 1) / cfg.decay_every;
    Ok(cfg.effective_base_lr() / cfg.decay_factor.powi(steps as i32))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<BTreeMap<String, RecallSummary>>,
    pub wall_time_s: f64,
}

/// Runtime knobs that do not affect results.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Where `epoch_%04d.ckpt` files and `train_log.jsonl` go; none disables
    /// writing.
    pub out_dir: Option<PathBuf>,
    /// Echo each epoch log as a JSON line on stdout.
    pub echo: bool,
    /// Stop after this global epoch (for interrupted runs).
    pub stop_after: Option<usize>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub logs: Vec<EpochLog>,
    /// Last global epoch completed (0 when nothing ran).
    pub epoch: usize,
    pub last_checkpoint: Option<PathBuf>,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

/// Train from a fresh seeded initialization.
pub fn train(cfg: &RunConfig, corpus: &Corpus, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = Model::init(&cfg.encoder, seed::derive(cfg.train.seed, "init", &[]))?;
    run(cfg, corpus, opts, model, None, 1)
}

/// Continue a run from one of its checkpoints. The checkpoint's config hash
/// must equal `cfg`'s.
pub fn resume(checkpoint: &Path, cfg: &RunConfig, corpus: &Corpus, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (stored, meta) = load_checkpoint(checkpoint)?;
    let hash = cfg.config_hash();
    if meta.config_hash != hash {
        return Err(Error::ConfigHashMismatch {
            checkpoint: meta.config_hash,
            config: hash,
        });
    }
    let (params, velocity) = split_velocity(stored);
    let model = Model::from_params(&cfg.encoder, params)?;
    if meta.epoch >= cfg.train.total_epochs() {
        return Ok(TrainOutcome {
            model,
            logs: Vec::new(),
            epoch: meta.epoch,
            last_checkpoint: Some(checkpoint.to_path_buf()),
        });
    }
    run(cfg, corpus, opts, model, velocity, meta.epoch + 1)
}

pub(crate) fn split_velocity(stored: ParamSet<f32>) -> (ParamSet<f32>, Option<ParamSet<f32>>) {
    let mut params = ParamSet::new();
    let mut velocity = ParamSet::new();
    for (name, t) in stored.iter() {
        match name.strip_prefix(VELOCITY_PREFIX) {
            Some(rest) => velocity.insert(rest, t.clone()),
            None => params.insert(name.clone(), t.clone()),
        }
    }
    let velocity = (!velocity.is_empty()).then_some(velocity);
    (params, velocity)
}

/// State for one SGD step on one batch.
struct StepInputs<'a> {
    store: &'a FeatureStore,
    positions: Vec<usize>,
}

/// Forward the batch through every scenario modality, compute the scenario
/// loss and its gradient, and return the loss with per-modality forward
/// passes and parameter gradients.
fn batch_loss_and_grads(
    model: &Model<f32>,
    spec: &ScenarioSpec,
    cfg: &RunConfig,
    inputs: &StepInputs<'_>,
    crop_seed: u64,
    draw_seed: u64,
) -> Result<(f64, Vec<crate::encoders::Forward<f32>>, ParamSet<f32>)> {
    let b = inputs.positions.len();
    let mut forwards = Vec::new();
    for m in spec.modalities() {
        let fwd = if m.is_audio() {
            let specs: Vec<_> = inputs
                .positions
                .iter()
                .map(|&p| inputs.store.spectrogram(m, p))
                .collect();
            model.forward_audio(m, &specs, Mode::Train, true)?
        } else {
            let mut rng = seed::rng(crop_seed, "crops", &[]);
            let imgs = inputs
                .positions
                .iter()
                .map(|&p| inputs.store.image_tensor(p, Mode::Train, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<_> = imgs.iter().collect();
            model.forward_image(&refs, true)?
        };
        forwards.push(fwd);
    }
    let emb: BTreeMap<Modality, Vec<Vec<f32>>> = forwards.iter().map(|f| (f.modality, f.pooled.clone())).collect();
    let draw = sample_imposters(b, spec.directed_terms(), draw_seed)?;
    let mut egrads = BTreeMap::new();
    let loss = scenario_loss_generic(spec, &emb, &draw, &cfg.objective, Some(&mut egrads))?;
    let mut grads = model.params().zeros_like();
    for f in &forwards {
        model.backward(f, &egrads[&f.modality], &mut grads);
    }
    Ok((loss, forwards, grads))
}

fn sgd_update(
    model: &mut Model<f32>,
    grads: &ParamSet<f32>,
    velocity: &mut Option<ParamSet<f32>>,
    modalities: &[Modality],
    lr: f64,
    cfg: &TrainConfig,
) {
    let lr = lr as f32;
    let (mu, wd) = (cfg.momentum as f32, cfg.weight_decay as f32);
    let touched = |name: &str| is_trainable(name) && modalities.iter().any(|m| m.owns(name));
    if mu > 0.0 && velocity.is_none() {
        *velocity = Some(grads.zeros_like());
    }
    for (name, p) in model.params_mut().iter_mut() {
        if !touched(name) {
            continue;
        }
        let g = &grads.get(name).expect("gradient for every parameter").data;
        match velocity.as_mut() {
            Some(vel) if mu > 0.0 => {
                let v = &mut vel.get_mut(name).expect("velocity for every parameter").data;
                for ((w, &gi), vi) in p.data.iter_mut().zip(g).zip(v.iter_mut()) {
                    *vi = mu * *vi + gi + wd * *w;
                    *w -= lr * *vi;
                }
            }
            _ => {
                for (w, &gi) in p.data.iter_mut().zip(g) {
                    *w -= lr * (gi + wd * *w);
                }
            }
        }
    }
}

fn run(
    cfg: &RunConfig,
    corpus: &Corpus,
    opts: &TrainOptions,
    mut model: Model<f32>,
    mut velocity: Option<ParamSet<f32>>,
    first_epoch: usize,
) -> Result<TrainOutcome> {
    let tc = &cfg.train;
    let spec = ScenarioSpec::new(tc.scenario);
    let modalities = spec.modalities();
    if corpus.n_train < tc.batch_size {
        return Err(Error::Config(format!(
            "training split has {} triples, fewer than batch size {}",
            corpus.n_train, tc.batch_size
        )));
    }
    let train_store = FeatureStore::for_split(corpus, Split::Train, &cfg.mel, &cfg.image, &modalities)?;
    let val_store = if tc.eval_every > 0 && corpus.n_val >= 2 {
        Some(FeatureStore::for_split(corpus, Split::Val, &cfg.mel, &cfg.image, &Modality::ALL)?)
    } else {
        None
    };
    let position: HashMap<usize, usize> = train_store.items.iter().enumerate().map(|(p, &i)| (i, p)).collect();
    let hash = cfg.config_hash();
    let config_json = cfg.to_json();
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut logs = Vec::new();
    let mut last_checkpoint = None;
    let mut epoch_done = first_epoch - 1;
    let last = opts.stop_after.unwrap_or(usize::MAX).min(tc.total_epochs());
    for epoch in first_epoch..=last {
        let started = Instant::now();
        let lr = lr_at_epoch(tc, epoch)?;
        let e = epoch as u64;
        let batches = batch_indices(corpus, Split::Train, tc.batch_size, seed::derive(tc.seed, "epoch", &[e]))?;
        let mut total = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let inputs = StepInputs {
                store: &train_store,
                positions: batch.iter().map(|i| position[i]).collect(),
            };
            let bi = bi as u64;
            let (loss, forwards, grads) = batch_loss_and_grads(
                &model,
                &spec,
                cfg,
                &inputs,
                seed::derive(tc.seed, "crops", &[e, bi]),
                seed::derive(tc.seed, "imposters", &[e, bi]),
            )?;
            for f in &forwards {
                model.update_running_stats(f);
            }
            sgd_update(&mut model, &grads, &mut velocity, &modalities, lr, tc);
            total += loss;
        }
        let mean_loss = total / batches.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean_loss });
        }
        let recall = match &val_store {
            Some(store) if epoch % tc.eval_every == 0 || epoch == tc.total_epochs() => {
                let lib = library_from_store(&model, store, cfg.eval.batch_size)?;
                let ks: Vec<usize> = cfg.eval.ks.iter().copied().filter(|&k| k <= lib.len()).collect();
                Some(
                    evaluate_all_directions(&lib, &ks)?
                        .into_iter()
                        .map(|r| (r.direction.key(), RecallSummary::from(&r)))
                        .collect(),
                )
            }
            _ => None,
        };
        let log = EpochLog {
            epoch,
            lr,
            mean_loss,
            recall,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        let line = serde_json::to_string(&log).map_err(|e| Error::Serde(e.to_string()))?;
        if opts.echo {
            println!("{line}");
        }
        if let Some(dir) = &opts.out_dir {
            let path = dir.join(checkpoint_name(epoch));
            let mut stored = model.params().clone();
            if let Some(v) = &velocity {
                for (name, t) in v.iter() {
                    stored.insert(format!("{VELOCITY_PREFIX}{name}"), t.clone());
                }
            }
            let meta = CheckpointMeta {
                config_hash: hash.clone(),
                epoch,
                scenario: tc.scenario.as_str().into(),
                seed: tc.seed,
                config: Some(config_json.clone()),
            };
            save_checkpoint(&path, &stored, &meta)?;
            let log_path = dir.join("train_log.jsonl");
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&log_path)
                .map_err(|e| Error::io(&log_path, e))?;
            writeln!(f, "{line}").map_err(|e| Error::io(&log_path, e))?;
            last_checkpoint = Some(path);
        }
        logs.push(log);
        epoch_done = epoch;
    }
    Ok(TrainOutcome {
        model,
        logs,
        epoch: epoch_done,
        last_checkpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_schedule() {
        let cfg = TrainConfig::default();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-15 * b;
        assert!(close(lr_at_epoch(&cfg, 1).unwrap(), 0.001));
        assert!(close(lr_at_epoch(&cfg, 30).unwrap(), 0.001));
        assert!(close(lr_at_epoch(&cfg, 31).unwrap(), 0.0001));
        assert!(close(lr_at_epoch(&cfg, 61).unwrap(), 0.00001));
        assert!(close(lr_at_epoch(&cfg, 90).unwrap(), 0.00001));
        assert!(close(lr_at_epoch(&cfg, 91).unwrap(), 0.001));
        let eh = TrainConfig {
            scenario: ScenarioName::EH,
            ..TrainConfig::default()
        };
        assert!(close(lr_at_epoch(&eh, 1).unwrap(), 0.01));
        assert!(matches!(lr_at_epoch(&cfg, 0), Err(Error::EpochOutOfRange { .. })));
        assert!(matches!(lr_at_epoch(&cfg, 181), Err(Error::EpochOutOfRange { max: 180, .. })));
    }

    #[test]
    fn schedule_is_periodic_with_three_levels() {
        let cfg = TrainConfig::default();
        let mut levels: Vec<u64> = Vec::new();
        for e in 1..=180 {
            let lr = lr_at_epoch(&cfg, e).unwrap();
            if e > 90 {
                assert_eq!(lr, lr_at_epoch(&cfg, e - 90).unwrap());
            }
            if !levels.contains(&lr.to_bits()) {
                levels.push(lr.to_bits());
            }
        }
        assert_eq!(levels.len(), 3);
    }

    #[test]
    fn invalid_configs() {
        let c = TrainConfig { decay_every: 100, ..Default::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { batch_size: 1, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
