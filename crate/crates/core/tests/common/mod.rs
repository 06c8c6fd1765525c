//! Helpers shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use vgs::encoders::{is_trainable, EncoderConfig, Modality, Model, ParamSet};
use vgs::frontends::{ImageTensor, Mode, Spectrogram};
use vgs::objectives::{sample_imposters, scenario_loss_generic, MarginRankingParams, ScenarioName, ScenarioSpec};
use vgs::seed;

pub struct GradInputs {
    pub e: Vec<Spectrogram>,
    pub h: Vec<Spectrogram>,
    pub images: Vec<ImageTensor>,
}

pub fn random_inputs(cfg: &EncoderConfig, batch: usize, frames: usize, crop: usize, s: u64) -> GradInputs {
    let mut rng = seed::rng(s, "gradcheck.inputs", &[]);
    let spec = |rng: &mut rand_chacha::ChaCha8Rng| {
        let valid = rng.random_range(frames / 2..=frames);
        let mut values = vec![0.0f32; frames * cfg.n_mels];
        for v in &mut values[..valid * cfg.n_mels] {
            *v = rng.sample::<f32, _>(StandardNormal) * 2.0 - 5.0;
        }
        Spectrogram {
            values,
            n_mels: cfg.n_mels,
            frames,
            valid_frames: valid,
        }
    };
    let e = (0..batch).map(|_| spec(&mut rng)).collect();
    let h = (0..batch).map(|_| spec(&mut rng)).collect();
    let images = (0..batch)
        .map(|_| ImageTensor {
            size: crop,
            values: (0..crop * crop * 3).map(|_| rng.sample(StandardNormal)).collect(),
        })
        .collect();
    GradInputs { e, h, images }
}

/// Scenario loss for a fixed batch and imposter draw, optionally with its
/// parameter gradient.
pub fn loss_and_grad(
    model: &Model<f64>,
    spec: &ScenarioSpec,
    inputs: &GradInputs,
    draw_seed: u64,
    with_grad: bool,
) -> (f64, Option<ParamSet<f64>>) {
    let b = inputs.e.len();
    let mut fwds = Vec::new();
    for m in spec.modalities() {
        let f = match m {
            Modality::AudioE => model.forward_audio(m, &inputs.e.iter().collect::<Vec<_>>(), Mode::Train, with_grad),
            Modality::AudioH => model.forward_audio(m, &inputs.h.iter().collect::<Vec<_>>(), Mode::Train, with_grad),
            Modality::Image => model.forward_image(&inputs.images.iter().collect::<Vec<_>>(), with_grad),
        }
        .unwrap();
        fwds.push(f);
    }
    let emb: BTreeMap<Modality, Vec<Vec<f64>>> = fwds.iter().map(|f| (f.modality, f.pooled.clone())).collect();
    let draw = sample_imposters(b, spec.directed_terms(), draw_seed).unwrap();
    let prm = MarginRankingParams::default();
    if !with_grad {
        return (scenario_loss_generic(spec, &emb, &draw, &prm, None).unwrap(), None);
    }
    let mut eg = BTreeMap::new();
    let loss = scenario_loss_generic(spec, &emb, &draw, &prm, Some(&mut eg)).unwrap();
    let mut grads = model.params().zeros_like();
    for f in &fwds {
        model.backward(f, &eg[&f.modality], &mut grads);
    }
    (loss, Some(grads))
}

#[derive(Debug)]
pub struct GradSample {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Compare analytic gradients with central differences at `count` random
/// coordinates where the loss is smooth. The loss is piecewise linear in any
/// single weight, so a coordinate is accepted only when the left and right
/// one-sided slopes agree (no ReLU, pooling or hinge switch within ±h) and
/// the slope is nonzero.
pub fn gradient_check(
    cfg: &EncoderConfig,
    scenario: ScenarioName,
    count: usize,
    h: f64,
    s: u64,
) -> Vec<GradSample> {
    let spec = ScenarioSpec::new(scenario);
    let mut model: Model<f64> = Model::init(cfg, s).unwrap();
    let inputs = random_inputs(cfg, 4, 64, 32, s);
    let draw_seed = seed::derive(s, "gradcheck.draw", &[]);
    let (l0, grads) = loss_and_grad(&model, &spec, &inputs, draw_seed, true);
    let grads = grads.unwrap();
    let names: Vec<String> = model
        .params()
        .names()
        .filter(|n| is_trainable(n) && spec.modalities().iter().any(|m| m.owns(n)))
        .cloned()
        .collect();
    let mut rng = seed::rng(s, "gradcheck.coords", &[]);
    let mut out = Vec::new();
    let mut attempts = 0;
    while out.len() < count && attempts < 50 * count {
        attempts += 1;
        let name = &names[rng.random_range(0..names.len())];
        let index = rng.random_range(0..model.params().get(name).unwrap().data.len());
        let w0 = model.params().get(name).unwrap().data[index];
        let mut at = |w: f64| {
            model.params_mut().get_mut(name).unwrap().data[index] = w;
            loss_and_grad(&model, &spec, &inputs, draw_seed, false).0
        };
        let (lp, lm) = (at(w0 + h), at(w0 - h));
        at(w0);
        let (right, left) = ((lp - l0) / h, (l0 - lm) / h);
        let numeric = (lp - lm) / (2.0 * h);
        let scale = right.abs().max(left.abs());
        if scale < 1e-6 || (right - left).abs() > 1e-7 * scale.max(1.0) {
            continue;
        }
        let analytic = grads.get(name).unwrap().data[index];
        let rel_err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
        out.push(GradSample {
            name: name.clone(),
            index,
            analytic,
            numeric,
            rel_err,
        });
    }
    out
}

/// Log-mel energies computed the slow way: explicit pre-emphasis, a
/// symmetric window, an O(N²) DFT per frame and HTK triangular filters.
/// Returns `valid_frames` rows of `n_mels` values.
pub fn brute_force_logmel(samples: &[f32], cfg: &vgs::frontends::MelConfig) -> Vec<Vec<f64>> {
    use std::f64::consts::PI;
    use vgs::frontends::Window;
    let sr = cfg.sample_rate as f64;
    let win = (cfg.frame_length_ms * sr / 1000.0).round() as usize;
    let hop = (cfg.frame_shift_ms * sr / 1000.0).round() as usize;
    let n = cfg.fft_size;
    let mut x: Vec<f64> = (0..samples.len())
        .map(|i| {
            let cur = samples[i] as f64;
            if i == 0 {
                cur
            } else {
                cur - cfg.preemphasis * samples[i - 1] as f64
            }
        })
        .collect();
    while x.len() < win {
        x.push(0.0);
    }
    let frames = (1 + (x.len() - win) / hop).min(cfg.target_frames);
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let fmax = cfg.mel_fmax.unwrap_or(sr / 2.0);
    let (lo, hi) = (mel(cfg.mel_fmin), mel(fmax));
    let edge = |i: usize| inv(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64);
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let seg: Vec<f64> = (0..win)
            .map(|i| {
                let ph = 2.0 * PI * i as f64 / (win - 1) as f64;
                let w = match cfg.window {
                    Window::Hamming => 0.54 - 0.46 * ph.cos(),
                    Window::Hann => 0.5 - 0.5 * ph.cos(),
                };
                x[t * hop + i] * w
            })
            .collect();
        let power: Vec<f64> = (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &v) in seg.iter().enumerate() {
                    let ang = -2.0 * PI * (k * i % n) as f64 / n as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                re * re + im * im
            })
            .collect();
        let row = (0..cfg.n_mels)
            .map(|m| {
                let (l, c, r) = (edge(m), edge(m + 1), edge(m + 2));
                let e: f64 = power
                    .iter()
                    .enumerate()
                    .map(|(k, p)| {
                        let f = k as f64 * sr / n as f64;
                        let w = if f > l && f <= c {
                            (f - l) / (c - l)
                        } else if f > c && f < r {
                            (r - f) / (r - c)
                        } else {
                            0.0
                        };
                        w * p
                    })
                    .sum();
                e.max(cfg.log_floor).ln()
            })
            .collect();
        out.push(row);
    }
    out
}

/// Random clip: a few sinusoids plus noise, length in samples.
pub fn random_clip(len: usize, s: u64) -> Vec<f32> {
    let mut rng = seed::rng(s, "clip", &[]);
    let tones: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.random_range(100.0..7000.0), rng.random_range(0.01..0.3), rng.random_range(0.0..6.3)))
        .collect();
    (0..len)
        .map(|i| {
            let t = i as f64 / 16000.0;
            let v: f64 = tones
                .iter()
                .map(|&(f, a, p)| a * (2.0 * std::f64::consts::PI * f * t + p).sin())
                .sum::<f64>()
                + 0.02 * rng.sample::<f64, _>(StandardNormal);
            v as f32
        })
        .collect()
}
