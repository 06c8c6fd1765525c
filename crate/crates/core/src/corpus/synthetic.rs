//! Toy corpora with known cross-modal semantics.
//!
//! Each triple draws a set of concept ids. The image paints every concept as
//! a fixed colored shape in a concept-owned grid cell. Each caption plays one
//! short multi-tone signature per concept, in an independently shuffled
//! order; the two languages draw their tones from disjoint frequency sets.
//! Concept ids and time segments are written into the manifest so tests can
//! check retrieval and alignment against ground truth.

use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{write_manifest, Corpus, Segment, Split, Triple, MANIFEST_FILE};
use crate::frontends::{hz_to_mel, mel_to_hz};
use crate::{seed, Error, Result};

const TONE_AMPLITUDE: f64 = 0.2;
const FADE_S: f64 = 0.01;
const LEAD_S: f64 = 0.05;
const TAIL_S: f64 = 0.05;
const POOL_SIZE: usize = 36;
const POOL_FMIN: f64 = 200.0;
const POOL_FMAX: f64 = 6000.0;
const DICTIONARY_SEED: u64 = 0x5eed_d1c7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_triples: usize,
    /// Size of the validation split; defaults to a tenth of `n_triples`.
    pub n_val: Option<usize>,
    pub vocab_size: usize,
    /// Inclusive range of concepts per triple.
    pub concepts_per_item: [usize; 2],
    pub image_size: usize,
    pub tone_duration: f64,
    pub noise_level: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_triples: 100,
            n_val: None,
            vocab_size: 20,
            concepts_per_item: [1, 5],
            image_size: 64,
            tone_duration: 0.3,
            noise_level: 0.05,
            sample_rate: 16000,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.concepts_per_item;
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.n_triples == 0 || self.vocab_size == 0 || self.image_size == 0 || self.sample_rate == 0 {
            return bad("counts must be positive");
        }
        if lo == 0 || lo > hi || hi > self.vocab_size {
            return bad("concepts_per_item must satisfy 1 <= min <= max <= vocab_size");
        }
        if self.n_val() > self.n_triples {
            return bad("n_val exceeds n_triples");
        }
        if !(self.tone_duration > 0.0) || !(self.noise_level >= 0.0) {
            return bad("tone_duration must be positive and noise_level non-negative");
        }
        if self.vocab_size > signature_count() {
            return bad("vocab_size exceeds the number of distinct tone signatures");
        }
        Ok(())
    }

    pub fn n_val(&self) -> usize {
        self.n_val.unwrap_or(self.n_triples / 10)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Language {
    E,
    H,
}

fn signature_count() -> usize {
    let n = POOL_SIZE / 2;
    n * (n - 1) * (n - 2) / 6
}

fn frequency_pool(sample_rate: u32) -> Vec<f64> {
    let fmax = POOL_FMAX.min(0.4 * sample_rate as f64);
    let (lo, hi) = (hz_to_mel(POOL_FMIN), hz_to_mel(fmax));
    (0..POOL_SIZE)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (POOL_SIZE - 1) as f64))
        .collect()
}

/// Tone frequencies (Hz) of `concept`'s signature in `language`.
///
/// English uses the even entries of a mel-spaced pool and Hindi the odd
/// ones, so the two dictionaries never share a frequency.
pub fn signature_frequencies(language: Language, concept: u32, sample_rate: u32) -> Vec<f64> {
    let pool = frequency_pool(sample_rate);
    let parity = match language {
        Language::E => 0,
        Language::H => 1,
    };
    let own: Vec<f64> = pool.into_iter().skip(parity).step_by(2).collect();
    let n = own.len();
    let mut subsets = Vec::with_capacity(signature_count());
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                subsets.push([a, b, c]);
            }
        }
    }
    let mut rng = seed::rng(DICTIONARY_SEED, "synth.dictionary", &[parity as u64]);
    subsets.shuffle(&mut rng);
    subsets[concept as usize].iter().map(|&i| own[i]).collect()
}

fn render_caption(
    spec: &SyntheticSpec,
    language: Language,
    order: &[u32],
    rng: &mut impl Rng,
) -> (Vec<i16>, Vec<Segment>) {
    let sr = spec.sample_rate as f64;
    let lead = (LEAD_S * sr).round() as usize;
    let tail = (TAIL_S * sr).round() as usize;
    let tone = (spec.tone_duration * sr).round() as usize;
    let fade = ((FADE_S * sr).round() as usize).min(tone / 2).max(1);
    let total = lead + tone * order.len() + tail;
    let mut signal = vec![0.0f64; total];
    let mut segments = Vec::with_capacity(order.len());
    for (slot, &concept) in order.iter().enumerate() {
        let start = lead + slot * tone;
        for f in signature_frequencies(language, concept, spec.sample_rate) {
            let w = 2.0 * std::f64::consts::PI * f / sr;
            for n in 0..tone {
                let ramp = if n < fade {
                    0.5 - 0.5 * (std::f64::consts::PI * n as f64 / fade as f64).cos()
                } else if tone - n <= fade {
                    0.5 - 0.5 * (std::f64::consts::PI * (tone - n) as f64 / fade as f64).cos()
                } else {
                    1.0
                };
                signal[start + n] += TONE_AMPLITUDE * ramp * (w * n as f64).sin();
            }
        }
        segments.push(Segment {
            concept,
            start_s: start as f64 / sr,
            end_s: (start + tone) as f64 / sr,
        });
    }
    let noise = Normal::new(0.0, spec.noise_level.max(f64::MIN_POSITIVE)).expect("finite std");
    let pcm = signal
        .into_iter()
        .map(|x| {
            let v = if spec.noise_level > 0.0 { x + noise.sample(rng) } else { x };
            (v.clamp(-1.0, 1.0) * 32767.0).round() as i16
        })
        .collect();
    (pcm, segments)
}

fn concept_color(concept: u32) -> [f64; 3] {
    // golden-ratio hue walk at fixed saturation/value
    let h = (concept as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let (s, v) = (0.85, 0.95);
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

fn inside_shape(shape: u32, u: f64, v: f64) -> bool {
    // u, v in [-1, 1] relative to the shape's box
    match shape % 4 {
        0 => true,
        1 => u * u + v * v <= 1.0,
        2 => v >= -1.0 && v <= 1.0 && u.abs() <= (v + 1.0) / 2.0,
        _ => u.abs() <= 0.3 || v.abs() <= 0.3,
    }
}

fn render_image(spec: &SyntheticSpec, concepts: &[u32], rng: &mut impl Rng) -> image::RgbImage {
    let size = spec.image_size;
    let grid = (spec.vocab_size as f64).sqrt().ceil() as usize;
    let cell = size as f64 / grid as f64;
    let mut px = vec![[128.0f64; 3]; size * size];
    for &c in concepts {
        let (row, col) = (c as usize / grid, c as usize % grid);
        let color = concept_color(c);
        let (cy, cx) = ((row as f64 + 0.5) * cell, (col as f64 + 0.5) * cell);
        let half = 0.4 * cell;
        for y in 0..size {
            for x in 0..size {
                let v = (y as f64 + 0.5 - cy) / half;
                let u = (x as f64 + 0.5 - cx) / half;
                if u.abs() <= 1.0 && v.abs() <= 1.0 && inside_shape(c, u, v) {
                    px[y * size + x] = color;
                }
            }
        }
    }
    let std = spec.noise_level * 255.0;
    let noise = Normal::new(0.0, std.max(f64::MIN_POSITIVE)).expect("finite std");
    let mut img = image::RgbImage::new(size as u32, size as u32);
    for (i, p) in img.pixels_mut().enumerate() {
        for ch in 0..3 {
            let n = if std > 0.0 { noise.sample(rng) } else { 0.0 };
            p.0[ch] = (px[i][ch] + n).round().clamp(0.0, 255.0) as u8;
        }
    }
    img
}

fn write_wav(path: &Path, samples: &[i16], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::AudioFormat {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in samples {
        w.write_sample(s).map_err(to_err)?;
    }
    w.finalize().map_err(to_err)
}

/// Write a synthetic corpus (PNG images, 16-bit mono WAV captions, and
/// `manifest.jsonl`) under `out_dir`. Output is fully determined by `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<Corpus> {
    spec.validate()?;
    for sub in ["images", "audio_e", "audio_h"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let n_train = spec.n_triples - spec.n_val();
    let width = spec.n_triples.to_string().len().max(5);
    let mut triples = Vec::with_capacity(spec.n_triples);
    for i in 0..spec.n_triples {
        let mut rng = seed::rng(spec.seed, "synth.triple", &[i as u64]);
        let [lo, hi] = spec.concepts_per_item;
        let k = rng.random_range(lo..=hi);
        let mut concepts: Vec<u32> = index::sample(&mut rng, spec.vocab_size, k)
            .into_iter()
            .map(|c| c as u32)
            .collect();
        concepts.sort_unstable();
        let mut order_e = concepts.clone();
        order_e.shuffle(&mut rng);
        let mut order_h = concepts.clone();
        order_h.shuffle(&mut rng);

        let id = format!("syn{i:0width$}");
        let image_ref = Path::new("images").join(format!("{id}.png"));
        let audio_e_ref = Path::new("audio_e").join(format!("{id}.wav"));
        let audio_h_ref = Path::new("audio_h").join(format!("{id}.wav"));

        let img = render_image(spec, &concepts, &mut rng);
        let img_path = out_dir.join(&image_ref);
        img.save_with_format(&img_path, image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: img_path.clone(),
                message: e.to_string(),
            })?;
        let (pcm_e, segments_e) = render_caption(spec, Language::E, &order_e, &mut rng);
        let (pcm_h, segments_h) = render_caption(spec, Language::H, &order_h, &mut rng);
        write_wav(&out_dir.join(&audio_e_ref), &pcm_e, spec.sample_rate)?;
        write_wav(&out_dir.join(&audio_h_ref), &pcm_h, spec.sample_rate)?;

        triples.push(Triple {
            id,
            image_ref,
            audio_e_ref,
            audio_h_ref,
            split: if i < n_train { Split::Train } else { Split::Val },
            concepts: Some(concepts),
            segments_e: Some(segments_e),
            segments_h: Some(segments_h),
        });
    }
    let corpus = Corpus::new(out_dir, triples)?;
    write_manifest(&corpus, &out_dir.join(MANIFEST_FILE))?;
    Ok(corpus)
}
