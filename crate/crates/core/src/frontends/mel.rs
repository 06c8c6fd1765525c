use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Mono audio with amplitudes nominally in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hamming,
    Hann,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub n_mels: usize,
    pub fft_size: usize,
    pub window: Window,
    pub mel_fmin: f64,
    /// Upper filterbank edge; `None` means Nyquist.
    pub mel_fmax: Option<f64>,
    pub log_floor: f64,
    pub preemphasis: f64,
    pub target_frames: usize,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: 16000,
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            n_mels: 40,
            fft_size: 512,
            window: Window::Hamming,
            mel_fmin: 20.0,
            mel_fmax: None,
            log_floor: 1e-10,
            preemphasis: 0.97,
            target_frames: 1024,
        }
    }
}

impl MelConfig {
    pub fn win_length(&self) -> usize {
        (self.frame_length_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_length(&self) -> usize {
        (self.frame_shift_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn fmax(&self) -> f64 {
        self.mel_fmax.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("mel config: {m}")));
        if self.sample_rate == 0 || self.n_mels == 0 || self.target_frames == 0 {
            return bad("sample_rate, n_mels and target_frames must be positive".into());
        }
        if self.win_length() == 0 || self.hop_length() == 0 {
            return bad("frame length and shift must cover at least one sample".into());
        }
        if self.fft_size < self.win_length() {
            return bad(format!("fft_size {} < window length {}", self.fft_size, self.win_length()));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.mel_fmin >= 0.0 && self.mel_fmin < self.fmax() && self.fmax() <= nyquist) {
            return bad(format!("need 0 <= mel_fmin < mel_fmax <= {nyquist}"));
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive".into());
        }
        Ok(())
    }
}

/// `target_frames × n_mels` log-mel energies, row-major by frame.
/// Rows at or beyond `valid_frames` are zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub values: Vec<f32>,
    pub n_mels: usize,
    pub frames: usize,
    pub valid_frames: usize,
}

impl Spectrogram {
    pub fn row(&self, frame: usize) -> &[f32] {
        &self.values[frame * self.n_mels..(frame + 1) * self.n_mels]
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Frames produced from `len` samples; inputs shorter than one window are
/// zero-padded to a single frame.
pub fn frame_count(len: usize, win: usize, hop: usize) -> usize {
    if len < win {
        1
    } else {
        1 + (len - win) / hop
    }
}

struct Filter {
    first_bin: usize,
    weights: Vec<f64>,
}

/// Reusable log-mel frontend (window, filterbank, and FFT plan built once).
pub struct LogMel {
    cfg: MelConfig,
    window: Vec<f64>,
    filters: Vec<Filter>,
    fft: Arc<dyn Fft<f64>>,
}

impl LogMel {
    pub fn new(cfg: &MelConfig) -> Result<Self> {
        cfg.validate()?;
        let win = cfg.win_length();
        let window = (0..win)
            .map(|n| {
                let phase = if win > 1 {
                    2.0 * std::f64::consts::PI * n as f64 / (win - 1) as f64
                } else {
                    0.0
                };
                match cfg.window {
                    Window::Hamming => 0.54 - 0.46 * phase.cos(),
                    Window::Hann => 0.5 - 0.5 * phase.cos(),
                }
            })
            .collect();

        let n_bins = cfg.fft_size / 2 + 1;
        let (lo, hi) = (hz_to_mel(cfg.mel_fmin), hz_to_mel(cfg.fmax()));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
        let filters = (0..cfg.n_mels)
            .map(|m| {
                let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
                let w: Vec<f64> = (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= left || f >= right {
                            0.0
                        } else if f <= center {
                            (f - left) / (center - left)
                        } else {
                            (right - f) / (right - center)
                        }
                    })
                    .collect();
                let first = w.iter().position(|&x| x > 0.0).unwrap_or(0);
                let last = w.iter().rposition(|&x| x > 0.0).map_or(first, |l| l + 1);
                Filter {
                    first_bin: first,
                    weights: w[first..last].to_vec(),
                }
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(LogMel {
            cfg: cfg.clone(),
            window,
            filters,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn compute(&self, w: &Waveform) -> Result<Spectrogram> {
        let cfg = &self.cfg;
        if w.samples.is_empty() {
            return Err(Error::EmptyWaveform);
        }
        if w.sample_rate != cfg.sample_rate {
            return Err(Error::SampleRate {
                expected: cfg.sample_rate,
                actual: w.sample_rate,
            });
        }
        let (win, hop) = (cfg.win_length(), cfg.hop_length());
        let mut x: Vec<f64> = Vec::with_capacity(w.samples.len().max(win));
        let mut prev = 0.0f64;
        for (i, &s) in w.samples.iter().enumerate() {
            let s = s as f64;
            x.push(if i == 0 { s } else { s - cfg.preemphasis * prev });
            prev = s;
        }
        if x.len() < win {
            x.resize(win, 0.0);
        }
        let valid = frame_count(x.len(), win, hop).min(cfg.target_frames);
        let floor_log = cfg.log_floor.ln();
        let mut values = vec![0.0f32; cfg.target_frames * cfg.n_mels];
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0f64; cfg.fft_size / 2 + 1];
        for t in 0..valid {
            let frame = &x[t * hop..t * hop + win];
            for (b, (&s, &wv)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *b = Complex::new(s * wv, 0.0);
            }
            buf[win..].fill(Complex::new(0.0, 0.0));
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let row = &mut values[t * cfg.n_mels..(t + 1) * cfg.n_mels];
            for (out, f) in row.iter_mut().zip(&self.filters) {
                let e: f64 = f
                    .weights
                    .iter()
                    .zip(&power[f.first_bin..])
                    .map(|(a, b)| a * b)
                    .sum();
                *out = if e > cfg.log_floor { e.ln() as f32 } else { floor_log as f32 };
            }
        }
        Ok(Spectrogram {
            values,
            n_mels: cfg.n_mels,
            frames: cfg.target_frames,
            valid_frames: valid,
        })
    }

    /// Center frequency (Hz) of mel bin `m`.
    pub fn center_hz(&self, m: usize) -> f64 {
        let (lo, hi) = (hz_to_mel(self.cfg.mel_fmin), hz_to_mel(self.cfg.fmax()));
        mel_to_hz(lo + (hi - lo) * (m + 1) as f64 / (self.cfg.n_mels + 1) as f64)
    }
}

pub fn compute_logmel(w: &Waveform, cfg: &MelConfig) -> Result<Spectrogram> {
    LogMel::new(cfg)?.compute(w)
}
