use std::path::Path;
use std::sync::LazyLock;

use image::{Rgb, RgbImage};

use crate::config::RunConfig;
use crate::corpus::Corpus;
use crate::encoders::{Modality, Model, UnpooledEmbedding};
use crate::frontends::{compute_logmel, load_waveform, Mode};
use crate::{Error, Result};

/// Step-by-step dot products between two unpooled sequences. Rows follow the
/// first argument, columns the second.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    /// Row-major, `rows × cols`.
    pub values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    /// Seconds per row step.
    pub row_scale_s: f64,
    /// Seconds per column step.
    pub col_scale_s: f64,
}

impl SimilarityMatrix {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn transpose(&self) -> Self {
        let mut values = vec![0.0; self.values.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                values[c * self.rows + r] = self.get(r, c);
            }
        }
        SimilarityMatrix {
            values,
            rows: self.cols,
            cols: self.rows,
            row_scale_s: self.col_scale_s,
            col_scale_s: self.row_scale_s,
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// `u_a · u_bᵀ`, each step being one row of the unpooled output.
pub fn alignment_matrix(
    u_a: &UnpooledEmbedding,
    u_b: &UnpooledEmbedding,
    a_scale_s: f64,
    b_scale_s: f64,
) -> Result<SimilarityMatrix> {
    if u_a.dim != u_b.dim {
        return Err(Error::Dimension {
            left: u_a.dim,
            right: u_b.dim,
        });
    }
    let mut values = Vec::with_capacity(u_a.steps * u_b.steps);
    for r in 0..u_a.steps {
        let x = u_a.row(r);
        for c in 0..u_b.steps {
            values.push(x.iter().zip(u_b.row(c)).map(|(&p, &q)| p as f64 * q as f64).sum());
        }
    }
    if values.iter().any(|v: &f64| !v.is_finite()) {
        return Err(Error::Shape("alignment matrix has non-finite entries".into()));
    }
    Ok(SimilarityMatrix {
        values,
        rows: u_a.steps,
        cols: u_b.steps,
        row_scale_s: a_scale_s,
        col_scale_s: b_scale_s,
    })
}

/// Output steps that see at least one non-padding frame.
pub fn valid_steps(valid_frames: usize, stride: usize, steps: usize) -> usize {
    valid_frames.div_ceil(stride.max(1)).clamp(1, steps.max(1))
}

fn truncated(u: UnpooledEmbedding, steps: usize) -> UnpooledEmbedding {
    UnpooledEmbedding {
        values: u.values[..steps * u.dim].to_vec(),
        steps,
        dim: u.dim,
    }
}

/// Hindi-by-English alignment matrix for one triple, restricted to the steps
/// covering real (non-padding) audio.
pub fn align_triple(model: &Model<f32>, cfg: &RunConfig, corpus: &Corpus, id: &str) -> Result<SimilarityMatrix> {
    let t = corpus.find(id).ok_or_else(|| Error::UnknownId(id.into()))?;
    let stride = model.config().audio_time_stride();
    let scale = cfg.mel.frame_shift_ms / 1000.0 * stride as f64;
    let mut unpooled = Vec::new();
    for (m, r) in [(Modality::AudioH, &t.audio_h_ref), (Modality::AudioE, &t.audio_e_ref)] {
        let spec = compute_logmel(&load_waveform(&corpus.resolve(r))?, &cfg.mel)?;
        let (_, u) = model
            .encode_audio(m, &[&spec], Mode::Eval)?
            .pop()
            .expect("one item in, one out");
        let keep = valid_steps(spec.valid_frames, stride, u.steps);
        unpooled.push(truncated(u, keep));
    }
    alignment_matrix(&unpooled[0], &unpooled[1], scale, scale)
}

/// Fixed 256-entry black→red→yellow→white ramp.
pub static HOT_RAMP: LazyLock<[[u8; 3]; 256]> = LazyLock::new(|| {
    let mut ramp = [[0u8; 3]; 256];
    for (i, c) in ramp.iter_mut().enumerate() {
        let t = i as f64 / 255.0;
        let ch = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
        *c = [ch(3.0 * t), ch(3.0 * t - 1.0), ch(3.0 * t - 2.0)];
    }
    ramp
});

/// Ramp color for `v` mapped linearly from `[lo, hi]`; a degenerate range
/// maps to mid-scale.
pub fn heat_color(v: f64, lo: f64, hi: f64) -> [u8; 3] {
    let idx = if hi > lo {
        (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as usize
    } else {
        128
    };
    HOT_RAMP[idx]
}

/// Pixels per cell along each axis: the shorter time step gets `base`
/// pixels, the other proportionally more.
fn cell_size(m: &SimilarityMatrix, base: u32) -> (u32, u32) {
    let shortest = m.row_scale_s.min(m.col_scale_s);
    let px = |s: f64| {
        if shortest > 0.0 {
            ((s / shortest) * base as f64).round().max(1.0) as u32
        } else {
            base
        }
    };
    (px(m.row_scale_s), px(m.col_scale_s))
}

/// Write the matrix as a PNG, row 0 at the top and column 0 at the left.
pub fn export_heatmap(m: &SimilarityMatrix, path: &Path) -> Result<()> {
    if m.rows == 0 || m.cols == 0 {
        return Err(Error::Shape("cannot draw an empty matrix".into()));
    }
    let (ch, cw) = cell_size(m, 4);
    let (lo, hi) = m.min_max();
    let img = RgbImage::from_fn(m.cols as u32 * cw, m.rows as u32 * ch, |x, y| {
        Rgb(heat_color(m.get((y / ch) as usize, (x / cw) as usize), lo, hi))
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
}
