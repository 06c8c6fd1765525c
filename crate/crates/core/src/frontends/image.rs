use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Interleaved 8-bit RGB, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbPixels {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageNormConfig {
    pub resize_short_side: usize,
    pub crop: usize,
    pub channel_means: [f64; 3],
    pub channel_stds: [f64; 3],
}

impl Default for ImageNormConfig {
    fn default() -> Self {
        ImageNormConfig {
            resize_short_side: 256,
            crop: 224,
            channel_means: [0.485, 0.456, 0.406],
            channel_stds: [0.229, 0.224, 0.225],
        }
    }
}

impl ImageNormConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 || self.crop > self.resize_short_side {
            return Err(Error::Config(format!(
                "image config: need 0 < crop ({}) <= resize_short_side ({})",
                self.crop, self.resize_short_side
            )));
        }
        if self.channel_stds.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("image config: channel stds must be positive".into()));
        }
        Ok(())
    }
}

/// `size × size × 3` channel-normalized values, row-major HWC.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pub size: usize,
    pub values: Vec<f32>,
}

/// Bilinear resize so the shorter side equals `short_side`, keeping aspect
/// ratio. Returns HWC floats in byte units.
pub fn resize_short_side(px: &RgbPixels, short_side: usize) -> Result<(usize, usize, Vec<f32>)> {
    let (h, w) = (px.height, px.width);
    if h == 0 || w == 0 || px.data.len() != h * w * 3 {
        return Err(Error::DegenerateImage { height: h, width: w });
    }
    let (oh, ow) = if h <= w {
        (short_side, ((w as f64 * short_side as f64 / h as f64).round() as usize).max(short_side))
    } else {
        (((h as f64 * short_side as f64 / w as f64).round() as usize).max(short_side), short_side)
    };
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let coord = |o: usize, scale: f64, n: usize| {
        let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..ow).map(|x| coord(x, sx, w)).collect();
    let mut out = vec![0.0f32; oh * ow * 3];
    for y in 0..oh {
        let (y0, y1, fy) = coord(y, sy, h);
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..3 {
                let p = |yy: usize, xx: usize| px.data[(yy * w + xx) * 3 + c] as f64;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out[(y * ow + x) * 3 + c] = (top * (1.0 - fy) + bot * fy) as f32;
            }
        }
    }
    Ok((oh, ow, out))
}

/// Top-left corner of the crop window: centered in eval mode, uniform in
/// train mode.
pub fn crop_offset(height: usize, width: usize, crop: usize, mode: Mode, rng: &mut impl Rng) -> (usize, usize) {
    match mode {
        Mode::Eval => ((height - crop) / 2, (width - crop) / 2),
        Mode::Train => (rng.random_range(0..=height - crop), rng.random_range(0..=width - crop)),
    }
}

/// Crop a resized HWC image and map each channel to `(v/255 − mean)/std`.
pub fn crop_normalize(
    height: usize,
    width: usize,
    resized: &[f32],
    cfg: &ImageNormConfig,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<ImageTensor> {
    let c = cfg.crop;
    if height < c || width < c {
        return Err(Error::Shape(format!("{height}x{width} image is smaller than crop {c}")));
    }
    let (oy, ox) = crop_offset(height, width, c, mode, rng);
    let mut values = Vec::with_capacity(c * c * 3);
    for y in 0..c {
        for x in 0..c {
            let base = ((oy + y) * width + ox + x) * 3;
            for ch in 0..3 {
                let v = resized[base + ch] as f64 / 255.0;
                values.push(((v - cfg.channel_means[ch]) / cfg.channel_stds[ch]) as f32);
            }
        }
    }
    Ok(ImageTensor { size: c, values })
}

pub fn preprocess_image(px: &RgbPixels, cfg: &ImageNormConfig, mode: Mode, seed: u64) -> Result<ImageTensor> {
    cfg.validate()?;
    let (h, w, resized) = resize_short_side(px, cfg.resize_short_side)?;
    let mut rng = seed::rng(seed, "crop", &[]);
    crop_normalize(h, w, &resized, cfg, mode, &mut rng)
}
