use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalePreset {
    Desk,
    Paper,
}

/// One trunk layer. Kernels, strides and padding are `[height, width]`;
/// for audio the height axis is frequency and the width axis is time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: [usize; 2],
        #[serde(default = "unit")]
        stride: [usize; 2],
        #[serde(default)]
        padding: [usize; 2],
        #[serde(default = "yes")]
        relu: bool,
    },
    MaxPool {
        window: [usize; 2],
        /// Defaults to the window (non-overlapping).
        #[serde(default)]
        stride: Option<[usize; 2]>,
        #[serde(default)]
        padding: [usize; 2],
    },
}

fn unit() -> [usize; 2] {
    [1, 1]
}

fn yes() -> bool {
    true
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: [usize; 2], padding: [usize; 2]) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel,
            stride: [1, 1],
            padding,
            relu: true,
        }
    }

    pub fn pool(window: [usize; 2], stride: [usize; 2], padding: [usize; 2]) -> Self {
        LayerSpec::MaxPool {
            window,
            stride: Some(stride),
            padding,
        }
    }

    pub fn stride(&self) -> [usize; 2] {
        match self {
            LayerSpec::Conv { stride, .. } => *stride,
            LayerSpec::MaxPool { window, stride, .. } => stride.unwrap_or(*window),
        }
    }

    /// Output `(channels, height, width)` for an input of the given shape.
    pub fn output_shape(&self, (c, h, w): (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let (kernel, padding, channels) = match self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                padding,
                ..
            } => (*kernel, *padding, *out_channels),
            LayerSpec::MaxPool { window, padding, .. } => (*window, *padding, c),
        };
        let s = self.stride();
        let dim = |n: usize, k: usize, s: usize, p: usize| {
            (n + 2 * p)
                .checked_sub(k)
                .map(|x| x / s + 1)
                .ok_or_else(|| Error::Shape(format!("input extent {n} (padding {p}) smaller than kernel {k}")))
        };
        Ok((channels, dim(h, kernel[0], s[0], padding[0])?, dim(w, kernel[1], s[1], padding[1])?))
    }

    fn check(&self) -> Result<()> {
        let ok = match self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                *out_channels > 0
                    && kernel.iter().all(|&k| k > 0)
                    && stride.iter().all(|&s| s > 0)
                    && padding.iter().zip(kernel).all(|(p, k)| p < k)
            }
            LayerSpec::MaxPool { window, padding, .. } => {
                window.iter().all(|&k| k > 0)
                    && self.stride().iter().all(|&s| s > 0)
                    && padding.iter().zip(window).all(|(p, k)| p < k)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid layer {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub scale_preset: ScalePreset,
    pub embed_dim: usize,
    pub n_mels: usize,
    pub front_batchnorm: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub audio_trunk: Vec<LayerSpec>,
    pub image_trunk: Vec<LayerSpec>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::desk()
    }
}

fn audio_trunk(channels: [usize; 4], n_mels: usize) -> Vec<LayerSpec> {
    let pool = LayerSpec::pool([1, 3], [1, 2], [0, 1]);
    vec![
        LayerSpec::conv(channels[0], [n_mels, 1], [0, 0]),
        LayerSpec::conv(channels[1], [1, 11], [0, 5]),
        pool.clone(),
        LayerSpec::conv(channels[2], [1, 17], [0, 8]),
        pool.clone(),
        LayerSpec::conv(channels[3], [1, 17], [0, 8]),
        pool,
    ]
}

impl EncoderConfig {
    /// Small trunks trainable on one CPU core: audio channels (16, 32, 64, 64),
    /// a four-block image stack for 64×64 inputs, d = 64.
    pub fn desk() -> Self {
        let pool = LayerSpec::pool([2, 2], [2, 2], [0, 0]);
        let mut image_trunk = Vec::new();
        for c in [8, 16, 32, 64] {
            image_trunk.push(LayerSpec::conv(c, [3, 3], [1, 1]));
            image_trunk.push(pool.clone());
        }
        EncoderConfig {
            scale_preset: ScalePreset::Desk,
            embed_dim: 64,
            n_mels: 40,
            front_batchnorm: true,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            audio_trunk: audio_trunk([16, 32, 64, 64], 40),
            image_trunk,
        }
    }

    /// Full-size shapes: audio channels (128, 256, 512, 512), the VGG16
    /// convolutional stack through conv5_3 (224 → 14×14×512), d = 2048.
    pub fn paper() -> Self {
        let pool = LayerSpec::pool([2, 2], [2, 2], [0, 0]);
        let mut image_trunk = Vec::new();
        for (block, (c, reps)) in [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)].into_iter().enumerate() {
            for _ in 0..reps {
                image_trunk.push(LayerSpec::conv(c, [3, 3], [1, 1]));
            }
            if block < 4 {
                image_trunk.push(pool.clone());
            }
        }
        EncoderConfig {
            scale_preset: ScalePreset::Paper,
            embed_dim: 2048,
            n_mels: 40,
            front_batchnorm: true,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            audio_trunk: audio_trunk([128, 256, 512, 512], 40),
            image_trunk,
        }
    }

    pub fn preset(p: ScalePreset) -> Self {
        match p {
            ScalePreset::Desk => Self::desk(),
            ScalePreset::Paper => Self::paper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.n_mels == 0 {
            return Err(Error::Config("embed_dim and n_mels must be positive".into()));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("bn_eps must be positive and bn_momentum in [0, 1]".into()));
        }
        for l in self.audio_trunk.iter().chain(&self.image_trunk) {
            l.check()?;
        }
        match self.audio_trunk.first() {
            Some(LayerSpec::Conv { kernel, .. }) if kernel[0] == self.n_mels => {}
            _ => {
                return Err(Error::Config(format!(
                    "audio trunk must start with a convolution spanning all {} mel bins",
                    self.n_mels
                )))
            }
        }
        Ok(())
    }

    /// Audio trunk output `(channels, 1, steps)` for `frames` input frames.
    pub fn audio_trunk_shape(&self, frames: usize) -> Result<(usize, usize, usize)> {
        trunk_shape(&self.audio_trunk, (1, self.n_mels, frames))
    }

    /// Image trunk output `(channels, rows, cols)` for a square input.
    pub fn image_trunk_shape(&self, size: usize) -> Result<(usize, usize, usize)> {
        trunk_shape(&self.image_trunk, (3, size, size))
    }

    /// Product of the audio trunk's strides along time.
    pub fn audio_time_stride(&self) -> usize {
        self.audio_trunk.iter().map(|l| l.stride()[1]).product()
    }

    /// Product of the image trunk's strides along each spatial axis.
    pub fn image_stride(&self) -> [usize; 2] {
        self.image_trunk
            .iter()
            .fold([1, 1], |acc, l| [acc[0] * l.stride()[0], acc[1] * l.stride()[1]])
    }
}

pub(crate) fn trunk_shape(trunk: &[LayerSpec], input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
    trunk.iter().try_fold(input, |s, l| l.output_shape(s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        EncoderConfig::desk().validate().unwrap();
        EncoderConfig::paper().validate().unwrap();
    }

    #[test]
    fn paper_image_trunk_is_14x14x512() {
        assert_eq!(EncoderConfig::paper().image_trunk_shape(224).unwrap(), (512, 14, 14));
    }

    #[test]
    fn desk_image_grid_matches_declared_stride() {
        let cfg = EncoderConfig::desk();
        let [sh, sw] = cfg.image_stride();
        let (c, h, w) = cfg.image_trunk_shape(64).unwrap();
        assert_eq!((h, w), (64 / sh, 64 / sw));
        assert_eq!(c, 64);
    }

    #[test]
    fn audio_first_conv_spans_frequency() {
        for cfg in [EncoderConfig::desk(), EncoderConfig::paper()] {
            match &cfg.audio_trunk[0] {
                LayerSpec::Conv { kernel, .. } => assert_eq!(kernel[0], 40),
                other => panic!("{other:?}"),
            }
            assert_eq!(cfg.audio_trunk_shape(1024).unwrap().1, 1);
        }
        let mut bad = EncoderConfig::desk();
        bad.audio_trunk.remove(0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn layer_specs_parse_from_toml() {
        let text = r#"
            [[layers]]
            type = "conv"
            out_channels = 4
            kernel = [3, 3]
            padding = [1, 1]

            [[layers]]
            type = "max_pool"
            window = [2, 2]
        "#;
        #[derive(Deserialize)]
        struct W {
            layers: Vec<LayerSpec>,
        }
        let w: W = toml::from_str(text).unwrap();
        assert_eq!(w.layers[0], LayerSpec::conv(4, [3, 3], [1, 1]));
        assert_eq!(w.layers[1].stride(), [2, 2]);
        let bad = "[[layers]]\ntype = \"conv\"\nout_channels = 4\nkernel = [3, 3]\nbogus = 1\n";
        assert!(toml::from_str::<W>(bad).is_err());
    }
}
