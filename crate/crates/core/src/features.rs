//! In-memory network inputs for a set of corpus items.

use rand::Rng;

use crate::corpus::{Corpus, Split};
use crate::encoders::Modality;
use crate::frontends::{
    crop_normalize, load_image, load_waveform, resize_short_side, ImageNormConfig, ImageTensor, LogMel, MelConfig,
    Mode, Spectrogram,
};
use crate::{Error, Result};

/// Resized (not yet cropped) image, HWC floats in byte units.
#[derive(Clone, Debug)]
pub struct ResizedImage {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

/// Spectrograms and resized images for a list of corpus items, loaded once.
/// Modalities not requested are left empty.
#[derive(Clone, Debug)]
pub struct FeatureStore {
    /// Corpus indices, in store order.
    pub items: Vec<usize>,
    pub ids: Vec<String>,
    pub audio_e: Vec<Spectrogram>,
    pub audio_h: Vec<Spectrogram>,
    pub images: Vec<ResizedImage>,
    pub image_cfg: ImageNormConfig,
}

impl FeatureStore {
    pub fn build(
        corpus: &Corpus,
        items: &[usize],
        mel: &MelConfig,
        image_cfg: &ImageNormConfig,
        modalities: &[Modality],
    ) -> Result<Self> {
        image_cfg.validate()?;
        let frontend = LogMel::new(mel)?;
        let want = |m| modalities.contains(&m);
        let mut store = FeatureStore {
            items: items.to_vec(),
            ids: items.iter().map(|&i| corpus.triples[i].id.clone()).collect(),
            audio_e: Vec::new(),
            audio_h: Vec::new(),
            images: Vec::new(),
            image_cfg: image_cfg.clone(),
        };
        for &i in items {
            let t = corpus.triples.get(i).ok_or_else(|| Error::UnknownId(format!("#{i}")))?;
            if want(Modality::AudioE) {
                store.audio_e.push(frontend.compute(&load_waveform(&corpus.resolve(&t.audio_e_ref))?)?);
            }
            if want(Modality::AudioH) {
                store.audio_h.push(frontend.compute(&load_waveform(&corpus.resolve(&t.audio_h_ref))?)?);
            }
            if want(Modality::Image) {
                let px = load_image(&corpus.resolve(&t.image_ref))?;
                let (height, width, values) = resize_short_side(&px, image_cfg.resize_short_side)?;
                store.images.push(ResizedImage { height, width, values });
            }
        }
        Ok(store)
    }

    pub fn for_split(
        corpus: &Corpus,
        split: Split,
        mel: &MelConfig,
        image_cfg: &ImageNormConfig,
        modalities: &[Modality],
    ) -> Result<Self> {
        let items = corpus.split_indices(split);
        if items.is_empty() {
            return Err(Error::EmptySplit(split.as_str().into()));
        }
        Self::build(corpus, &items, mel, image_cfg, modalities)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Store position of corpus index `corpus_idx`.
    pub fn position(&self, corpus_idx: usize) -> Option<usize> {
        self.items.iter().position(|&i| i == corpus_idx)
    }

    pub fn spectrogram(&self, m: Modality, pos: usize) -> &Spectrogram {
        match m {
            Modality::AudioE => &self.audio_e[pos],
            Modality::AudioH => &self.audio_h[pos],
            Modality::Image => panic!("images have no spectrogram"),
        }
    }

    pub fn image_tensor(&self, pos: usize, mode: Mode, rng: &mut impl Rng) -> Result<ImageTensor> {
        let r = &self.images[pos];
        crop_normalize(r.height, r.width, &r.values, &self.image_cfg, mode, rng)
    }
}
