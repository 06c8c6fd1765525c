//! Waveform and image preprocessing into fixed-size network inputs.

mod dump;
mod image;
mod media;
mod mel;

pub use self::image::{
    crop_normalize, crop_offset, preprocess_image, resize_short_side, ImageNormConfig, ImageTensor, Mode,
    RgbPixels,
};
pub use dump::{read_feature_dump, read_image_dump, write_feature_dump, write_image_dump};
pub use media::{load_image, load_waveform};
pub use mel::{compute_logmel, frame_count, hz_to_mel, mel_to_hz, LogMel, MelConfig, Spectrogram, Waveform, Window};
