//! Binary feature dumps.
//!
//! Log-mel: `"LMF1"`, u32 n_mels, u32 valid_frames, u32 frames, then
//! `frames × n_mels` f32, all little-endian, row-major.
//! Image: `"IMF1"`, u32 height, u32 width, u32 channels, then HWC f32.

use std::fs;
use std::path::Path;

use super::{ImageTensor, Spectrogram};
use crate::{Error, Result};

fn header(magic: &[u8; 4], dims: [u32; 3], values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + values.len() * 4);
    out.extend_from_slice(magic);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn parse(bytes: &[u8], magic: &[u8; 4]) -> Result<([u32; 3], Vec<f32>)> {
    if bytes.len() < 16 {
        return Err(Error::Malformed("feature dump shorter than its header".into()));
    }
    if &bytes[..4] != magic {
        return Err(Error::BadMagic);
    }
    let u = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let dims = [u(0), u(1), u(2)];
    let body = &bytes[16..];
    if body.len() % 4 != 0 {
        return Err(Error::Malformed("feature dump body is not a whole number of f32".into()));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, values))
}

pub fn write_feature_dump(spec: &Spectrogram, path: &Path) -> Result<()> {
    let bytes = header(
        b"LMF1",
        [spec.n_mels as u32, spec.valid_frames as u32, spec.frames as u32],
        &spec.values,
    );
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_dump(path: &Path) -> Result<Spectrogram> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ([n_mels, valid, frames], values) = parse(&bytes, b"LMF1")?;
    if values.len() != n_mels as usize * frames as usize || valid > frames {
        return Err(Error::Malformed("log-mel dump size disagrees with its header".into()));
    }
    Ok(Spectrogram {
        values,
        n_mels: n_mels as usize,
        frames: frames as usize,
        valid_frames: valid as usize,
    })
}

pub fn write_image_dump(img: &ImageTensor, path: &Path) -> Result<()> {
    let s = img.size as u32;
    fs::write(path, header(b"IMF1", [s, s, 3], &img.values)).map_err(|e| Error::io(path, e))
}

pub fn read_image_dump(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ([h, w, c], values) = parse(&bytes, b"IMF1")?;
    if h != w || c != 3 || values.len() != (h * w * c) as usize {
        return Err(Error::Malformed("image dump size disagrees with its header".into()));
    }
    Ok(ImageTensor { size: h as usize, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logmel_layout_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.lmf");
        let spec = Spectrogram {
            values: vec![1.0, -2.5, 0.0, 0.0],
            n_mels: 2,
            frames: 2,
            valid_frames: 1,
        };
        write_feature_dump(&spec, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"LMF1");
        assert_eq!(&bytes[4..16], &[2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[20..24], &(-2.5f32).to_le_bytes());
        assert_eq!(bytes.len(), 32);
        assert_eq!(read_feature_dump(&p).unwrap(), spec);
        fs::write(&p, b"XXXX\0\0\0\0\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_feature_dump(&p), Err(Error::BadMagic)));
    }
}
