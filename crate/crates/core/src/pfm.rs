//! Portable Float Map reading and writing.
//!
//! Files are written little-endian (negative scale) with rows stored
//! bottom-to-top. Big-endian files are accepted on read.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::grid::{Grid, Image, Rgb};

#[derive(Debug, Error)]
pub enum PfmError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("truncated: expected {expected} bytes of pixel data, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("expected {expected} channel(s), file has {found}")]
    ChannelMismatch { expected: usize, found: usize },
}

/// Decoded PFM contents with interleaved channels, rows top-to-bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub fn decode(bytes: &[u8]) -> Result<PfmImage, PfmError> {
    let mut pos = 0;
    let mut token = || -> Result<String, PfmError> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(PfmError::BadHeader("unexpected end of header".into()));
        }
        let t = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        Ok(t)
    };
    let magic = token()?;
    let channels = match magic.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(PfmError::BadHeader(format!("unknown magic {other:?}"))),
    };
    let width: usize = token()?.parse().map_err(|_| PfmError::BadHeader("width".into()))?;
    let height: usize = token()?.parse().map_err(|_| PfmError::BadHeader("height".into()))?;
    let scale: f32 = token()?.parse().map_err(|_| PfmError::BadHeader("scale".into()))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(PfmError::BadHeader("scale must be nonzero".into()));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() {
        return Err(PfmError::Truncated {
            expected: width * height * channels * 4,
            found: 0,
        });
    }
    let body = &bytes[pos + 1..];
    let expected = width * height * channels * 4;
    if body.len() < expected {
        return Err(PfmError::Truncated {
            expected,
            found: body.len(),
        });
    }
    let little = scale < 0.0;
    let row_len = width * channels;
    let mut data = vec![0.0f32; row_len * height];
    for (i, chunk) in body[..expected].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let file_row = i / row_len;
        let col = i % row_len;
        data[(height - 1 - file_row) * row_len + col] = v;
    }
    Ok(PfmImage {
        width,
        height,
        channels,
        data,
    })
}

pub fn encode(width: usize, height: usize, channels: usize, data: &[f32]) -> Vec<u8> {
    assert!(channels == 1 || channels == 3);
    assert_eq!(data.len(), width * height * channels);
    let magic = if channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(data.len() * 4);
    let row_len = width * channels;
    for row in (0..height).rev() {
        for v in &data[row * row_len..(row + 1) * row_len] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read(path: &Path) -> Result<PfmImage, PfmError> {
    decode(&fs::read(path)?)
}

pub fn read_gray(path: &Path) -> Result<Image, PfmError> {
    let img = read(path)?;
    if img.channels != 1 {
        return Err(PfmError::ChannelMismatch {
            expected: 1,
            found: img.channels,
        });
    }
    Ok(Grid::from_vec(img.width, img.height, img.data).expect("sized by decoder"))
}

pub fn read_rgb(path: &Path) -> Result<Grid<Rgb>, PfmError> {
    let img = read(path)?;
    if img.channels != 3 {
        return Err(PfmError::ChannelMismatch {
            expected: 3,
            found: img.channels,
        });
    }
    let px = img.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(Grid::from_vec(img.width, img.height, px).expect("sized by decoder"))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), PfmError> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

pub fn write_gray(path: &Path, img: &Image) -> Result<(), PfmError> {
    write_bytes(path, &encode(img.width(), img.height(), 1, img.data()))
}

pub fn write_rgb(path: &Path, img: &Grid<Rgb>) -> Result<(), PfmError> {
    let flat: Vec<f32> = img.data().iter().flat_map(|p| p.iter().copied()).collect();
    write_bytes(path, &encode(img.width(), img.height(), 3, &flat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_and_row_order() {
        let img = Image::from_fn(2, 2, |x, y| (x + 2 * y) as f32);
        let bytes = encode(2, 2, 1, img.data());
        assert!(bytes.starts_with(b"Pf\n2 2\n-1.0\n"));
        let body = &bytes[12..];
        // First stored row is the bottom image row (values 2, 3).
        assert_eq!(f32::from_le_bytes(body[0..4].try_into().unwrap()), 2.0);
        assert_eq!(f32::from_le_bytes(body[4..8].try_into().unwrap()), 3.0);
    }

    #[test]
    fn big_endian_is_accepted() {
        let mut bytes = b"Pf\n1 2\n1.0\n".to_vec();
        bytes.extend_from_slice(&1.5f32.to_be_bytes());
        bytes.extend_from_slice(&(-2.0f32).to_be_bytes());
        let img = decode(&bytes).unwrap();
        assert_eq!(img.data, vec![-2.0, 1.5]);
    }

    #[test]
    fn truncated_raster_is_reported() {
        let mut bytes = encode(4, 4, 3, &[0.5; 48]);
        bytes.truncate(bytes.len() - 5);
        match decode(&bytes) {
            Err(PfmError::Truncated { expected, found }) => {
                assert_eq!(expected, 192);
                assert_eq!(found, 187);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(decode(b"P6\n1 1\n255\n"), Err(PfmError::BadHeader(_))));
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(w in 1usize..6, h in 1usize..6, rgb in any::<bool>(), seed in any::<u32>()) {
            let c = if rgb { 3 } else { 1 };
            let data: Vec<f32> = (0..w * h * c).map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32 * 1e-6).collect();
            let img = decode(&encode(w, h, c, &data)).unwrap();
            prop_assert_eq!((img.width, img.height, img.channels), (w, h, c));
            prop_assert_eq!(img.data, data);
        }
    }
}
