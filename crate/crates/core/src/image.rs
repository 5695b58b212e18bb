//! Image IO: binary PGM (P5), binary PPM (P6), and a raw f32 tensor format.
//!
//! Raw f32 layout: three little-endian u32 (height, width, channels) followed
//! by `H*W*C` little-endian f32 values in `[0,1]`, interleaved `[y][x][c]`.
//! There is no resizing; inputs must already match the model geometry.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// H x W x C pixel tensor, interleaved `[y][x][c]`.
#[derive(Debug, Clone)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<ImageTensor> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "image data length {} != {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(ImageTensor {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

struct PnmHeader {
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

// Header tokens separated by whitespace; '#' starts a comment to end of line.
// Exactly one whitespace byte follows maxval before the raster.
fn parse_pnm_header(bytes: &[u8]) -> Result<PnmHeader> {
    let mut pos = 2; // past magic
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(Error::Format("truncated PNM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if pos == start {
            return Err(Error::Format("malformed PNM header field".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Format("PNM header field out of range".into()))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing whitespace after maxval".into())),
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if width == 0 || height == 0 {
        return Err(Error::Format("zero PNM dimensions".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!(
            "unsupported PNM maxval {} (8-bit only)",
            maxval
        )));
    }
    Ok(PnmHeader {
        width,
        height,
        maxval,
        data_start: pos,
    })
}

fn decode_pnm(bytes: &[u8], channels: usize) -> Result<ImageTensor> {
    let h = parse_pnm_header(bytes)?;
    let expected = h.width * h.height * channels;
    let raster = &bytes[h.data_start..];
    if raster.len() < expected {
        return Err(Error::Format(format!(
            "PNM raster truncated: {} bytes, expected {}",
            raster.len(),
            expected
        )));
    }
    let scale = 1.0 / h.maxval as f64;
    let data = raster[..expected].iter().map(|&b| b as f64 * scale).collect();
    ImageTensor::new(h.height, h.width, channels, data)
}

fn decode_raw_f32(bytes: &[u8]) -> Result<ImageTensor> {
    if bytes.len() < 12 {
        return Err(Error::Format("raw f32 image shorter than its header".into()));
    }
    let h = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let c = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("raw f32 header overflow".into()))?;
    if bytes.len() - 12 != expected {
        return Err(Error::Format(format!(
            "raw f32 payload is {} bytes, header implies {}",
            bytes.len() - 12,
            expected
        )));
    }
    let data: Vec<f64> = bytes[12..]
        .chunks_exact(4)
        .map(|chunk| f32::from_le_bytes(chunk.try_into().unwrap()) as f64)
        .collect();
    if !data.iter().all(|v| v.is_finite()) {
        return Err(Error::Format("raw f32 image contains non-finite values".into()));
    }
    ImageTensor::new(h, w, c, data)
}

/// Decode image bytes into `[0,1]` pixel values. Format is sniffed from the
/// leading bytes: `P5` (grayscale), `P6` (RGB), anything else is treated as
/// the raw f32 tensor format.
pub fn decode_image(bytes: &[u8]) -> Result<ImageTensor> {
    match bytes.get(0..2) {
        Some(b"P5") => decode_pnm(bytes, 1),
        Some(b"P6") => decode_pnm(bytes, 3),
        Some(_) => decode_raw_f32(bytes),
        None => Err(Error::Format("empty image file".into())),
    }
}

/// Per-channel `(x - mean) / std` in place.
pub fn normalize(img: &mut ImageTensor, mean: &[f64], std: &[f64]) -> Result<()> {
    if mean.len() != img.channels || std.len() != img.channels {
        return Err(Error::Shape(format!(
            "normalization constants for {} channels, image has {}",
            mean.len(),
            img.channels
        )));
    }
    if std.iter().any(|&s| s <= 0.0) {
        return Err(Error::Config("normalization std must be positive".into()));
    }
    for (i, v) in img.data.iter_mut().enumerate() {
        let c = i % img.channels;
        *v = (*v - mean[c]) / std[c];
    }
    Ok(())
}

/// Decode + validate against the model geometry + normalize.
pub fn load_image_bytes(bytes: &[u8], config: &ModelConfig) -> Result<ImageTensor> {
    let mut img = decode_image(bytes)?;
    if img.height != config.image_size || img.width != config.image_size {
        return Err(Error::Shape(format!(
            "image is {}x{}, model expects {}x{} (no resizing)",
            img.height, img.width, config.image_size, config.image_size
        )));
    }
    if img.channels != config.channels {
        return Err(Error::Shape(format!(
            "image has {} channels, model expects {}",
            img.channels, config.channels
        )));
    }
    normalize(&mut img, &config.mean, &config.std)?;
    Ok(img)
}

pub fn load_image(path: impl AsRef<Path>, config: &ModelConfig) -> Result<ImageTensor> {
    load_image_bytes(&std::fs::read(path)?, config)
}

/// Binary PGM (P5) bytes for an 8-bit grayscale raster.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{} {}\n255\n", width, height).into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Binary PPM (P6) bytes for an 8-bit interleaved RGB raster.
pub fn encode_ppm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height * 3);
    let mut out = format!("P6\n{} {}\n255\n", width, height).into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Raw f32 tensor bytes for an image with values in `[0,1]`.
pub fn encode_raw_f32(img: &ImageTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + img.data.len() * 4);
    out.extend_from_slice(&(img.height as u32).to_le_bytes());
    out.extend_from_slice(&(img.width as u32).to_le_bytes());
    out.extend_from_slice(&(img.channels as u32).to_le_bytes());
    for &v in &img.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}
