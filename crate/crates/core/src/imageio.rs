//! Binary PPM/PGM image files and raw latent blobs.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, ImageTensor, Latent, MaskImage};
use crate::scalar::Scalar;

pub const LATENT_MAGIC: [u8; 4] = *b"ULAT";

/// 8-bit level to `[-1, 1]`.
#[inline]
pub fn level_to_unit(u: u8) -> f32 {
    u as f32 / 127.5 - 1.0
}

/// `[-1, 1]` to the nearest 8-bit level, clamping out-of-range values.
#[inline]
pub fn unit_to_level(v: f32) -> u8 {
    let v = if v.is_nan() { -1.0 } else { v.clamp(-1.0, 1.0) };
    ((v + 1.0) * 127.5).round() as u8
}

pub fn encode_ppm<T: Scalar>(image: &ImageTensor<T>) -> Result<Vec<u8>> {
    if image.channels != 3 {
        return Err(Error::Shape(format!("PPM needs 3 channels, got {}", image.channels)));
    }
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.data.iter().map(|v| unit_to_level(v.as_f32())));
    Ok(out)
}

pub fn encode_pgm(mask: &MaskImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.data.iter().map(|&v| if v != 0 { 255u8 } else { 0 }));
    out
}

struct Header {
    width: usize,
    height: usize,
    offset: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Invalid(format!(
            "expected {} image",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Invalid("malformed image header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Invalid("malformed image header".into()))?;
    }
    if fields[2] != 255 {
        return Err(Error::Invalid(format!("maxval {} unsupported, need 255", fields[2])));
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::Invalid("malformed image header".into()));
    }
    Ok(Header {
        width: fields[0],
        height: fields[1],
        offset: pos + 1,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<ImageTensor> {
    let h = parse_header(bytes, b"P6")?;
    let n = h.width * h.height * 3;
    let body = bytes
        .get(h.offset..h.offset + n)
        .ok_or_else(|| Error::Invalid("truncated PPM".into()))?;
    Grid::from_vec(h.height, h.width, 3, body.iter().map(|&u| level_to_unit(u)).collect())
}

/// Any nonzero level counts as 1.
pub fn decode_pgm(bytes: &[u8]) -> Result<MaskImage> {
    let h = parse_header(bytes, b"P5")?;
    let n = h.width * h.height;
    let body = bytes
        .get(h.offset..h.offset + n)
        .ok_or_else(|| Error::Invalid("truncated PGM".into()))?;
    MaskImage::from_vec(h.height, h.width, body.iter().map(|&u| (u != 0) as u8).collect())
}

pub fn write_ppm<T: Scalar>(path: &Path, image: &ImageTensor<T>) -> Result<()> {
    fs::write(path, encode_ppm(image)?).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<ImageTensor> {
    decode_ppm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_pgm(path: &Path, mask: &MaskImage) -> Result<()> {
    fs::write(path, encode_pgm(mask)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<MaskImage> {
    decode_pgm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// 16-byte header (magic, h, w, c as little-endian u32) then f32 LE values.
pub fn encode_latent<T: Scalar>(latent: &Latent<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * latent.data.len());
    out.extend_from_slice(&LATENT_MAGIC);
    for d in [latent.height, latent.width, latent.channels] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &latent.data {
        out.extend_from_slice(&v.as_f32().to_le_bytes());
    }
    out
}

pub fn decode_latent(bytes: &[u8]) -> Result<Latent> {
    if bytes.len() < 16 || bytes[..4] != LATENT_MAGIC {
        return Err(Error::Invalid("not a latent blob".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let body = &bytes[16..];
    if body.len() != 4 * h * w * c {
        return Err(Error::Invalid(format!("latent body has {} bytes, expected {}", body.len(), 4 * h * w * c)));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Grid::from_vec(h, w, c, data)
}
