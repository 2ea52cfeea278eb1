//! Binary greyscale PGM (`P5`, maxval 255).
//!
//! Images store `round(v * 255)`. Masks store boundary pixels as 0 (black)
//! and background as 255 (white).

use std::fs;
use std::path::Path;

use crate::data::grid::{Grid, Image, Mask};
use crate::error::{Error, Result};

/// Raw 8-bit greyscale raster as decoded from a PGM file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u8>,
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::shape(format!(
            "{width}x{height} PGM needs {} pixels, got {}",
            width * height,
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Pgm> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::Format(format!(
            "not a binary PGM: magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("empty PGM {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!(
            "unsupported maxval {maxval} (only 8-bit PGM is supported)"
        )));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing whitespace after PGM header".into())),
    }
    let need = width * height;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(Error::Format(format!(
            "truncated PGM payload: expected {need} bytes, found {}",
            payload.len()
        )));
    }
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        pixels: payload[..need].to_vec(),
    })
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PGM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            Error::Format(format!(
                "malformed PGM {what}: {:?}",
                String::from_utf8_lossy(tok)
            ))
        })
}

pub fn image_to_bytes(image: &Image) -> Result<Vec<u8>> {
    let pixels = image
        .data
        .iter()
        .map(|&v| {
            if (0.0..=1.0).contains(&v) {
                Ok((v * 255.0).round() as u8)
            } else {
                Err(Error::invalid(format!("image value {v} outside [0, 1]")))
            }
        })
        .collect::<Result<Vec<u8>>>()?;
    encode_pgm(image.width, image.height, &pixels)
}

pub fn mask_to_bytes(mask: &Mask) -> Result<Vec<u8>> {
    if !mask.is_binary() {
        return Err(Error::invalid("mask values must be 0 or 1"));
    }
    let pixels: Vec<u8> = mask
        .data
        .iter()
        .map(|&v| if v == 1 { 0 } else { 255 })
        .collect();
    encode_pgm(mask.width, mask.height, &pixels)
}

pub fn image_from_pgm(pgm: &Pgm) -> Image {
    let scale = pgm.maxval as f32;
    Grid {
        height: pgm.height,
        width: pgm.width,
        data: pgm.pixels.iter().map(|&p| p as f32 / scale).collect(),
    }
}

/// Dark pixels (below half of maxval) are boundary.
pub fn mask_from_pgm(pgm: &Pgm) -> Mask {
    let half = pgm.maxval as u32;
    Grid {
        height: pgm.height,
        width: pgm.width,
        data: pgm
            .pixels
            .iter()
            .map(|&p| u8::from((p as u32) * 2 < half))
            .collect(),
    }
}

fn read_pgm(path: &Path) -> Result<Pgm> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn read_image_pgm(path: impl AsRef<Path>) -> Result<Image> {
    read_pgm(path.as_ref()).map(|p| image_from_pgm(&p))
}

pub fn read_mask_pgm(path: impl AsRef<Path>) -> Result<Mask> {
    read_pgm(path.as_ref()).map(|p| mask_from_pgm(&p))
}

pub fn write_image_pgm(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, image_to_bytes(image)?).map_err(|e| Error::io(path, e))
}

pub fn write_mask_pgm(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, mask_to_bytes(mask)?).map_err(|e| Error::io(path, e))
}
