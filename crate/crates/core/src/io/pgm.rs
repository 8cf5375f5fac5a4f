//! Binary graymaps (`P5`). Samples wider than one byte are big-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{GrayImage, Image};

/// A decoded graymap with its declared maximum value.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub maxval: u16,
    pub image: Image<u16>,
}

struct Header {
    width: usize,
    height: usize,
    maxval: u16,
    data_offset: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format(path, "byte 0: expected the P5 magic number"));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // Whitespace and comments between header fields.
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
        let name = ["width", "height", "maxval"][k];
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| Error::format(path, format!("byte {start}: expected the {name} as a decimal number")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(path, format!("byte {pos}: expected one whitespace byte after the header"))),
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(Error::format(path, format!("header: image size {w}x{h} is empty")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(path, format!("header: maxval {maxval} outside 1..=65535")));
    }
    Ok(Header {
        width: w as usize,
        height: h as usize,
        maxval: maxval as u16,
        data_offset: pos,
    })
}

/// Decodes any `P5` graymap.
pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<Pgm> {
    let h = parse_header(bytes, path)?;
    let sample = if h.maxval > 255 { 2 } else { 1 };
    let expected = h.width * h.height * sample;
    let data = &bytes[h.data_offset..];
    if data.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "byte {}: expected {expected} bytes of pixel data for {}x{}, found {}",
                h.data_offset + data.len().min(expected),
                h.width,
                h.height,
                data.len()
            ),
        ));
    }
    let values: Vec<u16> = if sample == 1 {
        data.iter().map(|&b| b as u16).collect()
    } else {
        data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    if let Some(i) = values.iter().position(|&v| v > h.maxval) {
        return Err(Error::format(
            path,
            format!("byte {}: sample {} exceeds maxval {}", h.data_offset + i * sample, values[i], h.maxval),
        ));
    }
    Ok(Pgm {
        maxval: h.maxval,
        image: Image::from_vec(h.width, h.height, values),
    })
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes, path)
}

/// Encodes a graymap; samples use two bytes when `maxval > 255`.
pub fn encode_pgm(image: &Image<u16>, maxval: u16) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", image.width(), image.height(), maxval).into_bytes();
    if maxval > 255 {
        for v in image.as_slice() {
            out.extend_from_slice(&v.to_be_bytes());
        }
    } else {
        out.extend(image.as_slice().iter().map(|&v| v.min(255) as u8));
    }
    out
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads an 8-bit image (`maxval` at most 255).
pub fn read_pgm8(path: &Path) -> Result<GrayImage> {
    let pgm = read_pgm(path)?;
    if pgm.maxval > 255 {
        return Err(Error::format(path, format!("header: maxval {} is not an 8-bit image", pgm.maxval)));
    }
    Ok(pgm.image.map(|v| v as u8))
}

pub fn write_pgm8(path: &Path, image: &GrayImage) -> Result<()> {
    write_bytes(path, &encode_pgm(&image.map(|v| v as u16), 255))
}

/// Reads a 16-bit image; `maxval` must be 65535.
pub fn read_pgm16(path: &Path) -> Result<Image<u16>> {
    let pgm = read_pgm(path)?;
    if pgm.maxval != u16::MAX {
        return Err(Error::format(
            path,
            format!("header: maxval {} but a 16-bit image (maxval 65535) is required", pgm.maxval),
        ));
    }
    Ok(pgm.image)
}

pub fn write_pgm16(path: &Path, image: &Image<u16>) -> Result<()> {
    write_bytes(path, &encode_pgm(image, u16::MAX))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    write_bytes(path, bytes)
}
