//! Binary PGM (P5) grayscale images, 8-bit.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::worlds::Image;

pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_pgm(img))?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    decode_pgm(&std::fs::read(path)?)
}

/// Parses a P5 file with maxval ≤ 255; values are scaled to `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let bad = |msg: &str, offset: usize| Error::Dataset { offset, msg: format!("pgm: {msg}") };
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header", pos));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII", start))?.to_string());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("only binary P5 is supported", 0));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number", 0));
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval must be in 1..=255", 0));
    }
    let body = bytes.get(pos..pos + width * height).ok_or_else(|| bad("truncated pixel data", pos))?;
    let pixels = body.iter().map(|&b| b as f32 / maxval as f32).collect();
    Ok(Image { height, width, pixels })
}
