//! Binary PGM (P5, maxval 255) reading and writing.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nets::Image;

pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let n = image.size();
    let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
    out.extend(
        image
            .pixels()
            .iter()
            .map(|&v| (255.0 * v).round().clamp(0.0, 255.0) as u8),
    );
    out
}

pub fn write_pgm(path: &Path, image: &Image) -> Result<()> {
    fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}

/// Writes a non-square grayscale strip (used for edit sweeps).
pub fn write_pgm_strip(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(
        pixels
            .iter()
            .map(|&v| (255.0 * v).round().clamp(0.0, 255.0) as u8),
    );
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err("not a binary PGM (P5)".into());
    }
    let w: usize = token()?.parse().map_err(|_| "bad width")?;
    let h: usize = token()?.parse().map_err(|_| "bad height")?;
    let maxval: usize = token()?.parse().map_err(|_| "bad maxval")?;
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported"));
    }
    if w != h {
        return Err(format!("image is {w}x{h}, expected square"));
    }
    // exactly one whitespace byte separates the header from the raster
    let body = &bytes[pos + 1..];
    if body.len() < w * h {
        return Err(format!(
            "raster has {} bytes, expected {}",
            body.len(),
            w * h
        ));
    }
    let pixels = body[..w * h].iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(w, pixels).map_err(|e| e.to_string())
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|msg| Error::Invalid(format!("{}: {msg}", path.display())))
}
