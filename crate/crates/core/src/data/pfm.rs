//! Grayscale PFM depth maps.
//!
//! Layout: `Pf` magic, width and height, then a nonzero scale whose sign
//! selects payload endianness (negative little endian, positive big endian).
//! Rows are stored bottom to top as 4-byte floats.

use std::path::Path;

use super::header::Cursor;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reads a grayscale PFM file into an H x W depth tensor.
pub fn read_pfm(path: &Path) -> Result<Tensor> {
    let buf = std::fs::read(path)?;
    let mut cur = Cursor::new(&buf);

    let (magic_off, magic) = cur.token("PFM magic", false)?;
    match magic {
        b"Pf" => {}
        b"PF" => {
            return Err(Error::parse(magic_off, "color PFM (magic PF) is not supported, expected grayscale Pf"))
        }
        _ => {
            return Err(Error::parse(magic_off, "expected PFM magic Pf"))
        }
    }

    let width = cur.parse_usize("width", false)?;
    let height = cur.parse_usize("height", false)?;
    let (scale_off, scale_tok) = cur.token("scale", false)?;
    let scale = std::str::from_utf8(scale_tok)
        .ok()
        .and_then(|s| s.parse::<f64>().ok())
        .filter(|v| v.is_finite() && *v != 0.0)
        .ok_or_else(|| Error::parse(scale_off, "expected a finite nonzero scale"))?;
    cur.expect_payload_separator()?;

    let little_endian = scale < 0.0;
    let payload = cur.remaining();
    let need = width * height * 4;
    if payload.len() < need {
        return Err(Error::parse(
            buf.len(),
            format!(
                "truncated PFM payload: expected {need} bytes, found {}",
                payload.len()
            ),
        ));
    }

    let mut out = Tensor::zeros(vec![height, width])?;
    let data = out.data_mut();
    for file_row in 0..height {
        let img_row = height - 1 - file_row;
        for c in 0..width {
            let at = (file_row * width + c) * 4;
            let raw: [u8; 4] = payload[at..at + 4].try_into().unwrap();
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            data[img_row * width + c] = v as f64;
        }
    }
    Ok(out)
}

/// Writes an H x W tensor as a little-endian grayscale PFM (scale -1.0).
pub fn write_pfm(path: &Path, depth: &Tensor) -> Result<()> {
    write_pfm_scaled(path, depth, -1.0)
}

/// Writes a grayscale PFM with an explicit scale; positive values produce a
/// big-endian payload.
pub fn write_pfm_scaled(path: &Path, depth: &Tensor, scale: f64) -> Result<()> {
    if depth.rank() != 2 {
        return Err(Error::shape("write_pfm", "depth map must be rank 2 (H x W)"));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Param {
            name: "scale",
            msg: "must be finite and nonzero".into(),
        });
    }
    let (h, w) = (depth.shape()[0], depth.shape()[1]);
    let mut buf = Vec::with_capacity(32 + h * w * 4);
    buf.extend_from_slice(format!("Pf\n{w} {h}\n{scale:?}\n").as_bytes());
    let little_endian = scale < 0.0;
    let data = depth.data();
    for file_row in 0..h {
        let img_row = h - 1 - file_row;
        for c in 0..w {
            let v = data[img_row * w + c] as f32;
            let raw = if little_endian {
                v.to_le_bytes()
            } else {
                v.to_be_bytes()
            };
            buf.extend_from_slice(&raw);
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}
