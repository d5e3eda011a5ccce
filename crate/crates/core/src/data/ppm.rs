//! Binary PPM (P6) images with 8-bit channels.
//!
//! Pixels are stored top to bottom as interleaved RGB bytes. Reading maps
//! each channel to [0, 1] by dividing by 255; writing quantizes with
//! round(255 * v) clamped to the byte range.

use std::path::Path;

use super::header::Cursor;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reads a P6 PPM file into an H x W x 3 tensor with values in [0, 1].
pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let buf = std::fs::read(path)?;
    let mut cur = Cursor::new(&buf);

    let (magic_off, magic) = cur.token("PPM magic", true)?;
    if magic != b"P6" {
        return Err(Error::parse(magic_off, "expected PPM magic P6"));
    }
    let width = cur.parse_usize("width", true)?;
    let height = cur.parse_usize("height", true)?;
    let (maxval_off, maxval_tok) = cur.token("maxval", true)?;
    let maxval = std::str::from_utf8(maxval_tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| Error::parse(maxval_off, "expected integer maxval"))?;
    if maxval != 255 {
        return Err(Error::parse(
            maxval_off,
            format!("only maxval 255 is supported, found {maxval}"),
        ));
    }
    cur.expect_payload_separator()?;

    let payload = cur.remaining();
    let need = width * height * 3;
    if payload.len() < need {
        return Err(Error::parse(
            buf.len(),
            format!(
                "truncated PPM payload: expected {need} bytes, found {}",
                payload.len()
            ),
        ));
    }

    let mut out = Tensor::zeros(vec![height, width, 3])?;
    let data = out.data_mut();
    for (i, byte) in payload[..need].iter().enumerate() {
        data[i] = *byte as f64 / 255.0;
    }
    Ok(out)
}

/// Writes an H x W x 3 tensor with values in [0, 1] as a P6 PPM file.
pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    if image.rank() != 3 || image.shape()[2] != 3 {
        return Err(Error::shape("write_ppm", "image must be H x W x 3"));
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut buf = Vec::with_capacity(32 + h * w * 3);
    buf.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
    for &v in image.data() {
        buf.push((255.0 * v).round().clamp(0.0, 255.0) as u8);
    }
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("camb_ppm_{}_{name}", std::process::id()))
    }

    #[test]
    fn round_trip_preserves_quantized_values() {
        let path = tmp("round_trip.ppm");
        let image = Tensor::from_fn(vec![4, 5, 3], |i| (i % 256) as f64 / 255.0).unwrap();
        write_ppm(&path, &image).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(back.shape(), &[4, 5, 3]);
        assert_eq!(back.data(), image.data());
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn quantization_rounds_and_clamps() {
        let path = tmp("quant.ppm");
        let image = Tensor::new(vec![1, 2, 3], vec![0.0, 0.5, 1.0, -0.2, 1.7, 0.001]).unwrap();
        write_ppm(&path, &image).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let payload = &bytes[bytes.len() - 6..];
        assert_eq!(payload, &[0, 128, 255, 0, 255, 0]);
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn header_comments_are_skipped() {
        let path = tmp("comments.ppm");
        std::fs::write(&path, b"P6\n# made by hand\n2 1\n# maxval next\n255\n\x01\x02\x03\x04\x05\x06")
            .unwrap();
        let image = read_ppm(&path).unwrap();
        assert_eq!(image.shape(), &[1, 2, 3]);
        assert!((image.data()[0] - 1.0 / 255.0).abs() < 1e-12);
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn wrong_maxval_is_rejected() {
        let path = tmp("maxval.ppm");
        std::fs::write(&path, b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00").unwrap();
        match read_ppm(&path) {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("255")),
            other => panic!("expected parse error, got {other:?}"),
        }
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let path = tmp("trunc.ppm");
        std::fs::write(&path, b"P6\n2 2\n255\n\x00\x00\x00").unwrap();
        match read_ppm(&path) {
            Err(Error::Parse { msg, .. }) => {
                assert!(msg.contains("expected 12 bytes, found 3"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn wrong_rank_is_rejected_on_write() {
        let path = tmp("rank.ppm");
        let gray = Tensor::zeros(vec![2, 2]).unwrap();
        assert!(matches!(write_ppm(&path, &gray), Err(Error::Shape { .. })));
    }
}
