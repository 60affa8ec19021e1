use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reads a binary (P5) PGM as a `(1, H, W)` tensor scaled by `1/maxval`.
/// 16-bit samples are big-endian.
pub fn read_pgm(path: &Path) -> Result<Tensor<f64>> {
    parse_pgm(&super::read_file(path)?, path)
}

fn parse_pgm(bytes: &[u8], path: &Path) -> Result<Tensor<f64>> {
    let fail = |reason: &str| Error::Format {
        kind: "PGM",
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(fail("only binary P5 images are supported"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Whitespace and comments separate header fields.
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(fail("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fail("expected a decimal header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(fail("missing whitespace after maxval"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(fail("invalid width, height or maxval"));
    }
    let wide = maxval > 255;
    let sample = if wide { 2 } else { 1 };
    let payload = &bytes[pos..];
    if payload.len() < w * h * sample {
        return Err(fail("truncated pixel data"));
    }
    let scale = 1.0 / maxval as f64;
    let data = (0..w * h)
        .map(|i| {
            let v = if wide {
                u16::from_be_bytes([payload[2 * i], payload[2 * i + 1]]) as f64
            } else {
                payload[i] as f64
            };
            v * scale
        })
        .collect();
    Tensor::from_vec(vec![1, h, w], data)
}

/// Writes a `(1, H, W)` or `(H, W)` image in `[0, 1]` as an 8-bit P5 PGM.
pub fn write_pgm(path: &Path, image: &Tensor<f64>) -> Result<()> {
    let s = image.shape();
    let (h, w) = match s {
        [1, h, w] | [h, w] => (*h, *w),
        _ => return Err(crate::error::invalid!("cannot write shape {s:?} as PGM")),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    write_atomic(path, &out)
}
