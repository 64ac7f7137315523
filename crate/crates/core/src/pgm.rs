//! Binary (P5) PGM with 8-bit samples.

use crate::error::{Error, Result};
use crate::frame::Frame;

/// Encodes a frame as P5 with maxval 255; values are clamped to [0, 1] and
/// rounded to the nearest byte.
pub fn encode(frame: &Frame) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", frame.width(), frame.height());
    let mut out = Vec::with_capacity(header.len() + frame.pixels().len());
    out.extend_from_slice(header.as_bytes());
    out.extend(
        frame
            .pixels()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        let mut value: usize = 0;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add((self.bytes[self.pos] - b'0') as usize))
                .ok_or_else(|| Error::format(start as u64, format!("{what} overflows")))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::format(start as u64, format!("expected {what}")));
        }
        Ok(value)
    }
}

/// Decodes a P5 image with maxval <= 255, scaling samples to [0, 1] by maxval.
pub fn decode(bytes: &[u8]) -> Result<Frame> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format(0, "missing P5 magic"));
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format(2, format!("empty image {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(
            maxval_at as u64,
            format!("unsupported maxval {maxval} (need 1..=255)"),
        ));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::format(cur.pos as u64, "no whitespace after maxval")),
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::format(2, "image dimensions overflow"))?;
    let raster = &bytes[cur.pos..];
    if raster.len() < n {
        return Err(Error::format(
            bytes.len() as u64,
            format!("raster truncated: {} of {n} bytes", raster.len()),
        ));
    }
    let scale = 1.0 / maxval as f32;
    let mut pixels = Vec::with_capacity(n);
    for (i, &b) in raster[..n].iter().enumerate() {
        if b as usize > maxval {
            return Err(Error::format(
                (cur.pos + i) as u64,
                format!("sample {b} exceeds maxval {maxval}"),
            ));
        }
        pixels.push(if maxval == 255 {
            b as f32 / 255.0
        } else {
            b as f32 * scale
        });
    }
    Frame::new(width, height, pixels)
}
