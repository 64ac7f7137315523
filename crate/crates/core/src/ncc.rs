//! Whole-frame normalized cross-correlation baseline.

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::ranking::{rank, Ranked};

/// Zero-mean normalized cross-correlation; a constant image scores 0.
pub fn ncc(a: &Frame, b: &Frame) -> Result<f64> {
    if !a.same_size(b) {
        return Err(Error::shape(format!(
            "ncc of {}x{} and {}x{} frames",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let n = a.pixels().len() as f64;
    let mean = |f: &Frame| f.pixels().iter().map(|&x| x as f64).sum::<f64>() / n;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.pixels().iter().zip(b.pixels()) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Ok(0.0);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks `candidates` by NCC against `reference`.
pub fn ncc_retrieve(reference: &Frame, candidates: &[Frame]) -> Result<Vec<Ranked>> {
    let scores = candidates
        .iter()
        .map(|c| ncc(reference, c))
        .collect::<Result<Vec<_>>>()?;
    rank(&scores)
}
