use log::warn;

use crate::error::{Error, Result};

/// Cosine similarity in f64; zero vectors give 0.
pub fn cosine_sim(u: &[f32], v: &[f32]) -> f32 {
    let (mut dot, mut uu, mut vv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        dot += a as f64 * b as f64;
        uu += a as f64 * a as f64;
        vv += b as f64 * b as f64;
    }
    if uu == 0.0 || vv == 0.0 {
        warn!("cosine similarity of a zero vector, using 0");
        return 0.0;
    }
    (dot / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0) as f32
}

/// NT-Xent loss over `2N` projections stored row-major in `z` (`dim` values
/// per row), where rows `2k` and `2k + 1` are the two views of sample `k`.
///
/// Returns the mean over all `2N` anchors and `dL/dz` with the layout of `z`.
pub fn nt_xent_loss(z: &[f32], dim: usize, tau: f32) -> Result<(f64, Vec<f32>)> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::config(format!("temperature must be positive, got {tau}")));
    }
    if dim == 0 || z.is_empty() || !z.len().is_multiple_of(dim) || !(z.len() / dim).is_multiple_of(2) {
        return Err(Error::shape(format!(
            "nt-xent expects an even number of rows of width {dim}, got {} values",
            z.len()
        )));
    }
    let rows = z.len() / dim;
    let tau = tau as f64;

    // Unit vectors; zero rows stay zero and receive no gradient.
    let mut norms = vec![0.0f64; rows];
    let mut u = vec![0.0f64; z.len()];
    for r in 0..rows {
        let zr = &z[r * dim..(r + 1) * dim];
        let n = zr.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        norms[r] = n;
        if n > 0.0 {
            for (o, &x) in u[r * dim..(r + 1) * dim].iter_mut().zip(zr) {
                *o = x as f64 / n;
            }
        }
    }
    let mut sim = vec![0.0f64; rows * rows];
    for i in 0..rows {
        for k in i..rows {
            let s: f64 = u[i * dim..(i + 1) * dim]
                .iter()
                .zip(&u[k * dim..(k + 1) * dim])
                .map(|(a, b)| a * b)
                .sum();
            sim[i * rows + k] = s;
            sim[k * rows + i] = s;
        }
    }

    // a[i][k] = dL/dsim(i,k) from anchor i's term alone.
    let mut a = vec![0.0f64; rows * rows];
    let mut total = 0.0f64;
    let scale = 1.0 / (rows as f64 * tau);
    for i in 0..rows {
        let j = i ^ 1;
        let logits = |k: usize| sim[i * rows + k] / tau;
        let m = (0..rows).filter(|&k| k != i).map(logits).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..rows).filter(|&k| k != i).map(|k| (logits(k) - m).exp()).sum();
        let lse = m + denom.ln();
        total += lse - logits(j);
        for k in (0..rows).filter(|&k| k != i) {
            let p = (logits(k) - m).exp() / denom;
            a[i * rows + k] = scale * (p - if k == j { 1.0 } else { 0.0 });
        }
    }
    let loss = total / rows as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric("nt-xent loss is not finite".into()));
    }

    let mut grad = vec![0.0f32; z.len()];
    let mut gu = vec![0.0f64; dim];
    for i in 0..rows {
        if norms[i] == 0.0 {
            continue;
        }
        gu.iter_mut().for_each(|g| *g = 0.0);
        for k in (0..rows).filter(|&k| k != i) {
            let c = a[i * rows + k] + a[k * rows + i];
            for (g, &uk) in gu.iter_mut().zip(&u[k * dim..(k + 1) * dim]) {
                *g += c * uk;
            }
        }
        let ui = &u[i * dim..(i + 1) * dim];
        let radial: f64 = gu.iter().zip(ui).map(|(g, x)| g * x).sum();
        for ((o, g), x) in grad[i * dim..(i + 1) * dim].iter_mut().zip(&gu).zip(ui) {
            *o = ((g - radial * x) / norms[i]) as f32;
        }
    }
    Ok((loss, grad))
}
