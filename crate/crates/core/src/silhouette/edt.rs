//! Exact Euclidean distance transform by separable lower envelopes of
//! parabolas (one pass per axis on squared distances).
//!
//! Squared distances between pixel centers are integers, which `f64`
//! represents exactly, so the result is bit-identical to a brute-force
//! nearest-boundary search.

use super::{DistanceField, Mask};
use crate::error::{Error, Result};

const FAR: f64 = 1e20;

/// Foreground pixels (value ≥ 0.5) with at least one 4-neighbour in the
/// background. The image border does not count as background.
pub fn boundary_pixels(mask: &Mask) -> Vec<bool> {
    let (w, h) = (mask.width(), mask.height());
    let fg = |x: usize, y: usize| mask.get(x, y) >= 0.5;
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if !fg(x, y) {
                continue;
            }
            let bg_neighbour = (x > 0 && !fg(x - 1, y))
                || (x + 1 < w && !fg(x + 1, y))
                || (y > 0 && !fg(x, y - 1))
                || (y + 1 < h && !fg(x, y + 1));
            out[y * w + x] = bg_neighbour;
        }
    }
    out
}

pub fn distance_transform(mask: &Mask) -> Result<DistanceField> {
    let (w, h) = (mask.width(), mask.height());
    let boundary = boundary_pixels(mask);
    if !boundary.iter().any(|&b| b) {
        return Err(Error::NoBoundary);
    }
    let mut sq: Vec<f64> = boundary
        .iter()
        .map(|&b| if b { 0.0 } else { FAR })
        .collect();

    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    for x in 0..w {
        for y in 0..h {
            f[y] = sq[y * w + x];
        }
        lower_envelope(&f[..h], &mut d[..h], &mut v, &mut z);
        for y in 0..h {
            sq[y * w + x] = d[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&sq[y * w..(y + 1) * w]);
        lower_envelope(&f[..w], &mut d[..w], &mut v, &mut z);
        sq[y * w..(y + 1) * w].copy_from_slice(&d[..w]);
    }
    Ok(DistanceField::from_raw(
        w,
        h,
        sq.into_iter().map(f64::sqrt).collect(),
    ))
}

/// Distance to the nearest pixel on either side of the mask edge: the
/// minimum of the transforms of the mask and of its complement. Zero on
/// both the inner and the outer boundary ring, so a rendered edge that
/// coincides with the mask edge scores exactly 0 in [`super::dt_loss`].
pub fn edge_distance_field(mask: &Mask) -> Result<DistanceField> {
    let inner = distance_transform(mask)?;
    let complement = Mask::from_fn(mask.width(), mask.height(), |x, y| mask.get(x, y) < 0.5);
    let outer = distance_transform(&complement)?;
    Ok(DistanceField::from_raw(
        mask.width(),
        mask.height(),
        inner
            .values()
            .iter()
            .zip(outer.values())
            .map(|(a, b)| a.min(*b))
            .collect(),
    ))
}

/// `d[q] = min_p (q − p)² + f[p]`.
fn lower_envelope(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        let mut s;
        loop {
            let p = v[k] as f64;
            s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * qf - 2.0 * p);
            // z[0] = -inf stops the walk at k = 0
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k] as f64;
        *out = (qf - p) * (qf - p) + f[v[k]];
    }
}
