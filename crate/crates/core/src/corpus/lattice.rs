//! Synthetic lattice unit cells built from four bar groups.
//!
//! Group layout: a horizontal center bar, a vertical center bar, the main
//! diagonal and the anti-diagonal. Diagonals wrap periodically so tiled cells
//! connect at the corners.

use super::{BinaryShape, CorpusError, ShapeLibrary};
use crate::rng;
use crate::Real;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeParams {
    /// Thickness parameter of each bar group, in `[0, 1]`.
    pub t: [f64; 4],
}

impl LatticeParams {
    pub fn new(t: [f64; 4]) -> Self {
        Self {
            t: t.map(|v| v.clamp(0.0, 1.0)),
        }
    }

    /// Pixel thickness of group `g` at the given resolution.
    pub fn thickness_px(&self, g: usize, resolution: usize) -> usize {
        (self.t[g] * resolution as f64 / 2.0).round() as usize
    }
}

pub fn generate_lattice(
    params: &LatticeParams,
    resolution: usize,
) -> Result<BinaryShape, CorpusError> {
    if resolution < 10 {
        return Err(CorpusError::Resolution(resolution));
    }
    let n = resolution;
    let th: [usize; 4] = std::array::from_fn(|g| params.thickness_px(g, n));
    let band = |t: usize| {
        let start = (n - t.min(n)) / 2;
        start..start + t.min(n)
    };
    let rows = band(th[0]);
    let cols = band(th[1]);
    let nf = n as f64;
    // periodic distance from the pixel center to the line y = x (+ k n)
    let diag_dist = |x: f64, y: f64| {
        let d = (y - x).rem_euclid(nf);
        d.min(nf - d) / std::f64::consts::SQRT_2
    };
    let shape = BinaryShape::from_fn(0, n, n, |r, c| {
        let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
        (th[0] > 0 && rows.contains(&r))
            || (th[1] > 0 && cols.contains(&c))
            || (th[2] > 0 && diag_dist(x, y) <= th[2] as f64 / 2.0)
            || (th[3] > 0 && diag_dist(nf - x, y) <= th[3] as f64 / 2.0)
    });
    Ok(shape)
}

/// Synthetic library of `n` non-degenerate lattices together with their parameters.
pub fn generate_corpus_with_params<T: Real>(
    n: usize,
    seed: u64,
    resolution: usize,
) -> Result<(ShapeLibrary<T>, Vec<LatticeParams>), CorpusError> {
    if n == 0 {
        return Err(CorpusError::Empty);
    }
    let mut rng = rng::stream(seed, rng::labels::CORPUS, 0);
    let mut shapes = Vec::with_capacity(n);
    let mut params = Vec::with_capacity(n);
    while shapes.len() < n {
        let p = LatticeParams::new(std::array::from_fn(|_| rng.gen::<f64>()));
        let shape = generate_lattice(&p, resolution)?;
        if shape.is_degenerate() {
            continue;
        }
        shapes.push(shape.with_id(shapes.len()));
        params.push(p);
    }
    Ok((ShapeLibrary::from_shapes(shapes)?, params))
}

/// Synthetic 50x50 lattice library of `n` shapes.
pub fn generate_corpus<T: Real>(n: usize, seed: u64) -> Result<ShapeLibrary<T>, CorpusError> {
    generate_corpus_with_params(n, seed, 50).map(|(lib, _)| lib)
}
