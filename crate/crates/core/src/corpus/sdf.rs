use super::BinaryShape;
use crate::Real;

/// Why a raster has no solid/void boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Degenerate {
    AllSolid,
    AllVoid,
}

/// Signed distance field of a raster, in pixel units, negative inside solid.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfShape<T: Real> {
    pub id: usize,
    pub height: usize,
    pub width: usize,
    pub field: Vec<T>,
    pub degenerate: Option<Degenerate>,
}

/// Exact Euclidean signed distance transform.
///
/// Each cell stores the distance from its center to the nearest center of the
/// opposite phase, shifted by half a pixel so the zero level sits between
/// cells: solid cells get `-(d - 0.5)`, void cells `d - 0.5`. Shapes without a
/// boundary get a constant field of magnitude `H` and are flagged.
pub fn sdf_from_binary<T: Real>(shape: &BinaryShape) -> SdfShape<T> {
    let (h, w) = (shape.height(), shape.width());
    let solid = shape.solid_count();
    let degenerate = if solid == 0 {
        Some(Degenerate::AllVoid)
    } else if solid == h * w {
        Some(Degenerate::AllSolid)
    } else {
        None
    };
    let field = match degenerate {
        Some(Degenerate::AllSolid) => vec![-T::count(h); h * w],
        Some(Degenerate::AllVoid) => vec![T::count(h); h * w],
        None => {
            let to_void = squared_edt(h, w, |i| shape.cells()[i] == 0);
            let to_solid = squared_edt(h, w, |i| shape.cells()[i] == 1);
            let half = T::lit(0.5);
            (0..h * w)
                .map(|i| {
                    if shape.cells()[i] == 1 {
                        half - T::lit(to_void[i].sqrt())
                    } else {
                        T::lit(to_solid[i].sqrt()) - half
                    }
                })
                .collect()
        }
    };
    SdfShape {
        id: shape.id,
        height: h,
        width: w,
        field,
        degenerate,
    }
}

/// Squared distance from every cell center to the nearest site, via the
/// separable lower-envelope-of-parabolas transform. Integer squared distances
/// are exact in `f64`.
fn squared_edt(h: usize, w: usize, is_site: impl Fn(usize) -> bool) -> Vec<f64> {
    let inf = ((h * h + w * w) * 4) as f64;
    let mut grid: Vec<f64> = (0..h * w)
        .map(|i| if is_site(i) { 0.0 } else { inf })
        .collect();

    let mut buf = vec![0.0; h.max(w)];
    let mut out = vec![0.0; h.max(w)];
    let mut v = vec![0usize; h.max(w)];
    let mut z = vec![0.0; h.max(w) + 1];

    for c in 0..w {
        for r in 0..h {
            buf[r] = grid[r * w + c];
        }
        edt_1d(&buf[..h], &mut out[..h], &mut v, &mut z);
        for r in 0..h {
            grid[r * w + c] = out[r];
        }
    }
    for r in 0..h {
        buf[..w].copy_from_slice(&grid[r * w..(r + 1) * w]);
        edt_1d(&buf[..w], &mut out[..w], &mut v, &mut z);
        grid[r * w..(r + 1) * w].copy_from_slice(&out[..w]);
    }
    grid
}

fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let parabola_cut = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s = parabola_cut(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = parabola_cut(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, dq) in d.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dx = q as f64 - p as f64;
        *dq = dx * dx + f[p];
    }
}
