//! Sparse symmetric positive definite factorization.
//!
//! Up-looking Cholesky on a compressed-column matrix: elimination tree,
//! row-pattern reach, then one row of `L` per step. The symbolic part depends
//! only on the pattern and is computed once per mesh.

use crate::Real;

const NONE: usize = usize::MAX;

/// Symmetric pattern in compressed-column form (both triangles, sorted rows).
#[derive(Debug, Clone)]
pub struct CscPattern {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
}

impl CscPattern {
    /// Builds the pattern from per-column row lists (duplicates removed).
    pub fn from_columns(mut cols: Vec<Vec<usize>>) -> Self {
        let n = cols.len();
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for c in cols.iter_mut() {
            c.sort_unstable();
            c.dedup();
            row_idx.extend_from_slice(c);
            col_ptr.push(row_idx.len());
        }
        Self {
            n,
            col_ptr,
            row_idx,
        }
    }

    /// Position of entry `(row, col)` in the value array.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let range = self.col_ptr[col]..self.col_ptr[col + 1];
        self.row_idx[range.clone()]
            .binary_search(&row)
            .ok()
            .map(|off| range.start + off)
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }
}

/// Elimination tree and column layout of `L`.
#[derive(Debug, Clone)]
pub struct Symbolic {
    parent: Vec<usize>,
    l_col_ptr: Vec<usize>,
}

impl Symbolic {
    pub fn analyze(a: &CscPattern) -> Self {
        let n = a.n;
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for &row in &a.row_idx[a.col_ptr[k]..a.col_ptr[k + 1]] {
                let mut i = row;
                while i != NONE && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }
        // column counts: every reach entry i of row k is an entry L(k, i)
        let mut counts = vec![1usize; n];
        let mut stack = vec![0usize; n];
        let mut mark = vec![NONE; n];
        for k in 0..n {
            let top = ereach(a, k, &parent, &mut stack, &mut mark);
            for &i in &stack[top..] {
                counts[i] += 1;
            }
        }
        let mut l_col_ptr = Vec::with_capacity(n + 1);
        l_col_ptr.push(0);
        for c in counts {
            l_col_ptr.push(l_col_ptr.last().unwrap() + c);
        }
        Self { parent, l_col_ptr }
    }

    pub fn l_nnz(&self) -> usize {
        *self.l_col_ptr.last().unwrap()
    }
}

/// Nonzero pattern of row `k` of `L`, returned in `stack[top..]` in topological order.
fn ereach(
    a: &CscPattern,
    k: usize,
    parent: &[usize],
    stack: &mut [usize],
    mark: &mut [usize],
) -> usize {
    let n = a.n;
    let mut top = n;
    mark[k] = k;
    for &row in &a.row_idx[a.col_ptr[k]..a.col_ptr[k + 1]] {
        if row > k {
            continue;
        }
        let mut i = row;
        let mut len = 0;
        while mark[i] != k {
            stack[len] = i;
            len += 1;
            mark[i] = k;
            i = parent[i];
        }
        while len > 0 {
            top -= 1;
            len -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

/// Numeric factor `L` (lower triangular, diagonal first in each column).
#[derive(Debug, Clone)]
pub struct Factor<T: Real> {
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotPositiveDefinite {
    pub column: usize,
}

impl<T: Real> Factor<T> {
    pub fn factorize(
        a: &CscPattern,
        values: &[T],
        sym: &Symbolic,
    ) -> Result<Self, NotPositiveDefinite> {
        let n = a.n;
        let nnz = sym.l_nnz();
        let mut row_idx = vec![0usize; nnz];
        let mut lx = vec![T::zero(); nnz];
        let mut next: Vec<usize> = sym.l_col_ptr[..n].to_vec();
        let mut x = vec![T::zero(); n];
        let mut stack = vec![0usize; n];
        let mut mark = vec![NONE; n];
        for k in 0..n {
            let top = ereach(a, k, &sym.parent, &mut stack, &mut mark);
            x[k] = T::zero();
            for p in a.col_ptr[k]..a.col_ptr[k + 1] {
                let i = a.row_idx[p];
                if i <= k {
                    x[i] = values[p];
                }
            }
            let mut d = x[k];
            x[k] = T::zero();
            for &i in &stack[top..] {
                let lki = x[i] / lx[sym.l_col_ptr[i]];
                x[i] = T::zero();
                for p in sym.l_col_ptr[i] + 1..next[i] {
                    x[row_idx[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                next[i] += 1;
                row_idx[p] = k;
                lx[p] = lki;
            }
            if !(d > T::zero()) {
                return Err(NotPositiveDefinite { column: k });
            }
            let p = next[k];
            next[k] += 1;
            row_idx[p] = k;
            lx[p] = d.sqrt();
        }
        Ok(Self {
            col_ptr: sym.l_col_ptr.clone(),
            row_idx,
            values: lx,
        })
    }

    /// Solves `L L^T x = b` in place.
    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.col_ptr.len() - 1;
        for j in 0..n {
            let start = self.col_ptr[j];
            b[j] /= self.values[start];
            let bj = b[j];
            for p in start + 1..self.col_ptr[j + 1] {
                b[self.row_idx[p]] -= self.values[p] * bj;
            }
        }
        for j in (0..n).rev() {
            let start = self.col_ptr[j];
            let mut acc = b[j];
            for p in start + 1..self.col_ptr[j + 1] {
                acc -= self.values[p] * b[self.row_idx[p]];
            }
            b[j] = acc / self.values[start];
        }
    }
}

/// Nested-dissection node ordering of an `h x w` periodic grid with
/// 8-neighbour connectivity.
///
/// Periodic directions are opened first with a pair of separator lines; open
/// rectangles are then bisected along their longer side. Separators are
/// numbered after both halves.
pub fn nested_dissection_torus(h: usize, w: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(h * w);
    let region = Region {
        r0: 0,
        nr: h,
        periodic_r: true,
        c0: 0,
        nc: w,
        periodic_c: true,
    };
    dissect(region, h, w, &mut order);
    debug_assert_eq!(order.len(), h * w);
    order
}

#[derive(Clone, Copy)]
struct Region {
    r0: usize,
    nr: usize,
    periodic_r: bool,
    c0: usize,
    nc: usize,
    periodic_c: bool,
}

const LEAF: usize = 16;

fn dissect(g: Region, h: usize, w: usize, out: &mut Vec<usize>) {
    if g.nr == 0 || g.nc == 0 {
        return;
    }
    let node = |r: usize, c: usize| ((g.r0 + r) % h) * w + (g.c0 + c) % w;
    let push_rect =
        |out: &mut Vec<usize>, rs: std::ops::Range<usize>, cs: std::ops::Range<usize>| {
            for r in rs {
                for c in cs.clone() {
                    out.push(node(r, c));
                }
            }
        };
    if g.nr * g.nc <= LEAF {
        push_rect(out, 0..g.nr, 0..g.nc);
        return;
    }
    let cut_rows = if g.periodic_r || g.periodic_c {
        g.periodic_r && (!g.periodic_c || g.nr >= g.nc)
    } else {
        g.nr >= g.nc
    };
    let periodic_cut = if cut_rows { g.periodic_r } else { g.periodic_c };
    let len = if cut_rows { g.nr } else { g.nc };
    // separator offsets along the cut dimension and the remaining open intervals
    let (seps, parts): (Vec<usize>, Vec<(usize, usize)>) = if periodic_cut {
        let half = len / 2;
        if len <= 2 {
            ((0..len).collect(), vec![])
        } else {
            (
                vec![0, half],
                vec![(1, half - 1), (half + 1, len - half - 1)],
            )
        }
    } else {
        let mid = len / 2;
        (vec![mid], vec![(0, mid), (mid + 1, len - mid - 1)])
    };
    for (start, n) in parts {
        let sub = if cut_rows {
            Region {
                r0: g.r0 + start,
                nr: n,
                periodic_r: false,
                ..g
            }
        } else {
            Region {
                c0: g.c0 + start,
                nc: n,
                periodic_c: false,
                ..g
            }
        };
        dissect(sub, h, w, out);
    }
    for s in seps {
        if cut_rows {
            push_rect(out, s..s + 1, 0..g.nc);
        } else {
            push_rect(out, 0..g.nr, s..s + 1);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn ordering_is_a_permutation() {
        for (h, w) in [(2, 2), (3, 5), (10, 10), (50, 50), (17, 31)] {
            let mut o = nested_dissection_torus(h, w);
            o.sort_unstable();
            assert_eq!(o, (0..h * w).collect::<Vec<_>>());
        }
    }

    #[test]
    fn factor_matches_dense_solve() {
        // 1-D periodic Laplacian plus identity shift, with a wrap-around entry
        let n = 12;
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            dense[(i, i)] = 3.0;
            let j = (i + 1) % n;
            dense[(i, j)] = -1.0;
            dense[(j, i)] = -1.0;
        }
        dense[(0, 6)] = 0.5;
        dense[(6, 0)] = 0.5;
        let cols: Vec<Vec<usize>> = (0..n)
            .map(|j| (0..n).filter(|&i| dense[(i, j)] != 0.0).collect())
            .collect();
        let pat = CscPattern::from_columns(cols);
        let vals: Vec<f64> = (0..n)
            .flat_map(|j| {
                let d = &dense;
                pat.row_idx[pat.col_ptr[j]..pat.col_ptr[j + 1]]
                    .iter()
                    .map(move |&i| d[(i, j)])
                    .collect::<Vec<_>>()
            })
            .collect();
        let sym = Symbolic::analyze(&pat);
        let f = Factor::factorize(&pat, &vals, &sym).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = b.clone();
        f.solve_in_place(&mut x);
        let reference = dense
            .clone()
            .cholesky()
            .unwrap()
            .solve(&nalgebra::DVector::from_vec(b));
        for i in 0..n {
            assert!((x[i] - reference[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let pat = CscPattern::from_columns(vec![vec![0, 1], vec![0, 1]]);
        let sym = Symbolic::analyze(&pat);
        let err = Factor::factorize(&pat, &[1.0, 2.0, 2.0, 1.0], &sym).unwrap_err();
        assert_eq!(err.column, 1);
    }
}
