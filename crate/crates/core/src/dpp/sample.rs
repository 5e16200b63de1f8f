//! k-DPP sampling through the eigendecomposition of the smaller of the
//! primal kernel `V Vᵀ` and the dual Gram matrix `Vᵀ V`.

use super::{DppError, LowRankFeature, RANK_TOL};
use crate::linalg::sym_eigen_desc;
use crate::rng::keyed_uniform;
use crate::Real;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `e_0..e_k` of the given eigenvalues (negative values clamped to zero).
pub fn elementary_symmetric(eigenvalues: &[f64], k: usize) -> Vec<f64> {
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for &l in eigenvalues {
        let l = l.max(0.0);
        for j in (1..=k).rev() {
            e[j] += l * e[j - 1];
        }
    }
    e
}

enum Basis<T: Real> {
    // eigenvectors of V Vᵀ over active items, n_a x r
    Primal(DMatrix<T>),
    // active rows V_a (n_a x D) and eigenvectors of V_aᵀ V_a (D x r)
    Dual { va: DMatrix<T>, u: DMatrix<T> },
}

/// Frozen eigendecomposition of a feature, reusable across draws.
pub struct KdppSampler<T: Real> {
    ids: Vec<usize>,
    // eigenvalues above the rank threshold, descending, scaled to mean 1
    lambda: Vec<f64>,
    basis: Basis<T>,
}

impl<T: Real> KdppSampler<T> {
    pub fn new(feature: &LowRankFeature<T>) -> Self {
        let active = feature.active_indices();
        let ids = active.iter().map(|&i| feature.ids()[i]).collect();
        let va = feature.matrix().select_rows(&active);
        let primal = va.nrows() <= va.ncols();
        let (vals, vecs) = if primal {
            sym_eigen_desc(&va * va.transpose())
        } else {
            sym_eigen_desc(va.tr_mul(&va))
        };
        let top = vals.iter().next().map_or(0.0, |v| v.as_f64());
        let rank = if top > 0.0 {
            vals.iter()
                .take_while(|v| v.as_f64() > RANK_TOL * top)
                .count()
        } else {
            0
        };
        let mean = if rank > 0 {
            vals.iter().take(rank).map(|v| v.as_f64()).sum::<f64>() / rank as f64
        } else {
            1.0
        };
        let lambda = vals.iter().take(rank).map(|v| v.as_f64() / mean).collect();
        let vecs = vecs.columns(0, rank).into_owned();
        let basis = if primal {
            Basis::Primal(vecs)
        } else {
            Basis::Dual { va, u: vecs }
        };
        Self { ids, lambda, basis }
    }

    /// Numerical rank of the kernel over the active items.
    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn n_items(&self) -> usize {
        self.ids.len()
    }

    /// Draws `k` distinct item ids.
    pub fn sample<R: Rng>(&self, k: usize, rng: &mut R) -> Result<Vec<usize>, DppError> {
        if k > self.n_items() {
            return Err(DppError::TooFewActive {
                active: self.n_items(),
                k,
            });
        }
        if k > self.rank() {
            return Err(DppError::RankTooLow {
                rank: self.rank(),
                k,
            });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let chosen = self.choose_eigenvectors(k, rng);
        let mut basis = self.item_space(&chosen);
        let n = self.n_items();
        let mut taken = vec![false; n];
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let step_seed: u64 = rng.gen();
            let mut best: Option<(usize, f64)> = None;
            for i in 0..n {
                if taken[i] {
                    continue;
                }
                let p: f64 = basis.row(i).iter().map(|x| x.as_f64() * x.as_f64()).sum();
                if !(p > 0.0) {
                    continue;
                }
                // Gumbel-max keyed by item id: exact categorical draw that does
                // not depend on item order
                let u = keyed_uniform(step_seed, self.ids[i] as u64);
                let score = p.ln() - (-u.ln()).ln();
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((i, score));
                }
            }
            let Some((i, _)) = best else {
                return Err(DppError::RankTooLow { rank: out.len(), k });
            };
            taken[i] = true;
            out.push(self.ids[i]);
            basis = eliminate(basis, i);
        }
        Ok(out)
    }

    fn choose_eigenvectors<R: Rng>(&self, k: usize, rng: &mut R) -> Vec<usize> {
        let r = self.rank();
        // e[l][m]: l-th elementary symmetric polynomial of the first m eigenvalues
        let mut e = vec![vec![0.0f64; r + 1]; k + 1];
        e[0].iter_mut().for_each(|v| *v = 1.0);
        for l in 1..=k {
            for m in 1..=r {
                e[l][m] = e[l][m - 1] + self.lambda[m - 1] * e[l - 1][m - 1];
            }
        }
        let mut chosen = Vec::with_capacity(k);
        let mut l = k;
        for m in (1..=r).rev() {
            if l == 0 {
                break;
            }
            if m == l {
                chosen.extend((0..m).rev());
                break;
            }
            let p = self.lambda[m - 1] * e[l - 1][m - 1] / e[l][m];
            if rng.gen::<f64>() < p {
                chosen.push(m - 1);
                l -= 1;
            }
        }
        chosen.sort_unstable();
        chosen
    }

    fn item_space(&self, chosen: &[usize]) -> DMatrix<T> {
        match &self.basis {
            Basis::Primal(vecs) => vecs.select_columns(chosen),
            Basis::Dual { va, u } => {
                let mut m = va * u.select_columns(chosen);
                for mut c in m.column_iter_mut() {
                    let norm = c.norm();
                    c /= norm;
                }
                m
            }
        }
    }
}

// Restricts the column span to vectors vanishing at item `i`, then
// re-orthonormalizes.
fn eliminate<T: Real>(mut v: DMatrix<T>, i: usize) -> DMatrix<T> {
    let cols = v.ncols();
    let (j, _) = (0..cols).fold((0, T::zero()), |(bj, bv), c| {
        let a = v[(i, c)].abs();
        if a > bv {
            (c, a)
        } else {
            (bj, bv)
        }
    });
    let pivot = v.column(j).into_owned();
    let pv = pivot[i];
    for c in 0..cols {
        if c == j {
            continue;
        }
        let f = v[(i, c)] / pv;
        v.column_mut(c).axpy(-f, &pivot, T::one());
    }
    let mut v = v.remove_column(j);
    // two passes of modified Gram-Schmidt
    for _ in 0..2 {
        for c in 0..v.ncols() {
            for p in 0..c {
                let proj = v.column(p).dot(&v.column(c));
                let col_p = v.column(p).into_owned();
                v.column_mut(c).axpy(-proj, &col_p, T::one());
            }
            let norm = v.column(c).norm();
            if norm > T::zero() {
                v.column_mut(c).unscale_mut(norm);
            }
        }
    }
    v
}

/// One k-DPP draw from a fresh stream seeded with `seed`.
pub fn sample_kdpp<T: Real>(
    feature: &LowRankFeature<T>,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>, DppError> {
    KdppSampler::new(feature).sample(k, &mut ChaCha8Rng::seed_from_u64(seed))
}
