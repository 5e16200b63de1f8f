//! Diversity machinery: Gaussian similarity kernels, random Fourier
//! features, conditioning on already selected items, quality weighting and
//! k-DPP sampling.

mod sample;

pub use sample::{elementary_symmetric, sample_kdpp, KdppSampler};

use crate::linalg::sym_eigen_desc;
use crate::Real;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Relative eigenvalue threshold below which a direction counts as null.
pub const RANK_TOL: f64 = 1e-12;
/// Jitter added to Gram matrices before inversion.
pub const JITTER: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum DppError {
    #[error("feature rank {rank} is below the requested batch size {k}")]
    RankTooLow { rank: usize, k: usize },
    #[error("only {active} active items for a batch of {k}")]
    TooFewActive { active: usize, k: usize },
    #[error("conditioning matrix is singular even with jitter")]
    SingularConditioning,
    #[error("conditioning set must be nonempty and leave at least one item")]
    BadConditioningSet,
    #[error("item {0} is out of range")]
    OutOfRange(usize),
    #[error("item {0} was already removed")]
    Inactive(usize),
    #[error("quality vector has length {got}, expected {expected}")]
    QualityLength { got: usize, expected: usize },
    #[error("quality weight {value} at item {index} is negative or non-finite")]
    BadQuality { index: usize, value: f64 },
}

/// Which criterion produced a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    Shape,
    Property,
}

impl StageTag {
    pub fn as_str(self) -> &'static str {
        match self {
            StageTag::Shape => "shape",
            StageTag::Property => "property",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub stage: StageTag,
}

/// Dense similarity kernel.
#[derive(Debug, Clone)]
pub struct SimilarityKernel<T: Real> {
    pub l: DMatrix<T>,
    pub bandwidth: T,
}

impl<T: Real> SimilarityKernel<T> {
    pub fn len(&self) -> usize {
        self.l.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.l.nrows() == 0
    }
}

fn sq_dist<T: Real>(points: &DMatrix<T>, i: usize, j: usize) -> T {
    let mut s = T::zero();
    for c in 0..points.ncols() {
        let d = points[(i, c)] - points[(j, c)];
        s += d * d;
    }
    s
}

/// `L_ij = exp(-|x_i - x_j|² / (2 σ²))`.
pub fn gaussian_kernel<T: Real>(points: &DMatrix<T>, bandwidth: T) -> SimilarityKernel<T> {
    assert!(bandwidth > T::zero(), "bandwidth must be positive");
    let n = points.nrows();
    let denom = T::lit(2.0) * bandwidth * bandwidth;
    let mut l = DMatrix::from_element(n, n, T::one());
    for j in 0..n {
        for i in 0..j {
            let v = (-sq_dist(points, i, j) / denom).exp();
            l[(i, j)] = v;
            l[(j, i)] = v;
        }
    }
    SimilarityKernel { l, bandwidth }
}

/// Median pairwise Euclidean distance, over at most `max_points` evenly
/// strided rows.
pub fn median_distance<T: Real>(points: &DMatrix<T>, max_points: usize) -> T {
    let n = points.nrows();
    let stride = n.div_ceil(max_points.max(2)).max(1);
    let rows: Vec<usize> = (0..n).step_by(stride).collect();
    let mut d: Vec<f64> = Vec::with_capacity(rows.len() * rows.len() / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[..a] {
            d.push(sq_dist(points, i, j).as_f64().sqrt());
        }
    }
    if d.is_empty() {
        return T::one();
    }
    d.sort_by(f64::total_cmp);
    T::lit(d[d.len() / 2])
}

/// Conditions a dense kernel on the items in `b` having been selected.
/// Returns the kernel over the remaining items, in ascending index order,
/// together with those indices.
pub fn condition_exact<T: Real>(
    kernel: &SimilarityKernel<T>,
    b: &[usize],
) -> Result<(SimilarityKernel<T>, Vec<usize>), DppError> {
    let n = kernel.len();
    let mut in_b = vec![false; n];
    for &i in b {
        if i >= n {
            return Err(DppError::OutOfRange(i));
        }
        in_b[i] = true;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| !in_b[i]).collect();
    if b.is_empty() || rest.is_empty() {
        return Err(DppError::BadConditioningSet);
    }
    let mut a = kernel.l.clone();
    for &i in &rest {
        a[(i, i)] += T::one();
    }
    let inv = invert_spd(a)?;
    let sub = inv.select_rows(&rest).select_columns(&rest);
    let mut out = invert_spd(sub)?;
    for i in 0..rest.len() {
        out[(i, i)] -= T::one();
    }
    out = (&out + out.transpose()) * T::lit(0.5);
    Ok((
        SimilarityKernel {
            l: out,
            bandwidth: kernel.bandwidth,
        },
        rest,
    ))
}

fn invert_spd<T: Real>(m: DMatrix<T>) -> Result<DMatrix<T>, DppError> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.inverse());
    }
    let mut j = m;
    for i in 0..j.nrows() {
        j[(i, i)] += T::lit(JITTER);
    }
    j.cholesky()
        .map(|c| c.inverse())
        .ok_or(DppError::SingularConditioning)
}

/// Random Fourier feature draw: frequencies (d × D_v) and phases.
#[derive(Debug, Clone)]
pub struct RffParams<T: Real> {
    pub frequencies: DMatrix<T>,
    pub phases: DVector<T>,
}

/// Low-rank feature matrix whose row inner products approximate a kernel.
/// Rows are never deleted; removed items are marked inactive.
#[derive(Debug, Clone)]
pub struct LowRankFeature<T: Real> {
    v: DMatrix<T>,
    active: Vec<bool>,
    ids: Vec<usize>,
    rff: Option<RffParams<T>>,
    absorbed: usize,
}

/// Outcome of a low-rank conditioning step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conditioned {
    /// Directions projected out.
    pub rank: usize,
    /// Members of the conditioning set already in the span of earlier ones.
    pub dropped: usize,
}

/// Random Fourier features of the Gaussian kernel with bandwidth `σ`:
/// row `i` is `√(2/D_v) cos(f_jᵀ x_i + b_j)` with `f_j ~ N(0, I/σ²)` and
/// `b_j ~ U[0, 2π)`.
pub fn rff_features<T: Real>(
    points: &DMatrix<T>,
    bandwidth: T,
    d_v: usize,
    seed: u64,
) -> LowRankFeature<T> {
    assert!(d_v >= 1, "feature size must be positive");
    assert!(bandwidth > T::zero(), "bandwidth must be positive");
    let d = points.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inv_bw = 1.0 / bandwidth.as_f64();
    let frequencies = DMatrix::from_fn(d, d_v, |_, _| {
        T::lit(rng.sample::<f64, _>(StandardNormal) * inv_bw)
    });
    let phases = DVector::from_fn(d_v, |_, _| T::lit(rng.gen_range(0.0..2.0 * PI)));
    let scale = T::lit((2.0 / d_v as f64).sqrt());
    let mut v = points * &frequencies;
    for j in 0..d_v {
        let b = phases[j];
        v.column_mut(j)
            .iter_mut()
            .for_each(|x| *x = scale * (*x + b).cos());
    }
    let mut f = LowRankFeature::from_matrix(v);
    f.rff = Some(RffParams {
        frequencies,
        phases,
    });
    f
}

impl<T: Real> LowRankFeature<T> {
    /// Wraps an explicit feature matrix (one row per item), all items active.
    pub fn from_matrix(v: DMatrix<T>) -> Self {
        let n = v.nrows();
        Self {
            v,
            active: vec![true; n],
            ids: (0..n).collect(),
            rff: None,
            absorbed: 0,
        }
    }

    /// Item ids carried by the rows, `0..n` unless permuted.
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.v.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.v.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.v.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.v
    }

    pub fn rff(&self) -> Option<&RffParams<T>> {
        self.rff.as_ref()
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active[i]
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.active[i]).collect()
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Total rank projected out by conditioning so far.
    pub fn absorbed_rank(&self) -> usize {
        self.absorbed
    }

    /// Marks items as no longer selectable without touching the features.
    pub fn deactivate(&mut self, items: &[usize]) -> Result<(), DppError> {
        for &i in items {
            if i >= self.len() {
                return Err(DppError::OutOfRange(i));
            }
        }
        for &i in items {
            self.active[i] = false;
        }
        Ok(())
    }

    /// Rows reordered so that new row `r` is old row `perm[r]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.len(), "permutation length mismatch");
        Self {
            v: self.v.select_rows(perm),
            active: perm.iter().map(|&p| self.active[p]).collect(),
            ids: perm.iter().map(|&p| self.ids[p]).collect(),
            rff: self.rff.clone(),
            absorbed: self.absorbed,
        }
    }

    /// Kernel implied on the active items, `V_A V_Aᵀ`.
    pub fn implied_kernel(&self) -> DMatrix<T> {
        let va = self.v.select_rows(&self.active_indices());
        &va * va.transpose()
    }

    /// Conditions on the items `b` having been selected: every row is
    /// projected onto the orthogonal complement of the span of `V_b`, and
    /// `b` is removed from the active set. Members of `b` that are linearly
    /// dependent on the others (eigenvalues of `V_b V_bᵀ` below
    /// `1e-12 λ_max`, or below the jitter) are left out of the projector.
    pub fn condition_lowrank(&mut self, b: &[usize]) -> Result<Conditioned, DppError> {
        if b.is_empty() {
            return Err(DppError::BadConditioningSet);
        }
        for &i in b {
            if i >= self.len() {
                return Err(DppError::OutOfRange(i));
            }
            if !self.active[i] {
                return Err(DppError::Inactive(i));
            }
        }
        let vb = self.v.select_rows(b);
        let gram = &vb * vb.transpose();
        let (vals, vecs) = sym_eigen_desc(gram);
        let top = vals[0].max(T::zero());
        let floor = (T::lit(RANK_TOL) * top).max(T::lit(JITTER));
        let rank = vals.iter().take_while(|&&l| l > floor).count();
        let dropped = b.len() - rank;
        if dropped > 0 {
            log::warn!(
                "conditioning set of {} items spans only {rank} directions",
                b.len()
            );
        }
        for i in b {
            self.active[*i] = false;
        }
        if rank > 0 {
            // orthonormal basis of the row span: Q = Λ^{-1/2} Uᵀ V_b
            let mut q = vecs.columns(0, rank).tr_mul(&vb);
            for r in 0..rank {
                let s = T::one() / vals[r].sqrt();
                q.row_mut(r).iter_mut().for_each(|x| *x *= s);
            }
            let coeff = &self.v * q.transpose();
            self.v -= coeff * q;
            for &i in b {
                self.v.row_mut(i).fill(T::zero());
            }
        }
        self.absorbed += rank;
        Ok(Conditioned { rank, dropped })
    }

    /// Scales row `i` by `q_i`, so the implied kernel becomes `q_i q_j L_ij`.
    /// `q` is indexed by row, including inactive rows.
    pub fn apply_quality(&self, q: &[T]) -> Result<Self, DppError> {
        if q.len() != self.len() {
            return Err(DppError::QualityLength {
                got: q.len(),
                expected: self.len(),
            });
        }
        if let Some((index, v)) = q
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite_value() || **v < T::zero())
        {
            return Err(DppError::BadQuality {
                index,
                value: v.as_f64(),
            });
        }
        let mut out = self.clone();
        for (i, &w) in q.iter().enumerate() {
            out.v.row_mut(i).iter_mut().for_each(|x| *x *= w);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests;
