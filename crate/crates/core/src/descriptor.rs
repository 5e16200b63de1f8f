//! Latent shape descriptors.
//!
//! The built-in descriptor is a linear one: principal components of the
//! flattened signed distance fields, standardized per component. Latents
//! trained elsewhere (e.g. by a variational autoencoder) come in through the
//! latent CSV, `id,z0,...,z{D-1}`, one row per shape in id order. Lines that
//! start with `#` are metadata comments.

use crate::corpus::{SdfShape, ShapeLibrary};
use crate::linalg::{fix_column_signs, orthonormal_columns, sym_eigen_desc};
use crate::{rng, Real};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("rank deficient: {rank} nonzero singular values, {requested} components requested")]
    RankDeficient { rank: usize, requested: usize },
    #[error("need more shapes than components: n = {n}, D_z = {d_z}")]
    TooFewShapes { n: usize, d_z: usize },
    #[error("dimension mismatch: basis is {expected_h}x{expected_w}, library is {height}x{width}")]
    DimensionMismatch {
        expected_h: usize,
        expected_w: usize,
        height: usize,
        width: usize,
    },
    #[error("bad latent CSV header {found:?} (expected \"id,z0,...\")")]
    BadHeader { found: String },
    #[error("latent CSV has {found} rows, expected {expected}")]
    RowCountMismatch { expected: usize, found: usize },
    #[error("non-finite latent value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("latent CSV line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentSource {
    Pca,
    Imported,
}

/// One standardized latent row per shape.
#[derive(Debug, Clone)]
pub struct LatentMatrix<T: Real> {
    pub z: DMatrix<T>,
    pub source: LatentSource,
}

impl<T: Real> LatentMatrix<T> {
    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    /// Per-column mean and population standard deviation.
    pub fn column_stats(&self) -> Vec<(T, T)> {
        column_stats(&self.z)
    }

    /// Centers and scales every column to zero mean and unit standard deviation.
    pub fn standardize(&mut self) {
        for (j, (mean, std)) in column_stats(&self.z).into_iter().enumerate() {
            let s = if std > T::zero() { std } else { T::one() };
            for v in self.z.column_mut(j).iter_mut() {
                *v = (*v - mean) / s;
            }
        }
    }
}

pub(crate) fn column_stats<T: Real>(m: &DMatrix<T>) -> Vec<(T, T)> {
    let n = T::count(m.nrows());
    m.column_iter()
        .map(|c| {
            let mean = c.sum() / n;
            let var = c.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            (mean, var.sqrt())
        })
        .collect()
}

/// Linear descriptor basis.
#[derive(Debug, Clone)]
pub struct PcaBasis<T: Real> {
    pub height: usize,
    pub width: usize,
    pub mean: DVector<T>,
    /// `D_z x (H W)`, orthonormal rows.
    pub components: DMatrix<T>,
    /// Standard deviation of each component's scores on the fitting set.
    pub scales: DVector<T>,
    pub explained_variance: DVector<T>,
    /// Set when fewer components than requested carried variance.
    pub reduced_from: Option<usize>,
}

impl<T: Real> PcaBasis<T> {
    pub fn dim(&self) -> usize {
        self.components.nrows()
    }

    /// SDF whose standardized latent is `z` (the affine inverse on the span).
    pub fn reconstruct(&self, z: &DVector<T>) -> DVector<T> {
        let scaled = z.component_mul(&self.scales);
        &self.mean + self.components.tr_mul(&scaled)
    }

    pub fn transform_field(&self, field: &[T]) -> Result<DVector<T>, DescriptorError> {
        if field.len() != self.mean.len() {
            return Err(DescriptorError::DimensionMismatch {
                expected_h: self.height,
                expected_w: self.width,
                height: field.len(),
                width: 1,
            });
        }
        let centered = DVector::from_iterator(
            field.len(),
            field.iter().zip(self.mean.iter()).map(|(&a, &m)| a - m),
        );
        Ok((&self.components * centered).component_div(&self.scales))
    }
}

fn sdf_matrix<T: Real>(sdfs: &[&SdfShape<T>], p: usize) -> DMatrix<T> {
    DMatrix::from_fn(sdfs.len(), p, |i, j| sdfs[i].field[j])
}

const EXACT_LIMIT: usize = 600;
const OVERSAMPLE: usize = 10;
const POWER_ITERS: usize = 6;
// relative to the largest squared singular value; squared values from a Gram
// eigendecomposition are only accurate to about machine epsilon
const RANK_TOL: f64 = 1e-12;

/// Fits the top-`d_z` principal directions of the flattened SDFs.
///
/// Degenerate (boundary-free) shapes are left out of the fit. Small problems
/// use an exact eigendecomposition of the smaller Gram matrix; larger ones a
/// seeded randomized subspace iteration followed by Rayleigh–Ritz.
pub fn fit_pca<T: Real>(
    library: &ShapeLibrary<T>,
    d_z: usize,
    seed: u64,
) -> Result<PcaBasis<T>, DescriptorError> {
    let fit_set: Vec<&SdfShape<T>> = library
        .sdfs()
        .iter()
        .filter(|s| s.degenerate.is_none())
        .collect();
    let n = fit_set.len();
    if d_z == 0 || n <= d_z {
        return Err(DescriptorError::TooFewShapes { n, d_z });
    }
    let p = library.height() * library.width();
    let mut x = sdf_matrix(&fit_set, p);
    let nt = T::count(n);
    let mean = DVector::from_iterator(p, x.column_iter().map(|c| c.sum() / nt));
    for mut row in x.row_iter_mut() {
        row -= mean.transpose();
    }

    // right singular vectors (p x r) and singular values, descending
    let (v, s) = if n.min(p) <= EXACT_LIMIT {
        exact_svd(&x)
    } else {
        randomized_svd(&x, d_z + OVERSAMPLE, seed)
    };
    let top = s[0];
    let rank = s
        .iter()
        .filter(|&&sv| top > T::zero() && sv * sv > top * top * T::lit(RANK_TOL))
        .count();
    if rank == 0 {
        return Err(DescriptorError::RankDeficient {
            rank,
            requested: d_z,
        });
    }
    let kept = d_z.min(rank);
    let reduced_from = (kept < d_z).then(|| {
        log::warn!(
            "descriptor: only {rank} nonzero singular values, reducing D_z from {d_z} to {kept}"
        );
        d_z
    });
    let mut vk = v.columns(0, kept).into_owned();
    fix_column_signs(&mut vk);
    let components = vk.transpose();

    let scores = &x * &vk;
    let scales = DVector::from_iterator(kept, column_stats(&scores).into_iter().map(|(_, sd)| sd));
    let explained_variance =
        DVector::from_iterator(kept, s.iter().take(kept).map(|&sv| sv * sv / nt));
    Ok(PcaBasis {
        height: library.height(),
        width: library.width(),
        mean,
        components,
        scales,
        explained_variance,
        reduced_from,
    })
}

fn exact_svd<T: Real>(x: &DMatrix<T>) -> (DMatrix<T>, Vec<T>) {
    let (n, p) = x.shape();
    if n <= p {
        // X X^T = U S^2 U^T, V = X^T U / s
        let (vals, u) = sym_eigen_desc(x * x.transpose());
        let s: Vec<T> = vals.iter().map(|&l| l.max(T::zero()).sqrt()).collect();
        let mut v = x.tr_mul(&u);
        for (j, &sj) in s.iter().enumerate() {
            let mut col = v.column_mut(j);
            if sj > T::zero() {
                col /= sj;
            }
        }
        (reorthonormalize(v, &s), s)
    } else {
        let (vals, v) = sym_eigen_desc(x.tr_mul(x));
        let s = vals.iter().map(|&l| l.max(T::zero()).sqrt()).collect();
        (v, s)
    }
}

fn randomized_svd<T: Real>(x: &DMatrix<T>, l: usize, seed: u64) -> (DMatrix<T>, Vec<T>) {
    let (n, p) = x.shape();
    let l = l.min(n).min(p);
    let mut rng = rng::stream(seed, rng::labels::DESCRIPTOR, 0);
    let omega = DMatrix::from_fn(p, l, |_, _| T::lit(StandardNormal.sample(&mut rng)));
    let mut q = orthonormal_columns(x * omega);
    for _ in 0..POWER_ITERS {
        let z = orthonormal_columns(x.tr_mul(&q));
        q = orthonormal_columns(x * z);
    }
    // B = Q^T X (l x p); B B^T = U S^2 U^T; V = B^T U / s
    let b = q.tr_mul(x);
    let (vals, u) = sym_eigen_desc(&b * b.transpose());
    let s: Vec<T> = vals.iter().map(|&l| l.max(T::zero()).sqrt()).collect();
    let mut v = b.tr_mul(&u);
    for (j, &sj) in s.iter().enumerate() {
        if sj > T::zero() {
            let mut col = v.column_mut(j);
            col /= sj;
        }
    }
    (reorthonormalize(v, &s), s)
}

// Columns with nonzero singular value are re-orthonormalized in order; the
// rest are left as-is (they are discarded by the rank check).
fn reorthonormalize<T: Real>(v: DMatrix<T>, s: &[T]) -> DMatrix<T> {
    let top = s.first().copied().unwrap_or(T::zero());
    let r = s
        .iter()
        .filter(|&&sv| top > T::zero() && sv * sv > top * top * T::lit(RANK_TOL))
        .count();
    if r == 0 {
        return v;
    }
    let mut out = v.clone();
    // modified Gram-Schmidt keeps the column order (and thus the ranking)
    for j in 0..r {
        for i in 0..j {
            let proj = out.column(i).dot(&out.column(j));
            let ci = out.column(i).into_owned();
            let mut cj = out.column_mut(j);
            cj.axpy(-proj, &ci, T::one());
        }
        let norm = out.column(j).norm();
        let mut cj = out.column_mut(j);
        cj /= norm;
    }
    out
}

/// Projects every shape of `library` onto the basis.
pub fn transform<T: Real>(
    basis: &PcaBasis<T>,
    library: &ShapeLibrary<T>,
) -> Result<LatentMatrix<T>, DescriptorError> {
    if library.height() != basis.height || library.width() != basis.width {
        return Err(DescriptorError::DimensionMismatch {
            expected_h: basis.height,
            expected_w: basis.width,
            height: library.height(),
            width: library.width(),
        });
    }
    let mut z = DMatrix::zeros(library.len(), basis.dim());
    for (i, sdf) in library.sdfs().iter().enumerate() {
        z.set_row(i, &basis.transform_field(&sdf.field)?.transpose());
    }
    Ok(LatentMatrix {
        z,
        source: LatentSource::Pca,
    })
}

/// Writes the latent CSV. `comment` lines are emitted first, prefixed by `# `.
pub fn write_latents<T: Real>(
    path: &Path,
    latents: &LatentMatrix<T>,
    comments: &[String],
) -> Result<(), DescriptorError> {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("id");
    for j in 0..latents.dim() {
        let _ = write!(out, ",z{j}");
    }
    out.push('\n');
    for (i, row) in latents.z.row_iter().enumerate() {
        let _ = write!(out, "{i}");
        for v in row.iter() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| DescriptorError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a latent CSV, checking the header, row count, ids and finiteness.
///
/// Columns are re-standardized (with a warning) when any column's standard
/// deviation is off from 1 by more than 0.2.
pub fn import_latents<T: Real>(
    path: &Path,
    expected_n: usize,
) -> Result<LatentMatrix<T>, DescriptorError> {
    let text = std::fs::read_to_string(path).map_err(|source| DescriptorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_latents(&text, expected_n)
}

pub fn parse_latents<T: Real>(
    text: &str,
    expected_n: usize,
) -> Result<LatentMatrix<T>, DescriptorError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(DescriptorError::BadHeader {
        found: String::new(),
    })?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    let d = cols.len().saturating_sub(1);
    let header_ok = d >= 1
        && cols[0] == "id"
        && cols[1..]
            .iter()
            .enumerate()
            .all(|(j, c)| *c == format!("z{j}"));
    if !header_ok {
        return Err(DescriptorError::BadHeader {
            found: header.to_string(),
        });
    }
    let mut values: Vec<T> = Vec::with_capacity(expected_n * d);
    let mut rows = 0usize;
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != d + 1 {
            return Err(DescriptorError::Parse {
                line: lineno + 1,
                reason: format!("expected {} fields, found {}", d + 1, fields.len()),
            });
        }
        let id: usize = fields[0].parse().map_err(|_| DescriptorError::Parse {
            line: lineno + 1,
            reason: format!("bad id {:?}", fields[0]),
        })?;
        if id != rows {
            return Err(DescriptorError::Parse {
                line: lineno + 1,
                reason: format!("id {id} out of order, expected {rows}"),
            });
        }
        for (col, f) in fields[1..].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| DescriptorError::Parse {
                line: lineno + 1,
                reason: format!("bad number {f:?}"),
            })?;
            if !v.is_finite() {
                return Err(DescriptorError::NonFiniteValue { row: rows, col });
            }
            values.push(T::lit(v));
        }
        rows += 1;
    }
    if rows != expected_n {
        return Err(DescriptorError::RowCountMismatch {
            expected: expected_n,
            found: rows,
        });
    }
    let mut latents = LatentMatrix {
        z: DMatrix::from_row_slice(rows, d, &values),
        source: LatentSource::Imported,
    };
    let off = latents
        .column_stats()
        .iter()
        .any(|&(_, sd)| (sd - T::one()).abs() > T::lit(0.2));
    if off {
        log::warn!("imported latents are not standardized; standardizing columns in place");
        latents.standardize();
    }
    Ok(latents)
}
