//! Multiresponse Gaussian-process surrogate from latent descriptors to
//! property vectors.
//!
//! The prior is `Σ ⊗ r(z, z')` with a constant mean and the squared
//! exponential correlation `r = exp(-Σ_d 10^ω_d (z_d - z'_d)²)`. The mean
//! weights and `Σ` are profiled out by generalized least squares, so fitting
//! only searches over the roughness parameters `ω`.

mod optimize;

pub use optimize::{minimize, LbfgsOptions, Minimum};

use crate::linalg::SpdFactor;
use crate::rng::{labels, stream};
use crate::Real;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_10;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("need at least {required} distinct training points, got {got}")]
    TooFewPoints { got: usize, required: usize },
    #[error("training inputs have {z_rows} rows but outputs have {p_rows}")]
    DimensionMismatch { z_rows: usize, p_rows: usize },
    #[error("roughness vector has length {got}, inputs have dimension {expected}")]
    OmegaLength { got: usize, expected: usize },
    #[error("non-finite training value at row {row}")]
    NonFinite { row: usize },
    #[error("correlation matrix is not positive definite even with nugget {cap:e}")]
    IllConditioned { cap: f64 },
}

/// Fitting options. The defaults optimize from the warm start (or the box
/// center) plus 8 seeded restarts inside `[-3, 3]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpConfig {
    pub omega_min: f64,
    pub omega_max: f64,
    pub restarts: usize,
    /// How many of the candidate starting points (ranked by their initial
    /// likelihood, warm start always included) are optimized to convergence.
    pub polish: usize,
    pub max_iters: usize,
    pub nugget_start: f64,
    pub nugget_cap: f64,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            omega_min: -3.0,
            omega_max: 3.0,
            restarts: 8,
            polish: 9,
            max_iters: 100,
            nugget_start: 1e-10,
            nugget_cap: 1e-4,
            seed: 0,
        }
    }
}

/// `exp(-Σ_d 10^ω_d (z1_d - z2_d)²)`.
pub fn correlation<T: Real>(z1: &[T], z2: &[T], omega: &[f64]) -> T {
    let s: T = z1
        .iter()
        .zip(z2)
        .zip(omega)
        .map(|((&a, &b), &w)| T::lit(10f64.powf(w)) * (a - b) * (a - b))
        .sum();
    (-s).exp()
}

/// Root mean square change of the roughness parameters between two fits.
pub fn roughness_residual(omega_new: &[f64], omega_old: &[f64]) -> f64 {
    assert_eq!(
        omega_new.len(),
        omega_old.len(),
        "roughness vectors differ in length"
    );
    let ss: f64 = omega_new
        .iter()
        .zip(omega_old)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    (ss / omega_new.len() as f64).sqrt()
}

/// Indices of the rows kept after dropping rows closer than `tol` to an
/// earlier row.
pub fn distinct_rows<T: Real>(z: &DMatrix<T>, tol: f64) -> Vec<usize> {
    let tol2 = T::lit(tol * tol);
    let mut kept: Vec<usize> = Vec::with_capacity(z.nrows());
    for i in 0..z.nrows() {
        let dup = kept.iter().any(|&j| {
            let mut d2 = T::zero();
            for c in 0..z.ncols() {
                let d = z[(i, c)] - z[(j, c)];
                d2 += d * d;
            }
            d2 < tol2
        });
        if !dup {
            kept.push(i);
        }
    }
    kept
}

/// Posterior predictive mean and covariance at one query point.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T: Real> {
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
}

/// A fitted surrogate. Immutable; reconstructible bit for bit with
/// [`GpModel::from_parts`].
#[derive(Debug, Clone)]
pub struct GpModel<T: Real> {
    omega: Vec<f64>,
    theta: Vec<T>,
    train_z: DMatrix<T>,
    train_p: DMatrix<T>,
    nugget: f64,
    chol: SpdFactor<T>,
    beta: DVector<T>,
    sigma: DMatrix<T>,
    // R^-1 (P - 1 beta^T)
    weights: DMatrix<T>,
    rinv_one: DVector<T>,
    one_rinv_one: T,
    nll: T,
    dropped: usize,
}

struct Profile<T: Real> {
    chol: SpdFactor<T>,
    nugget: T,
    beta: DVector<T>,
    sigma: DMatrix<T>,
    weights: DMatrix<T>,
    rinv_one: DVector<T>,
    one_rinv_one: T,
    nll: T,
    grad: Option<Vec<f64>>,
}

struct Data<T: Real> {
    // D x n, one contiguous column per training point
    zt: DMatrix<T>,
    z: DMatrix<T>,
    p: DMatrix<T>,
    eps: T,
}

impl<T: Real> Data<T> {
    fn new(z: DMatrix<T>, p: DMatrix<T>) -> Self {
        let n = p.nrows();
        // fixed ridge on the profiled covariance keeps log det finite for
        // constant or collinear responses without making it depend on omega
        let mut var = T::zero();
        for c in 0..p.ncols() {
            let col = p.column(c);
            let mean = col.sum() / T::count(n);
            var += col.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::count(n);
        }
        let eps = T::lit(1e-10) * var / T::count(p.ncols().max(1)) + T::lit(1e-30);
        Self {
            zt: z.transpose(),
            z,
            p,
            eps,
        }
    }

    fn n(&self) -> usize {
        self.p.nrows()
    }

    fn correlation_matrix(&self, theta: &[T]) -> DMatrix<T> {
        let n = self.n();
        let mut r = DMatrix::from_element(n, n, T::one());
        for j in 0..n {
            let zj = self.zt.column(j);
            for i in 0..j {
                let zi = self.zt.column(i);
                let mut s = T::zero();
                for d in 0..theta.len() {
                    let diff = zi[d] - zj[d];
                    s += theta[d] * diff * diff;
                }
                let v = (-s).exp();
                r[(i, j)] = v;
                r[(j, i)] = v;
            }
        }
        r
    }

    fn profile(
        &self,
        omega: &[f64],
        nugget_start: f64,
        nugget_cap: f64,
        grad: bool,
    ) -> Option<Profile<T>> {
        let n = self.n();
        let m = self.p.ncols();
        let theta: Vec<T> = omega.iter().map(|&w| T::lit(10f64.powf(w))).collect();
        let r = self.correlation_matrix(&theta);
        let chol = SpdFactor::with_ladder(&r, T::lit(nugget_start), T::lit(nugget_cap))?;
        let nugget = chol.jitter();

        let rinv_one = chol.solve_vec(&DVector::from_element(n, T::one()));
        let one_rinv_one = rinv_one.sum();
        if !(one_rinv_one > T::zero()) {
            return None;
        }
        let beta = self.p.tr_mul(&rinv_one) / one_rinv_one;
        let mut resid = self.p.clone();
        for c in 0..m {
            let b = beta[c];
            resid.column_mut(c).iter_mut().for_each(|v| *v -= b);
        }
        let weights = chol.solve(&resid);
        let mut sigma = resid.tr_mul(&weights) / T::count(n);
        sigma = (&sigma + sigma.transpose()) * T::lit(0.5);
        let sig_chol = SpdFactor::new(&sigma, self.eps)?;
        let nll = T::count(n) * T::lit(0.5) * sig_chol.log_det()
            + T::count(m) * T::lit(0.5) * chol.log_det();
        if !nll.is_finite_value() {
            return None;
        }

        let grad = grad.then(|| {
            let rinv = chol.inverse();
            let a = sig_chol.solve(&weights.transpose()).transpose();
            let half_m = T::count(m) * T::lit(0.5);
            let dims = theta.len();
            let mut acc = vec![T::zero(); dims];
            for j in 0..n {
                let zj = self.zt.column(j);
                for i in 0..j {
                    let mut q = T::zero();
                    for c in 0..m {
                        q += a[(i, c)] * weights[(j, c)];
                    }
                    let w = (half_m * rinv[(i, j)] - T::lit(0.5) * q) * r[(i, j)];
                    let zi = self.zt.column(i);
                    for d in 0..dims {
                        let diff = zi[d] - zj[d];
                        acc[d] += w * diff * diff;
                    }
                }
            }
            acc.iter()
                .zip(&theta)
                .map(|(&g, &t)| -2.0 * LN_10 * (t * g).as_f64())
                .collect()
        });

        Some(Profile {
            chol,
            nugget,
            beta,
            sigma,
            weights,
            rinv_one,
            one_rinv_one,
            nll,
            grad,
        })
    }
}

fn check_inputs<T: Real>(z: &DMatrix<T>, p: &DMatrix<T>) -> Result<(), GpError> {
    if z.nrows() != p.nrows() {
        return Err(GpError::DimensionMismatch {
            z_rows: z.nrows(),
            p_rows: p.nrows(),
        });
    }
    for i in 0..z.nrows() {
        if z.row(i)
            .iter()
            .chain(p.row(i).iter())
            .any(|v| !v.is_finite_value())
        {
            return Err(GpError::NonFinite { row: i });
        }
    }
    Ok(())
}

fn dedup<T: Real>(z: &DMatrix<T>, p: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>, usize) {
    let keep = distinct_rows(z, 1e-10);
    let dropped = z.nrows() - keep.len();
    if dropped == 0 {
        return (z.clone(), p.clone(), 0);
    }
    log::warn!("dropping {dropped} duplicate training inputs before fitting");
    (z.select_rows(&keep), p.select_rows(&keep), dropped)
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

impl<T: Real> GpModel<T> {
    /// Fits the roughness parameters by maximum profiled likelihood.
    ///
    /// Rows of `train_z` closer than 1e-10 to an earlier row are dropped
    /// first. `warm_start` is always the first candidate; the remaining
    /// candidates are drawn from a stream keyed by `config.seed` and the
    /// training set size.
    pub fn fit(
        train_z: &DMatrix<T>,
        train_p: &DMatrix<T>,
        warm_start: Option<&[f64]>,
        config: &GpConfig,
    ) -> Result<Self, GpError> {
        check_inputs(train_z, train_p)?;
        let dims = train_z.ncols();
        if let Some(w) = warm_start {
            if w.len() != dims {
                return Err(GpError::OmegaLength {
                    got: w.len(),
                    expected: dims,
                });
            }
        }
        let (z, p, dropped) = dedup(train_z, train_p);
        let required = dims + 2;
        if z.nrows() < required {
            return Err(GpError::TooFewPoints {
                got: z.nrows(),
                required,
            });
        }
        let data = Data::new(z, p);
        let (lo, hi) = (config.omega_min, config.omega_max);
        let span = hi - lo;
        let to_omega =
            |u: &[f64]| -> Vec<f64> { u.iter().map(|&v| lo + span * sigmoid(v)).collect() };
        let to_u = |w: &[f64]| -> Vec<f64> {
            w.iter()
                .map(|&v| {
                    let f = ((v - lo) / span).clamp(1e-6, 1.0 - 1e-6);
                    (f / (1.0 - f)).ln()
                })
                .collect()
        };

        let mut starts: Vec<Vec<f64>> = Vec::with_capacity(config.restarts + 1);
        starts.push(match warm_start {
            Some(w) => w.to_vec(),
            None => vec![0.5 * (lo + hi); dims],
        });
        let mut rng = stream(config.seed, labels::GP, data.n() as u64);
        // with a single polished start the restarts would never be used
        let restarts = if config.polish > 1 {
            config.restarts
        } else {
            0
        };
        for _ in 0..restarts {
            starts.push((0..dims).map(|_| rng.gen_range(lo..hi)).collect());
        }

        // screen: rank candidates by their starting likelihood, keep the
        // warm start plus the best of the rest
        let mut scored: Vec<(usize, f64)> = starts
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let v = data
                    .profile(w, config.nugget_start, config.nugget_cap, false)
                    .map_or(f64::INFINITY, |pr| pr.nll.as_f64());
                (i, v)
            })
            .collect();
        scored[1..].sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let chosen: Vec<usize> = scored
            .iter()
            .take(config.polish.max(1))
            .map(|s| s.0)
            .collect();

        let opts = LbfgsOptions {
            max_iters: config.max_iters,
            ..Default::default()
        };
        let mut best: Option<(Vec<f64>, f64)> = None;
        for &i in &chosen {
            let objective = |u: &[f64]| {
                let w = to_omega(u);
                let pr = data.profile(&w, config.nugget_start, config.nugget_cap, true)?;
                let g = pr.grad.expect("gradient requested");
                let gu = g
                    .iter()
                    .zip(u)
                    .map(|(gi, &ui)| {
                        let s = sigmoid(ui);
                        gi * span * s * (1.0 - s)
                    })
                    .collect();
                Some((pr.nll.as_f64(), gu))
            };
            if let Some(min) = minimize(objective, &to_u(&starts[i]), &opts) {
                let better = best.as_ref().is_none_or(|(_, v)| min.value < *v);
                if min.value.is_finite() && better {
                    best = Some((to_omega(&min.x), min.value));
                }
            }
        }
        let (omega, _) = best.ok_or(GpError::IllConditioned {
            cap: config.nugget_cap,
        })?;
        let nugget = data
            .profile(&omega, config.nugget_start, config.nugget_cap, false)
            .ok_or(GpError::IllConditioned {
                cap: config.nugget_cap,
            })?
            .nugget
            .as_f64();
        let mut model = Self::from_data(data, omega, nugget)?;
        model.dropped = dropped;
        Ok(model)
    }

    /// Rebuilds a model from stored hyperparameters without optimizing.
    pub fn from_parts(
        train_z: &DMatrix<T>,
        train_p: &DMatrix<T>,
        omega: &[f64],
        nugget: f64,
    ) -> Result<Self, GpError> {
        check_inputs(train_z, train_p)?;
        if omega.len() != train_z.ncols() {
            return Err(GpError::OmegaLength {
                got: omega.len(),
                expected: train_z.ncols(),
            });
        }
        let (z, p, dropped) = dedup(train_z, train_p);
        if z.nrows() == 0 {
            return Err(GpError::TooFewPoints {
                got: 0,
                required: 1,
            });
        }
        let mut model = Self::from_data(Data::new(z, p), omega.to_vec(), nugget)?;
        model.dropped = dropped;
        Ok(model)
    }

    fn from_data(data: Data<T>, omega: Vec<f64>, nugget: f64) -> Result<Self, GpError> {
        let pr = data
            .profile(&omega, nugget, nugget, false)
            .ok_or(GpError::IllConditioned { cap: nugget })?;
        Ok(Self {
            theta: omega.iter().map(|&w| T::lit(10f64.powf(w))).collect(),
            omega,
            train_z: data.z,
            train_p: data.p,
            nugget: pr.nugget.as_f64(),
            chol: pr.chol,
            beta: pr.beta,
            sigma: pr.sigma,
            weights: pr.weights,
            rinv_one: pr.rinv_one,
            one_rinv_one: pr.one_rinv_one,
            nll: pr.nll,
            dropped: 0,
        })
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    pub fn beta(&self) -> &DVector<T> {
        &self.beta
    }

    pub fn sigma(&self) -> &DMatrix<T> {
        &self.sigma
    }

    pub fn train_z(&self) -> &DMatrix<T> {
        &self.train_z
    }

    pub fn train_p(&self) -> &DMatrix<T> {
        &self.train_p
    }

    pub fn n_train(&self) -> usize {
        self.train_z.nrows()
    }

    /// Training rows dropped as duplicates.
    pub fn dropped_duplicates(&self) -> usize {
        self.dropped
    }

    /// Profiled negative log-likelihood (up to a constant) at the fitted `ω`.
    pub fn neg_log_likelihood(&self) -> T {
        self.nll
    }

    /// Lower Cholesky factor of `R + nugget I`.
    pub fn chol_r(&self) -> &SpdFactor<T> {
        &self.chol
    }

    fn cross_correlation(&self, q: &[T]) -> DVector<T> {
        let n = self.n_train();
        DVector::from_fn(n, |i, _| {
            let mut s = T::zero();
            for (d, &t) in self.theta.iter().enumerate() {
                let diff = self.train_z[(i, d)] - q[d];
                s += t * diff * diff;
            }
            (-s).exp()
        })
    }

    /// Scalar multiplying `Σ` in the posterior covariance at `q`.
    pub fn variance_factor(&self, q: &[T]) -> T {
        let r = self.cross_correlation(q);
        self.variance_factor_from(&r)
    }

    fn variance_factor_from(&self, r: &DVector<T>) -> T {
        let rinv_r = self.chol.solve_vec(r);
        let w = T::one() - self.rinv_one.dot(r);
        let f = T::one() - r.dot(&rinv_r) + w * w / self.one_rinv_one;
        f.max(T::zero())
    }

    /// Posterior mean and covariance for each row of `query`.
    pub fn predict(&self, query: &DMatrix<T>) -> Vec<Prediction<T>> {
        assert_eq!(
            query.ncols(),
            self.train_z.ncols(),
            "query dimension mismatch"
        );
        (0..query.nrows())
            .map(|i| {
                let q: Vec<T> = query.row(i).iter().copied().collect();
                let r = self.cross_correlation(&q);
                let mean = &self.beta + self.weights.tr_mul(&r);
                let cov = &self.sigma * self.variance_factor_from(&r);
                Prediction { mean, cov }
            })
            .collect()
    }

    /// Posterior means only, one row per query.
    pub fn predict_mean(&self, query: &DMatrix<T>) -> DMatrix<T> {
        assert_eq!(
            query.ncols(),
            self.train_z.ncols(),
            "query dimension mismatch"
        );
        let m = self.train_p.ncols();
        let mut out = DMatrix::zeros(query.nrows(), m);
        let qt = query.transpose();
        let zt = self.train_z.transpose();
        for i in 0..query.nrows() {
            let q = qt.column(i);
            let mut acc = vec![T::zero(); m];
            for j in 0..self.n_train() {
                let zj = zt.column(j);
                let mut s = T::zero();
                for (d, &t) in self.theta.iter().enumerate() {
                    let diff = zj[d] - q[d];
                    s += t * diff * diff;
                }
                let r = (-s).exp();
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += r * self.weights[(j, c)];
                }
            }
            for c in 0..m {
                out[(i, c)] = self.beta[c] + acc[c];
            }
        }
        out
    }
}

/// Profiled negative log-likelihood and its gradient with respect to `ω`,
/// using a fixed nugget. Exposed for diagnostics and gradient checks.
pub fn profiled_nll<T: Real>(
    train_z: &DMatrix<T>,
    train_p: &DMatrix<T>,
    omega: &[f64],
    nugget: f64,
) -> Option<(f64, Vec<f64>)> {
    let data = Data::new(train_z.clone(), train_p.clone());
    let pr = data.profile(omega, nugget, nugget, true)?;
    Some((pr.nll.as_f64(), pr.grad.expect("gradient requested")))
}
