//! Diversity metrics: mean pairwise Euclidean distance and distance gain.
//!
//! The gain of a selection is its mean pairwise distance divided by the
//! average over `n_rep` uniformly drawn subsets of the same size. An iid
//! selection therefore scores about one.
//!
//! Replicate `r` is the size-`n` prefix of a seeded permutation of the
//! population, so [`GainTracker`] can grow every replicate alongside the
//! selection and reproduce [`distance_gain`] without redrawing.

use crate::rng::{labels, stream};
use crate::Real;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("need at least {required} points, got {got}")]
    TooFewPoints { got: usize, required: usize },
    #[error("selection of {selected} points is larger than the population of {population}")]
    SelectionTooLarge { selected: usize, population: usize },
    #[error("dimension mismatch: {left} vs {right} columns")]
    DimensionMismatch { left: usize, right: usize },
    #[error("n_rep must be at least 1")]
    NoReplicates,
    #[error("item {0} is out of range")]
    OutOfRange(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainReport {
    pub gain: f64,
    pub mean_distance: f64,
    pub n_rep: usize,
    pub replicate_means: Vec<f64>,
}

fn dist<T: Real>(m: &DMatrix<T>, i: usize, j: usize) -> f64 {
    let mut s = 0.0;
    for c in 0..m.ncols() {
        let d = m[(i, c)].as_f64() - m[(j, c)].as_f64();
        s += d * d;
    }
    s.sqrt()
}

fn pairs(n: usize) -> f64 {
    (n * (n - 1)) as f64 / 2.0
}

/// Sum of distances over unordered pairs of the given rows.
fn pair_sum<T: Real>(m: &DMatrix<T>, rows: &[usize]) -> f64 {
    let mut s = 0.0;
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[..a] {
            s += dist(m, i, j);
        }
    }
    s
}

/// Mean Euclidean distance over all unordered pairs of rows.
pub fn mean_pairwise_distance<T: Real>(points: &DMatrix<T>) -> Result<f64, MetricsError> {
    let n = points.nrows();
    if n < 2 {
        return Err(MetricsError::TooFewPoints {
            got: n,
            required: 2,
        });
    }
    let rows: Vec<usize> = (0..n).collect();
    Ok(pair_sum(points, &rows) / pairs(n))
}

// Partial Fisher-Yates shuffle that can be extended one position at a time.
#[derive(Clone)]
struct Prefix {
    rng: ChaCha8Rng,
    perm: Vec<usize>,
    len: usize,
    sum: f64,
}

impl Prefix {
    fn new(population: usize, seed: u64, r: usize) -> Self {
        Self {
            rng: stream(seed, labels::METRICS, r as u64),
            perm: (0..population).collect(),
            len: 0,
            sum: 0.0,
        }
    }

    fn grow<T: Real>(&mut self, m: &DMatrix<T>, to: usize) {
        while self.len < to {
            let j = self.rng.gen_range(self.len..self.perm.len());
            self.perm.swap(self.len, j);
            let x = self.perm[self.len];
            self.sum += self.perm[..self.len]
                .iter()
                .map(|&y| dist(m, x, y))
                .sum::<f64>();
            self.len += 1;
        }
    }
}

/// The iid replicate subsets used by [`distance_gain`] and [`GainTracker`]:
/// replicate `r` is the first `size` entries of a partial Fisher–Yates
/// shuffle of `0..population` drawn from stream `r` of `seed`.
pub fn iid_subsets(population: usize, size: usize, n_rep: usize, seed: u64) -> Vec<Vec<usize>> {
    let size = size.min(population);
    (0..n_rep)
        .map(|r| {
            let mut rng = stream(seed, labels::METRICS, r as u64);
            let mut perm: Vec<usize> = (0..population).collect();
            for i in 0..size {
                let j = rng.gen_range(i..population);
                perm.swap(i, j);
            }
            perm.truncate(size);
            perm
        })
        .collect()
}

fn check<T: Real>(
    selected: usize,
    population: &DMatrix<T>,
    n_rep: usize,
) -> Result<(), MetricsError> {
    if n_rep == 0 {
        return Err(MetricsError::NoReplicates);
    }
    if selected < 2 {
        return Err(MetricsError::TooFewPoints {
            got: selected,
            required: 2,
        });
    }
    if selected > population.nrows() {
        return Err(MetricsError::SelectionTooLarge {
            selected,
            population: population.nrows(),
        });
    }
    Ok(())
}

/// Distance gain of `selected` against `n_rep` seeded iid subsets of `population`.
pub fn distance_gain<T: Real>(
    selected: &DMatrix<T>,
    population: &DMatrix<T>,
    n_rep: usize,
    seed: u64,
) -> Result<GainReport, MetricsError> {
    if selected.ncols() != population.ncols() {
        return Err(MetricsError::DimensionMismatch {
            left: selected.ncols(),
            right: population.ncols(),
        });
    }
    let n = selected.nrows();
    check(n, population, n_rep)?;
    let mean_distance = mean_pairwise_distance(selected)?;
    let replicate_means: Vec<f64> = (0..n_rep)
        .into_par_iter()
        .map(|r| {
            let mut p = Prefix::new(population.nrows(), seed, r);
            p.grow(population, n);
            p.sum / pairs(n)
        })
        .collect();
    Ok(report(mean_distance, replicate_means))
}

fn report(mean_distance: f64, replicate_means: Vec<f64>) -> GainReport {
    let denom = replicate_means.iter().sum::<f64>() / replicate_means.len() as f64;
    GainReport {
        gain: mean_distance / denom,
        mean_distance,
        n_rep: replicate_means.len(),
        replicate_means,
    }
}

/// Distance gain of a growing selection drawn from a fixed population.
///
/// Adding `k` items to a selection of `n` costs `O(n k)` distance
/// evaluations for the selection and for each replicate.
#[derive(Clone)]
pub struct GainTracker<T: Real> {
    population: DMatrix<T>,
    selected: Vec<usize>,
    sum: f64,
    replicates: Vec<Prefix>,
}

impl<T: Real> GainTracker<T> {
    pub fn new(population: DMatrix<T>, n_rep: usize, seed: u64) -> Result<Self, MetricsError> {
        if n_rep == 0 {
            return Err(MetricsError::NoReplicates);
        }
        let n = population.nrows();
        Ok(Self {
            replicates: (0..n_rep).map(|r| Prefix::new(n, seed, r)).collect(),
            population,
            selected: Vec::new(),
            sum: 0.0,
        })
    }

    pub fn population(&self) -> &DMatrix<T> {
        &self.population
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// Appends population rows `ids` to the selection.
    pub fn extend(&mut self, ids: &[usize]) -> Result<(), MetricsError> {
        let n_pop = self.population.nrows();
        if let Some(&bad) = ids.iter().find(|&&i| i >= n_pop) {
            return Err(MetricsError::OutOfRange(bad));
        }
        if self.selected.len() + ids.len() > n_pop {
            return Err(MetricsError::SelectionTooLarge {
                selected: self.selected.len() + ids.len(),
                population: n_pop,
            });
        }
        for &x in ids {
            self.sum += self
                .selected
                .iter()
                .map(|&y| dist(&self.population, x, y))
                .sum::<f64>();
            self.selected.push(x);
        }
        let to = self.selected.len();
        let pop = &self.population;
        self.replicates.par_iter_mut().for_each(|p| p.grow(pop, to));
        Ok(())
    }

    /// Gain of the current selection; `None` below two items.
    pub fn report(&self) -> Option<GainReport> {
        let n = self.selected.len();
        if n < 2 {
            return None;
        }
        let means = self.replicates.iter().map(|p| p.sum / pairs(n)).collect();
        Some(report(self.sum / pairs(n), means))
    }

    pub fn gain(&self) -> Option<f64> {
        self.report().map(|r| r.gain)
    }
}
