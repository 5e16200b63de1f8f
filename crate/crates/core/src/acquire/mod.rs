//! The staged acquisition loop.
//!
//! * Stage I draws whole batches from the shape feature and fits the
//!   surrogate as soon as it has enough points.
//! * Stage II starts once the roughness residual stays below `tau1` for
//!   `i_tol` consecutive fits. Each batch takes `⌊ε k⌋` items from a
//!   property feature built on the surrogate's predictions (optionally
//!   quality weighted) and the rest from the shape feature.
//! * Stage III starts once the residual stays below `tau2` for `i_tol`
//!   consecutive fits. The surrogate is frozen from then on.
//!
//! Rank budget: a rank-`D_v` feature conditioned on `D_v` items has nothing
//! left to sample from. The shape feature is therefore redrawn (with a new
//! seed) when its absorbed rank gets within `2k` of `D_v`, and the property
//! feature, rebuilt every iteration anyway, is conditioned on the latest
//! `condition_window` selections only. Older selections stay excluded from
//! sampling but no longer repel.
//!
//! Every random draw comes from a stream keyed by the iteration number, so a
//! checkpoint only needs counters and the log of operations applied to the
//! current shape feature.

mod io;

pub use io::{read_checkpoint, write_checkpoint, write_history, write_manifest, Checkpoint};

use crate::dpp::{median_distance, rff_features, DppError, KdppSampler, LowRankFeature, StageTag};
use crate::gp::{roughness_residual, GpConfig, GpError, GpModel};
use crate::homogenize::{homogenize_batch, MaterialSpec, PropertyVector};
use crate::metrics::{GainTracker, MetricsError};
use crate::quality::{quality_weights, raw_quality, QualitySpec};
use crate::rng::{derive_seed, labels};
use crate::{corpus::ShapeLibrary, Real};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AcquireError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("evaluator failed: {0}")]
    Evaluator(#[source] Box<dyn std::error::Error + Send + Sync>),
    #[error("evaluator returned {got} results for {expected} shapes")]
    EvaluationCount { expected: usize, got: usize },
    #[error("evaluator returned a non-finite property for shape {0}")]
    NonFiniteProperty(usize),
    #[error("surrogate: {0}")]
    Gp(#[from] GpError),
    #[error("sampler: {0}")]
    Dpp(#[from] DppError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl AcquireError {
    /// Whether the failure is numerical rather than a data or setup problem.
    pub fn is_numeric(&self) -> bool {
        matches!(self, AcquireError::Gp(_) | AcquireError::Dpp(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    I,
    II,
    III,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::I => "I",
            Stage::II => "II",
            Stage::III => "III",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    pub k: usize,
    /// Share of each Stage II/III batch drawn for property diversity.
    pub epsilon: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub i_tol: usize,
    pub i_max: usize,
    pub d_v: usize,
    pub target_size: usize,
    pub master_seed: u64,
    /// Gaussian kernel bandwidth on the latents; `None` uses the median
    /// pairwise distance.
    pub shape_bandwidth: Option<f64>,
    /// Bandwidth on standardized predicted properties; `None` uses the median.
    pub property_bandwidth: Option<f64>,
    /// Number of most recent selections a fresh feature is conditioned on;
    /// `None` means `D_v / 2`.
    pub condition_window: Option<usize>,
    /// Refit the surrogate every this many eligible iterations.
    pub refit_every: usize,
    pub gp_restarts: usize,
    pub gp_polish: usize,
    pub gp_max_iters: usize,
    /// Above this many training points only the warm start is optimized.
    pub gp_restart_limit: usize,
    pub n_rep: usize,
    pub quality: QualitySpec,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            k: 10,
            epsilon: 0.8,
            tau1: 0.02,
            tau2: 0.01,
            i_tol: 5,
            i_max: 500,
            d_v: 3000,
            target_size: 3000,
            master_seed: 0,
            shape_bandwidth: Some(1.0),
            property_bandwidth: Some(1.0),
            condition_window: None,
            refit_every: 1,
            gp_restarts: 8,
            gp_polish: 2,
            gp_max_iters: 100,
            gp_restart_limit: 500,
            n_rep: 30,
            quality: QualitySpec::default(),
        }
    }
}

impl AcquisitionConfig {
    pub fn window(&self) -> usize {
        self.condition_window.unwrap_or(self.d_v / 2)
    }

    /// Items per batch drawn from the property feature.
    pub fn property_share(&self, k: usize) -> usize {
        ((self.epsilon * k as f64).floor() as usize).min(k)
    }

    pub fn validate(&self, n_items: usize) -> Result<(), AcquireError> {
        let bad = |m: String| Err(AcquireError::Config(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        if !(self.tau2 > 0.0 && self.tau2 < self.tau1) {
            return bad(format!(
                "need 0 < tau2 < tau1, got tau1 = {}, tau2 = {}",
                self.tau1, self.tau2
            ));
        }
        if self.i_tol == 0 || self.refit_every == 0 || self.n_rep == 0 {
            return bad("i_tol, refit_every and n_rep must be at least 1".into());
        }
        if self.d_v == 0 {
            return bad("d_v must be at least 1".into());
        }
        if self.window() + self.k > self.d_v {
            return bad(format!(
                "condition_window + k = {} exceeds d_v = {}",
                self.window() + self.k,
                self.d_v
            ));
        }
        for (name, bw) in [
            ("shape_bandwidth", self.shape_bandwidth),
            ("property_bandwidth", self.property_bandwidth),
        ] {
            if let Some(b) = bw {
                if !(b > 0.0 && b.is_finite()) {
                    return bad(format!("{name} must be positive, got {b}"));
                }
            }
        }
        if n_items < self.k {
            return bad(format!(
                "library has {n_items} shapes, fewer than k = {}",
                self.k
            ));
        }
        if self.target_size > n_items {
            return bad(format!(
                "target_size {} exceeds the library size {n_items}",
                self.target_size
            ));
        }
        self.quality.validate().map_err(AcquireError::Config)
    }
}

/// Computes properties of shapes by id.
pub trait Evaluator<T: Real> {
    fn evaluate(
        &mut self,
        ids: &[usize],
    ) -> Result<Vec<PropertyVector<T>>, Box<dyn std::error::Error + Send + Sync>>;
}

impl<T: Real, E: Evaluator<T> + ?Sized> Evaluator<T> for Box<E> {
    fn evaluate(
        &mut self,
        ids: &[usize],
    ) -> Result<Vec<PropertyVector<T>>, Box<dyn std::error::Error + Send + Sync>> {
        (**self).evaluate(ids)
    }
}

/// Homogenizes library shapes on demand.
pub struct HomogenizeEvaluator<'a, T: Real> {
    pub library: &'a ShapeLibrary<T>,
    pub material: MaterialSpec<T>,
}

impl<T: Real> Evaluator<T> for HomogenizeEvaluator<'_, T> {
    fn evaluate(
        &mut self,
        ids: &[usize],
    ) -> Result<Vec<PropertyVector<T>>, Box<dyn std::error::Error + Send + Sync>> {
        let shapes: Vec<_> = ids.iter().map(|&i| self.library.shape(i)).collect();
        Ok(homogenize_batch(&shapes, &self.material)?)
    }
}

/// Looks up precomputed properties.
pub struct LookupEvaluator<T: Real> {
    pub properties: Vec<PropertyVector<T>>,
}

impl<T: Real> Evaluator<T> for LookupEvaluator<T> {
    fn evaluate(
        &mut self,
        ids: &[usize],
    ) -> Result<Vec<PropertyVector<T>>, Box<dyn std::error::Error + Send + Sync>> {
        ids.iter()
            .map(|&i| {
                self.properties
                    .get(i)
                    .copied()
                    .ok_or_else(|| format!("no stored properties for shape {i}").into())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedItem<T: Real> {
    pub id: usize,
    pub properties: PropertyVector<T>,
    pub tag: StageTag,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub stage: Stage,
    pub n_selected: usize,
    pub residual: Option<f64>,
    pub gain_shape: Option<f64>,
    pub gain_property: Option<f64>,
}

/// Operations applied to the current shape feature since it was drawn,
/// replayed on resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ShapeOp {
    Condition(Vec<usize>),
    Deactivate(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    TargetReached,
    MaxIterations,
    Exhausted,
}

pub struct AcquisitionState<T: Real> {
    config: AcquisitionConfig,
    latents: DMatrix<T>,
    vf: Vec<T>,
    stage: Stage,
    iteration: usize,
    selected: Vec<SelectedItem<T>>,
    is_selected: Vec<bool>,
    omega_history: Vec<Vec<f64>>,
    residual_history: Vec<f64>,
    below_tau1: usize,
    below_tau2: usize,
    eligible_steps: usize,
    gp: Option<GpModel<T>>,
    gp_n_train: usize,
    shape: LowRankFeature<T>,
    shape_epoch: u64,
    shape_ops: Vec<ShapeOp>,
    shape_bw: T,
    shape_gain: GainTracker<T>,
    property_gain: Option<GainTracker<T>>,
    history: Vec<HistoryRow>,
    transitions: Vec<(usize, Stage)>,
}

fn standardize_columns<T: Real>(m: &mut DMatrix<T>) {
    let n = m.nrows() as f64;
    for mut c in m.column_iter_mut() {
        let mean = c.iter().map(|x| x.as_f64()).sum::<f64>() / n;
        let var = c.iter().map(|x| (x.as_f64() - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        c.iter_mut()
            .for_each(|x| *x = T::lit((x.as_f64() - mean) / sd));
    }
}

fn response_matrix<T: Real>(props: &[PropertyVector<T>]) -> DMatrix<T> {
    DMatrix::from_fn(props.len(), 3, |i, j| props[i].response()[j])
}

impl<T: Real> AcquisitionState<T> {
    /// Prepares a run over `latents` (one standardized row per shape).
    ///
    /// `vf` holds volume fractions (read by the stiffness-to-mass quality
    /// only). `population` holds the true properties of every shape; when
    /// given, the property distance gain is tracked.
    pub fn new(
        latents: DMatrix<T>,
        vf: Vec<T>,
        population: Option<&[PropertyVector<T>]>,
        config: AcquisitionConfig,
    ) -> Result<Self, AcquireError> {
        let n = latents.nrows();
        config.validate(n)?;
        if vf.len() != n {
            return Err(AcquireError::Config(format!(
                "{} volume fractions for {n} shapes",
                vf.len()
            )));
        }
        if let Some(p) = population {
            if p.len() != n {
                return Err(AcquireError::Config(format!(
                    "{} population properties for {n} shapes",
                    p.len()
                )));
            }
        }
        let shape_bw = match config.shape_bandwidth {
            Some(b) => T::lit(b),
            None => median_distance(&latents, 2000),
        };
        let metrics_seed = derive_seed(config.master_seed, labels::METRICS, 0);
        let shape_gain = GainTracker::new(latents.clone(), config.n_rep, metrics_seed)?;
        let property_gain = match population {
            Some(p) => {
                let mut m = response_matrix(p);
                standardize_columns(&mut m);
                Some(GainTracker::new(m, config.n_rep, metrics_seed)?)
            }
            None => None,
        };
        let shape = rff_features(
            &latents,
            shape_bw,
            config.d_v,
            derive_seed(config.master_seed, labels::SHAPE_FEATURE, 0),
        );
        Ok(Self {
            latents,
            vf,
            stage: Stage::I,
            iteration: 0,
            selected: Vec::new(),
            is_selected: vec![false; n],
            omega_history: Vec::new(),
            residual_history: Vec::new(),
            below_tau1: 0,
            below_tau2: 0,
            eligible_steps: 0,
            gp: None,
            gp_n_train: 0,
            shape,
            shape_epoch: 0,
            shape_ops: Vec::new(),
            shape_bw,
            shape_gain,
            property_gain,
            history: Vec::new(),
            transitions: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &AcquisitionConfig {
        &self.config
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn selected(&self) -> &[SelectedItem<T>] {
        &self.selected
    }

    pub fn selected_ids(&self) -> Vec<usize> {
        self.selected.iter().map(|s| s.id).collect()
    }

    pub fn omega_history(&self) -> &[Vec<f64>] {
        &self.omega_history
    }

    pub fn residual_history(&self) -> &[f64] {
        &self.residual_history
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.history
    }

    /// `(iteration, new stage)` for each stage change.
    pub fn transitions(&self) -> &[(usize, Stage)] {
        &self.transitions
    }

    pub fn gp(&self) -> Option<&GpModel<T>> {
        self.gp.as_ref()
    }

    pub fn shape_feature(&self) -> &LowRankFeature<T> {
        &self.shape
    }

    pub fn shape_bandwidth(&self) -> T {
        self.shape_bw
    }

    pub fn latents(&self) -> &DMatrix<T> {
        &self.latents
    }

    /// Raw quality of each selected item, when a quality is configured.
    pub fn selected_quality(&self) -> Vec<Option<T>> {
        self.selected
            .iter()
            .map(|s| raw_quality(&s.properties, self.vf[s.id], &self.config.quality))
            .collect()
    }

    fn stop_reason(&self) -> Option<StopReason> {
        if self.selected.len() >= self.config.target_size {
            Some(StopReason::TargetReached)
        } else if self.iteration >= self.config.i_max {
            Some(StopReason::MaxIterations)
        } else if self.selected.len() == self.latents.nrows() {
            Some(StopReason::Exhausted)
        } else {
            None
        }
    }

    /// Runs iterations until the target size or `i_max`, calling `observe`
    /// after each one.
    pub fn run<E: Evaluator<T>>(
        &mut self,
        evaluator: &mut E,
        mut observe: impl FnMut(&Self) -> Result<(), AcquireError>,
    ) -> Result<StopReason, AcquireError> {
        loop {
            if let Some(r) = self.stop_reason() {
                return Ok(r);
            }
            self.step(evaluator)?;
            observe(self)?;
        }
    }

    /// One iteration of the current stage. Returns `false` without doing
    /// anything once the run is complete. On error the state is unchanged.
    pub fn step<E: Evaluator<T>>(&mut self, evaluator: &mut E) -> Result<bool, AcquireError> {
        if self.stop_reason().is_some() {
            return Ok(false);
        }
        let started = Instant::now();
        let t = self.iteration;
        let remaining = self.config.target_size - self.selected.len();
        let unselected = self.latents.nrows() - self.selected.len();
        let k = self.config.k.min(remaining).min(unselected);

        let mut shape = self.shape.clone();
        let mut ops = self.shape_ops.clone();
        let mut epoch = self.shape_epoch;

        let property_ids = if self.stage == Stage::I {
            Vec::new()
        } else {
            self.draw_property(self.config.property_share(k))?
        };
        if !property_ids.is_empty() {
            shape.condition_lowrank(&property_ids)?;
            ops.push(ShapeOp::Condition(property_ids.clone()));
        }
        let k_shape = k - property_ids.len();
        let shape_ids = if k_shape > 0 {
            let exclude: Vec<usize> = property_ids.clone();
            let ids = self.draw_shape(&mut shape, &mut ops, &mut epoch, k_shape, &exclude)?;
            if !ids.is_empty() {
                shape.condition_lowrank(&ids)?;
                ops.push(ShapeOp::Condition(ids.clone()));
            }
            ids
        } else {
            Vec::new()
        };

        let batch: Vec<usize> = property_ids.iter().chain(&shape_ids).copied().collect();
        if batch.is_empty() {
            return Err(AcquireError::Dpp(DppError::RankTooLow { rank: 0, k }));
        }
        let props = evaluator
            .evaluate(&batch)
            .map_err(AcquireError::Evaluator)?;
        if props.len() != batch.len() {
            return Err(AcquireError::EvaluationCount {
                expected: batch.len(),
                got: props.len(),
            });
        }
        for (id, p) in batch.iter().zip(&props) {
            if p.full.iter().any(|x| !x.is_finite_value()) {
                return Err(AcquireError::NonFiniteProperty(*id));
            }
        }

        // surrogate update on the enlarged set, before committing anything
        let mut all_props: Vec<PropertyVector<T>> =
            self.selected.iter().map(|s| s.properties).collect();
        all_props.extend(props.iter().copied());
        let mut all_ids = self.selected_ids();
        all_ids.extend(&batch);
        let mut fit = None;
        let mut eligible = self.eligible_steps;
        if self.stage != Stage::III && all_ids.len() >= self.latents.ncols() + 2 {
            if eligible.is_multiple_of(self.config.refit_every) {
                fit = Some(self.fit_gp(&all_ids, &all_props)?);
            }
            eligible += 1;
        }

        // commit
        for (pos, (&id, p)) in batch.iter().zip(&props).enumerate() {
            self.is_selected[id] = true;
            self.selected.push(SelectedItem {
                id,
                properties: *p,
                tag: if pos < property_ids.len() {
                    StageTag::Property
                } else {
                    StageTag::Shape
                },
                iteration: t,
            });
        }
        self.shape = shape;
        self.shape_ops = ops;
        self.shape_epoch = epoch;
        self.eligible_steps = eligible;
        self.shape_gain.extend(&batch)?;
        if let Some(g) = &mut self.property_gain {
            g.extend(&batch)?;
        }
        let stage_run = self.stage;
        let residual = fit.and_then(|model| self.record_fit(model, all_ids.len()));

        self.history.push(HistoryRow {
            iter: t,
            stage: stage_run,
            n_selected: self.selected.len(),
            residual,
            gain_shape: self.shape_gain.gain(),
            gain_property: self.property_gain.as_ref().and_then(|g| g.gain()),
        });
        self.iteration += 1;
        log::info!(
            "iter {t} stage {} selected {} residual {} ({:.2?})",
            stage_run.as_str(),
            self.selected.len(),
            residual.map_or("-".to_string(), |r| format!("{r:.4}")),
            started.elapsed()
        );
        Ok(true)
    }

    fn gp_config(&self, n_train: usize) -> GpConfig {
        GpConfig {
            restarts: self.config.gp_restarts,
            polish: if n_train > self.config.gp_restart_limit {
                1
            } else {
                self.config.gp_polish
            },
            max_iters: self.config.gp_max_iters,
            seed: derive_seed(self.config.master_seed, labels::GP, 0),
            ..GpConfig::default()
        }
    }

    fn fit_gp(
        &self,
        ids: &[usize],
        props: &[PropertyVector<T>],
    ) -> Result<GpModel<T>, AcquireError> {
        let z = self.latents.select_rows(ids);
        let p = response_matrix(props);
        let warm = self.gp.as_ref().map(|g| g.omega().to_vec());
        Ok(GpModel::fit(
            &z,
            &p,
            warm.as_deref(),
            &self.gp_config(ids.len()),
        )?)
    }

    // Appends the fit to the histories, updates counters and the stage.
    fn record_fit(&mut self, model: GpModel<T>, n_train: usize) -> Option<f64> {
        let omega = model.omega().to_vec();
        let residual = self
            .omega_history
            .last()
            .map(|prev| roughness_residual(&omega, prev));
        self.omega_history.push(omega);
        self.gp = Some(model);
        self.gp_n_train = n_train;
        let r = residual?;
        self.residual_history.push(r);
        self.below_tau1 = if r < self.config.tau1 {
            self.below_tau1 + 1
        } else {
            0
        };
        self.below_tau2 = if r < self.config.tau2 {
            self.below_tau2 + 1
        } else {
            0
        };
        let next = match self.stage {
            Stage::I if self.below_tau1 >= self.config.i_tol => Some(Stage::II),
            Stage::II if self.below_tau2 >= self.config.i_tol => Some(Stage::III),
            _ => None,
        };
        if let Some(s) = next {
            log::info!(
                "stage {} -> {} after iteration {}",
                self.stage.as_str(),
                s.as_str(),
                self.iteration
            );
            self.stage = s;
            self.transitions.push((self.iteration, s));
        }
        Some(r)
    }

    fn sampling_rng(&self, purpose: u64) -> ChaCha8Rng {
        let seed = derive_seed(
            self.config.master_seed,
            labels::SAMPLING,
            self.iteration as u64,
        );
        ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    // Fresh shape feature conditioned on the most recent selections.
    fn fresh_shape(
        &self,
        epoch: u64,
        exclude: &[usize],
    ) -> Result<(LowRankFeature<T>, Vec<ShapeOp>), AcquireError> {
        let mut f = rff_features(
            &self.latents,
            self.shape_bw,
            self.config.d_v,
            derive_seed(self.config.master_seed, labels::SHAPE_FEATURE, epoch),
        );
        let mut ops = Vec::new();
        let ids = self.selected_ids();
        let w = self.config.window().min(ids.len());
        let (old, recent) = ids.split_at(ids.len() - w);
        if !recent.is_empty() {
            f.condition_lowrank(recent)?;
            ops.push(ShapeOp::Condition(recent.to_vec()));
        }
        let mut gone: Vec<usize> = old.to_vec();
        gone.extend(exclude);
        if !gone.is_empty() {
            f.deactivate(&gone)?;
            ops.push(ShapeOp::Deactivate(gone));
        }
        Ok((f, ops))
    }

    fn draw_shape(
        &self,
        shape: &mut LowRankFeature<T>,
        ops: &mut Vec<ShapeOp>,
        epoch: &mut u64,
        k: usize,
        exclude: &[usize],
    ) -> Result<Vec<usize>, AcquireError> {
        let budget = self.config.d_v.saturating_sub(2 * self.config.k);
        let mut sampler = None;
        if shape.absorbed_rank() <= budget {
            let s = KdppSampler::new(shape);
            if s.rank() >= k {
                sampler = Some(s);
            }
        }
        let sampler = match sampler {
            Some(s) => s,
            None => {
                *epoch += 1;
                log::info!(
                    "redrawing the shape feature (absorbed rank {}, epoch {})",
                    shape.absorbed_rank(),
                    *epoch
                );
                let (f, o) = self.fresh_shape(*epoch, exclude)?;
                *shape = f;
                *ops = o;
                KdppSampler::new(shape)
            }
        };
        let k_eff = k.min(sampler.rank()).min(sampler.n_items());
        if k_eff < k {
            log::warn!(
                "shape feature rank {} is below k = {k}; drawing {k_eff}",
                sampler.rank()
            );
        }
        Ok(sampler.sample(k_eff, &mut self.sampling_rng(1))?)
    }

    /// Predicted `{C11, C12, C22}` for every shape, true values for selected ones.
    pub fn predicted_properties(&self) -> Option<DMatrix<T>> {
        let gp = self.gp.as_ref()?;
        let mut pred = gp.predict_mean(&self.latents);
        for s in &self.selected {
            let r = s.properties.response();
            for j in 0..3 {
                pred[(s.id, j)] = r[j];
            }
        }
        Some(pred)
    }

    fn draw_property(&self, k: usize) -> Result<Vec<usize>, AcquireError> {
        if k == 0 {
            return Ok(Vec::new());
        }
        let raw = self
            .predicted_properties()
            .expect("Stage II is only entered after surrogate fits");
        let mut std = raw.clone();
        standardize_columns(&mut std);
        let bw = match self.config.property_bandwidth {
            Some(b) => T::lit(b),
            None => median_distance(&std, 2000),
        };
        let seed = derive_seed(
            self.config.master_seed,
            labels::PROPERTY_FEATURE,
            self.iteration as u64,
        );
        let mut f = rff_features(&std, bw, self.config.d_v, seed);
        let ids = self.selected_ids();
        let w = self.config.window().min(ids.len());
        let (old, recent) = ids.split_at(ids.len() - w);
        if !recent.is_empty() {
            f.condition_lowrank(recent)?;
        }
        f.deactivate(old)?;
        if self.config.quality.is_enabled() {
            let rows: Vec<[T; 3]> = (0..raw.nrows())
                .map(|i| [raw[(i, 0)], raw[(i, 1)], raw[(i, 2)]])
                .collect();
            let q = quality_weights(&rows, &self.vf, &self.config.quality);
            f = f.apply_quality(&q)?;
        }
        let sampler = KdppSampler::new(&f);
        let k_eff = k.min(sampler.rank()).min(sampler.n_items());
        if k_eff < k {
            log::warn!(
                "property feature rank {} is below {k}; drawing {k_eff}",
                sampler.rank()
            );
        }
        Ok(sampler.sample(k_eff, &mut self.sampling_rng(0))?)
    }
}

#[cfg(test)]
mod tests;
