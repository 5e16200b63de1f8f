//! History and manifest CSVs, checkpoints and resuming.

use super::{
    AcquireError, AcquisitionConfig, AcquisitionState, HistoryRow, SelectedItem, ShapeOp, Stage,
};
use crate::dpp::rff_features;
use crate::gp::GpModel;
use crate::homogenize::PropertyVector;
use crate::rng::{derive_seed, labels};
use crate::Real;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

const CHECKPOINT_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AcquireError + '_ {
    move |source| AcquireError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// `iter,stage,n_selected,residual,gain_shape,gain_property`; missing values are empty.
pub fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<(), AcquireError> {
    let mut out = String::from("iter,stage,n_selected,residual,gain_shape,gain_property\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iter,
            r.stage.as_str(),
            r.n_selected,
            opt(r.residual),
            opt(r.gain_shape),
            opt(r.gain_property)
        );
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// `rank,id,C11,C12,C22,C33,q` in selection order. `quality` holds the raw
/// quality per item; `None` leaves the field empty.
pub fn write_manifest<T: Real>(
    path: &Path,
    selected: &[SelectedItem<T>],
    quality: &[Option<T>],
) -> Result<(), AcquireError> {
    let mut out = String::from("rank,id,C11,C12,C22,C33,q\n");
    for (rank, s) in selected.iter().enumerate() {
        let p = &s.properties;
        let q = quality
            .get(rank)
            .copied()
            .flatten()
            .map_or_else(String::new, |v| v.to_string());
        let _ = writeln!(
            out,
            "{rank},{},{},{},{},{},{q}",
            s.id, p.c11, p.c12, p.c22, p.c33
        );
    }
    std::fs::write(path, out).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSnapshot {
    pub omega: Vec<f64>,
    pub nugget: f64,
    /// The model was trained on the first `n_train` selections.
    pub n_train: usize,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint<T: Real> {
    pub version: u32,
    pub config: AcquisitionConfig,
    pub n_items: usize,
    pub stage: Stage,
    pub iteration: usize,
    pub selected: Vec<SelectedItem<T>>,
    pub omega_history: Vec<Vec<f64>>,
    pub residual_history: Vec<f64>,
    pub below_tau1: usize,
    pub below_tau2: usize,
    pub eligible_steps: usize,
    pub gp: Option<GpSnapshot>,
    pub shape_epoch: u64,
    pub shape_ops: Vec<ShapeOp>,
    pub history: Vec<HistoryRow>,
    pub transitions: Vec<(usize, Stage)>,
}

pub fn write_checkpoint<T: Real + Serialize>(
    path: &Path,
    state: &AcquisitionState<T>,
) -> Result<(), AcquireError> {
    let json = serde_json::to_string(&state.checkpoint())
        .map_err(|e| AcquireError::Checkpoint(e.to_string()))?;
    // write-then-rename so an interrupted write never leaves a torn file
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, json).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_checkpoint<T: Real + serde::de::DeserializeOwned>(
    path: &Path,
) -> Result<Checkpoint<T>, AcquireError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| AcquireError::Checkpoint(e.to_string()))
}

impl<T: Real> AcquisitionState<T> {
    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            n_items: self.latents.nrows(),
            stage: self.stage,
            iteration: self.iteration,
            selected: self.selected.clone(),
            omega_history: self.omega_history.clone(),
            residual_history: self.residual_history.clone(),
            below_tau1: self.below_tau1,
            below_tau2: self.below_tau2,
            eligible_steps: self.eligible_steps,
            gp: self.gp.as_ref().map(|g| GpSnapshot {
                omega: g.omega().to_vec(),
                nugget: g.nugget(),
                n_train: self.gp_n_train,
            }),
            shape_epoch: self.shape_epoch,
            shape_ops: self.shape_ops.clone(),
            history: self.history.clone(),
            transitions: self.transitions.clone(),
        }
    }

    /// Rebuilds a state from a checkpoint and the same inputs the run started
    /// with. Continuing it gives the same result as never stopping.
    pub fn resume(
        latents: DMatrix<T>,
        vf: Vec<T>,
        population: Option<&[PropertyVector<T>]>,
        cp: Checkpoint<T>,
    ) -> Result<Self, AcquireError> {
        let bad = |m: String| Err(AcquireError::Checkpoint(m));
        if cp.version != CHECKPOINT_VERSION {
            return bad(format!("unsupported checkpoint version {}", cp.version));
        }
        if cp.n_items != latents.nrows() {
            return bad(format!(
                "checkpoint is for {} shapes, the library has {}",
                cp.n_items,
                latents.nrows()
            ));
        }
        let mut state = Self::new(latents, vf, population, cp.config)?;
        for s in &cp.selected {
            if s.id >= cp.n_items || state.is_selected[s.id] {
                return bad(format!("invalid or repeated selection {}", s.id));
            }
            state.is_selected[s.id] = true;
        }
        let ids: Vec<usize> = cp.selected.iter().map(|s| s.id).collect();
        state.shape_gain.extend(&ids)?;
        if let Some(g) = &mut state.property_gain {
            g.extend(&ids)?;
        }
        if let Some(g) = &cp.gp {
            if g.n_train > ids.len() {
                return bad("surrogate trained on more points than selected".into());
            }
            let train = &ids[..g.n_train];
            let props: Vec<PropertyVector<T>> = cp.selected[..g.n_train]
                .iter()
                .map(|s| s.properties)
                .collect();
            let z = state.latents.select_rows(train);
            let p = DMatrix::from_fn(props.len(), 3, |i, j| props[i].response()[j]);
            state.gp = Some(GpModel::from_parts(&z, &p, &g.omega, g.nugget)?);
            state.gp_n_train = g.n_train;
        }
        let mut shape = rff_features(
            &state.latents,
            state.shape_bw,
            state.config.d_v,
            derive_seed(
                state.config.master_seed,
                labels::SHAPE_FEATURE,
                cp.shape_epoch,
            ),
        );
        for op in &cp.shape_ops {
            match op {
                ShapeOp::Condition(b) => {
                    shape.condition_lowrank(b)?;
                }
                ShapeOp::Deactivate(b) => shape.deactivate(b)?,
            }
        }
        state.shape = shape;
        state.shape_epoch = cp.shape_epoch;
        state.shape_ops = cp.shape_ops;
        state.selected = cp.selected;
        state.stage = cp.stage;
        state.iteration = cp.iteration;
        state.omega_history = cp.omega_history;
        state.residual_history = cp.residual_history;
        state.below_tau1 = cp.below_tau1;
        state.below_tau2 = cp.below_tau2;
        state.eligible_steps = cp.eligible_steps;
        state.history = cp.history;
        state.transitions = cp.transitions;
        Ok(state)
    }
}
