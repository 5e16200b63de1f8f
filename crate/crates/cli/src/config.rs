//! Flat TOML run configuration.

use divacq::acquire::AcquisitionConfig;
use divacq::quality::{Direction, QualityKind, QualitySpec};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// A bandwidth given as a number or as `"median"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    Value(f64),
    Named(String),
}

impl Bandwidth {
    fn resolve(&self, key: &str) -> Result<Option<f64>, String> {
        match self {
            Bandwidth::Value(v) => Ok(Some(*v)),
            Bandwidth::Named(s) if s == "median" => Ok(None),
            Bandwidth::Named(s) => Err(format!("{key} must be a number or \"median\", got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // corpus: exactly one of pack, pgm_dir, synthetic_n
    pub pack: Option<PathBuf>,
    pub pgm_dir: Option<PathBuf>,
    pub synthetic_n: Option<usize>,
    pub synthetic_seed: u64,
    pub resolution: usize,

    // descriptor: PCA with d_z components unless latents is given
    pub d_z: usize,
    pub latents: Option<PathBuf>,
    pub descriptor_seed: u64,

    pub e_solid: f64,
    pub e_void: f64,
    pub nu: f64,

    pub output_dir: PathBuf,
    pub checkpoint_every: usize,
    /// Property CSV of the whole library, used for the property gain. When
    /// absent and `track_property_gain` is set, it is computed and cached in
    /// the output directory.
    pub population_properties: Option<PathBuf>,
    pub track_property_gain: bool,

    pub k: usize,
    pub epsilon: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub i_tol: usize,
    pub i_max: usize,
    pub d_v: usize,
    pub target_size: usize,
    pub master_seed: u64,
    pub shape_bandwidth: Bandwidth,
    pub property_bandwidth: Bandwidth,
    pub condition_window: Option<usize>,
    pub refit_every: usize,
    pub gp_restarts: usize,
    pub gp_polish: usize,
    pub gp_max_iters: usize,
    pub gp_restart_limit: usize,
    pub n_rep: usize,

    pub quality: QualityKind,
    pub quality_delta: f64,
    pub quality_slope: f64,
    pub quality_direction: Direction,
}

impl Default for RunConfig {
    fn default() -> Self {
        let a = AcquisitionConfig::default();
        let q = QualitySpec::default();
        Self {
            pack: None,
            pgm_dir: None,
            synthetic_n: None,
            synthetic_seed: 0,
            resolution: 50,
            d_z: 10,
            latents: None,
            descriptor_seed: 0,
            e_solid: 1.0,
            e_void: 1e-9,
            nu: 0.3,
            output_dir: PathBuf::from("run"),
            checkpoint_every: 1,
            population_properties: None,
            track_property_gain: true,
            k: a.k,
            epsilon: a.epsilon,
            tau1: a.tau1,
            tau2: a.tau2,
            i_tol: a.i_tol,
            i_max: a.i_max,
            d_v: a.d_v,
            target_size: a.target_size,
            master_seed: a.master_seed,
            shape_bandwidth: Bandwidth::Value(1.0),
            property_bandwidth: Bandwidth::Value(1.0),
            condition_window: None,
            refit_every: a.refit_every,
            gp_restarts: a.gp_restarts,
            gp_polish: a.gp_polish,
            gp_max_iters: a.gp_max_iters,
            gp_restart_limit: a.gp_restart_limit,
            n_rep: a.n_rep,
            quality: q.kind,
            quality_delta: q.delta,
            quality_slope: q.slope,
            quality_direction: q.direction,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.check_sources()?;
        Ok(cfg)
    }

    fn check_sources(&self) -> Result<(), String> {
        let n = [
            self.pack.is_some(),
            self.pgm_dir.is_some(),
            self.synthetic_n.is_some(),
        ]
        .iter()
        .filter(|&&b| b)
        .count();
        if n != 1 {
            return Err("exactly one of pack, pgm_dir and synthetic_n must be set".into());
        }
        if self.synthetic_n == Some(0) {
            return Err("synthetic_n must be positive".into());
        }
        if self.checkpoint_every == 0 {
            return Err("checkpoint_every must be at least 1".into());
        }
        if self.latents.is_none() && self.d_z == 0 {
            return Err("d_z must be positive".into());
        }
        Ok(())
    }

    pub fn acquisition(&self) -> Result<AcquisitionConfig, String> {
        Ok(AcquisitionConfig {
            k: self.k,
            epsilon: self.epsilon,
            tau1: self.tau1,
            tau2: self.tau2,
            i_tol: self.i_tol,
            i_max: self.i_max,
            d_v: self.d_v,
            target_size: self.target_size,
            master_seed: self.master_seed,
            shape_bandwidth: self.shape_bandwidth.resolve("shape_bandwidth")?,
            property_bandwidth: self.property_bandwidth.resolve("property_bandwidth")?,
            condition_window: self.condition_window,
            refit_every: self.refit_every,
            gp_restarts: self.gp_restarts,
            gp_polish: self.gp_polish,
            gp_max_iters: self.gp_max_iters,
            gp_restart_limit: self.gp_restart_limit,
            n_rep: self.n_rep,
            quality: QualitySpec {
                kind: self.quality,
                delta: self.quality_delta,
                slope: self.quality_slope,
                direction: self.quality_direction,
            },
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
