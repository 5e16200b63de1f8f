//! Pointwise task-quality functions.
//!
//! A quality vector holds one weight in `[0, 1]` per item. It scales the rows of
//! the property feature, so high-quality items become more likely to be
//! sampled while diversity still drives the draw.

use crate::homogenize::PropertyVector;
use crate::Real;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityKind {
    #[default]
    None,
    StiffnessToMass,
    Anisotropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualitySpec {
    pub kind: QualityKind,
    /// Keeps the stiffness-to-mass ratio finite at zero volume fraction.
    pub delta: f64,
    pub slope: f64,
    pub direction: Direction,
}

impl Default for QualitySpec {
    fn default() -> Self {
        Self {
            kind: QualityKind::None,
            delta: 1e-3,
            slope: 20.0,
            direction: Direction::Increasing,
        }
    }
}

impl QualitySpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(format!(
                "quality delta must be positive, got {}",
                self.delta
            ));
        }
        if !(self.slope > 0.0 && self.slope.is_finite()) {
            return Err(format!(
                "quality slope must be positive, got {}",
                self.slope
            ));
        }
        Ok(())
    }

    pub fn is_enabled(&self) -> bool {
        self.kind != QualityKind::None
    }
}

/// Stiffness-to-mass ratio `C11 / (vf + δ)`.
pub fn q_stiffness_to_mass<T: Real>(c11: T, vf: T, delta: T) -> T {
    c11 / (vf + delta)
}

/// Anisotropy index `|atan(C22/C11) − π/4| / (π/4)`, in `[0, 1]`.
///
/// Zero for an isotropic pair, one when either constant vanishes. Returns
/// `None` when both are zero, where the polar angle is undefined.
pub fn q_anisotropy<T: Real>(c11: T, c22: T) -> Option<T> {
    let (a, b) = (c11.as_f64(), c22.as_f64());
    if a == 0.0 && b == 0.0 {
        return None;
    }
    // distance of the polar angle from the diagonal equals π/4 − atan(min/max),
    // which is exactly symmetric in the two arguments
    let phi = (a.min(b) / a.max(b)).atan();
    Some(T::lit(((FRAC_PI_4 - phi) / FRAC_PI_4).clamp(0.0, 1.0)))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps raw quality values to weights in `[0, 1]`.
///
/// Stiffness-to-mass values are standardized with `stats` (or with their own
/// mean and standard deviation when `stats` is `None`) and passed through a
/// sigmoid centered at zero. Anisotropy values are already in `[0, 1]` and
/// use a sigmoid centered at 0.5. A zero standard deviation yields 0.5 for
/// every item.
pub fn activate<T: Real>(values: &[T], spec: &QualitySpec, stats: Option<(T, T)>) -> Vec<T> {
    let sign = match spec.direction {
        Direction::Increasing => 1.0,
        Direction::Decreasing => -1.0,
    };
    match spec.kind {
        QualityKind::None => vec![T::one(); values.len()],
        QualityKind::Anisotropy => values
            .iter()
            .map(|v| T::lit(sigmoid(sign * spec.slope * (v.as_f64() - 0.5))))
            .collect(),
        QualityKind::StiffnessToMass => {
            let (mean, std) = match stats {
                Some((m, s)) => (m.as_f64(), s.as_f64()),
                None => mean_std(values),
            };
            if !(std > 0.0 && std.is_finite()) {
                log::warn!("quality values have zero spread; using a flat weight of 0.5");
                return vec![T::lit(0.5); values.len()];
            }
            values
                .iter()
                .map(|v| T::lit(sigmoid(sign * spec.slope * (v.as_f64() - mean) / std)))
                .collect()
        }
    }
}

fn mean_std<T: Real>(values: &[T]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
    let var = values
        .iter()
        .map(|v| (v.as_f64() - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    (mean, var.sqrt())
}

/// Quality weights for a set of (possibly predicted) properties.
///
/// Predicted constants can be slightly negative; they are clamped to zero
/// first. `vf` is only read by the stiffness-to-mass quality.
pub fn quality_weights<T: Real>(props: &[[T; 3]], vf: &[T], spec: &QualitySpec) -> Vec<T> {
    let clamp = |x: T| if x > T::zero() { x } else { T::zero() };
    let raw: Vec<T> = match spec.kind {
        QualityKind::None => return vec![T::one(); props.len()],
        QualityKind::StiffnessToMass => props
            .iter()
            .zip(vf)
            .map(|(p, &v)| q_stiffness_to_mass(clamp(p[0]), v, T::lit(spec.delta)))
            .collect(),
        QualityKind::Anisotropy => {
            let mut flagged = 0usize;
            let raw = props
                .iter()
                .map(|p| {
                    q_anisotropy(clamp(p[0]), clamp(p[2])).unwrap_or_else(|| {
                        flagged += 1;
                        T::zero()
                    })
                })
                .collect();
            if flagged > 0 {
                log::warn!("{flagged} items have C11 = C22 = 0; anisotropy set to 0");
            }
            raw
        }
    };
    activate(&raw, spec, None)
}

/// Raw (unactivated) quality of evaluated properties, for reporting.
pub fn raw_quality<T: Real>(p: &PropertyVector<T>, vf: T, spec: &QualitySpec) -> Option<T> {
    match spec.kind {
        QualityKind::None => None,
        QualityKind::StiffnessToMass => Some(q_stiffness_to_mass(
            p.c11.max(T::zero()),
            vf,
            T::lit(spec.delta),
        )),
        QualityKind::Anisotropy => {
            Some(q_anisotropy(p.c11.max(T::zero()), p.c22.max(T::zero())).unwrap_or(T::zero()))
        }
    }
}
