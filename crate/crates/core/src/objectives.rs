//! Data terms `D(Φ(u), Φ₀)` and their cotangents with respect to the code.
//!
//! Inversion: `D = (1/Z)·‖Φ(u) − Φ₀‖₂^p`, `p ∈ {1, 2}`.
//!
//! Activation maximization: `D = −(1/Z)·Φ(u)_i`. The sign is flipped
//! relative to the plain inner product `⟨Φ(u), e_i⟩` so that *minimizing*
//! `D` with the shared descent loop *raises* unit `i`.

use serde::{Deserialize, Serialize};

use crate::cnn::FeatureCode;
use crate::error::{Error, Result};
use crate::grid::Image;

#[derive(Clone, Debug, PartialEq)]
pub enum ObjectiveKind {
    Inversion { target: FeatureCode, p: u8 },
    ActivationMax { unit: usize },
    /// Fixed gradient field independent of the network; the value reported
    /// is `⟨gradient, u⟩`. Test hook for the scheme identities.
    ConstantGradient { gradient: Image },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    /// Normalization constant `Z > 0`.
    pub z: f64,
    /// Layer whose activation is the code.
    pub layer: usize,
}

/// How `Z` is chosen when it is not given explicitly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZMode {
    /// `Z = 1`.
    #[default]
    One,
    /// Inversion: `Z = ‖Φ₀‖₂²`.
    TargetNorm,
    /// Activation maximization: `Z = |Φ(u⁰)_i|`, frozen at the first step.
    InitialActivation,
}

impl ZMode {
    /// Resolves `Z`; degenerate (zero) magnitudes fall back to 1.
    pub fn resolve(self, target_or_init: &FeatureCode, unit: Option<usize>) -> f64 {
        let z = match (self, unit) {
            (ZMode::One, _) => 1.0,
            (ZMode::TargetNorm, _) => target_or_init.values.iter().map(|v| v * v).sum(),
            (ZMode::InitialActivation, Some(i)) => target_or_init
                .values
                .get(i)
                .map_or(1.0, |v| v.abs()),
            (ZMode::InitialActivation, None) => target_or_init
                .values
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs())),
        };
        if z.is_finite() && z > 0.0 {
            z
        } else {
            1.0
        }
    }
}

fn check_z(z: f64) -> Result<()> {
    if z.is_finite() && z > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("normalization Z must be positive, got {z}")))
    }
}

impl ObjectiveSpec {
    pub fn inversion(target: FeatureCode, p: u8, z: f64) -> Result<Self> {
        check_z(z)?;
        if !matches!(p, 1 | 2) {
            return Err(Error::Parameter(format!("norm exponent must be 1 or 2, got {p}")));
        }
        let layer = target.origin_layer;
        Ok(ObjectiveSpec {
            kind: ObjectiveKind::Inversion { target, p },
            z,
            layer,
        })
    }

    pub fn activation_max(layer: usize, unit: usize, z: f64) -> Result<Self> {
        check_z(z)?;
        Ok(ObjectiveSpec {
            kind: ObjectiveKind::ActivationMax { unit },
            z,
            layer,
        })
    }

    pub fn constant_gradient(gradient: Image) -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::ConstantGradient { gradient },
            z: 1.0,
            layer: 0,
        }
    }

    /// Value and cotangent of the data term at `code`.
    pub fn evaluate(&self, code: &FeatureCode) -> Result<(f64, FeatureCode)> {
        match self.kind {
            ObjectiveKind::Inversion { .. } => inversion_term(code, self),
            ObjectiveKind::ActivationMax { .. } => actmax_term(code, self),
            ObjectiveKind::ConstantGradient { .. } => Err(Error::Parameter(
                "constant-gradient objective has no code-space form".into(),
            )),
        }
    }
}

/// `(1/Z)·‖code − Φ₀‖_p^p` and its gradient.
///
/// For `p = 2` the cotangent is `(2/Z)(code − Φ₀)`; for `p = 1` it is
/// `(1/Z)·sign(code − Φ₀)` with `sign(0) = 0`.
pub fn inversion_term(code: &FeatureCode, spec: &ObjectiveSpec) -> Result<(f64, FeatureCode)> {
    let ObjectiveKind::Inversion { target, p } = &spec.kind else {
        return Err(Error::Parameter("inversion_term needs an inversion objective".into()));
    };
    check_z(spec.z)?;
    if code.len() != target.len() {
        return Err(Error::Dimension(format!(
            "code has {} entries, target has {}",
            code.len(),
            target.len()
        )));
    }
    let diff: Vec<f64> = code
        .values
        .iter()
        .zip(&target.values)
        .map(|(a, b)| a - b)
        .collect();
    let sq: f64 = diff.iter().map(|d| d * d).sum();
    let (value, cot) = match p {
        2 => (
            sq / spec.z,
            diff.iter().map(|d| 2.0 * d / spec.z).collect(),
        ),
        1 => (
            diff.iter().map(|d| d.abs()).sum::<f64>() / spec.z,
            diff.iter()
                .map(|&d| if d == 0.0 { 0.0 } else { d.signum() / spec.z })
                .collect(),
        ),
        other => {
            return Err(Error::Parameter(format!(
                "norm exponent must be 1 or 2, got {other}"
            )))
        }
    };
    Ok((value, FeatureCode::new(cot, code.origin_layer)))
}

/// `−(1/Z)·code[i]` and its gradient `−(1/Z)·e_i`.
pub fn actmax_term(code: &FeatureCode, spec: &ObjectiveSpec) -> Result<(f64, FeatureCode)> {
    let ObjectiveKind::ActivationMax { unit } = spec.kind else {
        return Err(Error::Parameter(
            "actmax_term needs an activation-maximization objective".into(),
        ));
    };
    check_z(spec.z)?;
    if unit >= code.len() {
        return Err(Error::Dimension(format!(
            "unit {unit} out of range for a code of length {}",
            code.len()
        )));
    }
    let mut cot = vec![0.0; code.len()];
    cot[unit] = -1.0 / spec.z;
    Ok((-code.values[unit] / spec.z, FeatureCode::new(cot, code.origin_layer)))
}
