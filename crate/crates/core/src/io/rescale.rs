//! Constant rescalings of the domain and target metrics.
//!
//! Scaling `g₁ → c₁ g₁` and `g₂ → c₂ g₂` turns the singular values of a
//! fixed map into `λ √(c₂ / c₁)` and the pair products into `λᵢλⱼ c₂ / c₁`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_spaces::{ManifoldModel, ModelKind};

/// How to choose the metric scales.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum RescaleSpec {
    /// `ḡ₁ = 2L g₁`: pair products bounded by `L` drop to at most 1/2.
    Lipschitz { l: f64 },
    /// `ḡ₁ = k₁ g₁`, `ḡ₂ = k₂ g₂`: 2-dilation below `k₁/k₂` becomes area-decreasing.
    Curvature { k1: f64, k2: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleFactors {
    pub domain_scale: f64,
    pub target_scale: f64,
    /// `λ̄ᵢ = lambda_factor · λᵢ`.
    pub lambda_factor: f64,
    /// `λ̄ᵢλ̄ⱼ = pair_factor · λᵢλⱼ`.
    pub pair_factor: f64,
}

impl ScaleFactors {
    fn from_scales(domain_scale: f64, target_scale: f64) -> Self {
        let pair_factor = target_scale / domain_scale;
        Self { domain_scale, target_scale, lambda_factor: pair_factor.sqrt(), pair_factor }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("rescale.{name} must be positive and finite, got {v}")))
    }
}

impl RescaleSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RescaleSpec::Lipschitz { l } => positive("l", l),
            RescaleSpec::Curvature { k1, k2 } => positive("k1", k1).and(positive("k2", k2)),
        }
    }

    /// Rescaled domain and target models. Only the radius of circles and
    /// spheres and the periods of tori change.
    pub fn apply(&self, domain: ManifoldModel, target: ManifoldModel) -> Result<(ManifoldModel, ManifoldModel)> {
        let f = normalize_metrics(*self)?;
        Ok((scale_model(&domain, f.domain_scale)?, scale_model(&target, f.target_scale)?))
    }
}

/// Metric scale factors and the induced singular-value rescaling.
pub fn normalize_metrics(spec: RescaleSpec) -> Result<ScaleFactors> {
    spec.validate()?;
    Ok(match spec {
        RescaleSpec::Lipschitz { l } => ScaleFactors::from_scales(2.0 * l, 1.0),
        RescaleSpec::Curvature { k1, k2 } => ScaleFactors::from_scales(k1, k2),
    })
}

/// The model with metric `c · g`: lengths grow by `√c`.
pub fn scale_model(model: &ManifoldModel, c: f64) -> Result<ManifoldModel> {
    positive("scale", c)?;
    let s = c.sqrt();
    let kind = match model.kind() {
        ModelKind::Circle { radius } => ModelKind::Circle { radius: radius * s },
        ModelKind::RoundSphere { radius } => ModelKind::RoundSphere { radius: radius * s },
        ModelKind::FlatTorus { periods } => ModelKind::FlatTorus {
            periods: periods.iter().map(|p| p * s).collect(),
        },
    };
    ManifoldModel::from_kind(kind)
}
