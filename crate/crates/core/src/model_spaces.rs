//! Constant-curvature model manifolds: circles, flat tori and round 2-spheres.
//!
//! Every model comes with a single global chart (a periodic chart for circles
//! and tori, colatitude/longitude for the sphere) in which the metric and the
//! Christoffel symbols are available in closed form.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest manifold dimension supported by the models.
pub const MAX_DIM: usize = 2;

/// Smallest grid resolution accepted on any axis.
pub const MIN_RESOLUTION: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Circle of the given radius, charted by the angle in `[0, 2π)`.
    Circle { radius: f64 },
    /// Flat torus `R^n / (P_1 Z × … × P_n Z)` with metric `δ_ij` in the chart.
    FlatTorus { periods: Vec<f64> },
    /// Round 2-sphere, charted by colatitude `θ ∈ (0, π)` and longitude `φ`.
    RoundSphere { radius: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldModel {
    kind: ModelKind,
    dim: usize,
    curvature: f64,
}

impl ManifoldModel {
    pub fn circle(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::config(format!("circle radius must be positive, got {radius}")));
        }
        Ok(Self {
            kind: ModelKind::Circle { radius },
            dim: 1,
            curvature: 0.0,
        })
    }

    pub fn flat_torus(periods: Vec<f64>) -> Result<Self> {
        if periods.is_empty() || periods.len() > MAX_DIM {
            return Err(Error::config(format!(
                "flat torus dimension must be 1..={MAX_DIM}, got {}",
                periods.len()
            )));
        }
        if let Some(p) = periods.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
            return Err(Error::config(format!("torus periods must be positive, got {p}")));
        }
        Ok(Self {
            dim: periods.len(),
            kind: ModelKind::FlatTorus { periods },
            curvature: 0.0,
        })
    }

    pub fn round_sphere(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::config(format!("sphere radius must be positive, got {radius}")));
        }
        Ok(Self {
            kind: ModelKind::RoundSphere { radius },
            dim: 2,
            curvature: 1.0 / (radius * radius),
        })
    }

    pub fn from_kind(kind: ModelKind) -> Result<Self> {
        match kind {
            ModelKind::Circle { radius } => Self::circle(radius),
            ModelKind::FlatTorus { periods } => Self::flat_torus(periods),
            ModelKind::RoundSphere { radius } => Self::round_sphere(radius),
        }
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self.kind, ModelKind::RoundSphere { .. })
    }

    /// Circles and tori: every chart axis is periodic.
    pub fn is_flat(&self) -> bool {
        !self.is_sphere()
    }

    /// Period of chart axis `axis`, if that axis is periodic.
    pub fn period(&self, axis: usize) -> Option<f64> {
        match &self.kind {
            ModelKind::Circle { .. } => (axis == 0).then_some(TAU),
            ModelKind::FlatTorus { periods } => periods.get(axis).copied(),
            ModelKind::RoundSphere { .. } => (axis == 1).then_some(TAU),
        }
    }

    /// Whether `p` lies in the declared chart range.
    pub fn contains(&self, p: &ChartPoint) -> bool {
        if p.coords.len() != self.dim {
            return false;
        }
        let c = &p.coords;
        match &self.kind {
            ModelKind::Circle { .. } => (0.0..TAU).contains(&c[0]),
            ModelKind::FlatTorus { periods } => {
                c.iter().zip(periods).all(|(x, per)| (0.0..*per).contains(x))
            }
            ModelKind::RoundSphere { .. } => {
                c[0] > 0.0 && c[0] < PI && (0.0..TAU).contains(&c[1])
            }
        }
    }

    /// Closed-form metric and Christoffel symbols at a chart point.
    pub fn metric_at(&self, p: &ChartPoint) -> Result<MetricData> {
        if !self.contains(p) {
            return Err(Error::Domain(format!(
                "point {:?} outside the chart of {:?}",
                p.coords, self.kind
            )));
        }
        Ok(self.metric_at_coords(&p.coords))
    }

    /// Same formulas as [`metric_at`](Self::metric_at) without the range check.
    ///
    /// Used on lifted torus values and on reflected sphere colatitudes, where
    /// the closed forms remain valid.
    pub fn metric_at_coords(&self, c: &[f64]) -> MetricData {
        let mut m = MetricData::zero(self.dim);
        match &self.kind {
            ModelKind::Circle { radius } => {
                m.g[0][0] = radius * radius;
            }
            ModelKind::FlatTorus { .. } => {
                for i in 0..self.dim {
                    m.g[i][i] = 1.0;
                }
            }
            ModelKind::RoundSphere { radius } => {
                let r2 = radius * radius;
                let (s, co) = c[0].sin_cos();
                m.g[0][0] = r2;
                m.g[1][1] = r2 * s * s;
                // Γ^θ_{φφ} = -sinθ cosθ, Γ^φ_{θφ} = Γ^φ_{φθ} = cotθ
                m.gamma[0][1][1] = -s * co;
                m.gamma[1][0][1] = co / s;
                m.gamma[1][1][0] = co / s;
            }
        }
        m
    }
}

/// Sectional curvature of a model space (constant over the manifold).
pub fn sectional_curvature(model: &ManifoldModel) -> f64 {
    model.curvature()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChartPoint {
    pub coords: Vec<f64>,
}

impl ChartPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        Self { coords }
    }

    /// Builds a point on a periodic model, reducing each coordinate modulo its period.
    pub fn reduced(model: &ManifoldModel, coords: &[f64]) -> Self {
        let coords = coords
            .iter()
            .enumerate()
            .map(|(a, x)| match model.period(a) {
                Some(p) => x.rem_euclid(p),
                None => *x,
            })
            .collect();
        Self { coords }
    }
}

/// Metric `g_ij` and Christoffel symbols `gamma[k][i][j] = Γ^k_{ij}` at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricData {
    pub dim: usize,
    pub g: [[f64; MAX_DIM]; MAX_DIM],
    pub gamma: [[[f64; MAX_DIM]; MAX_DIM]; MAX_DIM],
}

impl MetricData {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            g: [[0.0; MAX_DIM]; MAX_DIM],
            gamma: [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM],
        }
    }

    pub fn det(&self) -> f64 {
        match self.dim {
            1 => self.g[0][0],
            _ => self.g[0][0] * self.g[1][1] - self.g[0][1] * self.g[1][0],
        }
    }
}

/// Uniform chart grid on a model.
///
/// Periodic axes are sampled at `i · P / N`. A sphere with a single
/// resolution entry gives the staggered colatitude profile grid
/// `θ_j = (j + ½) π / J` used by the equivariant reduction; two entries give
/// the full colatitude × longitude grid. Points are ordered row-major.
pub fn grid(model: &ManifoldModel, resolution: &[usize]) -> Result<Vec<ChartPoint>> {
    if let Some(r) = resolution.iter().find(|r| **r < MIN_RESOLUTION) {
        return Err(Error::config(format!(
            "grid resolution {r} is below the minimum of {MIN_RESOLUTION} per axis"
        )));
    }
    let axes: Vec<Vec<f64>> = match model.kind() {
        ModelKind::Circle { .. } | ModelKind::FlatTorus { .. } => {
            if resolution.len() != model.dim() {
                return Err(Error::config(format!(
                    "expected {} resolution entries, got {}",
                    model.dim(),
                    resolution.len()
                )));
            }
            resolution
                .iter()
                .enumerate()
                .map(|(a, &n)| {
                    let p = model.period(a).expect("periodic axis");
                    (0..n).map(|i| i as f64 * p / n as f64).collect()
                })
                .collect()
        }
        ModelKind::RoundSphere { .. } => match resolution {
            [nt] => vec![staggered_colatitudes(*nt), vec![0.0]],
            [nt, np] => vec![
                staggered_colatitudes(*nt),
                (0..*np).map(|k| k as f64 * TAU / *np as f64).collect(),
            ],
            _ => {
                return Err(Error::config(
                    "sphere grids take one (profile) or two (full) resolution entries",
                ))
            }
        },
    };
    let mut points = Vec::new();
    match axes.as_slice() {
        [a] => points.extend(a.iter().map(|x| ChartPoint::new(vec![*x]))),
        [a, b] => {
            for x in a {
                for y in b {
                    points.push(ChartPoint::new(vec![*x, *y]));
                }
            }
        }
        _ => unreachable!("models have dimension 1 or 2"),
    }
    Ok(points)
}

pub(crate) fn staggered_colatitudes(nt: usize) -> Vec<f64> {
    let d = PI / nt as f64;
    (0..nt).map(|j| (j as f64 + 0.5) * d).collect()
}
