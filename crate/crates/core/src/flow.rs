//! Explicit time stepping of the nonparametric graphical mean curvature flow
//!
//! ```text
//! ∂_t f^α = g̃^{ij} (∂_i∂_j f^α − Γ₁^k_{ij} ∂_k f^α + Γ₂^α_{βγ} ∂_i f^β ∂_j f^γ),
//! g̃_{ij} = g_{ij} + h_{βγ} ∂_i f^β ∂_j f^γ.
//! ```
//!
//! In the equivariant mode the same template is evaluated on the jet of
//! `(θ, φ) ↦ (ρ(θ), φ)`, which reduces to
//! `ρ_t = ρ''/(r₁² + r₂²ρ'²) + (sinθ cosθ ρ' − sinρ cosρ)/(r₁² sin²θ + r₂² sin²ρ)`.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model_spaces::MAX_DIM;
use crate::state::{Discretization, Jet, MapState, Mode};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeStep {
    Auto,
    Fixed(f64),
}

impl Serialize for TimeStep {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TimeStep::Auto => s.serialize_str("auto"),
            TimeStep::Fixed(dt) => s.serialize_f64(*dt),
        }
    }
}

impl<'de> Deserialize<'de> for TimeStep {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(dt) => Ok(TimeStep::Fixed(dt)),
            Raw::Text(t) if t == "auto" => Ok(TimeStep::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "dt must be a positive number or \"auto\", got \"{t}\""
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    ForwardEuler,
    RK4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopRules {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup_lambda_below: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_omega_below: Option<f64>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_max_steps() -> usize {
    10_000_000
}

fn default_cfl() -> f64 {
    0.25
}

fn default_stride() -> usize {
    1
}

impl Default for StopRules {
    fn default() -> Self {
        Self {
            sup_lambda_below: None,
            min_omega_below: None,
            max_steps: default_max_steps(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub dt: TimeStep,
    #[serde(default = "default_cfl")]
    pub cfl_safety: f64,
    pub scheme: Scheme,
    pub t_end: f64,
    #[serde(default)]
    pub stop_rules: StopRules,
    #[serde(default = "default_stride")]
    pub output_stride: usize,
}

impl FlowConfig {
    pub fn new(dt: TimeStep, scheme: Scheme, t_end: f64) -> Self {
        Self {
            dt,
            cfl_safety: default_cfl(),
            scheme,
            t_end,
            stop_rules: StopRules::default(),
            output_stride: default_stride(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let TimeStep::Fixed(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::config(format!("flow.dt must be positive, got {dt}")));
            }
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::config(format!(
                "flow.cfl_safety must lie in (0, 1], got {}",
                self.cfl_safety
            )));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::config(format!("flow.t_end must be finite and ≥ 0, got {}", self.t_end)));
        }
        if self.output_stride == 0 {
            return Err(Error::config("flow.output_stride must be at least 1"));
        }
        if self.stop_rules.max_steps == 0 {
            return Err(Error::config("flow.stop_rules.max_steps must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    ReachedTEnd,
    Converged,
    GraphConditionLost,
    StepLimit,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Global reductions gathered while evaluating the right-hand side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub min_star_omega: f64,
    pub sup_lambda: f64,
    /// Largest eigenvalue of `g̃⁻¹` over the grid (the `θθ` entry in equivariant mode).
    pub max_inverse_eig: f64,
}

impl StepStats {
    /// Step size from the parabolic stability bound.
    pub fn auto_dt(&self, disc: &Discretization, cfl: f64) -> f64 {
        let h = disc.min_spacing();
        cfl * h * h / (2.0 * disc.n() as f64 * self.max_inverse_eig)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PointEval {
    pub velocity: [f64; MAX_DIM],
    pub det_ratio: f64,
    pub lambda1_sq: f64,
    pub inverse_eig: f64,
    /// `g̃^{ij}` in chart components.
    pub gt_inv: [[f64; MAX_DIM]; MAX_DIM],
    pub sqrt_det_gt: f64,
}

fn inverse2(a: &[[f64; 2]; 2], n: usize) -> ([[f64; 2]; 2], f64) {
    if n == 1 {
        return ([[1.0 / a[0][0], 0.0], [0.0, 0.0]], a[0][0]);
    }
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    (
        [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]],
        det,
    )
}

fn max_eig_sym2(a: &[[f64; 2]; 2], n: usize) -> f64 {
    if n == 1 {
        return a[0][0];
    }
    top_eig2(a)
}

/// Larger eigenvalue of a 2×2 matrix with real spectrum.
fn top_eig2(a: &[[f64; 2]; 2]) -> f64 {
    let half_diff = 0.5 * (a[0][0] - a[1][1]);
    let disc = half_diff * half_diff + a[0][1] * a[1][0];
    0.5 * (a[0][0] + a[1][1]) + disc.max(0.0).sqrt()
}

/// Flow velocity and pointwise diagnostics at one grid point.
pub(crate) fn point_eval(disc: &Discretization, jet: &Jet, p: usize) -> PointEval {
    let (n, m) = (disc.n(), disc.m());
    let x = disc.point_coords(p);
    let g = disc.domain().metric_at_coords(&x[..n]);
    let h = disc.target().metric_at_coords(&jet.value[..m]);
    // pullback P_ij = h_βγ ∂_i f^β ∂_j f^γ
    let mut pull = [[0.0; 2]; 2];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for be in 0..m {
                for ga in 0..m {
                    acc += h.g[be][ga] * jet.df[be][i] * jet.df[ga][j];
                }
            }
            pull[i][j] = acc;
        }
    }
    let mut gt = [[0.0; 2]; 2];
    for i in 0..n {
        for j in 0..n {
            gt[i][j] = g.g[i][j] + pull[i][j];
        }
    }
    let (gt_inv, det_gt) = inverse2(&gt, n);
    let (g_inv, det_g) = inverse2(&g.g, n);

    let mut velocity = [0.0; MAX_DIM];
    for (al, v) in velocity.iter_mut().enumerate().take(m) {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut t = jet.hess[al][i][j];
                for k in 0..n {
                    t -= g.gamma[k][i][j] * jet.df[al][k];
                }
                for be in 0..m {
                    for ga in 0..m {
                        t += h.gamma[al][be][ga] * jet.df[be][i] * jet.df[ga][j];
                    }
                }
                acc += gt_inv[i][j] * t;
            }
        }
        *v = acc;
    }

    // λ₁² is the top eigenvalue of g⁻¹P
    let mut gp = [[0.0; 2]; 2];
    for i in 0..n {
        for j in 0..n {
            gp[i][j] = (0..n).map(|k| g_inv[i][k] * pull[k][j]).sum();
        }
    }
    let lambda1_sq = if n == 1 {
        gp[0][0]
    } else {
        top_eig2(&gp)
    };
    let inverse_eig = if disc.mode() == Mode::Equivariant {
        gt_inv[0][0]
    } else {
        max_eig_sym2(&gt_inv, n)
    };
    PointEval {
        velocity,
        det_ratio: det_gt / det_g,
        lambda1_sq,
        inverse_eig,
        gt_inv,
        sqrt_det_gt: det_gt.sqrt(),
    }
}

/// Right-hand side of the flow for the stored components, with global stats.
pub fn rhs(state: &MapState) -> Result<(Vec<f64>, StepStats)> {
    let disc = &*state.disc;
    let sc = disc.stored_components();
    let evals: Vec<PointEval> = (0..state.len())
        .into_par_iter()
        .map(|p| point_eval(disc, &state.jet(p), p))
        .collect();
    let mut vel = Vec::with_capacity(state.len() * sc);
    let mut stats = StepStats {
        min_star_omega: f64::INFINITY,
        sup_lambda: 0.0,
        max_inverse_eig: 0.0,
    };
    for (p, e) in evals.iter().enumerate() {
        for c in 0..sc {
            if !e.velocity[c].is_finite() {
                return Err(Error::Numerical {
                    step: 0,
                    point: p,
                    message: format!("non-finite velocity in component {c}"),
                });
            }
            vel.push(e.velocity[c]);
        }
        stats.min_star_omega = stats.min_star_omega.min(1.0 / e.det_ratio.sqrt());
        stats.sup_lambda = stats.sup_lambda.max(e.lambda1_sq.max(0.0).sqrt());
        stats.max_inverse_eig = stats.max_inverse_eig.max(e.inverse_eig);
    }
    Ok((vel, stats))
}

fn axpy(state: &MapState, a: f64, v: &[f64], dt_time: f64) -> MapState {
    MapState {
        disc: state.disc.clone(),
        values: state.values.iter().zip(v).map(|(x, d)| x + a * d).collect(),
        time: state.time + dt_time,
    }
}

fn check_finite(state: &MapState) -> Result<()> {
    let sc = state.disc.stored_components();
    if let Some(i) = state.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            step: 0,
            point: i / sc,
            message: "non-finite value after update".into(),
        });
    }
    Ok(())
}

/// One step of size `dt` from a state whose right-hand side `k1` is already known.
fn advance(state: &MapState, k1: &[f64], dt: f64, scheme: Scheme) -> Result<MapState> {
    let next = match scheme {
        Scheme::ForwardEuler => axpy(state, dt, k1, dt),
        Scheme::RK4 => {
            let (k2, _) = rhs(&axpy(state, 0.5 * dt, k1, 0.5 * dt))?;
            let (k3, _) = rhs(&axpy(state, 0.5 * dt, &k2, 0.5 * dt))?;
            let (k4, _) = rhs(&axpy(state, dt, &k3, dt))?;
            let combo: Vec<f64> = (0..k1.len())
                .map(|i| (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0)
                .collect();
            axpy(state, dt, &combo, dt)
        }
    };
    check_finite(&next)?;
    Ok(next)
}

fn step_checked(state: &MapState, config: &FlowConfig, mode: Mode) -> Result<MapState> {
    if state.disc.mode() != mode {
        return Err(Error::config(format!(
            "state is discretized in {:?} mode",
            state.disc.mode()
        )));
    }
    let (k1, stats) = rhs(state)?;
    let dt = match config.dt {
        TimeStep::Fixed(dt) => dt,
        TimeStep::Auto => stats.auto_dt(&state.disc, config.cfl_safety),
    };
    advance(state, &k1, dt, config.scheme)
}

/// One step of the full-grid flow (flat target).
pub fn step_full_grid(state: &MapState, config: &FlowConfig) -> Result<MapState> {
    step_checked(state, config, Mode::FullGrid)
}

/// One step of the equivariant sphere-to-sphere flow.
pub fn step_equivariant(state: &MapState, config: &FlowConfig) -> Result<MapState> {
    step_checked(state, config, Mode::Equivariant)
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub state: MapState,
    pub step: usize,
    /// Neighbouring states one step before and after, when recorded.
    pub neighbors: Option<(MapState, MapState)>,
}

#[derive(Clone, Debug)]
pub struct FlowRun {
    pub snapshots: Vec<Snapshot>,
    pub status: RunStatus,
    pub steps: usize,
    /// Largest step size taken.
    pub max_dt: f64,
    /// Stats of the final state.
    pub final_stats: StepStats,
}

impl FlowRun {
    pub fn states(&self) -> impl Iterator<Item = &MapState> {
        self.snapshots.iter().map(|s| &s.state)
    }

    pub fn final_state(&self) -> &MapState {
        &self.snapshots.last().expect("a run always has a snapshot").state
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Keep the states one step before and after each snapshot, for centered
    /// time differences.
    pub keep_neighbors: bool,
}

pub fn run(initial: &MapState, config: &FlowConfig) -> Result<FlowRun> {
    run_with(initial, config, RunOptions::default())
}

pub fn run_with(initial: &MapState, config: &FlowConfig, opts: RunOptions) -> Result<FlowRun> {
    config.validate()?;
    let t_end = config.t_end;
    let time_eps = 1e-12 * t_end.max(1.0);
    let mut snapshots: Vec<Snapshot> = Vec::new();
    // snapshot waiting for its forward neighbour
    let mut pending: Option<(Snapshot, MapState)> = None;
    let mut prev: Option<MapState> = None;
    let mut state = initial.clone();
    let mut steps = 0usize;
    let mut max_dt: f64 = 0.0;
    let with_step = |e: Error, step: usize| match e {
        Error::Numerical { point, message, .. } => Error::Numerical { step, point, message },
        other => other,
    };

    loop {
        let (k1, stats) = rhs(&state).map_err(|e| with_step(e, steps))?;
        if let Some((snap, before)) = pending.take() {
            let mut snap = snap;
            snap.neighbors = Some((before, state.clone()));
            snapshots.push(snap);
        }
        let status = if config
            .stop_rules
            .min_omega_below
            .is_some_and(|thr| stats.min_star_omega <= thr)
        {
            Some(RunStatus::GraphConditionLost)
        } else if config
            .stop_rules
            .sup_lambda_below
            .is_some_and(|thr| stats.sup_lambda < thr)
        {
            Some(RunStatus::Converged)
        } else if state.time >= t_end - time_eps {
            Some(RunStatus::ReachedTEnd)
        } else if steps >= config.stop_rules.max_steps {
            Some(RunStatus::StepLimit)
        } else {
            None
        };

        let on_stride = steps.is_multiple_of(config.output_stride);
        if let Some(status) = status {
            let snap = Snapshot { state: state.clone(), step: steps, neighbors: None };
            snapshots.push(snap);
            return Ok(FlowRun { snapshots, status, steps, max_dt, final_stats: stats });
        }
        if on_stride {
            let snap = Snapshot { state: state.clone(), step: steps, neighbors: None };
            match (&prev, opts.keep_neighbors) {
                (Some(before), true) => pending = Some((snap, before.clone())),
                _ => snapshots.push(snap),
            }
        }

        let mut dt = match config.dt {
            TimeStep::Fixed(dt) => dt,
            TimeStep::Auto => stats.auto_dt(&state.disc, config.cfl_safety),
        };
        if state.time + dt > t_end {
            dt = t_end - state.time;
        }
        max_dt = max_dt.max(dt);
        let next = advance(&state, &k1, dt, config.scheme).map_err(|e| with_step(e, steps + 1))?;
        if opts.keep_neighbors {
            prev = Some(std::mem::replace(&mut state, next));
        } else {
            state = next;
        }
        steps += 1;
        // land exactly on t_end
        if (state.time - t_end).abs() <= time_eps {
            state.time = t_end;
        }
    }
}
