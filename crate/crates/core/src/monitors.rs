//! Time series of global diagnostics along a flow run, the checks asserted
//! on them, and the pointwise residual of the `ln *Ω` evolution equation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{point_eval, FlowRun, PointEval};
use crate::geometry::{geometry_field, PointwiseGeometry};
use crate::state::MapState;

/// Global reductions of the pointwise geometry of one snapshot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reductions {
    pub time: f64,
    pub min_omega: f64,
    pub det_ratio_max: f64,
    pub max_pair_product: f64,
    pub min_s2_eig: f64,
    pub max_a2: f64,
    pub sup_lambda: f64,
}

impl Reductions {
    /// Reduces in grid order.
    pub fn from_geometries(time: f64, geoms: &[PointwiseGeometry]) -> Self {
        let mut r = Reductions {
            time,
            min_omega: f64::INFINITY,
            det_ratio_max: 0.0,
            max_pair_product: 0.0,
            min_s2_eig: f64::INFINITY,
            max_a2: 0.0,
            sup_lambda: 0.0,
        };
        for g in geoms {
            r.min_omega = r.min_omega.min(g.star_omega);
            r.det_ratio_max = r.det_ratio_max.max(g.det_ratio);
            r.max_pair_product = r.max_pair_product.max(g.max_pair_product());
            r.min_s2_eig = r.min_s2_eig.min(g.s2_min_eig);
            r.max_a2 = r.max_a2.max(g.a2);
            r.sup_lambda = r.sup_lambda.max(g.singular.lambda.first().copied().unwrap_or(0.0));
        }
        r
    }

    pub fn of_state(state: &MapState) -> Self {
        Self::from_geometries(state.time, &geometry_field(state))
    }
}

/// Outcome of one monitor check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorFlag {
    pub name: String,
    /// False when the initial data lies outside the regime the check asserts on.
    pub applicable: bool,
    pub passed: bool,
    pub first_failure_time: Option<f64>,
    pub tolerance: f64,
}

impl MonitorFlag {
    /// Whether the flag blocks success: applicable and failed.
    pub fn is_failure(&self) -> bool {
        self.applicable && !self.passed
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MonitorSeries {
    pub times: Vec<f64>,
    pub min_omega: Vec<f64>,
    pub det_ratio_max: Vec<f64>,
    pub max_pair_product: Vec<f64>,
    pub min_s2_eig: Vec<f64>,
    pub max_a2: Vec<f64>,
    pub sup_lambda: Vec<f64>,
    pub residual_linf: Vec<Option<f64>>,
    pub flags: Vec<MonitorFlag>,
}

impl MonitorSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push(&mut self, r: Reductions, residual: Option<f64>) {
        self.times.push(r.time);
        self.min_omega.push(r.min_omega);
        self.det_ratio_max.push(r.det_ratio_max);
        self.max_pair_product.push(r.max_pair_product);
        self.min_s2_eig.push(r.min_s2_eig);
        self.max_a2.push(r.max_a2);
        self.sup_lambda.push(r.sup_lambda);
        self.residual_linf.push(residual);
    }

    /// Series over every snapshot of a run. Residuals are filled in where the
    /// snapshot carries its neighbouring states.
    pub fn from_run(run: &FlowRun) -> Result<Self> {
        let mut s = MonitorSeries::default();
        for snap in &run.snapshots {
            let residual = match &snap.neighbors {
                Some((a, b)) => Some(residual_from_states(a, &snap.state, b)?),
                None => None,
            };
            s.push(Reductions::of_state(&snap.state), residual);
        }
        Ok(s)
    }
}

/// Appends the reductions of one snapshot's geometry to the series.
pub fn record(series: &mut MonitorSeries, time: f64, geoms: &[PointwiseGeometry]) {
    series.push(Reductions::from_geometries(time, geoms), None);
}

/// Default drift budget for the monotonicity check: `10 · dt · h²`.
pub fn default_monotone_tol(dt: f64, spacing: f64) -> f64 {
    10.0 * dt * spacing * spacing
}

/// Whether the initial data satisfies `det(g + f*h)/det g < 4`.
pub fn initially_below_four(series: &MonitorSeries) -> bool {
    series.det_ratio_max.first().is_some_and(|d| *d < 4.0)
}

pub fn check_monotone_min_omega(series: &MonitorSeries, tol: f64) -> MonitorFlag {
    let first = series
        .min_omega
        .windows(2)
        .position(|w| w[1] < w[0] - tol)
        .map(|k| series.times[k + 1]);
    MonitorFlag {
        name: "monotone_min_omega".into(),
        applicable: initially_below_four(series),
        passed: first.is_none(),
        first_failure_time: first,
        tolerance: tol,
    }
}

pub fn check_area_decreasing_preserved(series: &MonitorSeries, tol: f64) -> MonitorFlag {
    let applicable = series.max_pair_product.first().is_some_and(|p| *p < 1.0);
    let first = (0..series.len())
        .find(|&k| !(series.max_pair_product[k] < 1.0 && series.min_s2_eig[k] > -tol))
        .map(|k| series.times[k]);
    MonitorFlag {
        name: "area_decreasing_preserved".into(),
        applicable,
        passed: first.is_none(),
        first_failure_time: first,
        tolerance: tol,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayBranch {
    A,
    B,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchChoice {
    #[default]
    Auto,
    A,
    B,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCheck {
    pub c0: f64,
    pub branch: DecayBranch,
    /// `4 − det_ratio_max(0)`, used by branch (b).
    pub epsilon: f64,
    /// `ln(min *Ω(0)) · e^{−2 c₀ t}` at each recorded time.
    pub lower_envelope: Vec<f64>,
    pub satisfied: bool,
    pub first_failure_time: Option<f64>,
    pub tolerance: f64,
}

/// `c₀ = k₁(n−1)/4` in branch (a), `ε k₁(n−1)/16` in branch (b).
pub fn decay_rate(branch: DecayBranch, k1: f64, n: usize, epsilon: f64) -> f64 {
    let base = k1 * (n as f64 - 1.0);
    match branch {
        DecayBranch::A => base / 4.0,
        DecayBranch::B => epsilon * base / 16.0,
    }
}

pub fn check_decay(
    series: &MonitorSeries,
    k1: f64,
    k2: f64,
    n: usize,
    choice: BranchChoice,
    tol: f64,
) -> Result<DecayCheck> {
    if k1 <= 0.0 {
        return Err(Error::Inapplicable(format!(
            "the decay bound needs k1 > 0, got k1 = {k1}"
        )));
    }
    if series.is_empty() {
        return Err(Error::Inapplicable("empty monitor series".into()));
    }
    let branch = match choice {
        BranchChoice::A => DecayBranch::A,
        BranchChoice::B => DecayBranch::B,
        BranchChoice::Auto if k2 <= 0.0 => DecayBranch::A,
        BranchChoice::Auto => DecayBranch::B,
    };
    let epsilon = 4.0 - series.det_ratio_max[0];
    if branch == DecayBranch::B && epsilon <= 0.0 {
        return Err(Error::Inapplicable(format!(
            "branch (b) needs initial det ratio below 4, got {}",
            series.det_ratio_max[0]
        )));
    }
    let c0 = decay_rate(branch, k1, n, epsilon);
    let f0 = series.min_omega[0].ln();
    let t0 = series.times[0];
    let lower_envelope: Vec<f64> = series
        .times
        .iter()
        .map(|t| f0 * (-2.0 * c0 * (t - t0)).exp())
        .collect();
    let first = (0..series.len())
        .find(|&k| series.min_omega[k].ln() < lower_envelope[k] - tol)
        .map(|k| series.times[k]);
    Ok(DecayCheck {
        c0,
        branch,
        epsilon,
        lower_envelope,
        satisfied: first.is_none(),
        first_failure_time: first,
        tolerance: tol,
    })
}

fn evals(state: &MapState) -> Vec<PointEval> {
    let disc = &*state.disc;
    (0..state.len())
        .into_par_iter()
        .map(|p| point_eval(disc, &state.jet(p), p))
        .collect()
}

fn ln_star_omega(ev: &[PointEval]) -> Vec<f64> {
    ev.iter().map(|e| -0.5 * e.det_ratio.ln()).collect()
}

/// Laplace–Beltrami operator of `g̃` applied to a grid scalar, in divergence
/// form `(1/√det g̃) ∂_i(√det g̃ g̃^{ij} ∂_j u)` with face-averaged coefficients.
/// Faces through a pole carry no flux.
pub fn laplace_beltrami(state: &MapState, u: &[f64]) -> Vec<f64> {
    laplacian_with(state, u, &evals(state))
}

fn laplacian_with(state: &MapState, u: &[f64], ev: &[PointEval]) -> Vec<f64> {
    let disc = &*state.disc;
    let axes = disc.grid_axes();
    let len = state.len();
    let coef = |p: usize, a: usize, b: usize| ev[p].sqrt_det_gt * ev[p].gt_inv[a][b];
    let grads: Vec<[f64; 2]> = (0..len).map(|p| disc.scalar_gradient(u, p)).collect();
    let mut flux = vec![[0.0; 2]; len];
    for a in 0..axes {
        let h = disc.spacing(a);
        for p in 0..len {
            let Some(q) = disc.forward_neighbor(p, a) else {
                continue;
            };
            let mut f = 0.5 * (coef(p, a, a) + coef(q, a, a)) * (u[q] - u[p]) / h;
            for b in (0..axes).filter(|b| *b != a) {
                f += 0.5 * (coef(p, a, b) + coef(q, a, b)) * 0.5 * (grads[p][b] + grads[q][b]);
            }
            flux[p][a] = f;
        }
    }
    (0..len)
        .map(|p| {
            let mut div = 0.0;
            for a in 0..axes {
                let back = disc.backward_neighbor(p, a).map_or(0.0, |q| flux[q][a]);
                div += (flux[p][a] - back) / disc.spacing(a);
            }
            div / ev[p].sqrt_det_gt
        })
        .collect()
}

/// Pointwise residual of the `ln *Ω` evolution equation at the middle state.
///
/// The stepper moves points vertically, so the time derivative at a fixed
/// chart point picks up the tangential transport `w^i ∂_i ln *Ω` with
/// `w^i = g̃^{ij} h_{αβ} v^α ∂_j f^β`, `v` the flow velocity.
pub fn residual_field(prev: &MapState, mid: &MapState, next: &MapState) -> Result<Vec<f64>> {
    let h1 = mid.time - prev.time;
    let h2 = next.time - mid.time;
    if !(h1 > 0.0 && h2 > 0.0) {
        return Err(Error::Inapplicable(
            "residual needs three states at increasing times".into(),
        ));
    }
    let disc = &*mid.disc;
    let (n, m) = (disc.n(), disc.m());
    let ev_mid = evals(mid);
    let u_prev = ln_star_omega(&evals(prev));
    let u_mid = ln_star_omega(&ev_mid);
    let u_next = ln_star_omega(&evals(next));
    let lap = laplacian_with(mid, &u_mid, &ev_mid);
    let geoms = geometry_field(mid);
    let (k1, k2) = (disc.domain().curvature(), disc.target().curvature());
    let out = (0..mid.len())
        .map(|p| {
            let dudt = (h1 * h1 * u_next[p] - h2 * h2 * u_prev[p] - (h1 * h1 - h2 * h2) * u_mid[p])
                / (h1 * h2 * (h1 + h2));
            let (ti, tii) = crate::geometry::evolution_terms(&geoms[p], k1, k2);
            let jet = mid.jet(p);
            let hm = disc.target().metric_at_coords(&jet.value[..m]);
            let grad = disc.scalar_gradient(&u_mid, p);
            let e = &ev_mid[p];
            // covector h(v, ∂_j f)
            let mut cov = [0.0; 2];
            for (j, cj) in cov.iter_mut().enumerate().take(n) {
                for al in 0..m {
                    for be in 0..m {
                        *cj += hm.g[al][be] * e.velocity[al] * jet.df[be][j];
                    }
                }
            }
            let mut transport = 0.0;
            for i in 0..disc.grid_axes() {
                let wi: f64 = (0..n).map(|j| e.gt_inv[i][j] * cov[j]).sum();
                transport += wi * grad[i];
            }
            dudt - (lap[p] + ti + tii + transport)
        })
        .collect();
    Ok(out)
}

pub fn residual_from_states(prev: &MapState, mid: &MapState, next: &MapState) -> Result<f64> {
    Ok(residual_field(prev, mid, next)?
        .iter()
        .fold(0.0, |acc, r| acc.max(r.abs())))
}

/// L∞ residual at snapshot `index` of a run recorded with neighbouring states.
pub fn residual_evolution_equation(run: &FlowRun, index: usize) -> Result<f64> {
    let snap = run
        .snapshots
        .get(index)
        .ok_or_else(|| Error::Inapplicable(format!("no snapshot {index}")))?;
    match &snap.neighbors {
        Some((a, b)) => residual_from_states(a, &snap.state, b),
        None => Err(Error::Inapplicable(format!(
            "snapshot {index} lacks the states one step before and after"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run_with, FlowConfig, RunOptions, Scheme, TimeStep};
    use crate::model_spaces::ManifoldModel;
    use crate::state::{Discretization, Mode};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{PI, TAU};
    use std::sync::Arc;

    fn series_from(min_omega: Vec<f64>) -> MonitorSeries {
        let mut s = MonitorSeries::default();
        for (k, mo) in min_omega.into_iter().enumerate() {
            s.push(
                Reductions {
                    time: k as f64,
                    min_omega: mo,
                    det_ratio_max: 1.0 / (mo * mo),
                    max_pair_product: 0.0,
                    min_s2_eig: 2.0,
                    max_a2: 0.0,
                    sup_lambda: 0.0,
                },
                None,
            );
        }
        s
    }

    fn torus(res: usize) -> Arc<Discretization> {
        let t = ManifoldModel::flat_torus(vec![TAU, TAU]).unwrap();
        Arc::new(Discretization::new(t.clone(), t, Mode::FullGrid, vec![res, res]).unwrap())
    }

    #[test]
    fn constant_snapshot_reductions() {
        let s = MapState::from_fn(torus(8), 0.0, |_| [0.3, 0.1]);
        let r = Reductions::of_state(&s);
        assert_eq!(r.min_omega, 1.0);
        assert_eq!(r.max_pair_product, 0.0);
        assert_eq!(r.max_a2, 0.0);
        assert_eq!(r.det_ratio_max, 1.0);
    }

    #[test]
    fn unit_dilation_hits_boundary_values() {
        let t = ManifoldModel::flat_torus(vec![TAU, TAU]).unwrap();
        let d = Discretization::new(t.clone(), t, Mode::FullGrid, vec![8, 8])
            .unwrap()
            .with_winding(vec![1, 0, 0, 1])
            .unwrap();
        let s = MapState::from_fn(Arc::new(d), 0.0, |x| x);
        let r = Reductions::of_state(&s);
        assert_abs_diff_eq!(r.det_ratio_max, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.min_omega, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn equivariant_min_omega_matches_closed_form() {
        let s2 = ManifoldModel::round_sphere(1.0).unwrap();
        let nt = 64;
        let d = Arc::new(Discretization::new(s2.clone(), s2, Mode::Equivariant, vec![nt]).unwrap());
        let s = MapState::from_fn(d.clone(), 0.0, |x| [0.5 * x[0].sin(), 0.0]);
        let r = Reductions::of_state(&s);
        let want = (0..nt)
            .map(|p| {
                let th = d.point_coords(p)[0];
                let la = 0.5 * th.cos();
                let lb = (0.5 * th.sin()).sin() / th.sin();
                1.0 / ((1.0 + la * la) * (1.0 + lb * lb)).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(r.min_omega, want, epsilon = 1e-6);
    }

    #[test]
    fn monotone_check() {
        let s = series_from(vec![0.6, 0.6, 0.7, 0.9]);
        let f = check_monotone_min_omega(&s, 0.0);
        assert!(f.passed && f.applicable);
        let s = series_from(vec![0.6, 0.7, 0.65, 0.5]);
        let f = check_monotone_min_omega(&s, 1e-3);
        assert!(!f.passed);
        assert_eq!(f.first_failure_time, Some(2.0));
        assert!(check_monotone_min_omega(&s, 0.2).passed);
    }

    #[test]
    fn area_decreasing_gating() {
        let mut s = series_from(vec![1.0, 1.0]);
        assert!(check_area_decreasing_preserved(&s, 0.0).passed);
        s.max_pair_product = vec![1.2, 1.1];
        let f = check_area_decreasing_preserved(&s, 0.0);
        assert!(!f.applicable && !f.is_failure());
        s.max_pair_product = vec![0.5, 1.0];
        let f = check_area_decreasing_preserved(&s, 0.0);
        assert!(f.applicable && f.is_failure());
        assert_eq!(f.first_failure_time, Some(1.0));
    }

    #[test]
    fn decay_constants() {
        let s = series_from(vec![1.0, 1.0]);
        let d = check_decay(&s, 1.0, 0.0, 2, BranchChoice::Auto, 0.0).unwrap();
        assert_eq!((d.branch, d.c0), (DecayBranch::A, 0.25));
        assert!(d.satisfied);
        assert!(d.lower_envelope.iter().all(|e| *e == 0.0));
        assert_eq!(decay_rate(DecayBranch::B, 1.0, 2, 0.5), 1.0 / 32.0);
        let s = series_from(vec![(1.0f64 / 3.5).sqrt(), 0.6, 0.7]);
        let d = check_decay(&s, 1.0, 1.0, 2, BranchChoice::Auto, 0.0).unwrap();
        assert_eq!(d.branch, DecayBranch::B);
        assert_abs_diff_eq!(d.epsilon, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(d.c0, 1.0 / 32.0, epsilon = 1e-12);
        assert!(d.lower_envelope.windows(2).all(|w| w[1] >= w[0]));
        assert!(matches!(
            check_decay(&s, 0.0, 0.0, 2, BranchChoice::Auto, 0.0),
            Err(Error::Inapplicable(_))
        ));
    }

    #[test]
    fn decay_violation_detected() {
        let s = series_from(vec![0.6, 0.55]);
        let d = check_decay(&s, 1.0, 0.0, 2, BranchChoice::A, 0.0).unwrap();
        assert!(!d.satisfied);
        assert_eq!(d.first_failure_time, Some(1.0));
    }

    #[test]
    fn laplacian_of_smooth_function_on_flat_graph() {
        // constant map: g̃ = g, Δ sin x cos y = −2 sin x cos y
        let res = 64;
        let s = MapState::from_fn(torus(res), 0.0, |_| [0.0, 0.0]);
        let u: Vec<f64> = (0..s.len())
            .map(|p| {
                let x = s.disc.point_coords(p);
                x[0].sin() * x[1].cos()
            })
            .collect();
        let lap = laplace_beltrami(&s, &u);
        let err = lap
            .iter()
            .zip(&u)
            .map(|(l, v)| (l + 2.0 * v).abs())
            .fold(0.0, f64::max);
        let h = TAU / res as f64;
        assert!(err < h * h, "err {err}");
    }

    #[test]
    fn laplacian_on_round_sphere() {
        // Δ cos θ = −2 cos θ on the unit sphere (profile grid, constant map)
        let s2 = ManifoldModel::round_sphere(1.0).unwrap();
        let c = ManifoldModel::circle(1.0).unwrap();
        for (disc, res) in [
            (Discretization::new(s2.clone(), s2.clone(), Mode::Equivariant, vec![128]).unwrap(), 128),
            (Discretization::new(s2.clone(), c, Mode::FullGrid, vec![64, 128]).unwrap(), 64),
        ] {
            let disc = Arc::new(disc);
            let s = MapState::from_fn(disc, 0.0, |_| [0.0, 0.0]);
            let u: Vec<f64> = (0..s.len()).map(|p| s.disc.point_coords(p)[0].cos()).collect();
            let lap = laplace_beltrami(&s, &u);
            let h = PI / res as f64;
            let err = lap.iter().zip(&u).map(|(l, v)| (l + 2.0 * v).abs()).fold(0.0, f64::max);
            assert!(err < 2.0 * h, "err {err}");
        }
    }

    #[test]
    fn stationary_residual_vanishes() {
        let s = MapState::from_fn(torus(16), 0.0, |_| [1.0, 1.0]);
        let cfg = FlowConfig::new(TimeStep::Fixed(1e-3), Scheme::ForwardEuler, 0.01);
        let r = run_with(&s, &cfg, RunOptions { keep_neighbors: true }).unwrap();
        for k in 1..r.snapshots.len() - 1 {
            assert!(residual_evolution_equation(&r, k).unwrap() < 1e-10);
        }
        assert!(matches!(residual_evolution_equation(&r, 0), Err(Error::Inapplicable(_))));
    }

    #[test]
    fn series_from_run_has_matching_lengths() {
        let s = MapState::from_fn(torus(16), 0.0, |x| [0.2 * x[0].sin(), 0.1 * x[1].cos()]);
        let mut cfg = FlowConfig::new(TimeStep::Auto, Scheme::ForwardEuler, 0.2);
        cfg.output_stride = 10;
        let r = run_with(&s, &cfg, RunOptions { keep_neighbors: true }).unwrap();
        let series = MonitorSeries::from_run(&r).unwrap();
        assert_eq!(series.len(), r.snapshots.len());
        assert_eq!(series.residual_linf.len(), series.len());
        assert!(series.residual_linf[0].is_none());
        assert!(series.residual_linf[1].is_some());
        assert!(check_monotone_min_omega(&series, default_monotone_tol(r.max_dt, TAU / 16.0)).passed);
        assert!(series.min_omega.iter().all(|m| *m > 0.0 && *m <= 1.0));
    }
}
