//! Discretized maps between model spaces and their finite-difference jets.
//!
//! Three grid layouts are supported:
//! * periodic product grids on circles and tori,
//! * the full colatitude × longitude grid on a sphere (staggered off the
//!   poles, with ghost values taken across the pole at `φ + π`),
//! * the staggered colatitude profile grid of the equivariant reduction
//!   `f(θ, φ) = (ρ(θ), φ)`, closed by odd reflection of `ρ` at both poles.
//!
//! Torus-valued maps are stored on a continuous lift. The integer winding
//! matrix records how the lift jumps across each periodic domain axis, so
//! stencils never see a jump by a period.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_spaces::{self, ManifoldModel, MAX_DIM, MIN_RESOLUTION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    FullGrid,
    Equivariant,
}

#[derive(Clone, Debug, PartialEq)]
enum Layout {
    Periodic { dims: usize, n: [usize; 2], h: [f64; 2] },
    LatLon { nt: usize, np: usize, dth: f64, dph: f64 },
    Profile { nt: usize, dth: f64 },
}

/// Grid, models and lift data shared by every state of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Discretization {
    domain: ManifoldModel,
    target: ManifoldModel,
    mode: Mode,
    resolution: Vec<usize>,
    layout: Layout,
    /// `winding[α * n + a]`: number of target periods gained by component α
    /// along one period of domain axis a.
    winding: Vec<i64>,
    target_periods: [f64; MAX_DIM],
    pole_value: f64,
    coords: Vec<[f64; 2]>,
}

/// Value, chart differential `df[α][a] = ∂_a f^α` and chart Hessian
/// `hess[α][a][b] = ∂_a ∂_b f^α` of the map at one grid point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet {
    pub value: [f64; MAX_DIM],
    pub df: [[f64; MAX_DIM]; MAX_DIM],
    pub hess: [[[f64; MAX_DIM]; MAX_DIM]; MAX_DIM],
}

// Fourth-order centered differences on unit spacing, written as sums of
// differences so that constants give exact zeros.
fn d1(s: impl Fn(i32) -> f64) -> f64 {
    (8.0 * (s(1) - s(-1)) - (s(2) - s(-2))) / 12.0
}

fn d2(s: impl Fn(i32) -> f64, f0: f64) -> f64 {
    (16.0 * ((s(1) - f0) + (s(-1) - f0)) - ((s(2) - f0) + (s(-2) - f0))) / 12.0
}

impl Discretization {
    pub fn new(
        domain: ManifoldModel,
        target: ManifoldModel,
        mode: Mode,
        resolution: Vec<usize>,
    ) -> Result<Self> {
        if let Some(r) = resolution.iter().find(|r| **r < MIN_RESOLUTION) {
            return Err(Error::config(format!(
                "grid resolution {r} is below the minimum of {MIN_RESOLUTION} per axis"
            )));
        }
        let layout = match mode {
            Mode::FullGrid => {
                if !target.is_flat() {
                    return Err(Error::config(
                        "full-grid mode needs a circle or flat torus target; use the equivariant mode for sphere targets",
                    ));
                }
                if domain.is_sphere() {
                    let [nt, np] = resolution[..] else {
                        return Err(Error::config("sphere domain needs [n_theta, n_phi] resolution"));
                    };
                    if np % 2 != 0 {
                        return Err(Error::config("n_phi must be even (ghosts are taken across the pole)"));
                    }
                    Layout::LatLon {
                        nt,
                        np,
                        dth: std::f64::consts::PI / nt as f64,
                        dph: std::f64::consts::TAU / np as f64,
                    }
                } else {
                    if resolution.len() != domain.dim() {
                        return Err(Error::config(format!(
                            "domain of dimension {} needs {} resolution entries",
                            domain.dim(),
                            domain.dim()
                        )));
                    }
                    let mut n = [1usize; 2];
                    let mut h = [1.0; 2];
                    for (a, &r) in resolution.iter().enumerate() {
                        n[a] = r;
                        h[a] = domain.period(a).expect("periodic axis") / r as f64;
                    }
                    Layout::Periodic { dims: domain.dim(), n, h }
                }
            }
            Mode::Equivariant => {
                if !(domain.is_sphere() && target.is_sphere()) {
                    return Err(Error::config("equivariant mode needs sphere domain and sphere target"));
                }
                let [nt] = resolution[..] else {
                    return Err(Error::config("equivariant mode needs a single [n_theta] resolution"));
                };
                Layout::Profile { nt, dth: std::f64::consts::PI / nt as f64 }
            }
        };
        let mut target_periods = [0.0; MAX_DIM];
        for (a, p) in target_periods.iter_mut().enumerate().take(target.dim()) {
            *p = target.period(a).unwrap_or(0.0);
        }
        let pts = model_spaces::grid(&domain, &resolution)?;
        let coords = pts
            .iter()
            .map(|p| match p.coords[..] {
                [x] => [x, 0.0],
                [x, y] => [x, y],
                _ => unreachable!(),
            })
            .collect();
        Ok(Self {
            winding: vec![0; target.dim() * domain.dim()],
            domain,
            target,
            mode,
            resolution,
            layout,
            target_periods,
            pole_value: 0.0,
            coords,
        })
    }

    /// Sets the winding matrix (row-major, `m × n`) of a torus-valued map on a periodic domain.
    pub fn with_winding(mut self, winding: Vec<i64>) -> Result<Self> {
        if winding.len() != self.m() * self.n() {
            return Err(Error::config("winding matrix has the wrong shape"));
        }
        if winding.iter().any(|w| *w != 0) && !matches!(self.layout, Layout::Periodic { .. }) {
            return Err(Error::config("nonzero winding needs a periodic domain"));
        }
        self.winding = winding;
        Ok(self)
    }

    /// Value of `ρ` at `θ = π` in the equivariant mode (0 for the degree-0
    /// class, `π` for the identity class). The reflection there is
    /// `ρ(π + s) = 2 ρ(π) - ρ(π - s)`.
    pub fn with_pole_value(mut self, v: f64) -> Self {
        self.pole_value = v;
        self
    }

    pub fn domain(&self) -> &ManifoldModel {
        &self.domain
    }

    pub fn target(&self) -> &ManifoldModel {
        &self.target
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn winding(&self) -> &[i64] {
        &self.winding
    }

    pub fn pole_value(&self) -> f64 {
        self.pole_value
    }

    /// Domain dimension.
    pub fn n(&self) -> usize {
        self.domain.dim()
    }

    /// Target dimension.
    pub fn m(&self) -> usize {
        self.target.dim()
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Number of stored components per grid point (1 for the equivariant profile).
    pub fn stored_components(&self) -> usize {
        match self.layout {
            Layout::Profile { .. } => 1,
            _ => self.m(),
        }
    }

    /// Number of grid axes (1 for the profile grid even though `n = 2`).
    pub fn grid_axes(&self) -> usize {
        match self.layout {
            Layout::Periodic { dims, .. } => dims,
            Layout::LatLon { .. } => 2,
            Layout::Profile { .. } => 1,
        }
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        match self.layout {
            Layout::Periodic { h, .. } => h[axis],
            Layout::LatLon { dth, dph, .. } => {
                if axis == 0 {
                    dth
                } else {
                    dph
                }
            }
            Layout::Profile { dth, .. } => dth,
        }
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.grid_axes())
            .map(|a| self.spacing(a))
            .fold(f64::INFINITY, f64::min)
    }

    /// Domain chart coordinates of grid point `p` (second entry 0 for 1-D grids and profiles).
    pub fn point_coords(&self, p: usize) -> [f64; 2] {
        self.coords[p]
    }

    pub fn target_period(&self, comp: usize) -> f64 {
        self.target_periods[comp]
    }

    fn split(&self, p: usize) -> (usize, usize) {
        match self.layout {
            Layout::Periodic { dims: 2, n, .. } => (p / n[1], p % n[1]),
            Layout::LatLon { np, .. } => (p / np, p % np),
            _ => (p, 0),
        }
    }

    /// Stored component `comp` of the map at grid offset `off` from point `p`,
    /// applying periodic lifts, cross-pole ghosts or profile reflections.
    pub fn sample(&self, values: &[f64], p: usize, comp: usize, off: [i32; 2]) -> f64 {
        let sc = self.stored_components();
        let (i0, i1) = self.split(p);
        match self.layout {
            Layout::Periodic { dims, n, .. } => {
                let a0 = i0 as i64 + off[0] as i64;
                let w0 = a0.div_euclid(n[0] as i64);
                let j0 = a0.rem_euclid(n[0] as i64) as usize;
                let (w1, j1) = if dims == 2 {
                    let a1 = i1 as i64 + off[1] as i64;
                    (a1.div_euclid(n[1] as i64), a1.rem_euclid(n[1] as i64) as usize)
                } else {
                    (0, 0)
                };
                let q = if dims == 2 { j0 * n[1] + j1 } else { j0 };
                let mut v = values[q * sc + comp];
                if w0 != 0 || w1 != 0 {
                    let nd = self.n();
                    let per = self.target_periods[comp];
                    v += (w0 * self.winding[comp * nd] ) as f64 * per;
                    if dims == 2 {
                        v += (w1 * self.winding[comp * nd + 1]) as f64 * per;
                    }
                }
                v
            }
            Layout::LatLon { nt, np, .. } => {
                let (j, k) = self.latlon_neighbor(i0, i1, off, nt, np);
                values[(j * np + k) * sc + comp]
            }
            Layout::Profile { nt, .. } => {
                let j = i0 as i64 + off[0] as i64;
                if j < 0 {
                    -values[(-1 - j) as usize]
                } else if j >= nt as i64 {
                    2.0 * self.pole_value - values[(2 * nt as i64 - 1 - j) as usize]
                } else {
                    values[j as usize]
                }
            }
        }
    }

    /// Scalar field sampled with even reflection rules (functions of the
    /// graph geometry, e.g. `ln *Ω`): no lift, cross-pole ghosts, and even
    /// mirroring on the profile grid.
    pub fn sample_scalar(&self, u: &[f64], p: usize, off: [i32; 2]) -> f64 {
        let (i0, i1) = self.split(p);
        match self.layout {
            Layout::Periodic { dims, n, .. } => {
                let j0 = (i0 as i64 + off[0] as i64).rem_euclid(n[0] as i64) as usize;
                if dims == 2 {
                    let j1 = (i1 as i64 + off[1] as i64).rem_euclid(n[1] as i64) as usize;
                    u[j0 * n[1] + j1]
                } else {
                    u[j0]
                }
            }
            Layout::LatLon { nt, np, .. } => {
                let (j, k) = self.latlon_neighbor(i0, i1, off, nt, np);
                u[j * np + k]
            }
            Layout::Profile { nt, .. } => {
                let j = i0 as i64 + off[0] as i64;
                if j < 0 {
                    u[(-1 - j) as usize]
                } else if j >= nt as i64 {
                    u[(2 * nt as i64 - 1 - j) as usize]
                } else {
                    u[j as usize]
                }
            }
        }
    }

    fn latlon_neighbor(&self, j: usize, k: usize, off: [i32; 2], nt: usize, np: usize) -> (usize, usize) {
        let mut jj = j as i64 + off[0] as i64;
        let mut kk = k as i64 + off[1] as i64;
        if jj < 0 {
            jj = -1 - jj;
            kk += np as i64 / 2;
        } else if jj >= nt as i64 {
            jj = 2 * nt as i64 - 1 - jj;
            kk += np as i64 / 2;
        }
        (jj as usize, kk.rem_euclid(np as i64) as usize)
    }

    /// Fourth-order finite-difference jet of the map at grid point `p`.
    pub fn jet(&self, values: &[f64], p: usize) -> Jet {
        let mut jet = Jet::default();
        if let Layout::Profile { dth, .. } = self.layout {
            let s = |o: i32| self.sample(values, p, 0, [o, 0]);
            let r0 = s(0);
            jet.value = [r0, 0.0];
            jet.df[0][0] = d1(s) / dth;
            jet.df[1][1] = 1.0;
            jet.hess[0][0][0] = d2(s, r0) / (dth * dth);
            return jet;
        }
        let axes = self.grid_axes();
        for comp in 0..self.m() {
            let s = |o: [i32; 2]| self.sample(values, p, comp, o);
            let f0 = s([0, 0]);
            jet.value[comp] = f0;
            for a in 0..axes {
                let h = self.spacing(a);
                let along = |o: i32| s(if a == 0 { [o, 0] } else { [0, o] });
                jet.df[comp][a] = d1(along) / h;
                jet.hess[comp][a][a] = d2(along, f0) / (h * h);
            }
            if axes == 2 {
                let mixed = d1(|oi| d1(|oj| s([oi, oj]))) / (self.spacing(0) * self.spacing(1));
                jet.hess[comp][0][1] = mixed;
                jet.hess[comp][1][0] = mixed;
            }
        }
        jet
    }

    /// Second-order centered gradient of a scalar field at `p` (grid axes only).
    pub(crate) fn scalar_gradient(&self, u: &[f64], p: usize) -> [f64; 2] {
        let mut g = [0.0; 2];
        for (a, ga) in g.iter_mut().enumerate().take(self.grid_axes()) {
            let unit = |o: i32| if a == 0 { [o, 0] } else { [0, o] };
            *ga = (self.sample_scalar(u, p, unit(1)) - self.sample_scalar(u, p, unit(-1)))
                / (2.0 * self.spacing(a));
        }
        g
    }

    /// Neighbor index across the `+1` face along `axis`, or `None` through a pole.
    pub(crate) fn forward_neighbor(&self, p: usize, axis: usize) -> Option<usize> {
        let (i0, i1) = self.split(p);
        match self.layout {
            Layout::Periodic { dims, n, .. } => Some(if axis == 0 {
                let j0 = (i0 + 1) % n[0];
                if dims == 2 {
                    j0 * n[1] + i1
                } else {
                    j0
                }
            } else {
                i0 * n[1] + (i1 + 1) % n[1]
            }),
            Layout::LatLon { nt, np, .. } => {
                if axis == 0 {
                    (i0 + 1 < nt).then(|| (i0 + 1) * np + i1)
                } else {
                    Some(i0 * np + (i1 + 1) % np)
                }
            }
            Layout::Profile { nt, .. } => (i0 + 1 < nt).then_some(i0 + 1),
        }
    }

    /// Neighbor index across the `-1` face along `axis`, or `None` through a pole.
    pub(crate) fn backward_neighbor(&self, p: usize, axis: usize) -> Option<usize> {
        let (i0, i1) = self.split(p);
        match self.layout {
            Layout::Periodic { dims, n, .. } => Some(if axis == 0 {
                let j0 = (i0 + n[0] - 1) % n[0];
                if dims == 2 {
                    j0 * n[1] + i1
                } else {
                    j0
                }
            } else {
                i0 * n[1] + (i1 + n[1] - 1) % n[1]
            }),
            Layout::LatLon { np, .. } => {
                if axis == 0 {
                    (i0 > 0).then(|| (i0 - 1) * np + i1)
                } else {
                    Some(i0 * np + (i1 + np - 1) % np)
                }
            }
            Layout::Profile { .. } => (i0 > 0).then(|| i0 - 1),
        }
    }
}

/// The discretized map `f_t` at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct MapState {
    pub disc: Arc<Discretization>,
    /// Point-major stored components (`len() * stored_components()` entries).
    pub values: Vec<f64>,
    pub time: f64,
}

impl MapState {
    pub fn new(disc: Arc<Discretization>, values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() != disc.len() * disc.stored_components() {
            return Err(Error::config(format!(
                "expected {} values, got {}",
                disc.len() * disc.stored_components(),
                values.len()
            )));
        }
        Ok(Self { disc, values, time })
    }

    /// Builds a state by evaluating `f` at every grid point. For the
    /// equivariant profile `f` receives `(θ, 0)` and returns `[ρ, φ]`.
    pub fn from_fn(disc: Arc<Discretization>, time: f64, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let sc = disc.stored_components();
        let mut values = Vec::with_capacity(disc.len() * sc);
        for p in 0..disc.len() {
            let v = f(disc.point_coords(p));
            values.extend_from_slice(&v[..sc]);
        }
        Self { disc, values, time }
    }

    pub fn jet(&self, p: usize) -> Jet {
        self.disc.jet(&self.values, p)
    }

    pub fn len(&self) -> usize {
        self.disc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.disc.is_empty()
    }

    /// Stored values with periodic target components reduced modulo their periods.
    pub fn reduced_values(&self) -> Vec<f64> {
        let sc = self.disc.stored_components();
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let per = if self.disc.target().is_flat() {
                    self.disc.target_period(i % sc)
                } else {
                    0.0
                };
                if per > 0.0 {
                    v.rem_euclid(per)
                } else {
                    *v
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{PI, TAU};

    fn torus2() -> ManifoldModel {
        ManifoldModel::flat_torus(vec![TAU, TAU]).unwrap()
    }

    #[test]
    fn constant_map_has_zero_jet() {
        let d = Arc::new(Discretization::new(torus2(), torus2(), Mode::FullGrid, vec![8, 8]).unwrap());
        let s = MapState::from_fn(d, 0.0, |_| [1.0, 2.0]);
        for p in 0..s.len() {
            let j = s.jet(p);
            assert_eq!(j.df, [[0.0; 2]; 2]);
            assert_eq!(j.hess, [[[0.0; 2]; 2]; 2]);
        }
    }

    #[test]
    fn linear_torus_map_differential_is_exact() {
        let a = [[2.0, -1.0], [1.0, 3.0]];
        let d = Discretization::new(torus2(), torus2(), Mode::FullGrid, vec![8, 12])
            .unwrap()
            .with_winding(vec![2, -1, 1, 3])
            .unwrap();
        let s = MapState::from_fn(Arc::new(d), 0.0, |x| {
            [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
        });
        for p in 0..s.len() {
            let j = s.jet(p);
            for al in 0..2 {
                for b in 0..2 {
                    assert_abs_diff_eq!(j.df[al][b], a[al][b], epsilon = 1e-12);
                    for c in 0..2 {
                        assert_abs_diff_eq!(j.hess[al][b][c], 0.0, epsilon = 1e-11);
                    }
                }
            }
        }
    }

    #[test]
    fn profile_derivative_at_equator() {
        let s2 = ManifoldModel::round_sphere(1.0).unwrap();
        for nt in [17usize, 33, 65] {
            let d = Arc::new(Discretization::new(s2.clone(), s2.clone(), Mode::Equivariant, vec![nt]).unwrap());
            let st = MapState::from_fn(d.clone(), 0.0, |x| [0.3 * x[0].sin(), 0.0]);
            let mid = nt / 2;
            assert_abs_diff_eq!(d.point_coords(mid)[0], PI / 2.0, epsilon = 1e-14);
            let dth = PI / nt as f64;
            assert!(st.jet(mid).df[0][0].abs() < dth * dth);
            // second derivative -0.3 sin θ everywhere, including next to the poles
            for p in 0..nt {
                let th = d.point_coords(p)[0];
                assert_abs_diff_eq!(st.jet(p).hess[0][0][0], -0.3 * th.sin(), epsilon = 10.0 * dth.powi(4));
                assert_abs_diff_eq!(st.jet(p).df[0][0], 0.3 * th.cos(), epsilon = 10.0 * dth.powi(4));
            }
        }
    }

    #[test]
    fn latlon_ghosts_cross_the_pole() {
        let s2 = ManifoldModel::round_sphere(1.0).unwrap();
        let d = Arc::new(Discretization::new(s2, torus2(), Mode::FullGrid, vec![16, 32]).unwrap());
        // f = (cos θ, sin θ cos φ): restrictions of ambient linear functions.
        let st = MapState::from_fn(d.clone(), 0.0, |x| [x[0].cos(), x[0].sin() * x[1].cos()]);
        let h = PI / 16.0;
        for p in 0..d.len() {
            let [th, ph] = d.point_coords(p);
            let j = st.jet(p);
            assert_abs_diff_eq!(j.df[0][0], -th.sin(), epsilon = h.powi(4));
            assert_abs_diff_eq!(j.df[1][0], th.cos() * ph.cos(), epsilon = h.powi(4));
            assert_abs_diff_eq!(j.hess[1][0][1], -th.cos() * ph.sin(), epsilon = h.powi(4));
        }
    }

    #[test]
    fn odd_phi_count_rejected() {
        let s2 = ManifoldModel::round_sphere(1.0).unwrap();
        assert!(Discretization::new(s2, torus2(), Mode::FullGrid, vec![16, 17]).is_err());
    }

    #[test]
    fn reduced_values_stay_in_period() {
        let d = Discretization::new(torus2(), torus2(), Mode::FullGrid, vec![8, 8])
            .unwrap()
            .with_winding(vec![1, 0, 0, 1])
            .unwrap();
        let s = MapState::from_fn(Arc::new(d), 0.0, |x| [x[0] + 7.0, x[1] - 9.0]);
        assert!(s.reduced_values().iter().all(|v| (0.0..TAU).contains(v)));
    }
}
