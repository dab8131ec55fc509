//! Run configuration files (TOML) and the initial-map families.
//!
//! ```toml
//! mode = "full_grid"            # or "equivariant"
//!
//! [domain]
//! kind = "flat_torus"           # "circle" | "flat_torus" | "round_sphere"
//! periods = [6.283185307179586, 6.283185307179586]
//! resolution = [32, 32]
//!
//! [target]
//! kind = "flat_torus"
//! periods = [6.283185307179586, 6.283185307179586]
//!
//! [initial_map]
//! family = "random_fourier"
//! seed = 1
//! max_mode = 2
//! amplitude = 0.1
//!
//! [flow]
//! dt = "auto"
//! scheme = "ForwardEuler"
//! t_end = 10.0
//! output_stride = 200
//! ```

use std::f64::consts::{PI, TAU};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::io::rescale::RescaleSpec;
use crate::model_spaces::{ManifoldModel, ModelKind};
use crate::monitors::BranchChoice;
use crate::state::{Discretization, MapState, Mode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    Circle,
    FlatTorus,
    RoundSphere,
}

/// A model space entry. Circles and spheres take `radius`, tori take
/// `periods`; `resolution` belongs to the domain only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub kind: SpaceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periods: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Vec<usize>>,
}

impl SpaceSpec {
    pub fn model(&self, which: &str) -> Result<ManifoldModel> {
        let kind = match (self.kind, self.radius, &self.periods) {
            (SpaceKind::Circle, Some(radius), None) => ModelKind::Circle { radius },
            (SpaceKind::RoundSphere, Some(radius), None) => ModelKind::RoundSphere { radius },
            (SpaceKind::FlatTorus, None, Some(p)) => ModelKind::FlatTorus { periods: p.clone() },
            (SpaceKind::FlatTorus, _, _) => {
                return Err(Error::config(format!("{which}: flat_torus takes `periods` and no `radius`")))
            }
            _ => {
                return Err(Error::config(format!(
                    "{which}: circle and round_sphere take `radius` and no `periods`"
                )))
            }
        };
        ManifoldModel::from_kind(kind).map_err(|e| Error::config(format!("{which}: {e}")))
    }

    pub fn flat_torus(periods: Vec<f64>, resolution: Option<Vec<usize>>) -> Self {
        Self { kind: SpaceKind::FlatTorus, radius: None, periods: Some(periods), resolution }
    }

    pub fn round_sphere(radius: f64, resolution: Option<Vec<usize>>) -> Self {
        Self { kind: SpaceKind::RoundSphere, radius: Some(radius), periods: None, resolution }
    }

    pub fn circle(radius: f64, resolution: Option<Vec<usize>>) -> Self {
        Self { kind: SpaceKind::Circle, radius: Some(radius), periods: None, resolution }
    }
}

/// Initial map families. Chart conventions: torus coordinates in `[0, P)`,
/// circle angle in `[0, 2π)`, sphere `(θ, φ)`; in the equivariant mode the
/// family defines the profile `ρ(θ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialMap {
    /// `f ≡ value` (full grid); `ρ ≡ 0` (equivariant).
    Constant {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<Vec<f64>>,
    },
    /// `f(x) = A x` with `A` an `m × n` matrix; `A_{αa} P_a / Q_α` must be integers.
    Linear { matrix: Vec<Vec<f64>> },
    /// `f^α(x) = (A x)^α + amplitudes[α] sin(2π Σ_a wavenumbers[α][a] x_a / P_a)`.
    LinearPlusWave {
        matrix: Vec<Vec<f64>>,
        amplitudes: Vec<f64>,
        wavenumbers: Vec<Vec<i64>>,
    },
    /// Equivariant `ρ = a sin θ`; sphere to flat target `f = (a cos θ, a sin θ cos φ)`.
    Cap { a: f64 },
    /// `ρ = θ` (equivariant, identity class) or the identity of a torus onto itself.
    Identity,
    /// Random trigonometric polynomial with modes up to `max_mode`, coefficient
    /// of mode `k` uniform in `±amplitude/|k|²`.
    RandomFourier { seed: u64, max_mode: usize, amplitude: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Tolerance {
    Value(f64),
    Keyword(AutoKeyword),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::Keyword(AutoKeyword::Auto)
    }
}

impl Tolerance {
    /// The explicit value, or `auto` when unset.
    pub fn resolve(self, auto: f64) -> f64 {
        match self {
            Tolerance::Value(v) => v,
            Tolerance::Keyword(_) => auto,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorsConfig {
    /// Drift budget of the monotonicity check; `auto` is `10 · dt · h²`.
    #[serde(default)]
    pub monotone_tol: Tolerance,
    /// Slack on `min_s2_eig > −tol`; `auto` is 0.
    #[serde(default)]
    pub area_tol: Tolerance,
    /// Slack of the decay envelope; `auto` equals the monotone budget.
    #[serde(default)]
    pub decay_tol: Tolerance,
    #[serde(default)]
    pub decay_branch: BranchChoice,
    /// Fill the `residual_linf` column (needs the states next to each snapshot).
    #[serde(default)]
    pub residual: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Json]
}

fn default_directory() -> String {
    "gmcf-out".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_directory")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: default_directory(), formats: default_formats() }
    }
}

/// Refinement ladder for the `residual` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualConfig {
    /// Number of resolutions, each doubling the previous one per axis.
    pub levels: usize,
    /// Time of the snapshot where the residual is evaluated.
    pub snapshot_time: f64,
    /// Step size at the base level, divided by 4 per level. Defaults to the
    /// fixed `flow.dt`, or the stable step of the base initial state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_base: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub domain: SpaceSpec,
    pub target: SpaceSpec,
    pub initial_map: InitialMap,
    pub flow: FlowConfig,
    #[serde(default)]
    pub monitors: MonitorsConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<ResidualConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rescale: Option<RescaleSpec>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.flow.validate()?;
        self.discretization()?;
        if let Some(r) = &self.rescale {
            r.validate()?;
        }
        if let Some(r) = &self.residual {
            if r.levels < 2 {
                return Err(Error::config(format!(
                    "residual.levels must be at least 2, got {}",
                    r.levels
                )));
            }
            if !(r.snapshot_time > 0.0 && r.snapshot_time.is_finite()) {
                return Err(Error::config("residual.snapshot_time must be positive"));
            }
            if r.dt_base.is_some_and(|dt| !(dt > 0.0 && dt.is_finite())) {
                return Err(Error::config("residual.dt_base must be positive"));
            }
        }
        Ok(())
    }

    /// Models after the optional metric rescaling.
    pub fn models(&self) -> Result<(ManifoldModel, ManifoldModel)> {
        let dom = self.domain.model("domain")?;
        let tar = self.target.model("target")?;
        match &self.rescale {
            Some(r) => r.apply(dom, tar),
            None => Ok((dom, tar)),
        }
    }

    pub fn resolution(&self) -> Result<Vec<usize>> {
        if self.target.resolution.is_some() {
            return Err(Error::config("target: `resolution` belongs to the domain"));
        }
        self.domain
            .resolution
            .clone()
            .ok_or_else(|| Error::config("domain: missing `resolution`"))
    }

    pub fn discretization(&self) -> Result<Discretization> {
        self.discretization_at(&self.resolution()?)
    }

    /// Same problem on a different grid.
    pub fn discretization_at(&self, resolution: &[usize]) -> Result<Discretization> {
        let (dom, tar) = self.models()?;
        let disc = Discretization::new(dom, tar, self.mode, resolution.to_vec())?;
        let (winding, pole) = family_topology(&self.initial_map, &disc)?;
        disc.with_winding(winding).map(|d| d.with_pole_value(pole))
    }

    pub fn initial_state(&self) -> Result<MapState> {
        self.initial_state_at(&self.resolution()?)
    }

    pub fn initial_state_at(&self, resolution: &[usize]) -> Result<MapState> {
        let disc = Arc::new(self.discretization_at(resolution)?);
        build_initial(&self.initial_map, disc)
    }
}

fn check_matrix(matrix: &[Vec<f64>], m: usize, n: usize) -> Result<()> {
    if matrix.len() != m || matrix.iter().any(|row| row.len() != n) {
        return Err(Error::config(format!(
            "initial_map.matrix must be {m} × {n} (target dim × domain dim)"
        )));
    }
    Ok(())
}

/// Winding matrix and equivariant pole value implied by a family.
fn family_topology(map: &InitialMap, disc: &Discretization) -> Result<(Vec<i64>, f64)> {
    let (n, m) = (disc.n(), disc.m());
    let zero = vec![0i64; n * m];
    let equi = disc.mode() == Mode::Equivariant;
    let linear_part: Option<Vec<Vec<f64>>> = match map {
        InitialMap::Linear { matrix } | InitialMap::LinearPlusWave { matrix, .. } => Some(matrix.clone()),
        InitialMap::Identity if !equi => {
            if n != m || !disc.domain().is_flat() || disc.domain() != disc.target() {
                return Err(Error::config(
                    "identity in full-grid mode needs the same flat torus as domain and target",
                ));
            }
            Some((0..m).map(|a| (0..n).map(|b| if a == b { 1.0 } else { 0.0 }).collect()).collect())
        }
        _ => None,
    };
    if equi {
        return match map {
            InitialMap::Constant { .. } | InitialMap::Cap { .. } | InitialMap::RandomFourier { .. } => Ok((zero, 0.0)),
            InitialMap::Identity => Ok((zero, PI)),
            _ => Err(Error::config(
                "equivariant mode supports the constant, cap, identity and random_fourier families",
            )),
        };
    }
    let Some(matrix) = linear_part else {
        return Ok((zero, 0.0));
    };
    check_matrix(&matrix, m, n)?;
    if !disc.domain().is_flat() {
        return Err(Error::config("linear families need a circle or flat torus domain"));
    }
    let mut winding = zero;
    for al in 0..m {
        for a in 0..n {
            let p = disc.domain().period(a).expect("periodic domain");
            let q = disc.target().period(al).expect("periodic target");
            let w = matrix[al][a] * p / q;
            if (w - w.round()).abs() > 1e-9 {
                return Err(Error::config(format!(
                    "initial_map.matrix[{al}][{a}] = {} does not descend to the torus: entry × domain period / target period = {w} is not an integer",
                    matrix[al][a]
                )));
            }
            winding[al * n + a] = w.round() as i64;
        }
    }
    Ok((winding, 0.0))
}

/// Fourier modes `k ∈ [−K, K]^n \ {0}` in lexicographic order.
fn modes(n: usize, max_mode: usize) -> Vec<Vec<i64>> {
    let k = max_mode as i64;
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<i64>| {
                (-k..=k).map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out.retain(|v| v.iter().any(|x| *x != 0));
    out
}

fn build_initial(map: &InitialMap, disc: Arc<Discretization>) -> Result<MapState> {
    let (n, m) = (disc.n(), disc.m());
    let equi = disc.mode() == Mode::Equivariant;
    let dom = disc.domain().clone();
    let sphere_domain = dom.is_sphere();
    let periods: Vec<f64> = (0..n).map(|a| dom.period(a).unwrap_or(TAU)).collect();
    match map {
        InitialMap::Constant { value } => {
            let v = match (value, equi) {
                (None, _) => vec![0.0; m],
                (Some(v), false) if v.len() == m => v.clone(),
                (Some(v), true) if v.iter().all(|x| *x == 0.0) => vec![0.0; m],
                (Some(_), true) => {
                    return Err(Error::config("equivariant constant maps are ρ ≡ 0; drop `value`"))
                }
                (Some(v), false) => {
                    return Err(Error::config(format!(
                        "initial_map.value needs {m} entries, got {}",
                        v.len()
                    )))
                }
            };
            Ok(MapState::from_fn(disc, 0.0, move |_| [v[0], v.get(1).copied().unwrap_or(0.0)]))
        }
        InitialMap::Linear { matrix } => {
            let a = matrix.clone();
            Ok(MapState::from_fn(disc, 0.0, move |x| linear(&a, &x, n, m)))
        }
        InitialMap::Identity if !equi => Ok(MapState::from_fn(disc, 0.0, |x| x)),
        InitialMap::Identity => Ok(MapState::from_fn(disc, 0.0, |x| [x[0], 0.0])),
        InitialMap::LinearPlusWave { matrix, amplitudes, wavenumbers } => {
            if amplitudes.len() != m || wavenumbers.len() != m || wavenumbers.iter().any(|w| w.len() != n) {
                return Err(Error::config(format!(
                    "initial_map needs {m} amplitudes and {m} wavenumber vectors of length {n}"
                )));
            }
            let (a, amp, wn) = (matrix.clone(), amplitudes.clone(), wavenumbers.clone());
            Ok(MapState::from_fn(disc, 0.0, move |x| {
                let mut v = linear(&a, &x, n, m);
                for al in 0..m {
                    let phase: f64 = (0..n).map(|b| TAU * wn[al][b] as f64 * x[b] / periods[b]).sum();
                    v[al] += amp[al] * phase.sin();
                }
                v
            }))
        }
        InitialMap::Cap { a } => {
            let a = *a;
            if equi {
                Ok(MapState::from_fn(disc, 0.0, move |x| [a * x[0].sin(), 0.0]))
            } else if sphere_domain {
                Ok(MapState::from_fn(disc, 0.0, move |x| {
                    [a * x[0].cos(), a * x[0].sin() * x[1].cos()]
                }))
            } else {
                Err(Error::config("the cap family needs a sphere domain"))
            }
        }
        InitialMap::RandomFourier { seed, max_mode, amplitude } => {
            if *max_mode == 0 {
                return Err(Error::config("random_fourier.max_mode must be at least 1"));
            }
            if sphere_domain && !equi {
                return Err(Error::config(
                    "random_fourier needs a periodic domain (or the equivariant mode)",
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let amp = *amplitude;
            if equi {
                let coeffs: Vec<f64> = (1..=*max_mode)
                    .map(|l| amp * rng.random_range(-1.0..=1.0) / (l * l) as f64)
                    .collect();
                return Ok(MapState::from_fn(disc, 0.0, move |x| {
                    let rho = coeffs
                        .iter()
                        .enumerate()
                        .map(|(i, c)| c * ((i + 1) as f64 * x[0]).sin())
                        .sum();
                    [rho, 0.0]
                }));
            }
            let ks = modes(n, *max_mode);
            // (α, k, cos coefficient, sin coefficient)
            let mut terms = Vec::new();
            for al in 0..m {
                for k in &ks {
                    let k2: i64 = k.iter().map(|v| v * v).sum();
                    let c = amp * rng.random_range(-1.0..=1.0) / k2 as f64;
                    let s = amp * rng.random_range(-1.0..=1.0) / k2 as f64;
                    terms.push((al, k.clone(), c, s));
                }
            }
            Ok(MapState::from_fn(disc, 0.0, move |x| {
                let mut v = [0.0; 2];
                for (al, k, c, s) in &terms {
                    let phase: f64 = (0..n).map(|b| TAU * k[b] as f64 * x[b] / periods[b]).sum();
                    let (sn, cs) = phase.sin_cos();
                    v[*al] += c * cs + s * sn;
                }
                v
            }))
        }
    }
}

fn linear(a: &[Vec<f64>], x: &[f64; 2], n: usize, m: usize) -> [f64; 2] {
    let mut v = [0.0; 2];
    for al in 0..m {
        v[al] = (0..n).map(|b| a[al][b] * x[b]).sum();
    }
    v
}
