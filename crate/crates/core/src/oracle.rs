//! Randomized verification of the pointwise algebraic inequalities behind the
//! long-time existence and convergence arguments.
//!
//! Each check samples singular values from its constraint set, a second
//! fundamental form with entries uniform in `[-h_scale, h_scale]`, and
//! sectional curvatures per frame pair within the curvature hypotheses
//! (`K₁ ∈ [k₁, k₁ + spread]`, `K₂ ∈ [k₂ − spread, k₂]`). It evaluates the
//! final inequality and every intermediate step of its chain as margins
//! `LHS − RHS`. After uniform sampling, a heavy-tail pass rescales `h` by
//! 10³ (margins divided by the scale squared), and a coordinate hill climb
//! starts from the 100 worst samples.
//!
//! Batches draw from independent ChaCha streams keyed by the seed and the
//! batch index and are merged in batch order, so reports are reproducible
//! bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{s_tensor, term_i, term_ii_with, SecondFundamentalForm};

/// Violation tolerance: the inequalities are exact, this covers rounding.
pub const TOLERANCE: f64 = -1e-12;
/// Largest dimension accepted by the oracle.
pub const MAX_ORACLE_DIM: usize = 8;
const BATCH: usize = 8192;
const WORST_KEPT: usize = 100;
const VIOLATIONS_LISTED: usize = 20;
const HEAVY_SCALE: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LambdaConstraint {
    /// `Π(1 + λ_i²) ≤ 4 − ε`.
    DetRatioBelow,
    /// `λ_i λ_j ≤ 1 − ε` for `i ≠ j`.
    PairProductBelow,
    /// `λ₁ ≥ … ≥ λ_n ≥ 0`, `λ₁λ₂ < 1`, `λ_i < 1` for `i ≥ 2`.
    Thm2NullConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleDomain {
    pub n: usize,
    pub m: usize,
    pub lambda_constraint: LambdaConstraint,
    pub epsilon: f64,
    #[serde(default = "one")]
    pub h_scale: f64,
    pub k1: f64,
    pub k2: f64,
    /// Width of the sampled curvature ranges beyond the bounds.
    #[serde(default = "one")]
    pub curvature_spread: f64,
    pub sample_count: usize,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl SampleDomain {
    pub fn new(n: usize, m: usize, lambda_constraint: LambdaConstraint, epsilon: f64, k1: f64, k2: f64) -> Self {
        Self {
            n,
            m,
            lambda_constraint,
            epsilon,
            h_scale: 1.0,
            k1,
            k2,
            curvature_spread: 1.0,
            sample_count: 1000,
            seed: 0,
        }
    }

    pub fn with_samples(mut self, sample_count: usize, seed: u64) -> Self {
        self.sample_count = sample_count;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.n > MAX_ORACLE_DIM || self.m > MAX_ORACLE_DIM {
            return Err(Error::config(format!(
                "oracle dimensions must lie in 1..={MAX_ORACLE_DIM}, got n = {}, m = {}",
                self.n, self.m
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 3.0) {
            return Err(Error::config(format!(
                "epsilon must lie in (0, 3), got {}",
                self.epsilon
            )));
        }
        if self.lambda_constraint == LambdaConstraint::PairProductBelow && self.epsilon >= 1.0 {
            return Err(Error::config(format!(
                "PairProductBelow needs epsilon < 1, got {}",
                self.epsilon
            )));
        }
        if self.sample_count == 0 {
            return Err(Error::config("sample_count must be at least 1"));
        }
        if !(self.h_scale > 0.0 && self.h_scale.is_finite()) {
            return Err(Error::config(format!("h_scale must be positive, got {}", self.h_scale)));
        }
        if !(self.curvature_spread >= 0.0 && self.curvature_spread.is_finite()) {
            return Err(Error::config("curvature_spread must be finite and ≥ 0"));
        }
        let branch_ok = self.k1 >= 0.0 && (self.k2 <= 0.0 || self.k1 >= self.k2);
        if !branch_ok {
            return Err(Error::config(format!(
                "curvature bounds need k1 ≥ 0 and either k2 ≤ 0 or k1 ≥ k2 > 0, got k1 = {}, k2 = {}",
                self.k1, self.k2
            )));
        }
        Ok(())
    }

    fn rank(&self) -> usize {
        self.n.min(self.m)
    }

    /// Branch label: (a) for `k₂ ≤ 0`, (b) for `k₁ ≥ k₂ > 0`.
    pub fn branch(&self) -> Branch {
        if self.k2 <= 0.0 {
            Branch::A
        } else {
            Branch::B
        }
    }

    /// Whether `lambda` lies in the constraint set.
    pub fn admits(&self, lambda: &[f64]) -> bool {
        admits(self.lambda_constraint, self.epsilon, lambda)
    }
}

fn admits(c: LambdaConstraint, eps: f64, lambda: &[f64]) -> bool {
    if lambda.iter().any(|l| !(*l >= 0.0)) || lambda.windows(2).any(|w| w[0] < w[1]) {
        return false;
    }
    match c {
        LambdaConstraint::DetRatioBelow => {
            lambda.iter().map(|l| 1.0 + l * l).product::<f64>() <= 4.0 - eps
        }
        LambdaConstraint::PairProductBelow => {
            lambda.len() < 2 || lambda[0] * lambda[1] <= 1.0 - eps
        }
        LambdaConstraint::Thm2NullConfig => {
            lambda.len() < 2 || (lambda[0] * lambda[1] < 1.0 && lambda[1] < 1.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    A,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckName {
    #[serde(rename = "I_geq_deltaA2")]
    IGeqDeltaA2,
    #[serde(rename = "II_nonneg")]
    IINonneg,
    #[serde(rename = "II_lower_bound")]
    IILowerBound,
    #[serde(rename = "thm2_termI")]
    Thm2TermI,
    #[serde(rename = "thm2_termII_probe")]
    Thm2TermIIProbe,
}

impl CheckName {
    pub fn label(self) -> &'static str {
        match self {
            CheckName::IGeqDeltaA2 => "I_geq_deltaA2",
            CheckName::IINonneg => "II_nonneg",
            CheckName::IILowerBound => "II_lower_bound",
            CheckName::Thm2TermI => "thm2_termI",
            CheckName::Thm2TermIIProbe => "thm2_termII_probe",
        }
    }

    /// Whether violations of this check count as failures.
    pub fn asserting(self) -> bool {
        self != CheckName::Thm2TermIIProbe
    }

    fn depends_on_h(self) -> bool {
        matches!(self, CheckName::IGeqDeltaA2 | CheckName::Thm2TermIIProbe)
    }
}

/// One random draw: singular values, second fundamental form and the
/// sectional curvatures of the frame planes (`k_dom[k * n + i]` for
/// `span(a_k, a_i)`, `k_tar` likewise for the target frame).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub lambda: Vec<f64>,
    /// `h^{n+q}_{ij}` flattened as `[q][i][j]`.
    pub h: Vec<f64>,
    pub k_dom: Vec<f64>,
    pub k_tar: Vec<f64>,
}

impl Sample {
    fn sff(&self, n: usize, m: usize) -> SecondFundamentalForm {
        let mut s = SecondFundamentalForm::zeros(n, m);
        for q in 0..m {
            for i in 0..n {
                for j in i..n {
                    s.set_sym(q, i, j, self.h[(q * n + i) * n + j]);
                }
            }
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub step: String,
    pub margin: f64,
    pub sample: Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub name: String,
    /// False for steps evaluated for information only.
    pub asserted: bool,
    pub worst_margin: f64,
    pub violation_count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub check: String,
    pub branch: Branch,
    pub asserting: bool,
    pub checked: u64,
    pub worst_margin: f64,
    pub violation_count: u64,
    /// First violations in evaluation order (capped).
    pub violations: Vec<Violation>,
    pub identity_max_err: f64,
    pub steps: Vec<StepReport>,
    pub heavy_tail_worst_margin: Option<f64>,
    pub hill_climb_worst_margin: f64,
    pub c0: Option<f64>,
}

impl ViolationReport {
    /// Asserting check with no violations.
    pub fn passed(&self) -> bool {
        !self.asserting || self.violation_count == 0
    }
}

struct Eval {
    main: f64,
    steps: Vec<f64>,
    identity_err: f64,
}

struct StepSpec {
    name: &'static str,
    asserted: bool,
}

const fn step(name: &'static str, asserted: bool) -> StepSpec {
    StepSpec { name, asserted }
}

fn step_specs(check: CheckName, branch: Branch) -> &'static [StepSpec] {
    use Branch::*;
    use CheckName::*;
    const I_STEPS: &[StepSpec] = &[
        step("pair_product_below_one_minus_delta", true),
        step("drop_diagonal_and_bound_cross_terms", true),
        step("complete_squares", true),
        step("drop_squares", true),
    ];
    const II_A: &[StepSpec] = &[step("curvature_bounds", true), step("bounded_sum_nonneg", true)];
    const II_B: &[StepSpec] = &[
        step("curvature_bounds", true),
        step("replace_k1_by_k2", true),
        step("pair_sum_nonneg", true),
    ];
    const LB_A: &[StepSpec] = &[
        step("curvature_bounds", true),
        step("drop_target_curvature", true),
        step("pair_weight_at_least_quarter", true),
        step("lambda_sq_geq_log", true),
    ];
    const LB_B: &[StepSpec] = &[
        step("curvature_bounds", true),
        step("replace_k2_by_k1", true),
        step("pair_product_below_one_minus_eps_quarter", true),
        step("pair_numerator_geq_eps_quarter", true),
        step("pair_weight_at_least_quarter", true),
        step("lambda_sq_geq_log", true),
    ];
    const T2_A: &[StepSpec] = &[step("curvature_bounds", true), step("bounded_sum_nonneg", true)];
    const T2_B: &[StepSpec] = &[
        step("curvature_bounds", true),
        step("replace_k2_by_k1", true),
        step("pair_terms_over_cube_bound", false),
        step("pair_terms_nonneg", true),
        step("tail_terms_nonneg", true),
        step("final_bound_nonneg", true),
    ];
    const PROBE: &[StepSpec] = &[];
    match (check, branch) {
        (IGeqDeltaA2, _) => I_STEPS,
        (IINonneg, A) => II_A,
        (IINonneg, B) => II_B,
        (IILowerBound, A) => LB_A,
        (IILowerBound, B) => LB_B,
        (Thm2TermI, A) => T2_A,
        (Thm2TermI, B) => T2_B,
        (Thm2TermIIProbe, _) => PROBE,
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn sort_desc(v: &mut [f64]) {
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
}

/// Scales `lambda` so that `Π(1 + s²λ_i²)` equals `target`.
fn scale_to_product(lambda: &mut [f64], target: f64) {
    if lambda.iter().all(|l| *l == 0.0) {
        return;
    }
    let prod = |s: f64| lambda.iter().map(|l| 1.0 + s * s * l * l).product::<f64>();
    let (mut lo, mut hi) = (0.0, 1.0);
    while prod(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if prod(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lambda.iter_mut().for_each(|l| *l *= lo);
}

fn sample_lambda(check: CheckName, dom: &SampleDomain, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (n, r, eps) = (dom.n, dom.rank(), dom.epsilon);
    loop {
        let mut lam = vec![0.0; n];
        let mode = rng.random::<f64>();
        let near_boundary = mode < 0.3;
        match (check, dom.lambda_constraint) {
            (CheckName::Thm2TermIIProbe, _) => {
                // λ₁λ₂ = 1 exactly
                if r >= 2 {
                    let l2 = uniform(rng, 0.05, 1.0);
                    lam[1] = l2;
                    lam[0] = 1.0 / l2;
                    for l in lam.iter_mut().take(r).skip(2) {
                        *l = uniform(rng, 0.0, l2);
                    }
                }
            }
            (_, LambdaConstraint::DetRatioBelow) => {
                let top = (3.0 - eps).sqrt();
                if (0.3..0.4).contains(&mode) {
                    let v = uniform(rng, 0.0, top);
                    lam.iter_mut().take(r).for_each(|l| *l = v);
                } else {
                    lam.iter_mut().take(r).for_each(|l| *l = uniform(rng, 0.0, top));
                }
                if mode < 0.4 {
                    let target = (4.0 - eps) * (1.0 - 1e-9 * rng.random::<f64>());
                    scale_to_product(&mut lam[..r], target);
                }
            }
            (_, LambdaConstraint::PairProductBelow) => {
                lam.iter_mut().take(r).for_each(|l| *l = uniform(rng, 0.0, 3.0));
                sort_desc(&mut lam);
                let bound = 1.0 - eps;
                if r >= 2 && (lam[0] * lam[1] > bound || near_boundary) {
                    let u = if near_boundary {
                        1.0 - 1e-9 * rng.random::<f64>()
                    } else {
                        rng.random::<f64>()
                    };
                    let s = bound * u / (lam[0] * lam[1]).max(f64::MIN_POSITIVE);
                    if s < 1.0 || near_boundary {
                        lam[1..].iter_mut().for_each(|l| *l *= s);
                    }
                }
            }
            (_, LambdaConstraint::Thm2NullConfig) => {
                if r >= 2 {
                    let l2 = rng.random::<f64>();
                    let cap = if l2 > 0.1 { 1.0 / l2 } else { 10.0 };
                    lam[1] = l2;
                    lam[0] = if near_boundary {
                        (cap * (1.0 - 1e-9 * rng.random::<f64>())).max(l2)
                    } else {
                        uniform(rng, l2, cap)
                    };
                    for l in lam.iter_mut().take(r).skip(2) {
                        *l = uniform(rng, 0.0, l2);
                    }
                } else {
                    lam[0] = uniform(rng, 0.0, 10.0);
                }
            }
        }
        sort_desc(&mut lam);
        let ok = if check == CheckName::Thm2TermIIProbe {
            true
        } else {
            dom.admits(&lam)
        };
        if ok {
            return lam;
        }
    }
}

fn sample_curvatures(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = uniform(rng, lo, hi);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

fn draw(check: CheckName, dom: &SampleDomain, rng: &mut ChaCha8Rng) -> Sample {
    let (n, m) = (dom.n, dom.m);
    let lambda = sample_lambda(check, dom, rng);
    let mut h = vec![0.0; m * n * n];
    for q in 0..m {
        for i in 0..n {
            for j in i..n {
                h[(q * n + i) * n + j] = uniform(rng, -dom.h_scale, dom.h_scale);
            }
        }
    }
    let k_dom = sample_curvatures(n, dom.k1, dom.k1 + dom.curvature_spread, rng);
    let k_tar = sample_curvatures(n, dom.k2 - dom.curvature_spread, dom.k2, rng);
    Sample { lambda, h, k_dom, k_tar }
}

/// `c₀` of the curvature lower bound `II ≥ c₀ Σ ln(1+λ_i²)`.
pub fn lower_bound_c0(dom: &SampleDomain) -> f64 {
    let base = dom.k1 * (dom.n as f64 - 1.0);
    match dom.branch() {
        Branch::A => base / 4.0,
        Branch::B => dom.epsilon * base / 16.0,
    }
}

fn pair_weight(l: &[f64], i: usize, k: usize) -> f64 {
    1.0 / ((1.0 + l[i] * l[i]) * (1.0 + l[k] * l[k]))
}

/// `Σ_{i,k≠i} w_ik (λ_i² a − λ_i²λ_k² b)` with constant `a`, `b`.
fn curvature_sum(l: &[f64], a: f64, b: f64) -> f64 {
    term_ii_with(l, |_, _| a, |_, _| b)
}

fn eval_i_geq_delta_a2(dom: &SampleDomain, s: &Sample) -> Eval {
    let (n, m) = (dom.n, dom.m);
    let r = dom.rank();
    let l = &s.lambda;
    let sff = s.sff(n, m);
    let delta = dom.epsilon / 8.0;
    let a2 = sff.norm_sq();
    let ti = term_i(l, &sff);
    let mut worst_pair_margin = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            worst_pair_margin = worst_pair_margin.min((1.0 - delta) - l[i] * l[j]);
        }
    }
    // (1−δ) Σ_{i≤r,j,k} (h^{n+i}_{jk})² − 2(1−δ) Σ_{k,i<j≤r} |h^{n+i}_{jk} h^{n+j}_{ik}|
    let mut sq = 0.0;
    for i in 0..r {
        for j in 0..n {
            for k in 0..n {
                sq += sff.get(i, j, k).powi(2);
            }
        }
    }
    let mut cross = 0.0;
    let mut squares = 0.0;
    for k in 0..n {
        for i in 0..r {
            for j in i + 1..r {
                let (x, y) = (sff.get(i, j, k), sff.get(j, i, k));
                cross += (x * y).abs();
                squares += (x.abs() - y.abs()).powi(2);
            }
        }
    }
    let rhs1 = delta * a2 + (1.0 - delta) * sq - 2.0 * (1.0 - delta) * cross;
    let rhs2 = delta * a2 + (1.0 - delta) * squares;
    let rhs3 = delta * a2;
    Eval {
        main: ti - delta * a2,
        steps: vec![
            if worst_pair_margin.is_finite() { worst_pair_margin } else { 0.0 },
            ti - rhs1,
            rhs1 - rhs2,
            rhs2 - rhs3,
        ],
        identity_err: 0.0,
    }
}

fn eval_ii_nonneg(dom: &SampleDomain, s: &Sample) -> Eval {
    let n = dom.n;
    let l = &s.lambda;
    let ii = term_ii_with(l, |k, i| s.k_dom[k * n + i], |k, i| s.k_tar[k * n + i]);
    let bounded = curvature_sum(l, dom.k1, dom.k2);
    let mut identity_err: f64 = 0.0;
    let steps = match dom.branch() {
        Branch::A => vec![ii - bounded, bounded],
        Branch::B => {
            // Σ_{i,k≠i} (λ_i² − λ_i²λ_k²) w_ik k₂ = Σ_{i<k} (λ_i² + λ_k² − 2λ_i²λ_k²) w_ik k₂
            let replaced = curvature_sum(l, dom.k2, dom.k2);
            let mut pair_sum = 0.0;
            for i in 0..n {
                for k in i + 1..n {
                    let (a, b) = (l[i], l[k]);
                    let lhs = a * a + b * b - 2.0 * a * a * b * b;
                    let rhs = (a - b).powi(2) + 2.0 * a * b * (1.0 - a * b);
                    identity_err = identity_err.max((lhs - rhs).abs());
                    pair_sum += rhs * pair_weight(l, i, k) * dom.k2;
                }
            }
            identity_err = identity_err.max((replaced - pair_sum).abs());
            vec![ii - bounded, bounded - replaced, pair_sum]
        }
    };
    Eval { main: ii, steps, identity_err }
}

fn eval_ii_lower_bound(dom: &SampleDomain, s: &Sample) -> Eval {
    let n = dom.n;
    let l = &s.lambda;
    let c0 = lower_bound_c0(dom);
    let ii = term_ii_with(l, |k, i| s.k_dom[k * n + i], |k, i| s.k_tar[k * n + i]);
    let bounded = curvature_sum(l, dom.k1, dom.k2);
    let sum_sq: f64 = l.iter().map(|x| x * x).sum();
    let sum_log: f64 = l.iter().map(|x| (x * x).ln_1p()).sum();
    let mut min_weight_margin = f64::INFINITY;
    for i in 0..n {
        for k in i + 1..n {
            min_weight_margin = min_weight_margin.min(pair_weight(l, i, k) - 0.25);
        }
    }
    let min_weight_margin = if min_weight_margin.is_finite() { min_weight_margin } else { 0.0 };
    let k1 = dom.k1;
    let nm1 = n as f64 - 1.0;
    let mut identity_err: f64 = 0.0;
    let steps = match dom.branch() {
        Branch::A => {
            let dropped = curvature_sum(l, k1, 0.0);
            vec![
                ii - bounded,
                bounded - dropped,
                // Σ_{i,k≠i} λ_i² w_ik k₁ ≥ k₁(n−1)/4 Σ λ_i²
                dropped - k1 * nm1 / 4.0 * sum_sq,
                c0 * (sum_sq - sum_log),
            ]
        }
        Branch::B => {
            let eps = dom.epsilon;
            let replaced = curvature_sum(l, k1, k1);
            let mut pair_margin = f64::INFINITY;
            let mut numer_margin = f64::INFINITY;
            let mut weighted = 0.0;
            for i in 0..n {
                for k in i + 1..n {
                    let (a, b) = (l[i], l[k]);
                    pair_margin = pair_margin.min(1.0 - eps / 4.0 - a * b);
                    let lhs = a * a + b * b - 2.0 * a * a * b * b;
                    let rhs = a * b * (a - b).powi(2) + (1.0 - a * b) * (a * a + b * b);
                    identity_err = identity_err.max((lhs - rhs).abs());
                    numer_margin = numer_margin.min(rhs - eps / 4.0 * (a * a + b * b));
                    weighted += eps / 4.0 * (a * a + b * b) * pair_weight(l, i, k) * k1;
                }
            }
            let fin = |x: f64| if x.is_finite() { x } else { 0.0 };
            let quarter = eps * k1 / 16.0 * nm1 * sum_sq;
            vec![
                ii - bounded,
                bounded - replaced,
                fin(pair_margin),
                fin(numer_margin),
                fin(min_weight_margin).min(weighted - quarter),
                c0 * (sum_sq - sum_log),
            ]
        }
    };
    Eval {
        main: ii - c0 * sum_log,
        steps,
        identity_err,
    }
}

/// The curvature term at the null configuration: frame indices 0 and 1.
fn thm2_term_i_with(l: &[f64], kd: impl Fn(usize, usize) -> f64, kt: impl Fn(usize, usize) -> f64) -> f64 {
    let n = l.len();
    let mut acc = 0.0;
    for j in 0..2.min(n) {
        let lj2 = l[j] * l[j];
        for k in (0..n).filter(|k| *k != j) {
            let lk2 = l[k] * l[k];
            let w = 2.0 / ((1.0 + lk2) * (1.0 + lj2).powi(2));
            acc += w * (lj2 * kd(k, j) - lk2 * lj2 * kt(k, j));
        }
    }
    acc
}

fn eval_thm2_term_i(dom: &SampleDomain, s: &Sample) -> Eval {
    let n = dom.n;
    let l = &s.lambda;
    let full = thm2_term_i_with(l, |k, j| s.k_dom[k * n + j], |k, j| s.k_tar[k * n + j]);
    let bounded = thm2_term_i_with(l, |_, _| dom.k1, |_, _| dom.k2);
    let mut identity_err: f64 = 0.0;
    let steps = match dom.branch() {
        Branch::A => vec![full - bounded, bounded],
        Branch::B => {
            let k1 = dom.k1;
            let replaced = thm2_term_i_with(l, |_, _| k1, |_, _| k1);
            let (a, b) = (l[0], if n > 1 { l[1] } else { 0.0 });
            let (a2, b2) = (a * a, b * b);
            let pair = 2.0 * a2 * (1.0 - b2) / ((1.0 + b2) * (1.0 + a2).powi(2))
                + 2.0 * b2 * (1.0 - a2) / ((1.0 + a2) * (1.0 + b2).powi(2));
            let pair_exact = 2.0 * (a2 + b2) * (1.0 - a2 * b2) / ((1.0 + a2).powi(2) * (1.0 + b2).powi(2));
            identity_err = identity_err.max((pair - pair_exact).abs());
            let cube = (2.0 * a2 + 2.0 * b2 - 4.0 * a2 * b2) / (1.0 + a2).powi(3);
            let cube_rewritten = (2.0 * (a - b).powi(2) + 4.0 * a * b * (1.0 - a * b)) / (1.0 + a2).powi(3);
            identity_err = identity_err.max((cube - cube_rewritten).abs());
            let mut tail = 0.0;
            for k in 2..n {
                let lk2 = l[k] * l[k];
                tail += 2.0 * a2 * (1.0 - lk2) / ((1.0 + lk2) * (1.0 + a2).powi(2))
                    + 2.0 * b2 * (1.0 - lk2) / ((1.0 + lk2) * (1.0 + b2).powi(2));
            }
            identity_err = identity_err.max((replaced - k1 * (pair + tail)).abs());
            vec![
                full - bounded,
                bounded - replaced,
                k1 * (pair - cube),
                k1 * pair_exact,
                k1 * tail,
                k1 * cube_rewritten,
            ]
        }
    };
    Eval { main: full, steps, identity_err }
}

/// Full `S = g ⊕ (−h)` in the adapted frame `E_1 … E_{n+m}`.
fn s_matrix(l: &[f64], n: usize, m: usize) -> Vec<Vec<f64>> {
    let r = n.min(m);
    let st = s_tensor(&l[..r]);
    let mut s = vec![vec![0.0; n + m]; n + m];
    for i in 0..n {
        s[i][i] = if i < r { st.b[i] } else { 1.0 };
    }
    for q in 0..m {
        s[n + q][n + q] = if q < r { -st.b[q] } else { -1.0 };
    }
    for i in 0..r {
        s[i][n + i] = st.d[i];
        s[n + i][i] = st.d[i];
    }
    s
}

fn eval_thm2_term_ii(dom: &SampleDomain, s: &Sample) -> Eval {
    let (n, m) = (dom.n, dom.m);
    let sm = s_matrix(&s.lambda, n, m);
    let sff = s.sff(n, m);
    let mut ii = 0.0;
    for a in 0..2.min(n) {
        for al in 0..m {
            for k in 0..n {
                for j in 0..n {
                    ii += 2.0 * sff.get(al, k, j) * sff.get(al, k, a) * sm[j][a];
                }
                for be in 0..m {
                    ii -= 2.0 * sff.get(al, k, a) * sff.get(be, k, a) * sm[n + al][n + be];
                }
            }
        }
    }
    Eval { main: ii, steps: vec![], identity_err: 0.0 }
}

fn evaluate(check: CheckName, dom: &SampleDomain, s: &Sample) -> Eval {
    match check {
        CheckName::IGeqDeltaA2 => eval_i_geq_delta_a2(dom, s),
        CheckName::IINonneg => eval_ii_nonneg(dom, s),
        CheckName::IILowerBound => eval_ii_lower_bound(dom, s),
        CheckName::Thm2TermI => eval_thm2_term_i(dom, s),
        CheckName::Thm2TermIIProbe => eval_thm2_term_ii(dom, s),
    }
}

fn require(check: CheckName, dom: &SampleDomain) -> Result<()> {
    dom.validate()?;
    let want = match check {
        CheckName::IGeqDeltaA2 | CheckName::IILowerBound => LambdaConstraint::DetRatioBelow,
        CheckName::IINonneg => LambdaConstraint::PairProductBelow,
        CheckName::Thm2TermI | CheckName::Thm2TermIIProbe => LambdaConstraint::Thm2NullConfig,
    };
    if dom.lambda_constraint != want {
        return Err(Error::config(format!(
            "check {} samples from {:?}, got {:?}",
            check.label(),
            want,
            dom.lambda_constraint
        )));
    }
    if matches!(check, CheckName::Thm2TermI | CheckName::Thm2TermIIProbe) && dom.n < 2 {
        return Err(Error::config(format!("check {} needs n ≥ 2", check.label())));
    }
    if check == CheckName::Thm2TermIIProbe && dom.m < 2 {
        return Err(Error::config("the null-configuration probe needs m ≥ 2"));
    }
    Ok(())
}

#[derive(Clone)]
struct Acc {
    nsteps: usize,
    checked: u64,
    worst: f64,
    step_worst: Vec<f64>,
    step_viol: Vec<u64>,
    violation_count: u64,
    violations: Vec<Violation>,
    identity_max_err: f64,
    /// `(margin, global index, sample)` of the worst samples, ascending.
    worst_samples: Vec<(f64, u64, Sample)>,
}

impl Acc {
    fn new(nsteps: usize) -> Self {
        Self {
            nsteps,
            checked: 0,
            worst: f64::INFINITY,
            step_worst: vec![f64::INFINITY; nsteps],
            step_viol: vec![0; nsteps],
            violation_count: 0,
            violations: Vec::new(),
            identity_max_err: 0.0,
            worst_samples: Vec::new(),
        }
    }

    fn add(&mut self, specs: &[StepSpec], idx: u64, s: &Sample, e: &Eval, scale2: f64, keep_worst: bool) {
        self.checked += 1;
        let main = e.main / scale2;
        self.worst = self.worst.min(main);
        self.identity_max_err = self.identity_max_err.max(e.identity_err / scale2);
        let mut violated: Option<(String, f64)> = (main < TOLERANCE).then(|| ("main".to_string(), main));
        for (k, spec) in specs.iter().enumerate() {
            let v = e.steps[k] / scale2;
            self.step_worst[k] = self.step_worst[k].min(v);
            if v < TOLERANCE {
                self.step_viol[k] += 1;
                if spec.asserted && violated.is_none() {
                    violated = Some((spec.name.to_string(), v));
                }
            }
        }
        if let Some((step, margin)) = violated {
            self.violation_count += 1;
            if self.violations.len() < VIOLATIONS_LISTED {
                self.violations.push(Violation { step, margin, sample: s.clone() });
            }
        }
        if keep_worst {
            self.offer_worst(main, idx, s);
        }
    }

    fn offer_worst(&mut self, margin: f64, idx: u64, s: &Sample) {
        if self.worst_samples.len() == WORST_KEPT
            && margin >= self.worst_samples.last().map_or(f64::INFINITY, |w| w.0)
        {
            return;
        }
        let pos = self
            .worst_samples
            .partition_point(|w| (w.0, w.1) < (margin, idx));
        self.worst_samples.insert(pos, (margin, idx, s.clone()));
        self.worst_samples.truncate(WORST_KEPT);
    }

    fn merge(&mut self, other: Acc) {
        debug_assert_eq!(self.nsteps, other.nsteps);
        self.checked += other.checked;
        self.worst = self.worst.min(other.worst);
        for k in 0..self.nsteps {
            self.step_worst[k] = self.step_worst[k].min(other.step_worst[k]);
            self.step_viol[k] += other.step_viol[k];
        }
        self.violation_count += other.violation_count;
        for v in other.violations {
            if self.violations.len() < VIOLATIONS_LISTED {
                self.violations.push(v);
            }
        }
        self.identity_max_err = self.identity_max_err.max(other.identity_max_err);
        for (m, i, s) in other.worst_samples {
            self.offer_worst(m, i, &s);
        }
    }
}

fn sample_pass(check: CheckName, dom: &SampleDomain, stream_base: u64, scale: f64) -> Acc {
    let specs = step_specs(check, dom.branch());
    let batches = dom.sample_count.div_ceil(BATCH);
    let scale2 = scale * scale;
    let heavy = scale != 1.0;
    let scaled_dom = SampleDomain { h_scale: dom.h_scale * scale, ..dom.clone() };
    let accs: Vec<Acc> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(dom.seed);
            rng.set_stream(stream_base + b as u64);
            let mut acc = Acc::new(specs.len());
            let start = b * BATCH;
            let end = (start + BATCH).min(dom.sample_count);
            for idx in start..end {
                let s = draw(check, &scaled_dom, &mut rng);
                let e = evaluate(check, dom, &s);
                acc.add(specs, idx as u64, &s, &e, scale2, !heavy);
            }
            acc
        })
        .collect();
    let mut total = Acc::new(specs.len());
    for a in accs {
        total.merge(a);
    }
    total
}

fn perturbed_ok(check: CheckName, dom: &SampleDomain, s: &Sample) -> bool {
    let (n, r) = (dom.n, dom.rank());
    if s.lambda[r..].iter().any(|l| *l != 0.0) {
        return false;
    }
    if s.h.iter().any(|x| x.abs() > dom.h_scale) {
        return false;
    }
    let k1_hi = dom.k1 + dom.curvature_spread;
    let k2_lo = dom.k2 - dom.curvature_spread;
    for i in 0..n {
        for j in 0..n {
            if i != j
                && (s.k_dom[i * n + j] < dom.k1
                    || s.k_dom[i * n + j] > k1_hi
                    || s.k_tar[i * n + j] > dom.k2
                    || s.k_tar[i * n + j] < k2_lo)
            {
                return false;
            }
        }
    }
    if check == CheckName::Thm2TermIIProbe {
        s.lambda.windows(2).all(|w| w[0] >= w[1]) && s.lambda[1] > 0.0 && s.lambda[1] < 1.0
    } else {
        dom.admits(&s.lambda)
    }
}

/// Coordinate hill climb on `main` from a starting sample.
fn climb(check: CheckName, dom: &SampleDomain, start: &Sample, mut record: impl FnMut(&Sample, &Eval)) -> f64 {
    let (n, r) = (dom.n, dom.rank());
    let mut cur = start.clone();
    let mut best = evaluate(check, dom, &cur).main;
    let mut step = 0.1;
    // coordinates: λ_2.. (λ_1 follows from λ_2 in the probe), h entries, curvature pairs
    let lam_coords: Vec<usize> = if check == CheckName::Thm2TermIIProbe {
        (1..r).collect()
    } else {
        (0..r).collect()
    };
    for _ in 0..40 {
        let mut improved = false;
        let ncoords = lam_coords.len() + cur.h.len() + 2 * n * n;
        for c in 0..ncoords {
            for dir in [1.0, -1.0] {
                let mut t = cur.clone();
                if c < lam_coords.len() {
                    let i = lam_coords[c];
                    t.lambda[i] += dir * step;
                    if check == CheckName::Thm2TermIIProbe && i == 1 {
                        t.lambda[0] = 1.0 / t.lambda[1];
                    }
                } else if c < lam_coords.len() + cur.h.len() {
                    let k = c - lam_coords.len();
                    let (q, ij) = (k / (n * n), k % (n * n));
                    let (i, j) = (ij / n, ij % n);
                    if j < i {
                        continue;
                    }
                    t.h[(q * n + i) * n + j] += dir * step * dom.h_scale;
                } else {
                    let k = c - lam_coords.len() - cur.h.len();
                    let (which, ij) = (k / (n * n), k % (n * n));
                    let (i, j) = (ij / n, ij % n);
                    if j <= i {
                        continue;
                    }
                    let arr = if which == 0 { &mut t.k_dom } else { &mut t.k_tar };
                    arr[i * n + j] += dir * step * dom.curvature_spread.max(1e-3);
                    arr[j * n + i] = arr[i * n + j];
                }
                if !perturbed_ok(check, dom, &t) {
                    continue;
                }
                let e = evaluate(check, dom, &t);
                record(&t, &e);
                if e.main < best {
                    best = e.main;
                    cur = t;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-6 {
                break;
            }
        }
    }
    best
}

fn run_check(check: CheckName, dom: &SampleDomain) -> Result<ViolationReport> {
    require(check, dom)?;
    let branch = dom.branch();
    let specs = step_specs(check, branch);
    let mut acc = sample_pass(check, dom, 0, 1.0);

    let heavy_tail_worst_margin = if check.depends_on_h() {
        let heavy = sample_pass(check, dom, 1 << 32, HEAVY_SCALE);
        let w = heavy.worst;
        acc.merge(Acc { worst_samples: Vec::new(), ..heavy });
        Some(w)
    } else {
        None
    };

    let starts: Vec<Sample> = acc.worst_samples.iter().map(|w| w.2.clone()).collect();
    let climbed: Vec<(f64, Acc)> = starts
        .par_iter()
        .map(|s| {
            let mut local = Acc::new(specs.len());
            let best = climb(check, dom, s, |t, e| local.add(specs, u64::MAX, t, e, 1.0, false));
            (best, local)
        })
        .collect();
    let mut hill_climb_worst_margin = f64::INFINITY;
    for (best, local) in climbed {
        hill_climb_worst_margin = hill_climb_worst_margin.min(best);
        let checked = acc.checked;
        acc.merge(local);
        // climb evaluations are not counted as samples
        acc.checked = checked;
    }

    Ok(ViolationReport {
        check: check.label().to_string(),
        branch,
        asserting: check.asserting(),
        checked: acc.checked,
        worst_margin: acc.worst,
        violation_count: acc.violation_count,
        violations: acc.violations,
        identity_max_err: acc.identity_max_err,
        steps: specs
            .iter()
            .enumerate()
            .map(|(k, s)| StepReport {
                name: s.name.to_string(),
                asserted: s.asserted,
                worst_margin: acc.step_worst[k],
                violation_count: acc.step_viol[k],
            })
            .collect(),
        heavy_tail_worst_margin,
        hill_climb_worst_margin,
        c0: (check == CheckName::IILowerBound).then(|| lower_bound_c0(dom)),
    })
}

/// `I − (ε/8)|A|² ≥ 0` on `Π(1+λ_i²) ≤ 4 − ε`, with each completed-square step.
pub fn check_i_geq_delta_a2(domain: &SampleDomain) -> Result<ViolationReport> {
    run_check(CheckName::IGeqDeltaA2, domain)
}

/// `II ≥ 0` for pair products below one, in the branch set by `k₁, k₂`.
pub fn check_ii_nonneg(domain: &SampleDomain) -> Result<ViolationReport> {
    run_check(CheckName::IINonneg, domain)
}

/// `II ≥ c₀ Σ ln(1+λ_i²)` on `Π(1+λ_i²) ≤ 4 − ε`.
pub fn check_ii_lower_bound(domain: &SampleDomain) -> Result<ViolationReport> {
    run_check(CheckName::IILowerBound, domain)
}

/// Curvature term of the area-decreasing argument at the null configuration.
pub fn check_thm2_term_i(domain: &SampleDomain) -> Result<ViolationReport> {
    run_check(CheckName::Thm2TermI, domain)
}

/// Second fundamental form term at `λ₁λ₂ = 1` for arbitrary `h`; report only.
pub fn probe_thm2_term_ii(domain: &SampleDomain) -> Result<ViolationReport> {
    run_check(CheckName::Thm2TermIIProbe, domain)
}

pub fn run_named(check: CheckName, domain: &SampleDomain) -> Result<ViolationReport> {
    run_check(check, domain)
}

/// One entry of a verification suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleJob {
    pub check: CheckName,
    pub domain: SampleDomain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSuite {
    pub jobs: Vec<OracleJob>,
}

impl OracleSuite {
    /// Every check, both curvature branches where they differ, 10⁶ samples each.
    pub fn default_suite() -> Self {
        use CheckName::*;
        use LambdaConstraint::*;
        let samples = 1_000_000;
        let job = |check, dom: SampleDomain, seed| OracleJob { check, domain: dom.with_samples(samples, seed) };
        Self {
            jobs: vec![
                job(IGeqDeltaA2, SampleDomain::new(2, 2, DetRatioBelow, 0.5, 1.0, 0.0), 42),
                job(IGeqDeltaA2, SampleDomain::new(3, 2, DetRatioBelow, 0.1, 1.0, 0.0), 43),
                job(IINonneg, SampleDomain::new(2, 2, PairProductBelow, 0.01, 0.5, -0.5), 7),
                job(IINonneg, SampleDomain::new(3, 3, PairProductBelow, 0.01, 1.0, 1.0), 7),
                job(IILowerBound, SampleDomain::new(2, 2, DetRatioBelow, 0.5, 1.0, 0.0), 5),
                job(IILowerBound, SampleDomain::new(2, 2, DetRatioBelow, 0.5, 1.0, 1.0), 5),
                job(Thm2TermI, SampleDomain::new(3, 3, Thm2NullConfig, 0.5, 1.0, -1.0), 11),
                job(Thm2TermI, SampleDomain::new(3, 3, Thm2NullConfig, 0.5, 1.0, 1.0), 11),
                job(Thm2TermIIProbe, SampleDomain::new(2, 2, Thm2NullConfig, 0.5, 1.0, 1.0), 3),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs.is_empty() {
            return Err(Error::config("the verification suite lists no jobs"));
        }
        for j in &self.jobs {
            require(j.check, &j.domain)?;
        }
        Ok(())
    }

    /// Runs every job in order.
    pub fn run(&self) -> Result<Vec<ViolationReport>> {
        self.validate()?;
        self.jobs.iter().map(|j| run_check(j.check, &j.domain)).collect()
    }
}
