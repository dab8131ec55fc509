//! Pointwise geometry of the graph of a map at a grid point.
//!
//! At each point the chart differential is brought into orthonormal frames of
//! the two metrics and decomposed as `df(a_i) = λ_i a_{n+i}`. From the
//! singular values and frames we build the adapted tangent frame
//! `E_i = (a_i + λ_i a_{n+i}) / √(1+λ_i²)` and normal frame
//! `E_{n+q} = (a_{n+q} - λ_q a_q) / √(1+λ_q²)` of the graph, and evaluate
//! `*Ω`, the tensor `S = g ⊕ (-h)` restricted to the graph, the second
//! fundamental form, and the two source terms in the evolution of `ln *Ω`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::model_spaces::{MetricData, MAX_DIM};
use crate::state::{Jet, MapState};

/// Singular values at or below this are treated as zero.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SingularData {
    /// `λ_1 ≥ … ≥ λ_n ≥ 0`, zero past the rank.
    pub lambda: Vec<f64>,
    /// `a_1 … a_n` in domain chart components, orthonormal for `g`.
    pub domain_frame: Vec<Vec<f64>>,
    /// `a_{n+1} … a_{n+m}` in target chart components, orthonormal for `h`.
    pub target_frame: Vec<Vec<f64>>,
    pub rank: usize,
}

/// `h^{n+q}_{ij}` stored as `[q][i][j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondFundamentalForm {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl SecondFundamentalForm {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self { n, m, data: vec![0.0; m * n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, q: usize, i: usize, j: usize) -> f64 {
        self.data[(q * self.n + i) * self.n + j]
    }

    /// Sets `h^{n+q}_{ij}` and `h^{n+q}_{ji}` together.
    pub fn set_sym(&mut self, q: usize, i: usize, j: usize, v: f64) {
        let n = self.n;
        self.data[(q * n + i) * n + j] = v;
        self.data[(q * n + j) * n + i] = v;
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// `H^{n+q} = Σ_i h^{n+q}_{ii}`.
    pub fn mean_curvature(&self) -> Vec<f64> {
        (0..self.m)
            .map(|q| (0..self.n).map(|i| self.get(q, i, i)).sum())
            .collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n: self.n,
            m: self.m,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct STensor {
    /// `B_i = (1-λ_i²)/(1+λ_i²)`.
    pub b: Vec<f64>,
    /// `D_i = -2λ_i/(1+λ_i²)`.
    pub d: Vec<f64>,
    /// Smallest eigenvalue of `S^{[2]}` on the tangent 2-vectors; `+∞` when `n = 1`.
    pub s2_min_eig: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointwiseGeometry {
    pub singular: SingularData,
    pub star_omega: f64,
    /// `Π(1+λ_i²) = det(g + f*h) / det g`.
    pub det_ratio: f64,
    pub s_block_b: Vec<f64>,
    pub s_block_d: Vec<f64>,
    pub s2_min_eig: f64,
    pub sff: SecondFundamentalForm,
    pub a2: f64,
    pub mean_curvature: Vec<f64>,
    pub term_i: f64,
    pub term_ii: f64,
}

/// `(*Ω, det_ratio)` with `*Ω = 1/√Π(1+λ_i²)`.
pub fn star_omega(lambda: &[f64]) -> (f64, f64) {
    let det_ratio: f64 = lambda.iter().map(|l| 1.0 + l * l).product();
    (1.0 / det_ratio.sqrt(), det_ratio)
}

/// Largest `λ_i λ_j` over `i < j` (the 2-dilation at the point); 0 for `n = 1`.
pub fn max_pair_product(lambda: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..lambda.len() {
        for j in i + 1..lambda.len() {
            best = best.max(lambda[i] * lambda[j]);
        }
    }
    best
}

pub fn s_tensor(lambda: &[f64]) -> STensor {
    let b: Vec<f64> = lambda.iter().map(|l| (1.0 - l * l) / (1.0 + l * l)).collect();
    let d = lambda.iter().map(|l| -2.0 * l / (1.0 + l * l)).collect();
    let mut s2 = f64::INFINITY;
    for i in 0..lambda.len() {
        for j in i + 1..lambda.len() {
            s2 = s2.min(b[i] + b[j]);
        }
    }
    STensor { b, d, s2_min_eig: s2 }
}

/// Second fundamental form source term of the `ln *Ω` evolution:
/// `|A|² + Σ_{i,k} λ_i² (h^{n+i}_{ik})² + 2 Σ_{k, i<j} λ_i λ_j h^{n+j}_{ik} h^{n+i}_{jk}`.
pub fn term_i(lambda: &[f64], sff: &SecondFundamentalForm) -> f64 {
    let n = lambda.len();
    let r = n.min(sff.m());
    let mut diag = 0.0;
    let mut cross = 0.0;
    for k in 0..n {
        for i in 0..r {
            let hii = sff.get(i, i, k);
            diag += lambda[i] * lambda[i] * hii * hii;
            for j in i + 1..r {
                cross += lambda[i] * lambda[j] * sff.get(j, i, k) * sff.get(i, j, k);
            }
        }
    }
    sff.norm_sq() + diag + 2.0 * cross
}

/// Curvature source term
/// `Σ_{i, k≠i} [λ_i² K₁(a_k,a_i) - λ_i²λ_k² K₂(a_{n+k},a_{n+i})] / ((1+λ_i²)(1+λ_k²))`
/// with the sectional curvatures supplied per ordered pair `(k, i)`.
pub fn term_ii_with(
    lambda: &[f64],
    k_dom: impl Fn(usize, usize) -> f64,
    k_tar: impl Fn(usize, usize) -> f64,
) -> f64 {
    let n = lambda.len();
    let mut acc = 0.0;
    for i in 0..n {
        let li2 = lambda[i] * lambda[i];
        for k in 0..n {
            if k == i {
                continue;
            }
            let lk2 = lambda[k] * lambda[k];
            acc += (li2 * k_dom(k, i) - li2 * lk2 * k_tar(k, i)) / ((1.0 + li2) * (1.0 + lk2));
        }
    }
    acc
}

/// `(I, II)` for constant curvatures `k_dom`, `k_tar`.
pub fn evolution_terms(pg: &PointwiseGeometry, k_dom: f64, k_tar: f64) -> (f64, f64) {
    let lambda = &pg.singular.lambda;
    (term_i(lambda, &pg.sff), term_ii_with(lambda, |_, _| k_dom, |_, _| k_tar))
}

/// Chart differential `df[α][a]` at a grid point as an `m × n` matrix.
pub fn differential(state: &MapState, p: usize) -> DMatrix<f64> {
    let jet = state.jet(p);
    let (n, m) = (state.disc.n(), state.disc.m());
    DMatrix::from_fn(m, n, |al, a| jet.df[al][a])
}

fn metric_matrix(md: &MetricData) -> DMatrix<f64> {
    DMatrix::from_fn(md.dim, md.dim, |i, j| md.g[i][j])
}

fn cholesky_lower(md: &MetricData) -> DMatrix<f64> {
    metric_matrix(md)
        .cholesky()
        .expect("metric must be positive definite")
        .l()
}

fn gram_schmidt_complete(mut basis: Vec<Vec<f64>>, dim: usize) -> Vec<Vec<f64>> {
    let mut e = 0;
    while basis.len() < dim && e < dim {
        let mut v = vec![0.0; dim];
        v[e] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
        e += 1;
    }
    basis
}

fn first_nonzero_sign(v: &[f64]) -> f64 {
    v.iter()
        .find(|x| x.abs() > 1e-12)
        .map(|x| x.signum())
        .unwrap_or(1.0)
}

/// Singular value decomposition of `df` between orthonormal frames of `g` and `h`.
///
/// Singular values are sorted descending; each domain singular vector is
/// oriented so its first nonzero orthonormal component is positive.
pub fn singular_decompose(df: &DMatrix<f64>, g: &MetricData, h: &MetricData) -> SingularData {
    let (m, n) = df.shape();
    let lg = cholesky_lower(g);
    let lh = cholesky_lower(h);
    // orthonormal components: ũ = Lᵀ u
    let lg_t_inv = lg.transpose().try_inverse().expect("invertible metric factor");
    let lh_t_inv = lh.transpose().try_inverse().expect("invertible metric factor");
    let frame_matrix = lh.transpose() * df * &lg_t_inv;

    let svd = frame_matrix.svd(true, true);
    let u = svd.u.expect("left singular vectors");
    let v_t = svd.v_t.expect("right singular vectors");
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut lambda = vec![0.0; n];
    let mut dom: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut tar: Vec<Vec<f64>> = Vec::with_capacity(m);
    for (slot, &idx) in order.iter().enumerate() {
        let mut v: Vec<f64> = v_t.row(idx).iter().copied().collect();
        let mut w: Vec<f64> = u.column(idx).iter().copied().collect();
        let s = first_nonzero_sign(&v);
        v.iter_mut().for_each(|x| *x *= s);
        w.iter_mut().for_each(|x| *x *= s);
        let sv = svd.singular_values[idx];
        lambda[slot] = if sv > RANK_TOL { sv } else { 0.0 };
        dom.push(v);
        tar.push(w);
    }
    let dom = gram_schmidt_complete(dom, n)
        .into_iter()
        .map(|v| {
            let s = first_nonzero_sign(&v);
            v.into_iter().map(|x| x * s).collect::<Vec<_>>()
        })
        .collect::<Vec<_>>();
    let tar = gram_schmidt_complete(tar, m);
    let rank = lambda.iter().filter(|l| **l > 0.0).count();

    let to_chart = |inv: &DMatrix<f64>, v: &[f64]| -> Vec<f64> {
        (0..v.len())
            .map(|r| (0..v.len()).map(|c| inv[(r, c)] * v[c]).sum())
            .collect()
    };
    SingularData {
        lambda,
        domain_frame: dom.iter().map(|v| to_chart(&lg_t_inv, v)).collect(),
        target_frame: tar.iter().map(|v| to_chart(&lh_t_inv, v)).collect(),
        rank,
    }
}

/// Second fundamental form in the adapted frames from the chart Hessian
/// and the Christoffel symbols of both factors.
///
/// `hess[α]` is the `n × n` chart Hessian of `f^α`.
pub fn second_fundamental_form_from_parts(
    df: &DMatrix<f64>,
    hess: &[DMatrix<f64>],
    g: &MetricData,
    h: &MetricData,
    sd: &SingularData,
) -> SecondFundamentalForm {
    let (m, n) = df.shape();
    // Y_ab = ∇^M_{∂_a F} ∂_b F in chart components of N₁ × N₂
    let mut y1 = vec![[0.0; MAX_DIM]; n * n];
    let mut y2 = vec![[0.0; MAX_DIM]; n * n];
    for a in 0..n {
        for b in 0..n {
            for k in 0..n {
                y1[a * n + b][k] = g.gamma[k][a][b];
            }
            for al in 0..m {
                let mut v = hess[al][(a, b)];
                for be in 0..m {
                    for ga in 0..m {
                        v += h.gamma[al][be][ga] * df[(be, a)] * df[(ga, b)];
                    }
                }
                y2[a * n + b][al] = v;
            }
        }
    }
    let lam = |q: usize| sd.lambda.get(q).copied().unwrap_or(0.0);
    let mut sff = SecondFundamentalForm::zeros(n, m);
    for q in 0..m {
        let s = 1.0 / (1.0 + lam(q) * lam(q)).sqrt();
        // E_{n+q} = (−λ_q a_q, a_{n+q}) / √(1+λ_q²)
        let mut e1 = [0.0; MAX_DIM];
        if q < n {
            for (k, e) in e1.iter_mut().enumerate().take(n) {
                *e = -lam(q) * sd.domain_frame[q][k] * s;
            }
        }
        let e2: Vec<f64> = sd.target_frame[q].iter().map(|x| x * s).collect();
        let mut pairing = vec![0.0; n * n];
        for ab in 0..n * n {
            let mut acc = 0.0;
            for k in 0..n {
                for l in 0..n {
                    acc += g.g[k][l] * y1[ab][k] * e1[l];
                }
            }
            for al in 0..m {
                for be in 0..m {
                    acc += h.g[al][be] * y2[ab][al] * e2[be];
                }
            }
            pairing[ab] = acc;
        }
        for i in 0..n {
            let ci: Vec<f64> = sd.domain_frame[i].iter().map(|x| x / (1.0 + lam(i) * lam(i)).sqrt()).collect();
            for j in i..n {
                let cj: Vec<f64> =
                    sd.domain_frame[j].iter().map(|x| x / (1.0 + lam(j) * lam(j)).sqrt()).collect();
                let mut hij = 0.0;
                let mut hji = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        hij += ci[a] * cj[b] * pairing[a * n + b];
                        hji += cj[a] * ci[b] * pairing[a * n + b];
                    }
                }
                sff.set_sym(q, i, j, 0.5 * (hij + hji));
            }
        }
    }
    sff
}

impl PointwiseGeometry {
    /// Assembles the geometry from chart data and a (possibly re-chosen) singular frame.
    pub fn from_parts(
        df: &DMatrix<f64>,
        hess: &[DMatrix<f64>],
        g: &MetricData,
        h: &MetricData,
        singular: SingularData,
        k_dom: f64,
        k_tar: f64,
    ) -> Self {
        let sff = second_fundamental_form_from_parts(df, hess, g, h, &singular);
        let lambda = &singular.lambda;
        let (so, det_ratio) = star_omega(lambda);
        let st = s_tensor(lambda);
        let a2 = sff.norm_sq();
        let mean_curvature = sff.mean_curvature();
        let ti = term_i(lambda, &sff);
        let tii = term_ii_with(lambda, |_, _| k_dom, |_, _| k_tar);
        Self {
            star_omega: so,
            det_ratio,
            s_block_b: st.b,
            s_block_d: st.d,
            s2_min_eig: st.s2_min_eig,
            sff,
            a2,
            mean_curvature,
            term_i: ti,
            term_ii: tii,
            singular,
        }
    }

    pub fn from_jet(jet: &Jet, domain_coords: [f64; 2], state: &MapState) -> Self {
        let disc = &state.disc;
        let (n, m) = (disc.n(), disc.m());
        let df = DMatrix::from_fn(m, n, |al, a| jet.df[al][a]);
        let hess: Vec<DMatrix<f64>> = (0..m)
            .map(|al| DMatrix::from_fn(n, n, |a, b| jet.hess[al][a][b]))
            .collect();
        let g = disc.domain().metric_at_coords(&domain_coords[..n]);
        let h = disc.target().metric_at_coords(&jet.value[..m]);
        let sd = singular_decompose(&df, &g, &h);
        Self::from_parts(&df, &hess, &g, &h, sd, disc.domain().curvature(), disc.target().curvature())
    }

    /// Geometry of `state` at grid point `p`.
    pub fn at(state: &MapState, p: usize) -> Self {
        Self::from_jet(&state.jet(p), state.disc.point_coords(p), state)
    }

    pub fn max_pair_product(&self) -> f64 {
        max_pair_product(&self.singular.lambda)
    }
}

/// `(sff, |A|², H)` at grid point `p`.
pub fn second_fundamental_form(state: &MapState, p: usize) -> (SecondFundamentalForm, f64, Vec<f64>) {
    let pg = PointwiseGeometry::at(state, p);
    (pg.sff, pg.a2, pg.mean_curvature)
}

/// Geometry at every grid point, in grid order.
pub fn geometry_field(state: &MapState) -> Vec<PointwiseGeometry> {
    (0..state.len())
        .into_par_iter()
        .map(|p| PointwiseGeometry::at(state, p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_spaces::ManifoldModel;
    use crate::state::{Discretization, Mode};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{PI, TAU};
    use std::sync::Arc;

    fn flat(dim: usize) -> MetricData {
        let mut m = MetricData::zero(dim);
        for i in 0..dim {
            m.g[i][i] = 1.0;
        }
        m
    }

    #[test]
    fn star_omega_values() {
        assert_eq!(star_omega(&[0.0, 0.0]), (1.0, 1.0));
        let (so, dr) = star_omega(&[1.0, 1.0]);
        assert_eq!(dr, 4.0);
        assert_eq!(so, 0.5);
        let (so, _) = star_omega(&[1.0, 0.5]);
        assert_abs_diff_eq!(so, 0.632_455_532_033_675_9, epsilon = 1e-15);
    }

    #[test]
    fn s_tensor_values() {
        let s = s_tensor(&[1.0, 1.0]);
        assert_eq!(s.b, vec![0.0, 0.0]);
        assert_eq!(s.d, vec![-1.0, -1.0]);
        assert_eq!(s.s2_min_eig, 0.0);
        let s = s_tensor(&[0.0, 0.0]);
        assert_eq!((s.b, s.d, s.s2_min_eig), (vec![1.0, 1.0], vec![0.0, 0.0], 2.0));
        // 2(1 − 0.25)/(5 · 1.0625)
        let s = s_tensor(&[2.0, 0.25]);
        assert_abs_diff_eq!(s.s2_min_eig, 1.5 / 5.3125, epsilon = 1e-15);
        assert_abs_diff_eq!(s.s2_min_eig, 0.282_352_941_176_470_6, epsilon = 1e-15);
        assert_eq!(s_tensor(&[0.7]).s2_min_eig, f64::INFINITY);
    }

    #[test]
    fn svd_of_zero_and_diagonal() {
        let sd = singular_decompose(&DMatrix::zeros(2, 2), &flat(2), &flat(2));
        assert_eq!(sd.lambda, vec![0.0, 0.0]);
        assert_eq!(sd.rank, 0);
        let df = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.6]);
        let sd = singular_decompose(&df, &flat(2), &flat(2));
        assert_abs_diff_eq!(sd.lambda[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(sd.lambda[1], 0.3, epsilon = 1e-15);
        assert_eq!(sd.rank, 2);
    }

    #[test]
    fn svd_of_sphere_isometry() {
        let s = ManifoldModel::round_sphere(1.5).unwrap();
        let g = s.metric_at_coords(&[0.7, 0.0]);
        let sd = singular_decompose(&DMatrix::identity(2, 2), &g, &g);
        assert_abs_diff_eq!(sd.lambda[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sd.lambda[1], 1.0, epsilon = 1e-14);
    }

    fn check_svd_contract(df: &DMatrix<f64>, g: &MetricData, h: &MetricData) {
        let sd = singular_decompose(df, g, h);
        let (m, n) = df.shape();
        for w in sd.lambda.windows(2) {
            assert!(w[0] >= w[1]);
        }
        for i in 0..n {
            for j in 0..n {
                let gram: f64 = (0..n)
                    .flat_map(|a| (0..n).map(move |b| (a, b)))
                    .map(|(a, b)| g.g[a][b] * sd.domain_frame[i][a] * sd.domain_frame[j][b])
                    .sum();
                assert_abs_diff_eq!(gram, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
        for i in 0..m {
            for j in 0..m {
                let gram: f64 = (0..m)
                    .flat_map(|a| (0..m).map(move |b| (a, b)))
                    .map(|(a, b)| h.g[a][b] * sd.target_frame[i][a] * sd.target_frame[j][b])
                    .sum();
                assert_abs_diff_eq!(gram, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
        for i in 0..n {
            let image: Vec<f64> = (0..m)
                .map(|al| (0..n).map(|a| df[(al, a)] * sd.domain_frame[i][a]).sum())
                .collect();
            for al in 0..m {
                let want = if i < m { sd.lambda[i] * sd.target_frame[i][al] } else { 0.0 };
                assert_abs_diff_eq!(image[al], want, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn svd_contract_on_curved_metrics() {
        let s = ManifoldModel::round_sphere(1.3).unwrap();
        let g = s.metric_at_coords(&[0.4, 0.0]);
        let h = ManifoldModel::round_sphere(0.8).unwrap().metric_at_coords(&[2.1, 0.0]);
        check_svd_contract(&DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 0.7, 0.05]), &g, &h);
        check_svd_contract(&DMatrix::from_row_slice(1, 2, &[0.3, -1.2]), &g, &flat(1));
        check_svd_contract(&DMatrix::from_row_slice(2, 1, &[0.3, -1.2]), &flat(1), &h);
        check_svd_contract(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]), &g, &h);
    }

    #[test]
    fn evolution_terms_trivial_cases() {
        let sff = SecondFundamentalForm::zeros(2, 2);
        assert_eq!(term_i(&[0.4, 0.2], &sff), 0.0);
        assert_eq!(term_ii_with(&[0.0, 0.0], |_, _| 1.0, |_, _| 1.0), 0.0);
        // n = 1: no pairs k ≠ i
        assert_eq!(term_ii_with(&[0.9], |_, _| 1.0, |_, _| -3.0), 0.0);
        // λ = (1,1), k_dom = k_tar = 1: 2 · (1 − 1)/4
        assert_eq!(term_ii_with(&[1.0, 1.0], |_, _| 1.0, |_, _| 1.0), 0.0);
    }

    #[test]
    fn term_i_matches_hand_evaluation() {
        // λ = (0.5, 0.25), h^{n+1}_{11} = 1, h^{n+2}_{12} = 2, h^{n+1}_{22} = -1
        let mut sff = SecondFundamentalForm::zeros(2, 2);
        sff.set_sym(0, 0, 0, 1.0);
        sff.set_sym(1, 0, 1, 2.0);
        sff.set_sym(0, 1, 1, -1.0);
        let a2 = 1.0 + 4.0 + 4.0 + 1.0;
        // Σ λ_i²(h^{n+i}_{ik})²: i=1,k=1: 0.25·1; i=2,k=1: 0.0625·h^{n+2}_{21}² = 0.0625·4
        let diag = 0.25 + 0.0625 * 4.0;
        // 2 Σ_k λ1λ2 h^{n+2}_{1k} h^{n+1}_{2k}: k=1: 2·0 ... h^{n+1}_{21}=0; k=2: h^{n+2}_{12}=2, h^{n+1}_{22}=-1
        let cross = 2.0 * 0.125 * (2.0 * -1.0);
        assert_abs_diff_eq!(term_i(&[0.5, 0.25], &sff), a2 + diag + cross, epsilon = 1e-14);
    }

    fn torus_state(res: usize, f: impl Fn([f64; 2]) -> [f64; 2], winding: Vec<i64>) -> MapState {
        let t = ManifoldModel::flat_torus(vec![TAU, TAU]).unwrap();
        let d = Discretization::new(t.clone(), t, Mode::FullGrid, vec![res, res])
            .unwrap()
            .with_winding(winding)
            .unwrap();
        MapState::from_fn(Arc::new(d), 0.0, f)
    }

    #[test]
    fn constant_and_linear_maps_are_totally_geodesic() {
        let s = torus_state(8, |_| [0.5, 1.5], vec![0; 4]);
        for pg in geometry_field(&s) {
            assert_eq!(pg.a2, 0.0);
            assert_eq!(pg.star_omega, 1.0);
            assert_eq!(pg.mean_curvature, vec![0.0, 0.0]);
        }
        let s = torus_state(12, |x| [x[0] + x[1], -x[1]], vec![1, 1, 0, -1]);
        for pg in geometry_field(&s) {
            assert!(pg.a2 < 1e-20);
            assert_abs_diff_eq!(pg.det_ratio, 5.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn sff_is_symmetric() {
        let s = torus_state(16, |x| [0.3 * (x[0] + 2.0 * x[1]).sin(), 0.2 * x[0].cos() * x[1].sin()], vec![0; 4]);
        for p in (0..s.len()).step_by(7) {
            let pg = PointwiseGeometry::at(&s, p);
            for q in 0..2 {
                assert_eq!(pg.sff.get(q, 0, 1), pg.sff.get(q, 1, 0));
            }
            assert_abs_diff_eq!(pg.star_omega, 1.0 / pg.det_ratio.sqrt(), epsilon = 1e-12);
            let h: Vec<f64> = (0..2).map(|q| pg.sff.get(q, 0, 0) + pg.sff.get(q, 1, 1)).collect();
            assert_eq!(h, pg.mean_curvature);
        }
    }

    /// Hypersurface check: for a graph u over a flat torus into a circle
    /// (codimension one), h = Hess u / ((1+|∇u|²)^{1/2}) contracted with the
    /// unit tangent frame; compare the mean curvature with the classical
    /// formula H = div(∇u / √(1+|∇u|²)).
    #[test]
    fn graph_mean_curvature_matches_classical_formula() {
        let t2 = ManifoldModel::flat_torus(vec![TAU, TAU]).unwrap();
        let c = ManifoldModel::flat_torus(vec![TAU]).unwrap();
        let d = Discretization::new(t2, c, Mode::FullGrid, vec![64, 64]).unwrap();
        let s = MapState::from_fn(Arc::new(d), 0.0, |x| [0.4 * x[0].sin() * x[1].cos(), 0.0]);
        let p = 64 * 10 + 23;
        let [x, y] = s.disc.point_coords(p);
        let (ux, uy) = (0.4 * x.cos() * y.cos(), -0.4 * x.sin() * y.sin());
        let (uxx, uyy, uxy) = (-0.4 * x.sin() * y.cos(), -0.4 * x.sin() * y.cos(), -0.4 * x.cos() * y.sin());
        let w2 = 1.0 + ux * ux + uy * uy;
        let h_classical = ((1.0 + uy * uy) * uxx - 2.0 * ux * uy * uxy + (1.0 + ux * ux) * uyy) / w2.powf(1.5);
        let pg = PointwiseGeometry::at(&s, p);
        assert_abs_diff_eq!(pg.mean_curvature[0].abs(), h_classical.abs(), epsilon = 1e-6);
    }

    fn equivariant_state(nt: usize, r1: f64, r2: f64, rho: impl Fn(f64) -> f64, pole: f64) -> MapState {
        let d = Discretization::new(
            ManifoldModel::round_sphere(r1).unwrap(),
            ManifoldModel::round_sphere(r2).unwrap(),
            Mode::Equivariant,
            vec![nt],
        )
        .unwrap()
        .with_pole_value(pole);
        MapState::from_fn(Arc::new(d), 0.0, |x| [rho(x[0]), 0.0])
    }

    #[test]
    fn equivariant_singular_values_match_closed_form() {
        let (r1, r2) = (1.0, 1.4);
        let s = equivariant_state(64, r1, r2, |t| 0.5 * t.sin() + 0.1 * (2.0 * t).sin(), 0.0);
        let dth = PI / 64.0;
        for p in 0..s.len() {
            let th = s.disc.point_coords(p)[0];
            let rho = 0.5 * th.sin() + 0.1 * (2.0 * th).sin();
            let drho = 0.5 * th.cos() + 0.2 * (2.0 * th).cos();
            let mut want = [r2 / r1 * drho.abs(), r2 * rho.sin().abs() / (r1 * th.sin())];
            want.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let pg = PointwiseGeometry::at(&s, p);
            assert_abs_diff_eq!(pg.singular.lambda[0], want[0], epsilon = dth * dth);
            assert_abs_diff_eq!(pg.singular.lambda[1], want[1], epsilon = dth * dth);
        }
    }

    #[test]
    fn identity_of_equal_spheres_is_minimal() {
        for nt in [32usize, 64] {
            let s = equivariant_state(nt, 1.0, 1.0, |t| t, PI);
            let dth = PI / nt as f64;
            for p in 0..s.len() {
                let pg = PointwiseGeometry::at(&s, p);
                assert_abs_diff_eq!(pg.singular.lambda[0], 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(pg.singular.lambda[1], 1.0, epsilon = 1e-12);
                for h in &pg.mean_curvature {
                    assert!(h.abs() < dth * dth, "H = {h} at θ index {p}");
                }
                // the diagonal is totally geodesic
                assert!(pg.a2 < 1e-16);
            }
        }
    }
}
