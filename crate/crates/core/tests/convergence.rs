use std::f64::consts::TAU;
use std::sync::Arc;

use proptest::prelude::*;

use gmcf::flow::{run, FlowConfig, Scheme, TimeStep};
use gmcf::io::config::{InitialMap, RunConfig};
use gmcf::model_spaces::ManifoldModel;
use gmcf::state::{Discretization, MapState, Mode};

fn torus_state(res: usize) -> MapState {
    let t = ManifoldModel::flat_torus(vec![TAU, TAU]).unwrap();
    let disc = Discretization::new(t.clone(), t, Mode::FullGrid, vec![res, res])
        .unwrap()
        .with_winding(vec![1, 0, 0, 1])
        .unwrap();
    MapState::from_fn(Arc::new(disc), 0.0, |x| {
        [x[0] + 0.3 * x[0].sin() * (2.0 * x[1]).cos(), x[1] + 0.2 * (x[0] + x[1]).sin()]
    })
}

/// Largest jet error against the closed-form derivatives.
fn torus_jet_error(res: usize) -> f64 {
    let s = torus_state(res);
    let mut err: f64 = 0.0;
    for p in 0..s.len() {
        let [x, y] = s.disc.point_coords(p);
        let j = s.jet(p);
        let c = (x + y).cos();
        let sn = (x + y).sin();
        let exact_df = [
            [1.0 + 0.3 * x.cos() * (2.0 * y).cos(), -0.6 * x.sin() * (2.0 * y).sin()],
            [0.2 * c, 1.0 + 0.2 * c],
        ];
        let exact_hess = [
            [
                [-0.3 * x.sin() * (2.0 * y).cos(), -0.6 * x.cos() * (2.0 * y).sin()],
                [-0.6 * x.cos() * (2.0 * y).sin(), -1.2 * x.sin() * (2.0 * y).cos()],
            ],
            [[-0.2 * sn, -0.2 * sn], [-0.2 * sn, -0.2 * sn]],
        ];
        for a in 0..2 {
            for b in 0..2 {
                err = err.max((j.df[a][b] - exact_df[a][b]).abs());
                for c2 in 0..2 {
                    err = err.max((j.hess[a][b][c2] - exact_hess[a][b][c2]).abs());
                }
            }
        }
    }
    err
}

#[test]
fn torus_jets_are_fourth_order() {
    let e1 = torus_jet_error(16);
    let e2 = torus_jet_error(32);
    let order = (e1 / e2).log2();
    assert!((3.7..4.4).contains(&order), "order {order}, errors {e1:e} {e2:e}");
}

fn profile_error(nt: usize) -> f64 {
    let s = ManifoldModel::round_sphere(1.0).unwrap();
    let disc = Arc::new(Discretization::new(s.clone(), s, Mode::Equivariant, vec![nt]).unwrap());
    let st = MapState::from_fn(disc, 0.0, |x| [0.5 * x[0].sin() + 0.1 * (2.0 * x[0]).sin(), 0.0]);
    (0..st.len())
        .map(|p| {
            let th = st.disc.point_coords(p)[0];
            let j = st.jet(p);
            let d1 = 0.5 * th.cos() + 0.2 * (2.0 * th).cos();
            let d2 = -0.5 * th.sin() - 0.4 * (2.0 * th).sin();
            (j.df[0][0] - d1).abs().max((j.hess[0][0][0] - d2).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn profile_jets_are_fourth_order_through_the_poles() {
    let e1 = profile_error(32);
    let e2 = profile_error(64);
    let order = (e1 / e2).log2();
    assert!((3.7..4.4).contains(&order), "order {order}, errors {e1:e} {e2:e}");
}

fn cap_state(nt: usize) -> MapState {
    let s = ManifoldModel::round_sphere(1.0).unwrap();
    let disc = Arc::new(Discretization::new(s.clone(), s, Mode::Equivariant, vec![nt]).unwrap());
    MapState::from_fn(disc, 0.0, |x| [0.5 * x[0].sin(), 0.0])
}

#[test]
fn euler_approaches_rk4_linearly_in_dt() {
    let s0 = cap_state(32);
    let t_end = 0.2;
    let reference = run(&s0, &FlowConfig::new(TimeStep::Fixed(1e-4), Scheme::RK4, t_end)).unwrap();
    let err = |dt: f64| {
        let r = run(&s0, &FlowConfig::new(TimeStep::Fixed(dt), Scheme::ForwardEuler, t_end)).unwrap();
        r.final_state()
            .values
            .iter()
            .zip(&reference.final_state().values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let (e1, e2) = (err(4e-4), err(2e-4));
    let ratio = e1 / e2;
    assert!((1.8..2.2).contains(&ratio), "ratio {ratio}, errors {e1:e} {e2:e}");
}

#[test]
fn rk4_is_fourth_order_in_time() {
    let s0 = cap_state(32);
    let t_end = 0.2;
    let at = |dt: f64| run(&s0, &FlowConfig::new(TimeStep::Fixed(dt), Scheme::RK4, t_end)).unwrap();
    let (a, b, c) = (at(8e-4), at(4e-4), at(2e-4));
    let diff = |x: &MapState, y: &MapState| {
        x.values.iter().zip(&y.values).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
    };
    let ratio = diff(a.final_state(), b.final_state()) / diff(b.final_state(), c.final_state());
    assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn cap_profile_approaches_continuum_under_refinement() {
    // differences between successive resolutions shrink at fourth order or better
    let sample = |nt: usize| {
        let s0 = cap_state(nt);
        let r = run(&s0, &FlowConfig::new(TimeStep::Fixed(2e-5), Scheme::RK4, 0.05)).unwrap();
        let f = r.final_state();
        // value at θ = π/2 by averaging the two central nodes
        let mid = nt / 2;
        0.5 * (f.values[mid - 1] + f.values[mid])
    };
    let (a, b, c) = (sample(16), sample(32), sample(64));
    let ratio = (a - b).abs() / (b - c).abs();
    assert!(ratio > 3.5, "ratio {ratio}");
}

const TEMPLATE: &str = r#"
mode = "full_grid"
[domain]
kind = "flat_torus"
periods = [1.0, 2.0]
resolution = [8, 16]
[target]
kind = "flat_torus"
periods = [1.0, 1.0]
[initial_map]
family = "constant"
[flow]
dt = 0.001
scheme = "RK4"
t_end = 1.0
"#;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn configs_round_trip(
        seed in any::<u64>(),
        max_mode in 1usize..5,
        amplitude in 0.0..2.0f64,
        dt in 1e-6..1e-2f64,
        stride in 1usize..100,
        rk4 in any::<bool>(),
    ) {
        let mut cfg = RunConfig::from_toml(TEMPLATE).unwrap();
        cfg.initial_map = InitialMap::RandomFourier { seed, max_mode, amplitude };
        cfg.flow.dt = TimeStep::Fixed(dt);
        cfg.flow.output_stride = stride;
        cfg.flow.scheme = if rk4 { Scheme::RK4 } else { Scheme::ForwardEuler };
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_toml(), text);
    }
}
