//! Property tests for invariants that hold for every admissible input.

use fspronto::lq::random_problem;
use fspronto::projection::{design_gain, project, tangent_project};
use fspronto::{Curve, LqProblem, PendulumModel, Signal, Terminal, TimeGrid};
use nalgebra::{dvector, DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn lq(seed: u64, n: usize, m: usize, fixed: bool) -> LqProblem {
    let grid = TimeGrid::new(1.5, 61).unwrap();
    random_problem(&mut ChaCha8Rng::seed_from_u64(seed), n, m, grid, fixed).unwrap()
}

fn wave_curve(grid: TimeGrid, c: [f64; 5]) -> Curve {
    let alpha = Signal::from_fn(grid, |_, t| dvector![c[0] * (c[1] * t).sin(), c[0] * c[1] * (c[1] * t).cos()]).unwrap();
    let mu = Signal::from_fn(grid, |_, t| dvector![c[2] + c[3] * (c[4] * t).cos()]).unwrap();
    Curve::new(alpha, mu).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sweep_agrees_with_kkt_oracle(seed in 0u64..10_000, n in 1usize..4, m in 1usize..3, fixed: bool) {
        let d = lq(seed, n, m, fixed).discretize().unwrap();
        let (sweep, oracle) = (d.solve().unwrap(), d.kkt_oracle().unwrap());
        prop_assert!(sweep.zeta.max_distance(&oracle.zeta) < 1e-7);
        prop_assert!((sweep.cost - oracle.cost).abs() <= 1e-8 * (1.0 + oracle.cost.abs()));
    }

    #[test]
    fn costate_satisfies_stationarity(seed in 0u64..10_000, n in 1usize..4, m in 1usize..3) {
        let d = lq(seed, n, m, true).discretize().unwrap();
        let sol = d.solve().unwrap();
        let lambda = sol.costate();
        let (zs, vs) = (sol.zeta.alpha.values(), sol.zeta.mu.values());
        for (k, st) in d.steps().iter().enumerate() {
            let du = st.s.transpose() * &zs[k] + &st.r * &vs[k] + &st.b + st.gamma.transpose() * &lambda[k + 1];
            prop_assert!(du.amax() < 1e-8, "input stationarity at step {k}: {du}");
            if k > 0 {
                let dz = &st.q * &zs[k] + &st.s * &vs[k] + &st.a + st.phi.transpose() * &lambda[k + 1] - &lambda[k];
                prop_assert!(dz.amax() < 1e-8, "state stationarity at step {k}: {dz}");
            }
        }
    }

    #[test]
    fn transfer_is_linear_in_boundary_data(seed in 0u64..10_000, c in -3.0f64..3.0) {
        let mut p = lq(seed, 2, 1, true);
        p.quad.a = p.quad.a.map(|_, a| a * 0.0).unwrap();
        p.quad.b = p.quad.b.map(|_, b| b * 0.0).unwrap();
        let base = p.discretize().unwrap().solve().unwrap();
        let mut scaled = p.clone();
        scaled.x0 *= c;
        if let Terminal::FixedState(x) = &mut scaled.terminal {
            *x *= c;
        }
        let sol = scaled.discretize().unwrap().solve().unwrap();
        let expected = Curve::zeros(base.zeta.grid(), 2, 1).axpy(c, &base.zeta);
        prop_assert!(sol.zeta.max_distance(&expected) < 1e-8 * (1.0 + c.abs()));
        prop_assert!((sol.cost - c * c * base.cost).abs() < 1e-8 * (1.0 + base.cost.abs()) * (1.0 + c * c));
    }

    #[test]
    fn interpolation_is_exact_at_nodes_and_bounded_between(
        values in prop::collection::vec(-10.0f64..10.0, 2..40),
        s in 0.0f64..1.0,
    ) {
        let grid = TimeGrid::new(3.0, values.len()).unwrap();
        let sig = Signal::new(grid, values.iter().map(|&v| dvector![v]).collect()).unwrap();
        for (k, v) in values.iter().enumerate() {
            prop_assert_eq!(sig.interpolate(grid.node(k)).unwrap()[0], *v);
        }
        let t = s * grid.tf();
        let k = ((t / grid.dt()) as usize).min(grid.n_steps() - 1);
        let y = sig.interpolate(t).unwrap()[0];
        let (lo, hi) = (values[k].min(values[k + 1]), values[k].max(values[k + 1]));
        prop_assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
    }

    #[test]
    fn projection_is_idempotent(
        amp in 0.05f64..0.6, w in 0.3f64..3.0, u0 in -1.0f64..1.0, u1 in -1.0f64..1.0, wu in 0.3f64..3.0,
    ) {
        let model = PendulumModel::default();
        let grid = TimeGrid::new(2.0, 201).unwrap();
        let xi = wave_curve(grid, [amp, w, u0, u1, wu]);
        let gain = design_gain(&xi, &model, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1)).unwrap();
        let once = project(&xi, &gain, &model).unwrap();
        let twice = project(once.curve(), &gain, &model).unwrap();
        prop_assert!(twice.curve().max_distance(once.curve()) <= 1e-9);
        prop_assert_eq!(once.states().first(), xi.alpha.first());
    }

    #[test]
    fn tangent_projection_is_a_linear_projector(
        amp in 0.05f64..0.5, w in 0.3f64..2.0, a in -1.0f64..1.0, b in -1.0f64..1.0, c in -2.0f64..2.0,
    ) {
        let model = PendulumModel::default();
        let grid = TimeGrid::new(2.0, 201).unwrap();
        let guess = wave_curve(grid, [amp, w, 0.1, 0.2, 1.0]);
        let gain = design_gain(&guess, &model, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1)).unwrap();
        let xi = project(&guess, &gain, &model).unwrap();
        let z1 = wave_curve(grid, [0.0, 1.0, a, b, 2.0]);
        let z2 = wave_curve(grid, [0.0, 1.0, b, a, 0.7]);
        let t1 = tangent_project(&z1, &xi, &gain, &model).unwrap();
        let t2 = tangent_project(&z2, &xi, &gain, &model).unwrap();
        let again = tangent_project(&t1, &xi, &gain, &model).unwrap();
        prop_assert!(again.max_distance(&t1) < 1e-10);
        let combined = tangent_project(&z1.axpy(c, &z2), &xi, &gain, &model).unwrap();
        prop_assert!(combined.max_distance(&t1.axpy(c, &t2)) < 1e-10 * (1.0 + c.abs()));
        prop_assert_eq!(t1.alpha.first(), &DVector::zeros(2));
    }
}
