//! Randomized invariants of conjugates, lattice expectations and solutions.

mod common;

use bsde_core::drivers::{average_driver, conjugate, subgradient, DriverSpec, TerminalFunctional};
use bsde_core::duality::{dual_report, random_admissible_control};
use bsde_core::lattice_prob::{conditional_expectation_level, expectation_under_mu, ControlProcess};
use bsde_core::parallel::Workers;
use bsde_core::path::PathView;
use bsde_core::picard::{picard_step, PicardState};
use bsde_core::random_walk::{LatticeMode, PathLattice, TimeGrid};
use bsde_core::solver::{solve_backward, solve_with_terminal, terminal_values, SolverOptions, TerminalPath};
use common::{leaf_mean, ALL_TERMINALS};
use proptest::prelude::*;

const DRIVERS: [&str; 6] = ["quadratic", "quartic", "abs", "exp", "linear:0.4,0.9", "constant:0.3"];

fn driver() -> impl Strategy<Value = DriverSpec> {
    prop::sample::select(DRIVERS.to_vec()).prop_map(|n| DriverSpec::from_catalog(n).unwrap())
}

fn terminal() -> impl Strategy<Value = TerminalFunctional> {
    prop::sample::select(ALL_TERMINALS.to_vec()).prop_map(|n| TerminalFunctional::from_catalog(n).unwrap())
}

fn point(d: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-r..r, d)
}

/// A driver that depends on time, on `y` and on the last knot of the path.
fn time_varying() -> DriverSpec {
    DriverSpec::new("tv", 0.5, 1.0, |t, w, y, z| {
        let drift = w.last().map_or(0.0, |x| x[0]);
        0.5 * (1.0 + t) * z.iter().map(|v| v * v).sum::<f64>() + 0.5 * y.sin() + drift.cos()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fenchel_young_at_the_subgradient(f in driver(), z in point(2, 1.5), y in -1.0..1.0f64) {
        let view = PathView::empty(2);
        let numeric = f.without_analytic();
        let mu = subgradient(&numeric, 0.3, &view, y, &z).unwrap();
        let g = conjugate(&numeric, 0.3, &view, y, &mu);
        let pairing: f64 = mu.iter().zip(&z).map(|(a, b)| a * b).sum();
        prop_assert!((f.eval(0.3, &view, y, &z) + g - pairing).abs() <= 1e-6 * (1.0 + pairing.abs()));
    }

    #[test]
    fn fenchel_young_inequality(f in driver(), z in point(1, 3.0), mu in point(1, 3.0)) {
        let view = PathView::empty(1);
        let g = conjugate(&f, 0.0, &view, 0.2, &mu);
        prop_assert!(f.eval(0.0, &view, 0.2, &z) + g >= mu[0] * z[0] - 1e-12);
    }

    #[test]
    fn larger_driver_has_smaller_conjugate(mu in point(1, 0.9), c in 0.0..2.0f64) {
        let view = PathView::empty(1);
        let f = DriverSpec::from_catalog("abs").unwrap().without_analytic();
        let up = DriverSpec::from_catalog("quadratic").unwrap().plus_constant(c).without_analytic();
        // |z| <= z^2/2 + 1/2 <= z^2/2 + c + 1/2.
        let up = up.plus_constant(0.5);
        prop_assert!(conjugate(&up, 0.0, &view, 0.0, &mu) <= conjugate(&f, 0.0, &view, 0.0, &mu) + 1e-9);
    }

    #[test]
    fn conjugate_inherits_lipschitz_in_y(y1 in -2.0..2.0f64, y2 in -2.0..2.0f64, mu in point(1, 0.8)) {
        let view = PathView::empty(1);
        let f = DriverSpec::from_catalog("linear:0.4,0.9").unwrap();
        for g in [f.clone(), f.without_analytic()] {
            let (a, b) = (conjugate(&g, 0.0, &view, y1, &mu), conjugate(&g, 0.0, &view, y2, &mu));
            prop_assert!((a - b).abs() <= g.lipschitz_k * (y1 - y2).abs() + 1e-8);
        }
    }

    #[test]
    fn averaged_driver_is_convex_in_z(z1 in point(1, 2.0), z2 in point(1, 2.0), s in 0.0..1.0f64, i in 0..4usize) {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let f = time_varying();
        let w = [0.0, 0.3];
        let times = [0.0, 1.0];
        let path = PathView::new(&times, &w, 1);
        let zm = [s * z1[0] + (1.0 - s) * z2[0]];
        let a = average_driver(&f, &grid, i, &path, 0.1, &z1).unwrap();
        let b = average_driver(&f, &grid, i, &path, 0.1, &z2).unwrap();
        let m = average_driver(&f, &grid, i, &path, 0.1, &zm).unwrap();
        prop_assert!(m <= s * a + (1.0 - s) * b + 1e-10);
    }

    #[test]
    fn tower_property(n in 1..6usize, d in 1..3usize, seed in any::<u64>()) {
        let lattice = PathLattice::build(n, d, 1.0, LatticeMode::FullPath).unwrap();
        let mut state = seed | 1;
        let x: Vec<f64> = (0..lattice.leaf_count())
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state % 1000) as f64 / 1000.0
            })
            .collect();
        let mut level = x.clone();
        for i in (0..n).rev() {
            level = conditional_expectation_level(&lattice, &level, i).unwrap();
            for (node, v) in level.iter().enumerate() {
                prop_assert!((v - leaf_mean(&x, d, n, i, node)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn change_of_measure_preserves_mass(n in 1..6usize, d in 1..3usize, seed in any::<u64>()) {
        let lattice = PathLattice::build(n, d, 1.0, LatticeMode::FullPath).unwrap();
        let control = random_admissible_control(&lattice, seed, 0.8).unwrap();
        let ones = vec![1.0; lattice.leaf_count()];
        let e = expectation_under_mu(&lattice, n, &ones, &control, 0, 0).unwrap();
        prop_assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn solutions_satisfy_their_invariants(f in driver(), phi in terminal(), n in 2..7usize, d in 1..3usize) {
        let lattice = PathLattice::build(n, d, 1.0, LatticeMode::FullPath).unwrap();
        let sol = solve_backward(&lattice, &f, &phi).unwrap();
        let xi = terminal_values(&lattice, &phi, TerminalPath::Walk).unwrap();
        let report = sol.check_invariants(&f, &xi);
        prop_assert!(report.all_passed(), "{}", report);
    }

    #[test]
    fn comparison_for_leafwise_larger_terminals(
        seed in any::<u64>(),
        n in 2..7usize,
        d in 1..3usize,
        name in prop::sample::select(vec!["abs", "linear:0.4,0.5", "constant:0.3", "zero"]),
    ) {
        // Lipschitz drivers with b sqrt(d dt) <= 1 keep every one-step weight nonnegative.
        let f = DriverSpec::from_catalog(name).unwrap();
        let lattice = PathLattice::build(n, d, 1.0, LatticeMode::FullPath).unwrap();
        let b = f.z_lipschitz(0.0).unwrap();
        prop_assume!(b * (d as f64 * lattice.dt()).sqrt() <= 1.0);
        let phi = TerminalFunctional::from_catalog("maxpath").unwrap();
        let xi = terminal_values(&lattice, &phi, TerminalPath::Walk).unwrap();
        let mut state = seed | 1;
        let up: Vec<f64> = xi
            .iter()
            .map(|v| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                v + (state >> 40) as f64 / (1u64 << 24) as f64
            })
            .collect();
        let opts = SolverOptions::default();
        let lo = solve_with_terminal(&lattice, &f, xi, &opts).unwrap();
        let hi = solve_with_terminal(&lattice, &f, up, &opts).unwrap();
        for (a, b) in lo.y.levels().iter().zip(hi.y.levels()) {
            for (y, y_up) in a.iter().zip(b) {
                prop_assert!(*y <= y_up + 1e-12);
            }
        }
    }

    #[test]
    fn weak_duality(f in driver(), phi in terminal(), seed in any::<u64>(), n in 2..6usize) {
        let lattice = PathLattice::build(n, 1, 1.0, LatticeMode::FullPath).unwrap();
        let sol = solve_backward(&lattice, &f, &phi).unwrap();
        let control = random_admissible_control(&lattice, seed, 0.9).unwrap();
        let report = dual_report(&sol, &f, &control).unwrap();
        prop_assert!(report.min_gap >= -1e-9, "min gap {}", report.min_gap);
    }

    #[test]
    fn picard_iterates_have_orthogonal_martingale_part(f in driver(), phi in terminal(), n in 2..6usize, d in 1..3usize) {
        let lattice = PathLattice::build(n, d, 1.0, LatticeMode::FullPath).unwrap();
        let xi = terminal_values(&lattice, &phi, TerminalPath::Walk).unwrap();
        let workers = Workers::new(Some(1));
        let mut state = PicardState::initial(&lattice);
        for _ in 0..3 {
            state = picard_step(&state, &lattice, &f, &xi, &workers).unwrap();
            for i in 0..n {
                for p in 0..lattice.level_size(i) {
                    let m = lattice.branching();
                    let mean: f64 = (0..m).map(|b| state.dm.get(i, p, b)).sum::<f64>() / m as f64;
                    prop_assert!(mean.abs() < 1e-11);
                    for k in 0..d {
                        let cov: f64 = (0..m).map(|b| state.dm.get(i, p, b) * lattice.increment(b, k)).sum::<f64>()
                            / m as f64;
                        prop_assert!(cov.abs() < 1e-11);
                    }
                }
            }
        }
    }
}

#[test]
fn zero_control_is_the_plain_expectation() {
    let lattice = PathLattice::build(3, 2, 1.0, LatticeMode::FullPath).unwrap();
    let x: Vec<f64> = (0..lattice.leaf_count()).map(|i| (i % 7) as f64).collect();
    let zero = ControlProcess::zero(&lattice);
    let e = expectation_under_mu(&lattice, 3, &x, &zero, 0, 0).unwrap();
    assert!((e - leaf_mean(&x, 2, 3, 0, 0)).abs() < 1e-13);
}
