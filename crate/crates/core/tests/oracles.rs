//! Small instances checked against independent closed forms and exact
//! rational enumeration.

mod common;

use bsde_core::drivers::{DriverSpec, TerminalFunctional};
use bsde_core::duality::duality_gap;
use bsde_core::picard::picard_solve;
use bsde_core::random_walk::{LatticeMode, PathLattice};
use bsde_core::solver::{gronwall_envelope, solve_backward, solve_backward_with, SolverOptions};
use common::walk_oracle;
use num_rational::Rational64;

type Q = Rational64;

fn q(n: i64, d: i64) -> Q {
    Q::new(n, d)
}

fn to_f64(x: Q) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

/// Up-count minus down-count of each component along a full-path node.
fn sign_sums(level: usize, node: usize, dim: usize) -> Vec<i64> {
    let mut k = vec![0i64; dim];
    for step in 0..level {
        let bits = (node >> (dim * (level - 1 - step))) & ((1 << dim) - 1);
        for (c, kc) in k.iter_mut().enumerate() {
            *kc += if (bits >> (dim - 1 - c)) & 1 == 1 { 1 } else { -1 };
        }
    }
    k
}

/// Exact `E[xi | node]` by averaging the leaves below it.
fn exact_mean(xi: &[Q], dim: usize, steps: usize, level: usize, node: usize) -> Q {
    let span = 1usize << (dim * (steps - level));
    let sum = xi[node * span..(node + 1) * span].iter().fold(q(0, 1), |a, b| a + b);
    sum / q(span as i64, 1)
}

#[test]
fn constant_driver_matches_exact_rational_expectation() {
    // phi(x) = x_1^2 + x_1 x_2 is rational on the lattice since W^2 = dt k^2.
    for d in 1..=2 {
        for n in 1..=4 {
            let dt = q(1, n as i64);
            let c = q(3, 4);
            let f = DriverSpec::from_catalog("constant:0.75").unwrap();
            let phi = TerminalFunctional::endpoint("poly", |x| x[0] * x[0] + x.get(1).map_or(0.0, |v| x[0] * v));
            let lattice = PathLattice::build(n, d, 1.0, LatticeMode::FullPath).unwrap();
            let sol = solve_backward(&lattice, &f, &phi).unwrap();
            let xi: Vec<Q> = (0..lattice.leaf_count())
                .map(|leaf| {
                    let k = sign_sums(n, leaf, d);
                    let cross = if d == 2 { k[0] * k[1] } else { 0 };
                    dt * q(k[0] * k[0] + cross, 1)
                })
                .collect();
            for i in 0..=n {
                let remaining = c * q((n - i) as i64, n as i64);
                for node in 0..lattice.level_size(i) {
                    let want = to_f64(exact_mean(&xi, d, n, i, node) + remaining);
                    let got = sol.y.scalar(i, node);
                    assert!((got - want).abs() <= 1e-12, "d={d} N={n} ({i},{node}): {got} vs {want}");
                }
            }
        }
    }
}

#[test]
fn linear_driver_with_constant_terminal_is_an_exact_recursion() {
    // f = a + b(|y| + |z|), xi = c > 0: Y_i = (Y_{i+1} + a dt) / (1 - b dt).
    let (a, b, c) = (q(1, 2), q(3, 2), q(2, 1));
    for n in 2..=4 {
        let dt = q(1, n as i64);
        let mut y = c;
        let mut want = vec![y];
        for _ in 0..n {
            y = (y + a * dt) / (q(1, 1) - b * dt);
            want.push(y);
        }
        want.reverse();
        let f = DriverSpec::from_catalog("linear:0.5,1.5").unwrap();
        let phi = TerminalFunctional::from_catalog("const:2").unwrap();
        for d in 1..=2 {
            let lattice = PathLattice::build(n, d, 1.0, LatticeMode::FullPath).unwrap();
            // Node errors are amplified by 1 / (1 - b dt) = 4 per step; solve tightly.
            let tight = SolverOptions {
                tol: 1e-15,
                ..SolverOptions::default()
            };
            let sol = solve_backward_with(&lattice, &f, &phi, &tight).unwrap();
            for (i, w) in want.iter().enumerate() {
                for node in 0..lattice.level_size(i) {
                    let got = sol.y.scalar(i, node);
                    let w = to_f64(*w);
                    assert!((got - w).abs() <= 1e-12 * (1.0 + w), "N={n} d={d} level {i}: {got}");
                }
            }
            assert_eq!(sol.sup_z(), 0.0);
        }
    }
}

#[test]
fn implicit_scheme_exceeds_exponential_stability_factor() {
    // Constant terminal shift under a y-Lipschitz driver grows by (1 - K dt)^-N > e^{KT}.
    let f = DriverSpec::from_catalog("linear:0,1").unwrap();
    let lattice = PathLattice::build(4, 1, 1.0, LatticeMode::Recombining).unwrap();
    let one = solve_backward(&lattice, &f, &TerminalFunctional::from_catalog("const:1").unwrap()).unwrap();
    let zero = solve_backward(&lattice, &f, &TerminalFunctional::from_catalog("const:0").unwrap()).unwrap();
    let dy = one.y.sup_distance(&zero.y).unwrap();
    assert!((dy - 0.75f64.powi(-4)).abs() < 1e-11);
    assert!(dy > 1f64.exp());
}

#[test]
fn quadratic_driver_with_walk_terminal() {
    // Z = e_1 everywhere, so Y_t = W^1_t + (T - t)/2.
    let f = DriverSpec::from_catalog("quadratic").unwrap();
    let phi = TerminalFunctional::from_catalog("endpoint").unwrap();
    for (n, d) in [(2, 1), (5, 1), (3, 2)] {
        let lattice = PathLattice::build(n, d, 1.0, LatticeMode::FullPath).unwrap();
        let sol = solve_backward(&lattice, &f, &phi).unwrap();
        for i in 0..=n {
            let t = i as f64 / n as f64;
            for node in 0..lattice.level_size(i) {
                let w = walk_oracle(i, node, d, lattice.dt());
                assert!((sol.y.scalar(i, node) - w[0] - 0.5 * (1.0 - t)).abs() < 1e-12);
            }
        }
    }
    let lattice = PathLattice::build(2, 1, 1.0, LatticeMode::FullPath).unwrap();
    let sol = solve_backward(&lattice, &f, &phi).unwrap();
    assert!((sol.y0() - 0.5).abs() < 1e-15);
    assert!(duality_gap(&sol, &f).unwrap().max_gap < 1e-12);
}

#[test]
fn recombining_agrees_with_full_path() {
    for driver in ["quadratic", "exp", "linear:0.3,0.7", "abs"] {
        for terminal in ["endpoint", "digital", "clipped-endpoint"] {
            let f = DriverSpec::from_catalog(driver).unwrap();
            let phi = TerminalFunctional::from_catalog(terminal).unwrap();
            for (n, d) in [(8, 1), (4, 2)] {
                let full = PathLattice::build(n, d, 1.0, LatticeMode::FullPath).unwrap();
                let comb = PathLattice::build(n, d, 1.0, LatticeMode::Recombining).unwrap();
                let a = solve_backward(&full, &f, &phi).unwrap();
                let b = solve_backward(&comb, &f, &phi).unwrap();
                assert!(
                    (a.y0() - b.y0()).abs() < 1e-12,
                    "{driver}/{terminal}: {} vs {}",
                    a.y0(),
                    b.y0()
                );
                assert!((a.sup_z() - b.sup_z()).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn gronwall_product_and_recursion() {
    // A = 1, B = 1, ten steps of 0.2 on [0, 2]: product (0.8)^-9 at 0, recursion (0.8)^-10.
    let grid = bsde_core::random_walk::TimeGrid::uniform(2.0, 10).unwrap();
    let env = gronwall_envelope(1.0, 1.0, &grid).unwrap();
    assert!((env.product[0] - 0.8f64.powi(-9)).abs() < 1e-12);
    assert!((env.recursion[0] - 0.8f64.powi(-10)).abs() < 1e-12);
    assert_eq!(env.product[10], 1.0);
}

#[test]
fn picard_on_the_zero_driver_stops_after_two_iterates() {
    let lattice = PathLattice::build(5, 1, 1.0, LatticeMode::FullPath).unwrap();
    let f = DriverSpec::from_catalog("zero").unwrap();
    let phi = TerminalFunctional::from_catalog("maxpath").unwrap();
    let run = picard_solve(&lattice, &f, &phi, 1e-10, 50, &SolverOptions::default()).unwrap();
    assert_eq!(run.trace.len(), 2);
    let direct = solve_backward(&lattice, &f, &phi).unwrap();
    assert!(run.state.y.sup_distance(&direct.y).unwrap() < 1e-15);
}
