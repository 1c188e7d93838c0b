//! Acceptance suite: one pass/fail line per criterion.

mod common;

use std::fmt::Write as _;
use std::time::Instant;

use bsde_core::approximation::{monotone_limit_experiment, ApproximationLadder, SearchPlan};
use bsde_core::drivers::{conjugate, subgradient, DriverSpec, TerminalFunctional, TerminalKind};
use bsde_core::duality::{
    dual_report, duality_gap, duality_gap_with_refinement, random_admissible_control, write_dual_csv,
};
use bsde_core::lattice_prob::conditional_expectation;
use bsde_core::path::PathView;
use bsde_core::picard::{picard_solve, write_trace_csv};
use bsde_core::random_walk::{LatticeMode, PathLattice};
use bsde_core::solver::{
    solve_backward, solve_backward_with, solve_with_terminal, terminal_values, write_solution_csv, z_bound,
    z_bound_certificate_steps, SolverOptions, TerminalPath,
};
use common::{leaf_mean, random_driver, random_terminal, walk_oracle, ALL_TERMINALS, LIPSCHITZ_TERMINALS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn pass_if(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let f = DriverSpec::from_catalog("zero").unwrap();
    let phi = TerminalFunctional::from_catalog("endpoint").unwrap();
    let mut worst = 0.0f64;
    let mut solve_secs = 0.0;
    for d in 1..=2 {
        for n in 1..=12 {
            let start = Instant::now();
            let lattice = PathLattice::build_with_budget(n, d, 1.0, LatticeMode::FullPath, 1 << 24).unwrap();
            let sol = solve_backward(&lattice, &f, &phi).unwrap();
            solve_secs += start.elapsed().as_secs_f64();
            let dt = lattice.dt();
            for i in 0..=n {
                for node in 0..lattice.level_size(i) {
                    let w = walk_oracle(i, node, d, dt);
                    worst = worst.max((sol.y.scalar(i, node) - w[0]).abs());
                    if i < n {
                        let z = sol.z.value(i, node);
                        worst = worst.max((z[0] - 1.0).abs());
                        for zk in &z[1..] {
                            worst = worst.max(zk.abs());
                        }
                    }
                }
            }
            worst = worst.max(sol.dm.sup_abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    pass_if(
        worst <= 1e-12 && solve_secs < 5.0,
        format!("max deviation {worst:.2e}, solver runtime {solve_secs:.2}s ({secs:.2}s with oracle checks)"),
    )
}

fn criterion_2() -> Verdict {
    let mut worst = 0.0f64;
    for c in [-0.7, 0.0, 1.3] {
        let f = DriverSpec::from_catalog(&format!("constant:{c}")).unwrap();
        for name in ALL_TERMINALS {
            let phi = TerminalFunctional::from_catalog(name).unwrap();
            for (n, d) in [(6, 1), (9, 1), (4, 2), (5, 2)] {
                let lattice = PathLattice::build(n, d, 1.0, LatticeMode::FullPath).unwrap();
                let sol = solve_backward(&lattice, &f, &phi).unwrap();
                let xi = sol.terminal().to_vec();
                for i in 0..=n {
                    let remaining = c * (1.0 - lattice.grid().point(i));
                    for node in 0..lattice.level_size(i) {
                        let want = leaf_mean(&xi, d, n, i, node) + remaining;
                        worst = worst.max((sol.y.scalar(i, node) - want).abs());
                    }
                }
            }
        }
    }
    pass_if(worst <= 1e-12, format!("max |Y - E[xi|node] - c(T-t)| = {worst:.2e}"))
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let f = DriverSpec::from_catalog("linear:1,1").unwrap();
    let phi = TerminalFunctional::from_catalog("const:1").unwrap();
    let target = 2.0 * std::f64::consts::E - 1.0;
    let mut errors = Vec::new();
    for n in [10, 50, 100, 500] {
        let lattice = PathLattice::build(n, 1, 1.0, LatticeMode::Recombining).unwrap();
        let y0 = solve_backward(&lattice, &f, &phi).unwrap().y0();
        errors.push((y0 - target).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    let last = errors[3];
    pass_if(
        decreasing && last <= 0.05 && secs < 1.0,
        format!("errors {errors:.3?}, runtime {secs:.3}s"),
    )
}

fn criterion_4() -> Verdict {
    let mut detail = String::new();
    let mut ok = true;
    let lattice = PathLattice::build(2, 1, 1.0, LatticeMode::FullPath).unwrap();
    let f = DriverSpec::from_catalog("quadratic").unwrap();
    let phi = TerminalFunctional::from_catalog("endpoint").unwrap();
    let sol = solve_backward(&lattice, &f, &phi).unwrap();
    let gap = duality_gap(&sol, &f).unwrap();
    ok &= (sol.y0() - 0.5).abs() <= 1e-12 && gap.max_gap <= 1e-9;
    let _ = write!(detail, "Y_0={:.15} gap={:.2e}", sol.y0(), gap.max_gap);
    let mut weak = f64::INFINITY;
    for seed in 0..64 {
        let control = random_admissible_control(&lattice, seed, 0.9).unwrap();
        let r = dual_report(&sol, &f, &control).unwrap();
        weak = weak.min(r.root().primal - r.root().dual);
    }
    ok &= weak >= -1e-9;
    let _ = write!(detail, " min(primal-dual) over 64 controls={weak:.2e}");

    let quartic = DriverSpec::from_catalog("quartic").unwrap().without_analytic();
    let attempts = duality_gap_with_refinement(
        4,
        1,
        1.0,
        LatticeMode::FullPath,
        &quartic,
        &phi,
        &SolverOptions::default(),
        4,
    )
    .unwrap();
    let last = attempts.last().unwrap();
    match &last.report {
        Some(r) => {
            ok &= r.max_gap <= 1e-6;
            let _ = write!(
                detail,
                "; quartic numeric: gap={:.2e} at N={} (requested N=4, {} attempt(s))",
                r.max_gap,
                last.steps,
                attempts.len()
            );
        }
        None => {
            ok = false;
            let _ = write!(detail, "; quartic: no admissible optimizer");
        }
    }
    pass_if(ok, detail)
}

/// Largest number of steps a certified instance may need.
fn step_cap(path: bool, d: usize) -> usize {
    match (path, d) {
        (true, 1) => 14,
        (true, _) => 7,
        (false, 1) => 400,
        (false, _) => 150,
    }
}

/// Halves the terminal scales until the Z-bound certificate fits the cap.
fn certify(f: &DriverSpec, bases: &[TerminalFunctional], scales: &mut [f64], d: usize, horizon: f64) -> (f64, usize) {
    let path = bases.iter().any(|b| b.kind() == TerminalKind::Path);
    loop {
        let l = bases
            .iter()
            .zip(scales.iter())
            .map(|(b, s)| b.lipschitz.unwrap() * s.abs())
            .fold(0.0, f64::max);
        match z_bound_certificate_steps(f, l, horizon, d) {
            Some(n) if n <= step_cap(path, d) => return (l, n),
            _ => scales.iter_mut().for_each(|s| *s *= 0.5),
        }
    }
}

fn lattice_for(terminals: &[&TerminalFunctional], n: usize, d: usize, horizon: f64) -> PathLattice {
    let mode = if terminals.iter().any(|t| t.kind() == TerminalKind::Path) {
        LatticeMode::FullPath
    } else {
        LatticeMode::Recombining
    };
    PathLattice::build(n, d, horizon, mode).unwrap()
}

fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_ratio = 0.0f64;
    for _ in 0..100 {
        let f = random_driver(&mut rng);
        let base = random_terminal(&mut rng, &LIPSCHITZ_TERMINALS);
        let d = rng.gen_range(1..=2);
        let horizon = rng.gen_range(0.25..1.0);
        let mut scale = [rng.gen_range(0.1..2.0)];
        let (l, n) = certify(&f, std::slice::from_ref(&base), &mut scale, d, horizon);
        let phi = base.scaled(scale[0]);
        let lattice = lattice_for(&[&phi], n, d, horizon);
        let sol = solve_backward(&lattice, &f, &phi).unwrap();
        let bound = z_bound(l, f.lipschitz_k, horizon, d);
        let sup_z = sol.sup_z();
        if sup_z > bound + 1e-9 {
            return Err(format!(
                "{} / {} d={d} N={n}: sup|Z|={sup_z} > bound {bound}",
                f.name(),
                phi.name()
            ));
        }
        if bound > 0.0 {
            worst_ratio = worst_ratio.max(sup_z / bound);
        }
    }
    Ok(format!("100 instances, max sup|Z|/bound = {worst_ratio:.3}"))
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let f = random_driver(&mut rng);
        let d = rng.gen_range(1..=2);
        let n = if d == 1 {
            rng.gen_range(2..=9)
        } else {
            rng.gen_range(2..=5)
        };
        let lattice = PathLattice::build(n, d, 1.0, LatticeMode::FullPath).unwrap();
        let phi = random_terminal(&mut rng, &ALL_TERMINALS);
        let delta = rng.gen_range(0.0..=1.0);
        let xi = terminal_values(&lattice, &phi, TerminalPath::Walk).unwrap();
        let up: Vec<f64> = xi.iter().map(|v| v + delta).collect();
        let opts = SolverOptions::default();
        let lo = solve_with_terminal(&lattice, &f, xi, &opts).unwrap();
        let hi = solve_with_terminal(&lattice, &f, up, &opts).unwrap();
        for (a, b) in lo.y.levels().iter().zip(hi.y.levels()) {
            for (y, y_up) in a.iter().zip(b) {
                worst = worst.max(y - y_up);
            }
        }
    }
    pass_if(worst <= 1e-12, format!("100 pairs, max (Y - Y') = {worst:.2e}"))
}

fn criterion_7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = Vec::new();
    let mut worst_ratio = 0.0f64;
    for _ in 0..50 {
        let f = random_driver(&mut rng);
        let d = rng.gen_range(1..=2);
        let bases = [
            random_terminal(&mut rng, &LIPSCHITZ_TERMINALS),
            random_terminal(&mut rng, &LIPSCHITZ_TERMINALS),
        ];
        let mut scales = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
        let shifts = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let (_, n) = certify(&f, &bases, &mut scales, d, 1.0);
        let p1 = bases[0].scaled(scales[0]).shifted(shifts[0]);
        let p2 = bases[1].scaled(scales[1]).shifted(shifts[1]);
        let lattice = lattice_for(&[&p1, &p2], n, d, 1.0);
        let opts = SolverOptions::default();
        let s1 = solve_backward_with(&lattice, &f, &p1, &opts).unwrap();
        let s2 = solve_backward_with(&lattice, &f, &p2, &opts).unwrap();
        let dxi = s1
            .terminal()
            .iter()
            .zip(s2.terminal())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let dy = s1.y.sup_distance(&s2.y).unwrap();
        let bound = (f.lipschitz_k * lattice.horizon()).exp() * dxi;
        if dxi > 0.0 {
            worst_ratio = worst_ratio.max(dy / bound);
        }
        if dy > bound + 1e-9 {
            failures.push(format!(
                "{} K={} N={}: {dy:.6} > {bound:.6}",
                f.name(),
                f.lipschitz_k,
                lattice.steps()
            ));
        }
    }
    let detail = format!(
        "50 pairs, max sup|dY|/(e^(KT) max|dxi|) = {worst_ratio:.6}; {} violation(s){}",
        failures.len(),
        failures.first().map(|s| format!(", e.g. {s}")).unwrap_or_default()
    );
    pass_if(failures.is_empty(), detail)
}

fn criterion_8() -> Verdict {
    let drivers = [
        "zero",
        "constant:1",
        "linear:0.5,1",
        "quadratic",
        "quartic",
        "abs",
        "exp",
    ];
    let mut worst = 0.0f64;
    let mut monotone_breaks = Vec::new();
    let opts = SolverOptions::default();
    for dn in drivers {
        let f = DriverSpec::from_catalog(dn).unwrap();
        for tn in ALL_TERMINALS {
            let phi = TerminalFunctional::from_catalog(tn).unwrap();
            let lattice = PathLattice::build(6, 1, 1.0, LatticeMode::FullPath).unwrap();
            let run = match picard_solve(&lattice, &f, &phi, 1e-13, 500, &opts) {
                Ok(r) => r,
                Err(e) => return Err(format!("{dn}/{tn}: {e}")),
            };
            let direct = solve_backward_with(&lattice, &f, &phi, &opts).unwrap();
            worst = worst.max(run.state.y.sup_distance(&direct.y).unwrap());
            let dy: Vec<f64> = run.trace.iter().map(|m| m.dy_sup).collect();
            if dy.len() > 2 && dy[1..].windows(2).any(|w| w[1] > w[0]) {
                monotone_breaks.push(format!("{dn}/{tn}"));
            }
        }
    }
    pass_if(
        worst <= 1e-9 && monotone_breaks.is_empty(),
        format!("max |Y_picard - Y| = {worst:.2e}; dY increases in {monotone_breaks:?}"),
    )
}

fn criterion_9() -> Verdict {
    let lattice = PathLattice::build(8, 1, 1.0, LatticeMode::FullPath).unwrap();
    let f = DriverSpec::from_catalog("quadratic").unwrap();
    let phi = TerminalFunctional::from_catalog("digital").unwrap();
    let plan = SearchPlan::default()
        .with_lattice_paths(&lattice, TerminalPath::Walk)
        .unwrap();
    let ladder = ApproximationLadder::monotone(&phi, &[1.0, 2.0, 4.0, 8.0, 16.0], &plan).unwrap();
    let report = monotone_limit_experiment(&lattice, &f, &ladder, &SolverOptions::default()).unwrap();
    let y0: Vec<f64> = report.rows.iter().map(|r| r.y0).collect();
    let fails: Vec<String> = report
        .checks
        .failures()
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect();
    pass_if(fails.is_empty(), format!("Y_0 by level {y0:.6?} {}", fails.join("; ")))
}

fn criterion_10() -> Verdict {
    let empty = PathView::empty(1);
    let mut worst = 0.0f64;
    for name in ["quadratic", "abs", "quartic"] {
        let f = DriverSpec::from_catalog(name).unwrap();
        let numeric = f.without_analytic();
        for j in 0..64 {
            let mu = -2.5 + 5.0 * j as f64 / 63.0;
            let a = conjugate(&f, 0.0, &empty, 0.0, &[mu]);
            let b = conjugate(&numeric, 0.0, &empty, 0.0, &[mu]);
            let err = if a.is_infinite() || b.is_infinite() {
                if a == b {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (a - b).abs()
            };
            worst = worst.max(err);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut fy = 0.0f64;
    let drivers = ["quadratic", "abs", "quartic", "exp", "linear:0.3,0.8"];
    for s in 0..256 {
        let f = DriverSpec::from_catalog(drivers[s % drivers.len()])
            .unwrap()
            .without_analytic();
        let d = rng.gen_range(1..=2);
        let z: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let y = rng.gen_range(-1.0..1.0);
        let view = PathView::empty(d);
        let mu = subgradient(&f, 0.5, &view, y, &z).unwrap();
        let g = conjugate(&f, 0.5, &view, y, &mu);
        let pairing: f64 = mu.iter().zip(&z).map(|(m, v)| m * v).sum();
        fy = fy.max((f.eval(0.5, &view, y, &z) + g - pairing).abs());
    }
    pass_if(
        worst <= 1e-6 && fy <= 1e-6,
        format!("max |g_numeric - g| = {worst:.2e}; max Fenchel-Young residual = {fy:.2e}"),
    )
}

fn criterion_11() -> Verdict {
    let lattice = PathLattice::build(1, 2, 1.0, LatticeMode::FullPath).unwrap();
    let f = DriverSpec::from_catalog("zero").unwrap();
    let phi = TerminalFunctional::endpoint("cross", |x| x[0] * x[1]);
    let sol = solve_backward(&lattice, &f, &phi).unwrap();
    let z_zero = sol.z.value(0, 0).iter().all(|v| *v == 0.0);
    let dm_exact = (0..4).all(|b| sol.dm.get(0, 0, b) == sol.terminal()[b]);
    let mut orth = 0.0f64;
    for k in 0..2 {
        let prod: Vec<f64> = (0..4).map(|b| sol.dm.get(0, 0, b) * lattice.increment(b, k)).collect();
        orth = orth.max(conditional_expectation(&lattice, &prod, 0, 0).unwrap().abs());
    }
    pass_if(
        z_zero && dm_exact && orth <= 1e-12,
        format!(
            "Z={:?} dM={:?} max |E[dM dW^k]| = {orth:.1e}",
            sol.z.value(0, 0),
            sol.dm.level(0)
        ),
    )
}

fn exports(workers: usize) -> Vec<u8> {
    let opts = SolverOptions {
        workers: Some(workers),
        ..SolverOptions::default()
    };
    let mut out = Vec::new();
    for (dn, tn, n, d) in [
        ("quadratic", "maxpath", 8, 2),
        ("exp", "clipped-endpoint", 16, 1),
        ("linear:0.2,1", "digital", 6, 2),
    ] {
        let f = DriverSpec::from_catalog(dn).unwrap();
        let phi = TerminalFunctional::from_catalog(tn).unwrap();
        let lattice = PathLattice::build(n, d, 1.0, LatticeMode::FullPath).unwrap();
        let sol = solve_backward_with(&lattice, &f, &phi, &opts).unwrap();
        write_solution_csv(&sol, &mut out).unwrap();
        if let Ok(r) = duality_gap(&sol, &f) {
            write_dual_csv(&r, &mut out).unwrap();
        }
        let run = picard_solve(&lattice, &f, &phi, 1e-12, 500, &opts).unwrap();
        write_trace_csv(&run.trace, &mut out).unwrap();
    }
    out
}

fn criterion_12() -> Verdict {
    let one = exports(1);
    let again = exports(1);
    let four = exports(4);
    pass_if(
        one == again && one == four,
        format!(
            "{} CSV bytes, identical across 1, 1 and 4 workers: {}",
            one.len(),
            one == four && one == again
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 12] = [
        ("martingale exactness", criterion_1),
        ("constant-driver exactness", criterion_2),
        ("closed-form convergence", criterion_3),
        ("duality", criterion_4),
        ("Z bound", criterion_5),
        ("comparison", criterion_6),
        ("stability", criterion_7),
        ("Picard consistency", criterion_8),
        ("monotone limits", criterion_9),
        ("conjugate correctness", criterion_10),
        ("orthogonal martingale", criterion_11),
        ("determinism", criterion_12),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (tag, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} [{tag}] {name}: {detail}", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
