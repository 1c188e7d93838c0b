//! Lipschitz approximations of terminal conditions and the limit
//! experiments built on them.
//!
//! The inf-convolution `phi^n(w) = inf_v phi(v) + n |v - w|_inf` is searched
//! over uniform shifts of `w` along a fixed set of directions, refined on
//! each ray, plus whole lattice paths when the lattice is small. For
//! endpoint functionals the shift search is the exact problem
//! `inf_c phi(x + c) + n |c|`; for general functionals the result is an
//! upper bound of the true infimum.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::drivers::{DriverSpec, TerminalFunctional, TerminalKind, YMonotonicity};
use crate::error::{BsdeError, Result};
use crate::path::{sup_distance, OwnedPath, PathView};
use crate::random_walk::PathLattice;
use crate::report::{Check, Report};
use crate::solver::{bmo_estimate, fmt_num, solve_backward_with, SolutionTriple, SolverOptions, TerminalPath};

/// Lattice paths are added as candidates up to this many leaves.
pub const MAX_CANDIDATE_PATHS: usize = 1 << 12;

#[derive(Clone, Debug)]
pub struct SearchPlan {
    /// Grid points per ray.
    pub radial_points: usize,
    /// Bisection and golden-section iterations per refinement.
    pub refine_iters: usize,
    /// Whole paths tried as `v` (same knots as the probed `w`).
    pub candidates: Arc<Vec<OwnedPath>>,
}

impl Default for SearchPlan {
    fn default() -> Self {
        Self {
            radial_points: 64,
            refine_iters: 80,
            candidates: Arc::new(Vec::new()),
        }
    }
}

impl SearchPlan {
    /// Adds every terminal path of a small full-path lattice as a candidate.
    pub fn with_lattice_paths(mut self, lattice: &PathLattice, mode: TerminalPath) -> Result<Self> {
        if !lattice.is_full_path() || lattice.leaf_count() > MAX_CANDIDATE_PATHS {
            return Ok(self);
        }
        let n = lattice.steps();
        let paths = (0..lattice.leaf_count())
            .map(|leaf| match mode {
                TerminalPath::Walk => lattice.linear_path(n, leaf),
                TerminalPath::Shifted => lattice.shifted_path(n, leaf),
            })
            .collect::<Result<Vec<_>>>()?;
        self.candidates = Arc::new(paths);
        Ok(self)
    }
}

fn directions(d: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for k in 0..d {
        for s in [-1.0, 1.0] {
            let mut e = vec![0.0; d];
            e[k] = s;
            dirs.push(e);
        }
    }
    if (2..=8).contains(&d) {
        let scale = 1.0 / (d as f64).sqrt();
        for mask in 0..(1usize << d) {
            dirs.push(
                (0..d)
                    .map(|k| if mask >> k & 1 == 1 { scale } else { -scale })
                    .collect(),
            );
        }
    }
    dirs
}

/// Minimizes `h(r) + n r` over `r in [0, r_max]` on a grid with local
/// refinement. `h(0)` is always among the candidates.
fn ray_minimum(h: &dyn Fn(f64) -> f64, n: f64, r_max: f64, plan: &SearchPlan) -> f64 {
    let k = plan.radial_points.max(2);
    let radii: Vec<f64> = (0..=k).map(|j| r_max * j as f64 / k as f64).collect();
    let values: Vec<f64> = radii.iter().map(|&r| h(r)).collect();
    let total = |j: usize| values[j] + n * radii[j];
    let mut best = (0..=k).map(total).fold(f64::INFINITY, f64::min);
    for j in 1..=k {
        // Drop of h inside (r_{j-1}, r_j]: find where it happens.
        if values[j] < values[j - 1] {
            let target = values[j];
            let (mut lo, mut hi) = (radii[j - 1], radii[j]);
            for _ in 0..plan.refine_iters {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if h(mid) <= target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            best = best.min(h(hi) + n * hi);
        }
    }
    let j = (0..=k).min_by(|&a, &b| total(a).total_cmp(&total(b))).unwrap_or(0);
    let (mut a, mut b) = (radii[j.saturating_sub(1)], radii[(j + 1).min(k)]);
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let g = |r: f64| h(r) + n * r;
    for _ in 0..plan.refine_iters {
        let c = b - inv_phi * (b - a);
        let d = a + inv_phi * (b - a);
        let (gc, gd) = (g(c), g(d));
        best = best.min(gc).min(gd);
        if gc <= gd {
            b = d;
        } else {
            a = c;
        }
    }
    best
}

fn require_bound(phi: &TerminalFunctional) -> Result<f64> {
    phi.bound.ok_or_else(|| {
        BsdeError::Precondition(format!(
            "terminal {} has no declared bound; the inf-convolution needs one",
            phi.name()
        ))
    })
}

/// `inf_v phi(v) + n |v - w|_inf` by the restricted search described in the
/// module documentation. Never exceeds `phi(w)`.
pub fn inf_convolution(phi: &TerminalFunctional, n: f64, w: &PathView<'_>, plan: &SearchPlan) -> Result<f64> {
    let bound = require_bound(phi)?;
    if !(n > 0.0) {
        return Err(BsdeError::Domain(format!("level must be positive, got {n}")));
    }
    Ok(search(phi, n, bound, w, plan))
}

fn search(phi: &TerminalFunctional, n: f64, bound: f64, w: &PathView<'_>, plan: &SearchPlan) -> f64 {
    let r_max = 2.0 * bound / n;
    let d = w.dim();
    let owned = OwnedPath::from(*w);
    let mut best = phi.evaluate(w);
    for u in directions(d) {
        let h = |r: f64| {
            let shift: Vec<f64> = u.iter().map(|e| e * r).collect();
            match phi.kind() {
                TerminalKind::Endpoint => {
                    let x: Vec<f64> = match w.last() {
                        Some(x) => x.iter().zip(&shift).map(|(a, b)| a + b).collect(),
                        None => shift,
                    };
                    phi.evaluate_endpoint(&x)
                }
                TerminalKind::Path => phi.evaluate(&owned.shifted(&shift).view()),
            }
        };
        best = best.min(ray_minimum(&h, n, r_max, plan));
    }
    if phi.kind() == TerminalKind::Path {
        for v in plan.candidates.iter() {
            if v.times.len() == w.len() && v.dim == d {
                let view = v.view();
                best = best.min(phi.evaluate(&view) + n * sup_distance(&view, w));
            }
        }
    }
    best
}

/// `phi^n` as a terminal functional with Lipschitz constant `n`.
pub fn inf_convolution_functional(phi: &TerminalFunctional, n: f64, plan: &SearchPlan) -> Result<TerminalFunctional> {
    let bound = require_bound(phi)?;
    if !(n > 0.0) {
        return Err(BsdeError::Domain(format!("level must be positive, got {n}")));
    }
    let name = format!("{}^{n}", phi.name());
    let base = phi.clone();
    let plan = plan.clone();
    let approx = match phi.kind() {
        TerminalKind::Endpoint => TerminalFunctional::endpoint(name, move |x| {
            let times = [0.0];
            search(&base, n, bound, &PathView::new(&times, x, x.len()), &plan)
        }),
        TerminalKind::Path => TerminalFunctional::path(name, move |w| search(&base, n, bound, w, &plan)),
    };
    Ok(approx.with_lipschitz(n).with_bound(bound))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LadderMode {
    /// Inf-convolutions, increasing in the level.
    Monotone,
    /// A user-supplied sequence converging uniformly.
    Uniform,
}

#[derive(Clone, Debug)]
pub struct ApproximationLadder {
    pub base: TerminalFunctional,
    pub levels: Vec<f64>,
    pub approximants: Vec<TerminalFunctional>,
    pub mode: LadderMode,
}

impl ApproximationLadder {
    pub fn monotone(base: &TerminalFunctional, levels: &[f64], plan: &SearchPlan) -> Result<Self> {
        let approximants = levels
            .iter()
            .map(|&n| inf_convolution_functional(base, n, plan))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            base: base.clone(),
            levels: levels.to_vec(),
            approximants,
            mode: LadderMode::Monotone,
        })
    }

    pub fn uniform(base: &TerminalFunctional, levels: &[f64], approximants: Vec<TerminalFunctional>) -> Result<Self> {
        if levels.len() != approximants.len() {
            return Err(BsdeError::Domain("one approximant per level is required".into()));
        }
        Ok(Self {
            base: base.clone(),
            levels: levels.to_vec(),
            approximants,
            mode: LadderMode::Uniform,
        })
    }

    pub fn levels_increasing(&self) -> bool {
        self.levels.windows(2).all(|w| w[0] < w[1])
    }

    /// Monotone order and level Lipschitz constants on the given paths.
    pub fn verify_on(&self, paths: &[OwnedPath]) -> Report {
        let mut report = Report::default();
        let mut order = 0.0f64;
        let mut lip = 0.0f64;
        for v in paths {
            let w = v.view();
            let values: Vec<f64> = self.approximants.iter().map(|a| a.evaluate(&w)).collect();
            let top = self.base.evaluate(&w);
            for pair in values.windows(2) {
                order = order.max(pair[0] - pair[1]);
            }
            if let Some(last) = values.last() {
                order = order.max(last - top);
            }
        }
        for (a, n) in self.approximants.iter().zip(&self.levels) {
            for pair in paths.windows(2) {
                let (p, q) = (pair[0].view(), pair[1].view());
                let dist = sup_distance(&p, &q);
                let diff = (a.evaluate(&p) - a.evaluate(&q)).abs();
                lip = lip.max(diff - n * dist);
            }
        }
        if self.mode == LadderMode::Monotone {
            report.push(Check::new(
                "ladder-monotone",
                order <= 1e-12 && self.levels_increasing(),
                format!(
                    "max order violation {order:.3e}, levels increasing: {}",
                    self.levels_increasing()
                ),
            ));
        }
        report.push(Check::new(
            "ladder-lipschitz",
            lip <= 1e-9,
            format!("max excess over n |v - w| {lip:.3e}"),
        ));
        report
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelRow {
    pub level: f64,
    pub y0: f64,
    /// `sup_node |Y^{n_j} - Y^{n_{j-1}}|`, absent for the first level.
    pub sup_increment: Option<f64>,
    pub bmo_z: f64,
    /// Lattice stability bound against every other level (uniform mode).
    pub cauchy_bound_ok: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LimitReport {
    pub rows: Vec<LevelRow>,
    pub checks: Report,
    /// Root value at the last level.
    pub limit_estimate: f64,
}

fn solve_levels(
    lattice: &PathLattice,
    f: &DriverSpec,
    ladder: &ApproximationLadder,
    options: &SolverOptions,
) -> Result<Vec<SolutionTriple>> {
    ladder
        .approximants
        .iter()
        .map(|phi| solve_backward_with(lattice, f, phi, options))
        .collect()
}

/// Solves every level and checks that `Y` increases with the level.
pub fn monotone_limit_experiment(
    lattice: &PathLattice,
    f: &DriverSpec,
    ladder: &ApproximationLadder,
    options: &SolverOptions,
) -> Result<LimitReport> {
    match f.y_monotonicity() {
        Some(YMonotonicity::Increasing | YMonotonicity::Independent) => {}
        _ => {
            return Err(BsdeError::Precondition(format!(
                "driver {} is not declared increasing in y",
                f.name()
            )))
        }
    }
    if ladder.mode != LadderMode::Monotone {
        return Err(BsdeError::Precondition(
            "monotone experiment needs a monotone ladder".into(),
        ));
    }
    let sols = solve_levels(lattice, f, ladder, options)?;
    let mut checks = Report::default();
    checks.push(Check::new(
        "levels-increasing",
        ladder.levels_increasing(),
        format!("levels {:?}", ladder.levels),
    ));
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    let mut offender = String::from("none");
    let mut increments = Vec::new();
    for (j, sol) in sols.iter().enumerate() {
        let mut sup_increment = None;
        if j > 0 {
            let prev = &sols[j - 1];
            let mut sup = 0.0f64;
            for (i, (a, b)) in prev.y.levels().iter().zip(sol.y.levels()).enumerate() {
                for (p, (lo, hi)) in a.iter().zip(b).enumerate() {
                    sup = sup.max((hi - lo).abs());
                    if lo - hi > worst {
                        worst = lo - hi;
                        offender = format!(
                            "level n={} node {} at time index {i}",
                            ladder.levels[j],
                            lattice.node_label(i, p)
                        );
                    }
                }
            }
            increments.push(sup);
            sup_increment = Some(sup);
        }
        rows.push(LevelRow {
            level: ladder.levels[j],
            y0: sol.y0(),
            sup_increment,
            bmo_z: bmo_estimate(sol),
            cauchy_bound_ok: None,
        });
    }
    checks.push(Check::new(
        "nondecreasing-in-level",
        worst <= 1e-12,
        format!("max decrease {worst:.3e} ({offender})"),
    ));
    let shrinking = increments.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    checks.push(Check::new(
        "increments-nonincreasing",
        shrinking,
        format!("increments {increments:?}"),
    ));
    Ok(LimitReport {
        limit_estimate: sols.last().map_or(f64::NAN, |s| s.y0()),
        rows,
        checks,
    })
}

/// Solves every level and checks the lattice stability bound
/// `sup |Y^m - Y^n| <= exp(K T) max |xi^m - xi^n|` for all pairs.
pub fn uniform_limit_experiment(
    lattice: &PathLattice,
    f: &DriverSpec,
    ladder: &ApproximationLadder,
    options: &SolverOptions,
) -> Result<LimitReport> {
    let sols = solve_levels(lattice, f, ladder, options)?;
    let factor = (f.lipschitz_k * lattice.horizon()).exp();
    let count = sols.len();
    let mut ok = vec![true; count];
    let mut worst = f64::NEG_INFINITY;
    let mut z_cauchy = 0.0f64;
    for a in 0..count {
        for b in a + 1..count {
            let dy = sols[a].y.sup_distance(&sols[b].y)?;
            let dxi = sols[a]
                .terminal()
                .iter()
                .zip(sols[b].terminal())
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            let excess = dy - (factor * dxi + 1e-9);
            worst = worst.max(excess);
            if excess > 0.0 {
                ok[a] = false;
                ok[b] = false;
            }
            z_cauchy = z_cauchy.max(sols[a].z.sup_distance(&sols[b].z)?);
        }
    }
    let rows: Vec<LevelRow> = sols
        .iter()
        .enumerate()
        .map(|(j, sol)| LevelRow {
            level: ladder.levels[j],
            y0: sol.y0(),
            sup_increment: (j > 0).then(|| sols[j - 1].y.sup_distance(&sol.y).unwrap_or(f64::NAN)),
            bmo_z: bmo_estimate(sol),
            cauchy_bound_ok: Some(ok[j]),
        })
        .collect();
    let mut checks = Report::default();
    checks.push(Check::new(
        "stability-bound",
        ok.iter().all(|v| *v),
        if count < 2 {
            "fewer than two levels".to_string()
        } else {
            format!("max excess over exp(KT) |dxi| + 1e-9: {worst:.3e}")
        },
    ));
    checks.push(Check::not_checked(
        "z-cauchy",
        format!("max nodewise |Z^m - Z^n| = {z_cauchy:.6e} (reported only)"),
    ));
    Ok(LimitReport {
        limit_estimate: sols.last().map_or(f64::NAN, |s| s.y0()),
        rows,
        checks,
    })
}

/// CSV `level,Y0,sup_increment,bmo_Z,cauchy_bound_ok`.
pub fn write_limit_csv<W: Write>(report: &LimitReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "level,Y0,sup_increment,bmo_Z,cauchy_bound_ok")?;
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            fmt_num(r.level),
            fmt_num(r.y0),
            r.sup_increment.map(fmt_num).unwrap_or_default(),
            fmt_num(r.bmo_z),
            r.cauchy_bound_ok.map(|b| b.to_string()).unwrap_or_default()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random_walk::LatticeMode;

    fn at(x: f64) -> f64 {
        let phi = TerminalFunctional::from_catalog("digital").unwrap();
        let times = [0.0, 1.0];
        let knots = [0.0, x];
        inf_convolution(&phi, 3.0, &PathView::new(&times, &knots, 1), &SearchPlan::default()).unwrap()
    }

    #[test]
    fn digital_has_closed_form() {
        for x in [-0.5f64, 0.0, 0.01, 0.1, 0.2, 1.0 / 3.0, 0.5, 2.0] {
            let exact = (3.0 * x.max(0.0)).min(1.0);
            assert!((at(x) - exact).abs() < 1e-12, "{x}: {} vs {exact}", at(x));
        }
    }

    #[test]
    fn lipschitz_terminal_is_fixed() {
        let phi = TerminalFunctional::from_catalog("clipped-endpoint").unwrap();
        let times = [0.0, 0.5, 1.0];
        for x in [-2.0, -0.3, 0.0, 0.7, 3.0] {
            let knots = [0.0, 0.1, x];
            let w = PathView::new(&times, &knots, 1);
            let v = inf_convolution(&phi, 1.5, &w, &SearchPlan::default()).unwrap();
            assert!((v - phi.evaluate(&w)).abs() < 1e-12);
        }
    }

    #[test]
    fn unbounded_terminal_is_rejected() {
        let phi = TerminalFunctional::from_catalog("endpoint").unwrap();
        let w = PathView::empty(1);
        assert!(matches!(
            inf_convolution(&phi, 1.0, &w, &SearchPlan::default()),
            Err(BsdeError::Precondition(_))
        ));
    }

    #[test]
    fn reordered_ladder_is_flagged() {
        let lat = PathLattice::build(4, 1, 1.0, LatticeMode::FullPath).unwrap();
        let f = DriverSpec::from_catalog("quadratic").unwrap();
        let phi = TerminalFunctional::from_catalog("digital").unwrap();
        let ladder = ApproximationLadder::monotone(&phi, &[4.0, 2.0, 1.0], &SearchPlan::default()).unwrap();
        let r = monotone_limit_experiment(&lat, &f, &ladder, &SolverOptions::default()).unwrap();
        assert!(!r.checks.all_passed());
    }
}
