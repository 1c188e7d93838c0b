//! Dual representation of the solution: for admissible controls `mu`,
//! `Y_i >= E^mu[xi - sum_{j > i} g^N(Y_{j-1}, mu_j) dt | F_i]`, with equality
//! at a control built from subgradients of the driver.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::drivers::{
    conjugate, conjugate_averaged, subgradient_averaged, DriverSpec, SamplingPlan, TerminalFunctional, YMonotonicity,
};
use crate::error::{BsdeError, Result};
use crate::lattice_prob::{AdaptedProcess, ControlProcess, Timing};
use crate::path::{dot, norm, PathView};
use crate::random_walk::{LatticeMode, PathLattice};
use crate::report::{Check, Report};
use crate::solver::{fmt_num, solve_backward_with, SolutionTriple, SolverOptions, StepDriver};

/// Weak and strong duality tolerance with a closed-form conjugate.
pub const GAP_TOL: f64 = 1e-9;
/// Strong duality tolerance when the conjugate is computed numerically.
pub const NUMERIC_GAP_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlSource {
    Supplied,
    Subgradient,
}

#[derive(Clone, Debug, Serialize)]
pub struct NodeGap {
    pub time_index: usize,
    pub node_id: usize,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    /// `min_b (1 + mu.dW_b)` over the edges leaving the node (`inf` at the horizon).
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DualReport {
    pub steps: usize,
    pub source: ControlSource,
    /// `min (1 + mu.dW)` over all edges.
    pub margin: f64,
    pub max_gap: f64,
    pub min_gap: f64,
    pub nodes: Vec<NodeGap>,
}

impl DualReport {
    pub fn root(&self) -> &NodeGap {
        &self.nodes[0]
    }

    /// Weak duality everywhere and, for the optimal control, a small gap.
    pub fn passes(&self, tol: f64) -> bool {
        self.min_gap >= -GAP_TOL && (self.source == ControlSource::Supplied || self.max_gap <= tol)
    }
}

fn conjugate_at(
    sd: &StepDriver<'_>,
    f: &DriverSpec,
    lattice: &PathLattice,
    level: usize,
    node: usize,
    y: f64,
    mu: &[f64],
) -> Result<f64> {
    let path = sd.path(level, node)?;
    let empty = PathView::empty(lattice.dim());
    let view = path.as_ref().map_or(empty, |p| p.view());
    conjugate_averaged(f, lattice.grid(), level, &view, y, mu)
}

/// `E^mu[xi - sum_{j > i} g^N dt | node]` at every node, by backward
/// recursion with transition weights `(1 + mu.dW) / 2^d`. Values are
/// `-inf` where `mu` leaves the domain of `g` on some reachable edge.
pub fn dual_values(sol: &SolutionTriple, f: &DriverSpec, control: &ControlProcess) -> Result<AdaptedProcess> {
    let lat = sol.lattice();
    control.mu().check_against(lat)?;
    let sd = StepDriver::new(lat, f)?;
    let n = lat.steps();
    let m = lat.branching();
    let mut out = AdaptedProcess::zeros(lat, Timing::LeftConstant, 1);
    *out.level_mut(n) = sol.terminal().to_vec();
    for i in (0..n).rev() {
        let dt = lat.grid().dt(i + 1);
        let next = out.level(i + 1).to_vec();
        let mut cur = Vec::with_capacity(lat.level_size(i));
        for p in 0..lat.level_size(i) {
            let g = conjugate_at(&sd, f, lat, i, p, sol.y.scalar(i, p), control.mu().value(i, p))?;
            let mut e = 0.0;
            for b in 0..m {
                e += control.factor(i, p, b) * next[lat.child(i, p, b)];
            }
            cur.push(e / m as f64 - g * dt);
        }
        *out.level_mut(i) = cur;
    }
    Ok(out)
}

pub fn dual_value(
    sol: &SolutionTriple,
    f: &DriverSpec,
    control: &ControlProcess,
    level: usize,
    node: usize,
) -> Result<f64> {
    Ok(dual_values(sol, f, control)?.scalar(level, node))
}

/// Subgradient control `mu*_i in d_z f^N(Y_i, Z_i)` at every non-terminal node.
pub fn optimal_control(sol: &SolutionTriple, f: &DriverSpec) -> Result<ControlProcess> {
    let lat = sol.lattice();
    let sd = StepDriver::new(lat, f)?;
    let mut mu = AdaptedProcess::zeros(lat, Timing::Predictable, lat.dim());
    let mut worst: Option<(usize, usize, f64)> = None;
    let mut max_mu = 0.0f64;
    for i in 0..lat.steps() {
        for p in 0..lat.level_size(i) {
            let path = sd.path(i, p)?;
            let empty = PathView::empty(lat.dim());
            let view = path.as_ref().map_or(empty, |q| q.view());
            let s = subgradient_averaged(f, lat.grid(), i, &view, sol.y.scalar(i, p), sol.z.value(i, p))?;
            max_mu = max_mu.max(norm(&s));
            for b in 0..lat.branching() {
                let factor = 1.0 + (0..lat.dim()).map(|k| s[k] * lat.increment(b, k)).sum::<f64>();
                if !(factor > 0.0) && worst.is_none_or(|w| factor < w.2) {
                    worst = Some((i, p, factor));
                }
            }
            mu.set(i, p, &s);
        }
    }
    if let Some((level, node, factor)) = worst {
        // Observed bound on |mu*|, padded by the finite-difference tolerance
        // so that numeric subgradients do not land exactly on the margin.
        let b = max_mu * (1.0 + 1e-6);
        let required = (b * b * lat.dim() as f64 * lat.horizon()).floor() as usize + 1;
        return Err(BsdeError::InadmissibleOptimizer {
            level,
            node,
            factor,
            max_mu,
            required_steps: required,
        });
    }
    ControlProcess::new(lat, mu)
}

/// Largest Fenchel-Young residual `|Z.mu - f^N - g^N|` of a control.
pub fn fenchel_young_residual(sol: &SolutionTriple, f: &DriverSpec, control: &ControlProcess) -> Result<f64> {
    let lat = sol.lattice();
    let sd = StepDriver::new(lat, f)?;
    let mut worst = 0.0f64;
    for i in 0..lat.steps() {
        for p in 0..lat.level_size(i) {
            let y = sol.y.scalar(i, p);
            let z = sol.z.value(i, p);
            let mu = control.mu().value(i, p);
            let path = sd.path(i, p)?;
            let fv = sd.eval(i, &path, y, z)?;
            let g = conjugate_at(&sd, f, lat, i, p, y, mu)?;
            worst = worst.max((dot(z, mu) - fv - g).abs());
        }
    }
    Ok(worst)
}

fn report_for(
    sol: &SolutionTriple,
    f: &DriverSpec,
    control: &ControlProcess,
    source: ControlSource,
) -> Result<DualReport> {
    let lat = sol.lattice();
    let dual = dual_values(sol, f, control)?;
    let n = lat.steps();
    let mut nodes = Vec::with_capacity(lat.total_nodes());
    let (mut max_gap, mut min_gap) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..=n {
        for p in 0..lat.level_size(i) {
            let primal = sol.y.scalar(i, p);
            let dv = dual.scalar(i, p);
            let gap = primal - dv;
            max_gap = max_gap.max(gap);
            min_gap = min_gap.min(gap);
            let margin = if i < n {
                (0..lat.branching())
                    .map(|b| control.factor(i, p, b))
                    .fold(f64::INFINITY, f64::min)
            } else {
                f64::INFINITY
            };
            nodes.push(NodeGap {
                time_index: i,
                node_id: p,
                primal,
                dual: dv,
                gap,
                margin,
            });
        }
    }
    Ok(DualReport {
        steps: n,
        source,
        margin: control.margin(),
        max_gap,
        min_gap,
        nodes,
    })
}

/// Gap between primal and dual value at every node under `mu*`.
pub fn duality_gap(sol: &SolutionTriple, f: &DriverSpec) -> Result<DualReport> {
    let control = optimal_control(sol, f)?;
    report_for(sol, f, &control, ControlSource::Subgradient)
}

/// Same report for a supplied control.
pub fn dual_report(sol: &SolutionTriple, f: &DriverSpec, control: &ControlProcess) -> Result<DualReport> {
    report_for(sol, f, control, ControlSource::Supplied)
}

/// Predictable control with independent uniform components, scaled so that
/// `|mu.dW| <= fraction` on every edge.
pub fn random_admissible_control(lattice: &PathLattice, seed: u64, fraction: f64) -> Result<ControlProcess> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = lattice.dim();
    let limit = fraction.clamp(0.0, 0.999_999) / (d as f64 * lattice.grid().mesh().sqrt());
    let mut mu = AdaptedProcess::zeros(lattice, Timing::Predictable, d);
    for i in 0..lattice.steps() {
        for p in 0..lattice.level_size(i) {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-limit..=limit)).collect();
            mu.set(i, p, &v);
        }
    }
    ControlProcess::new(lattice, mu)
}

#[derive(Clone, Debug, Serialize)]
pub struct DualAttempt {
    pub steps: usize,
    pub report: Option<DualReport>,
    pub error: Option<String>,
}

/// Duality gap at `steps`; when the subgradient control is inadmissible,
/// the instance is solved again at the number of steps the error names,
/// up to `max_refinements` times. Every attempt is recorded.
#[allow(clippy::too_many_arguments)]
pub fn duality_gap_with_refinement(
    steps: usize,
    dim: usize,
    horizon: f64,
    mode: LatticeMode,
    f: &DriverSpec,
    phi: &TerminalFunctional,
    options: &SolverOptions,
    max_refinements: usize,
) -> Result<Vec<DualAttempt>> {
    let mut attempts = Vec::new();
    let mut n = steps;
    for _ in 0..=max_refinements {
        let lattice = PathLattice::build(n, dim, horizon, mode)?;
        let sol = solve_backward_with(&lattice, f, phi, options)?;
        match duality_gap(&sol, f) {
            Ok(report) => {
                attempts.push(DualAttempt {
                    steps: n,
                    report: Some(report),
                    error: None,
                });
                return Ok(attempts);
            }
            Err(e @ BsdeError::InadmissibleOptimizer { required_steps, .. }) => {
                attempts.push(DualAttempt {
                    steps: n,
                    report: None,
                    error: Some(e.to_string()),
                });
                n = required_steps.max(n + 1);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(attempts)
}

/// Compares a lower instance `(sol, f)` with an upper one `(sol_up, f_up)`
/// nodewise and samples the one-sided conjugate inequality
/// `(g(y1) - g(y2))^+ <= K (y2 - y1)^+` (or its mirror for decreasing `f`).
pub fn compare_supersolutions(
    sol: &SolutionTriple,
    f: &DriverSpec,
    sol_up: &SolutionTriple,
    f_up: &DriverSpec,
    plan: &SamplingPlan,
) -> Result<Report> {
    let monotone = f.y_monotonicity().ok_or_else(|| {
        BsdeError::Precondition(format!(
            "driver {} has no declared monotonicity in y; comparison needs it",
            f.name()
        ))
    })?;
    sol.lattice().check_same_shape(sol_up.lattice())?;
    sol.y.check_same_shape(&sol_up.y)?;
    let mut report = Report::default();
    let mut worst = 0.0f64;
    let mut at = (0, 0);
    for (i, (a, b)) in sol.y.levels().iter().zip(sol_up.y.levels()).enumerate() {
        for (p, (lo, hi)) in a.iter().zip(b).enumerate() {
            if lo - hi > worst {
                worst = lo - hi;
                at = (i, p);
            }
        }
    }
    report.push(Check::new(
        "upper-dominates",
        worst <= 1e-12,
        format!("max (Y - Y') = {worst:.3e} at level {} node {}", at.0, at.1),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let d = sol.lattice().dim();
    let empty = PathView::empty(d);
    let mut worst = 0.0f64;
    let mut tested = 0;
    for _ in 0..plan.samples {
        let t = rng.gen_range(0.0..=plan.horizon);
        let y1 = rng.gen_range(-plan.y_range..=plan.y_range);
        let y2 = rng.gen_range(-plan.y_range..=plan.y_range);
        let mu: Vec<f64> = (0..d).map(|_| rng.gen_range(-plan.z_range..=plan.z_range)).collect();
        let (g1, g2) = (conjugate(f, t, &empty, y1, &mu), conjugate(f, t, &empty, y2, &mu));
        if !(g1.is_finite() && g2.is_finite()) {
            continue;
        }
        tested += 1;
        let excess = match monotone {
            YMonotonicity::Increasing | YMonotonicity::Independent => {
                (g1 - g2).max(0.0) - f.lipschitz_k * (y2 - y1).max(0.0)
            }
            YMonotonicity::Decreasing => (g2 - g1).max(0.0) - f.lipschitz_k * (y1 - y2).max(0.0),
        };
        worst = worst.max(excess);
    }
    report.push(Check::new(
        "conjugate-one-sided-lipschitz",
        worst <= 1e-9,
        format!("{tested} finite samples, max excess {worst:.3e}"),
    ));

    let mut order = 0.0f64;
    for _ in 0..plan.samples {
        let t = rng.gen_range(0.0..=plan.horizon);
        let y = rng.gen_range(-plan.y_range..=plan.y_range);
        let z: Vec<f64> = (0..d).map(|_| rng.gen_range(-plan.z_range..=plan.z_range)).collect();
        order = order.max(f.eval(t, &empty, y, &z) - f_up.eval(t, &empty, y, &z));
    }
    report.push(Check::new(
        "driver-order",
        order <= 1e-12,
        format!("max sampled (f - f') = {order:.3e}"),
    ));
    Ok(report)
}

/// CSV `time_index,node_id,primal,dual,gap,margin`.
pub fn write_dual_csv<W: Write>(report: &DualReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "time_index,node_id,primal,dual,gap,margin")?;
    for g in &report.nodes {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            g.time_index,
            g.node_id,
            fmt_num(g.primal),
            fmt_num(g.dual),
            fmt_num(g.gap),
            fmt_num(g.margin)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::solve_backward;

    fn solve(n: usize, f: &str, phi: &str) -> (SolutionTriple, DriverSpec) {
        let lat = PathLattice::build(n, 1, 1.0, LatticeMode::FullPath).unwrap();
        let f = DriverSpec::from_catalog(f).unwrap();
        let phi = TerminalFunctional::from_catalog(phi).unwrap();
        (solve_backward(&lat, &f, &phi).unwrap(), f)
    }

    #[test]
    fn quadratic_two_steps() {
        let (sol, f) = solve(2, "quadratic", "endpoint");
        let zero = ControlProcess::zero(sol.lattice());
        assert!(dual_value(&sol, &f, &zero, 0, 0).unwrap().abs() < 1e-15);
        let report = duality_gap(&sol, &f).unwrap();
        assert!((report.root().dual - 0.5).abs() < 1e-14);
        assert!(report.max_gap.abs() < 1e-9);
    }

    #[test]
    fn one_step_optimizer_is_inadmissible() {
        let (sol, f) = solve(1, "quadratic", "endpoint");
        match optimal_control(&sol, &f).unwrap_err() {
            BsdeError::InadmissibleOptimizer { required_steps, .. } => assert_eq!(required_steps, 2),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn zero_driver_has_no_gap() {
        let (sol, f) = solve(3, "zero", "maxpath");
        let r = duality_gap(&sol, &f).unwrap();
        assert!(r.max_gap.abs() <= 1e-15 && r.min_gap.abs() <= 1e-15);
    }

    #[test]
    fn quartic_refines_to_admissible_steps() {
        let f = DriverSpec::from_catalog("quartic").unwrap().without_analytic();
        let phi = TerminalFunctional::from_catalog("endpoint").unwrap();
        let runs =
            duality_gap_with_refinement(4, 1, 1.0, LatticeMode::FullPath, &f, &phi, &SolverOptions::default(), 3)
                .unwrap();
        assert_eq!(runs.len(), 2);
        assert!(runs[0].error.is_some());
        assert_eq!(runs[1].steps, 17);
        let r = runs[1].report.as_ref().unwrap();
        assert!(r.max_gap.abs() <= NUMERIC_GAP_TOL, "{}", r.max_gap);
    }

    #[test]
    fn shifted_driver_keeps_optimizer() {
        let (sol, f) = solve(3, "quadratic", "clipped-endpoint");
        let shifted = f.plus_constant(0.3);
        let a = optimal_control(&sol, &f).unwrap();
        let b = optimal_control(&sol, &shifted).unwrap();
        assert_eq!(a.mu(), b.mu());
    }
}
