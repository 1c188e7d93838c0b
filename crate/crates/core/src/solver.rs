//! Backward recursion for the difference equation on a lattice.
//!
//! At a node of level `i` with children values `Y_{i+1}`:
//! `Z = E[Y_{i+1} dW | node] / dt`, `Y_i` solves
//! `y = E[Y_{i+1} | node] + f^N(y, Z) dt` and the orthogonal remainder is
//! `dM = Y_{i+1} - E[Y_{i+1} | node] - Z.dW`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::drivers::{average_driver, DriverSpec, TerminalFunctional, TerminalKind};
use crate::error::{BsdeError, Result};
use crate::lattice_prob::{cond_exp_unchecked, sup_cumulative, AdaptedProcess, EdgeValues, Timing};
use crate::parallel::Workers;
use crate::path::{OwnedPath, PathView};
use crate::random_walk::{PathLattice, TimeGrid};
use crate::report::{Check, Report};

/// Nodes handed to one worker at a time.
pub(crate) const CHUNK: usize = 4096;

/// Which interpolation of the walk the terminal functional sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalPath {
    /// Linear interpolation through `W_{t_0}, ..., W_{t_N}`.
    #[default]
    Walk,
    /// The shifted interpolation, lagging the walk by one step.
    Shifted,
}

impl std::str::FromStr for TerminalPath {
    type Err = BsdeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "walk" => Ok(Self::Walk),
            "shifted" => Ok(Self::Shifted),
            _ => Err(BsdeError::Domain(format!("unknown terminal path {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Relative tolerance of the per-node implicit solve.
    pub tol: f64,
    pub max_iter: usize,
    pub terminal_path: TerminalPath,
    /// Worker threads; `None` defers to the environment.
    pub workers: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 200,
            terminal_path: TerminalPath::Walk,
            workers: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SolveStats {
    pub max_iterations: usize,
    /// Largest `|y - E[Y_{i+1}|node] - f^N dt|` over nodes.
    pub max_residual: f64,
    /// Nodes where the fixed-point iteration stalled and bisection was used.
    pub bisections: usize,
}

impl SolveStats {
    fn merge(&mut self, o: &SolveStats) {
        self.max_iterations = self.max_iterations.max(o.max_iterations);
        self.max_residual = self.max_residual.max(o.max_residual);
        self.bisections += o.bisections;
    }
}

/// `(Y, Z, M)` on a lattice.
///
/// `Y` is stored for levels `0..=N`. `Z` is predictable and stored at the
/// parent level. `M` is stored through its increments on edges.
#[derive(Clone, Debug)]
pub struct SolutionTriple {
    lattice: PathLattice,
    pub y: AdaptedProcess,
    pub z: AdaptedProcess,
    pub dm: EdgeValues,
    /// `f^N(t_{i+1}, W, Y_i, Z_i)` at every non-terminal node.
    pub driver_values: AdaptedProcess,
    pub stats: SolveStats,
}

impl SolutionTriple {
    pub fn lattice(&self) -> &PathLattice {
        &self.lattice
    }

    pub fn y0(&self) -> f64 {
        self.y.scalar(0, 0)
    }

    pub fn terminal(&self) -> &[f64] {
        self.y.level(self.lattice.steps())
    }

    pub fn sup_z(&self) -> f64 {
        self.z.sup_norm()
    }

    /// `M` nodewise with `M_0 = 0` (full-path only).
    pub fn martingale(&self) -> Result<AdaptedProcess> {
        if !self.lattice.is_full_path() {
            return Err(BsdeError::Structural(
                "M is path dependent; only increments exist on a recombining lattice".into(),
            ));
        }
        let mut m = AdaptedProcess::zeros(&self.lattice, Timing::LeftConstant, 1);
        for i in 0..self.lattice.steps() {
            let prev = m.level(i).to_vec();
            let next = m.level_mut(i + 1);
            for (c, v) in next.iter_mut().enumerate() {
                *v = prev[c >> self.lattice.dim()] + self.dm.level(i)[c];
            }
        }
        Ok(m)
    }

    /// Per-edge `Z.dW`.
    pub fn stochastic_integral_increments(&self) -> EdgeValues {
        let lat = &self.lattice;
        let mut inc = EdgeValues::zeros(lat);
        let m = lat.branching();
        for i in 0..lat.steps() {
            for p in 0..lat.level_size(i) {
                let z = self.z.value(i, p);
                for b in 0..m {
                    inc.level_mut(i)[p * m + b] = (0..lat.dim()).map(|k| z[k] * lat.increment(b, k)).sum();
                }
            }
        }
        inc
    }

    /// `sup` over paths and times of `|M_t|`.
    pub fn sup_m(&self) -> f64 {
        sup_cumulative(&self.lattice, &self.dm)
    }

    /// Checks the defining equation, the terminal condition and the
    /// martingale and orthogonality properties of `dM`.
    pub fn check_invariants(&self, f: &DriverSpec, xi: &[f64]) -> Report {
        let lat = &self.lattice;
        let mut report = Report::default();
        let n = lat.steps();
        let scale = 1.0 + self.y.sup_norm();

        let term = self
            .terminal()
            .iter()
            .zip(xi)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        report.push(Check::new(
            "terminal-condition",
            term == 0.0 && xi.len() == self.terminal().len(),
            format!("max |Y_T - xi| = {term:.3e}"),
        ));

        let sd = match StepDriver::new(lat, f) {
            Ok(sd) => sd,
            Err(e) => {
                report.push(Check::new("equation-residual", false, e.to_string()));
                return report;
            }
        };
        let m = lat.branching();
        let sqrt_dt = lat.sqrt_dt();
        let mut eq_res = 0.0f64;
        let mut mean = 0.0f64;
        let mut orth = 0.0f64;
        let mut eval_error = None;
        for i in 0..n {
            let dt = lat.grid().dt(i + 1);
            let ynext = self.y.level(i + 1);
            for p in 0..lat.level_size(i) {
                let yp = self.y.scalar(i, p);
                let z = self.z.value(i, p);
                let fv = match sd.path(i, p).and_then(|path| sd.eval(i, &path, yp, z)) {
                    Ok(v) => v,
                    Err(e) => {
                        eval_error.get_or_insert(e.to_string());
                        continue;
                    }
                };
                let mut sum = 0.0;
                let mut cov = vec![0.0; lat.dim()];
                for b in 0..m {
                    let c = lat.child(i, p, b);
                    let dm = self.dm.get(i, p, b);
                    let zdw: f64 = (0..lat.dim()).map(|k| z[k] * lat.sign(b, k) * sqrt_dt).sum();
                    eq_res = eq_res.max((ynext[c] - yp + fv * dt - zdw - dm).abs());
                    sum += dm;
                    for (k, cv) in cov.iter_mut().enumerate() {
                        *cv += dm * lat.sign(b, k) * sqrt_dt;
                    }
                }
                mean = mean.max((sum / m as f64).abs());
                for cv in cov {
                    orth = orth.max((cv / m as f64).abs());
                }
            }
        }
        let detail = match eval_error {
            Some(e) => format!("driver evaluation failed: {e}"),
            None => format!("max residual {eq_res:.3e}"),
        };
        report.push(Check::new("equation-residual", eq_res <= 1e-10, detail));
        report.push(Check::new(
            "dm-conditional-mean",
            mean <= 1e-12 * scale,
            format!("max |E[dM | node]| = {mean:.3e}"),
        ));
        report.push(Check::new(
            "dm-orthogonal",
            orth <= 1e-12 * scale,
            format!("max |E[dM dW^k | node]| = {orth:.3e}"),
        ));
        report
    }
}

/// Evaluates `f^N` at a node with the path it is allowed to see.
pub(crate) struct StepDriver<'a> {
    lattice: &'a PathLattice,
    f: &'a DriverSpec,
}

impl<'a> StepDriver<'a> {
    pub(crate) fn new(lattice: &'a PathLattice, f: &'a DriverSpec) -> Result<Self> {
        if f.is_path_dependent() && !lattice.is_full_path() {
            return Err(BsdeError::Structural(format!(
                "driver {} is path dependent; use a full-path lattice",
                f.name()
            )));
        }
        Ok(Self { lattice, f })
    }

    pub(crate) fn path(&self, level: usize, node: usize) -> Result<Option<OwnedPath>> {
        if self.f.is_path_dependent() {
            self.lattice.shifted_path(level, node).map(Some)
        } else {
            Ok(None)
        }
    }

    #[inline]
    pub(crate) fn eval(&self, level: usize, path: &Option<OwnedPath>, y: f64, z: &[f64]) -> Result<f64> {
        let empty = PathView::empty(self.lattice.dim());
        let view = path.as_ref().map_or(empty, |p| p.view());
        average_driver(self.f, self.lattice.grid(), level, &view, y, z)
    }
}

/// `xi` at every leaf.
pub fn terminal_values(lattice: &PathLattice, phi: &TerminalFunctional, mode: TerminalPath) -> Result<Vec<f64>> {
    terminal_values_with(lattice, phi, mode, &Workers::new(None))
}

pub(crate) fn terminal_values_with(
    lattice: &PathLattice,
    phi: &TerminalFunctional,
    mode: TerminalPath,
    workers: &Workers,
) -> Result<Vec<f64>> {
    let n = lattice.steps();
    if !lattice.is_full_path() && (phi.kind() != TerminalKind::Endpoint || mode != TerminalPath::Walk) {
        return Err(BsdeError::Structural(format!(
            "terminal {} needs path history; use a full-path lattice",
            phi.name()
        )));
    }
    let leaves = lattice.leaf_count();
    let chunks = workers.map_chunks(leaves, CHUNK, |range| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(range.len());
        let mut w = vec![0.0; lattice.dim()];
        for leaf in range {
            let v = match (phi.kind(), mode) {
                (TerminalKind::Endpoint, TerminalPath::Walk) => {
                    lattice.walk_value(n, leaf, &mut w);
                    phi.evaluate_endpoint(&w)
                }
                (_, TerminalPath::Walk) => phi.evaluate(&lattice.linear_path(n, leaf)?.view()),
                (_, TerminalPath::Shifted) => phi.evaluate(&lattice.shifted_path(n, leaf)?.view()),
            };
            out.push(v);
        }
        Ok(out)
    });
    let mut xi = Vec::with_capacity(leaves);
    for c in chunks {
        xi.extend(c?);
    }
    Ok(xi)
}

fn check_step_size(lattice: &PathLattice, f: &DriverSpec) -> Result<()> {
    let dt = lattice.grid().mesh();
    let k_dt = f.lipschitz_k * dt;
    if k_dt >= 1.0 {
        return Err(BsdeError::StepSize {
            lipschitz: f.lipschitz_k,
            dt,
            k_dt,
            min_steps: (f.lipschitz_k * lattice.horizon()).floor() as usize + 1,
        });
    }
    Ok(())
}

/// Solves with default options.
pub fn solve_backward(lattice: &PathLattice, f: &DriverSpec, phi: &TerminalFunctional) -> Result<SolutionTriple> {
    solve_backward_with(lattice, f, phi, &SolverOptions::default())
}

pub fn solve_backward_with(
    lattice: &PathLattice,
    f: &DriverSpec,
    phi: &TerminalFunctional,
    options: &SolverOptions,
) -> Result<SolutionTriple> {
    check_step_size(lattice, f)?;
    StepDriver::new(lattice, f)?;
    let workers = Workers::new(options.workers);
    let xi = terminal_values_with(lattice, phi, options.terminal_path, &workers)?;
    solve_terminal_with(lattice, f, xi, options, &workers)
}

/// Solves for an explicit vector of leaf values.
pub fn solve_with_terminal(
    lattice: &PathLattice,
    f: &DriverSpec,
    xi: Vec<f64>,
    options: &SolverOptions,
) -> Result<SolutionTriple> {
    solve_terminal_with(lattice, f, xi, options, &Workers::new(options.workers))
}

struct NodeSolve {
    y: f64,
    fval: f64,
    iterations: usize,
    residual: f64,
    bisected: bool,
}

/// `y = m + F(y) dt` for a map `F` that is `K`-Lipschitz with `K dt < 1`.
fn implicit_solve(
    m: f64,
    dt: f64,
    k: f64,
    options: &SolverOptions,
    mut drive: impl FnMut(f64) -> Result<f64>,
) -> Result<NodeSolve> {
    let mut y = m;
    let mut last = f64::NAN;
    for it in 1..=options.max_iter {
        let fv = drive(y)?;
        let next = m + fv * dt;
        let step = (next - y).abs();
        last = step;
        // The distance of `next` to the fixed point is at most K dt / (1 - K dt) * step.
        let contraction = (1.0 - k * dt).max(f64::EPSILON);
        if step <= options.tol * contraction * (1.0 + m.abs() + (fv * dt).abs()) {
            let fnext = drive(next)?;
            return Ok(NodeSolve {
                y: next,
                fval: fnext,
                iterations: it,
                residual: (next - m - fnext * dt).abs(),
                bisected: false,
            });
        }
        if !next.is_finite() {
            break;
        }
        y = next;
    }
    // Root of the increasing map y - m - F(y) dt, which lies within
    // |F(m)| dt / (1 - K dt) of m.
    let f0 = drive(m)?;
    let mut radius = (f0 * dt).abs() / (1.0 - k * dt) * (1.0 + 1e-9) + f64::MIN_POSITIVE;
    let phi = |y: f64, fv: f64| y - m - fv * dt;
    let (mut lo, mut hi) = (m - radius, m + radius);
    for _ in 0..64 {
        let (flo, fhi) = (drive(lo)?, drive(hi)?);
        if phi(lo, flo) <= 0.0 && phi(hi, fhi) >= 0.0 {
            break;
        }
        radius *= 2.0;
        lo = m - radius;
        hi = m + radius;
    }
    let mut iterations = options.max_iter;
    for _ in 0..400 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(mid, drive(mid)?) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let y = 0.5 * (lo + hi);
    let fv = drive(y)?;
    let residual = phi(y, fv).abs();
    if !(residual <= options.tol.max(1e-15) * 1e3 * (1.0 + m.abs() + (fv * dt).abs())) {
        return Err(BsdeError::NonConvergence {
            level: 0,
            node: 0,
            residual: if residual.is_finite() { residual } else { last },
            iterations,
        });
    }
    Ok(NodeSolve {
        y,
        fval: fv,
        iterations,
        residual,
        bisected: true,
    })
}

struct LevelChunk {
    y: Vec<f64>,
    z: Vec<f64>,
    dm: Vec<f64>,
    fval: Vec<f64>,
    stats: SolveStats,
}

pub(crate) fn solve_terminal_with(
    lattice: &PathLattice,
    f: &DriverSpec,
    xi: Vec<f64>,
    options: &SolverOptions,
    workers: &Workers,
) -> Result<SolutionTriple> {
    check_step_size(lattice, f)?;
    let sd = StepDriver::new(lattice, f)?;
    let n = lattice.steps();
    let d = lattice.dim();
    let m = lattice.branching();
    if xi.len() != lattice.leaf_count() {
        return Err(BsdeError::Structural(format!(
            "terminal vector has {} entries, lattice has {} leaves",
            xi.len(),
            lattice.leaf_count()
        )));
    }
    let sqrt_dt = lattice.sqrt_dt();
    let mut y_levels: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut z_levels: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut dm_levels: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut f_levels: Vec<Vec<f64>> = vec![Vec::new(); n];
    y_levels[n] = xi;
    let mut stats = SolveStats::default();

    for i in (0..n).rev() {
        let dt = lattice.grid().dt(i + 1);
        let ynext = &y_levels[i + 1];
        let size = lattice.level_size(i);
        let chunks = workers.map_chunks(size, CHUNK, |range| -> Result<LevelChunk> {
            let len = range.len();
            let mut out = LevelChunk {
                y: Vec::with_capacity(len),
                z: Vec::with_capacity(len * d),
                dm: Vec::with_capacity(len * m),
                fval: Vec::with_capacity(len),
                stats: SolveStats::default(),
            };
            let mut z = vec![0.0; d];
            for p in range {
                let mean = cond_exp_unchecked(lattice, ynext, i, p);
                z.iter_mut().for_each(|v| *v = 0.0);
                for b in 0..m {
                    let dy = ynext[lattice.child(i, p, b)] - mean;
                    for (k, zk) in z.iter_mut().enumerate() {
                        *zk += dy * lattice.sign(b, k);
                    }
                }
                z.iter_mut().for_each(|v| *v /= m as f64 * sqrt_dt);
                let path = sd.path(i, p)?;
                let solved = implicit_solve(mean, dt, f.lipschitz_k, options, |y| sd.eval(i, &path, y, &z)).map_err(
                    |e| match e {
                        BsdeError::NonConvergence {
                            residual, iterations, ..
                        } => BsdeError::NonConvergence {
                            level: i,
                            node: p,
                            residual,
                            iterations,
                        },
                        other => other,
                    },
                )?;
                for b in 0..m {
                    let c = lattice.child(i, p, b);
                    let zdw: f64 = (0..d).map(|k| z[k] * lattice.sign(b, k) * sqrt_dt).sum();
                    out.dm.push(ynext[c] - mean - zdw);
                }
                out.y.push(solved.y);
                out.z.extend_from_slice(&z);
                out.fval.push(solved.fval);
                out.stats.max_iterations = out.stats.max_iterations.max(solved.iterations);
                out.stats.max_residual = out.stats.max_residual.max(solved.residual);
                out.stats.bisections += solved.bisected as usize;
            }
            Ok(out)
        });
        let mut yl = Vec::with_capacity(size);
        let mut zl = Vec::with_capacity(size * d);
        let mut dml = Vec::with_capacity(size * m);
        let mut fl = Vec::with_capacity(size);
        for c in chunks {
            let c = c?;
            yl.extend(c.y);
            zl.extend(c.z);
            dml.extend(c.dm);
            fl.extend(c.fval);
            stats.merge(&c.stats);
        }
        y_levels[i] = yl;
        z_levels[i] = zl;
        dm_levels[i] = dml;
        f_levels[i] = fl;
    }

    Ok(SolutionTriple {
        lattice: lattice.clone(),
        y: AdaptedProcess::from_levels(Timing::LeftConstant, 1, y_levels),
        z: AdaptedProcess::from_levels(Timing::Predictable, d, z_levels),
        dm: EdgeValues::from_levels(m, dm_levels),
        driver_values: AdaptedProcess::from_levels(Timing::Predictable, 1, f_levels),
        stats,
    })
}

/// `2 sqrt(d) (L + K T) exp(K T)`.
pub fn z_bound(l: f64, k: f64, horizon: f64, d: usize) -> f64 {
    2.0 * (d as f64).sqrt() * (l + k * horizon) * (k * horizon).exp()
}

/// Smallest `N` for which the `Z`-bound certificate applies: `K dt < 1`,
/// the discrete Gronwall product stays below `2 exp(K T)`, and subgradients
/// on `|z| <= 2C` give admissible controls, `b(2C) sqrt(d dt) < 1`.
/// `None` if `b` is not declared.
pub fn z_bound_certificate_steps(f: &DriverSpec, l: f64, horizon: f64, d: usize) -> Option<usize> {
    let k = f.lipschitz_k;
    let c = z_bound(l, k, horizon, d);
    let b = f.z_lipschitz(2.0 * c)?;
    let mut n = ((b * b * d as f64 * horizon).floor() as usize + 1).max((k * horizon).floor() as usize + 1);
    loop {
        let dt = horizon / n as f64;
        let gronwall = (1.0 - k * dt).powi(-(n as i32));
        if k * dt < 1.0 && gronwall <= 2.0 * (k * horizon).exp() && b * (d as f64 * dt).sqrt() < 1.0 {
            return Some(n);
        }
        n += 1;
        if n > 1 << 30 {
            return None;
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GronwallEnvelope {
    pub times: Vec<f64>,
    /// `A prod_{j: t_{j-1} > t} (1 - B dt_j)^{-1}` at each grid time.
    pub product: Vec<f64>,
    /// Solution of `X_T = A`, `X_i = A + B sum_{j > i} X_{j-1} dt_j`.
    pub recursion: Vec<f64>,
    /// `product <= 2 A exp(B (T - t))` at every grid time.
    pub bound_holds: bool,
    /// Same bound for the recursion values.
    pub recursion_bound_holds: bool,
}

pub fn gronwall_envelope(a: f64, b: f64, grid: &TimeGrid) -> Result<GronwallEnvelope> {
    let n = grid.steps();
    let mesh = grid.mesh();
    if b * mesh >= 1.0 {
        return Err(BsdeError::StepSize {
            lipschitz: b,
            dt: mesh,
            k_dt: b * mesh,
            min_steps: (b * grid.horizon()).floor() as usize + 1,
        });
    }
    let times = grid.points().to_vec();
    let product: Vec<f64> = (0..=n)
        .map(|i| {
            if i == n {
                return a;
            }
            let mut x = a;
            for j in 1..=n {
                if times[j - 1] > times[i] {
                    x /= 1.0 - b * grid.dt(j);
                }
            }
            x
        })
        .collect();
    let mut recursion = vec![0.0; n + 1];
    recursion[n] = a;
    for i in (0..n).rev() {
        // X_i appears on both sides through the j = i + 1 term.
        let tail: f64 = (i + 2..=n).map(|j| recursion[j - 1] * grid.dt(j)).sum();
        recursion[i] = (a + b * tail) / (1.0 - b * grid.dt(i + 1));
    }
    let cap = |i: usize| 2.0 * a * (b * (grid.horizon() - times[i])).exp();
    let bound_holds = (0..=n).all(|i| product[i] <= cap(i) * (1.0 + 1e-15));
    let recursion_bound_holds = (0..=n).all(|i| recursion[i] <= cap(i) * (1.0 + 1e-15));
    Ok(GronwallEnvelope {
        times,
        product,
        recursion,
        bound_holds,
        recursion_bound_holds,
    })
}

/// `max_node E[sum_{j > i} |Z_j|^2 dt_j | node]`.
pub fn bmo_estimate(sol: &SolutionTriple) -> f64 {
    let lat = sol.lattice();
    let n = lat.steps();
    let mut next = vec![0.0; lat.level_size(n)];
    let mut best = 0.0f64;
    for i in (0..n).rev() {
        let dt = lat.grid().dt(i + 1);
        let cur: Vec<f64> = (0..lat.level_size(i))
            .map(|p| {
                let z2: f64 = sol.z.value(i, p).iter().map(|v| v * v).sum();
                z2 * dt + cond_exp_unchecked(lat, &next, i, p)
            })
            .collect();
        best = cur.iter().fold(best, |m, v| m.max(*v));
        next = cur;
    }
    best
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveSummary {
    pub y0: f64,
    pub sup_z: f64,
    pub bmo_estimate: f64,
    pub max_residual: f64,
    pub max_iterations: usize,
    pub bisections: usize,
}

pub fn summary(sol: &SolutionTriple) -> SolveSummary {
    SolveSummary {
        y0: sol.y0(),
        sup_z: sol.sup_z(),
        bmo_estimate: bmo_estimate(sol),
        max_residual: sol.stats.max_residual,
        max_iterations: sol.stats.max_iterations,
        bisections: sol.stats.bisections,
    }
}

/// 17 significant digits, locale independent.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// CSV with columns `time_index,node_id,Y,Z_1..Z_d,dM`.
///
/// `Z` on a row is the value used over the step leaving the node (empty at
/// the horizon). `dM` is the increment on the edge entering the node; on a
/// recombining lattice it is the largest absolute increment over the
/// entering edges.
pub fn write_solution_csv<W: Write>(sol: &SolutionTriple, mut out: W) -> std::io::Result<()> {
    let lat = sol.lattice();
    let d = lat.dim();
    let n = lat.steps();
    let zcols: Vec<String> = (1..=d).map(|k| format!("Z_{k}")).collect();
    writeln!(out, "time_index,node_id,Y,{},dM", zcols.join(","))?;
    let mut incoming = vec![0.0f64];
    for i in 0..=n {
        for node in 0..lat.level_size(i) {
            let z: Vec<String> = if i < n {
                sol.z.value(i, node).iter().map(|v| fmt_num(*v)).collect()
            } else {
                vec![String::new(); d]
            };
            writeln!(
                out,
                "{i},{node},{},{},{}",
                fmt_num(sol.y.scalar(i, node)),
                z.join(","),
                fmt_num(incoming[node])
            )?;
        }
        if i < n {
            let mut next = vec![0.0f64; lat.level_size(i + 1)];
            let m = lat.branching();
            for p in 0..lat.level_size(i) {
                for b in 0..m {
                    let c = lat.child(i, p, b);
                    let v = sol.dm.get(i, p, b);
                    next[c] = if lat.is_full_path() {
                        v
                    } else if v.abs() > next[c].abs() {
                        v.abs()
                    } else {
                        next[c]
                    };
                }
            }
            incoming = next;
        }
    }
    Ok(())
}
