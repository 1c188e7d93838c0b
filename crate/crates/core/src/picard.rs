//! Picard iteration: the driver is frozen at the previous iterate, so each
//! step is an explicit backward sweep
//! `Y^{p+1}_i = E[Y^{p+1}_{i+1} | F_i] + f^N(Y^p_i, Z^p_i) dt`.

use std::io::Write;

use serde::Serialize;

use crate::drivers::{DriverSpec, TerminalFunctional};
use crate::error::{BsdeError, Result};
use crate::lattice_prob::{cond_exp_unchecked, sup_cumulative, AdaptedProcess, EdgeValues, Timing};
use crate::parallel::Workers;
use crate::random_walk::PathLattice;
use crate::solver::{fmt_num, terminal_values_with, SolutionTriple, SolverOptions, StepDriver, CHUNK};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_P: usize = 200;

/// Distances between consecutive iterates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PicardMetrics {
    /// `sup_node |Y^{p+1} - Y^p|`.
    pub dy_sup: f64,
    /// `sqrt(E sum_i |Z^{p+1}_i - Z^p_i|^2 dt)`.
    pub dz_l2: f64,
    /// `sup` over paths and times of `|M^{p+1} - M^p|`.
    pub dm_sup: f64,
}

impl PicardMetrics {
    pub fn total(&self) -> f64 {
        self.dy_sup + self.dz_l2 + self.dm_sup
    }
}

#[derive(Clone, Debug)]
pub struct PicardState {
    pub p: usize,
    pub y: AdaptedProcess,
    pub z: AdaptedProcess,
    pub dm: EdgeValues,
    /// Distance to the previous iterate (zero for `p = 0`).
    pub metrics: PicardMetrics,
    /// Largest `|Y_i - E[Y_{i+1}|F_i] - f^N(Y^prev, Z^prev) dt|`.
    pub residual: f64,
}

impl PicardState {
    /// `(0, 0, 0)`.
    pub fn initial(lattice: &PathLattice) -> Self {
        Self {
            p: 0,
            y: AdaptedProcess::zeros(lattice, Timing::LeftConstant, 1),
            z: AdaptedProcess::zeros(lattice, Timing::Predictable, lattice.dim()),
            dm: EdgeValues::zeros(lattice),
            metrics: PicardMetrics::default(),
            residual: 0.0,
        }
    }
}

fn metrics_between(lattice: &PathLattice, a: &PicardState, b: &PicardState) -> Result<PicardMetrics> {
    let dy_sup = a.y.sup_distance(&b.y)?;
    let mut e = 0.0;
    for i in 0..lattice.steps() {
        let dt = lattice.grid().dt(i + 1);
        for p in 0..lattice.level_size(i) {
            let d2: f64 =
                a.z.value(i, p)
                    .iter()
                    .zip(b.z.value(i, p))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
            e += lattice.probability(i, p) * d2 * dt;
        }
    }
    let diff = edge_difference(&a.dm, &b.dm);
    Ok(PicardMetrics {
        dy_sup,
        dz_l2: e.sqrt(),
        dm_sup: sup_cumulative(lattice, &diff),
    })
}

fn edge_difference(a: &EdgeValues, b: &EdgeValues) -> EdgeValues {
    let levels = a
        .levels()
        .iter()
        .zip(b.levels())
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
        .collect();
    let branching = if a.levels().is_empty() { 1 } else { a.levels()[0].len() };
    EdgeValues::from_levels(branching, levels)
}

/// One Picard step for the leaf values `xi`.
pub fn picard_step(
    state: &PicardState,
    lattice: &PathLattice,
    f: &DriverSpec,
    xi: &[f64],
    workers: &Workers,
) -> Result<PicardState> {
    state.y.check_against(lattice)?;
    if xi.len() != lattice.leaf_count() {
        return Err(BsdeError::Structural(
            "terminal vector does not match the lattice".into(),
        ));
    }
    let sd = StepDriver::new(lattice, f)?;
    let n = lattice.steps();
    let d = lattice.dim();
    let m = lattice.branching();
    let sqrt_dt = lattice.sqrt_dt();

    let mut generator: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let dt = lattice.grid().dt(i + 1);
        let chunks = workers.map_chunks(lattice.level_size(i), CHUNK, |range| -> Result<Vec<f64>> {
            range
                .map(|p| {
                    let path = sd.path(i, p)?;
                    Ok(sd.eval(i, &path, state.y.scalar(i, p), state.z.value(i, p))? * dt)
                })
                .collect()
        });
        let mut g = Vec::with_capacity(lattice.level_size(i));
        for c in chunks {
            g.extend(c?);
        }
        generator.push(g);
    }

    let mut next = PicardState::initial(lattice);
    next.p = state.p + 1;
    *next.y.level_mut(n) = xi.to_vec();
    let mut residual = 0.0f64;
    for i in (0..n).rev() {
        let ynext = next.y.level(i + 1).to_vec();
        let size = lattice.level_size(i);
        let mut y = Vec::with_capacity(size);
        let mut z = Vec::with_capacity(size * d);
        let mut dm = Vec::with_capacity(size * m);
        let mut zp = vec![0.0; d];
        for p in 0..size {
            let mean = cond_exp_unchecked(lattice, &ynext, i, p);
            zp.iter_mut().for_each(|v| *v = 0.0);
            for b in 0..m {
                let dy = ynext[lattice.child(i, p, b)] - mean;
                for (k, zk) in zp.iter_mut().enumerate() {
                    *zk += dy * lattice.sign(b, k);
                }
            }
            zp.iter_mut().for_each(|v| *v /= m as f64 * sqrt_dt);
            for b in 0..m {
                let zdw: f64 = (0..d).map(|k| zp[k] * lattice.sign(b, k) * sqrt_dt).sum();
                dm.push(ynext[lattice.child(i, p, b)] - mean - zdw);
            }
            let yp = mean + generator[i][p];
            residual = residual.max((yp - mean - generator[i][p]).abs());
            y.push(yp);
            z.extend_from_slice(&zp);
        }
        *next.y.level_mut(i) = y;
        *next.z.level_mut(i) = z;
        *next.dm.level_mut(i) = dm;
    }
    next.residual = residual;
    next.metrics = metrics_between(lattice, &next, state)?;
    Ok(next)
}

#[derive(Clone, Debug)]
pub struct PicardRun {
    pub state: PicardState,
    /// Metrics of iterates `1, 2, ...`.
    pub trace: Vec<PicardMetrics>,
    pub converged: bool,
}

/// Iterates until the summed distance drops strictly below `tol` or `max_p`
/// steps are taken; never fails on non-convergence.
pub fn picard_run(
    lattice: &PathLattice,
    f: &DriverSpec,
    phi: &TerminalFunctional,
    tol: f64,
    max_p: usize,
    options: &SolverOptions,
) -> Result<PicardRun> {
    if !(tol >= 0.0) {
        return Err(BsdeError::Precondition(format!(
            "tolerance must be nonnegative, got {tol}"
        )));
    }
    let workers = Workers::new(options.workers);
    let xi = terminal_values_with(lattice, phi, options.terminal_path, &workers)?;
    let mut state = PicardState::initial(lattice);
    let mut trace = Vec::new();
    for _ in 0..max_p {
        state = picard_step(&state, lattice, f, &xi, &workers)?;
        trace.push(state.metrics);
        if state.metrics.total() < tol {
            return Ok(PicardRun {
                state,
                trace,
                converged: true,
            });
        }
    }
    Ok(PicardRun {
        state,
        trace,
        converged: false,
    })
}

/// As [`picard_run`], with non-convergence reported as an error.
pub fn picard_solve(
    lattice: &PathLattice,
    f: &DriverSpec,
    phi: &TerminalFunctional,
    tol: f64,
    max_p: usize,
    options: &SolverOptions,
) -> Result<PicardRun> {
    let run = picard_run(lattice, f, phi, tol, max_p, options)?;
    if !run.converged {
        return Err(BsdeError::PicardNonConvergence {
            max_p,
            last_distance: run.trace.last().map_or(f64::NAN, |m| m.total()),
        });
    }
    Ok(run)
}

/// Pathwise distances between an iterate and a solution.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct IterationDistance {
    pub y_sup: f64,
    /// `sup |sum Z^p.dW - sum Z.dW|` over paths and times.
    pub integral_sup: f64,
    pub m_sup: f64,
    /// `sup |sum |Z^p|^2 dt - sum |Z|^2 dt|` over paths and times.
    pub quadratic_sup: f64,
}

pub fn iteration_distance(state: &PicardState, sol: &SolutionTriple) -> Result<IterationDistance> {
    let lat = sol.lattice();
    state.y.check_same_shape(&sol.y)?;
    state.z.check_same_shape(&sol.z)?;
    let m = lat.branching();
    let d = lat.dim();
    let mut integral = EdgeValues::zeros(lat);
    let mut quadratic = EdgeValues::zeros(lat);
    for i in 0..lat.steps() {
        let dt = lat.grid().dt(i + 1);
        for p in 0..lat.level_size(i) {
            let (a, b) = (state.z.value(i, p), sol.z.value(i, p));
            let q: f64 = a.iter().map(|v| v * v).sum::<f64>() - b.iter().map(|v| v * v).sum::<f64>();
            for br in 0..m {
                integral.level_mut(i)[p * m + br] = (0..d).map(|k| (a[k] - b[k]) * lat.increment(br, k)).sum();
                quadratic.level_mut(i)[p * m + br] = q * dt;
            }
        }
    }
    Ok(IterationDistance {
        y_sup: state.y.sup_distance(&sol.y)?,
        integral_sup: sup_cumulative(lat, &integral),
        m_sup: sup_cumulative(lat, &edge_difference(&state.dm, &sol.dm)),
        quadratic_sup: sup_cumulative(lat, &quadratic),
    })
}

/// CSV `p,dY_sup,dZ_l2,dM_sup`.
pub fn write_trace_csv<W: Write>(trace: &[PicardMetrics], mut out: W) -> std::io::Result<()> {
    writeln!(out, "p,dY_sup,dZ_l2,dM_sup")?;
    for (j, t) in trace.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{}",
            j + 1,
            fmt_num(t.dy_sup),
            fmt_num(t.dz_l2),
            fmt_num(t.dm_sup)
        )?;
    }
    Ok(())
}
