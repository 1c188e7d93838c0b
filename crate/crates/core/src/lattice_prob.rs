//! Probability on the lattice: one-step conditional expectations, the
//! discrete change of measure `prod (1 + mu.dW)` and expectations under it.
//!
//! Conditional expectations are exact equal-weight averages over the `2^d`
//! children, always summed in branch order.

use serde::Serialize;

use crate::error::{BsdeError, Result};
use crate::random_walk::PathLattice;
use crate::report::{Check, Report};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Timing {
    /// Value on `[t_i, t_{i+1})`, known at `t_i`. Stored for levels `0..=N`.
    LeftConstant,
    /// Value on `(t_i, t_{i+1}]`, known at `t_i`. Stored at the parent
    /// level `i` for `i in 0..N`, so it is constant across the children.
    Predictable,
}

/// Values attached to every node of every level, `width` reals per node.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdaptedProcess {
    timing: Timing,
    width: usize,
    levels: Vec<Vec<f64>>,
}

impl AdaptedProcess {
    pub fn zeros(lattice: &PathLattice, timing: Timing, width: usize) -> Self {
        let count = match timing {
            Timing::LeftConstant => lattice.steps() + 1,
            Timing::Predictable => lattice.steps(),
        };
        let levels = (0..count).map(|i| vec![0.0; lattice.level_size(i) * width]).collect();
        Self { timing, width, levels }
    }

    pub fn from_levels(timing: Timing, width: usize, levels: Vec<Vec<f64>>) -> Self {
        debug_assert!(levels.iter().all(|l| l.len() % width == 0));
        Self { timing, width, levels }
    }

    pub fn timing(&self) -> Timing {
        self.timing
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, i: usize) -> &[f64] {
        &self.levels[i]
    }

    pub fn level_mut(&mut self, i: usize) -> &mut Vec<f64> {
        &mut self.levels[i]
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    #[inline]
    pub fn value(&self, i: usize, node: usize) -> &[f64] {
        &self.levels[i][node * self.width..(node + 1) * self.width]
    }

    #[inline]
    pub fn scalar(&self, i: usize, node: usize) -> f64 {
        self.levels[i][node * self.width]
    }

    pub fn set(&mut self, i: usize, node: usize, v: &[f64]) {
        let w = self.width;
        self.levels[i][node * w..(node + 1) * w].copy_from_slice(v);
    }

    /// Largest Euclidean norm of a node value.
    pub fn sup_norm(&self) -> f64 {
        self.levels
            .iter()
            .flat_map(|l| l.chunks(self.width))
            .map(crate::path::norm)
            .fold(0.0, f64::max)
    }

    /// Largest nodewise distance to `other` (same shape required).
    pub fn sup_distance(&self, other: &AdaptedProcess) -> Result<f64> {
        self.check_same_shape(other)?;
        let mut best = 0.0f64;
        for (a, b) in self.levels.iter().zip(&other.levels) {
            for (x, y) in a.chunks(self.width).zip(b.chunks(self.width)) {
                let d: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
                best = best.max(d.sqrt());
            }
        }
        Ok(best)
    }

    pub fn check_same_shape(&self, other: &AdaptedProcess) -> Result<()> {
        let same = self.timing == other.timing
            && self.width == other.width
            && self.levels.len() == other.levels.len()
            && self.levels.iter().zip(&other.levels).all(|(a, b)| a.len() == b.len());
        if same {
            Ok(())
        } else {
            Err(BsdeError::Structural("process shapes differ".into()))
        }
    }

    /// Shape matches the lattice for the declared timing.
    pub fn check_against(&self, lattice: &PathLattice) -> Result<()> {
        let expected = AdaptedProcess::zeros(lattice, self.timing, self.width);
        self.check_same_shape(&expected)
    }
}

/// One real per edge: `levels[i][parent * 2^d + branch]` for `i in 0..N`.
/// In full-path mode the edge index coincides with the child index.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeValues {
    branching: usize,
    levels: Vec<Vec<f64>>,
}

impl EdgeValues {
    pub fn zeros(lattice: &PathLattice) -> Self {
        let levels = (0..lattice.steps())
            .map(|i| vec![0.0; lattice.level_size(i) * lattice.branching()])
            .collect();
        Self {
            branching: lattice.branching(),
            levels,
        }
    }

    pub fn from_levels(branching: usize, levels: Vec<Vec<f64>>) -> Self {
        Self { branching, levels }
    }

    #[inline]
    pub fn get(&self, level: usize, parent: usize, branch: usize) -> f64 {
        self.levels[level][parent * self.branching + branch]
    }

    pub fn level(&self, i: usize) -> &[f64] {
        &self.levels[i]
    }

    pub fn level_mut(&mut self, i: usize) -> &mut Vec<f64> {
        &mut self.levels[i]
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn sup_abs(&self) -> f64 {
        self.levels.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn check_children(lattice: &PathLattice, x_len: usize, width: usize, level: usize) -> Result<()> {
    if level >= lattice.steps() {
        return Err(BsdeError::Structural(format!(
            "level {level} has no children (N = {})",
            lattice.steps()
        )));
    }
    let need = lattice.level_size(level + 1) * width;
    if x_len < need {
        return Err(BsdeError::Structural(format!(
            "missing child values at level {}: have {x_len}, need {need}",
            level + 1
        )));
    }
    Ok(())
}

/// `E[x | parent]` for `x` given on level `level + 1`.
pub fn conditional_expectation(lattice: &PathLattice, x: &[f64], level: usize, parent: usize) -> Result<f64> {
    check_children(lattice, x.len(), 1, level)?;
    Ok(cond_exp_unchecked(lattice, x, level, parent))
}

#[inline]
pub(crate) fn cond_exp_unchecked(lattice: &PathLattice, x: &[f64], level: usize, parent: usize) -> f64 {
    let m = lattice.branching();
    let mut s = 0.0;
    for b in 0..m {
        s += x[lattice.child(level, parent, b)];
    }
    s / m as f64
}

/// Componentwise conditional expectation of a `width`-vector valued `x`.
pub fn conditional_expectation_vec(
    lattice: &PathLattice,
    x: &[f64],
    width: usize,
    level: usize,
    parent: usize,
) -> Result<Vec<f64>> {
    check_children(lattice, x.len(), width, level)?;
    let m = lattice.branching();
    let mut out = vec![0.0; width];
    for b in 0..m {
        let c = lattice.child(level, parent, b);
        for (o, v) in out.iter_mut().zip(&x[c * width..(c + 1) * width]) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= m as f64);
    Ok(out)
}

/// Conditional expectations for every node of `level`.
pub fn conditional_expectation_level(lattice: &PathLattice, x: &[f64], level: usize) -> Result<Vec<f64>> {
    check_children(lattice, x.len(), 1, level)?;
    Ok((0..lattice.level_size(level))
        .map(|p| cond_exp_unchecked(lattice, x, level, p))
        .collect())
}

/// Predictable control `mu` with its one-step density factors `1 + mu.dW`.
#[derive(Clone, Debug)]
pub struct ControlProcess {
    mu: AdaptedProcess,
    factors: EdgeValues,
    margin: f64,
}

impl ControlProcess {
    /// Validates strict admissibility `1 + mu.dW > 0` on every edge.
    pub fn new(lattice: &PathLattice, mu: AdaptedProcess) -> Result<Self> {
        if mu.timing() != Timing::Predictable || mu.width() != lattice.dim() {
            return Err(BsdeError::Structural(
                "control must be a predictable d-vector process".into(),
            ));
        }
        mu.check_against(lattice)?;
        let m = lattice.branching();
        let mut factors = EdgeValues::zeros(lattice);
        let mut margin = f64::INFINITY;
        for i in 0..lattice.steps() {
            for p in 0..lattice.level_size(i) {
                let v = mu.value(i, p);
                for b in 0..m {
                    let mut s = 0.0;
                    for (k, vk) in v.iter().enumerate() {
                        s += vk * lattice.increment(b, k);
                    }
                    let factor = 1.0 + s;
                    if !(factor > 0.0) {
                        return Err(BsdeError::InadmissibleControl {
                            path: edge_label(lattice, i, p, b),
                            factor,
                        });
                    }
                    margin = margin.min(factor);
                    factors.level_mut(i)[p * m + b] = factor;
                }
            }
        }
        Ok(Self { mu, factors, margin })
    }

    pub fn zero(lattice: &PathLattice) -> Self {
        Self::new(
            lattice,
            AdaptedProcess::zeros(lattice, Timing::Predictable, lattice.dim()),
        )
        .expect("zero control is admissible")
    }

    pub fn constant(lattice: &PathLattice, v: &[f64]) -> Result<Self> {
        let mut mu = AdaptedProcess::zeros(lattice, Timing::Predictable, lattice.dim());
        for i in 0..lattice.steps() {
            for p in 0..lattice.level_size(i) {
                mu.set(i, p, v);
            }
        }
        Self::new(lattice, mu)
    }

    pub fn mu(&self) -> &AdaptedProcess {
        &self.mu
    }

    #[inline]
    pub fn factor(&self, level: usize, parent: usize, branch: usize) -> f64 {
        self.factors.get(level, parent, branch)
    }

    pub fn factors(&self) -> &EdgeValues {
        &self.factors
    }

    /// `min (1 + mu.dW)` over all edges.
    pub fn margin(&self) -> f64 {
        self.margin
    }
}

/// Label of the path ending with the given edge.
pub(crate) fn edge_label(lattice: &PathLattice, level: usize, parent: usize, branch: usize) -> String {
    if lattice.is_full_path() {
        lattice.node_label(level + 1, lattice.child(level, parent, branch))
    } else {
        format!("{} branch {branch}", lattice.node_label(level, parent))
    }
}

fn require_full_path(lattice: &PathLattice, what: &str) -> Result<()> {
    if lattice.is_full_path() {
        Ok(())
    } else {
        Err(BsdeError::Structural(format!("{what} needs a full-path lattice")))
    }
}

/// Per-path density `prod_i (1 + mu_i.dW_i)` at every leaf (full-path only).
pub fn density(lattice: &PathLattice, control: &ControlProcess) -> Result<Vec<f64>> {
    require_full_path(lattice, "density")?;
    let m = lattice.branching();
    let mut current = vec![1.0];
    for i in 0..lattice.steps() {
        let mut next = vec![0.0; current.len() * m];
        for (p, dp) in current.iter().enumerate() {
            for b in 0..m {
                next[p * m + b] = dp * control.factor(i, p, b);
            }
        }
        current = next;
    }
    Ok(current)
}

/// `E^mu[x | node]` for `x` given at level `x_level >= level`.
///
/// Full-path lattices weight descendants by their relative density and
/// renormalize. Recombining lattices use the equivalent one-step transition
/// weights `(1 + mu.dW) / 2^d`.
pub fn expectation_under_mu(
    lattice: &PathLattice,
    x_level: usize,
    x: &[f64],
    control: &ControlProcess,
    level: usize,
    node: usize,
) -> Result<f64> {
    check_target(lattice, x_level, x, level)?;
    if !lattice.is_full_path() {
        let values = expectation_under_mu_level(lattice, x_level, x, control, level)?;
        return Ok(values[node]);
    }
    let m = lattice.branching();
    let mut weights = vec![1.0];
    for (depth, l) in (level..x_level).enumerate() {
        let first = node << (lattice.dim() * depth);
        let mut next = vec![0.0; weights.len() * m];
        for (j, w) in weights.iter().enumerate() {
            for b in 0..m {
                next[j * m + b] = w * control.factor(l, first + j, b);
            }
        }
        weights = next;
    }
    let first = node << (lattice.dim() * (x_level - level));
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, w) in weights.iter().enumerate() {
        num += w * x[first + j];
        den += w;
    }
    Ok(num / den)
}

fn check_target(lattice: &PathLattice, x_level: usize, x: &[f64], level: usize) -> Result<()> {
    if x_level > lattice.steps() || level > x_level {
        return Err(BsdeError::Structural(format!(
            "cannot condition level {x_level} values on level {level}"
        )));
    }
    if x.len() != lattice.level_size(x_level) {
        return Err(BsdeError::Structural(format!(
            "expected {} values at level {x_level}, got {}",
            lattice.level_size(x_level),
            x.len()
        )));
    }
    Ok(())
}

/// `E^mu[x | .]` at every node of `level` by backward transition weights.
pub fn expectation_under_mu_level(
    lattice: &PathLattice,
    x_level: usize,
    x: &[f64],
    control: &ControlProcess,
    level: usize,
) -> Result<Vec<f64>> {
    check_target(lattice, x_level, x, level)?;
    let m = lattice.branching();
    let mut values = x.to_vec();
    for l in (level..x_level).rev() {
        values = (0..lattice.level_size(l))
            .map(|p| {
                let mut s = 0.0;
                for b in 0..m {
                    s += control.factor(l, p, b) * values[lattice.child(l, p, b)];
                }
                s / m as f64
            })
            .collect();
    }
    Ok(values)
}

const DRIFT_TOL: f64 = 1e-12;

/// Checks `E^mu[dW^k - mu^k dt | parent] = 0` and unit mass at every node
/// using the one-step transition weights.
pub fn drifted_walk_check(lattice: &PathLattice, control: &ControlProcess) -> Report {
    let m = lattice.branching();
    let d = lattice.dim();
    let mut worst_drift = 0.0f64;
    let mut worst_mass = 0.0f64;
    for i in 0..lattice.steps() {
        let dt = lattice.grid().dt(i + 1);
        for p in 0..lattice.level_size(i) {
            let mu = control.mu().value(i, p);
            let mut mass = 0.0;
            let mut drift = vec![0.0; d];
            for b in 0..m {
                let w = control.factor(i, p, b) / m as f64;
                mass += w;
                for k in 0..d {
                    drift[k] += w * (lattice.increment(b, k) - mu[k] * dt);
                }
            }
            worst_mass = worst_mass.max((mass - 1.0).abs());
            for v in drift {
                worst_drift = worst_drift.max(v.abs());
            }
        }
    }
    let mut report = Report::default();
    report.push(Check::new(
        "transition-mass",
        worst_mass <= DRIFT_TOL,
        format!("max |mass - 1| = {worst_mass:.3e}"),
    ));
    report.push(Check::new(
        "drifted-martingale",
        worst_drift <= DRIFT_TOL,
        format!("max |E^mu[dW - mu dt | node]| = {worst_drift:.3e}"),
    ));
    report
}

/// Same check computed from an explicit per-leaf density, so a corrupted
/// density is detected. Full-path only.
pub fn drifted_walk_check_with_density(
    lattice: &PathLattice,
    control: &ControlProcess,
    leaf_density: &[f64],
) -> Result<Report> {
    require_full_path(lattice, "density check")?;
    if leaf_density.len() != lattice.leaf_count() {
        return Err(BsdeError::Structural("density length differs from leaf count".into()));
    }
    let n = lattice.steps();
    let d = lattice.dim();
    let mut worst_drift = 0.0f64;
    let mut worst_mass = 0.0f64;
    let total: f64 = leaf_density.iter().sum::<f64>() / lattice.leaf_count() as f64;
    worst_mass = worst_mass.max((total - 1.0).abs());
    for i in 0..n {
        let dt = lattice.grid().dt(i + 1);
        let size = lattice.level_size(i);
        let mut num = vec![0.0; size * d];
        let mut den = vec![0.0; size];
        let shift_parent = d * (n - i);
        let shift_child = d * (n - i - 1);
        for (leaf, dens) in leaf_density.iter().enumerate() {
            let p = leaf >> shift_parent;
            let b = (leaf >> shift_child) & (lattice.branching() - 1);
            let mu = control.mu().value(i, p);
            den[p] += dens;
            for k in 0..d {
                num[p * d + k] += dens * (lattice.increment(b, k) - mu[k] * dt);
            }
        }
        for p in 0..size {
            for k in 0..d {
                worst_drift = worst_drift.max((num[p * d + k] / den[p]).abs());
            }
        }
    }
    let mut report = Report::default();
    report.push(Check::new(
        "density-mass",
        worst_mass <= DRIFT_TOL,
        format!("|E[density] - 1| = {worst_mass:.3e}"),
    ));
    report.push(Check::new(
        "drifted-martingale",
        worst_drift <= DRIFT_TOL,
        format!("max |E^mu[dW - mu dt | node]| = {worst_drift:.3e}"),
    ));
    Ok(report)
}

/// `sup` over paths and times of `|sum_{j <= i} a_j|` for per-edge
/// increments `a`. Forward dynamic programming on running max and min, so
/// it also covers recombining lattices where paths share nodes.
pub fn sup_cumulative(lattice: &PathLattice, increments: &EdgeValues) -> f64 {
    let m = lattice.branching();
    let mut hi = vec![0.0f64];
    let mut lo = vec![0.0f64];
    let mut best = 0.0f64;
    for i in 0..lattice.steps() {
        let size = lattice.level_size(i + 1);
        let mut nhi = vec![f64::NEG_INFINITY; size];
        let mut nlo = vec![f64::INFINITY; size];
        for p in 0..lattice.level_size(i) {
            for b in 0..m {
                let c = lattice.child(i, p, b);
                let a = increments.get(i, p, b);
                nhi[c] = nhi[c].max(hi[p] + a);
                nlo[c] = nlo[c].min(lo[p] + a);
            }
        }
        for (h, l) in nhi.iter().zip(&nlo) {
            best = best.max(h.abs()).max(l.abs());
        }
        hi = nhi;
        lo = nlo;
    }
    best
}
