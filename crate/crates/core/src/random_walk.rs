//! Bernoulli random-walk lattices.
//!
//! The walk has `d` independent components, each moving by `±sqrt(dt)` per
//! step with probability 1/2. A node at level `i` is identified by its path
//! prefix (full-path mode) or by the lattice point it reached (recombining
//! mode). Branches are numbered `0..2^d`; bit `d-1-k` of the branch is 1 when
//! component `k` moves up, so branch order is lexicographic in the sign
//! vector with `-` before `+`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{BsdeError, Result};
use crate::path::OwnedPath;
use crate::report::{Check, Report};

/// Default cap on the number of leaves of a full-path lattice.
pub const DEFAULT_LEAF_BUDGET: u64 = 1 << 20;

/// Uniform time grid `t_i = i T / N`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(BsdeError::Domain(format!(
                "horizon must be a positive real, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(BsdeError::Domain("number of steps must be positive".into()));
        }
        let mut points: Vec<f64> = (0..=steps).map(|i| i as f64 * horizon / steps as f64).collect();
        points[steps] = horizon;
        Ok(Self { horizon, points })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> f64 {
        self.points[i]
    }

    /// Length of step `i`, i.e. `t_i - t_{i-1}` for `i` in `1..=N`.
    pub fn dt(&self, i: usize) -> f64 {
        self.points[i] - self.points[i - 1]
    }

    /// Nominal step `T / N`; every `dt(i)` equals it up to rounding.
    pub fn step(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    /// `h^N = max_i dt(i)`.
    pub fn mesh(&self) -> f64 {
        (1..=self.steps()).map(|i| self.dt(i)).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatticeMode {
    FullPath,
    Recombining,
}

impl FromStr for LatticeMode {
    type Err = BsdeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-path" | "full" => Ok(Self::FullPath),
            "recombining" | "recombine" => Ok(Self::Recombining),
            other => Err(BsdeError::Domain(format!(
                "unknown lattice mode `{other}` (expected full-path or recombining)"
            ))),
        }
    }
}

impl fmt::Display for LatticeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FullPath => "full-path",
            Self::Recombining => "recombining",
        })
    }
}

/// The tree of Bernoulli increments. Immutable once built.
#[derive(Clone, Debug)]
pub struct PathLattice {
    grid: TimeGrid,
    dim: usize,
    mode: LatticeMode,
    sqrt_dt: f64,
    prob_overrides: BTreeMap<(usize, usize), f64>,
}

impl PathLattice {
    pub fn build(steps: usize, dim: usize, horizon: f64, mode: LatticeMode) -> Result<Self> {
        Self::build_with_budget(steps, dim, horizon, mode, DEFAULT_LEAF_BUDGET)
    }

    pub fn build_with_budget(steps: usize, dim: usize, horizon: f64, mode: LatticeMode, budget: u64) -> Result<Self> {
        if dim == 0 {
            return Err(BsdeError::Domain("dimension must be positive".into()));
        }
        let grid = TimeGrid::uniform(horizon, steps)?;
        match mode {
            LatticeMode::FullPath => {
                let exponent = (dim * steps) as u32;
                let required = if exponent >= 127 { u128::MAX } else { 1u128 << exponent };
                if exponent >= 63 || required > budget as u128 {
                    return Err(BsdeError::BudgetExceeded {
                        required,
                        exponent,
                        budget,
                    });
                }
            }
            LatticeMode::Recombining => {
                let width = (steps as u128 + 1).checked_pow(dim as u32);
                if width.is_none_or(|w| w > budget as u128) {
                    return Err(BsdeError::BudgetExceeded {
                        required: width.unwrap_or(u128::MAX),
                        exponent: 0,
                        budget,
                    });
                }
            }
        }
        let sqrt_dt = grid.step().sqrt();
        Ok(Self {
            grid,
            dim,
            mode,
            sqrt_dt,
            prob_overrides: BTreeMap::new(),
        })
    }

    /// Copy of the lattice with one node probability replaced. Only meant for
    /// negative controls of the diagnostics.
    pub fn with_probability_override(mut self, level: usize, node: usize, p: f64) -> Self {
        self.prob_overrides.insert((level, node), p);
        self
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> LatticeMode {
        self.mode
    }

    pub fn is_full_path(&self) -> bool {
        self.mode == LatticeMode::FullPath
    }

    /// Children per node, `2^d`.
    pub fn branching(&self) -> usize {
        1 << self.dim
    }

    /// Step length; the grid is uniform.
    pub fn dt(&self) -> f64 {
        self.grid.step()
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn level_size(&self, level: usize) -> usize {
        match self.mode {
            LatticeMode::FullPath => 1usize << (self.dim * level),
            LatticeMode::Recombining => (level + 1).pow(self.dim as u32),
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.level_size(self.steps())
    }

    pub fn total_nodes(&self) -> usize {
        (0..=self.steps()).map(|i| self.level_size(i)).sum()
    }

    /// Sign (`+1` or `-1`) of component `k` on branch `b`.
    #[inline]
    pub fn sign(&self, branch: usize, k: usize) -> f64 {
        if (branch >> (self.dim - 1 - k)) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    /// Component `k` of the increment on branch `b`.
    #[inline]
    pub fn increment(&self, branch: usize, k: usize) -> f64 {
        self.sign(branch, k) * self.sqrt_dt
    }

    pub fn increment_vec(&self, branch: usize) -> Vec<f64> {
        (0..self.dim).map(|k| self.increment(branch, k)).collect()
    }

    #[inline]
    pub fn child(&self, level: usize, node: usize, branch: usize) -> usize {
        match self.mode {
            LatticeMode::FullPath => (node << self.dim) | branch,
            LatticeMode::Recombining => {
                let base = level + 1;
                let next = level + 2;
                let mut rest = node;
                let mut digits = [0usize; 64];
                for k in (0..self.dim).rev() {
                    digits[k] = rest % base;
                    rest /= base;
                }
                let mut idx = 0;
                for (k, digit) in digits.iter().enumerate().take(self.dim) {
                    let up = (branch >> (self.dim - 1 - k)) & 1;
                    idx = idx * next + digit + up;
                }
                idx
            }
        }
    }

    pub fn children(&self, level: usize, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.branching()).map(move |b| self.child(level, node, b))
    }

    /// Parent and branch of a full-path node at `level >= 1`.
    pub fn parent(&self, level: usize, node: usize) -> Option<(usize, usize)> {
        (self.is_full_path() && level >= 1).then(|| (node >> self.dim, node & (self.branching() - 1)))
    }

    /// Up-move counts per component of a recombining node.
    fn up_counts(&self, level: usize, node: usize) -> Vec<usize> {
        let base = level + 1;
        let mut rest = node;
        let mut u = vec![0; self.dim];
        for k in (0..self.dim).rev() {
            u[k] = rest % base;
            rest /= base;
        }
        u
    }

    /// Branch taken at step `j` (1-based) by a full-path node at `level >= j`.
    #[inline]
    fn branch_at(&self, level: usize, node: usize, j: usize) -> usize {
        (node >> (self.dim * (level - j))) & (self.branching() - 1)
    }

    /// Walk value `W_{t_level}` at the node.
    pub fn walk_value(&self, level: usize, node: usize, out: &mut [f64]) {
        match self.mode {
            LatticeMode::FullPath => {
                // Bit `d-1-k` of every `d`-bit group marks an up-move of component k.
                let mut group_bits = 0usize;
                for _ in 0..level {
                    group_bits = (group_bits << self.dim) | 1;
                }
                for (k, x) in out.iter_mut().enumerate() {
                    let ups = (node & (group_bits << (self.dim - 1 - k))).count_ones();
                    *x = (2.0 * ups as f64 - level as f64) * self.sqrt_dt;
                }
            }
            LatticeMode::Recombining => {
                for (x, u) in out.iter_mut().zip(self.up_counts(level, node)) {
                    *x = (2.0 * u as f64 - level as f64) * self.sqrt_dt;
                }
            }
        }
    }

    pub fn walk_vec(&self, level: usize, node: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.dim];
        self.walk_value(level, node, &mut w);
        w
    }

    /// Flattened walk values `W_{t_0}, ..., W_{t_level}` along the node's path.
    pub fn fill_walk_prefix(&self, level: usize, node: usize, out: &mut Vec<f64>) -> Result<()> {
        if !self.is_full_path() {
            return Err(BsdeError::Structural(
                "path history is not available on a recombining lattice".into(),
            ));
        }
        out.clear();
        out.resize((level + 1) * self.dim, 0.0);
        for j in 1..=level {
            let b = self.branch_at(level, node, j);
            for k in 0..self.dim {
                out[j * self.dim + k] = out[(j - 1) * self.dim + k] + self.increment(b, k);
            }
        }
        Ok(())
    }

    /// Linear interpolation `W̄^N` of the node's path on `[0, t_level]`.
    pub fn linear_path(&self, level: usize, node: usize) -> Result<OwnedPath> {
        let mut knots = Vec::new();
        self.fill_walk_prefix(level, node, &mut knots)?;
        Ok(OwnedPath {
            times: self.grid.points()[..=level].to_vec(),
            knots,
            dim: self.dim,
        })
    }

    /// Shifted interpolation `Ŵ^N` known at the node: knots on
    /// `t_0..t_{min(level+1, N)}` with values `0, W_{t_0}, W_{t_1}, ...`.
    pub fn shifted_path(&self, level: usize, node: usize) -> Result<OwnedPath> {
        let mut prefix = Vec::new();
        self.fill_walk_prefix(level, node, &mut prefix)?;
        let count = (level + 2).min(self.steps() + 1);
        let mut knots = vec![0.0; count * self.dim];
        knots[self.dim..].copy_from_slice(&prefix[..(count - 1) * self.dim]);
        Ok(OwnedPath {
            times: self.grid.points()[..count].to_vec(),
            knots,
            dim: self.dim,
        })
    }

    pub fn probability(&self, level: usize, node: usize) -> f64 {
        if let Some(p) = self.prob_overrides.get(&(level, node)) {
            return *p;
        }
        match self.mode {
            LatticeMode::FullPath => 0.5f64.powi((self.dim * level) as i32),
            LatticeMode::Recombining => self
                .up_counts(level, node)
                .into_iter()
                .map(|u| binomial_half(level, u))
                .product(),
        }
    }

    /// Human-readable label: sign sequence for full paths, up-counts otherwise.
    pub fn node_label(&self, level: usize, node: usize) -> String {
        match self.mode {
            LatticeMode::FullPath => {
                let steps: Vec<String> = (1..=level)
                    .map(|j| {
                        let b = self.branch_at(level, node, j);
                        (0..self.dim)
                            .map(|k| if self.sign(b, k) > 0.0 { '+' } else { '-' })
                            .collect()
                    })
                    .collect();
                format!("({})", steps.join(","))
            }
            LatticeMode::Recombining => format!("up{:?}@{}", self.up_counts(level, node), level),
        }
    }

    pub(crate) fn check_same_shape(&self, other: &PathLattice) -> Result<()> {
        if self.steps() != other.steps()
            || self.dim != other.dim
            || self.mode != other.mode
            || self.horizon() != other.horizon()
        {
            return Err(BsdeError::Structural("lattice mismatch".into()));
        }
        Ok(())
    }
}

/// `C(n, k) / 2^n`. Exact in floating point while the binomial coefficient
/// fits the mantissa; log space for very long walks.
fn binomial_half(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    if n <= 1000 {
        let mut c = 1.0f64;
        for j in 1..=k {
            c = c * (n - k + j) as f64 / j as f64;
        }
        return c * 0.5f64.powi(n as i32);
    }
    let mut log = -(n as f64) * std::f64::consts::LN_2;
    for j in 1..=k {
        log += ((n - k + j) as f64 / j as f64).ln();
    }
    log.exp()
}

fn check_time(lattice: &PathLattice, t: f64) -> Result<()> {
    if !(0.0..=lattice.horizon()).contains(&t) {
        return Err(BsdeError::Domain(format!(
            "time {t} outside [0, {}]",
            lattice.horizon()
        )));
    }
    Ok(())
}

/// `W̄^N_t` along the path of a full-path node; the node must cover `t`.
pub fn interpolate_linear(lattice: &PathLattice, level: usize, node: usize, t: f64) -> Result<Vec<f64>> {
    check_time(lattice, t)?;
    if t > lattice.grid().point(level) {
        return Err(BsdeError::Structural(format!(
            "node at level {level} does not resolve the path up to t = {t}"
        )));
    }
    Ok(lattice.linear_path(level, node)?.view().value_at(t))
}

/// `Ŵ^N_t`: zero up to the mesh, then the linear interpolation delayed by it.
pub fn interpolate_shifted(lattice: &PathLattice, level: usize, node: usize, t: f64) -> Result<Vec<f64>> {
    check_time(lattice, t)?;
    let h = lattice.grid().mesh();
    if t <= h {
        return Ok(vec![0.0; lattice.dim()]);
    }
    interpolate_linear(lattice, level, node, t - h)
}

/// Checks of the walk conditions that are decidable on a finite lattice.
#[derive(Clone, Debug, Serialize)]
pub struct WalkReport {
    pub report: Report,
    /// Observed `sup |dW^k| / sqrt(dt)`.
    pub sup_ratio: f64,
}

pub fn verify_walk_conditions(lattice: &PathLattice) -> WalkReport {
    const TOL: f64 = 1e-12;
    let grid = lattice.grid();
    let d = lattice.dim();
    let mut report = Report::default();

    let increasing = grid.points().windows(2).all(|w| w[1] > w[0]);
    let anchored = grid.point(0) == 0.0 && grid.point(grid.steps()) == grid.horizon();
    report.push(Check::new(
        "W1",
        increasing && anchored && grid.mesh() > 0.0,
        format!("mesh h = {:e}, strictly increasing grid from 0 to T", grid.mesh()),
    ));

    report.push(Check::not_checked(
        "W2",
        "limit condition; tested via convergence suite",
    ));

    let mut distinct = std::collections::BTreeSet::new();
    for b in 0..lattice.branching() {
        for k in 0..d {
            distinct.insert(lattice.increment(b, k).to_bits());
        }
    }
    report.push(Check::new(
        "W3",
        distinct.len() <= 2,
        format!("{} distinct increment values per component", distinct.len()),
    ));

    let mut worst_mass = 0.0f64;
    let mut worst_mean = 0.0f64;
    let mut worst_second = 0.0f64;
    let mut worst_cross = 0.0f64;
    let weight = 1.0 / lattice.branching() as f64;
    for level in 0..lattice.steps() {
        let dt = grid.dt(level + 1);
        let mut mass = 0.0;
        let mut mean = vec![0.0; d];
        let mut second = vec![vec![0.0; d]; d];
        for node in 0..lattice.level_size(level) {
            let p = lattice.probability(level, node);
            mass += p;
            for b in 0..lattice.branching() {
                let pe = p * weight;
                for k in 0..d {
                    let xk = lattice.increment(b, k);
                    mean[k] += pe * xk;
                    for (l, s) in second[k].iter_mut().enumerate() {
                        *s += pe * xk * lattice.increment(b, l);
                    }
                }
            }
        }
        worst_mass = worst_mass.max((mass - 1.0).abs());
        for k in 0..d {
            worst_mean = worst_mean.max(mean[k].abs());
            for l in 0..d {
                if k == l {
                    worst_second = worst_second.max((second[k][l] - dt).abs() / dt);
                } else {
                    worst_cross = worst_cross.max(second[k][l].abs() / dt);
                }
            }
        }
    }
    // Leaf probabilities as well; the loop above stops one level short.
    let leaf_mass: f64 = (0..lattice.leaf_count())
        .map(|n| lattice.probability(lattice.steps(), n))
        .sum();
    worst_mass = worst_mass.max((leaf_mass - 1.0).abs());
    report.push(Check::new(
        "W4",
        worst_mass <= TOL && worst_mean <= TOL && worst_second <= TOL && worst_cross <= TOL,
        format!(
            "mass error {worst_mass:e}, mean {worst_mean:e}, relative second-moment error {worst_second:e}, cross moment {worst_cross:e}"
        ),
    ));

    let sup_ratio = (0..lattice.branching())
        .flat_map(|b| (0..d).map(move |k| (b, k)))
        .map(|(b, k)| lattice.increment(b, k).abs() / lattice.dt().sqrt())
        .fold(0.0, f64::max);
    report.push(Check::new(
        "W5",
        sup_ratio.is_finite() && (sup_ratio - 1.0).abs() <= 1e-12,
        format!("sup |dW| / sqrt(dt) = {sup_ratio}"),
    ));

    WalkReport { report, sup_ratio }
}
