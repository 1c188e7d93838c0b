//! Drivers `f(t, w, y, z)`, their time averages over a step, convex
//! conjugates and subgradients in `z`, plus terminal functionals.

mod catalog;
mod conjugate;
mod terminal;
mod verify;

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{BsdeError, Result};
use crate::path::{dot, norm, PathView};
use crate::random_walk::TimeGrid;

pub use conjugate::numeric_conjugate;
pub use terminal::{TerminalFunctional, TerminalKind};
pub use verify::{verify_driver_properties, verify_terminal_properties, SamplingPlan};

pub type DriverFn = Arc<dyn Fn(f64, &PathView<'_>, f64, &[f64]) -> f64 + Send + Sync>;
pub type SubgradientFn = Arc<dyn Fn(f64, &PathView<'_>, f64, &[f64]) -> Vec<f64> + Send + Sync>;
pub type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Composite Simpson panels used for the step average.
pub const SIMPSON_PANELS: usize = 32;
/// Relative agreement required between 32- and 16-panel Simpson estimates.
pub const QUADRATURE_TOL: f64 = 1e-8;
/// Fenchel-Young tolerance for validated subgradients.
pub const FENCHEL_YOUNG_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum YMonotonicity {
    Increasing,
    Decreasing,
    /// Does not depend on `y`; both orderings apply.
    Independent,
}

/// A driver together with the constants it is declared to satisfy.
///
/// `evaluate` receives the time, the path observed so far, `y` and `z`.
/// Evaluation must be a pure function of its arguments.
#[derive(Clone)]
pub struct DriverSpec {
    name: String,
    evaluate: DriverFn,
    /// `K`: Lipschitz constant in `(w, y)`.
    pub lipschitz_k: f64,
    /// `sup |f(t, w, 0, 0)|`.
    pub zero_bound: f64,
    z_lipschitz: Option<ScalarMap>,
    lower_bound: Option<ScalarMap>,
    analytic_conjugate: Option<DriverFn>,
    analytic_subgradient: Option<SubgradientFn>,
    time_constant: bool,
    path_dependent: bool,
    y_monotonicity: Option<YMonotonicity>,
}

impl fmt::Debug for DriverSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriverSpec")
            .field("name", &self.name)
            .field("lipschitz_k", &self.lipschitz_k)
            .field("zero_bound", &self.zero_bound)
            .field("time_constant", &self.time_constant)
            .field("path_dependent", &self.path_dependent)
            .field("analytic_conjugate", &self.analytic_conjugate.is_some())
            .finish()
    }
}

impl DriverSpec {
    /// A driver that may depend on time and on the path. Declare structure
    /// with the builder methods to unlock exact shortcuts.
    pub fn new<F>(name: impl Into<String>, lipschitz_k: f64, zero_bound: f64, evaluate: F) -> Self
    where
        F: Fn(f64, &PathView<'_>, f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            evaluate: Arc::new(evaluate),
            lipschitz_k,
            zero_bound,
            z_lipschitz: None,
            lower_bound: None,
            analytic_conjugate: None,
            analytic_subgradient: None,
            time_constant: false,
            path_dependent: true,
            y_monotonicity: None,
        }
    }

    /// Shorthand for drivers of the form `f(y, z)`.
    pub fn markovian<F>(name: impl Into<String>, lipschitz_k: f64, zero_bound: f64, f: F) -> Self
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(name, lipschitz_k, zero_bound, move |_, _, y, z| f(y, z))
            .time_constant()
            .path_independent()
    }

    pub fn time_constant(mut self) -> Self {
        self.time_constant = true;
        self
    }

    pub fn path_independent(mut self) -> Self {
        self.path_dependent = false;
        self
    }

    pub fn with_z_lipschitz<F: Fn(f64) -> f64 + Send + Sync + 'static>(mut self, b: F) -> Self {
        self.z_lipschitz = Some(Arc::new(b));
        self
    }

    pub fn with_lower_bound<F: Fn(f64) -> f64 + Send + Sync + 'static>(mut self, lb: F) -> Self {
        self.lower_bound = Some(Arc::new(lb));
        self
    }

    pub fn with_conjugate<F>(mut self, g: F) -> Self
    where
        F: Fn(f64, &PathView<'_>, f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.analytic_conjugate = Some(Arc::new(g));
        self
    }

    pub fn with_subgradient<F>(mut self, s: F) -> Self
    where
        F: Fn(f64, &PathView<'_>, f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.analytic_subgradient = Some(Arc::new(s));
        self
    }

    pub fn monotone_in_y(mut self, m: YMonotonicity) -> Self {
        self.y_monotonicity = Some(m);
        self
    }

    /// Same driver with the closed-form conjugate and subgradient dropped,
    /// forcing the numeric routes.
    pub fn without_analytic(&self) -> Self {
        let mut s = self.clone();
        s.analytic_conjugate = None;
        s.analytic_subgradient = None;
        s.name = format!("{} (numeric)", self.name);
        s
    }

    /// `f + c`. The conjugate shifts by `-c`; subgradients are unchanged.
    pub fn plus_constant(&self, c: f64) -> Self {
        let mut s = self.clone();
        let f = self.evaluate.clone();
        s.evaluate = Arc::new(move |t, w, y, z| f(t, w, y, z) + c);
        if let Some(g) = self.analytic_conjugate.clone() {
            s.analytic_conjugate = Some(Arc::new(move |t, w, y, mu| g(t, w, y, mu) - c));
        }
        s.zero_bound = self.zero_bound + c.abs();
        if let Some(lb) = self.lower_bound.clone() {
            s.lower_bound = Some(Arc::new(move |r| lb(r) + c));
        }
        s.name = format!("{}+{}", self.name, c);
        s
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, t: f64, path: &PathView<'_>, y: f64, z: &[f64]) -> f64 {
        (self.evaluate)(t, path, y, z)
    }

    pub fn is_time_constant(&self) -> bool {
        self.time_constant
    }

    pub fn is_path_dependent(&self) -> bool {
        self.path_dependent
    }

    pub fn has_analytic_conjugate(&self) -> bool {
        self.analytic_conjugate.is_some()
    }

    /// `b(a)`: Lipschitz constant in `z` on `|z| <= a`, when declared.
    pub fn z_lipschitz(&self, a: f64) -> Option<f64> {
        self.z_lipschitz.as_ref().map(|b| b(a))
    }

    /// Lower bound of `f` over `|y| <= c`, when declared.
    pub fn lower_bound(&self, c: f64) -> Option<f64> {
        self.lower_bound.as_ref().map(|lb| lb(c))
    }

    pub fn y_monotonicity(&self) -> Option<YMonotonicity> {
        self.y_monotonicity
    }
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut sum = f(a) + f(b);
    for j in 1..panels {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + h * j as f64);
    }
    sum * h / 3.0
}

/// Step average `(1/dt) ∫_{t_i}^{t_{i+1}} f(s, w, y, z) ds` for step index
/// `i` in `0..N`. Exact for time-constant drivers.
pub fn average_driver(
    f: &DriverSpec,
    grid: &TimeGrid,
    i: usize,
    path: &PathView<'_>,
    y: f64,
    z: &[f64],
) -> Result<f64> {
    if i >= grid.steps() {
        return Err(BsdeError::Domain(format!(
            "step index {i} out of range 0..{}",
            grid.steps()
        )));
    }
    let (a, b) = (grid.point(i), grid.point(i + 1));
    if f.time_constant {
        return Ok(f.eval(b, path, y, z));
    }
    let integrand = |s: f64| f.eval(s, path, y, z);
    let fine = simpson(&integrand, a, b, SIMPSON_PANELS) / (b - a);
    let coarse = simpson(&integrand, a, b, SIMPSON_PANELS / 2) / (b - a);
    let error = (fine - coarse).abs();
    if !(error <= QUADRATURE_TOL * (1.0 + fine.abs())) {
        return Err(BsdeError::Quadrature { estimate: fine, error });
    }
    Ok(fine)
}

/// Unchecked 32-panel average, for inner loops after one checked call.
fn average_driver_fast(f: &DriverSpec, grid: &TimeGrid, i: usize, path: &PathView<'_>, y: f64, z: &[f64]) -> f64 {
    let (a, b) = (grid.point(i), grid.point(i + 1));
    if f.time_constant {
        return f.eval(b, path, y, z);
    }
    simpson(&|s| f.eval(s, path, y, z), a, b, SIMPSON_PANELS) / (b - a)
}

/// `g(t, w, y, mu) = sup_z { z.mu - f(t, w, y, z) }`; `f64::INFINITY` when
/// `mu` is outside the domain of `g`.
pub fn conjugate(f: &DriverSpec, t: f64, path: &PathView<'_>, y: f64, mu: &[f64]) -> f64 {
    if let Some(g) = &f.analytic_conjugate {
        return g(t, path, y, mu);
    }
    numeric_conjugate(&|z: &[f64]| f.eval(t, path, y, z), mu)
}

/// Conjugate of the step-averaged driver of step `i`.
pub fn conjugate_averaged(
    f: &DriverSpec,
    grid: &TimeGrid,
    i: usize,
    path: &PathView<'_>,
    y: f64,
    mu: &[f64],
) -> Result<f64> {
    if f.time_constant {
        return Ok(conjugate(f, grid.point(i + 1), path, y, mu));
    }
    average_driver(f, grid, i, path, y, &vec![0.0; mu.len()])?;
    Ok(numeric_conjugate(
        &|z: &[f64]| average_driver_fast(f, grid, i, path, y, z),
        mu,
    ))
}

fn central_difference(h: &dyn Fn(&[f64]) -> f64, z: &[f64]) -> Vec<f64> {
    let step = 1e-6 * (1.0 + norm(z));
    let mut grad = vec![0.0; z.len()];
    let mut probe = z.to_vec();
    for k in 0..z.len() {
        probe[k] = z[k] + step;
        let up = h(&probe);
        probe[k] = z[k] - step;
        let down = h(&probe);
        probe[k] = z[k];
        grad[k] = (up - down) / (2.0 * step);
    }
    grad
}

fn validate_fenchel_young(fz: f64, g: f64, z: &[f64], mu: &[f64]) -> Result<()> {
    let zmu = dot(z, mu);
    let residual = (fz + g - zmu).abs();
    if !(residual <= FENCHEL_YOUNG_TOL * (1.0 + zmu.abs())) {
        return Err(BsdeError::SubgradientValidation { residual });
    }
    Ok(())
}

/// Some `mu* ∈ ∂_z f(t, w, y, z)`. Without a closed form, central
/// differences are used (at a kink this averages the one-sided slopes) and
/// the result is checked against the Fenchel-Young identity.
pub fn subgradient(f: &DriverSpec, t: f64, path: &PathView<'_>, y: f64, z: &[f64]) -> Result<Vec<f64>> {
    if let Some(s) = &f.analytic_subgradient {
        return Ok(s(t, path, y, z));
    }
    let mu = central_difference(&|p: &[f64]| f.eval(t, path, y, p), z);
    let g = conjugate(f, t, path, y, &mu);
    validate_fenchel_young(f.eval(t, path, y, z), g, z, &mu)?;
    Ok(mu)
}

/// Subgradient of the step-averaged driver of step `i`.
pub fn subgradient_averaged(
    f: &DriverSpec,
    grid: &TimeGrid,
    i: usize,
    path: &PathView<'_>,
    y: f64,
    z: &[f64],
) -> Result<Vec<f64>> {
    if f.time_constant {
        return subgradient(f, grid.point(i + 1), path, y, z);
    }
    let fz = average_driver(f, grid, i, path, y, z)?;
    let h = |p: &[f64]| average_driver_fast(f, grid, i, path, y, p);
    let mu = central_difference(&h, z);
    let g = numeric_conjugate(&h, &mu);
    validate_fenchel_young(fz, g, z, &mu)?;
    Ok(mu)
}
