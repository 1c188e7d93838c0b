//! Sampled checks of the standing assumptions on a driver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DriverSpec, TerminalFunctional};
use crate::path::{norm, sup_distance, sup_distance_until, PathView};
use crate::report::{Check, Report};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingPlan {
    /// Draws per property.
    pub samples: usize,
    pub seed: u64,
    pub dim: usize,
    pub horizon: f64,
    /// Knots of the sampled paths.
    pub knots: usize,
    /// `y` is drawn from `[-y_range, y_range]`.
    pub y_range: f64,
    /// Each `z` component is drawn from `[-z_range, z_range]`.
    pub z_range: f64,
    /// Per-knot increment scale of sampled paths.
    pub path_scale: f64,
    /// Radius `a` for the local `z`-Lipschitz check.
    pub z_radius: f64,
    /// Radius `c` for the lower-bound check.
    pub y_radius: f64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            samples: 256,
            seed: 0x5eed,
            dim: 1,
            horizon: 1.0,
            knots: 9,
            y_range: 2.0,
            z_range: 2.0,
            path_scale: 0.5,
            z_radius: 1.0,
            y_radius: 1.0,
        }
    }
}

struct Sampler {
    rng: ChaCha8Rng,
    times: Vec<f64>,
    plan: SamplingPlan,
}

impl Sampler {
    fn new(plan: &SamplingPlan) -> Self {
        let n = plan.knots.max(2);
        let times = (0..n).map(|j| plan.horizon * j as f64 / (n - 1) as f64).collect();
        Self {
            rng: ChaCha8Rng::seed_from_u64(plan.seed),
            times,
            plan: plan.clone(),
        }
    }

    fn uniform(&mut self, r: f64) -> f64 {
        self.rng.gen_range(-r..=r)
    }

    fn vector(&mut self, r: f64) -> Vec<f64> {
        (0..self.plan.dim).map(|_| self.uniform(r)).collect()
    }

    /// Random walk knots starting at the origin.
    fn path(&mut self) -> Vec<f64> {
        let d = self.plan.dim;
        let mut knots = vec![0.0; self.times.len() * d];
        for j in 1..self.times.len() {
            for k in 0..d {
                knots[j * d + k] = knots[(j - 1) * d + k] + self.uniform(self.plan.path_scale);
            }
        }
        knots
    }

    fn time(&mut self) -> f64 {
        self.rng.gen_range(0.0..=self.plan.horizon)
    }
}

fn slack(scale: f64) -> f64 {
    1e-9 * (1.0 + scale.abs())
}

/// Pass/fail per standing assumption: convexity in `z`, bound at zero,
/// Lipschitz in `(w, y)`, local Lipschitz in `z`, lower bound.
pub fn verify_driver_properties(f: &DriverSpec, plan: &SamplingPlan) -> Report {
    let mut s = Sampler::new(plan);
    let mut report = Report::default();
    let d = plan.dim;
    let times = s.times.clone();

    let mut worst = 0.0f64;
    for _ in 0..plan.samples {
        let knots = s.path();
        let w = PathView::new(&times, &knots, d);
        let (t, y) = (s.time(), s.uniform(plan.y_range));
        let (z1, z2) = (s.vector(plan.z_range), s.vector(plan.z_range));
        let mid: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| 0.5 * (a + b)).collect();
        let lhs = f.eval(t, &w, y, &mid);
        let rhs = 0.5 * (f.eval(t, &w, y, &z1) + f.eval(t, &w, y, &z2));
        worst = worst.max((lhs - rhs) / (1.0 + rhs.abs()));
    }
    report.push(Check::new(
        "f1-convex-in-z",
        worst <= 1e-12,
        format!("max relative midpoint excess {worst:.3e}"),
    ));

    let zero = vec![0.0; d];
    let mut max_abs = 0.0f64;
    for _ in 0..plan.samples {
        let knots = s.path();
        let w = PathView::new(&times, &knots, d);
        let t = s.time();
        max_abs = max_abs.max(f.eval(t, &w, 0.0, &zero).abs());
    }
    report.push(Check::new(
        "f2-bounded-at-zero",
        max_abs <= f.zero_bound + slack(f.zero_bound),
        format!("max |f(t,w,0,0)| = {max_abs:.6e}, declared {:.6e}", f.zero_bound),
    ));

    let mut worst_ratio = 0.0f64;
    let mut violated = false;
    for _ in 0..plan.samples {
        let (k1, k2) = (s.path(), s.path());
        let (w1, w2) = (PathView::new(&times, &k1, d), PathView::new(&times, &k2, d));
        let t = s.time();
        let (y1, y2) = (s.uniform(plan.y_range), s.uniform(plan.y_range));
        let z = s.vector(plan.z_range);
        let diff = (f.eval(t, &w1, y1, &z) - f.eval(t, &w2, y2, &z)).abs();
        let dist = sup_distance_until(&w1, &w2, t) + (y1 - y2).abs();
        if dist > 0.0 {
            worst_ratio = worst_ratio.max(diff / dist);
        }
        if diff > f.lipschitz_k * dist + slack(diff) {
            violated = true;
        }
    }
    report.push(Check::new(
        "f3-lipschitz-w-y",
        !violated,
        format!("max ratio {worst_ratio:.6e}, declared K {:.6e}", f.lipschitz_k),
    ));

    let a = plan.z_radius;
    match f.z_lipschitz(a) {
        Some(b) => {
            let mut worst = 0.0f64;
            let mut violated = false;
            for _ in 0..plan.samples {
                let knots = s.path();
                let w = PathView::new(&times, &knots, d);
                let (t, y) = (s.time(), s.uniform(plan.y_range));
                let z1 = in_ball(s.vector(a), a);
                let z2 = in_ball(s.vector(a), a);
                let diff = (f.eval(t, &w, y, &z1) - f.eval(t, &w, y, &z2)).abs();
                let dz: Vec<f64> = z1.iter().zip(&z2).map(|(p, q)| p - q).collect();
                let dist = norm(&dz);
                if dist > 0.0 {
                    worst = worst.max(diff / dist);
                }
                if diff > b * dist + slack(diff) {
                    violated = true;
                }
            }
            report.push(Check::new(
                "f4-local-lipschitz-z",
                !violated,
                format!("|z| <= {a}: max ratio {worst:.6e}, declared b(a) {b:.6e}"),
            ));
        }
        None => report.push(Check::not_checked("f4-local-lipschitz-z", "b(a) not declared")),
    }

    let c = plan.y_radius;
    match f.lower_bound(c) {
        Some(lb) => {
            let mut min = f64::INFINITY;
            for _ in 0..plan.samples {
                let knots = s.path();
                let w = PathView::new(&times, &knots, d);
                let (t, y) = (s.time(), s.uniform(c));
                let z = s.vector(plan.z_range);
                min = min.min(f.eval(t, &w, y, &z));
            }
            report.push(Check::new(
                "f5-lower-bound",
                min >= lb - slack(lb),
                format!("|y| <= {c}: min f {min:.6e}, declared {lb:.6e}"),
            ));
        }
        None => report.push(Check::not_checked("f5-lower-bound", "lower bound not declared")),
    }
    report
}

fn in_ball(z: Vec<f64>, a: f64) -> Vec<f64> {
    let r = norm(&z);
    if r <= a {
        z
    } else {
        z.into_iter().map(|v| v * a / r).collect()
    }
}

/// Sampled check of the declared sup-norm Lipschitz constant and bound.
pub fn verify_terminal_properties(phi: &TerminalFunctional, plan: &SamplingPlan) -> Report {
    let mut s = Sampler::new(plan);
    let mut report = Report::default();
    let d = plan.dim;
    let times = s.times.clone();
    let mut worst_ratio = 0.0f64;
    let mut lip_ok = true;
    let mut max_abs = 0.0f64;
    for _ in 0..plan.samples {
        let (k1, k2) = (s.path(), s.path());
        let (w1, w2) = (PathView::new(&times, &k1, d), PathView::new(&times, &k2, d));
        let (v1, v2) = (phi.evaluate(&w1), phi.evaluate(&w2));
        max_abs = max_abs.max(v1.abs()).max(v2.abs());
        let dist = sup_distance(&w1, &w2);
        if dist > 0.0 {
            worst_ratio = worst_ratio.max((v1 - v2).abs() / dist);
        }
        if let Some(l) = phi.lipschitz {
            if (v1 - v2).abs() > l * dist + slack(v1 - v2) {
                lip_ok = false;
            }
        }
    }
    match phi.lipschitz {
        Some(l) => report.push(Check::new(
            "terminal-lipschitz",
            lip_ok,
            format!("max ratio {worst_ratio:.6e}, declared L {l:.6e}"),
        )),
        None => report.push(Check::not_checked("terminal-lipschitz", "L not declared")),
    }
    match phi.bound {
        Some(b) => report.push(Check::new(
            "terminal-bound",
            max_abs <= b + slack(b),
            format!("max |phi| {max_abs:.6e}, declared {b:.6e}"),
        )),
        None => report.push(Check::not_checked("terminal-bound", "bound not declared")),
    }
    report
}
