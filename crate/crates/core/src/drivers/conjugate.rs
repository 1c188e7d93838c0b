//! Numeric Legendre-Fenchel transform in the `z` argument.
//!
//! `sup_z { z.mu - f(z) }` is the maximum of a concave function. Each line
//! search scans a grid on `[-R, R]` with `R = 1 + |mu|`, refines the best cell
//! by golden section, and doubles `R` while the maximum sits on the boundary
//! with positive slope. Still climbing after three doublings means `mu` lies
//! outside the domain of the conjugate.

use crate::path::{dot, norm};

const GRID_CELLS: usize = 128;
const DOUBLINGS: usize = 3;
const GOLDEN_ITERS: usize = 120;
/// Boundary slope below this (relative to `1 + |mu|`) counts as flat.
const SLOPE_TOL: f64 = 1e-8;

enum Line {
    Finite { arg: f64, value: f64 },
    Unbounded,
}

/// Maximize the concave `h` along the real line.
fn line_sup(h: &dyn Fn(f64) -> f64, initial_radius: f64, scale: f64) -> Line {
    let mut radius = initial_radius;
    for attempt in 0..=DOUBLINGS {
        let cell = 2.0 * radius / GRID_CELLS as f64;
        let point = |k: usize| -radius + cell * k as f64;
        let mut best_k = 0;
        let mut best = f64::NEG_INFINITY;
        let mut values = Vec::with_capacity(GRID_CELLS + 1);
        for k in 0..=GRID_CELLS {
            let v = h(point(k));
            values.push(v);
            if v > best {
                best = v;
                best_k = k;
            }
        }
        let boundary = best_k == 0 || best_k == GRID_CELLS;
        if boundary {
            let inner = if best_k == 0 { 1 } else { GRID_CELLS - 1 };
            let slope = (values[best_k] - values[inner]) / cell;
            if slope > SLOPE_TOL * scale {
                if attempt == DOUBLINGS {
                    return Line::Unbounded;
                }
                radius *= 2.0;
                continue;
            }
        }
        let lo = point(best_k.saturating_sub(1));
        let hi = point((best_k + 1).min(GRID_CELLS));
        let (arg, value) = golden_max(h, lo, hi);
        return if value >= best {
            Line::Finite { arg, value }
        } else {
            Line::Finite {
                arg: point(best_k),
                value: best,
            }
        };
    }
    unreachable!("loop returns on its last attempt")
}

fn golden_max(h: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut hc = h(c);
    let mut hd = h(d);
    for _ in 0..GOLDEN_ITERS {
        if (b - a).abs() <= 1e-14 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if hc >= hd {
            b = d;
            d = c;
            hd = hc;
            c = b - inv_phi * (b - a);
            hc = h(c);
        } else {
            a = c;
            c = d;
            hc = hd;
            d = a + inv_phi * (b - a);
            hd = h(d);
        }
    }
    if hc >= hd {
        (c, hc)
    } else {
        (d, hd)
    }
}

/// `sup_z { z.mu - f(z) }` by search; `f64::INFINITY` marks an unbounded sup.
///
/// In several dimensions this runs repeated line searches along `mu` and the
/// coordinate axes, which is exact for radial drivers and for smooth ones.
pub fn numeric_conjugate(f: &dyn Fn(&[f64]) -> f64, mu: &[f64]) -> f64 {
    let d = mu.len();
    let mu_norm = norm(mu);
    let scale = 1.0 + mu_norm;
    let objective = |z: &[f64]| dot(z, mu) - f(z);

    let mut directions: Vec<Vec<f64>> = Vec::new();
    if d > 1 && mu_norm > 0.0 {
        directions.push(mu.iter().map(|m| m / mu_norm).collect());
    }
    for k in 0..d {
        let mut e = vec![0.0; d];
        e[k] = 1.0;
        directions.push(e);
    }

    let mut z = vec![0.0; d];
    let mut current = objective(&z);
    let sweeps = if d == 1 { 1 } else { 200 };
    for _ in 0..sweeps {
        let before = current;
        for u in &directions {
            let base = z.clone();
            let line = |t: f64| {
                let p: Vec<f64> = base.iter().zip(u).map(|(b, e)| b + t * e).collect();
                objective(&p)
            };
            match line_sup(&line, scale + norm(&base), scale) {
                Line::Unbounded => return f64::INFINITY,
                Line::Finite { arg, value } => {
                    // Moves whose gain is below the flatness tolerance are
                    // drift along a boundary of the domain, not ascent.
                    if value - current > SLOPE_TOL * scale * arg.abs() {
                        current = value;
                        for (zk, e) in z.iter_mut().zip(u) {
                            *zk += arg * e;
                        }
                    }
                }
            }
        }
        if current - before <= 1e-15 * (1.0 + current.abs()) {
            break;
        }
    }
    current
}
