//! Built-in drivers and terminal functionals addressable by name.

use super::{DriverSpec, TerminalFunctional, YMonotonicity};
use crate::error::{BsdeError, Result};
use crate::path::norm;

/// Slack on the boundary of indicator-type conjugate domains.
const DOMAIN_SLACK: f64 = 1e-12;

fn parse_number(s: &str, name: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| BsdeError::UnknownCatalog(format!("bad number {s:?} in {name:?}")))
}

fn unit(z: &[f64]) -> Vec<f64> {
    let r = norm(z);
    if r == 0.0 {
        vec![0.0; z.len()]
    } else {
        z.iter().map(|v| v / r).collect()
    }
}

fn ball_indicator(mu: &[f64], radius: f64, inside: f64) -> f64 {
    if norm(mu) <= radius * (1.0 + DOMAIN_SLACK) + DOMAIN_SLACK {
        inside
    } else {
        f64::INFINITY
    }
}

fn constant_driver(name: String, c: f64) -> DriverSpec {
    DriverSpec::markovian(name, 0.0, c.abs(), move |_, _| c)
        .with_z_lipschitz(|_| 0.0)
        .with_lower_bound(move |_| c)
        .with_conjugate(move |_, _, _, mu| ball_indicator(mu, 0.0, -c))
        .with_subgradient(|_, _, _, z| vec![0.0; z.len()])
        .monotone_in_y(YMonotonicity::Independent)
}

impl DriverSpec {
    /// `zero`, `constant:c`, `linear:a,b`, `quadratic`, `quartic`, `abs`, `exp`.
    pub fn from_catalog(name: &str) -> Result<Self> {
        let name = name.trim();
        let (head, args) = match name.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (name, None),
        };
        let spec = match (head, args) {
            ("zero", None) => constant_driver("zero".into(), 0.0),
            ("constant", Some(a)) => {
                let c = parse_number(a, name)?;
                constant_driver(format!("constant:{c}"), c)
            }
            ("linear", Some(a)) => {
                let (sa, sb) = a
                    .split_once(',')
                    .ok_or_else(|| BsdeError::UnknownCatalog(format!("linear needs a,b: {name:?}")))?;
                let (a, b) = (parse_number(sa, name)?, parse_number(sb, name)?);
                if b < 0.0 {
                    return Err(BsdeError::UnknownCatalog(format!(
                        "linear slope must be nonnegative for convexity: {name:?}"
                    )));
                }
                DriverSpec::markovian(format!("linear:{a},{b}"), b, a.abs(), move |y, z| {
                    a + b * (y.abs() + norm(z))
                })
                .with_z_lipschitz(move |_| b)
                .with_lower_bound(move |_| a)
                .with_conjugate(move |_, _, y, mu| ball_indicator(mu, b, -a - b * y.abs()))
                .with_subgradient(move |_, _, _, z| unit(z).into_iter().map(|u| b * u).collect())
            }
            ("quadratic", None) => {
                DriverSpec::markovian("quadratic", 0.0, 0.0, |_, z| 0.5 * z.iter().map(|v| v * v).sum::<f64>())
                    .with_z_lipschitz(|a| a)
                    .with_lower_bound(|_| 0.0)
                    .with_conjugate(|_, _, _, mu| 0.5 * mu.iter().map(|v| v * v).sum::<f64>())
                    .with_subgradient(|_, _, _, z| z.to_vec())
                    .monotone_in_y(YMonotonicity::Independent)
            }
            ("quartic", None) => DriverSpec::markovian("quartic", 0.0, 0.0, |_, z| {
                let r2: f64 = z.iter().map(|v| v * v).sum();
                r2 * r2
            })
            .with_z_lipschitz(|a| 4.0 * a * a * a)
            .with_lower_bound(|_| 0.0)
            .with_conjugate(|_, _, _, mu| 3.0 * (norm(mu) / 4.0).powf(4.0 / 3.0))
            .with_subgradient(|_, _, _, z| {
                let r2: f64 = z.iter().map(|v| v * v).sum();
                z.iter().map(|v| 4.0 * r2 * v).collect()
            })
            .monotone_in_y(YMonotonicity::Independent),
            ("abs", None) => DriverSpec::markovian("abs", 0.0, 0.0, |_, z| norm(z))
                .with_z_lipschitz(|_| 1.0)
                .with_lower_bound(|_| 0.0)
                .with_conjugate(|_, _, _, mu| ball_indicator(mu, 1.0, 0.0))
                .with_subgradient(|_, _, _, z| unit(z))
                .monotone_in_y(YMonotonicity::Independent),
            ("exp", None) => DriverSpec::markovian("exp", 0.0, 0.0, |_, z| norm(z).exp_m1())
                .with_z_lipschitz(|a| a.exp())
                .with_lower_bound(|_| 0.0)
                .with_conjugate(|_, _, _, mu| {
                    let m = norm(mu);
                    if m <= 1.0 {
                        0.0
                    } else {
                        m * m.ln() - m + 1.0
                    }
                })
                .with_subgradient(|_, _, _, z| {
                    let r = norm(z);
                    unit(z).into_iter().map(|u| r.exp() * u).collect()
                })
                .monotone_in_y(YMonotonicity::Independent),
            _ => return Err(BsdeError::UnknownCatalog(format!("driver {name:?}"))),
        };
        Ok(spec)
    }
}

impl TerminalFunctional {
    /// `endpoint`, `const:c`, `maxpath`, `digital`, `clipped-endpoint`.
    pub fn from_catalog(name: &str) -> Result<Self> {
        let name = name.trim();
        let (head, args) = match name.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (name, None),
        };
        let phi = match (head, args) {
            ("endpoint", None) => TerminalFunctional::endpoint("endpoint", |x| x[0]).with_lipschitz(1.0),
            ("const", Some(a)) => {
                let c = parse_number(a, name)?;
                TerminalFunctional::endpoint(format!("const:{c}"), move |_| c)
                    .with_lipschitz(0.0)
                    .with_bound(c.abs())
            }
            ("maxpath", None) => TerminalFunctional::path("maxpath", |w| w.sup_norm()).with_lipschitz(1.0),
            ("digital", None) => {
                TerminalFunctional::endpoint("digital", |x| if x[0] > 0.0 { 1.0 } else { 0.0 }).with_bound(1.0)
            }
            ("clipped-endpoint", None) => TerminalFunctional::endpoint("clipped-endpoint", |x| x[0].clamp(-1.0, 1.0))
                .with_lipschitz(1.0)
                .with_bound(1.0),
            _ => return Err(BsdeError::UnknownCatalog(format!("terminal {name:?}"))),
        };
        Ok(phi)
    }
}
