//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use bsde_core::drivers::{DriverSpec, TerminalFunctional};
use rand::Rng;

/// Walk value at a full-path node, read directly from the branch bits.
pub fn walk_oracle(level: usize, node: usize, dim: usize, dt: f64) -> Vec<f64> {
    let mut w = vec![0.0; dim];
    for step in 0..level {
        let bits = (node >> (dim * (level - 1 - step))) & ((1 << dim) - 1);
        for (k, wk) in w.iter_mut().enumerate() {
            let up = (bits >> (dim - 1 - k)) & 1 == 1;
            *wk += if up { dt.sqrt() } else { -dt.sqrt() };
        }
    }
    w
}

/// Uniform average of the leaves below a full-path node.
pub fn leaf_mean(xi: &[f64], dim: usize, steps: usize, level: usize, node: usize) -> f64 {
    let span = 1usize << (dim * (steps - level));
    xi[node * span..(node + 1) * span].iter().sum::<f64>() / span as f64
}

pub const LIPSCHITZ_TERMINALS: [&str; 4] = ["endpoint", "clipped-endpoint", "maxpath", "const:0.5"];

pub const ALL_TERMINALS: [&str; 5] = ["endpoint", "clipped-endpoint", "maxpath", "const:0.5", "digital"];

/// A catalog driver with random parameters.
pub fn random_driver<R: Rng>(rng: &mut R) -> DriverSpec {
    let name = match rng.gen_range(0..7) {
        0 => "zero".to_string(),
        1 => format!("constant:{:.3}", rng.gen_range(-1.0..1.0)),
        2 => format!("linear:{:.3},{:.3}", rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.5)),
        3 => "quadratic".to_string(),
        4 => "quartic".to_string(),
        5 => "abs".to_string(),
        _ => "exp".to_string(),
    };
    DriverSpec::from_catalog(&name).unwrap()
}

pub fn random_terminal<R: Rng>(rng: &mut R, names: &[&str]) -> TerminalFunctional {
    let name = names[rng.gen_range(0..names.len())];
    TerminalFunctional::from_catalog(name).unwrap()
}
