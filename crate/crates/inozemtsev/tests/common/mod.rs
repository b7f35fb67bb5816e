//! Independent reference implementations used only by the integration tests.
#![allow(dead_code)]

use num_complex::Complex64 as C64;
use std::f64::consts::PI;

/// Symmetric box lattice sum for `ζ` (or `℘`) with Neville extrapolation in `1/N`.
pub fn lattice_sum(z: C64, omega1: f64, omega2_im: f64, wp: bool) -> C64 {
    let w2 = C64::new(0.0, omega2_im);
    let sums: Vec<C64> = [16i64, 32, 64, 128, 256]
        .iter()
        .map(|&n| {
            let mut s = if wp { 1.0 / (z * z) } else { 1.0 / z };
            for a in -n..=n {
                for b in -n..=n {
                    if a == 0 && b == 0 {
                        continue;
                    }
                    let w = a as f64 * omega1 + b as f64 * w2;
                    s += if wp {
                        1.0 / ((z - w) * (z - w)) - 1.0 / (w * w)
                    } else {
                        1.0 / (z - w) + 1.0 / w + z / (w * w)
                    };
                }
            }
            s
        })
        .collect();
    let mut cur = sums;
    let mut p = 2;
    while cur.len() > 1 {
        let r = 2f64.powi(p);
        cur = cur.windows(2).map(|w| (r * w[1] - w[0]) / (r - 1.0)).collect();
        p += 1;
    }
    cur[0]
}

/// Derivative of an analytic function by the Cauchy integral on a small circle.
pub fn cauchy_derivative(f: impl Fn(C64) -> C64, z: C64, r: f64) -> C64 {
    let n = 64;
    let mut s = C64::new(0.0, 0.0);
    for k in 0..n {
        let e = C64::from_polar(1.0, 2.0 * PI * k as f64 / n as f64);
        s += f(z + r * e) / e;
    }
    s / (n as f64 * r)
}

/// Hyperbolic dispersion series with explicit `sinh`.
pub fn eps_series(p: f64, kappa: f64, j: f64) -> f64 {
    let mut s = 0.0;
    for n in 1..=200 {
        let x = kappa * n as f64;
        if x > 350.0 {
            break;
        }
        s += (kappa.sinh() / x.sinh()).powi(2) * (1.0 - (p * n as f64).cos());
    }
    j * s
}

/// Grid-scan maximiser of a real function on `[a, b]`.
pub fn grid_argmax(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> (f64, f64) {
    let mut best = (a, f64::NEG_INFINITY);
    for i in 0..=n {
        let x = a + (b - a) * i as f64 / n as f64;
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}
