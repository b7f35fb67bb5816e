//! Weierstrass `℘` and `ζ` on rectangular lattices.
//!
//! Evaluation goes through the q-series of the theta-function representation.
//! When the nome of the given basis exceeds 1/2 the basis is swapped to
//! `(ω₂, −ω₁)`, which makes the working nome `exp(−π ω₁/|ω₂|)`.

use num_complex::Complex64;
use std::f64::consts::PI;
use thiserror::Error;

pub type C64 = Complex64;

const I: C64 = C64::new(0.0, 1.0);
const SERIES_TOL: f64 = 1e-18;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EllipticError {
    #[error("invalid lattice: omega1 = {omega1}, omega2_im = {omega2_im}")]
    InvalidLattice { omega1: f64, omega2_im: f64 },
    #[error("argument {z} lies within {distance:e} of a lattice point")]
    NearPole { z: C64, distance: f64 },
}

pub type Result<T> = std::result::Result<T, EllipticError>;

/// Rectangular period lattice `ω₁ ℤ + i ω₂_im ℤ` with cached series data.
#[derive(Debug, Clone)]
pub struct Lattice {
    omega1: f64,
    omega2_im: f64,
    guard: f64,
    swapped: bool,
    w1: C64,
    w2: C64,
    tau: C64,
    eta1w: C64,
    eta2w: C64,
    // (Q^n, 1 / (1 - Q^n)) for Q = q^2 of the working basis
    coef: Vec<(C64, C64)>,
}

impl Lattice {
    pub fn new(omega1: f64, omega2_im: f64) -> Result<Self> {
        if !(omega1 > 0.0 && omega2_im > 0.0 && omega1.is_finite() && omega2_im.is_finite()) {
            return Err(EllipticError::InvalidLattice { omega1, omega2_im });
        }
        let mut w1 = C64::new(omega1, 0.0);
        let mut w2 = C64::new(0.0, omega2_im);
        let mut swapped = false;
        // |q| = exp(-pi * omega2_im / omega1)
        if (-PI * omega2_im / omega1).exp() > 0.5 {
            let t = w1;
            w1 = w2;
            w2 = -t;
            swapped = true;
        }
        let tau = w2 / w1;
        let q_abs = (-PI * tau.im).exp();
        let big_q = (2.0 * I * PI * tau).exp();
        let nmax = ((SERIES_TOL.ln() / q_abs.ln()).ceil() as usize + 2).clamp(4, 400);
        let mut coef = Vec::with_capacity(nmax);
        let mut qn = C64::new(1.0, 0.0);
        for _ in 0..nmax {
            qn *= big_q;
            coef.push((qn, 1.0 / (1.0 - qn)));
        }
        let s: C64 = coef
            .iter()
            .enumerate()
            .map(|(k, &(qn, c))| (k + 1) as f64 * qn * c)
            .sum();
        let eta1w = PI * PI / (6.0 * w1) * (1.0 - 24.0 * s);
        let mut lat = Lattice {
            omega1,
            omega2_im,
            guard: 1e-8 * omega1.min(omega2_im),
            swapped,
            w1,
            w2,
            tau,
            eta1w,
            eta2w: C64::new(0.0, 0.0),
            coef,
        };
        let (z, _) = lat.series(w2 / 2.0, false);
        lat.eta2w = z;
        Ok(lat)
    }

    /// Replace the pole-guard radius (default `1e-8 · min(ω₁, ω₂_im)`).
    pub fn with_pole_guard(mut self, guard: f64) -> Self {
        self.guard = guard.max(0.0);
        self
    }

    pub fn omega1(&self) -> f64 {
        self.omega1
    }

    pub fn omega2_im(&self) -> f64 {
        self.omega2_im
    }

    /// Nome `exp(iπ ω₂/ω₁)` of the user basis.
    pub fn nome(&self) -> f64 {
        (-PI * self.omega2_im / self.omega1).exp()
    }

    /// `ζ(ω₁/2)`.
    pub fn eta1(&self) -> C64 {
        if self.swapped {
            -self.eta2w
        } else {
            self.eta1w
        }
    }

    /// `ζ(ω₂/2)`.
    pub fn eta2(&self) -> C64 {
        if self.swapped {
            self.eta1w
        } else {
            self.eta2w
        }
    }

    /// `2η₁ω₂ − 2η₂ω₁`, equal to `2πi`.
    pub fn legendre_residual(&self) -> f64 {
        let w2 = C64::new(0.0, self.omega2_im);
        (2.0 * self.eta1() * w2 - 2.0 * self.eta2() * self.omega1 - 2.0 * PI * I).norm()
    }

    fn reduce(&self, z: C64) -> (C64, f64, f64) {
        let u = z / self.w1;
        let b = u.im / self.tau.im;
        let a = u.re - b * self.tau.re;
        let (m1, m2) = (a.round(), b.round());
        (z - m1 * self.w1 - m2 * self.w2, m1, m2)
    }

    pub fn distance_to_lattice(&self, z: C64) -> f64 {
        self.reduce(z).0.norm()
    }

    fn check(&self, z: C64) -> Result<(C64, f64, f64)> {
        let (z0, m1, m2) = self.reduce(z);
        let d = z0.norm();
        if d < self.guard || !d.is_finite() {
            return Err(EllipticError::NearPole { z, distance: d });
        }
        Ok((z0, m1, m2))
    }

    // Returns (ζ, ℘) at a reduced point; `regular` subtracts 1/z and 1/z^2.
    fn series(&self, z: C64, regular: bool) -> (C64, C64) {
        let v = PI * z / self.w1;
        let lq = 2.0 * I * PI * self.tau;
        let x = (lq + 2.0 * I * v).exp();
        let y = (lq - 2.0 * I * v).exp();
        let (mut xn, mut yn) = (C64::new(1.0, 0.0), C64::new(1.0, 0.0));
        let mut sz = C64::new(0.0, 0.0);
        let mut sp = C64::new(0.0, 0.0);
        for (k, &(_, c)) in self.coef.iter().enumerate() {
            xn *= x;
            yn *= y;
            sz += (xn - yn) * c;
            sp += (k + 1) as f64 * (xn + yn) * c;
            if xn.norm() + yn.norm() < SERIES_TOL {
                break;
            }
        }
        sz /= 2.0 * I;
        sp /= 2.0;
        let (cot, csc2) = if regular {
            cot_csc2_regular(v)
        } else {
            let cot = if v.im > 0.0 {
                let w = (2.0 * I * v).exp();
                I * (w + 1.0) / (w - 1.0)
            } else {
                let w = (-2.0 * I * v).exp();
                I * (1.0 + w) / (1.0 - w)
            };
            (cot, 1.0 + cot * cot)
        };
        let k = PI / self.w1;
        let zeta = 2.0 * self.eta1w * z / self.w1 + k * (cot + 4.0 * sz);
        let wp = -2.0 * self.eta1w / self.w1 + k * k * (csc2 - 8.0 * sp);
        (zeta, wp)
    }

    /// `(ζ(z), ℘(z))` sharing one series pass.
    pub fn zeta_wp(&self, z: C64) -> Result<(C64, C64)> {
        let (z0, m1, m2) = self.check(z)?;
        let (zeta, wp) = self.series(z0, false);
        Ok((zeta + 2.0 * (m1 * self.eta1w + m2 * self.eta2w), wp))
    }

    pub fn zeta(&self, z: C64) -> Result<C64> {
        self.zeta_wp(z).map(|r| r.0)
    }

    pub fn wp(&self, z: C64) -> Result<C64> {
        self.zeta_wp(z).map(|r| r.1)
    }

    /// `(ζ(z) − 1/z, ℘(z) − 1/z²)`, accurate near the origin and finite at 0.
    pub fn zeta_wp_regular(&self, z: C64) -> Result<(C64, C64)> {
        let (_, m1, m2) = self.reduce(z);
        if m1 == 0.0 && m2 == 0.0 && (PI * z / self.w1).norm() < 0.5 {
            return Ok(self.series(z, true));
        }
        let (zeta, wp) = self.zeta_wp(z)?;
        let r = 1.0 / z;
        Ok((zeta - r, wp - r * r))
    }
}

/// `ζ(ω₂/2)`, the constant entering the rapidity map and the dispersion.
pub fn zeta_halfperiod_constant(lat: &Lattice) -> C64 {
    lat.eta2()
}

// cot v − 1/v = Σ a_k v^(2k−1) with a_k = (−1)^k 2^(2k) B_2k / (2k)!
fn cot_csc2_regular(v: C64) -> (C64, C64) {
    const BERNOULLI: [(f64, f64); 12] = [
        (1.0, 6.0),
        (-1.0, 30.0),
        (1.0, 42.0),
        (-1.0, 30.0),
        (5.0, 66.0),
        (-691.0, 2730.0),
        (7.0, 6.0),
        (-3617.0, 510.0),
        (43867.0, 798.0),
        (-174611.0, 330.0),
        (854513.0, 138.0),
        (-236364091.0, 2730.0),
    ];
    let v2 = v * v;
    let mut cot = C64::new(0.0, 0.0);
    let mut csc2 = C64::new(0.0, 0.0);
    let mut pow = C64::new(1.0, 0.0); // v^(2k-2)
    let mut fact = 1.0;
    let mut two = 1.0;
    for (k, &(num, den)) in BERNOULLI.iter().enumerate() {
        let k = k + 1;
        fact *= ((2 * k - 1) * (2 * k)) as f64;
        two *= 4.0;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let a = sign * two * (num / den) / fact;
        cot += a * pow * v;
        csc2 -= a * (2 * k - 1) as f64 * pow;
        pow *= v2;
    }
    (cot, csc2)
}
