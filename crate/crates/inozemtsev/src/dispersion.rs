//! One-magnon dispersion `ε(p)`, the rapidity map `φ(p)` and its inverse on
//! the region partition `D_n = D_f + 2κin` of the momentum strip.

use crate::elliptic::{EllipticError, Lattice, C64};
use std::f64::consts::PI;
use thiserror::Error;

const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispersionError {
    #[error(transparent)]
    Elliptic(#[from] EllipticError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("phi inversion did not converge for theta = {theta}: last p = {last}, residual {residual:e}")]
    NoConvergence { theta: C64, last: C64, residual: f64 },
    #[error("theta = {theta} lies within {distance:e} of the boundary image curve")]
    ContourProximity { theta: C64, distance: f64 },
    #[error("critical point bracketing failed for kappa = {0}")]
    Bracketing(f64),
}

pub type Result<T> = std::result::Result<T, DispersionError>;

/// Reduce `Re p` into `[−π, π)`.
pub fn to_strip(p: C64) -> C64 {
    if (-PI..PI).contains(&p.re) {
        return p;
    }
    let mut re = (p.re + PI).rem_euclid(2.0 * PI) - PI;
    if re >= PI {
        re -= 2.0 * PI;
    }
    C64::new(re, p.im)
}

/// XXX inverse `2·arccot(2θ)` folded into the strip, used as a Newton seed.
pub fn xxx_seed(theta: C64) -> C64 {
    if theta.norm() < 1e-300 {
        return C64::new(-PI, 0.0);
    }
    to_strip(2.0 * (1.0 / (2.0 * theta)).atan())
}

/// Seed near the pole for thin strips: `ζ(z) ≈ π cot(πz)` with
/// `z = ip/(2κ)`, so `p ≈ −(2iκ/π) arctan(iπ/(2κθ))`.
pub fn pole_seed(theta: C64, kappa: f64) -> C64 {
    let w = C64::new(0.0, -2.0 * kappa / PI) * theta;
    let z = (1.0 / w).atan() / PI;
    C64::new(0.0, -2.0 * kappa) * z
}

/// Constants and cached data for one value of `κ` and `J`.
#[derive(Debug, Clone)]
pub struct DispersionContext {
    kappa: f64,
    j: f64,
    lattice: Lattice,
    zeta_const: C64,
    p_crit: f64,
    theta_crit: f64,
    eps_scale: f64,
    eps_c2: f64,
    seeds: Vec<(C64, C64)>,
}

/// Above this `κ` the hyperbolic series replaces the closed form for `ε`
/// inside the band `|Im p| < κ`; the prefactor `sinh²κ/κ²` leaves no digits.
const SERIES_KAPPA: f64 = 12.0;

/// Beyond this `|θ|` the preimage sits too close to the pole for direct
/// evaluation and the Laurent expansion is used instead.
const LARGE_THETA: f64 = 1e6;

impl DispersionContext {
    pub fn new(kappa: f64, j: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(DispersionError::InvalidParameter(format!("kappa = {kappa}")));
        }
        if !(j > 0.0 && j.is_finite()) {
            return Err(DispersionError::InvalidParameter(format!("J = {j}")));
        }
        let lattice = Lattice::new(1.0, PI / kappa)?;
        let zeta_const = lattice.eta2();
        let eps_scale = if kappa < 300.0 {
            j * kappa.sinh().powi(2) / (2.0 * kappa * kappa)
        } else {
            f64::INFINITY
        };
        let mut ctx = DispersionContext {
            kappa,
            j,
            lattice,
            zeta_const,
            p_crit: 0.0,
            theta_crit: 0.0,
            eps_scale,
            eps_c2: 0.0,
            seeds: Vec::new(),
        };
        let (pc, tc) = ctx.critical_point()?;
        ctx.p_crit = pc;
        ctx.theta_crit = tc;
        let h = 1e-3;
        let e1 = ctx.epsilon_raw(C64::new(h, 0.0))?.re / (h * h);
        let e2 = ctx.epsilon_raw(C64::new(h / 2.0, 0.0))?.re / (h * h / 4.0);
        ctx.eps_c2 = (4.0 * e2 - e1) / 3.0;
        ctx.seeds = ctx.seed_table();
        Ok(ctx)
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn j(&self) -> f64 {
        self.j
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// `ζ(iπ/2κ)` on the lattice `(1, iπ/κ)`.
    pub fn zeta_const(&self) -> C64 {
        self.zeta_const
    }

    pub fn p_crit(&self) -> f64 {
        self.p_crit
    }

    pub fn theta_crit(&self) -> f64 {
        self.theta_crit
    }

    // (A − ζ_r, ℘_r, ζ_r) at z = ip/2κ, with A = p ζ(iπ/2κ)/π
    fn parts(&self, p: C64) -> Result<(C64, C64, C64)> {
        let z = I * p / (2.0 * self.kappa);
        let (zr, pr) = self.lattice.zeta_wp_regular(z)?;
        Ok((p * self.zeta_const / PI - zr, pr, zr))
    }

    fn epsilon_raw(&self, p: C64) -> Result<C64> {
        let p = to_strip(p);
        if self.kappa > SERIES_KAPPA && p.im.abs() < self.kappa {
            return Ok(epsilon_series(p, self.kappa, self.j, 400));
        }
        let (a, pr, zr) = self.parts(p)?;
        let z = I * p / (2.0 * self.kappa);
        let b = -0.5 * pr + 0.5 * a * a + zr / z;
        Ok(self.eps_scale * b)
    }

    /// One-magnon energy from the closed elliptic form.
    pub fn epsilon(&self, p: C64) -> Result<C64> {
        let p = to_strip(p);
        if p.norm() < 1e-6 {
            return Ok(self.eps_c2 * p * p);
        }
        self.epsilon_raw(p)
    }

    /// `φ(p) = p ζ(iπ/2κ)/(2πiκ) − ζ(ip/2κ)/(2iκ)`.
    pub fn phi(&self, p: C64) -> Result<C64> {
        let p = to_strip(p);
        self.guard_pole(p)?;
        let (a, _, _) = self.parts(p)?;
        Ok(a / (2.0 * I * self.kappa) + 1.0 / p)
    }

    /// `φ′(p) = ζ(iπ/2κ)/(2πiκ) + ℘(ip/2κ)/(4κ²)`.
    pub fn phi_derivative(&self, p: C64) -> Result<C64> {
        let p = to_strip(p);
        self.guard_pole(p)?;
        let (_, pr, _) = self.parts(p)?;
        let k2 = self.kappa * self.kappa;
        Ok(self.zeta_const / (2.0 * PI * I * self.kappa) + pr / (4.0 * k2) - 1.0 / (p * p))
    }

    fn phi_and_derivative(&self, p: C64) -> Result<(C64, C64)> {
        let p = to_strip(p);
        self.guard_pole(p)?;
        let (a, pr, _) = self.parts(p)?;
        let k2 = self.kappa * self.kappa;
        let r = 1.0 / p;
        Ok((
            a / (2.0 * I * self.kappa) + r,
            self.zeta_const / (2.0 * PI * I * self.kappa) + pr / (4.0 * k2) - r * r,
        ))
    }

    fn guard_pole(&self, p: C64) -> Result<()> {
        let z = I * p / (2.0 * self.kappa);
        let d = self.lattice.distance_to_lattice(z);
        if d < 1e-8 * (1.0f64).min(PI / self.kappa) {
            return Err(EllipticError::NearPole { z, distance: d }.into());
        }
        Ok(())
    }

    fn critical_point(&self) -> Result<(f64, f64)> {
        let k = self.kappa;
        let g = |x: f64| -> Result<f64> { Ok(self.phi(C64::new(x, k))?.re) };
        let dg = |x: f64| -> Result<f64> { Ok(self.phi_derivative(C64::new(x, k))?.re) };
        let n = 400;
        let mut best = (0usize, f64::NEG_INFINITY);
        for i in 1..n {
            let v = g(PI * i as f64 / n as f64)?;
            if v > best.1 {
                best = (i, v);
            }
        }
        if best.0 == 0 || best.0 == n - 1 {
            return Err(DispersionError::Bracketing(k));
        }
        let (mut a, mut b) = (
            PI * (best.0 - 1) as f64 / n as f64,
            PI * (best.0 + 1) as f64 / n as f64,
        );
        let gr = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..30 {
            let c = b - gr * (b - a);
            let d = a + gr * (b - a);
            if g(c)? > g(d)? {
                b = d;
            } else {
                a = c;
            }
        }
        // polish on the derivative by bisection within a widened bracket
        let (mut lo, mut hi) = (a - 1e-6, b + 1e-6);
        let (flo, fhi) = (dg(lo)?, dg(hi)?);
        if flo.signum() == fhi.signum() {
            let x = 0.5 * (a + b);
            return Ok((x, g(x)?));
        }
        for _ in 0..200 {
            let m = 0.5 * (lo + hi);
            let fm = dg(m)?;
            if fm == 0.0 || hi - lo < 1e-15 {
                break;
            }
            if fm.signum() == flo.signum() {
                lo = m;
            } else {
                hi = m;
            }
        }
        let x = 0.5 * (lo + hi);
        Ok((x, g(x)?))
    }

    /// Index `n` of the region `D_n` containing `p`.
    pub fn region_index(&self, p: C64) -> i64 {
        let p = to_strip(p);
        let k = self.kappa;
        let n0 = (p.im / (2.0 * k) + 0.5).floor();
        let r = p.im - 2.0 * k * n0;
        let tol = 1e-13 * k.max(p.im.abs());
        let q = p.re.abs();
        let n0 = n0 as i64;
        if (r + k).abs() <= tol {
            // bottom edge of D_{n0}, top edge of D_{n0-1}
            if q < self.p_crit {
                n0
            } else {
                n0 - 1
            }
        } else if (r - k).abs() <= tol {
            if q >= self.p_crit {
                n0
            } else {
                n0 + 1
            }
        } else {
            n0
        }
    }

    fn seed_table(&self) -> Vec<(C64, C64)> {
        let k = self.kappa;
        let (nx, ny) = (48, 24);
        let mut out = Vec::with_capacity(nx * ny);
        for a in 0..nx {
            for b in 0..ny {
                let x = -PI + 2.0 * PI * (a as f64 + 0.5) / nx as f64;
                let y = -k + 2.0 * k * (b as f64 + 0.5) / ny as f64;
                let p = C64::new(x, y);
                if let Ok(t) = self.phi(p) {
                    out.push((t, p));
                }
            }
        }
        out
    }

    fn newton(&self, theta: C64, seed: C64, tol: f64) -> Option<C64> {
        let mut p = to_strip(seed);
        let cap = 0.5 * self.kappa.min(1.0);
        for _ in 0..200 {
            let (f, d) = self.phi_and_derivative(p).ok()?;
            let res = f - theta;
            if res.norm() <= tol {
                return Some(p);
            }
            let mut step = res / d;
            if !step.re.is_finite() || !step.im.is_finite() {
                return None;
            }
            if step.norm() > cap {
                step *= cap / step.norm();
            }
            let next = p - step;
            // keep away from the pole at the origin
            p = if next.norm() < 1e-12 { 0.5 * p } else { to_strip(next) };
            if step.norm() < 1e-16 * (1.0 + p.norm()) {
                let r = (self.phi(p).ok()? - theta).norm();
                return (r <= tol).then_some(p);
            }
        }
        None
    }

    fn accept(&self, p: C64, theta: C64, tol: f64) -> bool {
        self.region_index(p) == 0 && self.phi(p).map(|f| (f - theta).norm() <= tol).unwrap_or(false)
    }

    // φ carries a 1/κ prefactor, so its roundoff grows like 1/κ for thin strips
    fn residual_tol(&self, theta: C64) -> f64 {
        1e-12 * theta.norm().max(1.0).max(1.0 / self.kappa)
    }

    /// The unique preimage of `θ` in the fundamental region `D_f`.
    // φ(p) = r/p + g₁p + O(p³), coefficients by Richardson on p·φ(p)
    fn invert_large(&self, theta: C64) -> Result<C64> {
        let h = 1e-3;
        let a = |x: f64| -> Result<C64> { Ok(self.phi(C64::new(x, 0.0))? * x) };
        let (a1, a2) = (a(h)?, a(2.0 * h)?);
        let r = (4.0 * a1 - a2) / 3.0;
        let g1 = (a2 - a1) / (3.0 * h * h);
        let mut p = r / theta;
        for _ in 0..3 {
            p = r / (theta - g1 * p);
        }
        Ok(p)
    }

    pub fn invert_phi_fundamental(&self, theta: C64) -> Result<C64> {
        if theta.norm() > LARGE_THETA {
            return self.invert_large(theta);
        }
        if let Some(p) = self.invert_on_boundary(theta)? {
            return Ok(p);
        }
        let tol = self.residual_tol(theta);
        if theta.im == 0.0 && theta.re != 0.0 {
            if let Some(p) = self.invert_real(theta.re, tol)? {
                return Ok(p);
            }
        }
        let mut last = xxx_seed(theta);
        let mut seeds = vec![xxx_seed(theta)];
        if theta.norm() > 1e-12 {
            seeds.push(1.0 / theta);
            seeds.push(pole_seed(theta, self.kappa));
        }
        for s in seeds {
            if let Some(p) = self.newton(theta, s, tol) {
                if self.accept(p, theta, tol) {
                    return Ok(p);
                }
                last = p;
            }
        }
        // nearest tabulated points, then continuation along the segment
        let mut order: Vec<usize> = (0..self.seeds.len()).collect();
        order.sort_by(|&a, &b| {
            let da = (self.seeds[a].0 - theta).norm();
            let db = (self.seeds[b].0 - theta).norm();
            da.total_cmp(&db)
        });
        for &idx in order.iter().take(12) {
            let (t0, p0) = self.seeds[idx];
            if let Some(p) = self.newton(theta, p0, tol) {
                if self.accept(p, theta, tol) {
                    return Ok(p);
                }
            }
            if let Some(p) = self.continuation(t0, p0, theta, tol) {
                if self.accept(p, theta, tol) {
                    return Ok(p);
                }
                last = p;
            }
        }
        let residual = self.phi(last).map(|f| (f - theta).norm()).unwrap_or(f64::INFINITY);
        Err(DispersionError::NoConvergence { theta, last, residual })
    }

    fn continuation(&self, t0: C64, p0: C64, theta: C64, tol: f64) -> Option<C64> {
        let steps = 32;
        let mut p = p0;
        for s in 1..=steps {
            let t = t0 + (theta - t0) * (s as f64 / steps as f64);
            let tt = if s == steps { tol } else { 1e-10 * t.norm().max(1.0) };
            p = self.newton(t, p, tt)?;
        }
        Some(p)
    }

    // real θ: φ decreases from +∞ to 0 on (0, π] and is odd
    fn invert_real(&self, t: f64, tol: f64) -> Result<Option<C64>> {
        let a = t.abs();
        let g = |x: f64| -> Result<f64> { Ok(self.phi(C64::new(x, 0.0))?.re - a) };
        let (mut lo, mut hi) = (0.0f64, PI);
        for _ in 0..200 {
            let m = 0.5 * (lo + hi);
            if m <= lo || m >= hi {
                break;
            }
            if g(m)? > 0.0 {
                lo = m;
            } else {
                hi = m;
            }
        }
        let x = 0.5 * (lo + hi);
        let p = C64::new(if t < 0.0 { -x } else { x }, 0.0);
        Ok(self.accept(p, C64::new(t, 0.0), tol).then_some(p))
    }

    // θ = x ∓ i/2 with |x| < θ_crit: solve on the boundary edge owned by D_f.
    fn invert_on_boundary(&self, theta: C64) -> Result<Option<C64>> {
        let top = (theta.im + 0.5).abs() < 1e-13;
        let bottom = (theta.im - 0.5).abs() < 1e-13;
        if !(top || bottom) || theta.re.abs() >= self.theta_crit {
            return Ok(None);
        }
        let k = self.kappa;
        let t = theta.re.abs();
        let y = if top { k } else { -k };
        // Re φ(x ± iκ) rises from 0 at x = 0 to θ_crit at p_crit and falls to 0 at π
        let (mut lo, mut hi) = if top { (self.p_crit, PI) } else { (0.0, self.p_crit) };
        let g = |x: f64| -> Result<f64> { Ok(self.phi(C64::new(x, y))?.re - t) };
        let increasing = !top;
        for _ in 0..200 {
            let m = 0.5 * (lo + hi);
            let v = g(m)?;
            if (v < 0.0) == increasing {
                lo = m;
            } else {
                hi = m;
            }
            if hi - lo < 1e-16 {
                break;
            }
        }
        let x = 0.5 * (lo + hi);
        let mut p = C64::new(if theta.re < 0.0 { -x } else { x }, y);
        if top && theta.re == 0.0 {
            p = C64::new(-PI, y);
        }
        Ok(Some(to_strip(p)))
    }

    /// Preimage of `θ` in `D_n`.
    pub fn invert_phi_region(&self, theta: C64, n: i64) -> Result<C64> {
        let pf = self.invert_phi_fundamental(theta + I * n as f64)?;
        Ok(pf + I * (2.0 * self.kappa * n as f64))
    }

    /// Winding number `N − P` of `φ − θ` around the rectangle `|Im p| ≤ κ`.
    pub fn argument_principle_count(&self, theta: C64) -> Result<i64> {
        let k = self.kappa;
        // the horizontal edges map onto Im θ = ∓1/2, |Re θ| ≤ θ_crit exactly,
        // closer than the contour sampling resolves
        if theta.re.abs() <= self.theta_crit {
            let d = (theta.im.abs() - 0.5).abs();
            if d < 1e-4 {
                return Err(DispersionError::ContourProximity { theta, distance: d });
            }
        }
        let m = 1 << 12;
        let corners = [
            C64::new(-PI, -k),
            C64::new(PI, -k),
            C64::new(PI, k),
            C64::new(-PI, k),
        ];
        let mut total = 0.0;
        let mut prev: Option<C64> = None;
        let mut first: Option<C64> = None;
        let mut min_dist = f64::INFINITY;
        for side in 0..4 {
            let (a, b) = (corners[side], corners[(side + 1) % 4]);
            for s in 0..m {
                let p = a + (b - a) * (s as f64 / m as f64);
                // evaluate at the literal point; φ is 2π-periodic in Re p
                let f = self.phi_unreduced(p)? - theta;
                min_dist = min_dist.min(f.norm());
                if let Some(q) = prev {
                    total += (f / q).arg();
                } else {
                    first = Some(f);
                }
                prev = Some(f);
            }
        }
        total += (first.unwrap() / prev.unwrap()).arg();
        if min_dist < 1e-4 {
            return Err(DispersionError::ContourProximity { theta, distance: min_dist });
        }
        // winding of φ − θ equals N − P
        Ok((total / (2.0 * PI)).round() as i64)
    }

    fn phi_unreduced(&self, p: C64) -> Result<C64> {
        let z = I * p / (2.0 * self.kappa);
        let zeta = self.lattice.zeta(z)?;
        Ok(p * self.zeta_const / (2.0 * PI * I * self.kappa) - zeta / (2.0 * I * self.kappa))
    }
}

/// `(p_crit, θ_crit)`: maximiser and maximum of `Re φ(x+iκ)` on `[0, π]`.
pub fn find_critical(kappa: f64) -> Result<(f64, f64)> {
    let ctx = DispersionContext::new(kappa, 1.0)?;
    Ok((ctx.p_crit, ctx.theta_crit))
}

/// `−(J/2) Σ_{n≠0} sinh²κ/sinh²(κn) (cos pn − 1)` truncated at `|n| ≤ nmax`.
pub fn epsilon_series(p: C64, kappa: f64, j: f64, nmax: usize) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for n in 1..=nmax {
        let nf = n as f64;
        // sinh²κ / sinh²(κn) = exp(−2κ(n−1)) ((1 − e^{−2κ}) / (1 − e^{−2κn}))²
        let ratio = (-2.0 * kappa * (nf - 1.0)).exp()
            * ((1.0 - (-2.0 * kappa).exp()) / (1.0 - (-2.0 * kappa * nf).exp())).powi(2);
        if ratio == 0.0 {
            break;
        }
        s += ratio * (1.0 - (p * nf).cos());
    }
    j * s
}
