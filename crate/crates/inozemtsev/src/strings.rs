//! Q-strings built from fundamental-region preimages of `φ`, their momenta and
//! energies, scattering data and the worked solution sets at `κ = 1.26`.

use crate::dispersion::{to_strip, DispersionContext, DispersionError};
use crate::elliptic::C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StringError {
    #[error(transparent)]
    Dispersion(#[from] DispersionError),
    #[error("invalid string: {0}")]
    Invalid(String),
    #[error("pole proximity: {0}")]
    Pole(String),
    #[error("total momentum {0} outside the attainable range")]
    OutOfRange(f64),
}

pub type Result<T> = std::result::Result<T, StringError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QString {
    pub q: usize,
    pub theta: f64,
}

impl QString {
    pub fn new(q: usize, theta: f64) -> Result<Self> {
        if q == 0 || !theta.is_finite() {
            return Err(StringError::Invalid(format!("Q = {q}, theta = {theta}")));
        }
        Ok(QString { q, theta })
    }

    /// `θ + (j − (Q+1)/2) i`, j = 1…Q.
    pub fn rapidities(&self) -> Vec<C64> {
        ladder(C64::new(self.theta, 0.0), self.q)
    }
}

fn ladder(center: C64, q: usize) -> Vec<C64> {
    (1..=q)
        .map(|j| center + I * (j as f64 - (q as f64 + 1.0) / 2.0))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StringMomenta {
    pub momenta: Vec<C64>,
    pub regions: Vec<i64>,
}

impl StringMomenta {
    pub fn total_momentum(&self) -> C64 {
        self.momenta.iter().sum()
    }

    pub fn total_energy(&self, ctx: &DispersionContext) -> Result<C64> {
        let mut e = C64::new(0.0, 0.0);
        for &p in &self.momenta {
            e += ctx.epsilon(p)?;
        }
        Ok(e)
    }

    /// Smallest distance between two momenta (coinciding momenta give a
    /// vanishing wavefunction).
    pub fn min_separation(&self) -> f64 {
        let mut d = f64::INFINITY;
        for (i, a) in self.momenta.iter().enumerate() {
            for b in &self.momenta[i + 1..] {
                d = d.min((a - b).norm());
            }
        }
        d
    }

    /// Append the conjugates of all momenta (region `n` maps to `−n`; on the
    /// seams the conjugate keeps the region assigned by the partition).
    pub fn with_conjugates(&self, ctx: &DispersionContext) -> Self {
        let mut out = self.clone();
        for &p in &self.momenta {
            let c = to_strip(p.conj());
            out.momenta.push(c);
            out.regions.push(ctx.region_index(c));
        }
        out
    }
}

/// Constituent momenta `φ⁻¹_f(θ_j)` of a Q-string.
pub fn qstring_momenta(s: &QString, ctx: &DispersionContext) -> Result<StringMomenta> {
    let mut momenta = Vec::with_capacity(s.q);
    for t in s.rapidities() {
        momenta.push(ctx.invert_phi_fundamental(t)?);
    }
    Ok(StringMomenta { regions: vec![0; s.q], momenta })
}

/// Total momentum `𝔭_Q(θ)` reduced into `[−π, π)`.
pub fn qstring_momentum(s: &QString, ctx: &DispersionContext) -> Result<f64> {
    Ok(to_strip(qstring_momenta(s, ctx)?.total_momentum()).re)
}

/// Total momentum continued to `(0, 2π)`; decreases from `2π` to `0` as `θ`
/// runs over the real line.
pub fn qstring_momentum_unwrapped(s: &QString, ctx: &DispersionContext) -> Result<f64> {
    let p = qstring_momentum(s, ctx)?;
    Ok(if p <= 0.0 { p + 2.0 * PI } else { p })
}

/// `d𝔭_Q/dθ = Σ_j 1/φ′(p_j)`.
pub fn qstring_momentum_derivative(s: &QString, ctx: &DispersionContext) -> Result<f64> {
    let m = qstring_momenta(s, ctx)?;
    let mut d = C64::new(0.0, 0.0);
    for &p in &m.momenta {
        d += 1.0 / ctx.phi_derivative(p)?;
    }
    Ok(d.re)
}

/// `E_Q(θ) = Σ_j ε(p_j)`.
pub fn qstring_energy(s: &QString, ctx: &DispersionContext) -> Result<f64> {
    Ok(qstring_momenta(s, ctx)?.total_energy(ctx)?.re)
}

/// Energy and unwrapped momentum with one set of inversions.
pub fn qstring_energy_momentum(s: &QString, ctx: &DispersionContext) -> Result<(f64, f64)> {
    let m = qstring_momenta(s, ctx)?;
    let p = to_strip(m.total_momentum()).re;
    let p = if p <= 0.0 { p + 2.0 * PI } else { p };
    Ok((m.total_energy(ctx)?.re, p))
}

/// `(E_Q, 𝔭_Q unwrapped, d𝔭_Q/dθ)` for `Q = 1…q_max` at one real `θ`.
///
/// All ladders share the rapidities `θ + ik/2`, so only `2q_max − 1`
/// inversions are needed.
pub fn string_tower(theta: f64, q_max: usize, ctx: &DispersionContext) -> Result<Vec<(f64, f64, f64)>> {
    if q_max == 0 || !theta.is_finite() {
        return Err(StringError::Invalid(format!("q_max = {q_max}, theta = {theta}")));
    }
    let kmax = q_max as i64 - 1;
    let mut eps = Vec::with_capacity(2 * q_max - 1);
    let mut mom = Vec::with_capacity(2 * q_max - 1);
    let mut dmom = Vec::with_capacity(2 * q_max - 1);
    for k in -kmax..=kmax {
        let p = ctx.invert_phi_fundamental(C64::new(theta, 0.5 * k as f64))?;
        eps.push(ctx.epsilon(p)?);
        mom.push(p);
        dmom.push(1.0 / ctx.phi_derivative(p)?);
    }
    let mut out = Vec::with_capacity(q_max);
    for q in 1..=q_max {
        let (mut e, mut p, mut d) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        let lo = -(q as i64 - 1);
        for k in (lo..=-lo).step_by(2) {
            let i = (k + kmax) as usize;
            e += eps[i];
            p += mom[i];
            d += dmom[i];
        }
        let p = to_strip(p).re;
        out.push((e.re, if p <= 0.0 { p + 2.0 * PI } else { p }, d.re));
    }
    Ok(out)
}

/// `Ẽ_M(p) = E_M(Mp)/M` along the M-string branch.
pub fn rescaled_energy(m: usize, p_total: f64, ctx: &DispersionContext) -> Result<f64> {
    if !(p_total.is_finite()) {
        return Err(StringError::OutOfRange(p_total));
    }
    let target = (m as f64 * p_total).rem_euclid(2.0 * PI);
    // E_M(P) ~ P²/2M, so a rounding-level target is the zero-momentum point
    if target < 1e-9 || 2.0 * PI - target < 1e-9 {
        return Ok(0.0);
    }
    let theta = solve_momentum(m, target, ctx)?;
    Ok(qstring_energy(&QString::new(m, theta)?, ctx)? / m as f64)
}

const THETA_MAX: f64 = 1e3;
const THETA_LIMIT: f64 = 1e9;

// θ with unwrapped 𝔭_M(θ) = target; 𝔭_M decreases monotonically
fn solve_momentum(m: usize, target: f64, ctx: &DispersionContext) -> Result<f64> {
    let f = |t: f64| -> Result<f64> {
        Ok(qstring_momentum_unwrapped(&QString::new(m, t)?, ctx)? - target)
    };
    // 𝔭_M ≈ M/θ in the tails, so large M near 0 mod 2π needs a wider bracket
    let mut w = THETA_MAX;
    while f(-w)? < 0.0 || f(w)? > 0.0 {
        w *= 10.0;
        if w > THETA_LIMIT {
            return Err(StringError::OutOfRange(target));
        }
    }
    let (mut lo, mut hi) = (-w, w);
    // bracket with the XXX-like guess, then safeguarded Newton
    let mut t = 0.5 * (m as f64) / ((target / 2.0).tan()).max(1e-300);
    if !t.is_finite() || t.abs() > w {
        t = 0.0;
    }
    for _ in 0..200 {
        let v = f(t)?;
        if v > 0.0 {
            lo = lo.max(t);
        } else {
            hi = hi.min(t);
        }
        if v.abs() < 1e-13 || hi - lo < 1e-13 * (1.0 + t.abs()) {
            return Ok(t);
        }
        let d = qstring_momentum_derivative(&QString::new(m, t)?, ctx)?;
        let mut next = t - v / d;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        t = next;
    }
    Ok(t)
}

/// Binding check `M·E₁(p) − E_M(Mp)` on a grid, in parallel over `(M, p)`.
pub fn binding_margins(
    m_max: usize,
    ps: &[f64],
    ctx: &DispersionContext,
) -> Result<Vec<(usize, f64, f64)>> {
    let jobs: Vec<(usize, f64)> = (1..=m_max)
        .flat_map(|m| ps.iter().map(move |&p| (m, p)))
        .collect();
    jobs.par_iter()
        .map(|&(m, p)| {
            let e1 = ctx.epsilon(C64::new(p, 0.0))?.re;
            let em = m as f64 * rescaled_energy(m, p, ctx)?;
            Ok((m, p, m as f64 * e1 - em))
        })
        .collect()
}

/// Literal two-magnon amplitude
/// `4|sinh⁻²κn| · |e^{2κn} + e^{−2κn} − e^{inΔ} − e^{−inΔ}|`, `Δ = p₁ − p₂`.
///
/// The `e^{±2κn}` terms make this tend to 16 for any pair with `|Im Δ| < 2κ`;
/// use [`two_particle_bound_part`] for the separation-dependent piece.
pub fn two_particle_amplitude(p1: C64, p2: C64, separation: i64, kappa: f64) -> Result<f64> {
    if separation == 0 {
        return Err(StringError::Invalid("zero separation".into()));
    }
    let n = separation as f64;
    let d = p1 - p2;
    let s = (kappa * n).sinh();
    let bracket = (2.0 * kappa * n).exp() + (-2.0 * kappa * n).exp()
        - (I * n * d).exp()
        - (-I * n * d).exp();
    Ok(4.0 * bracket.norm() / (s * s))
}

/// `4|sinh⁻²κn| · |e^{inΔ} + e^{−inΔ}|`, which decays iff `|Im Δ| < 2κ`.
pub fn two_particle_bound_part(p1: C64, p2: C64, separation: i64, kappa: f64) -> Result<f64> {
    if separation == 0 {
        return Err(StringError::Invalid("zero separation".into()));
    }
    let n = separation as f64;
    let d = p1 - p2;
    let s = (kappa * n).sinh();
    Ok(4.0 * ((I * n * d).exp() + (-I * n * d).exp()).norm() / (s * s))
}

/// Elementary S-matrix `(θ−θ′+i)/(θ−θ′−i)`.
pub fn smatrix(theta: C64, theta2: C64) -> Result<C64> {
    let u = theta - theta2;
    if (u - I).norm() < 1e-12 {
        return Err(StringError::Pole(format!("theta - theta' = {u}")));
    }
    Ok((u + I) / (u - I))
}

/// Fused `S_PQ`: product of `S` over both ladders, with removable 0/0 factors
/// cancelled by evaluating on the reduced form when they occur.
pub fn smatrix_pq(p: usize, q: usize, theta: C64, theta2: C64) -> Result<C64> {
    let a = ladder(theta, p);
    let b = ladder(theta2, q);
    let mut prod = C64::new(1.0, 0.0);
    let mut degenerate = false;
    for x in &a {
        for y in &b {
            let u = x - y;
            if (u - I).norm() < 1e-9 || (u + I).norm() < 1e-9 {
                degenerate = true;
            }
            prod *= (u + I) / (u - I);
        }
    }
    if !degenerate {
        return Ok(prod);
    }
    let u = theta - theta2;
    let mut r = C64::new(1.0, 0.0);
    for (n, mult) in takahashi_set(p, q) {
        let h = I * (n as f64 / 2.0);
        if (u - h).norm() < 1e-12 {
            return Err(StringError::Pole(format!("S_{p}{q} at u = {u}")));
        }
        r *= ((u + h) / (u - h)).powi(mult as i32);
    }
    Ok(r)
}

// (n, multiplicity) with S_PQ(u) = Π ((u + in/2)/(u − in/2))^mult
fn takahashi_set(p: usize, q: usize) -> Vec<(usize, usize)> {
    let d = p.abs_diff(q);
    let mut out = Vec::new();
    if d > 0 {
        out.push((d, 1));
    }
    out.push((p + q, 1));
    for j in 1..p.min(q) {
        out.push((d + 2 * j, 2));
    }
    out
}

/// `K_P(θ) = (1/π) P/(P² + θ²)`.
pub fn kernel_p(p: usize, theta: f64) -> f64 {
    let pf = p as f64;
    pf / (PI * (pf * pf + theta * theta))
}

/// `K̂_P(ω) = e^{−P|ω|}` for `∫ K_P(θ) e^{iωθ} dθ`.
pub fn kernel_p_hat(p: usize, omega: f64) -> f64 {
    (-(p as f64) * omega.abs()).exp()
}

/// `K_PQ = K_{|P−Q|} + K_{P+Q} + 2Σ_{j=1}^{min(P,Q)−1} K_{|P−Q|+2j}` without the
/// `δ` carried by `K_0`.
pub fn kernel_pq(p: usize, q: usize, theta: f64) -> f64 {
    kernel_terms(p, q).map(|(n, m)| m * kernel_p(n, theta)).sum()
}

pub fn kernel_pq_hat(p: usize, q: usize, omega: f64) -> f64 {
    kernel_terms(p, q).map(|(n, m)| m * kernel_p_hat(n, omega)).sum()
}

/// Whether `K_PQ` carries the `δ(θ)` of `K_0` (i.e. `P = Q`).
pub fn kernel_pq_has_delta(p: usize, q: usize) -> bool {
    p == q
}

fn kernel_terms(p: usize, q: usize) -> impl Iterator<Item = (usize, f64)> {
    takahashi_set(p, q).into_iter().map(|(n, m)| (n, m as f64))
}

/// Kernel for strings with unit-spaced rapidities:
/// `−d/dθ (1/2πi) log S_PQ(θ) = 2 K_PQ(2θ)`.
pub fn string_kernel(p: usize, q: usize, theta: f64) -> f64 {
    2.0 * kernel_pq(p, q, 2.0 * theta)
}

/// `(width a, multiplicity)` terms with `string_kernel = Σ m · a/(π(a² + θ²))`.
pub fn string_kernel_terms(p: usize, q: usize) -> Vec<(f64, f64)> {
    takahashi_set(p, q).into_iter().map(|(n, m)| (n as f64 / 2.0, m as f64)).collect()
}

/// `∫ string_kernel = 2 min(P, Q) − δ_PQ`.
pub fn string_kernel_mass(p: usize, q: usize) -> f64 {
    takahashi_set(p, q).iter().map(|&(_, m)| m as f64).sum()
}

pub fn string_kernel_hat(p: usize, q: usize, omega: f64) -> f64 {
    string_kernel_terms(p, q).iter().map(|&(a, m)| m * (-a * omega.abs()).exp()).sum()
}

/// Counting function `c_P(θ) = 𝔭_P(θ)/2π − (1/2πiL) Σ_r log S_PQ(θ, θ_r)`,
/// with each logarithm continued from `θ → +∞` where `S_PQ → 1`.
pub fn counting_function(
    p: usize,
    theta: f64,
    occupied: &[(usize, f64)],
    l: usize,
    ctx: &DispersionContext,
) -> Result<f64> {
    let s = QString::new(p, theta)?;
    let mut c = qstring_momentum_unwrapped(&s, ctx)? / (2.0 * PI);
    for &(q, t) in occupied {
        c -= log_smatrix_pq(p, q, theta - t) / (2.0 * PI * l as f64);
    }
    Ok(c)
}

// (1/i) log S_PQ(u) on the branch vanishing at u → +∞
fn log_smatrix_pq(p: usize, q: usize, u: f64) -> f64 {
    takahashi_set(p, q)
        .into_iter()
        .map(|(n, m)| {
            let h = n as f64 / 2.0;
            // arg((u + ih)/(u − ih)) = 2 atan(h/u) continued through u = 0
            m as f64 * (PI - 2.0 * (u / h).atan())
        })
        .sum()
}

/// The worked solution sets at `κ = 1.26`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ExampleSolution {
    /// Two distinct `θ` values in chosen regions, `m = M`.
    TwoComponent { theta_r: f64, theta_i: f64, region_top: i64, region_low: i64 },
    /// One minus at `θ_R + iθ_I` (D₀) and three pluses one level lower (D₁, D₂, D₃).
    ExampleA { theta_r: f64, theta_i: f64 },
    /// Four levels: [−], [+ (D₁), − (D_f)], [−], [+ (D_f), + (D₁)].
    ExampleB { theta_r: f64, theta_i: f64 },
}

impl ExampleSolution {
    /// `(θ, region)` pairs before conjugate closure.
    pub fn entries(&self) -> Vec<(C64, i64)> {
        let lvl = |tr: f64, ti: f64, j: usize| C64::new(tr, ti - j as f64 + 1.0);
        match *self {
            ExampleSolution::TwoComponent { theta_r, theta_i, region_top, region_low } => vec![
                (lvl(theta_r, theta_i, 1), region_top),
                (lvl(theta_r, theta_i, 2), region_low),
            ],
            ExampleSolution::ExampleA { theta_r, theta_i } => {
                let low = lvl(theta_r, theta_i, 2);
                vec![(lvl(theta_r, theta_i, 1), 0), (low, 1), (low, 2), (low, 3)]
            }
            ExampleSolution::ExampleB { theta_r, theta_i } => vec![
                (lvl(theta_r, theta_i, 1), 0),
                (lvl(theta_r, theta_i, 2), 1),
                (lvl(theta_r, theta_i, 2), 0),
                (lvl(theta_r, theta_i, 3), 0),
                (lvl(theta_r, theta_i, 4), 0),
                (lvl(theta_r, theta_i, 4), 1),
            ],
        }
    }
}

/// Momenta for the given solution, closed under conjugation.
pub fn build_example_solution(sol: &ExampleSolution, ctx: &DispersionContext) -> Result<StringMomenta> {
    build_solution(&sol.entries(), ctx)
}

/// `φ⁻¹` of each `(θ, n)` in region `D_n`, closed under conjugation.
pub fn build_solution(entries: &[(C64, i64)], ctx: &DispersionContext) -> Result<StringMomenta> {
    let mut momenta = Vec::with_capacity(2 * entries.len());
    let mut regions = Vec::with_capacity(2 * entries.len());
    for &(theta, n) in entries {
        momenta.push(ctx.invert_phi_region(theta, n)?);
        regions.push(n);
    }
    Ok(StringMomenta { momenta, regions }.with_conjugates(ctx))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(k: f64) -> DispersionContext {
        DispersionContext::new(k, 1.0).unwrap()
    }

    #[test]
    fn one_string_is_real() {
        let c = ctx(1.26);
        let m = qstring_momenta(&QString::new(1, 0.8).unwrap(), &c).unwrap();
        assert!(m.momenta[0].im.abs() < 1e-14 && m.momenta[0].re > 0.0);
    }

    #[test]
    fn even_string_inside_band_is_not_self_conjugate() {
        let c = ctx(1.26);
        let m = qstring_momenta(&QString::new(2, 0.0).unwrap(), &c).unwrap();
        let (a, b) = (m.momenta[0], m.momenta[1]);
        assert!((a - b.conj()).norm() > 0.1);
        assert!(m.total_momentum().im.abs() < 1e-10);
        assert!(m.total_energy(&c).unwrap().im.abs() < 1e-10);
        assert!((to_strip(m.total_momentum()).re + PI).abs() < 1e-12);
    }

    #[test]
    fn even_string_outside_band_is_self_conjugate() {
        let c = ctx(1.0);
        let m = qstring_momenta(&QString::new(2, 3.0).unwrap(), &c).unwrap();
        assert!((m.momenta[0] - m.momenta[1].conj()).norm() < 1e-10);
    }

    #[test]
    fn momentum_derivative_matches_difference() {
        let c = ctx(1.26);
        let h = 1e-4;
        let f = |t: f64| qstring_momentum_unwrapped(&QString::new(2, t).unwrap(), &c).unwrap();
        let fd = (f(0.7 + h) - f(0.7 - h)) / (2.0 * h);
        let d = qstring_momentum_derivative(&QString::new(2, 0.7).unwrap(), &c).unwrap();
        assert!((fd - d).abs() < 1e-6, "{fd} {d}");
        assert!(d < 0.0);
    }

    #[test]
    fn tower_matches_single_strings() {
        let c = ctx(1.26);
        let t = string_tower(0.37, 5, &c).unwrap();
        for (i, &(e, p, d)) in t.iter().enumerate() {
            let s = QString::new(i + 1, 0.37).unwrap();
            assert!((e - qstring_energy(&s, &c).unwrap()).abs() < 1e-13);
            assert!((p - qstring_momentum_unwrapped(&s, &c).unwrap()).abs() < 1e-13);
            assert!((d - qstring_momentum_derivative(&s, &c).unwrap()).abs() < 1e-13);
        }
        assert_eq!(string_kernel_mass(3, 3), 5.0);
        assert_eq!(string_kernel_mass(2, 5), 4.0);
    }

    #[test]
    fn binding_at_center() {
        let c = ctx(1.26);
        let s = QString::new(2, 0.0).unwrap();
        let e2 = qstring_energy(&s, &c).unwrap();
        let p = qstring_momentum_unwrapped(&s, &c).unwrap();
        let e1 = c.epsilon(C64::new(p / 2.0, 0.0)).unwrap().re;
        assert!(e2 < 2.0 * e1, "{e2} {e1}");
    }

    #[test]
    fn xxx_string_energy() {
        let c = ctx(10.0);
        for q in 1..=4 {
            for t in [0.3, 1.0, 2.5] {
                let e = qstring_energy(&QString::new(q, t).unwrap(), &c).unwrap();
                let x = 0.5 * q as f64 / (t * t + (q * q) as f64 / 4.0);
                assert!((e - x).abs() < 1e-4, "Q={q} t={t} {e} {x}");
            }
        }
    }

    #[test]
    fn smatrix_identities() {
        let t = C64::new(0.3, 0.0);
        assert!((smatrix(t, t).unwrap() + 1.0).norm() < 1e-15);
        let (a, b) = (C64::new(0.4, 0.1), C64::new(-0.7, 0.05));
        for (p, q) in [(1, 1), (2, 1), (3, 2), (2, 2), (4, 1)] {
            let s = smatrix_pq(p, q, a, b).unwrap() * smatrix_pq(q, p, b, a).unwrap();
            assert!((s - 1.0).norm() < 1e-12);
        }
        // reduced and product evaluations agree off the degenerate locus
        for (p, q) in [(2, 2), (3, 1), (3, 3)] {
            let u = C64::new(0.37, 0.0);
            let direct = smatrix_pq(p, q, u, C64::new(0.0, 0.0)).unwrap();
            let mut r = C64::new(1.0, 0.0);
            for (n, m) in takahashi_set(p, q) {
                let h = I * (n as f64 / 2.0);
                r *= ((u + h) / (u - h)).powi(m as i32);
            }
            assert!((direct - r).norm() < 1e-12);
        }
    }

    #[test]
    fn kernel_is_log_derivative() {
        let h = 1e-5;
        for (p, q) in [(1, 1), (2, 1), (3, 2)] {
            for u in [0.2, 0.9, 2.0] {
                let l = |x: f64| log_smatrix_pq(p, q, x) / (2.0 * PI);
                let fd = -(l(u + h) - l(u - h)) / (2.0 * h);
                assert!((fd - string_kernel(p, q, u)).abs() < 1e-8);
                // against the complex logarithm of the product
                let s1 = smatrix_pq(p, q, C64::new(u + h, 0.0), C64::new(0.0, 0.0)).unwrap();
                let s0 = smatrix_pq(p, q, C64::new(u - h, 0.0), C64::new(0.0, 0.0)).unwrap();
                let fd2 = -((s1 / s0).ln() / (2.0 * PI * I)).re / (2.0 * h);
                assert!((fd2 - string_kernel(p, q, u)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn amplitude_cases() {
        let k = 1.0;
        let p1 = C64::new(0.3, -0.5);
        let a5 = two_particle_bound_part(p1, p1.conj(), 5, k).unwrap();
        let a50 = two_particle_bound_part(p1, p1.conj(), 50, k).unwrap();
        assert!(a50 < a5);
        let full = two_particle_amplitude(p1, p1.conj(), 50, k).unwrap();
        assert!((full - 16.0).abs() < 1e-9);
        let q1 = C64::new(0.3, -2.0 * k);
        let g5 = two_particle_amplitude(q1, q1.conj(), 5, k).unwrap();
        let g10 = two_particle_amplitude(q1, q1.conj(), 10, k).unwrap();
        assert!(g10 > g5);
        let r = C64::new(0.4, -0.3);
        for n in 1..20 {
            let z = two_particle_amplitude(r, r + 2.0 * k * I, n, k).unwrap();
            assert!(z < 1e-9 * (2.0 * k * n as f64).exp());
        }
    }

    #[test]
    fn counting_function_monotone() {
        let c = ctx(1.26);
        let occ = [(1usize, 0.0)];
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let t = -5.0 + 0.1 * i as f64 + 0.05;
            let v = counting_function(1, t, &occ, 10, &c).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn two_component_momenta_at_theta_i_one_point_two() {
        let c = ctx(1.26);
        let sol = ExampleSolution::TwoComponent { theta_r: 0.6, theta_i: 1.2, region_top: 0, region_low: 2 };
        let m = build_example_solution(&sol, &c).unwrap();
        for want in [C64::new(0.280, -0.659), C64::new(0.108, 4.62)] {
            for w in [want, want.conj()] {
                assert!(m.momenta.iter().any(|p| (p.re - w.re).abs() < 5e-4 && (p.im - w.im).abs() < 5e-3), "{w}");
            }
        }
        assert!(m.total_energy(&c).unwrap().im.abs() < 1e-10);
    }
}
