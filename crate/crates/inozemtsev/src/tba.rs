//! Thermodynamic Bethe ansatz for the Q-string gas: driving terms, spectral
//! convolutions, Picard iteration for the Y-functions, free energy and
//! densities.

use crate::dispersion::DispersionContext;
use crate::strings::{string_kernel_mass, string_kernel_terms, string_tower, StringError};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TbaError {
    #[error(transparent)]
    Strings(#[from] StringError),
    #[error("driving term at theta = {theta}, Q = {q}: {source}")]
    Node { theta: f64, q: usize, source: StringError },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64, history: Vec<f64> },
    #[error("non-finite iterate at T = {temperature:e}, iteration {iteration}")]
    NonFinite { temperature: f64, iteration: usize },
    #[error("cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TbaError>;

pub const Q_CAP: usize = 35;
/// Largest string length accepted by [`driving_terms`].
pub const Q_LIMIT: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RapidityGrid {
    lambda: f64,
    n_points: usize,
}

impl RapidityGrid {
    pub fn new(lambda: f64, n_points: usize) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) || n_points < 16 || !n_points.is_power_of_two() {
            return Err(TbaError::InvalidParameter(format!(
                "grid lambda = {lambda}, n_points = {n_points}"
            )));
        }
        Ok(RapidityGrid { lambda, n_points })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.lambda / (self.n_points - 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.n_points).map(|i| -self.lambda + h * i as f64).collect()
    }
}

/// Source of string energies and momentum derivatives.
#[derive(Debug, Clone, Copy)]
pub enum Dispersion<'a> {
    Elliptic(&'a DispersionContext),
    /// Closed-form XXX strings, `E_Q = (J/2) Q/(θ² + Q²/4)`.
    Xxx { j: f64 },
}

impl Dispersion<'_> {
    pub fn kappa(&self) -> f64 {
        match self {
            Dispersion::Elliptic(c) => c.kappa(),
            Dispersion::Xxx { .. } => f64::INFINITY,
        }
    }

    pub fn j(&self) -> f64 {
        match self {
            Dispersion::Elliptic(c) => c.j(),
            Dispersion::Xxx { j } => *j,
        }
    }
}

/// `E_Q(θ_i)` and `|d𝔭_Q/dθ|(θ_i)` for `Q = 1…q_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivingTerms {
    pub kappa: f64,
    pub grid: RapidityGrid,
    pub energy: Vec<Vec<f64>>,
    pub dmomentum: Vec<Vec<f64>>,
}

impl DrivingTerms {
    pub fn q_max(&self) -> usize {
        self.energy.len()
    }

    /// The first `q` rows.
    pub fn truncated(&self, q: usize) -> DrivingTerms {
        DrivingTerms {
            kappa: self.kappa,
            grid: self.grid,
            energy: self.energy[..q].to_vec(),
            dmomentum: self.dmomentum[..q].to_vec(),
        }
    }

    /// Energies divided by `T`, as entering the TBA right-hand side.
    pub fn over_t(&self, t: f64) -> Vec<Vec<f64>> {
        self.energy.iter().map(|r| r.iter().map(|e| e / t).collect()).collect()
    }
}

/// Evaluate the string tower on the grid; nodes are computed for `θ ≥ 0` and
/// mirrored, so every row is an exact palindrome.
pub fn driving_terms(q_max: usize, grid: &RapidityGrid, disp: Dispersion<'_>) -> Result<DrivingTerms> {
    if q_max == 0 || q_max > Q_LIMIT {
        return Err(TbaError::InvalidParameter(format!("q_max = {q_max}")));
    }
    let nodes = grid.nodes();
    let n = nodes.len();
    let half: Vec<usize> = (n / 2..n).collect();
    let rows: Vec<Vec<(f64, f64)>> = half
        .par_iter()
        .map(|&i| -> Result<Vec<(f64, f64)>> {
            let t = nodes[i];
            match disp {
                Dispersion::Elliptic(ctx) => {
                    let tower = string_tower(t, q_max, ctx)
                        .map_err(|e| TbaError::Node { theta: t, q: q_max, source: e })?;
                    Ok(tower.into_iter().map(|(e, _, d)| (e, d.abs())).collect())
                }
                Dispersion::Xxx { j } => Ok((1..=q_max)
                    .map(|q| {
                        let qf = q as f64;
                        let d = qf / (t * t + qf * qf / 4.0);
                        (0.5 * j * d, d)
                    })
                    .collect()),
            }
        })
        .collect::<Result<_>>()?;
    let mut energy = vec![vec![0.0; n]; q_max];
    let mut dmomentum = vec![vec![0.0; n]; q_max];
    for (k, &i) in half.iter().enumerate() {
        for q in 0..q_max {
            let (e, d) = rows[k][q];
            energy[q][i] = e;
            energy[q][n - 1 - i] = e;
            dmomentum[q][i] = d;
            dmomentum[q][n - 1 - i] = d;
        }
    }
    Ok(DrivingTerms { kappa: disp.kappa(), grid: *grid, energy, dmomentum })
}

const CACHE_MAGIC: &[u8; 8] = b"INZTBADT";
const CACHE_VERSION: u32 = 1;

/// Write driving terms with a versioned header `(κ, Λ, n_points, q_max)`.
pub fn write_cache(path: &Path, d: &DrivingTerms) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&d.kappa.to_le_bytes());
    buf.extend_from_slice(&d.grid.lambda.to_le_bytes());
    buf.extend_from_slice(&(d.grid.n_points as u64).to_le_bytes());
    buf.extend_from_slice(&(d.q_max() as u64).to_le_bytes());
    for rows in [&d.energy, &d.dmomentum] {
        for r in rows.iter() {
            for v in r {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)?.write_all(&buf)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// Read a cache file; `Ok(None)` when its parameters do not match the request.
/// A foreign, truncated or other-version file is an error.
pub fn read_cache(path: &Path, kappa: f64, grid: &RapidityGrid, q_max: usize) -> Result<Option<DrivingTerms>> {
    let mut buf = Vec::new();
    match std::fs::File::open(path) {
        Ok(mut f) => f.read_to_end(&mut buf)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let header = 8 + 4 + 8 * 4;
    if buf.len() < header || &buf[..8] != CACHE_MAGIC {
        return Err(TbaError::Cache(format!("{} is not a driving-term cache", path.display())));
    }
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(TbaError::Cache(format!(
            "{}: cache version {version}, expected {CACHE_VERSION}",
            path.display()
        )));
    }
    let (k, l, n, q) = (f64_at(12), f64_at(20), u64_at(28) as usize, u64_at(36) as usize);
    let same_kappa = k == kappa || (k.is_infinite() && kappa.is_infinite());
    if !same_kappa || l != grid.lambda || n != grid.n_points || q < q_max {
        return Ok(None);
    }
    if buf.len() != header + 2 * q * n * 8 {
        return Err(TbaError::Cache(format!("{} is truncated", path.display())));
    }
    let mut off = header;
    let mut read_rows = || {
        let mut rows = Vec::with_capacity(q);
        for _ in 0..q {
            let r: Vec<f64> = (0..n).map(|i| f64_at(off + 8 * i)).collect();
            off += 8 * n;
            rows.push(r);
        }
        rows
    };
    let energy = read_rows();
    let dmomentum = read_rows();
    Ok(Some(DrivingTerms { kappa: k, grid: *grid, energy, dmomentum }.truncated(q_max)))
}

/// Driving terms from `cache` when present and matching, otherwise computed
/// and stored.
pub fn driving_terms_cached(
    q_max: usize,
    grid: &RapidityGrid,
    disp: Dispersion<'_>,
    cache: Option<&Path>,
) -> Result<DrivingTerms> {
    if let Some(p) = cache {
        if let Some(d) = read_cache(p, disp.kappa(), grid, q_max)? {
            return Ok(d);
        }
    }
    let d = driving_terms(q_max, grid, disp)?;
    if let Some(p) = cache {
        write_cache(p, &d)?;
    }
    Ok(d)
}

/// Linear convolution with Cauchy kernels on a grid by zero-padded FFT.
pub struct Convolver {
    n: usize,
    h: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

/// Result of [`Convolver::convolve`]; `aliasing` flags a decaying part that
/// has not decayed at the grid edge.
#[derive(Debug, Clone)]
pub struct ConvOutput {
    pub values: Vec<f64>,
    pub aliasing: bool,
}

impl Convolver {
    pub fn new(grid: &RapidityGrid) -> Self {
        let n = grid.n_points;
        let mut planner = FftPlanner::new();
        Convolver {
            n,
            h: grid.spacing(),
            fwd: planner.plan_fft_forward(2 * n),
            inv: planner.plan_fft_inverse(2 * n),
        }
    }

    /// Transform of a kernel sampled at all node differences, scaled by `h`.
    pub fn kernel_spectrum(&self, k: impl Fn(f64) -> f64) -> Vec<Complex64> {
        let m = 2 * self.n;
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        for i in 0..self.n {
            buf[i].re = self.h * k(i as f64 * self.h);
            if i > 0 {
                buf[m - i].re = self.h * k(-(i as f64) * self.h);
            }
        }
        self.fwd.process(&mut buf);
        buf
    }

    pub fn cauchy_spectrum(&self, terms: &[(f64, f64)]) -> Vec<Complex64> {
        self.kernel_spectrum(|x| terms.iter().map(|&(a, m)| m * a / (PI * (a * a + x * x))).sum())
    }

    pub fn forward(&self, f: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); 2 * self.n];
        for (b, &v) in buf.iter_mut().zip(f) {
            b.re = v;
        }
        self.fwd.process(&mut buf);
        buf
    }

    pub fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.inv.process(&mut spec);
        let s = 1.0 / (2 * self.n) as f64;
        spec[..self.n].iter().map(|c| c.re * s).collect()
    }

    /// `K ⋆ f = c·∫K + K ⋆ (f − c)`, with `mass = ∫K` over the real line.
    pub fn convolve(&self, kernel: &[Complex64], mass: f64, f: &[f64], tail: f64) -> ConvOutput {
        let g: Vec<f64> = f.iter().map(|v| v - tail).collect();
        let sup = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let edge = g[0].abs().max(g[self.n - 1].abs());
        let mut spec = self.forward(&g);
        for (s, k) in spec.iter_mut().zip(kernel) {
            *s *= k;
        }
        let values = self.inverse(spec).into_iter().map(|v| v + mass * tail).collect();
        ConvOutput { values, aliasing: sup > 0.0 && edge > 1e-6 * sup }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TbaOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub q_start: usize,
    pub q_step: usize,
    pub q_cap: usize,
    /// Relative change in `f` between successive truncations to accept.
    pub f_tol: f64,
    /// `Λ` and `n_points` are doubled together while `E_1(Λ)/E_1(0)` exceeds this.
    pub tail_threshold: f64,
    pub max_doublings: usize,
}

impl Default for TbaOptions {
    fn default() -> Self {
        TbaOptions {
            tol: 1e-10,
            max_iter: 5000,
            q_start: 10,
            q_step: 5,
            q_cap: Q_CAP,
            f_tol: 1e-5,
            tail_threshold: 1e-2,
            max_doublings: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TbaSolution {
    pub q_max: usize,
    pub temperature: f64,
    pub kappa: f64,
    pub j: f64,
    pub grid: RapidityGrid,
    /// `y[Q−1][i] = Y_Q(θ_i)`.
    pub y: Vec<Vec<f64>>,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
    /// True when the truncation schedule met its free-energy tolerance.
    pub stable: bool,
}

/// `log(1 + 1/(Q(Q+2)))`, the `|θ| → ∞` value of `log(1 + 1/Y_Q)`.
pub fn tail_constant(q: usize) -> f64 {
    let q = q as f64;
    (1.0 + 1.0 / (q * (q + 2.0))).ln()
}

/// `Σ_{P>N} log(1 + 1/(P(P+2))) = log((N+2)/(N+1))`.
pub fn closure_constant(n: usize) -> f64 {
    ((n as f64 + 2.0) / (n as f64 + 1.0)).ln()
}

/// Kernel spectra `A_QP` for a truncation, row-major `Q·N + P`.
pub struct KernelTable {
    n: usize,
    spectra: Vec<Arc<Vec<Complex64>>>,
}

impl KernelTable {
    pub fn new(conv: &Convolver, n: usize) -> Self {
        let pairs: Vec<(usize, usize)> = (1..=n).flat_map(|q| (q..=n).map(move |p| (q, p))).collect();
        let computed: Vec<Arc<Vec<Complex64>>> = pairs
            .par_iter()
            .map(|&(q, p)| Arc::new(conv.cauchy_spectrum(&string_kernel_terms(q, p))))
            .collect();
        let empty = Arc::new(Vec::new());
        let mut spectra: Vec<_> = (0..n * n).map(|_| empty.clone()).collect();
        for (&(q, p), s) in pairs.iter().zip(computed) {
            spectra[(q - 1) * n + (p - 1)] = s.clone();
            spectra[(p - 1) * n + (q - 1)] = s;
        }
        KernelTable { n, spectra }
    }

    fn get(&self, q: usize, p: usize) -> &[Complex64] {
        &self.spectra[(q - 1) * self.n + (p - 1)]
    }
}

// Σ_P A_QP ⋆ g_P for every Q, given the spectra of the decaying parts
fn apply_kernels(conv: &Convolver, table: &KernelTable, specs: &[Vec<Complex64>]) -> Vec<Vec<f64>> {
    let n = specs.len();
    (1..=n)
        .into_par_iter()
        .map(|q| {
            let mut acc = vec![Complex64::new(0.0, 0.0); specs[0].len()];
            for p in 1..=n {
                for ((a, s), k) in acc.iter_mut().zip(&specs[p - 1]).zip(table.get(q, p)) {
                    *a += s * k;
                }
            }
            conv.inverse(acc)
        })
        .collect()
}

/// Picard iteration at fixed truncation `N = drive.q_max()`:
/// `log Y_Q = E_Q/T + Σ_{P≤N} A_QP ⋆ log(1 + 1/Y_P) + 2Q log((N+2)/(N+1))`.
pub fn picard_solve(
    t: f64,
    j: f64,
    drive: &DrivingTerms,
    opt: &TbaOptions,
    seed: Option<&[Vec<f64>]>,
) -> Result<TbaSolution> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(TbaError::InvalidParameter(format!("T = {t}")));
    }
    let n = drive.q_max();
    let np = drive.grid.n_points;
    let conv = Convolver::new(&drive.grid);
    let table = KernelTable::new(&conv, n);
    // constant part of the right-hand side
    let base: Vec<f64> = (1..=n)
        .map(|q| {
            (1..=n).map(|p| string_kernel_mass(q, p) * tail_constant(p)).sum::<f64>()
                + 2.0 * q as f64 * closure_constant(n)
        })
        .collect();
    let drive_t = drive.over_t(t);
    let mut logy: Vec<Vec<f64>> = match seed {
        Some(s) => (0..n)
            .map(|q| match s.get(q) {
                // Y overflows below T ~ E/700; log(1 + 1/Y) is zero there either way
                Some(r) => r.iter().map(|y| y.ln().min(f64::MAX.ln())).collect(),
                None => vec![((q + 1) as f64 * (q + 3) as f64).ln(); np],
            })
            .collect(),
        None => (1..=n).map(|q| vec![(q as f64 * (q + 2) as f64).ln(); np]).collect(),
    };
    let mut history = Vec::new();
    let mut relax = 1.0;
    for it in 1..=opt.max_iter {
        let specs: Vec<Vec<Complex64>> = (0..n)
            .into_par_iter()
            .map(|q| {
                let c = tail_constant(q + 1);
                let g: Vec<f64> = logy[q].iter().map(|l| (-l).exp().ln_1p() - c).collect();
                conv.forward(&g)
            })
            .collect();
        let conv_out = apply_kernels(&conv, &table, &specs);
        let mut res = 0.0f64;
        for q in 0..n {
            for i in 0..np {
                let new = drive_t[q][i] + base[q] + conv_out[q][i];
                let step = new - logy[q][i];
                if !step.is_finite() {
                    return Err(TbaError::NonFinite { temperature: t, iteration: it });
                }
                res = res.max(step.abs());
                logy[q][i] += relax * step;
            }
        }
        // symmetrize against roundoff in the FFT
        for row in logy.iter_mut() {
            for i in 0..np / 2 {
                let m = 0.5 * (row[i] + row[np - 1 - i]);
                row[i] = m;
                row[np - 1 - i] = m;
            }
        }
        if history.len() >= 2 && res > history[history.len() - 1] && relax == 1.0 {
            relax = 0.5;
        }
        history.push(res);
        if res < opt.tol {
            return Ok(TbaSolution {
                q_max: n,
                temperature: t,
                kappa: drive.kappa,
                j,
                grid: drive.grid,
                y: logy.iter().map(|r| r.iter().map(|l| l.exp()).collect()).collect(),
                iterations: it,
                residual: res,
                history,
                stable: true,
            });
        }
    }
    let residual = *history.last().unwrap_or(&f64::INFINITY);
    Err(TbaError::NoConvergence { iterations: opt.max_iter, residual, history })
}

/// Free energy with its tail estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergy {
    pub f: f64,
    /// Analytic estimate of the `|θ| > Λ` contribution already included in `f`.
    pub tail: f64,
    /// Bound on the neglected remainder.
    pub error_bound: f64,
}

/// `f = −(T/2π) Σ_Q ∫ |d𝔭_Q/dθ| log(1 + 1/Y_Q)`, with the constant part of
/// each logarithm integrated exactly (`∫|d𝔭_Q/dθ| = 2π`) and `Q > N` closed
/// by `Y_Q = Q(Q+2)`.
pub fn free_energy(sol: &TbaSolution, drive: &DrivingTerms) -> FreeEnergy {
    let t = sol.temperature;
    let h = sol.grid.spacing();
    let lambda = sol.grid.lambda;
    let np = sol.grid.n_points;
    let mut total = -t * closure_constant(sol.q_max);
    let mut tail = 0.0;
    for q in 0..sol.q_max {
        let c = tail_constant(q + 1);
        total -= t * c;
        let w = &drive.dmomentum[q];
        let g: Vec<f64> = sol.y[q].iter().map(|y| (1.0 / y).ln_1p() - c).collect();
        let mut s = 0.0;
        for i in 0..np {
            let wt = if i == 0 || i == np - 1 { 0.5 } else { 1.0 };
            s += wt * w[i] * g[i];
        }
        total -= t / (2.0 * PI) * h * s;
        // both integrand factors decay like 1/θ²: ∫_Λ^∞ ≈ Λ·w(Λ)·g(Λ)/3 per side
        let edge = 2.0 * lambda * w[np - 1] * g[np - 1] / 3.0;
        tail -= t / (2.0 * PI) * edge;
    }
    FreeEnergy { f: total + tail, tail, error_bound: tail.abs() + t * 1e-12 }
}

/// Solve with the truncation schedule: raise `N` by `q_step` until the
/// relative free-energy change drops below `f_tol` or `N` hits `q_cap`.
pub fn solve(
    t: f64,
    disp: Dispersion<'_>,
    grid: &RapidityGrid,
    opt: &TbaOptions,
    cache: Option<&Path>,
) -> Result<(TbaSolution, FreeEnergy)> {
    let drive_all = adapted_driving_terms(grid, disp, opt, cache)?;
    solve_with_terms(t, disp.j(), &drive_all, opt)
}

/// Driving terms on `grid`, widened until the one-string energy at the edge
/// is below `opt.tail_threshold` of its central value.
pub fn adapted_driving_terms(
    grid: &RapidityGrid,
    disp: Dispersion<'_>,
    opt: &TbaOptions,
    cache: Option<&Path>,
) -> Result<DrivingTerms> {
    let mut g = *grid;
    let mut doublings = 0;
    loop {
        let d = driving_terms_cached(opt.q_cap, &g, disp, cache)?;
        let n = g.n_points;
        let ratio = d.energy[0][n - 1] / d.energy[0][n / 2];
        if ratio <= opt.tail_threshold || doublings >= opt.max_doublings {
            return Ok(d);
        }
        g = RapidityGrid::new(2.0 * g.lambda, 2 * n)?;
        doublings += 1;
    }
}

pub fn solve_with_terms(
    t: f64,
    j: f64,
    drive_all: &DrivingTerms,
    opt: &TbaOptions,
) -> Result<(TbaSolution, FreeEnergy)> {
    let mut q = opt.q_start.min(drive_all.q_max());
    let mut prev: Option<(TbaSolution, FreeEnergy)> = None;
    loop {
        let d = drive_all.truncated(q);
        let seed = prev.as_ref().map(|p| p.0.y.as_slice());
        let sol = picard_solve(t, j, &d, opt, seed)?;
        let fe = free_energy(&sol, &d);
        if let Some((_, pf)) = &prev {
            if (fe.f - pf.f).abs() <= opt.f_tol * fe.f.abs().max(j) {
                return Ok((sol, fe));
            }
        }
        if q >= opt.q_cap.min(drive_all.q_max()) {
            let mut sol = sol;
            sol.stable = false;
            return Ok((sol, fe));
        }
        prev = Some((sol, fe));
        q = (q + opt.q_step).min(opt.q_cap.min(drive_all.q_max()));
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityPair {
    pub rho: Vec<Vec<f64>>,
    pub rho_bar: Vec<Vec<f64>>,
    pub residual: f64,
    pub iterations: usize,
}

/// Solve `(1 + Y_Q) ρ_Q + Σ_P A_QP ⋆ ρ_P = |d𝔭_Q/dθ|/2π` by conjugate
/// gradients (the operator is symmetric positive definite on the grid).
pub fn densities(sol: &TbaSolution, drive: &DrivingTerms) -> Result<DensityPair> {
    let n = sol.q_max;
    let np = sol.grid.n_points;
    let conv = Convolver::new(&sol.grid);
    let table = KernelTable::new(&conv, n);
    let apply = |x: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let specs: Vec<Vec<Complex64>> = x.par_iter().map(|r| conv.forward(r)).collect();
        let k = apply_kernels(&conv, &table, &specs);
        (0..n)
            .map(|q| (0..np).map(|i| (1.0 + sol.y[q][i]) * x[q][i] + k[q][i]).collect())
            .collect()
    };
    let dot = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
        a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>()).sum()
    };
    let b: Vec<Vec<f64>> = drive.dmomentum[..n]
        .iter()
        .map(|r| r.iter().map(|v| v / (2.0 * PI)).collect())
        .collect();
    let bnorm = dot(&b, &b).sqrt();
    // Jacobi-preconditioned CG
    let pre: Vec<Vec<f64>> = sol.y.iter().map(|r| r.iter().map(|y| 1.0 / (1.0 + y)).collect()).collect();
    let mut x: Vec<Vec<f64>> = b.iter().zip(&pre).map(|(r, p)| r.iter().zip(p).map(|(u, v)| u * v).collect()).collect();
    let ax = apply(&x);
    let mut r: Vec<Vec<f64>> = b.iter().zip(&ax).map(|(u, v)| u.iter().zip(v).map(|(a, c)| a - c).collect()).collect();
    let mut z: Vec<Vec<f64>> = r.iter().zip(&pre).map(|(u, p)| u.iter().zip(p).map(|(a, c)| a * c).collect()).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut iterations = 0;
    for it in 1..=2000 {
        iterations = it;
        let ap = apply(&p);
        let alpha = rz / dot(&p, &ap);
        for q in 0..n {
            for i in 0..np {
                x[q][i] += alpha * p[q][i];
                r[q][i] -= alpha * ap[q][i];
            }
        }
        if dot(&r, &r).sqrt() < 1e-14 * bnorm {
            break;
        }
        for q in 0..n {
            for i in 0..np {
                z[q][i] = r[q][i] * pre[q][i];
            }
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for q in 0..n {
            for i in 0..np {
                p[q][i] = z[q][i] + beta * p[q][i];
            }
        }
    }
    let ax = apply(&x);
    let residual = ax
        .iter()
        .zip(&b)
        .flat_map(|(u, v)| u.iter().zip(v).map(|(a, c)| (a - c).abs()))
        .fold(0.0, f64::max);
    if !residual.is_finite() {
        return Err(TbaError::NoConvergence { iterations, residual, history: Vec::new() });
    }
    let rho_bar = x.iter().zip(&sol.y).map(|(r, y)| r.iter().zip(y).map(|(a, c)| a * c).collect()).collect();
    Ok(DensityPair { rho: x, rho_bar, residual, iterations })
}

/// Energy and entropy densities from `ρ, ρ̄` for `Q ≤ N`, trapezoid on the
/// grid plus power-law tails beyond `Λ` (`ρ ~ θ⁻²`, `E ρ ~ θ⁻⁴`).
pub fn energy_entropy(sol: &TbaSolution, drive: &DrivingTerms, d: &DensityPair) -> (f64, f64) {
    let h = sol.grid.spacing();
    let np = sol.grid.n_points;
    let lambda = sol.grid.lambda;
    let (mut e, mut s) = (0.0, 0.0);
    for q in 0..sol.q_max {
        let de = |i: usize| drive.energy[q][i] * d.rho[q][i];
        let ds = |i: usize| {
            let y = sol.y[q][i];
            d.rho[q][i] * ((1.0 + y) * (1.0 + y).ln() - y * y.ln())
        };
        for i in 0..np {
            let w = if i == 0 || i == np - 1 { 0.5 * h } else { h };
            e += w * de(i);
            s += w * ds(i);
        }
        e += lambda / 3.0 * (de(0) + de(np - 1));
        s += lambda * (ds(0) + ds(np - 1));
    }
    (e, s)
}

/// `s(θ) = 1/(4 cosh(πθ/2))`.
pub fn s_kernel(theta: f64) -> f64 {
    0.25 / (0.5 * PI * theta).cosh()
}

/// `(s ⋆ (K_{P−1} + K_{P+1}))(θ)` by trapezoid quadrature in the `s` variable,
/// with `K₀ = δ` taken symbolically.
pub fn s_convolved_pair(p: usize, theta: f64) -> f64 {
    let k = |a: f64, x: f64| a / (PI * (a * a + x * x));
    let (du, umax) = (0.02, 60.0);
    let m = (umax / du) as i64;
    let mut acc = 0.0;
    for i in -m..=m {
        let u = i as f64 * du;
        let x = theta - u;
        let lower = if p > 1 { k((p - 1) as f64, x) } else { 0.0 };
        acc += s_kernel(u) * (lower + k((p + 1) as f64, x));
    }
    acc *= du;
    if p == 1 {
        acc += s_kernel(theta);
    }
    acc
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct YSystemReport {
    /// `max_θ |s ⋆ (K_{P−1} + K_{P+1}) − K_P|` per `P`.
    pub kernel_residuals: Vec<(usize, f64)>,
    /// Rows `M` of the constant XXX Y-system that fail exactly.
    pub constant_failures: Vec<usize>,
}

/// The two Y-system checks: kernel identity on `grid` for `P ≤ p_max` and the
/// constant solution `Y_M = M(M+2)` for `M ≤ m_max` in exact integers.
pub fn ysystem_residual_checks(grid: &RapidityGrid, p_max: usize, m_max: usize) -> YSystemReport {
    let nodes = grid.nodes();
    let kernel_residuals = (1..=p_max)
        .into_par_iter()
        .map(|p| {
            let r = nodes
                .iter()
                .map(|&t| (s_convolved_pair(p, t) - crate::strings::kernel_p(p, t)).abs())
                .fold(0.0, f64::max);
            (p, r)
        })
        .collect();
    let y = |m: u128| m * (m + 2);
    let constant_failures = (1..=m_max as u128)
        .filter(|&m| {
            // Y₀ = 0, so the first row reads Y₁² = 1 + Y₂
            let rhs = if m == 1 { 1 + y(2) } else { (1 + y(m - 1)) * (1 + y(m + 1)) };
            y(m) * y(m) != rhs
        })
        .map(|m| m as usize)
        .collect();
    YSystemReport { kernel_residuals, constant_failures }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> RapidityGrid {
        RapidityGrid::new(30.0, 256).unwrap()
    }

    #[test]
    fn constant_passes_through() {
        let g = grid();
        let c = Convolver::new(&g);
        let k = c.cauchy_spectrum(&[(1.0, 1.0)]);
        let out = c.convolve(&k, 1.0, &vec![0.7; g.n_points()], 0.7);
        assert!(out.values.iter().all(|v| (v - 0.7).abs() < 1e-14));
        assert!(!out.aliasing);
    }

    #[test]
    fn gaussian_convolution_matches_quadrature() {
        let g = RapidityGrid::new(20.0, 512).unwrap();
        let c = Convolver::new(&g);
        let f: Vec<f64> = g.nodes().iter().map(|t| (-t * t).exp()).collect();
        let k = c.cauchy_spectrum(&[(1.5, 1.0)]);
        let out = c.convolve(&k, 1.0, &f, 0.0);
        for (i, &t) in g.nodes().iter().enumerate().step_by(37) {
            // fine direct quadrature of ∫ K(t − u) e^{−u²} du
            let mut acc = 0.0;
            let du = 1e-3;
            for m in -8000..=8000 {
                let u = m as f64 * du;
                acc += 1.5 / (PI * (2.25 + (t - u).powi(2))) * (-u * u).exp() * du;
            }
            assert!((out.values[i] - acc).abs() < 1e-9, "{t} {} {acc}", out.values[i]);
        }
    }

    #[test]
    fn kernel_identity() {
        let r = ysystem_residual_checks(&RapidityGrid::new(10.0, 64).unwrap(), 10, 35);
        assert!(r.kernel_residuals.iter().all(|&(_, e)| e < 1e-8), "{:?}", r.kernel_residuals);
        assert!(r.constant_failures.is_empty());
    }

    #[test]
    fn high_temperature_constants() {
        let g = grid();
        let d = driving_terms(10, &g, Dispersion::Xxx { j: 1.0 }).unwrap();
        let sol = picard_solve(1e4, 1.0, &d, &TbaOptions::default(), None).unwrap();
        for (q, row) in sol.y.iter().enumerate() {
            let y0 = ((q + 1) * (q + 3)) as f64;
            assert!(row.iter().all(|y| (y / y0 - 1.0).abs() < 1e-3));
        }
    }

    #[test]
    fn palindromic_driving_terms() {
        let g = RapidityGrid::new(30.0, 64).unwrap();
        let ctx = DispersionContext::new(1.0, 1.0).unwrap();
        let d = driving_terms(4, &g, Dispersion::Elliptic(&ctx)).unwrap();
        for r in d.energy.iter().chain(&d.dmomentum) {
            assert!(r.iter().zip(r.iter().rev()).all(|(a, b)| a == b));
        }
    }

    #[test]
    fn cache_round_trip() {
        let g = RapidityGrid::new(30.0, 32).unwrap();
        let d = driving_terms(3, &g, Dispersion::Xxx { j: 1.0 }).unwrap();
        let dir = std::env::temp_dir().join(format!("inz-cache-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("terms.bin");
        write_cache(&p, &d).unwrap();
        assert_eq!(read_cache(&p, f64::INFINITY, &g, 2).unwrap().unwrap(), d.truncated(2));
        assert!(read_cache(&p, f64::INFINITY, &g, 4).unwrap().is_none());
        assert!(read_cache(&p, 1.0, &g, 2).unwrap().is_none());
        std::fs::remove_dir_all(dir).unwrap();
    }
}
