//! Finite chains by exact diagonalization.
//!
//! `H = (J/2) Σ_{j<k} V(k − j) (1 − P_jk)` on `L` sites, which is the
//! `−(J/8) Σ_{j≠k} V (σ_j·σ_k − 1)` form with the transposition `P_jk`.
//! Every magnon sector is diagonalized in full; translation-invariant
//! potentials are first split into momentum blocks.

use crate::elliptic::{EllipticError, Lattice, C64};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const L_MAX: usize = 15;
pub const DIM_MAX: usize = 10_000;

#[derive(Debug, Error)]
pub enum ExactDiagError {
    #[error("chain length {0} outside 2..=15")]
    Length(usize),
    #[error("distance {j} out of range for L = {l}")]
    Distance { j: i64, l: usize },
    #[error("sector M = {m} of L = {l} has dimension {dim} > {DIM_MAX}")]
    Dimension { l: usize, m: usize, dim: usize },
    #[error("elliptic potential has imaginary part {0:e}")]
    ComplexPotential(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Elliptic(#[from] EllipticError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ExactDiagError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PotentialKind {
    Xxx,
    Hs,
    Elliptic(f64),
    /// `sinh²κ / sinh²(κ j)` at the ring distance `min(j, L − j)`.
    Hyperbolic(f64),
    /// `sinh²κ / sinh²(κ j)` at the bare distance `j = k − j'`, so the bond
    /// across the seam is weak and the chain is effectively open.
    HyperbolicOpen(f64),
}

impl PotentialKind {
    pub fn name(&self) -> &'static str {
        match self {
            PotentialKind::Xxx => "xxx",
            PotentialKind::Hs => "hs",
            PotentialKind::Elliptic(_) => "elliptic",
            PotentialKind::Hyperbolic(_) => "hyperbolic",
            PotentialKind::HyperbolicOpen(_) => "hyperbolic-open",
        }
    }

    pub fn kappa(&self) -> Option<f64> {
        match self {
            PotentialKind::Elliptic(k) | PotentialKind::Hyperbolic(k) | PotentialKind::HyperbolicOpen(k) => {
                Some(*k)
            }
            _ => None,
        }
    }

    pub fn is_periodic(&self) -> bool {
        !matches!(self, PotentialKind::HyperbolicOpen(_))
    }
}

/// A potential on a chain of `l` sites, with its values `V(1..L−1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub l: usize,
    pub j: f64,
    values: Vec<f64>,
}

impl PotentialSpec {
    pub fn new(kind: PotentialKind, l: usize, j: f64) -> Result<Self> {
        if !(2..=L_MAX).contains(&l) {
            return Err(ExactDiagError::Length(l));
        }
        if !(j > 0.0 && j.is_finite()) {
            return Err(ExactDiagError::InvalidParameter(format!("J = {j}")));
        }
        if let Some(k) = kind.kappa() {
            if !(k > 0.0 && k.is_finite()) {
                return Err(ExactDiagError::InvalidParameter(format!("kappa = {k}")));
            }
        }
        let lf = l as f64;
        let values = match kind {
            PotentialKind::Xxx => (1..l).map(|d| if d == 1 || d == l - 1 { 1.0 } else { 0.0 }).collect(),
            PotentialKind::Hs => (1..l)
                .map(|d| PI * PI / (lf * lf * (PI * d as f64 / lf).sin().powi(2)))
                .collect(),
            PotentialKind::Hyperbolic(k) => {
                (1..l).map(|d| (k.sinh() / (k * d.min(l - d) as f64).sinh()).powi(2)).collect()
            }
            PotentialKind::HyperbolicOpen(k) => {
                (1..l).map(|d| (k.sinh() / (k * d as f64).sinh()).powi(2)).collect()
            }
            PotentialKind::Elliptic(k) => {
                let lat = Lattice::new(lf, PI / k)?;
                let shift = C64::new(0.0, -2.0 * k / PI) * lat.eta2();
                let pref = (k.sinh() / k).powi(2);
                let mut v = Vec::with_capacity(l - 1);
                for d in 1..l {
                    let w = pref * (lat.wp(C64::new(d as f64, 0.0))? + shift);
                    if w.im.abs() > 1e-12 * w.re.abs().max(1.0) {
                        return Err(ExactDiagError::ComplexPotential(w.im));
                    }
                    v.push(w.re);
                }
                v
            }
        };
        Ok(PotentialSpec { kind, l, j, values })
    }

    /// `V(d)` for `1 ≤ |d| ≤ L − 1`.
    pub fn value(&self, d: i64) -> Result<f64> {
        let a = d.unsigned_abs() as usize;
        if a == 0 || a >= self.l {
            return Err(ExactDiagError::Distance { j: d, l: self.l });
        }
        Ok(self.values[a - 1])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    // (J/2) V for every pair j < k, as (j, k, weight)
    fn bonds(&self) -> Vec<(usize, usize, f64)> {
        let mut b = Vec::new();
        for j in 0..self.l {
            for k in j + 1..self.l {
                let w = 0.5 * self.j * self.values[k - j - 1];
                if w != 0.0 {
                    b.push((j, k, w));
                }
            }
        }
        b
    }
}

pub fn potential_value(spec: &PotentialSpec, j: i64) -> Result<f64> {
    spec.value(j)
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Bit patterns of `l` sites with `m` flipped spins, ordered by combinadic rank.
pub fn sector_basis(l: usize, m: usize) -> Vec<u32> {
    let mut out = Vec::with_capacity(binomial(l, m));
    if m == 0 {
        out.push(0);
        return out;
    }
    let mut x: u32 = (1u32 << m) - 1;
    let limit = 1u32 << l;
    while x < limit {
        out.push(x);
        // next pattern with the same popcount
        let c = x & x.wrapping_neg();
        let r = x + c;
        x = (((r ^ x) >> 2) / c) | r;
    }
    out
}

/// Combinadic rank of a pattern among those with the same popcount.
pub fn combinadic_rank(x: u32) -> usize {
    let mut rank = 0;
    let mut seen = 0;
    for pos in 0..32 {
        if x >> pos & 1 == 1 {
            seen += 1;
            rank += binomial(pos, seen);
        }
    }
    rank
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorSpectrum {
    pub magnons: usize,
    pub eigenvalues: Vec<f64>,
}

fn check_sector(spec: &PotentialSpec, m: usize) -> Result<usize> {
    if m > spec.l {
        return Err(ExactDiagError::InvalidParameter(format!("M = {m} > L = {}", spec.l)));
    }
    let dim = binomial(spec.l, m);
    if dim > DIM_MAX {
        return Err(ExactDiagError::Dimension { l: spec.l, m, dim });
    }
    Ok(dim)
}

/// Real symmetric matrix of `H` in the `M`-magnon sector.
pub fn sector_matrix(spec: &PotentialSpec, m: usize) -> Result<DMatrix<f64>> {
    let dim = check_sector(spec, m)?;
    let basis = sector_basis(spec.l, m);
    let bonds = spec.bonds();
    let mut h = DMatrix::zeros(dim, dim);
    for (a, &x) in basis.iter().enumerate() {
        for &(j, k, w) in &bonds {
            if (x >> j & 1) != (x >> k & 1) {
                let y = x ^ (1 << j) ^ (1 << k);
                h[(a, a)] += w;
                h[(combinadic_rank(y), a)] -= w;
            }
        }
    }
    Ok(h)
}

fn rotate(x: u32, l: usize) -> u32 {
    ((x << 1) | (x >> (l - 1))) & ((1u32 << l) - 1)
}

// orbit representative (smallest pattern), shift d with x = T^d rep, and period
fn orbit(x: u32, l: usize) -> (u32, usize, usize) {
    let (mut rep, mut shift) = (x, 0);
    let mut y = x;
    let mut period = l;
    for d in 1..=l {
        // y = T^d x, so x = T^{l−d} y
        y = rotate(y, l);
        if y == x {
            period = d;
            break;
        }
        if y < rep {
            rep = y;
            shift = l - d;
        }
    }
    (rep, shift % period, period)
}

fn momentum_block_eigenvalues(spec: &PotentialSpec, basis: &[u32]) -> Vec<f64> {
    let l = spec.l;
    let bonds = spec.bonds();
    let mut reps: Vec<(u32, usize)> = basis
        .iter()
        .filter_map(|&x| {
            let (r, _, p) = orbit(x, l);
            (r == x).then_some((x, p))
        })
        .collect();
    reps.sort_unstable();
    let index = |r: u32| reps.binary_search_by_key(&r, |e| e.0).ok();
    (0..l)
        .into_par_iter()
        .flat_map_iter(|kn| {
            let k = 2.0 * PI * kn as f64 / l as f64;
            // representatives compatible with momentum k: e^{i k period} = 1
            let allowed: Vec<usize> = (0..reps.len()).filter(|&i| (kn * reps[i].1).is_multiple_of(l)).collect();
            let pos: std::collections::HashMap<usize, usize> =
                allowed.iter().enumerate().map(|(a, &i)| (i, a)).collect();
            let n = allowed.len();
            let mut h = DMatrix::<C64>::zeros(n, n);
            for (a, &i) in allowed.iter().enumerate() {
                let (x, px) = reps[i];
                for &(j, kk, w) in &bonds {
                    if (x >> j & 1) != (x >> kk & 1) {
                        h[(a, a)] += w;
                        let y = x ^ (1 << j) ^ (1 << kk);
                        let (ry, d, py) = orbit(y, l);
                        let Some(b) = index(ry).and_then(|ib| pos.get(&ib).copied()) else {
                            continue;
                        };
                        let phase = C64::from_polar((px as f64 / py as f64).sqrt(), k * d as f64);
                        h[(b, a)] -= phase * w;
                    }
                }
            }
            if n == 0 {
                Vec::new()
            } else {
                SymmetricEigen::new(h).eigenvalues.iter().copied().collect::<Vec<f64>>()
            }
        })
        .collect()
}

/// Full spectrum of the `M`-magnon sector, sorted ascending.
pub fn build_sector(spec: &PotentialSpec, m: usize) -> Result<SectorSpectrum> {
    check_sector(spec, m)?;
    let mut ev = if m == 0 || m == spec.l {
        vec![0.0]
    } else if spec.kind.is_periodic() {
        momentum_block_eigenvalues(spec, &sector_basis(spec.l, m))
    } else {
        SymmetricEigen::new(sector_matrix(spec, m)?).eigenvalues.iter().copied().collect()
    };
    ev.sort_by(f64::total_cmp);
    Ok(SectorSpectrum { magnons: m, eigenvalues: ev })
}

/// Every sector `M = 0…L`; sectors above `L/2` reuse their spin-reversed partner.
pub fn full_spectrum(spec: &PotentialSpec) -> Result<Vec<SectorSpectrum>> {
    let half: Vec<SectorSpectrum> =
        (0..=spec.l / 2).into_par_iter().map(|m| build_sector(spec, m)).collect::<Result<_>>()?;
    Ok((0..=spec.l)
        .map(|m| {
            let src = &half[m.min(spec.l - m)];
            SectorSpectrum { magnons: m, eigenvalues: src.eigenvalues.clone() }
        })
        .collect())
}

/// `Tr H` from the diagonal, `(J/2) Σ_{j<k} V · 2^{L−1}`.
pub fn trace_h(spec: &PotentialSpec) -> f64 {
    let half = (1u64 << (spec.l - 1)) as f64;
    spec.bonds().iter().map(|b| b.2).sum::<f64>() * half
}

/// `−(T/L) log Σ e^{−E/T}`, anchored at the lowest level.
pub fn free_energy_from_spectrum(sectors: &[SectorSpectrum], l: usize, t: f64) -> f64 {
    let e0 = sectors
        .iter()
        .flat_map(|s| s.eigenvalues.iter())
        .fold(f64::INFINITY, |a, &b| a.min(b));
    let sum: f64 = sectors
        .iter()
        .map(|s| s.eigenvalues.iter().map(|e| (-(e - e0) / t).exp()).sum::<f64>())
        .sum();
    (e0 - t * sum.ln()) / l as f64
}

pub fn free_energy_trace(spec: &PotentialSpec, t: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(ExactDiagError::InvalidParameter(format!("T = {t}")));
    }
    Ok(free_energy_from_spectrum(&full_spectrum(spec)?, spec.l, t))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stabilized {
    pub f: f64,
    pub l_used: usize,
    pub stabilized: bool,
    /// `(L, f_L)` for every length tried.
    pub sequence: Vec<(usize, f64)>,
}

/// Grow `L` in steps of two from `l_start` until consecutive free energies
/// differ by less than `tol` relative, or `L` would exceed `l_max`.
pub fn stabilized_free_energy(
    kind: PotentialKind,
    j: f64,
    t: f64,
    tol: f64,
    l_start: usize,
    l_max: usize,
) -> Result<Stabilized> {
    let l_max = l_max.min(L_MAX);
    let mut seq: Vec<(usize, f64)> = Vec::new();
    let mut l = l_start.max(2);
    while l <= l_max {
        let f = free_energy_trace(&PotentialSpec::new(kind, l, j)?, t)?;
        if let Some(&(_, prev)) = seq.last() {
            if (f - prev).abs() < tol * f.abs() {
                seq.push((l, f));
                return Ok(Stabilized { f, l_used: l, stabilized: true, sequence: seq });
            }
        }
        seq.push((l, f));
        l += 2;
    }
    let &(l_used, f) = seq.last().ok_or(ExactDiagError::Length(l_start))?;
    Ok(Stabilized { f, l_used, stabilized: false, sequence: seq })
}

/// Free energies for a list of temperatures sharing one spectrum.
pub fn free_energy_sweep(spec: &PotentialSpec, ts: &[f64]) -> Result<Vec<f64>> {
    let sp = full_spectrum(spec)?;
    Ok(ts.iter().map(|&t| free_energy_from_spectrum(&sp, spec.l, t)).collect())
}

const DUMP_MAGIC: &[u8; 8] = b"INZSPECT";
const DUMP_VERSION: u32 = 1;

/// Binary eigenvalue dump for `L ≤ 8`: magic, version, `L`, then per sector
/// `M`, count and the eigenvalues (little endian).
pub fn write_spectrum_dump(path: &Path, spec: &PotentialSpec, sectors: &[SectorSpectrum]) -> Result<()> {
    if spec.l > 8 {
        return Err(ExactDiagError::InvalidParameter(format!("dump requires L <= 8, got {}", spec.l)));
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(DUMP_MAGIC)?;
    f.write_all(&DUMP_VERSION.to_le_bytes())?;
    f.write_all(&(spec.l as u32).to_le_bytes())?;
    for s in sectors {
        f.write_all(&(s.magnons as u32).to_le_bytes())?;
        f.write_all(&(s.eigenvalues.len() as u32).to_le_bytes())?;
        for e in &s.eigenvalues {
            f.write_all(&e.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_ranks_are_consecutive() {
        for m in 0..=7 {
            let b = sector_basis(7, m);
            assert_eq!(b.len(), binomial(7, m));
            for (i, &x) in b.iter().enumerate() {
                assert_eq!(combinadic_rank(x), i);
            }
        }
    }

    #[test]
    fn two_sites() {
        let spec = PotentialSpec::new(PotentialKind::Xxx, 2, 1.0).unwrap();
        let mut all: Vec<f64> = full_spectrum(&spec).unwrap().into_iter().flat_map(|s| s.eigenvalues).collect();
        all.sort_by(f64::total_cmp);
        assert!(all[..3].iter().all(|e| e.abs() < 1e-14) && (all[3] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn momentum_blocks_match_dense() {
        for kind in [PotentialKind::Xxx, PotentialKind::Hs, PotentialKind::Elliptic(0.7)] {
            let spec = PotentialSpec::new(kind, 8, 1.0).unwrap();
            for m in 1..=4 {
                let blocks = build_sector(&spec, m).unwrap().eigenvalues;
                let mut dense: Vec<f64> =
                    SymmetricEigen::new(sector_matrix(&spec, m).unwrap()).eigenvalues.iter().copied().collect();
                dense.sort_by(f64::total_cmp);
                assert_eq!(blocks.len(), dense.len());
                for (a, b) in blocks.iter().zip(&dense) {
                    assert!((a - b).abs() < 1e-11, "{kind:?} M={m}: {a} {b}");
                }
            }
        }
    }

    #[test]
    fn one_magnon_band() {
        let spec = PotentialSpec::new(PotentialKind::Xxx, 10, 1.0).unwrap();
        let ev = build_sector(&spec, 1).unwrap().eigenvalues;
        let mut exact: Vec<f64> = (0..10).map(|n| 1.0 - (2.0 * PI * n as f64 / 10.0).cos()).collect();
        exact.sort_by(f64::total_cmp);
        assert!(ev.iter().zip(&exact).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn potential_examples() {
        let x = PotentialSpec::new(PotentialKind::Xxx, 8, 1.0).unwrap();
        assert_eq!((x.value(1).unwrap(), x.value(2).unwrap(), x.value(7).unwrap()), (1.0, 0.0, 1.0));
        let h = PotentialSpec::new(PotentialKind::Hs, 4, 1.0).unwrap();
        assert!((h.value(2).unwrap() - PI * PI / 16.0).abs() < 1e-15);
        let e = PotentialSpec::new(PotentialKind::Elliptic(5.0), 10, 1.0).unwrap();
        assert!((e.value(1).unwrap() - 1.0).abs() < 1e-3 && e.value(2).unwrap().abs() < 1e-3);
        assert!(e.value(0).is_err() && e.value(10).is_err());
    }

    #[test]
    fn trace_matches_diagonal() {
        let spec = PotentialSpec::new(PotentialKind::Elliptic(1.0), 9, 1.0).unwrap();
        let sum: f64 = full_spectrum(&spec).unwrap().iter().map(|s| s.eigenvalues.iter().sum::<f64>()).sum();
        assert!((sum / trace_h(&spec) - 1.0).abs() < 1e-10);
    }
}
