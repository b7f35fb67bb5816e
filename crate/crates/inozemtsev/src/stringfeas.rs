//! Consistency of convergence rates for coinciding string solutions.
//!
//! Every sign gets a rate `δ > 0`. A sign on a level is helped by the level
//! above (plus) or below (minus) and counteracted by the other neighbour; its
//! Bethe equation survives `L → ∞` iff
//! `Σ_helpers min(δ, δ_h) > Σ_counter min(δ, δ_c)`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeasError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot parse configuration {input:?} at position {position}: {reason}")]
    Parse { input: String, position: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, FeasError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

/// Sign counts per level, top level first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignConfiguration {
    levels: Vec<(usize, usize)>,
}

impl SignConfiguration {
    /// `levels[j] = (P_j, M_j)`, top to bottom.
    pub fn new(levels: Vec<(usize, usize)>) -> Result<Self> {
        let total: usize = levels.iter().map(|l| l.0 + l.1).sum();
        if total < 2 {
            return Err(FeasError::Invalid(format!("{total} signs, need at least 2")));
        }
        if let Some(j) = levels.iter().position(|l| l.0 + l.1 == 0) {
            return Err(FeasError::Invalid(format!("level {} is empty", j + 1)));
        }
        if levels[0].0 > 0 {
            return Err(FeasError::Invalid("plus on the top level has no helper".into()));
        }
        if levels[levels.len() - 1].1 > 0 {
            return Err(FeasError::Invalid("minus on the bottom level has no helper".into()));
        }
        Ok(SignConfiguration { levels })
    }

    /// Pure `M`-string: `m_minus` single minuses above `m_plus` single pluses.
    pub fn string(m_minus: usize, m_plus: usize) -> Result<Self> {
        let mut l = vec![(0, 1); m_minus];
        l.extend(std::iter::repeat_n((1, 0), m_plus));
        Self::new(l)
    }

    pub fn levels(&self) -> &[(usize, usize)] {
        &self.levels
    }

    pub fn num_signs(&self) -> usize {
        self.levels.iter().map(|l| l.0 + l.1).sum()
    }

    /// Whether some interior level carrying both signs sits between two
    /// levels of exactly one sign each; such a level always reproduces the
    /// unsolvable three-level pattern.
    pub fn contains_ex1(&self) -> bool {
        let l = &self.levels;
        (1..l.len().saturating_sub(1)).any(|j| {
            l[j].0 > 0 && l[j].1 > 0 && l[j - 1].0 + l[j - 1].1 == 1 && l[j + 1].0 + l[j + 1].1 == 1
        })
    }
}

impl fmt::Display for SignConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .levels
            .iter()
            .map(|&(p, m)| {
                let mut s = String::new();
                if p > 0 {
                    s += &format!("{p}+");
                }
                if m > 0 {
                    s += &format!("{m}-");
                }
                s
            })
            .collect();
        write!(f, "{}", parts.join("/"))
    }
}

impl FromStr for SignConfiguration {
    type Err = FeasError;

    /// Levels separated by `/`, each a run of `<count><sign>` tokens
    /// (count defaults to 1), e.g. `1-/1+1-/1+` or `-/+-/+`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |position: usize, reason: &str| FeasError::Parse {
            input: s.to_string(),
            position,
            reason: reason.to_string(),
        };
        let mut levels = Vec::new();
        let (mut p, mut m) = (0usize, 0usize);
        let mut num = String::new();
        let mut num_start = 0;
        for (i, ch) in s.char_indices() {
            match ch {
                '0'..='9' => {
                    if num.is_empty() {
                        num_start = i;
                    }
                    num.push(ch);
                }
                '+' | '-' => {
                    let n = if num.is_empty() {
                        1
                    } else {
                        num.parse().map_err(|_| bad(num_start, "count too large"))?
                    };
                    num.clear();
                    if ch == '+' {
                        p += n;
                    } else {
                        m += n;
                    }
                }
                '/' => {
                    if !num.is_empty() {
                        return Err(bad(num_start, "count without a sign"));
                    }
                    levels.push((p, m));
                    (p, m) = (0, 0);
                }
                c if c.is_whitespace() => {}
                _ => return Err(bad(i, "unexpected character")),
            }
        }
        if !num.is_empty() {
            return Err(bad(num_start, "count without a sign"));
        }
        levels.push((p, m));
        SignConfiguration::new(levels)
    }
}

/// Rate variable attached to one sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateVar {
    pub level: usize,
    pub sign: Sign,
}

/// `Σ_h min(δ_owner, δ_h) − Σ_c min(δ_owner, δ_c) > 0`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateConstraint {
    pub owner: usize,
    pub helpers: Vec<usize>,
    pub counter: Vec<usize>,
}

impl RateConstraint {
    pub fn value(&self, d: &[f64]) -> f64 {
        let s = d[self.owner];
        let h: f64 = self.helpers.iter().map(|&k| s.min(d[k])).sum();
        let c: f64 = self.counter.iter().map(|&k| s.min(d[k])).sum();
        h - c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSystem {
    pub variables: Vec<RateVar>,
    pub constraints: Vec<RateConstraint>,
}

impl RateSystem {
    /// Smallest constraint value; positive iff `d` is a witness.
    pub fn margin(&self, d: &[f64]) -> f64 {
        self.constraints.iter().map(|c| c.value(d)).fold(f64::INFINITY, f64::min)
    }

    fn subsystem(&self, keep: &[usize]) -> RateSystem {
        RateSystem {
            variables: self.variables.clone(),
            constraints: keep.iter().map(|&i| self.constraints[i].clone()).collect(),
        }
    }
}

pub fn build_rate_system(cfg: &SignConfiguration) -> RateSystem {
    let mut variables = Vec::new();
    let mut by_level: Vec<Vec<usize>> = Vec::new();
    for (j, &(p, m)) in cfg.levels.iter().enumerate() {
        let mut ids = Vec::new();
        for (sign, n) in [(Sign::Plus, p), (Sign::Minus, m)] {
            for _ in 0..n {
                ids.push(variables.len());
                variables.push(RateVar { level: j, sign });
            }
        }
        by_level.push(ids);
    }
    let nl = by_level.len();
    let neighbour = |j: usize, up: bool| -> Vec<usize> {
        if up {
            if j == 0 { Vec::new() } else { by_level[j - 1].clone() }
        } else if j + 1 == nl {
            Vec::new()
        } else {
            by_level[j + 1].clone()
        }
    };
    let constraints = variables
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let plus = v.sign == Sign::Plus;
            RateConstraint {
                owner: k,
                helpers: neighbour(v.level, plus),
                counter: neighbour(v.level, !plus),
            }
        })
        .collect();
    RateSystem { variables, constraints }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeasStatus {
    Feasible,
    Infeasible,
    /// Found by random search beyond the exact cap; not a proof either way
    /// when absent.
    InconclusiveFeasible,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Certificate {
    /// Every variable is barred from being the smallest rate: `(var, constraint)`.
    NoMinimum(Vec<(usize, usize)>),
    /// All weak orderings examined; `conflict` is a minimal infeasible subset
    /// of constraint indices, `no_minimum` its local refutation when it has one.
    Exhausted {
        orderings_pruned: u64,
        conflict: Vec<usize>,
        no_minimum: Option<Vec<(usize, usize)>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityVerdict {
    pub status: FeasStatus,
    /// Rates normalized to `max δ = 1`.
    pub witness: Option<Vec<f64>>,
    /// Weak ordering of the witness as blocks of variable indices, smallest first.
    pub ordering: Option<Vec<Vec<usize>>>,
    pub certificate: Option<Certificate>,
}

#[derive(Debug, Clone, Copy)]
pub struct FeasOptions {
    pub exact_cap: usize,
    pub random_samples: usize,
    pub seed: u64,
    pub minimal_conflict: bool,
}

impl Default for FeasOptions {
    fn default() -> Self {
        FeasOptions { exact_cap: 12, random_samples: 200_000, seed: 7, minimal_conflict: true }
    }
}

pub fn decide_feasibility(sys: &RateSystem) -> FeasibilityVerdict {
    decide_with(sys, &FeasOptions::default())
}

pub fn decide_with(sys: &RateSystem, opt: &FeasOptions) -> FeasibilityVerdict {
    if let Some(cert) = no_minimum(sys) {
        return infeasible(Certificate::NoMinimum(cert));
    }
    let n = sys.variables.len();
    if n > opt.exact_cap {
        return random_search(sys, opt);
    }
    match exact_search(sys) {
        Search::Found(blocks, values) => feasible(sys, blocks, values),
        Search::None(pruned) => {
            let conflict = if opt.minimal_conflict {
                minimal_conflict(sys)
            } else {
                (0..sys.constraints.len()).collect()
            };
            let sub = sys.subsystem(&conflict);
            let no_min = no_minimum_on(&sub, &involved(&sub)).map(|r| {
                r.into_iter().map(|(k, ci)| (k, conflict[ci])).collect()
            });
            infeasible(Certificate::Exhausted { orderings_pruned: pruned, conflict, no_minimum: no_min })
        }
    }
}

fn infeasible(c: Certificate) -> FeasibilityVerdict {
    FeasibilityVerdict { status: FeasStatus::Infeasible, witness: None, ordering: None, certificate: Some(c) }
}

fn feasible(sys: &RateSystem, blocks: Vec<Vec<usize>>, values: Vec<BigRational>) -> FeasibilityVerdict {
    let mut d = vec![0.0; sys.variables.len()];
    for (b, v) in blocks.iter().zip(&values) {
        let x = v.to_f64().unwrap_or(f64::NAN);
        for &k in b {
            d[k] = x;
        }
    }
    let mx = d.iter().cloned().fold(0.0, f64::max);
    for x in &mut d {
        *x /= mx;
    }
    FeasibilityVerdict { status: FeasStatus::Feasible, witness: Some(d), ordering: Some(blocks), certificate: None }
}

// Local refutation: if `x` held the minimum value `m`, some constraint would
// read `a·m > b·m` with `a ≤ b`, or `m > (terms ≥ m)`.
fn no_minimum(sys: &RateSystem) -> Option<Vec<(usize, usize)>> {
    no_minimum_on(sys, &(0..sys.variables.len()).collect::<Vec<_>>())
}

fn involved(sys: &RateSystem) -> Vec<usize> {
    let mut v: Vec<usize> = sys
        .constraints
        .iter()
        .flat_map(|c| std::iter::once(c.owner).chain(c.helpers.iter().copied()).chain(c.counter.iter().copied()))
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

// restricted to `vars`: all of them barred means no variable can be minimal
fn no_minimum_on(sys: &RateSystem, vars: &[usize]) -> Option<Vec<(usize, usize)>> {
    let n = sys.variables.len();
    let mut reason = vec![None; n];
    for (ci, c) in sys.constraints.iter().enumerate() {
        if c.helpers.len() <= c.counter.len() && reason[c.owner].is_none() {
            reason[c.owner] = Some(ci);
        }
        if c.helpers.len() == 1 && !c.counter.is_empty() {
            let h = c.helpers[0];
            if reason[h].is_none() && h != c.owner {
                reason[h] = Some(ci);
            }
        }
    }
    vars.iter().map(|&k| reason[k].map(|ci| (k, ci))).collect()
}

enum Search {
    Found(Vec<Vec<usize>>, Vec<BigRational>),
    None(u64),
}

// Depth-first over ordered set partitions, smallest block first; a prefix is
// pruned once the constraints it already resolves are inconsistent.
fn exact_search(sys: &RateSystem) -> Search {
    let n = sys.variables.len();
    let full: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let firsts: Vec<u32> = subsets(full).collect();
    let results: Vec<std::result::Result<(Vec<Vec<usize>>, Vec<BigRational>), u64>> = firsts
        .par_iter()
        .map(|&first| {
            let mut blocks = vec![first];
            let mut pruned = 0u64;
            match dfs(sys, full & !first, &mut blocks, &mut pruned) {
                Some(vals) => Ok((blocks.iter().map(|&b| bits(b)).collect(), vals)),
                None => Err(pruned),
            }
        })
        .collect();
    let mut pruned = 0;
    for r in results {
        match r {
            Ok((b, v)) => return Search::Found(b, v),
            Err(p) => pruned += p,
        }
    }
    Search::None(pruned)
}

fn dfs(sys: &RateSystem, rest: u32, blocks: &mut Vec<u32>, pruned: &mut u64) -> Option<Vec<BigRational>> {
    let lin = resolve(sys, blocks);
    let sol = solve_ordered(&lin, blocks.len());
    if sol.is_none() {
        *pruned += 1;
        return None;
    }
    if rest == 0 {
        return sol;
    }
    for b in subsets(rest) {
        blocks.push(b);
        if let Some(v) = dfs(sys, rest & !b, blocks, pruned) {
            return Some(v);
        }
        blocks.pop();
    }
    None
}

fn subsets(set: u32) -> impl Iterator<Item = u32> {
    // nonempty subsets in decreasing numeric order, deterministic
    let mut s = set;
    let mut done = set == 0;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        let out = s;
        if s == 0 {
            return None;
        }
        s = (s - 1) & set;
        if s == 0 {
            done = true;
        }
        Some(out)
    })
}

fn bits(b: u32) -> Vec<usize> {
    (0..32).filter(|k| b >> k & 1 == 1).collect()
}

// Resolved constraints as integer coefficient vectors over block values.
fn resolve(sys: &RateSystem, blocks: &[u32]) -> Vec<Vec<i64>> {
    let n = sys.variables.len();
    let mut block_of = vec![usize::MAX; n];
    for (i, &b) in blocks.iter().enumerate() {
        for k in bits(b) {
            block_of[k] = i;
        }
    }
    let min_block = |a: usize, b: usize| -> Option<usize> {
        let (x, y) = (block_of[a], block_of[b]);
        if x == usize::MAX && y == usize::MAX {
            None
        } else {
            Some(x.min(y))
        }
    };
    let mut out = Vec::new();
    'c: for c in &sys.constraints {
        let mut row = vec![0i64; blocks.len()];
        for (list, s) in [(&c.helpers, 1i64), (&c.counter, -1i64)] {
            for &h in list {
                match min_block(c.owner, h) {
                    Some(i) => row[i] += s,
                    None => continue 'c,
                }
            }
        }
        out.push(row);
    }
    out
}

// Find v with v_1 ≥ 1, v_{i+1} − v_i ≥ 1 and row·v ≥ 1; by homogeneity this
// is equivalent to the strict system.
fn solve_ordered(rows: &[Vec<i64>], k: usize) -> Option<Vec<BigRational>> {
    let mut sys: Vec<(Vec<BigRational>, BigRational)> = Vec::new();
    let one = BigRational::one();
    let int = |x: i64| BigRational::from_integer(BigInt::from(x));
    for i in 0..k {
        let mut a = vec![BigRational::zero(); k];
        a[i] = one.clone();
        if i > 0 {
            a[i - 1] = -one.clone();
        }
        sys.push((a, one.clone()));
    }
    for r in rows {
        sys.push((r.iter().map(|&x| int(x)).collect(), one.clone()));
    }
    fourier_motzkin(sys, k)
}

type Row = (Vec<BigRational>, BigRational);

// a·v ≥ b rows; eliminates from the last variable, then back-substitutes
fn fourier_motzkin(mut rows: Vec<Row>, k: usize) -> Option<Vec<BigRational>> {
    let mut stages: Vec<Vec<Row>> = Vec::with_capacity(k);
    for var in (0..k).rev() {
        rows = dedupe(rows);
        let (mut pos, mut neg, mut zero) = (Vec::new(), Vec::new(), Vec::new());
        for r in rows {
            match r.0[var].signum() {
                s if s.is_positive() => pos.push(r),
                s if s.is_negative() => neg.push(r),
                _ => zero.push(r),
            }
        }
        let mut next = zero;
        for p in &pos {
            for q in &neg {
                let (cp, cq) = (p.0[var].clone(), -q.0[var].clone());
                let a: Vec<BigRational> = (0..k).map(|j| &p.0[j] * &cq + &q.0[j] * &cp).collect();
                next.push((a, &p.1 * &cq + &q.1 * &cp));
            }
        }
        let mut stage = pos;
        stage.extend(neg);
        stages.push(stage);
        rows = next;
    }
    if rows.iter().any(|r| r.1.is_positive()) {
        return None;
    }
    let mut v = vec![BigRational::zero(); k];
    for (idx, var) in (0..k).enumerate() {
        let stage = &stages[k - 1 - idx];
        let (mut lo, mut hi): (Option<BigRational>, Option<BigRational>) = (None, None);
        for (a, b) in stage {
            let mut rest = b.clone();
            for j in 0..var {
                rest -= &a[j] * &v[j];
            }
            let bound = rest / &a[var];
            if a[var].is_positive() {
                lo = Some(lo.map_or(bound.clone(), |l: BigRational| l.max(bound)));
            } else {
                hi = Some(hi.map_or(bound.clone(), |h: BigRational| h.min(bound)));
            }
        }
        v[var] = match (lo, hi) {
            (Some(l), Some(h)) => (l + h) / BigRational::from_integer(BigInt::from(2)),
            (Some(l), None) => l + BigRational::one(),
            (None, Some(h)) => h - BigRational::one(),
            (None, None) => BigRational::one(),
        };
    }
    Some(v)
}

fn dedupe(rows: Vec<Row>) -> Vec<Row> {
    let mut out: Vec<Row> = Vec::with_capacity(rows.len());
    for (a, b) in rows {
        let scale = a.iter().map(|x| x.abs()).max().unwrap_or_else(BigRational::zero);
        if scale.is_zero() {
            if b.is_positive() {
                out.push((a, b));
            }
            continue;
        }
        let a: Vec<BigRational> = a.iter().map(|x| x / &scale).collect();
        let b = b / &scale;
        if let Some(r) = out.iter_mut().find(|r| r.0 == a) {
            if b > r.1 {
                r.1 = b;
            }
        } else {
            out.push((a, b));
        }
    }
    out
}

fn is_feasible_exact(sys: &RateSystem) -> bool {
    no_minimum(sys).is_none() && matches!(exact_search(sys), Search::Found(..))
}

// Deletion filter: drop each constraint whose removal keeps the rest infeasible.
fn minimal_conflict(sys: &RateSystem) -> Vec<usize> {
    let mut keep: Vec<usize> = (0..sys.constraints.len()).collect();
    let mut i = 0;
    while i < keep.len() {
        let mut trial = keep.clone();
        trial.remove(i);
        if !is_feasible_exact(&sys.subsystem(&trial)) {
            keep = trial;
        } else {
            i += 1;
        }
    }
    keep
}

fn random_search(sys: &RateSystem, opt: &FeasOptions) -> FeasibilityVerdict {
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let n = sys.variables.len();
    let mut d = vec![0.0; n];
    for _ in 0..opt.random_samples {
        // log-uniform rates over several decades reach nested orderings
        for x in d.iter_mut() {
            *x = 10f64.powf(-4.0 * rng.random::<f64>());
        }
        let mx = d.iter().cloned().fold(0.0, f64::max);
        for x in d.iter_mut() {
            *x /= mx;
        }
        if sys.margin(&d) > 1e-9 {
            return FeasibilityVerdict {
                status: FeasStatus::InconclusiveFeasible,
                witness: Some(d),
                ordering: None,
                certificate: None,
            };
        }
    }
    FeasibilityVerdict { status: FeasStatus::Inconclusive, witness: None, ordering: None, certificate: None }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelEntry {
    pub config: String,
    pub status: FeasStatus,
    pub contains_ex1: bool,
}

/// Classify every valid 3-level configuration with per-level counts ≤ `bound`.
pub fn enumerate_three_level(bound: usize) -> Vec<ThreeLevelEntry> {
    let mut cfgs = Vec::new();
    for m1 in 1..=bound {
        for p2 in 0..=bound {
            for m2 in 0..=bound {
                for p3 in 1..=bound {
                    if p2 + m2 == 0 {
                        continue;
                    }
                    if let Ok(c) = SignConfiguration::new(vec![(0, m1), (p2, m2), (p3, 0)]) {
                        cfgs.push(c);
                    }
                }
            }
        }
    }
    let opt = FeasOptions { minimal_conflict: false, ..FeasOptions::default() };
    cfgs.par_iter()
        .map(|c| {
            let v = decide_with(&build_rate_system(c), &opt);
            ThreeLevelEntry { config: c.to_string(), status: v.status, contains_ex1: c.contains_ex1() }
        })
        .collect()
}
