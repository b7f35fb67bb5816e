//! Command-line front end.
//!
//! Flags may also be given in a `key = value` file passed with `--config`;
//! keys are long flag names and flags on the command line take precedence.

use crate::dispersion::{DispersionContext, DispersionError};
use crate::elliptic::{Lattice, C64};
use crate::exactdiag::{self, ExactDiagError, PotentialKind, PotentialSpec};
use crate::stringfeas::{self, FeasError, FeasOptions, SignConfiguration};
use crate::strings::{self, StringError};
use crate::tba::{self, Dispersion, RapidityGrid, TbaError, TbaOptions};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DispersionError> for CliError {
    fn from(e: DispersionError) -> Self {
        match e {
            DispersionError::InvalidParameter(m) => CliError::Usage(m),
            e => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<StringError> for CliError {
    fn from(e: StringError) -> Self {
        match e {
            StringError::Dispersion(d) => d.into(),
            StringError::Invalid(m) => CliError::Usage(m),
            e => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<TbaError> for CliError {
    fn from(e: TbaError) -> Self {
        match e {
            TbaError::Io(e) => CliError::Io(e.to_string()),
            TbaError::Cache(m) => CliError::Io(m),
            TbaError::InvalidParameter(m) => CliError::Usage(m),
            e => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ExactDiagError> for CliError {
    fn from(e: ExactDiagError) -> Self {
        match e {
            ExactDiagError::Io(e) => CliError::Io(e.to_string()),
            ExactDiagError::Length(_)
            | ExactDiagError::Distance { .. }
            | ExactDiagError::Dimension { .. }
            | ExactDiagError::InvalidParameter(_) => CliError::Usage(e.to_string()),
            e => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<FeasError> for CliError {
    fn from(e: FeasError) -> Self {
        CliError::Usage(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "inozemtsev", version, about = "Dispersion, strings, TBA and exact diagonalization for Inozemtsev's elliptic spin chain")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Plain-text `key = value` file with default flag values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Output file (standard output when absent).
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// ε(p) and φ(p) tables with the XXX and HS reference curves.
    Dispersion(DispersionArgs),
    /// TBA free energy over a temperature grid.
    FreeEnergy(FreeEnergyArgs),
    /// Free energy of finite chains from their full spectra.
    ExactDiag(ExactDiagArgs),
    /// Feasibility of a sign configuration, optionally with its momenta.
    Classify(ClassifyArgs),
    /// Preimages of rapidities under φ.
    InvertPhi(InvertPhiArgs),
    /// Quick run of the numerical invariants.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct DispersionArgs {
    /// Comma-separated κ values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub kappa: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub j: f64,
    /// Number of momentum intervals on (0, 2π).
    #[arg(long, default_value_t = 200)]
    pub points: usize,
}

#[derive(Debug, Args)]
pub struct FreeEnergyArgs {
    /// Deformation parameter; omitted means the XXX closed-form strings.
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub j: f64,
    /// Comma-separated temperatures; overrides the range flags.
    #[arg(long, value_delimiter = ',')]
    pub temps: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub t_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub t_max: f64,
    /// Number of log-spaced temperatures between t-min and t-max.
    #[arg(long, default_value_t = 12)]
    pub t_count: usize,
    #[arg(long, default_value_t = 30.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 512)]
    pub n_points: usize,
    #[arg(long, default_value_t = tba::Q_CAP)]
    pub q_cap: usize,
    /// Driving-term cache file.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Add exact-diagonalization columns (stabilized in L).
    #[arg(long)]
    pub exact: bool,
    #[arg(long, default_value_t = 12)]
    pub l_max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Xxx,
    Hs,
    Elliptic,
    Hyperbolic,
    HyperbolicOpen,
}

#[derive(Debug, Args)]
pub struct ExactDiagArgs {
    #[arg(long, value_enum, default_value_t = KindArg::Elliptic)]
    pub kind: KindArg,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub j: f64,
    /// Fixed chain length; without it L grows until the free energy stabilizes.
    #[arg(long)]
    pub l: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub l_min: usize,
    #[arg(long, default_value_t = 14)]
    pub l_max: usize,
    #[arg(long, default_value_t = 0.02)]
    pub tol: f64,
    #[arg(long, value_delimiter = ',', required = true)]
    pub temps: Vec<f64>,
    /// Binary eigenvalue dump (fixed L ≤ 8 only).
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Levels top to bottom separated by '/', e.g. "1-/1+1-/1+".
    pub configuration: String,
    /// Build momenta at this κ (needs theta-r, theta-i and regions).
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub theta_r: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub theta_i: Option<f64>,
    /// Region index per sign, level by level, pluses before minuses.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub regions: Vec<i64>,
    #[arg(long, default_value_t = 1.0)]
    pub j: f64,
    /// Seed of the randomized fallback for large configurations.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct InvertPhiArgs {
    #[arg(long)]
    pub kappa: f64,
    /// Rapidities as `re,im` pairs separated by ';', e.g. "0.6,0.8;1.4,1.89".
    #[arg(long, allow_hyphen_values = true)]
    pub theta: String,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub region: i64,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    /// Validate this driving-term cache file as well.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

/// A value in an output table.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
    B(bool),
    Null,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::F(v) => format!("{v:e}"),
            Cell::I(v) => v.to_string(),
            Cell::S(s) => s.clone(),
            Cell::B(b) => b.to_string(),
            Cell::Null => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::F(v) if v.is_finite() => json!(v),
            Cell::F(_) | Cell::Null => Value::Null,
            Cell::I(v) => json!(v),
            Cell::S(s) => json!(s),
            Cell::B(b) => json!(b),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Extra structured payload, emitted only in JSON.
    pub extra: Option<Value>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    }

    fn meta(&mut self, k: &str, v: impl ToString) {
        self.metadata.push((k.to_string(), v.to_string()));
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), CliError> {
        let mut w = w;
        let meta: Vec<String> = std::iter::once(format!("version={VERSION}"))
            .chain(self.metadata.iter().map(|(k, v)| format!("{k}={v}")))
            .collect();
        writeln!(w, "# inozemtsev {}", meta.join(" "))?;
        let mut c = csv::Writer::from_writer(w);
        c.write_record(&self.columns)?;
        for r in &self.rows {
            c.write_record(r.iter().map(Cell::csv))?;
        }
        c.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let mut meta = Map::new();
        meta.insert("version".into(), json!(VERSION));
        for (k, v) in &self.metadata {
            meta.insert(k.clone(), json!(v));
        }
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let mut m = Map::new();
                for (c, v) in self.columns.iter().zip(r) {
                    m.insert(c.clone(), v.json());
                }
                Value::Object(m)
            })
            .collect();
        let mut top = Map::new();
        top.insert("metadata".into(), Value::Object(meta));
        top.insert("rows".into(), Value::Array(rows));
        if let Some(e) = &self.extra {
            top.insert("result".into(), e.clone());
        }
        Value::Object(top)
    }

    pub fn write(&self, format: Format, out: Option<&Path>) -> Result<(), CliError> {
        let sink: Box<dyn Write> = match out {
            Some(p) => Box::new(std::io::BufWriter::new(
                std::fs::File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
            )),
            None => Box::new(std::io::stdout().lock()),
        };
        match format {
            Format::Csv => self.write_csv(sink),
            Format::Json => {
                let mut sink = sink;
                serde_json::to_writer_pretty(&mut sink, &self.to_json()).map_err(|e| CliError::Io(e.to_string()))?;
                writeln!(sink)?;
                sink.flush()?;
                Ok(())
            }
        }
    }
}

/// Rewrite `argv` so that entries of the `--config` file appear right after
/// the subcommand name, ahead of any flag given explicitly.
pub fn expand_config(argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if a == "--config" {
            path = argv.get(i + 1).cloned();
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{path}: {e}")))?;
    let mut injected = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{path}:{}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim().replace('_', "-"), v.trim());
        let flag = format!("--{k}");
        if argv.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}="))) {
            continue;
        }
        match v {
            "true" => injected.push(flag),
            "false" => {}
            _ => injected.push(format!("{flag}={v}")),
        }
    }
    const SUBCOMMANDS: [&str; 6] = ["dispersion", "free-energy", "exact-diag", "classify", "invert-phi", "selftest"];
    let pos = argv.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())).map_or(argv.len(), |i| i + 1);
    let mut out = argv[..pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[pos..]);
    Ok(out)
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("{name} must be positive, got {v}")))
    }
}

pub fn cmd_dispersion(a: &DispersionArgs) -> Result<Table, CliError> {
    if a.kappa.is_empty() {
        return Err(CliError::Usage("empty kappa list".into()));
    }
    if a.points < 2 {
        return Err(CliError::Usage("points must be at least 2".into()));
    }
    let j = positive("J", a.j)?;
    let mut t = Table::new(&["kappa", "p", "epsilon", "phi", "epsilon_xxx", "phi_xxx", "epsilon_hs"]);
    t.meta("J", j);
    t.meta("kappa", a.kappa.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(";"));
    for &k in &a.kappa {
        let ctx = DispersionContext::new(positive("kappa", k)?, j)?;
        for i in 1..a.points {
            let p = 2.0 * PI * i as f64 / a.points as f64;
            let e = ctx.epsilon(C64::new(p, 0.0))?.re;
            let f = ctx.phi(C64::new(p, 0.0))?.re;
            t.rows.push(vec![
                Cell::F(k),
                Cell::F(p),
                Cell::F(e),
                Cell::F(f),
                Cell::F(j * (1.0 - p.cos())),
                Cell::F(0.5 / (0.5 * p).tan()),
                Cell::F(j * p * (2.0 * PI - p) / 4.0),
            ]);
        }
    }
    Ok(t)
}

fn temperature_grid(a: &FreeEnergyArgs) -> Result<Vec<f64>, CliError> {
    if !a.temps.is_empty() {
        return a.temps.iter().map(|&t| positive("T", t)).collect();
    }
    let (lo, hi) = (positive("t-min", a.t_min)?, positive("t-max", a.t_max)?);
    if a.t_count == 0 || hi < lo {
        return Err(CliError::Usage("empty temperature range".into()));
    }
    if a.t_count == 1 {
        return Ok(vec![lo]);
    }
    let r = (hi / lo).ln() / (a.t_count - 1) as f64;
    Ok((0..a.t_count).map(|i| lo * (r * i as f64).exp()).collect())
}

/// Returns the table and whether any temperature failed.
pub fn cmd_free_energy(a: &FreeEnergyArgs) -> Result<(Table, bool), CliError> {
    let j = positive("J", a.j)?;
    let temps = temperature_grid(a)?;
    let grid = RapidityGrid::new(positive("lambda", a.lambda)?, a.n_points)?;
    let opt = TbaOptions { q_cap: a.q_cap.clamp(1, tba::Q_CAP), ..TbaOptions::default() };
    let ctx = match a.kappa {
        Some(k) => Some(DispersionContext::new(positive("kappa", k)?, j)?),
        None => None,
    };
    let disp = match &ctx {
        Some(c) => Dispersion::Elliptic(c),
        None => Dispersion::Xxx { j },
    };
    let drive = tba::adapted_driving_terms(&grid, disp, &opt, a.cache.as_deref())?;
    let mut cols = vec!["T", "f", "f_offset", "q_max", "residual", "iterations", "stable", "error"];
    if a.exact {
        cols.extend(["f_exact", "l_exact", "exact_stabilized"]);
    }
    let mut t = Table::new(&cols);
    t.meta("kappa", a.kappa.map_or("xxx".to_string(), |k| k.to_string()));
    t.meta("J", j);
    t.meta("lambda", drive.grid.lambda());
    t.meta("n_points", drive.grid.n_points());
    t.meta("q_cap", opt.q_cap);
    let mut failed = false;
    for &temp in &temps {
        let mut row = match tba::solve_with_terms(temp, j, &drive, &opt) {
            Ok((sol, fe)) => vec![
                Cell::F(temp),
                Cell::F(fe.f),
                Cell::F(fe.f + temp * 2f64.ln()),
                Cell::I(sol.q_max as i64),
                Cell::F(sol.residual),
                Cell::I(sol.iterations as i64),
                Cell::B(sol.stable),
                Cell::Null,
            ],
            Err(e) => {
                failed = true;
                let mut r = vec![Cell::F(temp)];
                r.extend(std::iter::repeat_n(Cell::Null, 6));
                r.push(Cell::S(e.to_string()));
                r
            }
        };
        if a.exact {
            let kind = a.kappa.map_or(PotentialKind::Xxx, PotentialKind::Elliptic);
            match exactdiag::stabilized_free_energy(kind, j, temp, 0.02, 4, a.l_max) {
                Ok(s) => row.extend([Cell::F(s.f), Cell::I(s.l_used as i64), Cell::B(s.stabilized)]),
                Err(e) => {
                    failed = true;
                    row.extend([Cell::Null, Cell::Null, Cell::Null]);
                    row[7] = Cell::S(e.to_string());
                }
            }
        }
        t.rows.push(row);
    }
    Ok((t, failed))
}

fn potential_kind(kind: KindArg, kappa: Option<f64>) -> Result<PotentialKind, CliError> {
    let need = || kappa.ok_or_else(|| CliError::Usage("this potential needs --kappa".into()));
    Ok(match kind {
        KindArg::Xxx => PotentialKind::Xxx,
        KindArg::Hs => PotentialKind::Hs,
        KindArg::Elliptic => PotentialKind::Elliptic(need()?),
        KindArg::Hyperbolic => PotentialKind::Hyperbolic(need()?),
        KindArg::HyperbolicOpen => PotentialKind::HyperbolicOpen(need()?),
    })
}

pub fn cmd_exact_diag(a: &ExactDiagArgs) -> Result<Table, CliError> {
    let kind = potential_kind(a.kind, a.kappa)?;
    let j = positive("J", a.j)?;
    let temps: Vec<f64> = a.temps.iter().map(|&t| positive("T", t)).collect::<Result<_, _>>()?;
    let mut t = Table::new(&["kind", "kappa", "L", "T", "f", "stabilized"]);
    t.meta("kind", kind.name());
    t.meta("kappa", kind.kappa().map_or("none".into(), |k| k.to_string()));
    t.meta("J", j);
    let kappa_cell = kind.kappa().map_or(Cell::Null, Cell::F);
    match a.l {
        Some(l) => {
            let spec = PotentialSpec::new(kind, l, j)?;
            let sectors = exactdiag::full_spectrum(&spec)?;
            if let Some(p) = &a.dump {
                exactdiag::write_spectrum_dump(p, &spec, &sectors)?;
            }
            t.meta("L", l);
            for &temp in &temps {
                let f = exactdiag::free_energy_from_spectrum(&sectors, l, temp);
                t.rows.push(vec![Cell::S(kind.name().into()), kappa_cell.clone(), Cell::I(l as i64), Cell::F(temp), Cell::F(f), Cell::Null]);
            }
        }
        None => {
            if a.dump.is_some() {
                return Err(CliError::Usage("--dump needs a fixed --l".into()));
            }
            t.meta("tol", a.tol);
            for &temp in &temps {
                let s = exactdiag::stabilized_free_energy(kind, j, temp, a.tol, a.l_min, a.l_max)?;
                t.rows.push(vec![
                    Cell::S(kind.name().into()),
                    kappa_cell.clone(),
                    Cell::I(s.l_used as i64),
                    Cell::F(temp),
                    Cell::F(s.f),
                    Cell::B(s.stabilized),
                ]);
            }
        }
    }
    Ok(t)
}

/// Ladder entries `(θ_R + (θ_I − j + 1)i, n)` for every sign, level by
/// level with pluses before minuses.
pub fn ladder_entries(
    cfg: &SignConfiguration,
    theta_r: f64,
    theta_i: f64,
    regions: &[i64],
) -> Result<Vec<(C64, i64)>, CliError> {
    let n = cfg.num_signs();
    if regions.len() != n {
        return Err(CliError::Usage(format!("{n} signs need {n} regions, got {}", regions.len())));
    }
    let mut out = Vec::with_capacity(n);
    let mut it = regions.iter();
    for (lvl, &(p, m)) in cfg.levels().iter().enumerate() {
        let theta = C64::new(theta_r, theta_i - lvl as f64);
        for _ in 0..p + m {
            out.push((theta, *it.next().unwrap()));
        }
    }
    Ok(out)
}

pub fn cmd_classify(a: &ClassifyArgs) -> Result<Table, CliError> {
    let cfg: SignConfiguration = a.configuration.parse()?;
    let sys = stringfeas::build_rate_system(&cfg);
    let opt = FeasOptions { seed: a.seed, ..FeasOptions::default() };
    let verdict = stringfeas::decide_with(&sys, &opt);
    let mut t = Table::new(&["configuration", "status", "signs", "contains_ex1", "energy", "total_momentum"]);
    t.meta("seed", a.seed);
    let mut extra = Map::new();
    extra.insert("configuration".into(), json!(cfg.to_string()));
    extra.insert("verdict".into(), serde_json::to_value(&verdict).map_err(|e| CliError::Io(e.to_string()))?);
    let (mut energy, mut momentum) = (Cell::Null, Cell::Null);
    if let Some(k) = a.kappa {
        let (tr, ti) = match (a.theta_r, a.theta_i) {
            (Some(r), Some(i)) => (r, i),
            _ => return Err(CliError::Usage("momenta need --theta-r and --theta-i".into())),
        };
        let ctx = DispersionContext::new(positive("kappa", k)?, positive("J", a.j)?)?;
        let entries = ladder_entries(&cfg, tr, ti, &a.regions)?;
        let sol = strings::build_solution(&entries, &ctx)?;
        let e = sol.total_energy(&ctx)?;
        let p = sol.total_momentum();
        t.meta("kappa", k);
        t.meta("theta_r", tr);
        t.meta("theta_i", ti);
        energy = Cell::F(e.re);
        momentum = Cell::F(crate::dispersion::to_strip(p).re);
        let momenta: Vec<Value> = sol
            .momenta
            .iter()
            .zip(&sol.regions)
            .map(|(m, r)| json!({"re": m.re, "im": m.im, "region": r}))
            .collect();
        extra.insert("momenta".into(), Value::Array(momenta));
        extra.insert("energy".into(), json!({"re": e.re, "im": e.im}));
    }
    t.rows.push(vec![
        Cell::S(cfg.to_string()),
        Cell::S(format!("{:?}", verdict.status)),
        Cell::I(cfg.num_signs() as i64),
        Cell::B(cfg.contains_ex1()),
        energy,
        momentum,
    ]);
    t.extra = Some(Value::Object(extra));
    Ok(t)
}

fn parse_thetas(s: &str) -> Result<Vec<C64>, CliError> {
    s.split(';')
        .filter(|x| !x.trim().is_empty())
        .map(|pair| {
            let (re, im) = pair.split_once(',').unwrap_or((pair, "0"));
            let p = |v: &str| v.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("cannot parse theta {pair:?}")));
            Ok(C64::new(p(re)?, p(im)?))
        })
        .collect()
}

pub fn cmd_invert_phi(a: &InvertPhiArgs) -> Result<Table, CliError> {
    let ctx = DispersionContext::new(positive("kappa", a.kappa)?, 1.0)?;
    let thetas = parse_thetas(&a.theta)?;
    if thetas.is_empty() {
        return Err(CliError::Usage("no theta given".into()));
    }
    let mut t = Table::new(&["theta_re", "theta_im", "region", "p_re", "p_im", "residual"]);
    t.meta("kappa", a.kappa);
    for th in thetas {
        let p = ctx.invert_phi_region(th, a.region)?;
        let r = (ctx.phi(p)? - th).norm();
        t.rows.push(vec![Cell::F(th.re), Cell::F(th.im), Cell::I(a.region), Cell::F(p.re), Cell::F(p.im), Cell::F(r)]);
    }
    Ok(t)
}

struct Check {
    name: &'static str,
    status: &'static str,
    residual: f64,
    detail: String,
}

fn check(name: &'static str, residual: f64, tol: f64, detail: String) -> Check {
    let status = if residual <= tol { "PASS" } else { "FAIL" };
    Check { name, status, residual, detail }
}

fn skip(name: &'static str, detail: String) -> Check {
    Check { name, status: "SKIP", residual: f64::NAN, detail }
}

/// Returns the table and whether any check failed.
pub fn cmd_selftest(a: &SelftestArgs) -> Result<(Table, bool), CliError> {
    let kappa = positive("kappa", a.kappa)?;
    let mut checks = Vec::new();
    if let Some(p) = &a.cache {
        // header and size only; the request parameters are not known here
        let bytes = std::fs::read(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        if bytes.len() < 12 || &bytes[..8] != b"INZTBADT" {
            return Err(CliError::Io(format!("{}: not a driving-term cache", p.display())));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != 1 {
            return Err(CliError::Io(format!("{}: cache version {version}, expected 1", p.display())));
        }
        checks.push(check("cache header", 0.0, 0.0, p.display().to_string()));
    }
    let lat = Lattice::new(1.0, PI).map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut quasi = 0.0f64;
    for i in 0..10 {
        let z = C64::new(0.37 - 0.07 * i as f64, 0.21 + 0.19 * i as f64);
        let (z0, _) = lat.zeta_wp(z).map_err(|e| CliError::Numerical(e.to_string()))?;
        let (z1, _) = lat.zeta_wp(z + 1.0).map_err(|e| CliError::Numerical(e.to_string()))?;
        quasi = quasi.max((z1 - z0 - 2.0 * lat.eta1()).norm());
    }
    checks.push(check("elliptic quasi-periodicity", quasi, 1e-12, "lattice (1, i pi)".into()));
    checks.push(check("Legendre relation", lat.legendre_residual(), 1e-12, String::new()));
    let kr = tba::ysystem_residual_checks(&RapidityGrid::new(10.0, 64)?, 10, tba::Q_CAP);
    let worst = kr.kernel_residuals.iter().map(|r| r.1).fold(0.0, f64::max);
    checks.push(check("kernel identity P <= 10", worst, 1e-8, String::new()));
    checks.push(check(
        "constant Y-system M <= 35",
        kr.constant_failures.len() as f64,
        0.0,
        format!("{} failing rows", kr.constant_failures.len()),
    ));
    match DispersionContext::new(kappa, 1.0) {
        Ok(ctx) if kappa <= 50.0 => {
            let mut worst = 0.0f64;
            let mut failures = 0;
            for a in 0..8 {
                for b in 0..8 {
                    let th = C64::new(-4.0 + a as f64, -1.75 + 0.5 * b as f64);
                    match ctx.invert_phi_fundamental(th) {
                        Ok(p) => worst = worst.max((ctx.phi(p)? - th).norm()),
                        Err(_) => failures += 1,
                    }
                }
            }
            let r = if failures > 0 { f64::INFINITY } else { worst };
            checks.push(check("phi inversion round trip", r, 1e-10, format!("{failures} failures")));
            let ps: Vec<f64> = (1..=10).map(|i| PI * i as f64 / 11.0).collect();
            match strings::binding_margins(10, &ps, &ctx) {
                Ok(m) => {
                    let w = m.iter().map(|x| x.2).fold(f64::INFINITY, f64::min);
                    checks.push(check("binding inequality M <= 10", (-w).max(0.0), 1e-12, format!("min margin {w:e}")));
                }
                Err(e) => checks.push(check("binding inequality M <= 10", f64::INFINITY, 0.0, e.to_string())),
            }
            let grid = RapidityGrid::new(30.0, 256)?;
            let d = tba::driving_terms(10, &grid, Dispersion::Elliptic(&ctx))?;
            let sol = tba::picard_solve(1e4, 1.0, &d, &TbaOptions::default(), None)?;
            let dev = sol
                .y
                .iter()
                .enumerate()
                .flat_map(|(q, r)| {
                    let y0 = ((q + 1) * (q + 3)) as f64;
                    r.iter().map(move |y| (y / y0 - 1.0).abs())
                })
                .fold(0.0, f64::max);
            checks.push(check("high-T Y constants", dev, 1e-3, "T = 1e4 J".into()));
        }
        Ok(_) => {
            let why = format!("kappa = {kappa} > 50: strings already at the XXX limit, elliptic checks skipped");
            checks.push(skip("phi inversion round trip", why.clone()));
            checks.push(skip("binding inequality M <= 10", why.clone()));
            checks.push(skip("high-T Y constants", why));
        }
        Err(e) => {
            let why = format!("dispersion setup failed: {e}");
            checks.push(skip("phi inversion round trip", why.clone()));
            checks.push(skip("binding inequality M <= 10", why.clone()));
            checks.push(skip("high-T Y constants", why));
        }
    }
    let mut t = Table::new(&["check", "status", "residual", "detail"]);
    t.meta("kappa", kappa);
    let failed = checks.iter().any(|c| c.status == "FAIL");
    for c in checks {
        t.rows.push(vec![Cell::S(c.name.into()), Cell::S(c.status.into()), Cell::F(c.residual), Cell::S(c.detail)]);
    }
    Ok((t, failed))
}

/// Run one invocation; returns the process exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<i32, CliError> {
    let (table, failed) = match &cli.command {
        Command::Dispersion(a) => (cmd_dispersion(a)?, false),
        Command::FreeEnergy(a) => cmd_free_energy(a)?,
        Command::ExactDiag(a) => (cmd_exact_diag(a)?, false),
        Command::Classify(a) => (cmd_classify(a)?, false),
        Command::InvertPhi(a) => (cmd_invert_phi(a)?, false),
        Command::Selftest(a) => cmd_selftest(a)?,
    };
    table.write(cli.format, cli.output.as_deref())?;
    Ok(if failed { 2 } else { 0 })
}
