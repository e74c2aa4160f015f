use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};

use qep::lattice::{count_measurements, Boundary, Strategy};
use qep::locc::{self, PairState};
use qep::percolation::{self, Model, PercStats, TrialConfig, DEFAULT_SEED};
use qep::qstate::SchmidtVector;
use qep::swap;
use qep::verify;

/// Largest oracle deviation accepted by `swap --verify`.
const SWAP_VERIFY_TOL: f64 = 1e-9;

#[derive(Parser, Debug)]
#[command(name = "qep", version, about = "Entanglement percolation via GHZ-basis swapping on a honeycomb lattice")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct Common {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Csv, global = true)]
    format: Format,
    /// Write output here instead of stdout; a run manifest is written next to it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed for all randomness.
    #[arg(long, default_value_t = DEFAULT_SEED, global = true)]
    seed: u64,
    /// Worker threads for Monte Carlo trials. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum StrategyArg {
    Cep,
    Qep,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
enum LatticeArg {
    TriSite,
    HexBond,
    SquareSite,
    QepSite,
}

impl From<LatticeArg> for Model {
    fn from(l: LatticeArg) -> Self {
        match l {
            LatticeArg::TriSite => Model::TriSite,
            LatticeArg::HexBond => Model::HexBond,
            LatticeArg::SquareSite => Model::SquareSite,
            LatticeArg::QepSite => Model::QepSite,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum BoundaryArg {
    Open,
    Wrapping,
}

impl From<BoundaryArg> for Boundary {
    fn from(b: BoundaryArg) -> Self {
        match b {
            BoundaryArg::Open => Boundary::Open,
            BoundaryArg::Wrapping => Boundary::Wrapping,
        }
    }
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
enum Command {
    /// Singlet conversion probability, or conversion between two Schmidt vectors.
    Scp {
        #[arg(long, value_parser = parse_phi1, conflicts_with_all = ["source", "target"])]
        phi1: Option<f64>,
        /// Source Schmidt coefficients (squared), comma separated.
        #[arg(long, value_delimiter = ',', requires = "target")]
        source: Option<Vec<f64>>,
        /// Target Schmidt coefficients (squared), comma separated.
        #[arg(long, value_delimiter = ',', requires = "source")]
        target: Option<Vec<f64>>,
    },
    /// GHZ-basis swapping outcome table for three identical pairs.
    Swap {
        #[arg(long, value_parser = parse_phi1_positive)]
        phi1: f64,
        /// Compare against the statevector oracle.
        #[arg(long)]
        verify: bool,
    },
    /// Percolation threshold from the crossing of two sizes.
    Threshold {
        #[arg(long, value_enum)]
        lattice: LatticeArg,
        #[arg(long, value_delimiter = ',', default_values_t = [64u32, 128])]
        sizes: Vec<u32>,
        #[arg(long, default_value_t = 20_000)]
        trials: u32,
        /// Required half-width of the estimate.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// Search interval, `lo,hi`; defaults per lattice.
        #[arg(long, value_delimiter = ',')]
        bracket: Option<Vec<f64>>,
    },
    /// Entangle two far nodes: percolation on the swapped lattice at the
    /// average conversion probability (or a raw lattice at `--p`).
    Percolate {
        #[arg(long, value_parser = parse_phi1, required_unless_present = "p")]
        phi1: Option<f64>,
        /// Occupation probability for a raw lattice (with `--lattice`).
        #[arg(long, requires = "lattice", conflicts_with = "phi1")]
        p: Option<f64>,
        #[arg(long, value_enum)]
        lattice: Option<LatticeArg>,
        #[arg(long = "L", default_value_t = 64)]
        size: u32,
        #[arg(long, default_value_t = 2_000)]
        trials: u32,
        #[arg(long, value_enum, default_value_t = BoundaryArg::Wrapping)]
        boundary: BoundaryArg,
    },
    /// Measurement counts for entangling opposite corners of an l × l box.
    Count {
        #[arg(long = "l")]
        l: u32,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
    },
    /// Run every statevector oracle check.
    Verify,
}

fn parse_phi1(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=0.5).contains(&v) {
        Ok(v)
    } else {
        Err(format!("phi1 must lie in [0, 0.5], got {v}"))
    }
}

fn parse_phi1_positive(s: &str) -> std::result::Result<f64, String> {
    let v = parse_phi1(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err("phi1 must be positive".into())
    }
}

#[derive(Debug, Clone)]
enum Cell {
    Str(String),
    Int(i64),
    UInt(u64),
    Float(f64),
    Bool(bool),
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Str(s.to_string())
    }
}
impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Str(s)
    }
}
impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}
impl From<u32> for Cell {
    fn from(x: u32) -> Self {
        Cell::Int(x as i64)
    }
}
impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::UInt(x)
    }
}
impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}
impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}

/// `%.12g`: 12 significant digits, trailing zeros dropped.
fn fmt_g(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{:.11e}", x);
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..12).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x))
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Str(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::UInt(u) => u.to_string(),
            Cell::Float(x) => fmt_g(*x),
            Cell::Bool(b) => b.to_string(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Str(s) => json!(s),
            Cell::Int(i) => json!(i),
            Cell::UInt(u) => json!(u),
            Cell::Float(x) => fmt_g(*x).parse::<f64>().map_or(Value::Null, |v| json!(v)),
            Cell::Bool(b) => json!(b),
        }
    }
}

/// One header plus rows, rendered as CSV or a JSON array of objects.
#[derive(Debug, Default)]
struct Table {
    columns: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(&self.columns)?;
                for row in &self.rows {
                    w.write_record(row.iter().map(Cell::text))?;
                }
                Ok(String::from_utf8(w.into_inner()?)?)
            }
            Format::Json => {
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|row| {
                        let obj: Map<String, Value> = self
                            .columns
                            .iter()
                            .zip(row)
                            .map(|(c, v)| (c.to_string(), v.json()))
                            .collect();
                        Value::Object(obj)
                    })
                    .collect();
                Ok(serde_json::to_string_pretty(&rows)? + "\n")
            }
        }
    }
}

const PERC_COLUMNS: [&str; 9] = [
    "lattice", "L", "p", "trials", "spanning_fraction", "stderr", "theta_hat", "theta_stderr", "seed",
];

fn perc_row(s: &PercStats) -> Vec<Cell> {
    vec![
        s.lattice.clone().into(),
        s.size.into(),
        s.p.into(),
        s.trials.into(),
        s.spanning_fraction.into(),
        s.stderr.into(),
        s.theta_hat.into(),
        s.theta_stderr.into(),
        s.seed.into(),
    ]
}

/// A finished command: what to print and whether its gates passed.
struct Outcome {
    table: Table,
    passed: bool,
    notes: Vec<String>,
}

impl Outcome {
    fn ok(table: Table) -> Self {
        Self {
            table,
            passed: true,
            notes: Vec::new(),
        }
    }
}

fn cmd_scp(phi1: Option<f64>, source: Option<Vec<f64>>, target: Option<Vec<f64>>) -> Result<Outcome> {
    match (phi1, source, target) {
        (Some(phi1), None, None) => {
            let pair = PairState::from_phi1(phi1)?;
            let mut t = Table::new(&["phi0", "phi1", "scp"]);
            t.push(vec![pair.phi0().into(), pair.phi1().into(), locc::scp(pair).into()]);
            Ok(Outcome::ok(t))
        }
        (None, Some(source), Some(target)) => {
            let s = SchmidtVector::new(source).context("source")?;
            let t_vec = SchmidtVector::new(target).context("target")?;
            let mut t = Table::new(&["source", "target", "majorizes", "probability"]);
            let join = |v: &SchmidtVector| {
                v.coefficients().iter().map(|&x| fmt_g(x)).collect::<Vec<_>>().join(";")
            };
            t.push(vec![
                join(&s).into(),
                join(&t_vec).into(),
                locc::majorizes(&s, &t_vec).into(),
                locc::max_conversion_probability(&s, &t_vec).into(),
            ]);
            Ok(Outcome::ok(t))
        }
        _ => bail!("give either --phi1 or both --source and --target"),
    }
}

fn cmd_swap(phi1: f64, verify: bool) -> Result<Outcome> {
    let pair = PairState::from_phi1(phi1)?;
    let table = swap::ghz_swap(pair);
    let mut t = Table::new(&["outcome", "probability", "scp"]);
    for o in &table.outcomes {
        t.push(vec![o.label.clone().into(), o.probability.into(), o.scp.into()]);
    }
    t.push(vec!["average".into(), table.total_probability().into(), table.average_scp.into()]);
    let mut out = Outcome::ok(t);
    if verify {
        let oracle = swap::ghz_swap_oracle(pair)?;
        let dev = swap::deviation(&table, &oracle)?;
        out.passed = dev.max() <= SWAP_VERIFY_TOL;
        out.notes.push(format!(
            "oracle max deviation: probability {}, amplitude {} (limit {})",
            fmt_g(dev.probability),
            fmt_g(dev.amplitude),
            fmt_g(SWAP_VERIFY_TOL)
        ));
    }
    Ok(out)
}

fn trial_config(common: &Common, size: u32, trials: u32) -> TrialConfig {
    TrialConfig::new(size, trials, common.seed).with_threads(common.threads)
}

fn cmd_threshold(common: &Common, lattice: LatticeArg, sizes: &[u32], trials: u32, tol: f64, bracket: Option<Vec<f64>>) -> Result<Outcome> {
    let model = Model::from(lattice);
    let bracket = match bracket.as_deref() {
        Some([lo, hi]) => (*lo, *hi),
        Some(_) => bail!("--bracket takes two values"),
        None => model.default_bracket(),
    };
    let cfg = trial_config(common, 0, trials);
    let est = percolation::estimate_threshold(model, sizes, &cfg, bracket, tol)?;
    let mut t = Table::new(&[
        "lattice", "L_small", "L_large", "trials", "p_c", "half_width", "stat_error", "iterations", "converged", "seed",
    ]);
    t.push(vec![
        est.lattice.clone().into(),
        est.sizes[0].into(),
        est.sizes[1].into(),
        est.trials.into(),
        est.estimate.into(),
        est.half_width.into(),
        est.stat_error.into(),
        est.iterations.into(),
        est.converged.into(),
        est.seed.into(),
    ]);
    let mut out = Outcome::ok(t);
    out.passed = est.converged;
    if !est.converged {
        out.notes.push(format!("tolerance {} not met; partial result above", fmt_g(tol)));
    }
    Ok(out)
}

fn cmd_percolate(
    common: &Common,
    phi1: Option<f64>,
    p: Option<f64>,
    lattice: Option<LatticeArg>,
    size: u32,
    trials: u32,
    boundary: BoundaryArg,
) -> Result<Outcome> {
    let cfg = trial_config(common, size, trials).with_boundary(boundary.into());
    let stats = match (phi1, p) {
        (Some(phi1), None) => {
            if lattice.is_some_and(|l| l != LatticeArg::QepSite) {
                bail!("--phi1 percolates the swapped lattice; use --p with --lattice for others");
            }
            percolation::end_to_end(PairState::from_phi1(phi1)?, &cfg)?
        }
        (None, Some(p)) => percolation::spanning_probability(lattice.expect("clap requires").into(), &cfg, p)?,
        _ => bail!("give either --phi1 or --p"),
    };
    let mut t = Table::new(&PERC_COLUMNS);
    t.push(perc_row(&stats));
    Ok(Outcome::ok(t))
}

fn cmd_count(l: u32, strategy: StrategyArg) -> Result<Outcome> {
    let s = match strategy {
        StrategyArg::Cep => Strategy::Cep,
        StrategyArg::Qep => Strategy::Qep,
    };
    let c = count_measurements(l, s)?;
    let l2 = (l as f64) * (l as f64);
    let mut t = Table::new(&[
        "strategy", "l", "single_qubit", "two_qubit", "three_qubit", "single_per_l2", "three_per_l2",
    ]);
    t.push(vec![
        match strategy {
            StrategyArg::Cep => "cep",
            StrategyArg::Qep => "qep",
        }
        .into(),
        c.l.into(),
        c.single_qubit.into(),
        c.two_qubit.into(),
        c.three_qubit.into(),
        (c.single_qubit as f64 / l2).into(),
        (c.three_qubit as f64 / l2).into(),
    ]);
    Ok(Outcome::ok(t))
}

fn cmd_verify() -> Outcome {
    let checks = verify::run_all();
    let mut t = Table::new(&["check", "passed", "value", "tolerance"]);
    for c in &checks {
        t.push(vec![c.name.into(), c.passed.into(), c.value.into(), c.tolerance.into()]);
    }
    Outcome {
        table: t,
        passed: checks.iter().all(|c| c.passed),
        notes: Vec::new(),
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    subcommand: &'a Command,
    format: Format,
    master_seed: u64,
    threads: Option<usize>,
    version: &'static str,
    argv: Vec<String>,
    outputs: Vec<String>,
    passed: bool,
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn run(cli: &Cli) -> Result<Outcome> {
    match cli.command.clone() {
        Command::Scp { phi1, source, target } => cmd_scp(phi1, source, target),
        Command::Swap { phi1, verify } => cmd_swap(phi1, verify),
        Command::Threshold { lattice, sizes, trials, tol, bracket } => {
            cmd_threshold(&cli.common, lattice, &sizes, trials, tol, bracket)
        }
        Command::Percolate { phi1, p, lattice, size, trials, boundary } => {
            cmd_percolate(&cli.common, phi1, p, lattice, size, trials, boundary)
        }
        Command::Count { l, strategy } => cmd_count(l, strategy),
        Command::Verify => Ok(cmd_verify()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.common.threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    let outcome = match run(&cli) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let text = match outcome.table.render(cli.common.format) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let written = match &cli.common.out {
        Some(path) => {
            let manifest = RunManifest {
                subcommand: &cli.command,
                format: cli.common.format,
                master_seed: cli.common.seed,
                threads: cli.common.threads,
                version: env!("CARGO_PKG_VERSION"),
                argv: std::env::args().collect(),
                outputs: vec![path.display().to_string()],
                passed: outcome.passed,
            };
            fs::write(path, &text)
                .and_then(|_| {
                    let m = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?;
                    fs::write(manifest_path(path), m + "\n")
                })
                .with_context(|| format!("writing {}", path.display()))
        }
        None => io::stdout().write_all(text.as_bytes()).context("writing stdout"),
    };
    if let Err(e) = written {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    for note in &outcome.notes {
        eprintln!("{note}");
    }
    if outcome.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
