//! Command-line front end for `idsq`.
//!
//! Every subcommand is a `cmd_*` function from a parsed [`Cli`] to the text
//! it prints, so the binary is a thin shell around [`run`].

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use num_rational::BigRational;
use num_traits::One;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use serde_json::{json, Value};

use idsq::coefficients::{
    asymptotic_check, coefficient_grid, numerator_coeffs, p_jk, params, q_jk, Mode,
};
use idsq::critical_point::estimate_critical_point;
use idsq::id_analyzer::{cutoff_set, id_verdict, tail_mass, TailMass, Verdict, VerdictReport};
use idsq::matrix_criteria::{bapat_id_criterion, ek_criterion, SquareMatrix};
use idsq::model::{
    case_constants, laplace_squared_shifted, laplace_squared_shifted_f64, mc_laplace_estimate,
    normalize, CanonicalProblem, EvaluationPoint, GaussianProblem, ShiftCase,
    DEFAULT_PRECISION_BITS,
};
use idsq::rational::{format_rational, parse_rational, rat, serde_rational};
use idsq::series_oracle::oracle_pq;

/// Failure of a command, split by exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// Bad flags, malformed input or an unmet precondition (exit 2).
    Invalid(String),
    /// I/O or serialization failure (exit 1).
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "invalid input: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<idsq::Error> for CliError {
    fn from(e: idsq::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Parser)]
#[command(
    name = "idsq",
    version,
    about = "Infinite divisibility of squared shifted bivariate Gaussian vectors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub cfg: RunConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Normalization, case constants and matrix criteria.
    Classify,
    /// P, Q, R over the cutoff (or `--order` triangle) at `--t`.
    Coeffs,
    /// Positivity scans along the ladder and the resulting verdict.
    Scan,
    /// Per-t maximal feasible shift and the critical-point bracket.
    Critical,
    /// Closed forms against brute-force series expansion, all three cases.
    OracleCheck,
    /// Exact algebraic identities on random rational parameters.
    Identities,
    /// Laplace transform at a canonical point, optionally with Monte Carlo.
    Laplace,
}

#[derive(Debug, Clone, Parser)]
pub struct RunConfig {
    /// Problem as inline JSON or a path to a JSON file:
    /// `{"cov":[["4","1"],["1","1/2"]],"shift":["1","1"]}`.
    #[arg(long, global = true)]
    pub input: Option<String>,
    /// Covariance `g11,g12,g22` (or all four entries row by row).
    #[arg(long, global = true, value_parser = parse_rat, value_delimiter = ',', allow_hyphen_values = true)]
    pub cov: Option<Vec<BigRational>>,
    /// Shift direction `c1,c2`.
    #[arg(long, global = true, value_parser = parse_rat, value_delimiter = ',', allow_hyphen_values = true)]
    pub shift: Option<Vec<BigRational>>,
    /// Shift multiplier.
    #[arg(long, global = true, default_value = "1", value_parser = parse_rat, allow_hyphen_values = true)]
    pub alpha: BigRational,
    /// Single `t` for `coeffs` and `oracle-check`.
    #[arg(long, global = true, default_value = "10", value_parser = parse_rat)]
    pub t: BigRational,
    #[arg(long = "t-ladder", global = true, default_value = "16,32,64,128", value_parser = parse_rat, value_delimiter = ',')]
    pub t_ladder: Vec<BigRational>,
    /// Cutoff constant.
    #[arg(long = "B", global = true, default_value = "1/2", value_parser = parse_rat)]
    pub b: BigRational,
    /// Outer cutoff constant for the tail diagnostic.
    #[arg(long = "B-ext", global = true, default_value = "1", value_parser = parse_rat)]
    pub b_ext: BigRational,
    #[arg(long, global = true, default_value = "float", value_parser = parse_mode)]
    pub mode: Mode,
    /// Working precision of the Laplace transform, in bits.
    #[arg(long, global = true, env = "IDSQ_PRECISION_BITS", default_value_t = DEFAULT_PRECISION_BITS)]
    pub precision: usize,
    #[arg(long = "drift-tol", global = true, default_value_t = idsq::critical_point::DEFAULT_DRIFT_TOL)]
    pub drift_tol: f64,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value = "json")]
    pub format: Format,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Longest violation list kept in `scan` output.
    #[arg(long = "max-violations", global = true, default_value_t = 1000)]
    pub max_violations: usize,
    /// Use the triangle `j + k <= order` instead of the cutoff.
    #[arg(long, global = true)]
    pub order: Option<usize>,
    /// Random instances for `identities`.
    #[arg(long, global = true, default_value_t = 100)]
    pub count: usize,
    /// Canonical Laplace argument `l1,l2`.
    #[arg(long, global = true, default_value = "1,1", value_parser = parse_rat, value_delimiter = ',')]
    pub lambda: Vec<BigRational>,
    /// Monte Carlo sample count for `laplace` (0 disables).
    #[arg(long, global = true, default_value_t = 0)]
    pub samples: u64,
}

fn parse_rat(s: &str) -> Result<BigRational, String> {
    parse_rational(s).map_err(|e| e.to_string())
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: idsq::Error| e.to_string())
}

fn internal<E: fmt::Display>(e: E) -> CliError {
    CliError::Internal(e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(internal)?;
    s.push('\n');
    Ok(s)
}

fn json_only(cfg: &RunConfig, what: &str) -> CliResult<()> {
    match cfg.format {
        Format::Json => Ok(()),
        Format::Csv => Err(CliError::Invalid(format!("{what} has no CSV output"))),
    }
}

fn csv_text(write: impl FnOnce(&mut Vec<u8>) -> idsq::Result<()>) -> CliResult<String> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(internal)?;
    String::from_utf8(buf).map_err(internal)
}

/// Reads the problem from `--input` or from `--cov` and `--shift`.
pub fn load_problem(cfg: &RunConfig) -> CliResult<GaussianProblem> {
    if let Some(input) = &cfg.input {
        let text = if input.trim_start().starts_with('{') {
            input.clone()
        } else {
            std::fs::read_to_string(input)
                .map_err(|e| CliError::Invalid(format!("cannot read {input}: {e}")))?
        };
        return Ok(GaussianProblem::from_json(&text)?);
    }
    let (Some(cov), Some(shift)) = (&cfg.cov, &cfg.shift) else {
        return Err(CliError::Invalid(
            "give --input or both --cov and --shift".into(),
        ));
    };
    let (g11, g12, g22) = match cov.as_slice() {
        [g11, g12, g22] => (g11, g12, g22),
        [g11, g12, g21, g22] if g12 == g21 => (g11, g12, g22),
        [_, _, _, _] => return Err(CliError::Invalid("covariance must be symmetric".into())),
        _ => return Err(CliError::Invalid("--cov takes 3 or 4 entries".into())),
    };
    let [c1, c2] = shift.as_slice() else {
        return Err(CliError::Invalid("--shift takes 2 entries".into()));
    };
    Ok(GaussianProblem::new(
        g11.clone(),
        g12.clone(),
        g22.clone(),
        c1.clone(),
        c2.clone(),
    )?)
}

fn problem_json(p: &GaussianProblem) -> CliResult<Value> {
    serde_json::from_str(&p.to_json()).map_err(internal)
}

fn c_sq(cfg: &RunConfig, canon: &CanonicalProblem) -> BigRational {
    &cfg.alpha * &cfg.alpha * &canon.kappa_sq
}

pub fn cmd_classify(cfg: &RunConfig) -> CliResult<String> {
    json_only(cfg, "classify")?;
    let p = load_problem(cfg)?;
    let canon = normalize(&p)?;
    let gamma = SquareMatrix::from_rows(vec![
        vec![p.gamma11.clone(), p.gamma12.clone()],
        vec![p.gamma12.clone(), p.gamma22.clone()],
    ])?;
    let shift = [p.c1.clone(), p.c2.clone()];
    let (bapat, ek) = if canon.degenerate {
        (Value::Null, Value::Null)
    } else {
        let (id, sig) = bapat_id_criterion(&gamma)?;
        let ek = match ek_criterion(&gamma, &shift) {
            Ok(v) => json!(v),
            Err(idsq::Error::ZeroShift) => Value::Null,
            Err(e) => return Err(e.into()),
        };
        (json!({ "id": id, "signature": sig }), ek)
    };
    let constants = if canon.degenerate {
        None
    } else {
        Some(case_constants(&canon)?)
    };
    let out = json!({
        "problem": problem_json(&p)?,
        "det": format_rational(&p.det()),
        "canonical": canon,
        "case_label": canon.case_label,
        "zeta": constants.as_ref().map(|c| format_rational(&c.zeta)),
        "constants": constants,
        "bapat": bapat,
        "ek_criterion": ek,
        "all_alpha": p.all_alpha_condition(),
    });
    to_json(&out)
}

fn triangle(order: usize) -> Vec<(u64, u64)> {
    let n = order as u64;
    (0..=n)
        .flat_map(|j| (0..=n - j).map(move |k| (j, k)))
        .filter(|&c| c != (0, 0))
        .collect()
}

pub fn cmd_coeffs(cfg: &RunConfig) -> CliResult<String> {
    let canon = normalize(&load_problem(cfg)?)?;
    let indices = match cfg.order {
        Some(n) => triangle(n),
        None => cutoff_set(&cfg.t, &cfg.b)?.indices(),
    };
    let grid = coefficient_grid(&canon, &cfg.t, &c_sq(cfg, &canon), &indices, cfg.mode)?;
    match cfg.format {
        Format::Json => to_json(&grid),
        Format::Csv => csv_text(|w| grid.write_csv(w)),
    }
}

#[derive(Serialize)]
struct ScanOutput {
    #[serde(flatten)]
    report: VerdictReport,
    violations_truncated: bool,
    tail: Option<TailMass>,
}

pub fn cmd_scan(cfg: &RunConfig) -> CliResult<String> {
    let problem = load_problem(cfg)?;
    let mut report = id_verdict(&problem, &cfg.alpha, &cfg.t_ladder, &cfg.b, cfg.mode)?;
    let tail = match report.verdict {
        Verdict::Degenerate | Verdict::IDForAllAlpha => None,
        _ => {
            let canon = normalize(&problem)?;
            let top = cfg.t_ladder.last().expect("validated ladder is nonempty");
            Some(tail_mass(
                &canon,
                &c_sq(cfg, &canon),
                top,
                &cfg.b,
                &cfg.b_ext,
            )?)
        }
    };
    let violations_truncated = report.violations.len() > cfg.max_violations;
    report.violations.truncate(cfg.max_violations);
    match cfg.format {
        Format::Json => to_json(&ScanOutput {
            report,
            violations_truncated,
            tail,
        }),
        Format::Csv => {
            let top = report
                .ladder
                .last()
                .map(format_rational)
                .unwrap_or_default();
            let mut s = String::from("t,j,k,R\n");
            for v in &report.violations {
                s.push_str(&format!(
                    "{top},{},{},{}\n",
                    v.j,
                    v.k,
                    idsq::rational::format_f64(v.value)
                ));
            }
            Ok(s)
        }
    }
}

pub fn cmd_critical(cfg: &RunConfig) -> CliResult<String> {
    let problem = load_problem(cfg)?;
    let report = estimate_critical_point(&problem, &cfg.t_ladder, &cfg.b, cfg.drift_tol, cfg.mode)?;
    match cfg.format {
        Format::Json => to_json(&report),
        Format::Csv => csv_text(|w| report.write_csv(w)),
    }
}

#[derive(Serialize)]
struct OracleCase {
    case_label: ShiftCase,
    cells: u64,
    mismatches: Vec<(u64, u64)>,
    equal: bool,
}

/// Parameters for `oracle-check`: the problem's canonical `(a, b)` when one
/// is given, else `(4, 1/2)`.
fn oracle_ab(cfg: &RunConfig) -> CliResult<(BigRational, BigRational)> {
    if cfg.input.is_none() && cfg.cov.is_none() {
        return Ok((rat(4, 1), rat(1, 2)));
    }
    let canon = normalize(&load_problem(cfg)?)?;
    if canon.degenerate {
        return Err(idsq::Error::Degenerate.into());
    }
    Ok((canon.a, canon.b))
}

pub fn cmd_oracle_check(cfg: &RunConfig) -> CliResult<String> {
    json_only(cfg, "oracle-check")?;
    let order = cfg.order.unwrap_or(16);
    let (a, b) = oracle_ab(cfg)?;
    let mut cases = Vec::new();
    for case in ShiftCase::ALL {
        let canon = CanonicalProblem::from_ab(a.clone(), b.clone(), case)?;
        let (ps, qs) = oracle_pq(&canon, &cfg.t, order, order)?;
        let sp = params(&canon, &cfg.t)?;
        let nc = numerator_coeffs(&canon, &cfg.t);
        let mut mismatches = Vec::new();
        let cells = triangle(order);
        for &(j, k) in &cells {
            let (ju, ku) = (j as usize, k as usize);
            if p_jk(&sp, j, k)? != ps.get(ju, ku) || q_jk(&sp, &nc, j, k)? != qs.get(ju, ku) {
                mismatches.push((j, k));
            }
        }
        cases.push(OracleCase {
            case_label: case,
            cells: cells.len() as u64,
            equal: mismatches.is_empty(),
            mismatches,
        });
    }
    #[derive(Serialize)]
    struct Out {
        #[serde(with = "serde_rational")]
        a: BigRational,
        #[serde(with = "serde_rational")]
        b: BigRational,
        #[serde(with = "serde_rational")]
        t: BigRational,
        order: usize,
        equal: bool,
        cells: u64,
        cases: Vec<OracleCase>,
    }
    to_json(&Out {
        a,
        b,
        t: cfg.t.clone(),
        order,
        equal: cases.iter().all(|c| c.equal),
        cells: cases.iter().map(|c| c.cells).sum(),
        cases,
    })
}

/// Random `(a, b, t)` with `ab > 1` and `t > 0`, small numerators and
/// denominators.
pub fn random_instance(rng: &mut ChaCha20Rng) -> (BigRational, BigRational, BigRational) {
    let mut draw = |n: i64, d: i64| rat(rng.random_range(1..=n), rng.random_range(1..=d));
    loop {
        let (a, b) = (draw(60, 12), draw(60, 12));
        let t = draw(400, 25);
        if &a * &b > BigRational::one() {
            return (a, b, t);
        }
    }
}

pub fn cmd_identities(cfg: &RunConfig) -> CliResult<String> {
    json_only(cfg, "identities")?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut failures = Vec::new();
    for _ in 0..cfg.count {
        let (a, b, t) = random_instance(&mut rng);
        let canon = CanonicalProblem::from_ab(a.clone(), b.clone(), ShiftCase::EqualShift)?;
        let report = asymptotic_check(&canon, &t)?;
        if !report.identities.all() {
            failures.push(json!({
                "a": format_rational(&a),
                "b": format_rational(&b),
                "t": format_rational(&t),
                "identities": report.identities,
            }));
        }
    }
    to_json(&json!({
        "count": cfg.count,
        "seed": cfg.seed,
        "all_hold": failures.is_empty(),
        "failures": failures,
    }))
}

pub fn cmd_laplace(cfg: &RunConfig) -> CliResult<String> {
    json_only(cfg, "laplace")?;
    let canon = normalize(&load_problem(cfg)?)?;
    if canon.degenerate {
        return Err(idsq::Error::Degenerate.into());
    }
    let [l1, l2] = cfg.lambda.as_slice() else {
        return Err(CliError::Invalid("--lambda takes 2 entries".into()));
    };
    let pt = EvaluationPoint::new(l1.clone(), l2.clone())?;
    let c_sq = c_sq(cfg, &canon);
    let value = laplace_squared_shifted(&canon, &c_sq, &pt, cfg.precision)?;
    let mc = if cfg.samples > 0 {
        Some(mc_laplace_estimate(
            &canon,
            &c_sq,
            &pt,
            cfg.samples,
            cfg.seed,
        )?)
    } else {
        None
    };
    to_json(&json!({
        "canonical": canon,
        "c_sq": format_rational(&c_sq),
        "lambda": [format_rational(l1), format_rational(l2)],
        "precision_bits": cfg.precision,
        "value": value.to_decimal().value().to_string(),
        "value_f64": laplace_squared_shifted_f64(&canon, &c_sq, &pt),
        "monte_carlo": mc,
    }))
}

/// Runs the subcommand, on a dedicated pool when `--threads` is given.
pub fn execute(cli: &Cli) -> CliResult<String> {
    let cfg = &cli.cfg;
    let f = || match cli.command {
        Command::Classify => cmd_classify(cfg),
        Command::Coeffs => cmd_coeffs(cfg),
        Command::Scan => cmd_scan(cfg),
        Command::Critical => cmd_critical(cfg),
        Command::OracleCheck => cmd_oracle_check(cfg),
        Command::Identities => cmd_identities(cfg),
        Command::Laplace => cmd_laplace(cfg),
    };
    match cfg.threads {
        None => f(),
        Some(0) => Err(CliError::Invalid("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(internal)?
            .install(f),
    }
}

/// Executes and writes the output; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = execute(cli).and_then(|text| match &cli.cfg.out {
        Some(path) => std::fs::write(path, text).map_err(internal),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(internal(e)),
                _ => Ok(()),
            }
        }
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("idsq: {e}");
            e.exit_code()
        }
    }
}
