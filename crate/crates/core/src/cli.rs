//! Command-line front end: JSON and CSV in, JSON and CSV out.
//!
//! Exit codes: 0 success, 1 usage error, 2 numerical failure (diagnostic JSON
//! on stderr), 3 membership decision "outside".

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::coalescence::{
    coalescence_exponents, coalescence_vector, from_unit_step, manifold_membership,
    manifold_nearest, normalize, PopulationHistory,
};
use crate::hankel::{full_membership, Decision, MembershipResult};
use crate::moments::{gamma_down, gamma_up, moment_curve, moments_of_step};
use crate::oracle::{
    best_fit_step, fiber_sample, grid_membership, theorem_suite, FitOptions, Monotone, DEFAULT_GRID,
};
use crate::sdp::{monotone_membership, nearest_point, projected_membership, Direction};
use crate::{Error, ExponentSet, MomentVector, StepFunction};

pub const DEFAULT_SEED: u64 = 42;
pub const SEED_ENV: &str = "STEPMOMENTS_SEED";
/// Grid residual below which the cross-check counts a point as a member.
pub const DEFAULT_ORACLE_TOL: f64 = 1e-4;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_OUTSIDE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "stepmoments",
    version,
    about = "Sparse moments of nonnegative step functions on [0, 1]"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// RNG seed; defaults to $STEPMOMENTS_SEED, then 42.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for multi-start searches.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output format; each subcommand has its own default.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Grid residual accepted as membership by the oracle cross-check.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Write the result here instead of stdout.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MonotoneArg {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Curve {
    V,
    Up,
    Down,
}

/// A moment vector given inline or read from a file.
#[derive(Debug, Args)]
pub struct VectorInput {
    /// Comma-separated coordinates.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub vector: Option<Vec<f64>>,
    /// File holding a JSON array, a moment-vector object or comma-separated floats.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

/// The exponent set, given directly or as a sample size.
#[derive(Debug, Args)]
pub struct Target {
    /// Exponent set, e.g. 0,2,5,9.
    #[arg(long = "A", value_delimiter = ',', conflicts_with = "n")]
    pub a: Option<Vec<u32>>,
    /// Sample size; selects the coalescence exponents C(i,2) - 1, i = 2..n.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Moments of a step function.
    Moments {
        #[arg(long = "A", value_delimiter = ',', required = true)]
        a: Vec<u32>,
        /// Step function JSON: {"breakpoints": [...], "heights": [...]}.
        #[arg(long)]
        step: Option<String>,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Membership in M(A), a monotone cone, or the coalescence manifold.
    Membership {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        vector: VectorInput,
        /// Test the monotone cone instead of M(A).
        #[arg(long, value_enum, conflicts_with = "n")]
        monotone: Option<MonotoneArg>,
        /// Also run the grid oracle and report agreement.
        #[arg(long)]
        cross_check: bool,
        /// Grid size for the cross-check.
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
    },
    /// Nearest point of M(A), or of the coalescence manifold with a witness history.
    Nearest {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        vector: VectorInput,
    },
    /// Coalescence vector of a population history.
    Coalesce {
        /// History JSON: {"breakpoints": [...], "sizes": [...]}.
        #[arg(long)]
        history: Option<String>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, required = true)]
        n: usize,
        /// Scale to coordinate sum one.
        #[arg(long)]
        normalize: bool,
    },
    /// Population history of a strictly positive unit-interval step function.
    Invert {
        /// Step function JSON: {"breakpoints": [...], "heights": [...]}.
        #[arg(long)]
        step: Option<String>,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Best k-breakpoint step-function fit by multi-start local search.
    Fit {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        vector: VectorInput,
        #[arg(long, required = true)]
        k: usize,
        #[arg(long, value_enum)]
        monotone: Option<MonotoneArg>,
    },
    /// Sampled points of the moment curve or a monotone jump curve.
    EmitCurve {
        #[arg(long = "A", value_delimiter = ',', required = true)]
        a: Vec<u32>,
        #[arg(long, value_enum, default_value_t = Curve::V)]
        curve: Curve,
        #[arg(long, default_value_t = 101)]
        samples: usize,
    },
    /// Randomized checks of the breakpoint bounds.
    Theorems {
        #[arg(long = "A", value_delimiter = ',', required = true)]
        a: Vec<u32>,
        #[arg(long, default_value_t = 50)]
        trials: usize,
    },
    /// Distinct k-breakpoint parameter points reproducing a moment vector.
    Fiber {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        vector: VectorInput,
        #[arg(long, required = true)]
        k: usize,
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NotSymmetric(_)
            | Error::AtomExtraction(_)
            | Error::TableauTooLarge(_)
            | Error::NumericalBreakdown(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

struct Output {
    text: String,
    code: i32,
}

impl Output {
    fn ok(text: String) -> Self {
        Self {
            text,
            code: EXIT_OK,
        }
    }
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let name = command_name(&cli.command);
    match execute(&cli).and_then(|out| emit(&cli.global, &out.text).map(|_| out.code)) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Numerical(msg)) => {
            let diag = json!({ "error": "numerical failure", "command": name, "message": msg });
            eprintln!("{diag}");
            EXIT_NUMERICAL
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Moments { .. } => "moments",
        Command::Membership { .. } => "membership",
        Command::Nearest { .. } => "nearest",
        Command::Coalesce { .. } => "coalesce",
        Command::Invert { .. } => "invert",
        Command::Fit { .. } => "fit",
        Command::EmitCurve { .. } => "emit-curve",
        Command::Theorems { .. } => "theorems",
        Command::Fiber { .. } => "fiber",
    }
}

fn emit(global: &GlobalArgs, text: &str) -> Result<(), Failure> {
    match &global.output {
        Some(path) => fs::write(path, text)
            .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Failure::Usage(format!("cannot write output: {e}")))
        }
    }
}

/// Explicit flag, then environment, then the fixed default.
fn resolve_seed(flag: Option<u64>) -> Result<u64, Failure> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("{SEED_ENV} is not an unsigned integer: {v:?}"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn execute(cli: &Cli) -> Result<Output, Failure> {
    let g = &cli.global;
    let seed = resolve_seed(g.seed)?;
    if let Some(jobs) = g.jobs {
        if jobs == 0 {
            return Err(Failure::Usage("--jobs must be positive".into()));
        }
        // Only the first call in a process can size the global pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let format = |default: Format| g.format.unwrap_or(default);
    let json_only = |name: &str| -> Result<(), Failure> {
        match g.format {
            Some(Format::Csv) => Err(Failure::Usage(format!("`{name}` has no CSV output"))),
            _ => Ok(()),
        }
    };

    match &cli.command {
        Command::Moments { a, step, input } => {
            let exps = ExponentSet::new(a.clone())?;
            let f: StepFunction = read_json_input("--step", step.as_deref(), input.as_deref())?;
            let m = moments_of_step(&f, &exps);
            Ok(Output::ok(match format(Format::Json) {
                Format::Json => to_json(&m)?,
                Format::Csv => csv_table(&moment_header(&exps), &[m.values().to_vec()])?,
            }))
        }
        Command::Membership {
            target,
            vector,
            monotone,
            cross_check,
            grid,
        } => {
            json_only("membership")?;
            let values = read_vector(vector)?;
            let (m, result) = match (target.n, monotone) {
                (Some(n), _) => {
                    let result = manifold_membership(&values, n)?;
                    (
                        MomentVector::new(coalescence_exponents(n)?, values)?,
                        result,
                    )
                }
                (None, dir) => {
                    let m = MomentVector::new(target_exponents(target)?, values)?;
                    let result = match dir {
                        Some(MonotoneArg::Up) => monotone_membership(&m, Direction::Up)?,
                        Some(MonotoneArg::Down) => monotone_membership(&m, Direction::Down)?,
                        None if m.exponent_set().is_consecutive_from_zero() => full_membership(&m)?,
                        None => projected_membership(&m)?,
                    };
                    (m, result)
                }
            };
            let code = if result.decision == Decision::Outside {
                EXIT_OUTSIDE
            } else {
                EXIT_OK
            };
            let text = if *cross_check {
                if monotone.is_some() {
                    return Err(Failure::Usage(
                        "--cross-check is not available for monotone cones".into(),
                    ));
                }
                let tol = g.tol.unwrap_or(DEFAULT_ORACLE_TOL);
                let oracle = grid_membership(&m, *grid, target.n.is_some())?;
                let member = oracle.residual <= tol;
                let agrees = member == (result.decision != Decision::Outside);
                to_json(&CrossChecked {
                    result: &result,
                    oracle: json!({
                        "grid_size": oracle.grid_size,
                        "residual": oracle.residual,
                        "tol": tol,
                        "member": member,
                        "agrees": agrees,
                    }),
                })?
            } else {
                to_json(&result)?
            };
            Ok(Output { text, code })
        }
        Command::Nearest { target, vector } => {
            json_only("nearest")?;
            let values = read_vector(vector)?;
            let text = match target.n {
                Some(n) => to_json(&manifold_nearest(&values, n, seed)?)?,
                None => {
                    let m = MomentVector::new(target_exponents(target)?, values)?;
                    to_json(&nearest_point(&m, false)?)?
                }
            };
            Ok(Output::ok(text))
        }
        Command::Coalesce {
            history,
            input,
            n,
            normalize: norm,
        } => {
            let eta: PopulationHistory =
                read_json_input("--history", history.as_deref(), input.as_deref())?;
            let mut c = coalescence_vector(&eta, *n)?;
            if *norm {
                c = normalize(&c)?;
            }
            Ok(Output::ok(match format(Format::Json) {
                Format::Json => to_json(&c)?,
                Format::Csv => csv_table(
                    &moment_header(&coalescence_exponents(*n)?),
                    &[c.values.clone()],
                )?,
            }))
        }
        Command::Invert { step, input } => {
            json_only("invert")?;
            let f: StepFunction = read_json_input("--step", step.as_deref(), input.as_deref())?;
            Ok(Output::ok(to_json(&from_unit_step(&f)?)?))
        }
        Command::Fit {
            target,
            vector,
            k,
            monotone,
        } => {
            json_only("fit")?;
            let m = MomentVector::new(target_exponents(target)?, read_vector(vector)?)?;
            let dir = match monotone {
                None => Monotone::None,
                Some(MonotoneArg::Up) => Monotone::Up,
                Some(MonotoneArg::Down) => Monotone::Down,
            };
            let opts = FitOptions::new(*k)
                .monotone(dir)
                .sum_one(target.n.is_some())
                .seed(seed);
            Ok(Output::ok(to_json(&best_fit_step(&m, &opts)?)?))
        }
        Command::EmitCurve { a, curve, samples } => {
            let exps = ExponentSet::new(a.clone())?;
            if *samples < 2 {
                return Err(Failure::Usage("--samples must be at least 2".into()));
            }
            let rows = (0..*samples)
                .map(|i| {
                    let t = i as f64 / (*samples - 1) as f64;
                    let v = match curve {
                        Curve::V => moment_curve(t, &exps),
                        Curve::Up => gamma_up(t, &exps),
                        Curve::Down => gamma_down(t, &exps),
                    }?;
                    Ok(v.into_values())
                })
                .collect::<Result<Vec<_>, Error>>()?;
            Ok(Output::ok(match format(Format::Csv) {
                Format::Csv => csv_table(&moment_header(&exps), &rows)?,
                Format::Json => to_json(&json!({ "exponents": exps.exponents(), "points": rows }))?,
            }))
        }
        Command::Theorems { a, trials } => {
            json_only("theorems")?;
            let exps = ExponentSet::new(a.clone())?;
            Ok(Output::ok(to_json(&theorem_suite(&exps, *trials, seed)?)?))
        }
        Command::Fiber {
            target,
            vector,
            k,
            count,
        } => {
            let m = MomentVector::new(target_exponents(target)?, read_vector(vector)?)?;
            let points = fiber_sample(&m, *k, *count, seed)?;
            Ok(Output::ok(match format(Format::Csv) {
                Format::Json => to_json(&points)?,
                Format::Csv => {
                    let header: Vec<String> = (1..=*k)
                        .map(|i| format!("s{i}"))
                        .chain((1..=*k + 1).map(|i| format!("w{i}")))
                        .collect();
                    let rows: Vec<Vec<f64>> = points
                        .iter()
                        .map(|p| p.s.iter().chain(&p.w).copied().collect())
                        .collect();
                    csv_table(&header, &rows)?
                }
            }))
        }
    }
}

#[derive(Serialize)]
struct CrossChecked<'a> {
    result: &'a MembershipResult,
    oracle: serde_json::Value,
}

fn target_exponents(t: &Target) -> Result<ExponentSet, Failure> {
    match (&t.a, t.n) {
        (Some(a), _) => Ok(ExponentSet::new(a.clone())?),
        (None, Some(n)) => Ok(coalescence_exponents(n)?),
        (None, None) => Err(Failure::Usage("one of --A or --n is required".into())),
    }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn read_json_input<T: DeserializeOwned>(
    flag: &str,
    inline: Option<&str>,
    file: Option<&Path>,
) -> Result<T, Failure> {
    let text = match (inline, file) {
        (Some(_), Some(_)) => {
            return Err(Failure::Usage(format!(
                "give either {flag} or --input, not both"
            )))
        }
        (Some(s), None) => s.to_string(),
        (None, Some(path)) => read_file(path)?,
        (None, None) => {
            return Err(Failure::Usage(format!(
                "one of {flag} or --input is required"
            )))
        }
    };
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("invalid JSON input: {e}")))
}

fn read_vector(v: &VectorInput) -> Result<Vec<f64>, Failure> {
    match (&v.vector, &v.input) {
        (Some(_), Some(_)) => Err(Failure::Usage(
            "give either --vector or --input, not both".into(),
        )),
        (Some(values), None) => Ok(values.clone()),
        (None, Some(path)) => parse_vector_text(&read_file(path)?),
        (None, None) => Err(Failure::Usage(
            "one of --vector or --input is required".into(),
        )),
    }
}

/// Accepts a JSON array, a moment-vector object, or comma/whitespace
/// separated floats.
fn parse_vector_text(text: &str) -> Result<Vec<f64>, Failure> {
    let trimmed = text.trim();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed)
            .map_err(|e| Failure::Usage(format!("invalid JSON array: {e}")));
    }
    if trimmed.starts_with('{') {
        let m: MomentVector = serde_json::from_str(trimmed)
            .map_err(|e| Failure::Usage(format!("invalid moment vector: {e}")))?;
        return Ok(m.into_values());
    }
    trimmed
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Failure::Usage(format!("not a number: {s:?}")))
        })
        .collect()
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::Numerical(format!("cannot serialize output: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn moment_header(exps: &ExponentSet) -> Vec<String> {
    exps.exponents().iter().map(|a| format!("m{a}")).collect()
}

/// 17 significant digits, round-trip exact.
fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_table(header: &[String], rows: &[Vec<f64>]) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Failure::Numerical(format!("cannot write CSV: {e}"));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row.iter().map(|&x| format_float(x)))
            .map_err(io)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Failure::Numerical(format!("cannot write CSV: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Failure::Numerical(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("stepmoments").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn parses_exponent_lists() {
        let cli = parse(&["emit-curve", "--A", "0,2,5,9", "--samples", "5"]);
        match cli.command {
            Command::EmitCurve { a, samples, curve } => {
                assert_eq!(a, vec![0, 2, 5, 9]);
                assert_eq!(samples, 5);
                assert_eq!(curve, Curve::V);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn global_flags_follow_the_subcommand() {
        let cli = parse(&["theorems", "--A", "0,1", "--seed", "7", "--format", "json"]);
        assert_eq!(cli.global.seed, Some(7));
        assert_eq!(cli.global.format, Some(Format::Json));
    }

    #[test]
    fn explicit_seed_wins() {
        assert_eq!(resolve_seed(Some(5)).unwrap(), 5);
    }

    #[test]
    fn a_and_n_conflict() {
        let r = Cli::try_parse_from([
            "stepmoments",
            "fit",
            "--A",
            "0,1",
            "--n",
            "4",
            "--k",
            "1",
            "--vector",
            "1,0.5",
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn vector_text_forms() {
        assert_eq!(parse_vector_text("[1, 0.5]").unwrap(), vec![1.0, 0.5]);
        assert_eq!(parse_vector_text("1,0.5\n").unwrap(), vec![1.0, 0.5]);
        assert_eq!(parse_vector_text("1 0.5").unwrap(), vec![1.0, 0.5]);
        assert_eq!(
            parse_vector_text(r#"{"exponents":[0,2],"values":[1,0.25]}"#).unwrap(),
            vec![1.0, 0.25]
        );
        assert!(parse_vector_text("1,x").is_err());
    }

    #[test]
    fn csv_uses_seventeen_digits() {
        let t = csv_table(&["m0".into(), "m2".into()], &[vec![1.0, 1.0 / 3.0]]).unwrap();
        let mut lines = t.lines();
        assert_eq!(lines.next(), Some("m0,m2"));
        let row: Vec<f64> = lines
            .next()
            .unwrap()
            .split(',')
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(row, vec![1.0, 1.0 / 3.0]);
    }

    #[test]
    fn inline_and_file_inputs_are_exclusive() {
        let v = VectorInput {
            vector: Some(vec![1.0]),
            input: Some(PathBuf::from("x")),
        };
        assert!(matches!(read_vector(&v), Err(Failure::Usage(_))));
    }

    #[test]
    fn numerical_errors_map_to_exit_two() {
        assert!(matches!(
            Failure::from(Error::NumericalBreakdown("x".into())),
            Failure::Numerical(_)
        ));
        assert!(matches!(
            Failure::from(Error::InvalidInput("x".into())),
            Failure::Usage(_)
        ));
    }
}
