//! Command-line front end. Every report is one JSON record per line.
//!
//! Exit status: 0 when the check succeeds, 2 when it ran and the verdict is
//! negative, 1 on errors.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde_json::{json, Value};

use crate::catalog::{Catalog, CatalogEntry, ExpectedKind};
use crate::error::{Error, Result};
use crate::json::{parse_objective, parse_problem, to_line};
use crate::landscape::{level_range, sweep_levels, GridSpec};
use crate::nondegeneracy::{classify_point, Classification};
use crate::problem::{fd_derivative_check, MpocProblem, Tolerances};
use crate::scholtes::{drive, drive_multistart, random_starts, RegularizationTrace, Schedule};
use crate::scno::{self, RelaxedPoint, ScnoProblem};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Parser, Debug)]
#[command(name = "mpoc", version, about = "Stationarity, regularization and level-set tools for programs with orthogonality type constraints")]
pub struct Cli {
    /// Seed for randomized runs; MPOC_SEED takes precedence.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Write records here instead of stdout.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Certify T-stationarity and classify points.
    Classify {
        #[arg(long)]
        problem: String,
        /// Comma separated point; repeat for several. Defaults to the
        /// documented points of a catalog entry.
        #[arg(long, allow_hyphen_values = true)]
        x: Vec<String>,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Drive the Scholtes regularization to a limit and certify it.
    Regularize {
        #[arg(long)]
        problem: String,
        #[arg(long, allow_hyphen_values = true, conflicts_with = "starts")]
        x0: Option<String>,
        /// Number of seeded random starts in `[lo, hi]ⁿ`.
        #[arg(long)]
        starts: Option<usize>,
        #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
        lo: f64,
        #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
        hi: f64,
        #[arg(long, default_value_t = 1.0)]
        t0: f64,
        #[arg(long, default_value_t = 0.1)]
        shrink: f64,
        #[arg(long, default_value_t = 1e-10)]
        tmin: f64,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Stationarity of a sparsity constrained problem and its relaxation.
    Scno {
        /// Problem file; only `n` and `quadratic_f` are read.
        #[arg(long)]
        f: PathBuf,
        #[arg(long)]
        s: usize,
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        /// Defaults to ones on the first n-s zero indices of x.
        #[arg(long, allow_hyphen_values = true)]
        y: Option<String>,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Component counts of lower level sets on a grid (n = 2 only).
    Landscape {
        #[arg(long)]
        problem: String,
        /// x1 range a..b and x2 range c..d.
        #[arg(long = "box", default_value = "-3,3,-3,3", allow_hyphen_values = true)]
        bounds: String,
        #[arg(long, default_value_t = 801)]
        res: usize,
        /// `lo:hi:step`.
        #[arg(long, default_value = "0.2:3.0:0.05", allow_hyphen_values = true)]
        levels: String,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// List catalog entries and their documented points.
    Catalog {
        #[arg(long)]
        name: Option<String>,
    },
    /// Run the fixture checks.
    Selftest,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct TolArgs {
    #[arg(long, default_value_t = 1e-8)]
    pub activity: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub stationarity_residual: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eigen_singularity: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub multiplier_zero: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub feasibility: f64,
}

impl From<TolArgs> for Tolerances {
    fn from(a: TolArgs) -> Self {
        Tolerances {
            activity: a.activity,
            stationarity_residual: a.stationarity_residual,
            eigen_singularity: a.eigen_singularity,
            multiplier_zero: a.multiplier_zero,
            feasibility: a.feasibility,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Positive,
    Negative,
}

impl Verdict {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Positive
        } else {
            Verdict::Negative
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Positive => 0,
            Verdict::Negative => 2,
        }
    }
}

/// `MPOC_SEED` if set and parseable, else the flag value.
pub fn effective_seed(flag: u64) -> Result<u64> {
    match std::env::var("MPOC_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("MPOC_SEED must be an unsigned integer, got `{s}`"))),
        Err(_) => Ok(flag),
    }
}

fn parse_vector(text: &str) -> Result<DVector<f64>> {
    let vals: std::result::Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    vals.map(DVector::from_vec)
        .map_err(|e| Error::InvalidParameter(format!("cannot parse `{text}` as a comma separated vector: {e}")))
}

/// Catalog name, or a path to a problem file.
pub fn load_problem(source: &str) -> Result<(MpocProblem, Option<CatalogEntry>)> {
    match Catalog::new().lookup(source) {
        Ok(entry) => Ok((entry.problem.clone(), Some(entry))),
        Err(unknown) => {
            let path = std::path::Path::new(source);
            if !path.is_file() {
                return Err(unknown);
            }
            let text = std::fs::read_to_string(path)?;
            let problem = parse_problem(&text).map_err(|e| Error::ProblemFile(format!("{source}: {e}")))?;
            Ok((problem, None))
        }
    }
}

struct Out<'a> {
    w: &'a mut dyn Write,
}

impl Out<'_> {
    fn emit(&mut self, v: &Value) -> Result<()> {
        writeln!(self.w, "{}", to_line(v))?;
        Ok(())
    }
}

/// Runs a parsed command line, writing records to `w`.
pub fn run(cli: &Cli, w: &mut dyn Write) -> Result<Verdict> {
    let mut out = Out { w };
    let seed = effective_seed(cli.seed)?;
    match &cli.command {
        Command::Classify { problem, x, tol } => classify(&mut out, problem, x, &(*tol).into()),
        Command::Regularize {
            problem,
            x0,
            starts,
            lo,
            hi,
            t0,
            shrink,
            tmin,
            tol,
        } => {
            let schedule = Schedule {
                t0: *t0,
                shrink: *shrink,
                t_min: *tmin,
            };
            regularize(&mut out, problem, x0.as_deref(), *starts, (*lo, *hi), &schedule, &(*tol).into(), seed)
        }
        Command::Scno { f, s, x, y, tol } => scno_cmd(&mut out, f, *s, x, y.as_deref(), &(*tol).into()),
        Command::Landscape {
            problem,
            bounds,
            res,
            levels,
            csv,
            svg,
        } => landscape(&mut out, problem, bounds, *res, levels, csv.as_ref(), svg.as_ref()),
        Command::Catalog { name } => catalog_cmd(&mut out, name.as_deref()),
        Command::Selftest => selftest(&mut out),
    }
}

fn classify(out: &mut Out, source: &str, xs: &[String], tol: &Tolerances) -> Result<Verdict> {
    tol.validate()?;
    let (problem, entry) = load_problem(source)?;
    let points: Vec<DVector<f64>> = if xs.is_empty() {
        let entry = entry.ok_or_else(|| Error::InvalidParameter("--x is required for problem files".into()))?;
        entry.stationary_points.iter().map(|p| DVector::from_column_slice(&p.x)).collect()
    } else {
        xs.iter().map(|s| parse_vector(s)).collect::<Result<_>>()?
    };
    let mut all = true;
    for x in &points {
        match classify_point(&problem, x, tol) {
            Ok(c) => {
                let ok = c.certificate.is_t_stationary;
                all &= ok;
                out.emit(&json!({
                    "event": "classify",
                    "problem": source,
                    "x": x.as_slice(),
                    "verdict": if ok { "T_STATIONARY" } else { "NOT_T_STATIONARY" },
                    "certificate": c.certificate,
                    "report": c.report,
                }))?;
            }
            Err(Error::Infeasible { violation, tolerance }) => {
                all = false;
                out.emit(&json!({
                    "event": "classify",
                    "problem": source,
                    "x": x.as_slice(),
                    "verdict": "INFEASIBLE",
                    "max_violation": violation,
                    "tolerance": tolerance,
                }))?;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Verdict::from_bool(all))
}

fn trace_records(out: &mut Out, start: usize, x0: &DVector<f64>, trace: &RegularizationTrace) -> Result<()> {
    for it in &trace.iterates {
        out.emit(&json!({"event": "iterate", "start": start, "iterate": it}))?;
    }
    out.emit(&json!({
        "event": "limit",
        "start": start,
        "x0": x0.as_slice(),
        "limit_point": trace.limit_point,
        "converged": trace.converged,
        "multiplier_gap": trace.multiplier_gap,
        "recovered": trace.recovered,
        "direct": trace.direct,
        "certificate": trace.certificate,
        "failure": trace.failure,
    }))
}

#[allow(clippy::too_many_arguments)]
fn regularize(
    out: &mut Out,
    source: &str,
    x0: Option<&str>,
    starts: Option<usize>,
    (lo, hi): (f64, f64),
    schedule: &Schedule,
    tol: &Tolerances,
    seed: u64,
) -> Result<Verdict> {
    schedule.validate()?;
    let (problem, _) = load_problem(source)?;
    let starts = match (x0, starts) {
        (Some(s), _) => vec![parse_vector(s)?],
        (None, Some(count)) => {
            if !(lo < hi) {
                return Err(Error::InvalidParameter(format!("start box needs lo < hi, got {lo}, {hi}")));
            }
            random_starts(problem.n(), count, lo, hi, seed)
        }
        (None, None) => return Err(Error::InvalidParameter("give --x0 or --starts".into())),
    };
    let traces = if starts.len() == 1 {
        vec![drive(&problem, &starts[0], schedule, tol)]
    } else {
        drive_multistart(&problem, &starts, schedule, tol)
    };
    let mut converged = 0;
    for (k, (x0, trace)) in starts.iter().zip(traces).enumerate() {
        let trace = trace?;
        converged += trace.converged as usize;
        trace_records(out, k, x0, &trace)?;
    }
    out.emit(&json!({
        "event": "summary",
        "problem": source,
        "seed": seed,
        "runs": starts.len(),
        "converged": converged,
    }))?;
    Ok(Verdict::from_bool(converged == starts.len()))
}

fn scno_cmd(out: &mut Out, file: &PathBuf, s: usize, x: &str, y: Option<&str>, tol: &Tolerances) -> Result<Verdict> {
    tol.validate()?;
    let text = std::fs::read_to_string(file)?;
    let f = parse_objective(&text).map_err(|e| Error::ProblemFile(format!("{}: {e}", file.display())))?;
    let problem = ScnoProblem::new(f, s)?;
    let x = parse_vector(x)?;
    let m = match scno::m_stationarity_check(&problem, &x, tol) {
        Ok(m) => m,
        Err(Error::SparsityViolated { support, s }) => {
            out.emit(&json!({"event": "scno", "verdict": "INFEASIBLE", "support_size": support, "s": s}))?;
            return Ok(Verdict::Negative);
        }
        Err(e) => return Err(e),
    };
    let point = match y {
        Some(y) => RelaxedPoint::new(x.clone(), parse_vector(y)?),
        None => scno::canonical_completion(&problem, &x, tol)?,
    };
    let cert = match scno::t_stationarity_check_relaxation(&problem, &point, tol) {
        Ok(c) => c,
        Err(Error::Infeasible { violation, .. }) => {
            out.emit(&json!({
                "event": "scno",
                "verdict": "INFEASIBLE_RELAXED_POINT",
                "y": point.y.as_slice(),
                "max_violation": violation,
            }))?;
            return Ok(Verdict::Negative);
        }
        Err(e) => return Err(e),
    };
    let s_stat = scno::s_stationarity_check(&problem, &point, tol)?;
    let audit = if cert.is_t_stationary {
        Some(scno::degeneracy_audit(&problem, &point, tol)?)
    } else {
        None
    };
    out.emit(&json!({
        "event": "scno",
        "x": point.x.as_slice(),
        "y": point.y.as_slice(),
        "m_stationary": m.stationary,
        "s_stationary": s_stat,
        "t_stationary": cert.is_t_stationary,
        "certificate": cert,
        "audit": audit,
        "program": scno::mixed_integer_program(&problem),
    }))?;
    Ok(Verdict::from_bool(cert.is_t_stationary))
}

fn parse_box(text: &str) -> Result<([f64; 2], [f64; 2])> {
    let v = parse_vector(text)?;
    if v.len() != 4 {
        return Err(Error::InvalidParameter(format!("--box needs a,b,c,d, got `{text}`")));
    }
    Ok(([v[0], v[2]], [v[1], v[3]]))
}

fn parse_levels(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidParameter(format!("cannot parse levels `{text}`: {e}")))?;
    match nums[..] {
        [lo, hi, step] => level_range(lo, hi, step),
        _ => Err(Error::InvalidParameter(format!("levels must look like lo:hi:step, got `{text}`"))),
    }
}

fn landscape(
    out: &mut Out,
    source: &str,
    bounds: &str,
    res: usize,
    levels: &str,
    csv: Option<&PathBuf>,
    svg: Option<&PathBuf>,
) -> Result<Verdict> {
    let (problem, entry) = load_problem(source)?;
    let (lower, upper) = parse_box(bounds)?;
    let grid = GridSpec::new(lower, upper, res)?;
    let levels = parse_levels(levels)?;
    let stationary: Vec<f64> = entry
        .map(|e| {
            e.stationary_points
                .iter()
                .map(|p| problem.objective(&DVector::from_column_slice(&p.x)))
                .collect()
        })
        .unwrap_or_default();
    let report = sweep_levels(&problem, &grid, &levels, &stationary)?;
    for (a, b) in report.levels.iter().zip(&report.betti0_per_level) {
        out.emit(&json!({"event": "level", "level": a, "betti0": b}))?;
    }
    let nearest: Vec<Option<f64>> = report
        .change_levels
        .iter()
        .map(|c| {
            stationary
                .iter()
                .copied()
                .min_by(|a, b| (a - c).abs().total_cmp(&(b - c).abs()))
        })
        .collect();
    out.emit(&json!({
        "event": "landscape",
        "problem": source,
        "grid": grid,
        "delta": grid.delta(),
        "change_levels": report.change_levels,
        "transitions": report.transitions(),
        "stationary_values": report.stationary_values,
        "nearest_stationary_value": nearest,
        "note": "the box is assumed to contain the compact part of every swept level set; this is not checked",
    }))?;
    if let Some(p) = csv {
        std::fs::write(p, report.to_csv())?;
    }
    if let Some(p) = svg {
        std::fs::write(p, report.to_svg())?;
    }
    Ok(Verdict::Positive)
}

fn entry_record(e: &CatalogEntry) -> Value {
    let p = &e.problem;
    json!({
        "event": "catalog",
        "name": e.name,
        "n": p.n(),
        "num_eq": p.num_eq(),
        "num_ineq": p.num_ineq(),
        "num_pairs": p.num_pairs(),
        "stationary_points": e.stationary_points,
    })
}

fn catalog_cmd(out: &mut Out, name: Option<&str>) -> Result<Verdict> {
    let cat = Catalog::new();
    match name {
        Some(n) => out.emit(&entry_record(&cat.lookup(n)?))?,
        None => {
            for n in ["saddle", "instability", "instability_perturbed(0.1)"] {
                out.emit(&entry_record(&cat.lookup(n)?))?;
            }
            out.emit(&json!({"event": "names", "names": cat.names()}))?;
        }
    }
    Ok(Verdict::Positive)
}

/// Classifies every documented catalog point, checks derivatives, drives one
/// regularization and sweeps a coarse landscape.
fn selftest(out: &mut Out) -> Result<Verdict> {
    let tol = Tolerances::default();
    let mut all = true;
    let mut check = |out: &mut Out, name: String, ok: bool, detail: Value| -> Result<()> {
        all &= ok;
        out.emit(&json!({"event": "selftest", "check": name, "pass": ok, "detail": detail}))
    };
    for name in ["saddle", "instability", "instability_perturbed(0.1)"] {
        let e = crate::catalog::catalog(name)?;
        for p in &e.stationary_points {
            let c = classify_point(&e.problem, &DVector::from_column_slice(&p.x), &tol)?;
            let got = c.report.as_ref().map(|r| r.classification);
            let ok = c.certificate.is_t_stationary
                && match p.kind {
                    ExpectedKind::NondegenerateLocalMin => got == Some(Classification::NondegenerateLocalMin),
                    ExpectedKind::NondegenerateSaddle => got == Some(Classification::NondegenerateSaddle),
                    ExpectedKind::Degenerate => got == Some(Classification::Degenerate),
                    ExpectedKind::Stationary => true,
                };
            check(out, format!("classify {name} at {:?}", p.x), ok, json!({"expected": p.kind, "got": got}))?;
        }
        let x = DVector::from_column_slice(&[0.3, -0.4]);
        let mut worst = 0.0f64;
        for (_, map) in e.problem.maps() {
            worst = worst.max(fd_derivative_check(map, &x)?);
        }
        check(out, format!("derivatives of {name}"), worst <= 1e-5, json!({"max_relative_error": worst}))?;
    }
    let saddle = crate::catalog::saddle();
    let schedule = Schedule {
        t0: 0.01,
        ..Schedule::default()
    };
    let trace = drive(&saddle, &DVector::from_column_slice(&[-0.9, 0.05]), &schedule, &tol)?;
    let near = trace.limit_point.len() == 2 && (trace.limit_point[0] + 1.0).abs() < 1e-5 && trace.limit_point[1].abs() < 1e-5;
    check(
        out,
        "regularize saddle to (-1, 0)".into(),
        trace.converged && near,
        json!({"limit_point": trace.limit_point}),
    )?;
    let grid = GridSpec::new([-3.0, -3.0], [3.0, 3.0], 201)?;
    let sweep = sweep_levels(&saddle, &grid, &level_range(0.2, 3.0, 0.05)?, &[1.0, 2.0])?;
    check(
        out,
        "landscape saddle transitions".into(),
        sweep.transitions() == vec![(0, 2), (2, 1)],
        json!({"change_levels": sweep.change_levels}),
    )?;
    Ok(Verdict::from_bool(all))
}

/// Parses `std::env::args`, runs, and returns the exit status.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = write!(stderr, "{e}");
            return code;
        }
    };
    let result = match &cli.output {
        Some(path) => std::fs::File::create(path)
            .map_err(Error::from)
            .and_then(|mut f| run(&cli, &mut f)),
        None => run(&cli, stdout),
    };
    match result {
        Ok(v) => v.exit_code(),
        Err(e) => {
            let _ = writeln!(stdout, "{}", to_line(&json!({"event": "error", "message": e.to_string()})));
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}
