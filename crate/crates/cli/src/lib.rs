//! Command-line front end: reads a fixture or a JSON problem file, runs one
//! analysis and writes a JSON report.
//!
//! Exit codes: 0 for a positive verdict, 1 for a well-formed negative verdict,
//! 2 for input and usage errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dichotomy_core::dichotomy::{
    estimate_constants, verify_with, DichotomyCertificate, EstimateConfig, Form, FormKind, ProjectionFamily,
};
use dichotomy_core::extension::{can_extend_minus, can_extend_plus, embed_in_z, extend_minus, extend_plus};
use dichotomy_core::finitetime::{finite_time_check, FiniteTimeHypothesis};
use dichotomy_core::projections::{change_complement_minus, change_complement_plus, glue_half_lines, rebase_at_m, Side};
use dichotomy_core::report::rows;
use dichotomy_core::roughness::{
    ode_constants, predicted_constants, random_perturbation, sequence_bound, verify_roughness, BoundSide, FixedPointConfig,
    GrowthBoundInput,
};
use dichotomy_core::system::{fixture, fixture_labels, CoefficientSequence, Interval, TailRule, Window};
use dichotomy_core::{Error, Matrix, Subspace, Tolerances};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable with tolerance overrides: a JSON object with any of
/// `rank`, `orth`, `residual`, or a bare number for `residual`.
pub const TOL_ENV: &str = "DICHOTOMY_TOL";

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => e.code(),
        }
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                Error::DimensionMismatch(_)
                | Error::OutOfRange { .. }
                | Error::Unresolvable(_)
                | Error::NonFinite(_)
                | Error::InvalidInput(_) => 2,
                _ => 1,
            },
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser, Debug)]
#[command(
    name = "dichotomy",
    version,
    about = "Exponential dichotomies of x(k+1) = A(k)x(k)",
    after_help = "Exponents are natural-log rates: bounds read L·e^{-α(k-m)}. \
                  Windows are written lo:hi. Set DICHOTOMY_TOL to override tolerances."
)]
struct Cli {
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct InputArgs {
    /// Built-in example system.
    #[arg(long, conflicts_with = "problem")]
    fixture: Option<String>,
    /// JSON problem file.
    #[arg(long)]
    problem: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
struct ConstantArgs {
    /// Form A constant L.
    #[arg(long = "L", conflicts_with_all = ["m_const", "k_const"])]
    l_const: Option<f64>,
    /// Form B bound M on the projections.
    #[arg(long = "M", requires = "k_const")]
    m_const: Option<f64>,
    /// Form B constant K.
    #[arg(long = "K", requires = "m_const")]
    k_const: Option<f64>,
    /// Exponent α.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SideArg {
    Plus,
    Minus,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Side {
        match s {
            SideArg::Plus => Side::Plus,
            SideArg::Minus => Side::Minus,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormArg {
    #[value(name = "A", alias = "a")]
    A,
    #[value(name = "B", alias = "b")]
    B,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the dichotomy inequalities on a window.
    Verify {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        constants: ConstantArgs,
        #[arg(long, allow_hyphen_values = true)]
        window: Option<Window>,
    },
    /// Smallest L for a given α, or the largest α with L below a cap.
    Estimate {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 1e6)]
        l_cap: f64,
        #[arg(long, allow_hyphen_values = true)]
        window: Option<Window>,
    },
    /// Convert constants between the two forms.
    Convert {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        constants: ConstantArgs,
        #[arg(long, value_enum)]
        to: FormArg,
        #[arg(long, allow_hyphen_values = true)]
        window: Option<Window>,
    },
    /// Replace the complementary subspace at the base point.
    Project {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        constants: ConstantArgs,
        #[arg(long, value_enum)]
        side: SideArg,
        /// Spanning vectors, e.g. "1,1" or "1,0,0;0,1,1".
        #[arg(long)]
        subspace: String,
        #[arg(long, allow_hyphen_values = true)]
        window: Option<Window>,
    },
    /// Prescribe the complementary subspace at an interior point.
    Rebase {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        constants: ConstantArgs,
        #[arg(long, value_enum)]
        side: SideArg,
        #[arg(long, allow_hyphen_values = true)]
        m: i64,
        #[arg(long)]
        subspace: String,
        #[arg(long, allow_hyphen_values = true)]
        window: Option<Window>,
    },
    /// Split a window at a point and join the two half-window certificates.
    Glue {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        constants: ConstantArgs,
        #[arg(long, allow_hyphen_values = true)]
        at: i64,
        #[arg(long, allow_hyphen_values = true)]
        window: Window,
    },
    /// Extend a certificate beyond one end of its window.
    Extend {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        constants: ConstantArgs,
        /// Target index.
        #[arg(long, allow_hyphen_values = true, conflicts_with = "to_zero", required_unless_present = "to_zero")]
        to: Option<i64>,
        /// Shorthand for --to 0.
        #[arg(long)]
        to_zero: bool,
        /// Window of the certificate being extended.
        #[arg(long, allow_hyphen_values = true)]
        window: Option<Window>,
    },
    /// Embed a half-line or finite dichotomy into one on all of Z.
    Embed {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        constants: ConstantArgs,
        #[arg(long, allow_hyphen_values = true)]
        window: Option<Window>,
        /// Window on which the embedded system is checked.
        #[arg(long, allow_hyphen_values = true)]
        check_window: Option<Window>,
    },
    /// Perturbed dichotomy under x(k+1) = A(k)(I + B(k))x(k) with seeded B.
    Perturb {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        constants: ConstantArgs,
        /// Spectral norm of every B(k).
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Solver window; B acts on its steps.
        #[arg(long, allow_hyphen_values = true, default_value = "-100:100")]
        window: Window,
        /// Indices where Q is computed.
        #[arg(long, allow_hyphen_values = true, default_value = "0:0")]
        region: Window,
        #[arg(long, default_value_t = 1e-13)]
        fixed_point_tol: f64,
    },
    /// Perturbation constants from K, α and δ.
    Constants {
        #[arg(long = "K")]
        k: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        delta: f64,
        /// Continuous-time constants instead.
        #[arg(long)]
        ode: bool,
        /// Coefficient D of the sequence bound; enables the sequence check.
        #[arg(long = "D")]
        d: Option<f64>,
        /// Sequence values, comma separated, starting at the anchor.
        #[arg(long, requires = "d")]
        mu: Option<String>,
        #[arg(long, requires = "d")]
        backward: bool,
    },
    /// Uniform dichotomies on windows [a, a+N] and the global check.
    FiniteTime {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long = "N")]
        n_len: usize,
        /// Density gap ℓ.
        #[arg(long)]
        density: usize,
        #[arg(long = "K")]
        k: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long = "M")]
        m: f64,
        #[arg(long = "Kbar")]
        k_bar: f64,
        #[arg(long)]
        beta_bar: f64,
        #[arg(long, allow_hyphen_values = true)]
        scan: Window,
        /// Base points, comma separated; default all.
        #[arg(long, allow_hyphen_values = true)]
        base: Option<String>,
    },
    /// List the built-in example systems.
    Fixtures,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Verify { .. } => "verify",
            Command::Estimate { .. } => "estimate",
            Command::Convert { .. } => "convert",
            Command::Project { .. } => "project",
            Command::Rebase { .. } => "rebase",
            Command::Glue { .. } => "glue",
            Command::Extend { .. } => "extend",
            Command::Embed { .. } => "embed",
            Command::Perturb { .. } => "perturb",
            Command::Constants { .. } => "constants",
            Command::FiniteTime { .. } => "finite-time",
            Command::Fixtures => "fixtures",
        }
    }
}

// Problem file format.

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    #[serde(default)]
    schema_version: Option<u32>,
    n: usize,
    interval: Interval,
    matrices: MatrixSpec,
    #[serde(default)]
    projection: Option<MatrixSpec>,
    #[serde(default)]
    constants: Option<ConstantsSpec>,
    #[serde(default)]
    tolerances: Option<Value>,
}

type Rows = Vec<Vec<f64>>;

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct MatrixSpec {
    #[serde(default)]
    explicit: Vec<Entry>,
    /// Rule used for both tails unless overridden.
    #[serde(default)]
    generator: Option<Generator>,
    #[serde(default)]
    below: Option<Generator>,
    #[serde(default)]
    above: Option<Generator>,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct Entry {
    k: i64,
    matrix: Rows,
}

#[derive(Deserialize, Debug, Clone)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Generator {
    Constant { matrix: Rows },
    Periodic { matrices: Vec<Rows> },
}

#[derive(Deserialize, Debug, Clone, Copy)]
#[serde(tag = "form", deny_unknown_fields)]
enum ConstantsSpec {
    A {
        #[serde(rename = "L")]
        l: f64,
        alpha: f64,
    },
    B {
        #[serde(rename = "M")]
        m: f64,
        #[serde(rename = "K")]
        k: f64,
        alpha: f64,
    },
}

impl From<ConstantsSpec> for Form {
    fn from(c: ConstantsSpec) -> Form {
        match c {
            ConstantsSpec::A { l, alpha } => Form::A { l, alpha },
            ConstantsSpec::B { m, k, alpha } => Form::B { m, k, alpha },
        }
    }
}

fn to_matrix(rows: &Rows, n: usize, what: &str) -> CliResult<Matrix> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(usage(format!("{what}: expected a {n}x{n} matrix")));
    }
    Ok(Matrix::from_row_iterator(n, n, rows.iter().flatten().copied()))
}

fn tail_rule(g: &Option<Generator>, n: usize, what: &str) -> CliResult<TailRule> {
    Ok(match g {
        None => TailRule::None,
        Some(Generator::Constant { matrix }) => TailRule::Constant(to_matrix(matrix, n, what)?),
        Some(Generator::Periodic { matrices }) => {
            TailRule::Periodic(matrices.iter().map(|m| to_matrix(m, n, what)).collect::<CliResult<_>>()?)
        }
    })
}

fn constant_tail(g: &Option<Generator>, n: usize, what: &str) -> CliResult<Option<Matrix>> {
    match g {
        None => Ok(None),
        Some(Generator::Constant { matrix }) => Ok(Some(to_matrix(matrix, n, what)?)),
        Some(Generator::Periodic { .. }) => Err(usage(format!("{what}: projection tails must be constant"))),
    }
}

fn build_sequence(p: &ProblemFile) -> CliResult<CoefficientSequence> {
    let spec = &p.matrices;
    let mut seq = CoefficientSequence::new(p.n, p.interval)?;
    for e in &spec.explicit {
        seq = seq.with_matrix(e.k, to_matrix(&e.matrix, p.n, &format!("matrices.explicit k = {}", e.k))?)?;
    }
    let below = spec.below.clone().or_else(|| spec.generator.clone());
    let above = spec.above.clone().or_else(|| spec.generator.clone());
    Ok(seq.with_tails(tail_rule(&below, p.n, "matrices.below")?, tail_rule(&above, p.n, "matrices.above")?)?)
}

fn build_family(p: &ProblemFile, spec: &MatrixSpec, tol: &Tolerances) -> CliResult<ProjectionFamily> {
    let n = p.n;
    if spec.explicit.is_empty() {
        let Some(Generator::Constant { matrix }) = &spec.generator else {
            return Err(usage("projection: give explicit entries or a constant generator"));
        };
        return Ok(ProjectionFamily::constant(p.interval, to_matrix(matrix, n, "projection.generator")?, tol)?);
    }
    let entries = spec
        .explicit
        .iter()
        .map(|e| Ok((e.k, to_matrix(&e.matrix, n, &format!("projection.explicit k = {}", e.k))?)))
        .collect::<CliResult<BTreeMap<_, _>>>()?;
    let below = constant_tail(&spec.below.clone().or_else(|| spec.generator.clone()), n, "projection.below")?;
    let above = constant_tail(&spec.above.clone().or_else(|| spec.generator.clone()), n, "projection.above")?;
    Ok(ProjectionFamily::from_entries(p.interval, entries, tol)?.with_tails(below, above, tol)?)
}

fn overlay_tolerances(base: Tolerances, v: &Value, what: &str) -> CliResult<Tolerances> {
    let mut t = base;
    match v {
        Value::Number(x) => t.residual = x.as_f64().unwrap_or(f64::NAN),
        Value::Object(map) => {
            for (key, val) in map {
                let x = val.as_f64().ok_or_else(|| usage(format!("{what}.{key}: expected a number")))?;
                match key.as_str() {
                    "rank" => t.rank = x,
                    "orth" => t.orth = x,
                    "residual" => t.residual = x,
                    _ => return Err(usage(format!("{what}: unknown tolerance `{key}`"))),
                }
            }
        }
        _ => return Err(usage(format!("{what}: expected an object or a number"))),
    }
    t.validate().map_err(|e| usage(format!("{what}: {e}")))?;
    Ok(t)
}

fn env_tolerances(base: Tolerances) -> CliResult<Tolerances> {
    match std::env::var(TOL_ENV) {
        Ok(s) if !s.trim().is_empty() => {
            let v: Value = serde_json::from_str(&s).map_err(|e| usage(format!("{TOL_ENV}: {e}")))?;
            overlay_tolerances(base, &v, TOL_ENV)
        }
        _ => Ok(base),
    }
}

struct Input {
    sequence: CoefficientSequence,
    family: Option<ProjectionFamily>,
    form: Option<Form>,
}

fn read_problem(path: &Path) -> CliResult<ProblemFile> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let p: ProblemFile = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if let Some(v) = p.schema_version {
        if v != SCHEMA_VERSION {
            return Err(usage(format!("{}: unsupported schema_version {v}", path.display())));
        }
    }
    Ok(p)
}

/// Fixtures are built from diag(1/2, 2) and carry L = 1, α = ln 2.
fn load_input(args: &InputArgs, problem: Option<&ProblemFile>, tol: &Tolerances) -> CliResult<Input> {
    if let Some(label) = &args.fixture {
        let f = fixture(label).ok_or_else(|| usage(format!("unknown fixture `{label}`; known: {}", fixture_labels().join(", "))))?;
        return Ok(Input {
            sequence: f.sequence,
            family: f.known_projection,
            form: Some(Form::A { l: 1.0, alpha: std::f64::consts::LN_2 }),
        });
    }
    let p = problem.ok_or_else(|| usage("give --fixture or --problem"))?;
    let family = p.projection.as_ref().map(|s| build_family(p, s, tol)).transpose()?;
    Ok(Input { sequence: build_sequence(p)?, family, form: p.constants.map(Form::from) })
}

fn form_from(c: &ConstantArgs, fallback: Option<Form>) -> CliResult<Form> {
    let alpha = c.alpha.or(fallback.map(|f| f.alpha()));
    let form = match (c.l_const, c.m_const, c.k_const) {
        (Some(l), _, _) => Form::A { l, alpha: alpha.ok_or_else(|| usage("--alpha is required"))? },
        (None, Some(m), Some(k)) => Form::B { m, k, alpha: alpha.ok_or_else(|| usage("--alpha is required"))? },
        _ => match (fallback, c.alpha) {
            (Some(Form::A { l, .. }), Some(alpha)) => Form::A { l, alpha },
            (Some(Form::B { m, k, .. }), Some(alpha)) => Form::B { m, k, alpha },
            (Some(f), None) => f,
            (None, _) => return Err(usage("constants required: --L and --alpha, or --M, --K and --alpha")),
        },
    };
    form.validate()?;
    Ok(form)
}

fn default_window(family: &ProjectionFamily) -> Window {
    let w = |lo, hi| Window { lo, hi };
    match family.interval() {
        Interval::Whole => w(0, 40),
        Interval::HalfPlus { a } => w(a, a + 40),
        Interval::HalfMinus { b } => w(b - 40, b),
        Interval::Finite { a, b } => w(a, b),
    }
}

fn need_family(input: &Input) -> CliResult<&ProjectionFamily> {
    input.family.as_ref().ok_or_else(|| usage("this command needs a projection family"))
}

fn certificate(input: &Input, c: &ConstantArgs, window: Option<Window>) -> CliResult<DichotomyCertificate> {
    let family = need_family(input)?.clone();
    let window = window.unwrap_or_else(|| default_window(&family));
    let form = form_from(c, input.form)?;
    Ok(DichotomyCertificate::new(family, form, window)?)
}

fn parse_subspace(s: &str, n: usize, tol: &Tolerances) -> CliResult<Subspace> {
    let vectors = s
        .split(';')
        .filter(|v| !v.trim().is_empty())
        .map(|v| {
            v.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| usage(format!("--subspace: bad number `{x}`"))))
                .collect::<CliResult<Vec<f64>>>()
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(Subspace::span_of(n, &vectors, tol)?)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| x.trim().parse::<T>().map_err(|_| usage(format!("{what}: bad value `{x}`"))))
        .collect()
}

fn certificate_json(cert: &DichotomyCertificate) -> CliResult<Value> {
    let projections = cert
        .window
        .iter()
        .map(|k| Ok(json!({ "k": k, "matrix": rows(cert.family.at(k)?) })))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(json!({
        "form": cert.form,
        "guaranteed": cert.guaranteed,
        "window": cert.window,
        "rank": cert.rank(),
        "projections": projections,
    }))
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).unwrap_or(Value::Null)
}

/// Runs one analysis; the flag is the verdict.
fn execute(command: &Command, tol: &Tolerances, problem: Option<&ProblemFile>) -> CliResult<(bool, Value)> {
    let load = |input: &InputArgs| load_input(input, problem, tol);
    match command {
        Command::Fixtures => {
            let list: Vec<Value> = fixture_labels()
                .into_iter()
                .map(|l| {
                    let f = fixture(l).expect("listed fixture exists");
                    json!({ "label": f.label, "description": f.description, "interval": f.sequence.interval() })
                })
                .collect();
            Ok((true, json!({ "fixtures": list })))
        }
        Command::Verify { input, constants, window } => {
            let input = load(input)?;
            let cert = certificate(&input, constants, *window)?;
            let rep = verify_with(&input.sequence, &cert.family, cert.form, cert.window, tol)?;
            Ok((rep.passed, json!({ "report": rep })))
        }
        Command::Estimate { input, alpha, l_cap, window } => {
            let input = load(input)?;
            let family = need_family(&input)?;
            let window = window.unwrap_or_else(|| default_window(family));
            let cert = estimate_constants(&input.sequence, family, window, *alpha, &EstimateConfig { l_cap: *l_cap }, tol)?;
            Ok((true, json!({ "measured": cert.form, "window": window, "rank": cert.rank() })))
        }
        Command::Convert { input, constants, to, window } => {
            let target = match to {
                FormArg::A => FormKind::A,
                FormArg::B => FormKind::B,
            };
            let have_input = input.fixture.is_some() || input.problem.is_some();
            let loaded = if have_input { Some(load(input)?) } else { None };
            let before = form_from(constants, loaded.as_ref().and_then(|i| i.form))?;
            let after = match target {
                FormKind::A => before.to_a(),
                FormKind::B => before.to_b(),
            };
            let inflation = after.l_equivalent() / before.l_equivalent();
            let mut payload = json!({ "before": before, "after": after, "inflation": inflation });
            let mut passed = true;
            if let Some(input) = loaded.filter(|i| i.family.is_some()) {
                let family = need_family(&input)?;
                let window = window.unwrap_or_else(|| default_window(family));
                let rb = verify_with(&input.sequence, family, before, window, tol)?;
                let ra = verify_with(&input.sequence, family, after, window, tol)?;
                passed = !rb.passed || ra.passed;
                payload["verification_before"] = to_value(&rb);
                payload["verification_after"] = to_value(&ra);
            }
            Ok((passed, payload))
        }
        Command::Project { input, constants, side, subspace, window } => {
            let input = load(input)?;
            let cert = certificate(&input, constants, *window)?;
            let w = parse_subspace(subspace, input.sequence.n(), tol)?;
            let q = match side {
                SideArg::Plus => change_complement_plus(&input.sequence, &cert, &w, tol)?,
                SideArg::Minus => change_complement_minus(&input.sequence, &cert, &w, tol)?,
            };
            surgery_payload(&input.sequence, &q, tol)
        }
        Command::Rebase { input, constants, side, m, subspace, window } => {
            let input = load(input)?;
            let cert = certificate(&input, constants, *window)?;
            let w = parse_subspace(subspace, input.sequence.n(), tol)?;
            let q = rebase_at_m(&input.sequence, &cert, *m, &w, (*side).into(), tol)?;
            surgery_payload(&input.sequence, &q, tol)
        }
        Command::Glue { input, constants, at, window } => {
            let input = load(input)?;
            let family = need_family(&input)?;
            let form = form_from(constants, input.form)?;
            if !window.contains(*at) {
                return Err(usage(format!("--at {at} is outside {window}")));
            }
            let est = |lo, hi| -> CliResult<DichotomyCertificate> {
                Ok(estimate_constants(&input.sequence, family, Window::new(lo, hi)?, Some(form.alpha()), &EstimateConfig::default(), tol)?)
            };
            let glued = glue_half_lines(&input.sequence, &est(*at, window.hi)?, &est(window.lo, *at)?, tol)?;
            surgery_payload(&input.sequence, &glued, tol)
        }
        Command::Extend { input, constants, to, to_zero, window } => {
            let input = load(input)?;
            let cert = certificate(&input, constants, *window)?;
            let target = if *to_zero { 0 } else { to.ok_or_else(|| usage("give --to or --to-zero"))? };
            let forward = target < cert.window.lo;
            let verdict = if forward {
                can_extend_plus(&input.sequence, &cert, target, tol)?
            } else {
                can_extend_minus(&input.sequence, &cert, target, tol)?
            };
            let mut payload = json!({ "target": target, "side": if forward { "plus" } else { "minus" }, "verdict": verdict });
            if !verdict.extendable {
                return Ok((false, payload));
            }
            let out = if forward {
                extend_plus(&input.sequence, &cert, target, tol)?
            } else {
                extend_minus(&input.sequence, &cert, target, tol)?
            };
            let c = &out.certificate;
            let measured = verify_with(&input.sequence, &c.family, c.form, c.window, tol)?;
            let guaranteed = c.guaranteed.map(|g| verify_with(&input.sequence, &c.family, g, c.window, tol)).transpose()?;
            payload["steps"] = to_value(&out.steps);
            payload["certificate"] = certificate_json(c)?;
            payload["verification"] = to_value(&measured);
            payload["guaranteed_verification"] = to_value(&guaranteed);
            let passed = measured.passed && guaranteed.as_ref().is_none_or(|g| g.passed);
            Ok((passed, payload))
        }
        Command::Embed { input, constants, window, check_window } => {
            let input = load(input)?;
            let cert = certificate(&input, constants, *window)?;
            let emb = embed_in_z(&input.sequence, &cert, tol)?;
            let check = check_window.unwrap_or(Window { lo: cert.window.lo - 20, hi: cert.window.hi + 20 });
            let rep = verify_with(&emb.sequence, &emb.certificate.family, cert.form, check, tol)?;
            let payload = json!({
                "commute_residual": emb.commute_residual,
                "below": emb.below.as_ref().map(rows),
                "above": emb.above.as_ref().map(rows),
                "report": rep,
            });
            Ok((rep.passed, payload))
        }
        Command::Perturb { input, constants, delta, seed, window, region, fixed_point_tol } => {
            let input = load(input)?;
            let cert = certificate(&input, constants, Some(*window))?;
            if !(delta.is_finite() && *delta >= 0.0) {
                return Err(usage("--delta must be finite and nonnegative"));
            }
            let b = random_perturbation(input.sequence.n(), *window, *delta, *seed);
            let config = FixedPointConfig { tol: *fixed_point_tol, ..FixedPointConfig::default() };
            let out = verify_roughness(&input.sequence, &cert, &b, *window, *region, &config, tol)?;
            let q: Vec<Value> = region
                .iter()
                .map(|k| Ok(json!({ "k": k, "matrix": rows(out.family.at(k)?) })))
                .collect::<CliResult<_>>()?;
            Ok((out.report.passed, json!({ "seed": seed, "report": out.report, "perturbed_projections": q })))
        }
        Command::Constants { k, alpha, delta, ode, d, mu, backward } => {
            let mut payload = if *ode {
                let c = ode_constants(*k, *alpha, *delta)?;
                json!({ "ode": c, "admissible": c.admissible })
            } else {
                let c = predicted_constants(*k, *alpha, *delta)?;
                json!({ "discrete": c, "admissible": c.admissible })
            };
            let mut passed = payload["admissible"].as_bool().unwrap_or(false);
            if let Some(d) = d {
                let values = mu.as_deref().map(|s| parse_list::<f64>(s, "--mu")).transpose()?.unwrap_or_default();
                let side = if *backward { BoundSide::Backward } else { BoundSide::Forward };
                let input = GrowthBoundInput { mu: values, d: *d, alpha: *alpha, delta: *delta };
                let bound = sequence_bound(&input, side)?;
                passed &= bound.consistent;
                payload["sequence_bound"] = to_value(&bound);
            }
            Ok((passed, payload))
        }
        Command::FiniteTime { input, n_len, density, k, alpha, m, k_bar, beta_bar, scan, base } => {
            let input = load(input)?;
            let base_points = base.as_deref().map(|s| parse_list::<i64>(s, "--base")).transpose()?.unwrap_or_default();
            let hyp = FiniteTimeHypothesis {
                n_len: *n_len,
                base_points,
                density: *density,
                k: *k,
                alpha: *alpha,
                m_bound: *m,
                k_bar: *k_bar,
                beta_bar: *beta_bar,
            };
            let rep = finite_time_check(&input.sequence, &hyp, *scan, tol)?;
            Ok((rep.hypotheses_hold, json!({ "hypothesis": hyp, "report": rep })))
        }
    }
}

fn surgery_payload(seq: &CoefficientSequence, cert: &DichotomyCertificate, tol: &Tolerances) -> CliResult<(bool, Value)> {
    let measured = verify_with(seq, &cert.family, cert.form, cert.window, tol)?;
    let guaranteed = cert.guaranteed.map(|g| verify_with(seq, &cert.family, g, cert.window, tol)).transpose()?;
    let passed = measured.passed && guaranteed.as_ref().is_none_or(|g| g.passed);
    Ok((
        passed,
        json!({
            "certificate": certificate_json(cert)?,
            "verification": measured,
            "guaranteed_verification": guaranteed,
        }),
    ))
}

#[derive(Serialize)]
struct Report {
    schema_version: u32,
    command: String,
    args: Vec<String>,
    verdict: &'static str,
    tolerances: Tolerances,
    payload: Value,
    error_code: Option<String>,
    message: Option<String>,
}

/// Result of one invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub exit_code: i32,
    /// JSON report, or help text for --help and --version.
    pub output: String,
    /// Set when the report goes to a file.
    pub out_path: Option<PathBuf>,
}

fn render(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).unwrap_or_else(|e| format!("{{\"error\": \"{e}\"}}"));
    s.push('\n');
    s
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let base = Report {
        schema_version: SCHEMA_VERSION,
        command: String::new(),
        args,
        verdict: "error",
        tolerances: Tolerances::default(),
        payload: Value::Null,
        error_code: None,
        message: None,
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                return Outcome { exit_code: 0, output: e.to_string(), out_path: None };
            }
            let report = Report { error_code: Some("usage".into()), message: Some(e.to_string()), ..base };
            return Outcome { exit_code: 2, output: render(&report), out_path: None };
        }
    };
    let mut report = Report { command: cli.command.name().into(), ..base };
    let result = (|| -> CliResult<(bool, Value)> {
        let problem = match &cli.command {
            Command::Verify { input, .. }
            | Command::Estimate { input, .. }
            | Command::Convert { input, .. }
            | Command::Project { input, .. }
            | Command::Rebase { input, .. }
            | Command::Glue { input, .. }
            | Command::Extend { input, .. }
            | Command::Embed { input, .. }
            | Command::Perturb { input, .. }
            | Command::FiniteTime { input, .. } => input.problem.as_deref().map(read_problem).transpose()?,
            Command::Constants { .. } | Command::Fixtures => None,
        };
        let mut tol = Tolerances::default();
        if let Some(v) = problem.as_ref().and_then(|p| p.tolerances.as_ref()) {
            tol = overlay_tolerances(tol, v, "tolerances")?;
        }
        tol = env_tolerances(tol)?;
        report.tolerances = tol;
        execute(&cli.command, &tol, problem.as_ref())
    })();
    let exit_code = match result {
        Ok((passed, payload)) => {
            report.verdict = if passed { "pass" } else { "fail" };
            report.payload = payload;
            if passed {
                0
            } else {
                1
            }
        }
        Err(e) => {
            report.error_code = Some(e.code().into());
            report.message = Some(e.to_string());
            let code = e.exit_code();
            report.verdict = if code == 1 { "fail" } else { "error" };
            code
        }
    };
    Outcome { exit_code, output: render(&report), out_path: cli.out }
}
