//! `affinv`: validate, canonicalize, decompose, classify and simulate affine
//! diffusion models given as JSON files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use affinv_core::affine_core::ModelFile;
use affinv_core::polyhedral::{
    canonical_transform_with, check_polyhedral_admissibility_with, psd_decompose_with, AdmissibilityReport,
};
use affinv_core::quadratic::{classify_quadric, validate_quadratic, QuadraticValidation};
use affinv_core::sde_sim::{build_root, mean_and_se, mean_ode, simulate_paths, simulate_summary, ExitStats};
use affinv_core::{convex_oracle, Error, ModelSpec, Scheme, SimConfig, StateSpace, Tolerances};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

const SCHEMA: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "affinv", version, about = "Admissibility checks and simulation for affine diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Write the JSON report here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replace every numeric tolerance of the polyhedral checks with this value.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the admissibility checks for the model's state-space kind.
    Validate { model: PathBuf },
    /// Transform to canonical coordinates and write the transformed model.
    Canonicalize { model: PathBuf },
    /// Decompose the diffusion matrix.
    Decompose { model: PathBuf },
    /// Classify the quadric of a quadratic state space.
    Classify { model: PathBuf },
    /// Euler simulation with Monte Carlo statistics.
    Simulate {
        model: PathBuf,
        /// Horizon T.
        #[arg(long = "t", default_value_t = 1.0)]
        horizon: f64,
        /// Number of steps; defaults to 1000 per unit time.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        /// Initial state, comma separated; defaults to an interior point for polyhedra.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = SchemeArg::FullTruncation)]
        scheme: SchemeArg,
        /// Dump all paths as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    FullTruncation,
    Plain,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::FullTruncation => Scheme::FullTruncationEuler,
            SchemeArg::Plain => Scheme::PlainEuler,
        }
    }
}

/// Failure modes mapped to exit codes.
enum Failure {
    Parse(String),
    Internal(String),
}

fn internal(e: impl std::fmt::Display) -> Failure {
    Failure::Internal(e.to_string())
}

/// Errors that signal a bug or solver breakdown rather than a failed check.
fn is_internal(e: &Error) -> bool {
    matches!(e, Error::NumericalFailure(_) | Error::Lp(_))
}

struct Check {
    name: String,
    passed: bool,
    required: bool,
    margin: Option<f64>,
    certificate: Value,
    witness: Option<Vec<f64>>,
    detail: Option<String>,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, required: bool) -> Self {
        Self {
            name: name.into(),
            passed,
            required,
            margin: None,
            certificate: Value::Null,
            witness: None,
            detail: None,
        }
    }

    fn margin(mut self, m: Option<f64>) -> Self {
        self.margin = m.filter(|v| v.is_finite());
        self
    }

    fn certificate(mut self, c: Value) -> Self {
        self.certificate = c;
        self
    }

    fn witness(mut self, w: Option<Vec<f64>>) -> Self {
        self.witness = w;
        self
    }

    fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = Some(d.into());
        self
    }

    fn from_error(name: impl Into<String>, required: bool, e: &Error) -> Self {
        Check::new(name, false, required)
            .margin(e.margin())
            .witness(e.witness().map(<[f64]>::to_vec))
            .detail(e.to_string())
    }

    fn to_json(&self) -> Value {
        json!({
            "name": self.name,
            "passed": self.passed,
            "required": self.required,
            "margin": self.margin,
            "certificate": self.certificate,
            "witness": self.witness,
            "detail": self.detail,
        })
    }
}

struct Report {
    command: &'static str,
    model: Value,
    checks: Vec<Check>,
    body: serde_json::Map<String, Value>,
}

impl Report {
    fn new(command: &'static str, model: &ModelSpec) -> Self {
        Self {
            command,
            model: model_echo(model),
            checks: Vec::new(),
            body: serde_json::Map::new(),
        }
    }

    fn passed(&self) -> bool {
        self.checks.iter().filter(|c| c.required).all(|c| c.passed)
    }

    fn insert(&mut self, key: &str, v: Value) {
        self.body.insert(key.into(), v);
    }

    fn to_json(&self) -> Value {
        let mut out = serde_json::Map::new();
        out.insert("schema".into(), json!(SCHEMA));
        out.insert("command".into(), json!(self.command));
        out.insert("model".into(), self.model.clone());
        out.insert("passed".into(), json!(self.passed()));
        out.insert("checks".into(), Value::Array(self.checks.iter().map(Check::to_json).collect()));
        out.extend(self.body.clone());
        Value::Object(out)
    }
}

fn model_hash(model: &ModelSpec) -> String {
    let digest = Sha256::digest(model.to_json_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn model_echo(model: &ModelSpec) -> Value {
    let (kind, facets) = match &model.state_space {
        StateSpace::Polyhedral(p) => ("polyhedral", Some(p.nfacets())),
        StateSpace::Quadratic(_) => ("quadratic", None),
    };
    json!({
        "sha256": model_hash(model),
        "dimension": model.dimension,
        "state_space": kind,
        "facets": facets,
    })
}

fn load_model(path: &Path) -> Result<ModelSpec, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))?;
    file.into_model().map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))
}

fn polyhedral_checks(rep: &AdmissibilityReport) -> Vec<Check> {
    let mut out = Vec::new();
    for f in &rep.facets {
        let diff = Check::new(format!("facet {} diffusion", f.facet), f.diffusion_ok, true)
            .margin(f.diffusion_margin)
            .witness(f.diffusion_witness.clone())
            .certificate(json!({ "multiple": f.diffusion_multiple }));
        out.push(match &f.diffusion_detail {
            Some(d) => diff.detail(d.clone()),
            None => diff,
        });
        out.push(
            Check::new(format!("facet {} drift", f.facet), f.drift_ok, true)
                .margin(f.drift_margin)
                .witness(f.drift_witness.clone())
                .certificate(serde_json::to_value(&f.drift_certificate).unwrap_or(Value::Null)),
        );
    }
    out
}

fn quadratic_checks(v: &QuadraticValidation) -> Vec<Check> {
    use affinv_core::quadratic::QuadricSubtype;
    let mut out = Vec::new();
    let sub = v.classification.subtype;
    let cls = Check::new("quadric is parabolic or conical", sub != QuadricSubtype::Excluded, false)
        .certificate(v.classification.to_json());
    out.push(match sub {
        QuadricSubtype::Excluded => cls.detail("only theta = 0 is tangent to this quadric"),
        _ => cls,
    });
    if let Some(z) = v.theta_is_zero {
        out.push(Check::new("theta vanishes identically", z, true));
    }
    if sub == QuadricSubtype::Excluded {
        return out;
    }
    let side = v.normalized_model.quadratic().map(|q| q.component);
    out.push(
        Check::new("state space lies on the positive side", side == Some(affinv_core::Side::Positive), true)
            .detail(format!("component {:?} after normalization", side)),
    );
    match sub {
        QuadricSubtype::Parabolic => {
            out.push(match &v.decomposition {
                Ok(d) => Check::new("parabolic decomposition", true, true).certificate(d.to_json()),
                Err(e) => Check::from_error("parabolic decomposition", true, e),
            });
            if let Some(p) = &v.psd {
                out.push(
                    Check::new("PSD condition", p.passed, true)
                        .margin(Some(p.min_eigenvalue))
                        .witness(p.witness.clone())
                        .detail(if p.structural { "structural" } else { "sampled" }),
                );
            }
            if let Some(d) = &v.parabolic_drift {
                let closed = v.normalized_model.quadratic().is_some_and(|q| q.closed);
                let (ok, margin) = if closed {
                    (d.closed_admissible(), d.closed_margin)
                } else {
                    (d.open_invariant(), d.open_margin)
                };
                out.push(
                    Check::new("parabolic drift", ok, true)
                        .margin(Some(margin))
                        .certificate(serde_json::to_value(d).unwrap_or(Value::Null)),
                );
            }
        }
        QuadricSubtype::Cone => {
            let closed = v.normalized_model.quadratic().is_some_and(|q| q.closed);
            out.push(Check::new("cone state space is open", !closed, true));
            out.push(match &v.decomposition {
                Ok(d) => Check::new("conical decomposition", true, false).certificate(d.to_json()),
                Err(e) => Check::from_error("conical decomposition", false, e),
            });
            if let Some(c) = &v.cone {
                out.push(
                    Check::new("cone drift", c.admissible(), true)
                        .margin(Some(c.b_margin.min(c.min_eigenvalue).min(-c.symmetry_violation) + 0.0))
                        .certificate(serde_json::to_value(c).unwrap_or(Value::Null)),
                );
            }
        }
        QuadricSubtype::Excluded => {}
    }
    if let Some(oi) = &v.open_invariance {
        out.push(match oi {
            Ok(r) => Check::new("open set invariance", r.passed, false)
                .margin(Some(r.sampled_min))
                .witness(r.witness.clone())
                .certificate(serde_json::to_value(r).unwrap_or(Value::Null)),
            Err(e) => Check::from_error("open set invariance", false, e),
        });
    }
    out
}

fn cmd_validate(model: &ModelSpec, tol: &Tolerances) -> Result<Report, Failure> {
    let mut rep = Report::new("validate", model);
    match &model.state_space {
        StateSpace::Polyhedral(_) => {
            let adm = check_polyhedral_admissibility_with(model, tol).map_err(internal)?;
            rep.checks.extend(polyhedral_checks(&adm));
            rep.insert("admissibility", serde_json::to_value(&adm).map_err(internal)?);
            match psd_decompose_with(model, tol) {
                Ok(d) => {
                    rep.checks.push(Check::new("PSD facet decomposition", true, false));
                    rep.insert("decomposition", d.to_json());
                }
                Err(e) if is_internal(&e) => return Err(internal(e)),
                Err(e) => rep.checks.push(Check::from_error("PSD facet decomposition", false, &e)),
            }
        }
        StateSpace::Quadratic(_) => {
            let v = validate_quadratic(model).map_err(internal)?;
            rep.checks.extend(quadratic_checks(&v));
            rep.insert("quadratic", v.to_json());
        }
    }
    Ok(rep)
}

fn cmd_canonicalize(model: &ModelSpec, tol: &Tolerances) -> Result<Report, Failure> {
    let mut rep = Report::new("canonicalize", model);
    match &model.state_space {
        StateSpace::Polyhedral(_) => match canonical_transform_with(model, tol) {
            Ok(ct) => {
                rep.checks.push(
                    Check::new("block identity", ct.block_residual <= tol.residual.max(1e-9), true).margin(Some(ct.block_residual)),
                );
                rep.insert("transform", ct.to_json());
            }
            Err(e) if is_internal(&e) => return Err(internal(e)),
            Err(e) => rep.checks.push(Check::from_error("canonical transform", true, &e)),
        },
        StateSpace::Quadratic(_) => {
            let v = validate_quadratic(model).map_err(internal)?;
            rep.checks.push(Check::new("classification", true, true).certificate(v.classification.to_json()));
            rep.insert(
                "transform",
                json!({
                    "map": v.map.to_json(),
                    "transformed_model": v.normalized_model.to_json_value(),
                }),
            );
        }
    }
    Ok(rep)
}

fn cmd_decompose(model: &ModelSpec, tol: &Tolerances) -> Result<Report, Failure> {
    let mut rep = Report::new("decompose", model);
    match &model.state_space {
        StateSpace::Polyhedral(_) => match psd_decompose_with(model, tol) {
            Ok(d) => {
                rep.checks.push(Check::new("PSD facet decomposition", true, true).margin(Some(d.min_eigenvalue)));
                rep.insert("decomposition", d.to_json());
            }
            Err(e) if is_internal(&e) => return Err(internal(e)),
            Err(e) => rep.checks.push(Check::from_error("PSD facet decomposition", true, &e)),
        },
        StateSpace::Quadratic(_) => {
            let v = validate_quadratic(model).map_err(internal)?;
            match &v.decomposition {
                Ok(d) => {
                    rep.checks.push(Check::new("decomposition", true, true));
                    rep.insert("decomposition", d.to_json());
                }
                Err(e) => rep.checks.push(Check::from_error("decomposition", true, e)),
            }
            rep.insert("map", v.map.to_json());
        }
    }
    Ok(rep)
}

fn cmd_classify(model: &ModelSpec) -> Result<Report, Failure> {
    let q = model
        .quadratic()
        .ok_or_else(|| Failure::Parse("classify needs a quadratic state space".into()))?;
    let mut rep = Report::new("classify", model);
    let cls = classify_quadric(&q.phi).map_err(internal)?;
    rep.checks.push(Check::new("classification", true, true).margin(Some(cls.residual)));
    rep.insert("classification", cls.to_json());
    Ok(rep)
}

struct SimArgs {
    horizon: f64,
    steps: Option<usize>,
    paths: usize,
    x0: Option<Vec<f64>>,
    scheme: Scheme,
    csv: Option<PathBuf>,
}

fn default_x0(model: &ModelSpec) -> Result<Vec<f64>, Failure> {
    match &model.state_space {
        StateSpace::Polyhedral(p) => convex_oracle::interior_point(p)
            .map(|x| x.iter().copied().collect())
            .ok_or_else(|| Failure::Parse("state space has empty interior; pass --x0".into())),
        StateSpace::Quadratic(_) => Err(Failure::Parse("quadratic models need --x0".into())),
    }
}

fn cmd_simulate(model: &ModelSpec, args: SimArgs, seed: u64, tol: Option<f64>) -> Result<Report, Failure> {
    let mut rep = Report::new("simulate", model);
    let x0 = match args.x0 {
        Some(x) => x,
        None => default_x0(model)?,
    };
    if !(args.horizon > 0.0 && args.horizon.is_finite()) || args.paths == 0 {
        return Err(Failure::Parse("--t must be positive and --paths at least 1".into()));
    }
    let steps = args.steps.unwrap_or(((1000.0 * args.horizon).ceil() as usize).max(1));
    let cfg = SimConfig {
        x0,
        horizon: args.horizon,
        steps,
        n_paths: args.paths,
        seed,
        scheme: args.scheme,
    };
    let root = match build_root(model) {
        Ok(r) => r,
        Err(e) if is_internal(&e) => return Err(internal(e)),
        Err(e) => {
            rep.checks.push(Check::from_error("square root", true, &e));
            return Ok(rep);
        }
    };
    let stats_tol = tol.unwrap_or(affinv_core::sde_sim::EXIT_TOL);
    let (finals, stats) = if let Some(path) = &args.csv {
        let ens = match simulate_paths(model, root.as_ref(), &cfg) {
            Ok(e) => e,
            Err(e) => {
                rep.checks.push(Check::from_error("simulation", true, &e));
                return Ok(rep);
            }
        };
        let file = std::fs::File::create(path).map_err(internal)?;
        ens.write_csv(std::io::BufWriter::new(file)).map_err(internal)?;
        let finals: Vec<Vec<f64>> = (0..ens.n_paths).map(|i| ens.final_state(i).to_vec()).collect();
        (finals, affinv_core::sde_sim::invariance_monte_carlo(&ens, &model.state_space, stats_tol))
    } else {
        let sums = match simulate_summary(model, root.as_ref(), &cfg, None, 0.0) {
            Ok(s) => s,
            Err(e) => {
                rep.checks.push(Check::from_error("simulation", true, &e));
                return Ok(rep);
            }
        };
        let stats = ExitStats::from_summaries(&sums, steps);
        (sums.into_iter().map(|s| s.final_state).collect(), stats)
    };
    rep.checks.push(Check::new("simulation", true, true));
    let p = model.dimension;
    let ode = mean_ode(&model.drift, &cfg.x0, cfg.horizon);
    let m_ode = ode.means.last().expect("trajectory is nonempty");
    let mut means = Vec::with_capacity(p);
    let mut ses = Vec::with_capacity(p);
    for i in 0..p {
        let xs: Vec<f64> = finals.iter().map(|x| x[i]).filter(|v| v.is_finite()).collect();
        let (m, se) = mean_and_se(&xs);
        means.push(m);
        ses.push(se);
    }
    let worst_dev = (0..p).map(|i| (means[i] - m_ode[i]).abs() - 3.0 * ses[i]).fold(f64::NEG_INFINITY, f64::max);
    rep.checks.push(Check::new("mean within 3 SE of the mean ODE", worst_dev <= 0.0, false).margin(Some(-worst_dev)));
    rep.checks.push(Check::new("no path left the state space", stats.exit_fraction == 0.0, false).margin(Some(-stats.exit_fraction)));
    let exits: Vec<Value> = stats
        .first_exit_histogram
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(k, &c)| json!([k, c]))
        .collect();
    rep.insert(
        "simulation",
        json!({
            "config": cfg,
            "final_mean": means,
            "final_se": ses,
            "mean_ode": m_ode.as_slice(),
            "exit_fraction": stats.exit_fraction,
            "worst_violation": stats.worst_violation,
            "first_exits": exits,
            "nonfinite_paths": stats.nonfinite_paths,
            "csv": args.csv.as_ref().map(|p| p.display().to_string()),
        }),
    );
    Ok(rep)
}

fn run(cli: Cli) -> Result<Report, Failure> {
    let tol = cli.tol.map(Tolerances::uniform).unwrap_or_default();
    if let Some(t) = cli.tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Failure::Parse("--tol must be positive".into()));
        }
    }
    match cli.command {
        Command::Validate { model } => cmd_validate(&load_model(&model)?, &tol),
        Command::Canonicalize { model } => cmd_canonicalize(&load_model(&model)?, &tol),
        Command::Decompose { model } => cmd_decompose(&load_model(&model)?, &tol),
        Command::Classify { model } => cmd_classify(&load_model(&model)?),
        Command::Simulate {
            model,
            horizon,
            steps,
            paths,
            x0,
            scheme,
            csv,
        } => {
            let m = load_model(&model)?;
            let args = SimArgs {
                horizon,
                steps,
                paths,
                x0,
                scheme: scheme.into(),
                csv,
            };
            cmd_simulate(&m, args, cli.seed, cli.tol)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let out = cli.out.clone();
    match run(cli) {
        Ok(rep) => {
            let text = serde_json::to_string_pretty(&rep.to_json()).expect("report serializes");
            let written = match &out {
                Some(p) => std::fs::write(p, text + "\n"),
                None => {
                    use std::io::Write;
                    writeln!(std::io::stdout().lock(), "{text}")
                }
            };
            if let Err(e) = written {
                eprintln!("error: cannot write report: {e}");
                return ExitCode::from(3);
            }
            ExitCode::from(if rep.passed() { 0 } else { 1 })
        }
        Err(Failure::Parse(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(3)
        }
    }
}
