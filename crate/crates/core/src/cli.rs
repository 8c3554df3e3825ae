//! Command-line driver: `synth`, `separate` and `eval`.
//!
//! Exit codes: 0 on success, 1 for usage or data errors, 2 when a solver did
//! not converge (outputs are still written, with `"converged": false`).

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use crate::clustering::{estimate_mixing_by_clustering, ClusterOptions};
use crate::cone;
use crate::error::{Error, Result};
use crate::io;
use crate::l1::{self, L1Mode, L1Options, Mu};
use crate::metrics;
use crate::model::{condition_number, Matrix, ModelDims};
use crate::qp::{self, QpOptions};
use crate::synth::{self, DISourceSpec, MixingSpec, Preset};

#[derive(Debug, Parser)]
#[command(name = "degensep", version, about = "Blind source separation for nearly degenerate nonnegative mixtures")]
pub struct Cli {
    /// Seed for generation and clustering restarts.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario (A.csv, S.csv, X.csv, meta.json).
    Synth(SynthArgs),
    /// Estimate the mixing matrix and recover the sources.
    Separate(SeparateArgs),
    /// Compare recovered sources (and mixing matrix) against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MixingChoice {
    Pcc,
    Ocdc,
    Generic,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Named scenario; overrides the layout flags below.
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    /// Signal-to-noise ratio in dB; noiseless when absent.
    #[arg(long)]
    pub snr_db: Option<f64>,
    #[arg(long, value_enum, default_value = "pcc")]
    pub mixing: MixingChoice,
    #[arg(long, default_value_t = 2)]
    pub sources: usize,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    /// Target condition number for `--mixing pcc`.
    #[arg(long, default_value_t = 1e8)]
    pub condition: f64,
    /// Give every source a sample where the others vanish.
    #[arg(long)]
    pub stand_alone: bool,
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse::<Preset>().map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Nn,
    Kmeans,
    KmeansQp,
    KmeansL1,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Nn => "nn",
            Method::Kmeans => "kmeans",
            Method::KmeansQp => "kmeans-qp",
            Method::KmeansL1 => "kmeans-l1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum L1ModeArg {
    Penalized,
    Lp,
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    /// X.csv, or a scenario directory containing it.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Number of sources; defaults to the number of mixtures.
    #[arg(long)]
    pub sources: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub restarts: usize,
    /// Relative column-norm floor for clustering and scoring.
    #[arg(long, default_value_t = 0.02)]
    pub norm_floor: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub feas_tol: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub stat_tol: f64,
    /// Penalty weight relative to `max |ÂᵀX|` (columns of Â at unit norm).
    #[arg(long, default_value_t = 1e-4)]
    pub mu: f64,
    #[arg(long, value_enum, default_value = "penalized")]
    pub l1_mode: L1ModeArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Output directory of `separate`; supplies S_hat.csv and A_hat.csv.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Scenario directory; supplies S.csv and A.csv.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub s_hat: Option<PathBuf>,
    #[arg(long)]
    pub s_true: Option<PathBuf>,
    #[arg(long)]
    pub a_hat: Option<PathBuf>,
    #[arg(long)]
    pub a_true: Option<PathBuf>,
}

/// Result of a command that produced its outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    NotConverged,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::NotConverged => 2,
        }
    }
}

/// Parses arguments, runs, reports errors on stderr and returns the exit
/// code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            if outcome == Outcome::NotConverged {
                eprintln!("warning: solver did not converge; best-effort outputs written");
            }
            outcome.code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_convergence() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let out = cli.out.as_deref().ok_or_else(|| Error::usage("--out is required"))?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, cli.seed, out),
        Command::Separate(a) => cmd_separate(a, cli.seed, out),
        Command::Eval(a) => cmd_eval(a, out),
    }
}

fn synth_specs(args: &SynthArgs) -> Result<(DISourceSpec, MixingSpec)> {
    if let Some(p) = args.preset {
        return Ok(p.specs());
    }
    let src = DISourceSpec::banded(args.sources, args.samples).with_stand_alone(args.stand_alone);
    let mix = match args.mixing {
        MixingChoice::Pcc => MixingSpec::pcc(args.sources, args.condition),
        MixingChoice::Ocdc => {
            if args.sources < 2 {
                return Err(Error::usage("ocdc mixing needs at least two sources"));
            }
            let k = args.sources - 1;
            MixingSpec::ocdc(vec![1.0 / k as f64; k], 0.0)
        }
        MixingChoice::Generic => MixingSpec::generic(args.sources),
    };
    Ok((src, mix))
}

pub fn cmd_synth(args: &SynthArgs, seed: u64, out: &Path) -> Result<Outcome> {
    let (src, mix) = synth_specs(args)?;
    let sc = synth::make_scenario(&src, &mix, args.snr_db, seed)?;
    io::create_dir(out)?;
    io::write_csv(&out.join("A.csv"), &sc.a)?;
    io::write_csv(&out.join("S.csv"), &sc.s)?;
    io::write_csv(&out.join("X.csv"), &sc.x)?;
    let meta = json!({
        "schema": 1,
        "preset": args.preset.map(Preset::name),
        "seed": seed,
        "snr_db": sc.snr_db,
        "measured_snr_db": sc.measured_snr_db,
        "dims": ModelDims::of(&sc.a, &sc.s)?,
        "condition_number": finite_or_null(condition_number(&sc.a)?),
        "source_spec": src,
        "mixing_spec": mix,
    });
    io::write_json(&out.join("meta.json"), &meta)?;
    Ok(Outcome::Success)
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn input_matrix(path: &Path) -> Result<Matrix> {
    let file = if path.is_dir() { path.join("X.csv") } else { path.to_path_buf() };
    let x = io::read_csv(&file)?;
    if !x.is_nonneg() {
        return Err(Error::data(format!("{} has negative entries", file.display())));
    }
    Ok(x)
}

pub fn cmd_separate(args: &SeparateArgs, seed: u64, out: &Path) -> Result<Outcome> {
    let x = input_matrix(&args.input)?;
    let n = args.sources.unwrap_or(x.rows());
    if n < 2 {
        return Err(Error::usage("at least two sources are required"));
    }
    if n != x.rows() {
        return Err(Error::usage(format!("{n} sources requested but the data has {} mixtures", x.rows())));
    }
    ModelDims::new(x.rows(), n, x.cols())?;

    // Validate every option before computing anything.
    let cluster_opts = ClusterOptions { restarts: args.restarts, norm_floor: args.norm_floor, ..ClusterOptions::new(n) }.with_seed(seed);
    let qp_opts = QpOptions { feas_tol: args.feas_tol, stat_tol: args.stat_tol, ..QpOptions::default() };
    let l1_opts = L1Options {
        mu: Mu::Relative(args.mu),
        mode: match args.l1_mode {
            L1ModeArg::Penalized => L1Mode::Penalized,
            L1ModeArg::Lp => L1Mode::EqualityLp,
        },
        ..L1Options::default()
    };
    let mut options = Map::new();
    match args.method {
        Method::Nn => {
            if !(0.0..1.0).contains(&args.norm_floor) {
                return Err(Error::usage("norm floor must lie in [0, 1)"));
            }
            options.insert("norm_floor".into(), json!(args.norm_floor));
        }
        Method::Kmeans => {
            cluster_opts.validate()?;
            options.insert("clustering".into(), serde_json::to_value(&cluster_opts)?);
        }
        Method::KmeansQp => {
            cluster_opts.validate()?;
            qp_opts.validate()?;
            options.insert("clustering".into(), serde_json::to_value(&cluster_opts)?);
            options.insert("qp".into(), serde_json::to_value(&qp_opts)?);
        }
        Method::KmeansL1 => {
            cluster_opts.validate()?;
            l1_opts.validate()?;
            options.insert("clustering".into(), serde_json::to_value(&cluster_opts)?);
            options.insert("l1".into(), serde_json::to_value(&l1_opts)?);
        }
    }

    let mut timings = Map::new();
    let mut solver_reports = Map::new();
    let mut conds = Map::new();
    let mut warnings: Vec<String> = Vec::new();
    let mut converged = true;
    let mut a_refined: Option<Matrix> = None;
    let t_all = Instant::now();

    let t = Instant::now();
    let a_hat = match args.method {
        Method::Nn => {
            let scores = cone::score_columns(&x, args.norm_floor)?;
            cone::select_extreme_columns(&scores, &x, n, cone::DEFAULT_MIN_ANGLE)?
        }
        _ => {
            let r = estimate_mixing_by_clustering(&x, &cluster_opts)?;
            solver_reports.insert(
                "clustering".into(),
                json!({ "inertia": r.inertia, "best_restart": r.best_restart, "retained_columns": r.retained.len() }),
            );
            r.estimate
        }
    };
    timings.insert("estimate_seconds".into(), json!(t.elapsed().as_secs_f64()));
    conds.insert("a_hat".into(), finite_or_null(a_hat.condition_number));

    let t = Instant::now();
    let s_hat = match args.method {
        Method::Nn | Method::Kmeans => {
            let (s, warn) = cone::recover_pseudo_inverse(&a_hat.matrix, &x)?;
            warnings.extend(warn);
            s
        }
        Method::KmeansQp => {
            let (pinv_s, warn) = cone::recover_pseudo_inverse(&a_hat.matrix, &x)?;
            warnings.extend(warn);
            solver_reports.insert(
                "pseudo_inverse".into(),
                json!({ "negative_energy_ratio": metrics::negative_energy_ratio(&pinv_s) }),
            );
            let res = match qp::refine_inverse(&a_hat.matrix, &x, &qp_opts) {
                Ok(r) => r,
                Err(Error::QpNotConverged(r)) => {
                    converged = false;
                    *r
                }
                Err(e) => return Err(e),
            };
            let mut rep = serde_json::to_value(&res.report)?;
            rep["reference_objective"] = json!(res.reference_objective);
            rep["active_constraints"] = json!(res.multipliers.len());
            solver_reports.insert("qp".into(), rep);
            match qp::implied_mixing(&res.b, &a_hat.matrix) {
                Ok(est) => {
                    conds.insert("a_refined".into(), finite_or_null(est.condition_number));
                    a_refined = Some(est.matrix);
                }
                Err(e) => warnings.push(format!("implied mixing matrix unavailable: {e}")),
            }
            res.s_hat
        }
        Method::KmeansL1 => {
            let r = l1::recover_sources_l1_best_effort(&a_hat.matrix, &x, &l1_opts)?;
            if r.is_failure() {
                converged = false;
            }
            let iters: usize = r.reports.iter().map(|c| c.iterations).sum();
            let worst = r.reports.iter().map(|c| c.optimality).fold(0.0, f64::max);
            let nnz: usize = r.reports.iter().map(|c| c.nnz).sum();
            solver_reports.insert(
                "l1".into(),
                json!({
                    "mu": r.mu,
                    "columns": r.reports.len(),
                    "failed_columns": r.failed,
                    "total_iterations": iters,
                    "max_optimality_violation": worst,
                    "total_nnz": nnz,
                    "converged": !r.is_failure(),
                }),
            );
            r.s_hat
        }
    };
    timings.insert("recover_seconds".into(), json!(t.elapsed().as_secs_f64()));
    timings.insert("total_seconds".into(), json!(t_all.elapsed().as_secs_f64()));

    io::create_dir(out)?;
    io::write_csv(&out.join("A_hat.csv"), &a_hat.matrix)?;
    io::write_csv(&out.join("S_hat.csv"), &s_hat)?;
    if let Some(a) = &a_refined {
        io::write_csv(&out.join("A_refined.csv"), a)?;
    }
    let report = json!({
        "schema": 1,
        "method": args.method.name(),
        "seed": seed,
        "dims": { "m": x.rows(), "n": n, "p": x.cols() },
        "options": options,
        "solver_reports": solver_reports,
        "condition_numbers": conds,
        "negative_energy_ratio": metrics::negative_energy_ratio(&s_hat),
        "warnings": warnings,
        "converged": converged,
        "timings": timings,
    });
    io::write_json(&out.join("report.json"), &report)?;
    Ok(if converged { Outcome::Success } else { Outcome::NotConverged })
}

/// Explicit path, else `name` inside `dir`.
fn pick(explicit: &Option<PathBuf>, dir: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
    explicit.clone().or_else(|| dir.as_ref().map(|d| d.join(name)))
}

/// Like [`pick`], but a file from `dir` that does not exist counts as absent.
fn pick_optional(explicit: &Option<PathBuf>, dir: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
    explicit.clone().or_else(|| dir.as_ref().map(|d| d.join(name)).filter(|p| p.exists()))
}

pub fn cmd_eval(args: &EvalArgs, out: &Path) -> Result<Outcome> {
    let s_hat_path = pick(&args.s_hat, &args.run, "S_hat.csv").ok_or_else(|| Error::usage("need --s-hat or --run"))?;
    let s_true_path = pick(&args.s_true, &args.truth, "S.csv").ok_or_else(|| Error::usage("need --s-true or --truth"))?;
    let s_hat = io::read_csv(&s_hat_path)?;
    let s_true = io::read_csv(&s_true_path)?;
    let a_hat = pick_optional(&args.a_hat, &args.run, "A_hat.csv").map(|p| io::read_csv(&p)).transpose()?;
    let a_true = pick_optional(&args.a_true, &args.truth, "A.csv").map(|p| io::read_csv(&p)).transpose()?;
    let mixing = match (&a_hat, &a_true) {
        (Some(h), Some(t)) => Some((h, t)),
        (None, None) => None,
        _ if args.a_hat.is_some() || args.a_true.is_some() => {
            return Err(Error::usage("--a-hat and --a-true must be given together"));
        }
        _ => None,
    };
    let report = metrics::evaluate(&s_hat, &s_true, mixing)?;
    io::create_dir(out)?;
    io::write_json(&out.join("eval.json"), &report)?;
    let mut traces = String::from("sample_index,source_id,true_value,recovered_value\n");
    for (i, k, t, r) in metrics::traces(&s_hat, &s_true, &report) {
        traces.push_str(&format!("{i},{k},{t:.16e},{r:.16e}\n"));
    }
    let path = out.join("traces.csv");
    std::fs::write(&path, traces).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    Ok(Outcome::Success)
}
