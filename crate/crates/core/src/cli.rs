//! The `quantrec` command-line front end.
//!
//! Exit codes: 0 success, 1 verification failure, 2 parse/format error,
//! 3 invalid value, 4 dimension mismatch.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, ConditionReport, CoordinateOscillation, FrequencyReport, RecurrenceReport, RegionEntryReport};
use crate::dynamics::{self, ExperimentConfig, GradientSource, InitSpec, TeacherSpec, Trajectory};
use crate::error::{Error, Result};
use crate::io;
use crate::model::{self, GaussianSampler, Teacher};
use crate::quantize::{self, QuantizationMode, QuantizedWeight};
use crate::vector;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_FORMAT: i32 = 2;
pub const EXIT_INVALID: i32 = 3;
pub const EXIT_DIMENSION: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Format(_) | Error::Io(_) => EXIT_FORMAT,
        Error::DimensionMismatch { .. } => EXIT_DIMENSION,
        Error::StepFailed { source, .. } => exit_code(source),
        Error::ZeroVector(_)
        | Error::DimensionOutOfRange { .. }
        | Error::NotInConeClosure(_)
        | Error::ModeMismatch { .. }
        | Error::InvalidValue { .. }
        | Error::ZeroIterate { .. }
        | Error::DegenerateGradient => EXIT_INVALID,
    }
}

#[derive(Debug, Parser)]
#[command(name = "quantrec", version, about = "Quantized-weight training dynamics: simulate, analyze, verify")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Project a vector onto the binary or ternary set.
    Project(ProjectArgs),
    /// Run one experiment (or a batch) and write its artifacts.
    Run(RunArgs),
    /// Analyze a trajectory CSV.
    Analyze(AnalyzeArgs),
    /// Check the closed-form loss and coarse gradient against Monte Carlo.
    Verify(VerifyArgs),
    /// Evaluate the sufficient conditions for recurrence of the optimum.
    Conditions(ConditionsArgs),
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long, default_value = "ternary")]
    pub mode: QuantizationMode,
    /// Comma-separated entries, e.g. `2,1,0.1`.
    #[arg(long = "vec", allow_hyphen_values = true)]
    pub vec: String,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON config, array of configs, or a manifest from an earlier run.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Embedded preset: example1, synthetic-fig2, synthetic-fig2-ternary.
    #[arg(long)]
    pub preset: Option<String>,
    /// Output directory; created if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replaces every seed in the config (teacher, initialization, sampling).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub mode: Option<QuantizationMode>,
    /// Print the resolved config(s) as JSON; runs only if `--out` is given.
    #[arg(long)]
    pub print_config: bool,
    /// Run every config of an array concurrently, into `<out>/run_<index>`.
    #[arg(long)]
    pub batch: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub trajectory: PathBuf,
    /// Manifest (or config) of the run; supplies mode and teacher.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Comma-separated teacher weights, used when no manifest is given.
    #[arg(long, allow_hyphen_values = true)]
    pub teacher: Option<String>,
    #[arg(long)]
    pub mode: Option<QuantizationMode>,
    /// `‖v‖²` for a teacher given on the command line.
    #[arg(long, default_value_t = 1.0)]
    pub v_norm_sq: f64,
    #[arg(long, default_value_t = analysis::DEFAULT_TAIL_FRACTION)]
    pub tail_fraction: f64,
    /// Number of final records searched for an exact cycle.
    #[arg(long, default_value_t = 1000)]
    pub cycle_window: usize,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Monte-Carlo draws per instance.
    #[arg(long, default_value_t = 1_000_000)]
    pub count: usize,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    /// Allowed deviation in standard errors.
    #[arg(long, default_value_t = 4.0)]
    pub sigmas: f64,
    /// Test hook: scales the closed-form gradient before comparison.
    #[arg(long, hide = true, default_value_t = 1.0)]
    pub corrupt_constant: f64,
    /// Also write the report to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl Default for VerifyArgs {
    fn default() -> Self {
        VerifyArgs {
            seed: 0,
            count: 1_000_000,
            instances: 20,
            sigmas: 4.0,
            corrupt_constant: 1.0,
            report: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct ConditionsArgs {
    /// Comma-separated teacher weights; normalized with a warning if needed.
    #[arg(long, allow_hyphen_values = true)]
    pub teacher: String,
    #[arg(long)]
    pub mode: QuantizationMode,
}

/// Parses `args` (including the program name) and runs the command,
/// writing results to `out` and diagnostics to stderr. Returns the exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Project(a) => cmd_project(&a, out),
        Command::Run(a) => cmd_run(&a, out),
        Command::Analyze(a) => cmd_analyze(&a, out),
        Command::Verify(a) => cmd_verify(&a, out),
        Command::Conditions(a) => cmd_conditions(&a, out),
    }
}

pub fn parse_vector(s: &str) -> Result<Vec<f64>> {
    let v = s
        .split(',')
        .map(|x| {
            let x = x.trim();
            x.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Format(format!("{x:?} is not a finite number")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if v.is_empty() {
        return Err(Error::Format("empty vector".into()));
    }
    Ok(v)
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    out.write_all(io::to_json_string(value)?.as_bytes())?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct WeightView {
    delta: f64,
    signs: Vec<i8>,
    w: Vec<f64>,
}

impl From<&QuantizedWeight> for WeightView {
    fn from(q: &QuantizedWeight) -> Self {
        WeightView {
            delta: q.delta(),
            signs: q.signs().as_slice().to_vec(),
            w: q.to_vec(),
        }
    }
}

#[derive(Debug, Serialize)]
struct OracleCheck {
    distance_sq: f64,
    brute_force_distance_sq: f64,
    agrees: bool,
}

#[derive(Debug, Serialize)]
struct ProjectReport {
    mode: QuantizationMode,
    input: Vec<f64>,
    projection: WeightView,
    normalized: WeightView,
    /// Present for `n <= 12`.
    oracle: Option<OracleCheck>,
}

fn cmd_project(a: &ProjectArgs, out: &mut dyn Write) -> Result<i32> {
    let y = parse_vector(&a.vec)?;
    let p = quantize::project(&y, a.mode)?;
    let np = p.normalized()?;
    let oracle = if y.len() <= quantize::BRUTE_FORCE_MAX_DIM {
        let bf = quantize::brute_force_project(&y, a.mode)?;
        let d = vector::dist_sq(&p.to_vec(), &y);
        Some(OracleCheck {
            distance_sq: d,
            brute_force_distance_sq: bf.distance_sq,
            agrees: (d - bf.distance_sq).abs() <= 1e-10 * vector::dot(&y, &y).max(1.0),
        })
    } else {
        None
    };
    emit(
        out,
        &ProjectReport {
            mode: a.mode,
            input: y,
            projection: (&p).into(),
            normalized: (&np).into(),
            oracle,
        },
    )?;
    Ok(EXIT_OK)
}

fn apply_overrides(c: &mut ExperimentConfig, a: &RunArgs) {
    if let Some(seed) = a.seed {
        if let TeacherSpec::Random { seed: s, .. } = &mut c.teacher {
            *s = seed;
        }
        if let InitSpec::Random { seed: s } = &mut c.y0 {
            *s = seed;
        }
        if let GradientSource::Sampled { seed: s, .. } = &mut c.gradient_source {
            *s = seed;
        }
    }
    if let Some(it) = a.iterations {
        c.iterations = it;
    }
    if let Some(mode) = a.mode {
        c.mode = mode;
    }
}

#[derive(Debug, Serialize)]
struct RunSummary {
    dir: PathBuf,
    files: Vec<String>,
    records: usize,
    final_state: WeightView,
}

fn run_into(config: &ExperimentConfig, dir: &Path) -> Result<RunSummary> {
    let traj = dynamics::run(config)?;
    let files = io::write_run_artifacts(dir, &traj)?;
    let last = traj.records.last().expect("runs record at least the initial state");
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        files,
        records: traj.len(),
        final_state: (&last.w).into(),
    })
}

fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> Result<i32> {
    let mut configs = match (&a.config, &a.preset) {
        (Some(path), None) => io::load_config_or_manifest(path)?,
        (None, Some(name)) => vec![dynamics::preset(name)?],
        _ => return Err(Error::invalid("run", "exactly one of --config and --preset is required")),
    };
    if configs.is_empty() {
        return Err(Error::invalid("config", "empty config array"));
    }
    if configs.len() > 1 && !a.batch {
        return Err(Error::invalid("config", "file holds several configs; pass --batch"));
    }
    for c in &mut configs {
        apply_overrides(c, a);
    }
    let resolved = configs
        .iter()
        .map(ExperimentConfig::resolve)
        .collect::<Result<Vec<_>>>()?;

    if a.print_config {
        if a.batch {
            emit(out, &resolved)?;
        } else {
            emit(out, &resolved[0])?;
        }
        if a.out.is_none() {
            return Ok(EXIT_OK);
        }
    }
    let dir = a
        .out
        .as_ref()
        .ok_or_else(|| Error::invalid("out", "an output directory is required"))?;

    let summaries = if a.batch {
        let results: Vec<Result<RunSummary>> = resolved
            .par_iter()
            .enumerate()
            .map(|(i, c)| run_into(c, &dir.join(format!("run_{i:03}"))))
            .collect();
        results.into_iter().collect::<Result<Vec<_>>>()?
    } else {
        vec![run_into(&resolved[0], dir)?]
    };
    if !a.print_config {
        emit(out, &summaries)?;
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
pub struct AnalysisReport {
    pub mode: QuantizationMode,
    pub n: usize,
    pub records: usize,
    pub optimum: Option<QuantizedWeight>,
    pub recurrence: Option<RecurrenceReport>,
    pub cycle_period: Option<usize>,
    pub limit_set: Vec<QuantizedWeight>,
    pub oscillation: Vec<CoordinateOscillation>,
    pub entry_times: Option<RegionEntryReport>,
    pub condition: Option<ConditionReport>,
    pub vertex_frequencies: Option<FrequencyReport>,
}

pub fn analyze_trajectory(
    traj: &Trajectory,
    teacher: Option<&Teacher>,
    tail_fraction: f64,
    cycle_window: usize,
) -> Result<AnalysisReport> {
    let limit_set = analysis::tail_limit_set(traj, tail_fraction)?;
    let mut report = AnalysisReport {
        mode: traj.mode,
        n: traj.n,
        records: traj.len(),
        optimum: None,
        recurrence: None,
        cycle_period: analysis::detect_cycle(traj, cycle_window),
        limit_set,
        oscillation: analysis::sign_oscillation_report(traj),
        entry_times: None,
        condition: None,
        vertex_frequencies: None,
    };
    if let Some(teacher) = teacher {
        Error::check_dim(traj.n, teacher.dim())?;
        let optimum = quantize::normalized_project(&teacher.w_star, traj.mode)?;
        report.recurrence = Some(analysis::detect_recurrence(traj, &optimum)?);
        report.optimum = Some(optimum);
        report.entry_times = Some(analysis::region_entry_times(traj, teacher)?);
        report.condition = Some(analysis::check_condition(teacher, traj.mode)?);
        if traj.mode == QuantizationMode::Ternary {
            report.vertex_frequencies = Some(analysis::visit_frequency_vs_lambda(traj, teacher, tail_fraction)?);
        }
    }
    Ok(report)
}

/// Parses a teacher vector, normalizing it (with a warning) if needed.
fn teacher_from_arg(s: &str, v_norm_sq: f64) -> Result<Teacher> {
    let w = parse_vector(s)?;
    let r = vector::norm(&w);
    if r == 0.0 {
        return Err(Error::ZeroVector("teacher weights must be nonzero"));
    }
    let w = if (r - 1.0).abs() > model::UNIT_NORM_TOL {
        eprintln!("warning: teacher has norm {r}; normalizing to unit length");
        vector::scale(&w, 1.0 / r)
    } else {
        w
    };
    Teacher::population(w, v_norm_sq)
}

fn cmd_analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> Result<i32> {
    let (mode, teacher, config) = match &a.manifest {
        Some(path) => {
            let mut configs = io::load_config_or_manifest(path)?;
            if configs.len() != 1 {
                return Err(Error::invalid("manifest", "expected a single config"));
            }
            let config = configs.remove(0).resolve()?;
            if let Some(m) = a.mode {
                if m != config.mode {
                    return Err(Error::ModeMismatch {
                        expected: config.mode.to_string(),
                        got: m.to_string(),
                    });
                }
            }
            (config.mode, Some(config.teacher()?.clone()), Some(config))
        }
        None => {
            let mode = a
                .mode
                .ok_or_else(|| Error::invalid("mode", "--mode is required without --manifest"))?;
            let teacher = a.teacher.as_deref().map(|s| teacher_from_arg(s, a.v_norm_sq)).transpose()?;
            (mode, teacher, None)
        }
    };
    let file = fs::File::open(&a.trajectory)?;
    let traj = io::read_trajectory_csv(file, mode, config)?;
    let report = analyze_trajectory(&traj, teacher.as_ref(), a.tail_fraction, a.cycle_window)?;
    emit(out, &report)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyInstance {
    pub index: usize,
    pub n: usize,
    pub m: usize,
    pub quantized_w: bool,
    pub loss_closed_form: f64,
    pub loss_mc: f64,
    pub loss_std_err: f64,
    pub loss_z: f64,
    pub grad_closed_form: Vec<f64>,
    pub grad_mc: Vec<f64>,
    pub grad_std_err: Vec<f64>,
    pub max_grad_z: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub count: usize,
    pub sigmas: f64,
    pub grad_constant_scale: f64,
    pub passed: bool,
    pub instances: Vec<VerifyInstance>,
}

fn z_score(diff: f64, se: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else {
        diff.abs() / se
    }
}

/// Seed of the Monte-Carlo sampler for instance `i`.
fn instance_mc_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64 + 1)
}

/// Draws random instances with `n, m` in `2..=6`, `1..=6` and compares the
/// closed-form loss and coarse gradient with Monte-Carlo means. Instance `i`
/// draws its teacher and `w` from stream `i` of the sampler seeded with
/// `seed`; odd instances evaluate at a quantized `w`.
pub fn run_verification(a: &VerifyArgs) -> Result<VerifyReport> {
    if a.count == 0 || a.instances == 0 {
        return Err(Error::invalid("verify", "count and instances must be positive"));
    }
    let params = GaussianSampler::new(a.seed);
    let mut instances = Vec::with_capacity(a.instances);
    for i in 0..a.instances {
        let n = 2 + i % 5;
        let m = 1 + (i * 5) % 6;
        let mut s = params.stream(i as u64);
        let w_star = loop {
            if let Some(w) = vector::normalized(&s.vector(n)) {
                break w;
            }
        };
        let v = s.vector(m);
        let teacher = Teacher::new(w_star, v)?;
        let quantized_w = i % 2 == 1;
        let w = loop {
            if let Some(w) = vector::normalized(&s.vector(n)) {
                break w;
            }
        };
        let w = if quantized_w {
            quantize::normalized_project(&w, QuantizationMode::Ternary)?.to_vec()
        } else {
            w
        };
        let sampler = GaussianSampler::new(instance_mc_seed(a.seed, i));
        let loss_cf = model::population_loss(&w, &teacher)?;
        let loss = model::mc_estimate_loss(&w, &teacher, sampler, a.count)?;
        let grad_cf: Vec<f64> = model::population_coarse_grad(&w, &teacher)?
            .into_iter()
            .map(|g| g * a.corrupt_constant)
            .collect();
        let grad = model::mc_estimate_grad(&w, &teacher, sampler, a.count)?;
        let loss_z = z_score(loss.mean - loss_cf, loss.std_err);
        let max_grad_z = grad_cf
            .iter()
            .zip(&grad.mean)
            .zip(&grad.std_err)
            .map(|((c, m), se)| z_score(m - c, *se))
            .fold(0.0, f64::max);
        instances.push(VerifyInstance {
            index: i,
            n,
            m,
            quantized_w,
            loss_closed_form: loss_cf,
            loss_mc: loss.mean,
            loss_std_err: loss.std_err,
            loss_z,
            grad_closed_form: grad_cf,
            grad_mc: grad.mean,
            grad_std_err: grad.std_err,
            max_grad_z,
            passed: loss_z <= a.sigmas && max_grad_z <= a.sigmas,
        });
    }
    Ok(VerifyReport {
        seed: a.seed,
        count: a.count,
        sigmas: a.sigmas,
        grad_constant_scale: a.corrupt_constant,
        passed: instances.iter().all(|x| x.passed),
        instances,
    })
}

fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<i32> {
    let report = run_verification(a)?;
    if let Some(path) = &a.report {
        fs::write(path, io::to_json_string(&report)?)?;
    }
    emit(out, &report)?;
    Ok(if report.passed { EXIT_OK } else { EXIT_VERIFY_FAILED })
}

fn cmd_conditions(a: &ConditionsArgs, out: &mut dyn Write) -> Result<i32> {
    let teacher = teacher_from_arg(&a.teacher, 1.0)?;
    let report = analysis::check_condition(&teacher, a.mode)?;
    emit(out, &report)?;
    Ok(EXIT_OK)
}
