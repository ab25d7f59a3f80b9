//! The quantized training iteration
//!
//! ```text
//! y^{t+1} = y^t - eta_t * g(w^t),    w^{t+1} = nproj(y^{t+1})
//! ```
//!
//! with `g` the population coarse gradient or a minibatch of sample coarse
//! gradients. Trajectories are indexed from `t = 0` (the initialization) and
//! record `iterations + 1` states.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, GaussianSampler, Teacher};
use crate::quantize::{self, QuantizationMode, QuantizedWeight};
use crate::vector;

pub const DEFAULT_BATCH: usize = 64;

/// Stream index used for drawing random teachers, distinct from the ones used
/// for initializations (0) and sampled gradients (the step index).
const TEACHER_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant { eta: f64 },
    /// `a / (t + 1)`
    Harmonic { a: f64 },
    /// Explicit rates; the last one repeats forever.
    Table { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningRateSchedule {
    pub kind: ScheduleKind,
    /// Upper bound on every emitted rate. Defaults to the schedule's supremum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_max: Option<f64>,
}

impl LearningRateSchedule {
    pub fn constant(eta: f64) -> Self {
        LearningRateSchedule {
            kind: ScheduleKind::Constant { eta },
            eta_max: Some(eta),
        }
    }

    pub fn harmonic(a: f64) -> Self {
        LearningRateSchedule {
            kind: ScheduleKind::Harmonic { a },
            eta_max: Some(a),
        }
    }

    pub fn table(values: Vec<f64>) -> Self {
        let max = values.iter().cloned().fold(f64::NAN, f64::max);
        LearningRateSchedule {
            kind: ScheduleKind::Table { values },
            eta_max: Some(max),
        }
    }

    pub fn eta(&self, t: usize) -> f64 {
        match &self.kind {
            ScheduleKind::Constant { eta } => *eta,
            ScheduleKind::Harmonic { a } => a / (t as f64 + 1.0),
            ScheduleKind::Table { values } => values[t.min(values.len() - 1)],
        }
    }

    fn supremum(&self) -> f64 {
        match &self.kind {
            ScheduleKind::Constant { eta } => *eta,
            ScheduleKind::Harmonic { a } => *a,
            ScheduleKind::Table { values } => values.iter().cloned().fold(f64::NAN, f64::max),
        }
    }

    pub fn bound(&self) -> f64 {
        self.eta_max.unwrap_or_else(|| self.supremum())
    }

    /// Whether `sum eta_t` diverges. Tables repeat their last (positive)
    /// value, so every valid schedule diverges.
    pub fn is_divergent(&self) -> bool {
        match &self.kind {
            ScheduleKind::Constant { .. } | ScheduleKind::Harmonic { .. } => true,
            ScheduleKind::Table { values } => values.last().is_some_and(|&v| v > 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bound = self.bound();
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::invalid("schedule.eta_max", format!("{bound} is not a positive bound")));
        }
        let check = |field: &str, v: f64| {
            if v > 0.0 && v <= bound {
                Ok(())
            } else {
                Err(Error::invalid(field, format!("rate {v} outside (0, {bound}]")))
            }
        };
        match &self.kind {
            ScheduleKind::Constant { eta } => check("schedule.kind.constant.eta", *eta),
            ScheduleKind::Harmonic { a } => check("schedule.kind.harmonic.a", *a),
            ScheduleKind::Table { values } => {
                if values.is_empty() {
                    return Err(Error::invalid("schedule.kind.table.values", "must be nonempty"));
                }
                values
                    .iter()
                    .enumerate()
                    .try_for_each(|(i, &v)| check(&format!("schedule.kind.table.values[{i}]"), v))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradientSource {
    #[default]
    Population,
    /// Mean of `batch` sample coarse gradients; step `t` draws from stream `t`
    /// of the sampler seeded with `seed`.
    Sampled { batch: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    #[default]
    Quant,
    BinaryConnect,
    /// Gradient of the quantized loss itself. Always refused: it is zero
    /// almost everywhere.
    ExactGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherSpec {
    Explicit(Teacher),
    /// `w* ~ N(0, I_n)` normalized and `v ~ N(0, I_m)`.
    Random { m: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSpec {
    Explicit(Vec<f64>),
    /// i.i.d. standard normal entries, redrawn while any entry is exactly 0.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct OutputTargets {
    /// Number of trailing iterations in the sign-matrix export (all if absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign_matrix_tail: Option<usize>,
    #[serde(default)]
    pub trajectory_json: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub n: usize,
    pub mode: QuantizationMode,
    pub teacher: TeacherSpec,
    pub schedule: LearningRateSchedule,
    pub iterations: usize,
    pub y0: InitSpec,
    #[serde(default)]
    pub gradient_source: GradientSource,
    #[serde(default)]
    pub update_rule: UpdateRule,
    #[serde(default)]
    pub outputs: OutputTargets,
}

impl ExperimentConfig {
    /// Replaces random teacher and initialization specs by explicit values
    /// and validates the result.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut out = self.clone();
        if let TeacherSpec::Random { m, seed } = self.teacher {
            out.teacher = TeacherSpec::Explicit(random_teacher(self.n, m, seed)?);
        }
        if let InitSpec::Random { seed } = self.y0 {
            out.y0 = InitSpec::Explicit(random_init(self.n, seed));
        }
        if out.schedule.eta_max.is_none() {
            out.schedule.eta_max = Some(out.schedule.bound());
        }
        out.validate()?;
        Ok(out)
    }

    /// Checks a resolved config.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "must be at least 1"));
        }
        let teacher = self.teacher()?;
        teacher.validate()?;
        if teacher.dim() != self.n {
            return Err(Error::invalid(
                "teacher.w_star",
                format!("has {} entries, expected n = {}", teacher.dim(), self.n),
            ));
        }
        self.schedule.validate()?;
        let y0 = self.y0()?;
        if y0.len() != self.n {
            return Err(Error::invalid("y0", format!("has {} entries, expected n = {}", y0.len(), self.n)));
        }
        if vector::is_zero(y0) {
            return Err(Error::invalid("y0", "must be nonzero"));
        }
        if let GradientSource::Sampled { batch, .. } = self.gradient_source {
            if batch == 0 {
                return Err(Error::invalid("gradient_source.sampled.batch", "must be at least 1"));
            }
            if teacher.v.is_none() {
                return Err(Error::invalid("teacher.v", "sampled gradients need explicit second-layer weights"));
            }
        }
        if self.update_rule == UpdateRule::ExactGradient {
            return Err(Error::DegenerateGradient);
        }
        Ok(())
    }

    pub fn teacher(&self) -> Result<&Teacher> {
        match &self.teacher {
            TeacherSpec::Explicit(t) => Ok(t),
            TeacherSpec::Random { .. } => Err(Error::invalid("teacher", "config is not resolved")),
        }
    }

    pub fn y0(&self) -> Result<&[f64]> {
        match &self.y0 {
            InitSpec::Explicit(y) => Ok(y),
            InitSpec::Random { .. } => Err(Error::invalid("y0", "config is not resolved")),
        }
    }
}

pub fn random_teacher(n: usize, m: usize, seed: u64) -> Result<Teacher> {
    if n == 0 || m == 0 {
        return Err(Error::invalid("teacher.random", "n and m must be positive"));
    }
    let mut stream = GaussianSampler::new(seed).stream(TEACHER_STREAM);
    let w_star = loop {
        if let Some(w) = vector::normalized(&stream.vector(n)) {
            break w;
        }
    };
    let v = stream.vector(m);
    Teacher::new(w_star, v)
}

pub fn random_init(n: usize, seed: u64) -> Vec<f64> {
    let mut stream = GaussianSampler::new(seed).stream(0);
    loop {
        let y = stream.vector(n);
        if y.iter().all(|&v| v != 0.0) {
            return y;
        }
    }
}

/// Coarse gradient at a quantized state for step `t`.
fn coarse_gradient(w: &QuantizedWeight, t: usize, config: &ExperimentConfig) -> Result<Vec<f64>> {
    let teacher = config.teacher()?;
    match config.gradient_source {
        GradientSource::Population => model::population_coarse_grad_at(w, teacher),
        GradientSource::Sampled { batch, seed } => {
            let mut stream = GaussianSampler::new(seed).stream(t as u64);
            model::batch_coarse_grad(&w.unit_vector(), teacher, &mut stream, batch)
        }
    }
}

fn advance(y: &[f64], g: &[f64], t: usize, config: &ExperimentConfig) -> Result<(Vec<f64>, QuantizedWeight)> {
    let eta = config.schedule.eta(t);
    let y_next: Vec<f64> = y.iter().zip(g).map(|(yi, gi)| yi - eta * gi).collect();
    if vector::is_zero(&y_next) {
        return Err(Error::ZeroIterate { t: t + 1 });
    }
    let w_next = quantize::normalized_project(&y_next, config.mode)?;
    Ok((y_next, w_next))
}

/// One step of the quantized iteration: the float weights move along the
/// coarse gradient evaluated at their normalized projection.
pub fn quant_step(y: &[f64], t: usize, config: &ExperimentConfig) -> Result<(Vec<f64>, QuantizedWeight)> {
    Error::check_dim(config.n, y.len())?;
    let w = quantize::normalized_project(y, config.mode)?;
    let g = coarse_gradient(&w, t, config)?;
    advance(y, &g, t, config)
}

/// BinaryConnect-style step: the gradient is taken at the unnormalized
/// projection. The coarse gradient only sees the direction of its argument,
/// so this coincides exactly with [`quant_step`].
pub fn binaryconnect_step(
    y: &[f64],
    t: usize,
    config: &ExperimentConfig,
) -> Result<(Vec<f64>, QuantizedWeight)> {
    Error::check_dim(config.n, y.len())?;
    let w = quantize::project(y, config.mode)?;
    let g = coarse_gradient(&w, t, config)?;
    advance(y, &g, t, config)
}

pub fn step(y: &[f64], t: usize, config: &ExperimentConfig) -> Result<(Vec<f64>, QuantizedWeight)> {
    match config.update_rule {
        UpdateRule::Quant => quant_step(y, t, config),
        UpdateRule::BinaryConnect => binaryconnect_step(y, t, config),
        UpdateRule::ExactGradient => Err(Error::DegenerateGradient),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: usize,
    pub eta: f64,
    pub y: Vec<f64>,
    pub w: QuantizedWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub mode: QuantizationMode,
    pub n: usize,
    pub records: Vec<Record>,
    /// Resolved config that produced the run, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ExperimentConfig>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn weights(&self) -> impl Iterator<Item = &QuantizedWeight> {
        self.records.iter().map(|r| &r.w)
    }

    /// Recomputes every `w^t` from `y^t` and compares patterns.
    pub fn projection_consistent(&self) -> Result<bool> {
        for (i, r) in self.records.iter().enumerate() {
            if r.t != i {
                return Ok(false);
            }
            if !quantize::normalized_project(&r.y, self.mode)?.same_state(&r.w) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

pub fn run(config: &ExperimentConfig) -> Result<Trajectory> {
    let config = config.resolve()?;
    let mut y = config.y0()?.to_vec();
    let mut w = quantize::normalized_project(&y, config.mode)?;
    let mut records = Vec::with_capacity(config.iterations + 1);
    records.push(Record {
        t: 0,
        eta: config.schedule.eta(0),
        y: y.clone(),
        w: w.clone(),
    });
    for t in 0..config.iterations {
        (y, w) = step(&y, t, &config).map_err(|e| Error::StepFailed {
            t,
            source: Box::new(e),
        })?;
        records.push(Record {
            t: t + 1,
            eta: config.schedule.eta(t + 1),
            y: y.clone(),
            w: w.clone(),
        });
    }
    Ok(Trajectory {
        mode: config.mode,
        n: config.n,
        records,
        config: Some(config),
    })
}

pub const EXAMPLE1_ETA: f64 = 0.1;
/// Enough records to check `w^{t+3} = w^t` for every `t` in `0..=1000`.
pub const EXAMPLE1_ITERATIONS: usize = 1003;

/// The four-dimensional period-3 teacher `(1/6, 1/6, 1/6, sqrt(11/3)/2)`.
pub fn example1_teacher_weights() -> Vec<f64> {
    vec![1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 0.5 * (11.0f64 / 3.0).sqrt()]
}

/// Step unit `eta ‖v‖² / (6 sqrt(2 pi))` of the period-3 example.
pub fn example1_lambda(eta: f64, v_norm_sq: f64) -> f64 {
    eta * v_norm_sq / (6.0 * (2.0 * std::f64::consts::PI).sqrt())
}

pub fn example1_config(fractions: [f64; 4]) -> Result<ExperimentConfig> {
    example1_config_with(fractions, EXAMPLE1_ETA, vec![1.0; 4])
}

/// Binary config whose initialization sits at relative positions `fractions`
/// inside `(-λ, 0)`, `(0, λ)`, `(λ, 2λ)` and `(0, ∞)` (the last via `f/(1-f)`).
pub fn example1_config_with(fractions: [f64; 4], eta: f64, v: Vec<f64>) -> Result<ExperimentConfig> {
    for (i, f) in fractions.iter().enumerate() {
        if !(*f > 0.0 && *f < 1.0) {
            return Err(Error::invalid(format!("fractions[{i}]"), format!("{f} is outside (0, 1)")));
        }
    }
    let teacher = Teacher::new(example1_teacher_weights(), v)?;
    let lambda = example1_lambda(eta, teacher.v_norm_sq);
    let [f1, f2, f3, f4] = fractions;
    let y0 = vec![-lambda * f1, lambda * f2, lambda * (1.0 + f3), f4 / (1.0 - f4)];
    let config = ExperimentConfig {
        label: Some("example1".into()),
        n: 4,
        mode: QuantizationMode::Binary,
        teacher: TeacherSpec::Explicit(teacher),
        schedule: LearningRateSchedule::constant(eta),
        iterations: EXAMPLE1_ITERATIONS,
        y0: InitSpec::Explicit(y0),
        gradient_source: GradientSource::Population,
        update_rule: UpdateRule::Quant,
        outputs: OutputTargets::default(),
    };
    config.validate()?;
    Ok(config)
}

pub const SYNTHETIC_TEACHER_SEED: u64 = 2021;
pub const SYNTHETIC_INIT_SEED: u64 = 7;

/// Desk-scale synthetic experiment: `m = 4`, `n = 8`, 200 iterations at
/// constant rate 0.1 with Gaussian teacher weights, exporting the last 100
/// sign columns.
pub fn synthetic_config(mode: QuantizationMode) -> ExperimentConfig {
    ExperimentConfig {
        label: Some(format!("synthetic-{mode}")),
        n: 8,
        mode,
        teacher: TeacherSpec::Random {
            m: 4,
            seed: SYNTHETIC_TEACHER_SEED,
        },
        schedule: LearningRateSchedule::constant(0.1),
        iterations: 200,
        y0: InitSpec::Random {
            seed: SYNTHETIC_INIT_SEED,
        },
        gradient_source: GradientSource::Population,
        update_rule: UpdateRule::Quant,
        outputs: OutputTargets {
            sign_matrix_tail: Some(100),
            trajectory_json: false,
        },
    }
}

/// Names accepted by [`preset`].
pub const PRESETS: &[&str] = &["example1", "synthetic-fig2", "synthetic-fig2-ternary"];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "example1" => example1_config([0.5, 0.5, 0.5, 0.5]),
        "synthetic-fig2" | "synthetic-fig2-binary" => Ok(synthetic_config(QuantizationMode::Binary)),
        "synthetic-fig2-ternary" => Ok(synthetic_config(QuantizationMode::Ternary)),
        other => Err(Error::invalid(
            "preset",
            format!("unknown preset {other:?}; known: {}", PRESETS.join(", ")),
        )),
    }
}
