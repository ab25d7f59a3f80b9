//! Post-hoc analysis of trajectories: recurrence of the optimum, exact cycles,
//! sign oscillation, tail limit sets, region entry times, and the sufficient
//! conditions for recurrence in the binary and ternary cases.
//!
//! Quantized states are compared by sign pattern only; normalized states are
//! determined by their pattern.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::geometry::{self, SignPattern};
use crate::model::Teacher;
use crate::quantize::{self, QuantizationMode, QuantizedWeight};
use crate::vector;

/// Band around a condition boundary treated as the boundary itself.
pub const CONDITION_TOL: f64 = 1e-12;

pub const DEFAULT_TAIL_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceReport {
    pub target: QuantizedWeight,
    pub visit_times: Vec<usize>,
    pub visit_count: usize,
    pub first_visit: Option<usize>,
    pub gaps: Vec<usize>,
}

fn check_compatible(traj: &Trajectory, w: &QuantizedWeight) -> Result<()> {
    Error::check_dim(traj.n, w.dim())?;
    if w.mode() != traj.mode {
        return Err(Error::ModeMismatch {
            expected: traj.mode.to_string(),
            got: w.mode().to_string(),
        });
    }
    Ok(())
}

pub fn detect_recurrence(traj: &Trajectory, target: &QuantizedWeight) -> Result<RecurrenceReport> {
    check_compatible(traj, target)?;
    let visit_times: Vec<usize> = traj
        .records
        .iter()
        .filter(|r| r.w.same_state(target))
        .map(|r| r.t)
        .collect();
    let gaps = visit_times.windows(2).map(|p| p[1] - p[0]).collect();
    Ok(RecurrenceReport {
        target: target.clone(),
        visit_count: visit_times.len(),
        first_visit: visit_times.first().copied(),
        visit_times,
        gaps,
    })
}

/// Smallest `p <= window/2` with `w^{t+p} = w^t` throughout the final
/// `window` records. `window` is clamped to the trajectory length.
pub fn detect_cycle(traj: &Trajectory, window: usize) -> Option<usize> {
    let len = traj.len();
    let window = window.min(len);
    let start = len - window;
    let states: Vec<&SignPattern> = traj.records[start..].iter().map(|r| r.w.signs()).collect();
    (1..=window / 2).find(|&p| (0..window - p).all(|i| states[i] == states[i + p]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateOscillation {
    pub index: usize,
    pub sign_change_count: usize,
    pub last_change_t: Option<usize>,
    /// Distinct signs taken, ascending.
    pub attained_signs: Vec<i8>,
    /// Maximal runs spent at +1 and at -1.
    pub positive_runs: usize,
    pub negative_runs: usize,
}

pub fn sign_oscillation_report(traj: &Trajectory) -> Vec<CoordinateOscillation> {
    (0..traj.n)
        .map(|j| {
            let mut changes = 0;
            let mut last_change_t = None;
            let mut seen = [false; 3];
            let mut runs = [0usize; 3];
            let mut prev: Option<i8> = None;
            for r in &traj.records {
                let s = r.w.signs().as_slice()[j];
                seen[(s + 1) as usize] = true;
                if prev != Some(s) {
                    runs[(s + 1) as usize] += 1;
                    if prev.is_some() {
                        changes += 1;
                        last_change_t = Some(r.t);
                    }
                }
                prev = Some(s);
            }
            CoordinateOscillation {
                index: j,
                sign_change_count: changes,
                last_change_t,
                attained_signs: (-1i8..=1).filter(|s| seen[(s + 1) as usize]).collect(),
                positive_runs: runs[2],
                negative_runs: runs[0],
            }
        })
        .collect()
}

fn tail_start(len: usize, tail_fraction: f64) -> Result<usize> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::invalid("tail_fraction", format!("{tail_fraction} is outside (0, 1]")));
    }
    let keep = ((len as f64) * tail_fraction).ceil() as usize;
    Ok(len - keep.min(len))
}

/// Distinct states over the final `tail_fraction` of the records, ordered by
/// sign pattern.
pub fn tail_limit_set(traj: &Trajectory, tail_fraction: f64) -> Result<Vec<QuantizedWeight>> {
    let start = tail_start(traj.len(), tail_fraction)?;
    let mut set: BTreeMap<&SignPattern, &QuantizedWeight> = BTreeMap::new();
    for r in &traj.records[start..] {
        set.entry(r.w.signs()).or_insert(&r.w);
    }
    Ok(set.into_values().cloned().collect())
}

/// First time after which a property holds for every remaining record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryTime {
    At(usize),
    NotYet,
}

impl EntryTime {
    pub fn time(&self) -> Option<usize> {
        match self {
            EntryTime::At(t) => Some(*t),
            EntryTime::NotYet => None,
        }
    }

    fn from_predicate<I: DoubleEndedIterator<Item = (usize, bool)>>(mut it: I, end: usize) -> Self {
        let mut entry = end;
        for (t, ok) in it.by_ref().rev() {
            if !ok {
                break;
            }
            entry = t;
        }
        if entry == end {
            EntryTime::NotYet
        } else {
            EntryTime::At(entry)
        }
    }
}

impl Serialize for EntryTime {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EntryTime::At(t) => s.serialize_u64(*t as u64),
            EntryTime::NotYet => s.serialize_str("not yet"),
        }
    }
}

impl<'de> Deserialize<'de> for EntryTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            At(usize),
            Label(String),
        }
        match Raw::deserialize(d)? {
            Raw::At(t) => Ok(EntryTime::At(t)),
            Raw::Label(s) if s == "not yet" => Ok(EntryTime::NotYet),
            Raw::Label(s) => Err(serde::de::Error::custom(format!("unexpected entry time {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroCoordinate {
    pub index: usize,
    pub max_abs_y: f64,
    /// `max(|y_j^0|, eta_max * c)`; the coordinate never leaves this band.
    pub bound: f64,
    pub bounded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEntryReport {
    pub orthant_entry: EntryTime,
    pub cone_entry: EntryTime,
    pub orthant_regular: bool,
    pub cone_regular: bool,
    pub zero_coordinates: Vec<ZeroCoordinate>,
}

/// Entry times into the teacher's orthant and cone.
///
/// For a regular teacher these are the strict regions. Otherwise closure
/// semantics apply: coordinates where `w*` vanishes must have `w_j^t = 0`,
/// and magnitude ties of `w*` place no constraint on `y`.
pub fn region_entry_times(traj: &Trajectory, teacher: &Teacher) -> Result<RegionEntryReport> {
    Error::check_dim(traj.n, teacher.dim())?;
    let w_star = &teacher.w_star;
    let signs = geometry::orthant_of(w_star);
    let cone = geometry::cone_of(w_star);
    let levels: Vec<&Vec<usize>> = cone
        .tie_groups
        .iter()
        .filter(|g| w_star[g[0]] != 0.0)
        .collect();

    let in_orthant = |r: &crate::dynamics::Record| {
        signs.iter().enumerate().all(|(j, &s)| {
            if s == 0 {
                r.w.signs().as_slice()[j] == 0
            } else {
                quantize::sign_of(r.y[j]) == s
            }
        })
    };
    let in_cone = |r: &crate::dynamics::Record| {
        in_orthant(r)
            && levels.windows(2).all(|pair| {
                let low = pair[0].iter().map(|&j| r.y[j].abs()).fold(f64::INFINITY, f64::min);
                let high = pair[1].iter().map(|&j| r.y[j].abs()).fold(0.0, f64::max);
                low > high
            })
    };

    let end = traj.len();
    let orthant_entry = EntryTime::from_predicate(traj.records.iter().map(|r| (r.t, in_orthant(r))), end);
    let cone_entry = EntryTime::from_predicate(traj.records.iter().map(|r| (r.t, in_cone(r))), end);

    let eta_max = traj
        .config
        .as_ref()
        .map(|c| c.schedule.bound())
        .unwrap_or_else(|| traj.records.iter().map(|r| r.eta).fold(0.0, f64::max));
    let zero_coordinates = (0..traj.n)
        .filter(|&j| w_star[j] == 0.0)
        .map(|j| {
            let max_abs_y = traj.records.iter().map(|r| r.y[j].abs()).fold(0.0, f64::max);
            let y0 = traj.records.first().map_or(0.0, |r| r.y[j].abs());
            let bound = y0.max(eta_max * teacher.grad_constant());
            ZeroCoordinate {
                index: j,
                max_abs_y,
                bound,
                bounded: max_abs_y <= bound * (1.0 + 1e-12),
            }
        })
        .collect();

    Ok(RegionEntryReport {
        orthant_entry,
        cone_entry,
        orthant_regular: signs.is_regular(),
        cone_regular: cone.is_regular(),
        zero_coordinates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryCoordinate {
    pub index: usize,
    pub w_star: f64,
    pub w_hat: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditionDetails {
    Binary {
        w_hat: Vec<f64>,
        /// Whether `w*` already lies in the binary set.
        quantized: bool,
        /// Coordinates with `|w*_j| < 1/sqrt(n)` and their deviations.
        oscillating: Vec<BinaryCoordinate>,
    },
    Ternary {
        quantized: bool,
        /// Vertex set of `w*`, optimum first.
        vertices: Vec<Vec<f64>>,
        lambdas: Vec<f64>,
        reconstruction_error: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub mode: QuantizationMode,
    pub satisfied: bool,
    /// Distance to the nearer end of the admissible interval; 0 on the boundary.
    pub margin: f64,
    /// The checked quantity: the deviation sum (binary) or the off-optimum
    /// coefficient sum (ternary).
    pub value: f64,
    pub upper_bound: f64,
    pub details: ConditionDetails,
}

fn interval_margin(value: f64, upper: f64) -> f64 {
    let m = value.min(upper - value);
    if m.abs() <= CONDITION_TOL {
        0.0
    } else {
        m
    }
}

fn check_teacher(teacher: &Teacher) -> Result<()> {
    let r = vector::norm(&teacher.w_star);
    if (r - 1.0).abs() > crate::model::UNIT_NORM_TOL {
        return Err(Error::invalid("teacher.w_star", format!("norm is {r}, expected 1")));
    }
    Ok(())
}

/// Binary sufficient condition `0 < sum_{|w*_j| < 1/sqrt(n)} |w*_j - ŵ_j| < 2/sqrt(n)`.
pub fn check_binary_condition(teacher: &Teacher) -> Result<ConditionReport> {
    check_teacher(teacher)?;
    let w_star = &teacher.w_star;
    let n = w_star.len();
    let unit = 1.0 / (n as f64).sqrt();
    let w_hat = quantize::normalized_project(w_star, QuantizationMode::Binary)?.to_vec();
    let oscillating: Vec<BinaryCoordinate> = (0..n)
        .filter(|&j| w_star[j].abs() < unit)
        .map(|j| BinaryCoordinate {
            index: j,
            w_star: w_star[j],
            w_hat: w_hat[j],
            deviation: (w_star[j] - w_hat[j]).abs(),
        })
        .collect();
    let sum: f64 = oscillating.iter().map(|c| c.deviation).sum();
    let bound = 2.0 * unit;
    let margin = interval_margin(sum, bound);
    let quantized = w_star.iter().all(|x| (x.abs() - unit).abs() <= CONDITION_TOL);
    Ok(ConditionReport {
        mode: QuantizationMode::Binary,
        satisfied: margin > 0.0,
        margin,
        value: sum,
        upper_bound: bound,
        details: ConditionDetails::Binary {
            w_hat,
            quantized,
            oscillating,
        },
    })
}

/// Ternary sufficient condition: with `w* = sum_j λ_j z_j` over the vertex
/// set and `z_1` the optimum, `0 < sum_{j>=2} λ_j < 1`.
pub fn check_ternary_condition(teacher: &Teacher) -> Result<ConditionReport> {
    check_teacher(teacher)?;
    let w_star = &teacher.w_star;
    let optimum = quantize::normalized_project(w_star, QuantizationMode::Ternary)?;
    let basis = geometry::vertex_set(w_star).with_first(&optimum)?;
    let lambdas = geometry::decompose_in_cone(w_star, &basis)?;
    let back = geometry::recompose(&lambdas, &basis);
    let reconstruction_error = vector::dist_sq(&back, w_star).sqrt();
    let tail: f64 = lambdas[1..].iter().sum();
    let margin = interval_margin(tail, 1.0);
    let quantized = basis.len() == 1;
    Ok(ConditionReport {
        mode: QuantizationMode::Ternary,
        satisfied: margin > 0.0,
        margin,
        value: tail,
        upper_bound: 1.0,
        details: ConditionDetails::Ternary {
            quantized,
            vertices: basis.iter().map(|z| z.to_vec()).collect(),
            lambdas,
            reconstruction_error,
        },
    })
}

pub fn check_condition(teacher: &Teacher, mode: QuantizationMode) -> Result<ConditionReport> {
    match mode {
        QuantizationMode::Binary => check_binary_condition(teacher),
        QuantizationMode::Ternary => check_ternary_condition(teacher),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexFrequency {
    pub vertex: Vec<f64>,
    pub lambda: f64,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    /// Vertex set of `w*`, optimum first.
    pub vertices: Vec<VertexFrequency>,
    /// Fraction of tail iterations spent outside the vertex set.
    pub outside_fraction: f64,
}

/// Fraction of tail iterations spent at each vertex of `w*`, alongside the
/// vertex's coefficient in the decomposition of `w*`. Informational only.
pub fn visit_frequency_vs_lambda(
    traj: &Trajectory,
    teacher: &Teacher,
    tail_fraction: f64,
) -> Result<FrequencyReport> {
    if traj.mode != QuantizationMode::Ternary {
        return Err(Error::ModeMismatch {
            expected: QuantizationMode::Ternary.to_string(),
            got: traj.mode.to_string(),
        });
    }
    Error::check_dim(traj.n, teacher.dim())?;
    let report = check_ternary_condition(teacher)?;
    let ConditionDetails::Ternary { lambdas, .. } = report.details else {
        unreachable!("ternary check returns ternary details")
    };
    let optimum = quantize::normalized_project(&teacher.w_star, QuantizationMode::Ternary)?;
    let basis = geometry::vertex_set(&teacher.w_star).with_first(&optimum)?;

    let start = tail_start(traj.len(), tail_fraction)?;
    let tail = &traj.records[start..];
    let total = tail.len().max(1) as f64;
    let mut counts = vec![0usize; basis.len()];
    let mut outside = 0usize;
    for r in tail {
        match basis.position(&r.w) {
            Some(i) => counts[i] += 1,
            None => outside += 1,
        }
    }
    Ok(FrequencyReport {
        vertices: basis
            .iter()
            .zip(lambdas)
            .zip(counts)
            .map(|((z, lambda), c)| VertexFrequency {
                vertex: z.to_vec(),
                lambda,
                frequency: c as f64 / total,
            })
            .collect(),
        outside_fraction: outside as f64 / total,
    })
}

/// `n × T` matrix of `sign(w_j^t)` over the last `tail` records (all if `None`).
pub fn sign_matrix(traj: &Trajectory, tail: Option<usize>) -> Vec<Vec<i8>> {
    let len = traj.len();
    let start = len - tail.unwrap_or(len).min(len);
    (0..traj.n)
        .map(|j| traj.records[start..].iter().map(|r| r.w.signs().as_slice()[j]).collect())
        .collect()
}

/// `<y^t, w*>` for every record.
pub fn inner_product_series(traj: &Trajectory, w_star: &[f64]) -> Result<Vec<f64>> {
    Error::check_dim(traj.n, w_star.len())?;
    Ok(traj.records.iter().map(|r| vector::dot(&r.y, w_star)).collect())
}

/// `max <z, w*/‖w*‖>` over every unit-norm point `z` of the quantized set, by
/// enumeration of sign patterns. Its arccos is the smallest angle between
/// `w*` and the quantized set.
pub fn max_quantized_cosine(w_star: &[f64], mode: QuantizationMode) -> Result<f64> {
    let n = w_star.len();
    if n == 0 || n > quantize::BRUTE_FORCE_MAX_DIM {
        return Err(Error::DimensionOutOfRange {
            what: "quantized-cosine enumeration",
            n,
            min: 1,
            max: quantize::BRUTE_FORCE_MAX_DIM,
        });
    }
    let unit = vector::normalized(w_star).ok_or(Error::ZeroVector("w* must be nonzero"))?;
    let alphabet: &[f64] = match mode {
        QuantizationMode::Binary => &[-1.0, 1.0],
        QuantizationMode::Ternary => &[-1.0, 0.0, 1.0],
    };
    let base = alphabet.len();
    let mut best = f64::NEG_INFINITY;
    for code in 0..base.pow(n as u32) {
        let mut c = code;
        let mut dot = 0.0;
        let mut support = 0usize;
        for u in &unit {
            let s = alphabet[c % base];
            c /= base;
            if s != 0.0 {
                support += 1;
                dot += s * u;
            }
        }
        if support > 0 {
            best = best.max(dot / (support as f64).sqrt());
        }
    }
    Ok(best)
}
