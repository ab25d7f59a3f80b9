//! Euclidean projection onto the binary set `R+ x {±1}^n` and the ternary set
//! `R+ x {0,±1}^n`, plus the unit-norm ("normalized") projection used by the
//! training iteration and a brute-force oracle over every sign pattern.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SignPattern;
use crate::vector;

/// Largest dimension accepted by [`brute_force_project`] (3^12 - 1 patterns).
pub const BRUTE_FORCE_MAX_DIM: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantizationMode {
    Binary,
    Ternary,
}

impl fmt::Display for QuantizationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuantizationMode::Binary => f.write_str("binary"),
            QuantizationMode::Ternary => f.write_str("ternary"),
        }
    }
}

impl std::str::FromStr for QuantizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binary" => Ok(QuantizationMode::Binary),
            "ternary" => Ok(QuantizationMode::Ternary),
            other => Err(Error::invalid("mode", format!("unknown mode {other:?}"))),
        }
    }
}

/// A point `delta * signs` of the quantized set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedWeight {
    delta: f64,
    signs: SignPattern,
    mode: QuantizationMode,
}

impl QuantizedWeight {
    pub fn new(delta: f64, signs: SignPattern, mode: QuantizationMode) -> Result<Self> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::invalid("delta", format!("{delta} is not a finite nonnegative scale")));
        }
        if mode == QuantizationMode::Binary && !signs.is_regular() {
            return Err(Error::invalid("signs", "binary weights cannot contain zero signs"));
        }
        Ok(Self { delta, signs, mode })
    }

    /// Unit-norm weight with the given pattern; `delta = 1/sqrt(support)`.
    pub fn unit(signs: SignPattern, mode: QuantizationMode) -> Result<Self> {
        let k = signs.support_size();
        if k == 0 {
            return Err(Error::ZeroVector("unit quantized weight needs a nonzero sign"));
        }
        Self::new(1.0 / (k as f64).sqrt(), signs, mode)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn signs(&self) -> &SignPattern {
        &self.signs
    }

    pub fn mode(&self) -> QuantizationMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.signs.len()
    }

    pub fn support_size(&self) -> usize {
        self.signs.support_size()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.signs.iter().map(|&s| self.delta * f64::from(s)).collect()
    }

    pub fn norm(&self) -> f64 {
        self.delta * (self.support_size() as f64).sqrt()
    }

    /// `signs / sqrt(support)`, computed from the pattern alone so that every
    /// positive rescaling of the same state yields bit-identical output.
    pub fn unit_vector(&self) -> Vec<f64> {
        let k = self.support_size();
        if k == 0 {
            return vec![0.0; self.dim()];
        }
        let d = 1.0 / (k as f64).sqrt();
        self.signs.iter().map(|&s| d * f64::from(s)).collect()
    }

    pub fn normalized(&self) -> Result<Self> {
        Self::unit(self.signs.clone(), self.mode)
    }

    /// Discrete state equality: same sign pattern and support. Scales are ignored.
    pub fn same_state(&self, other: &QuantizedWeight) -> bool {
        self.signs == other.signs
    }
}

impl fmt::Display for QuantizedWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} * [", self.delta)?;
        for (i, s) in self.signs.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{s}")?;
        }
        f.write_str("]")
    }
}

fn check_nonzero(y: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::DimensionOutOfRange {
            what: "projection",
            n: 0,
            min: 1,
            max: usize::MAX,
        });
    }
    if vector::is_zero(y) {
        return Err(Error::ZeroVector("cannot project the zero vector"));
    }
    Ok(())
}

/// Binary projection: `(‖y‖₁/n) · bsign(y)` with `bsign(0) = +1`.
pub fn project_binary(y: &[f64]) -> Result<QuantizedWeight> {
    check_nonzero(y)?;
    let delta = vector::norm_l1(y) / y.len() as f64;
    let signs = SignPattern::new(y.iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect());
    QuantizedWeight::new(delta, signs, QuantizationMode::Binary)
}

/// Support size `j*` maximizing `‖y_[j]‖₁² / j`; ties go to the smallest `j`.
pub fn ternary_support_size(y: &[f64]) -> usize {
    let order = vector::magnitude_order(y);
    let mut prefix = 0.0;
    let mut best = (f64::NEG_INFINITY, 1);
    for (j, &i) in order.iter().enumerate() {
        prefix += y[i].abs();
        let score = prefix * prefix / (j + 1) as f64;
        if score > best.0 {
            best = (score, j + 1);
        }
    }
    best.1
}

/// Ternary projection: keep the `j*` largest-magnitude entries with their
/// signs and scale by their mean magnitude.
pub fn project_ternary(y: &[f64]) -> Result<QuantizedWeight> {
    check_nonzero(y)?;
    let order = vector::magnitude_order(y);
    let k = ternary_support_size(y);
    let mut signs = vec![0i8; y.len()];
    let mut mass = 0.0;
    for &i in &order[..k] {
        signs[i] = sign_of(y[i]);
        mass += y[i].abs();
    }
    QuantizedWeight::new(mass / k as f64, SignPattern::new(signs), QuantizationMode::Ternary)
}

pub fn project(y: &[f64], mode: QuantizationMode) -> Result<QuantizedWeight> {
    match mode {
        QuantizationMode::Binary => project_binary(y),
        QuantizationMode::Ternary => project_ternary(y),
    }
}

/// Projection rescaled to unit Euclidean norm.
pub fn normalized_project(y: &[f64], mode: QuantizationMode) -> Result<QuantizedWeight> {
    project(y, mode)?.normalized()
}

pub(crate) fn sign_of(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

#[derive(Debug, Clone)]
pub struct BruteForceProjection {
    pub weight: QuantizedWeight,
    pub distance_sq: f64,
    /// Number of patterns attaining the optimum (within round-off).
    pub ties: usize,
}

/// Exhaustive nearest point of the quantized set. For each pattern `s` the
/// optimal scale is `max(0, <y,s>/‖s‖²)`; the pattern with the smallest
/// residual wins, ties broken by smaller support, then lexicographic pattern.
pub fn brute_force_project(y: &[f64], mode: QuantizationMode) -> Result<BruteForceProjection> {
    let n = y.len();
    if n == 0 || n > BRUTE_FORCE_MAX_DIM {
        return Err(Error::DimensionOutOfRange {
            what: "brute-force projection",
            n,
            min: 1,
            max: BRUTE_FORCE_MAX_DIM,
        });
    }
    check_nonzero(y)?;

    let alphabet: &[i8] = match mode {
        QuantizationMode::Binary => &[-1, 1],
        QuantizationMode::Ternary => &[-1, 0, 1],
    };
    let base = alphabet.len();
    let total = base.pow(n as u32);

    let mut candidates: Vec<(f64, f64, Vec<i8>)> = Vec::with_capacity(total);
    let mut pattern = vec![0i8; n];
    for code in 0..total {
        let mut c = code;
        for slot in pattern.iter_mut().rev() {
            *slot = alphabet[c % base];
            c /= base;
        }
        let support = pattern.iter().filter(|&&s| s != 0).count();
        if support == 0 {
            continue;
        }
        let inner: f64 = y.iter().zip(&pattern).map(|(v, &s)| v * f64::from(s)).sum();
        let delta = (inner / support as f64).max(0.0);
        let dist: f64 = y
            .iter()
            .zip(&pattern)
            .map(|(v, &s)| {
                let r = v - delta * f64::from(s);
                r * r
            })
            .sum();
        candidates.push((dist, delta, pattern.clone()));
    }

    let best = candidates.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * vector::dot(y, y).max(1.0);
    let mut tied: Vec<&(f64, f64, Vec<i8>)> =
        candidates.iter().filter(|c| c.0 <= best + tol).collect();
    let ties = tied.len();
    tied.sort_by(|a, b| {
        let sa = a.2.iter().filter(|&&s| s != 0).count();
        let sb = b.2.iter().filter(|&&s| s != 0).count();
        sa.cmp(&sb).then_with(|| a.2.cmp(&b.2))
    });
    let (distance_sq, delta, signs) = tied[0].clone();
    Ok(BruteForceProjection {
        weight: QuantizedWeight::new(delta, SignPattern::new(signs), mode)?,
        distance_sq,
        ties,
    })
}
