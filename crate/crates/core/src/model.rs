//! One-hidden-layer network `x ↦ vᵀσ(Zw)` with binary activation
//! `σ(x) = 1{x > 0}`, Gaussian inputs `Z ~ N(0, I)` of shape `m × n`, and a
//! fixed second layer `v`.
//!
//! Closed forms (for `w ≠ 0`, `θ` the angle between `w` and the teacher `w*`):
//!
//! ```text
//! f(w)       = ‖v‖²/(2π) · θ
//! ∇̃f(w)      = ‖v‖²/(2√(2π)) · (w/‖w‖ − w*)
//! ```
//!
//! The coarse gradient replaces `σ'` by the ReLU derivative `1{x > 0}` in the
//! chain rule and multiplies by the prediction residual. Both closed forms are
//! checked against Monte-Carlo estimates in the test suite and by
//! `quantrec verify`.
//!
//! Random inputs come from [`GaussianSampler`]: a ChaCha8 generator seeded
//! with `seed_from_u64(seed)`, one independent ChaCha stream per shard
//! (`set_stream(shard)`), and `rand_distr::StandardNormal` (ziggurat) for the
//! normal transform. Matrices are filled row-major. All three pieces are
//! platform independent, so a seed pins the exact sample stream.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantize::QuantizedWeight;
use crate::vector;

/// Unit-norm tolerance on teacher weights.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// Samples per Monte-Carlo shard. Fixed so that results do not depend on the
/// number of worker threads.
pub const MC_SHARD_SIZE: usize = 1 << 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Teacher {
    pub w_star: Vec<f64>,
    pub v_norm_sq: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
}

impl Teacher {
    /// Teacher with an explicit second layer `v` (needed for sampled paths).
    pub fn new(w_star: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let v_norm_sq = vector::dot(&v, &v);
        let t = Teacher {
            w_star,
            v_norm_sq,
            v: Some(v),
        };
        t.validate()?;
        Ok(t)
    }

    /// Teacher known only through `‖v‖²`; enough for population quantities.
    pub fn population(w_star: Vec<f64>, v_norm_sq: f64) -> Result<Self> {
        let t = Teacher {
            w_star,
            v_norm_sq,
            v: None,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w_star.is_empty() {
            return Err(Error::invalid("teacher.w_star", "must be nonempty"));
        }
        let r = vector::norm(&self.w_star);
        if r.is_nan() || (r - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::invalid(
                "teacher.w_star",
                format!("norm is {r}, expected 1 (±{UNIT_NORM_TOL})"),
            ));
        }
        if !(self.v_norm_sq.is_finite() && self.v_norm_sq > 0.0) {
            return Err(Error::invalid("teacher.v_norm_sq", "must be positive and finite"));
        }
        if let Some(v) = &self.v {
            let s = vector::dot(v, v);
            if (s - self.v_norm_sq).abs() > UNIT_NORM_TOL * self.v_norm_sq.max(1.0) {
                return Err(Error::invalid(
                    "teacher.v",
                    format!("‖v‖² = {s} disagrees with v_norm_sq = {}", self.v_norm_sq),
                ));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.w_star.len()
    }

    pub fn v(&self) -> Result<&[f64]> {
        self.v
            .as_deref()
            .ok_or_else(|| Error::invalid("teacher.v", "second-layer weights are required for sampled quantities"))
    }

    /// The coarse-gradient constant `‖v‖²/(2√(2π))`.
    pub fn grad_constant(&self) -> f64 {
        coarse_grad_constant(self.v_norm_sq)
    }
}

pub fn coarse_grad_constant(v_norm_sq: f64) -> f64 {
    v_norm_sq / (2.0 * (2.0 * PI).sqrt())
}

/// Deterministic source of standard normal entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaussianSampler {
    pub seed: u64,
}

impl GaussianSampler {
    pub fn new(seed: u64) -> Self {
        GaussianSampler { seed }
    }

    pub fn stream(&self, shard: u64) -> NormalStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(shard);
        NormalStream { rng }
    }
}

#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub fn sample(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.rng.sample(StandardNormal);
        }
    }

    pub fn vector(&mut self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        self.fill(&mut v);
        v
    }
}

fn check_shapes(z: &[f64], w: &[f64], v: &[f64]) -> Result<()> {
    Error::check_dim(v.len() * w.len(), z.len())
}

#[inline]
fn row_dot(z: &[f64], row: usize, n: usize, w: &[f64]) -> f64 {
    vector::dot(&z[row * n..(row + 1) * n], w)
}

/// `vᵀσ(Zw)` with `Z` row-major, `m = v.len()` rows and `n = w.len()` columns.
pub fn forward(z: &[f64], w: &[f64], v: &[f64]) -> Result<f64> {
    check_shapes(z, w, v)?;
    Ok(forward_unchecked(z, w, v))
}

fn forward_unchecked(z: &[f64], w: &[f64], v: &[f64]) -> f64 {
    let n = w.len();
    v.iter()
        .enumerate()
        .filter(|&(i, _)| row_dot(z, i, n, w) > 0.0)
        .map(|(_, vi)| vi)
        .sum()
}

/// `½(vᵀσ(Zw) − vᵀσ(Zw*))²`.
pub fn sample_loss(z: &[f64], w: &[f64], teacher: &Teacher) -> Result<f64> {
    let v = teacher.v()?;
    Error::check_dim(teacher.dim(), w.len())?;
    check_shapes(z, w, v)?;
    let r = forward_unchecked(z, w, v) - forward_unchecked(z, &teacher.w_star, v);
    Ok(0.5 * r * r)
}

/// `Zᵀ(μ'(Zw) ⊙ v) · (vᵀσ(Zw) − vᵀσ(Zw*))` with `μ'(x) = 1{x > 0}`.
pub fn sample_coarse_grad(z: &[f64], w: &[f64], teacher: &Teacher) -> Result<Vec<f64>> {
    let v = teacher.v()?;
    Error::check_dim(teacher.dim(), w.len())?;
    check_shapes(z, w, v)?;
    let mut out = vec![0.0; w.len()];
    sample_coarse_grad_into(z, w, &teacher.w_star, v, &mut out);
    Ok(out)
}

fn sample_coarse_grad_into(z: &[f64], w: &[f64], w_star: &[f64], v: &[f64], out: &mut [f64]) {
    let n = w.len();
    out.iter_mut().for_each(|o| *o = 0.0);
    let residual = forward_unchecked(z, w, v) - forward_unchecked(z, w_star, v);
    if residual == 0.0 {
        return;
    }
    for (i, vi) in v.iter().enumerate() {
        let row = &z[i * n..(i + 1) * n];
        if vector::dot(row, w) > 0.0 {
            let c = vi * residual;
            for (o, zij) in out.iter_mut().zip(row) {
                *o += zij * c;
            }
        }
    }
}

/// `‖v‖²/(2π) · arccos(wᵀw*/‖w‖)`.
pub fn population_loss(w: &[f64], teacher: &Teacher) -> Result<f64> {
    Error::check_dim(teacher.dim(), w.len())?;
    let r = vector::norm(w);
    if r == 0.0 {
        return Err(Error::ZeroVector("population loss is undefined at w = 0"));
    }
    let cos = (vector::dot(w, &teacher.w_star) / r).clamp(-1.0, 1.0);
    Ok(teacher.v_norm_sq / (2.0 * PI) * cos.acos())
}

/// `‖v‖²/(2√(2π)) · (w/‖w‖ − w*)`.
pub fn population_coarse_grad(w: &[f64], teacher: &Teacher) -> Result<Vec<f64>> {
    Error::check_dim(teacher.dim(), w.len())?;
    let unit = vector::normalized(w)
        .ok_or(Error::ZeroVector("coarse gradient is undefined at w = 0"))?;
    Ok(grad_from_unit(&unit, teacher))
}

/// Population coarse gradient at a quantized state. Depends on the sign
/// pattern only, since the gradient is invariant to positive rescaling.
pub fn population_coarse_grad_at(w: &QuantizedWeight, teacher: &Teacher) -> Result<Vec<f64>> {
    Error::check_dim(teacher.dim(), w.dim())?;
    if w.support_size() == 0 {
        return Err(Error::ZeroVector("coarse gradient is undefined at w = 0"));
    }
    Ok(grad_from_unit(&w.unit_vector(), teacher))
}

fn grad_from_unit(unit: &[f64], teacher: &Teacher) -> Vec<f64> {
    let c = teacher.grad_constant();
    unit.iter().zip(&teacher.w_star).map(|(u, s)| c * (u - s)).collect()
}

/// Mean of a batch of sample coarse gradients drawn from `stream`.
pub fn batch_coarse_grad(
    w: &[f64],
    teacher: &Teacher,
    stream: &mut NormalStream,
    batch: usize,
) -> Result<Vec<f64>> {
    let v = teacher.v()?;
    Error::check_dim(teacher.dim(), w.len())?;
    if batch == 0 {
        return Err(Error::invalid("batch", "must be at least 1"));
    }
    let n = w.len();
    let mut z = vec![0.0; v.len() * n];
    let mut g = vec![0.0; n];
    let mut acc = vec![0.0; n];
    for _ in 0..batch {
        stream.fill(&mut z);
        sample_coarse_grad_into(&z, w, &teacher.w_star, v, &mut g);
        for (a, x) in acc.iter_mut().zip(&g) {
            *a += x;
        }
    }
    Ok(vector::scale(&acc, 1.0 / batch as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorEstimate {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub count: usize,
}

/// Running mean / sum of squared deviations per component.
#[derive(Debug, Clone)]
struct Moments {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Moments {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let k = self.count as f64;
        for ((m, s), &xi) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = xi - *m;
            *m += d / k;
            *s += d * (xi - *m);
        }
    }

    fn merge(mut self, other: &Moments) -> Self {
        if other.count == 0 {
            return self;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.count += other.count;
        self
    }

    fn std_err(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![f64::INFINITY; self.mean.len()];
        }
        let n = self.count as f64;
        self.m2.iter().map(|s| (s / (n - 1.0)).sqrt() / n.sqrt()).collect()
    }
}

/// Draws `count` matrices and accumulates `f(Z)` per shard. Shard `s` uses
/// stream `s` of `sampler`; shards are merged in index order.
fn mc_moments<F>(dim: usize, m: usize, n: usize, sampler: GaussianSampler, count: usize, f: F) -> Moments
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let shards = count.div_ceil(MC_SHARD_SIZE);
    let parts: Vec<Moments> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let len = MC_SHARD_SIZE.min(count - s * MC_SHARD_SIZE);
            let mut stream = sampler.stream(s as u64);
            let mut z = vec![0.0; m * n];
            let mut out = vec![0.0; dim];
            let mut acc = Moments::new(dim);
            for _ in 0..len {
                stream.fill(&mut z);
                f(&z, &mut out);
                acc.push(&out);
            }
            acc
        })
        .collect();
    parts
        .iter()
        .fold(Moments::new(dim), |acc, p| acc.merge(p))
}

fn check_mc<'a>(w: &[f64], teacher: &'a Teacher, count: usize) -> Result<&'a [f64]> {
    let v = teacher.v()?;
    Error::check_dim(teacher.dim(), w.len())?;
    if count == 0 {
        return Err(Error::invalid("count", "must be at least 1"));
    }
    Ok(v)
}

pub fn mc_estimate_loss(
    w: &[f64],
    teacher: &Teacher,
    sampler: GaussianSampler,
    count: usize,
) -> Result<ScalarEstimate> {
    let v = check_mc(w, teacher, count)?;
    let w_star = &teacher.w_star;
    let moments = mc_moments(1, v.len(), w.len(), sampler, count, |z, out| {
        let r = forward_unchecked(z, w, v) - forward_unchecked(z, w_star, v);
        out[0] = 0.5 * r * r;
    });
    Ok(ScalarEstimate {
        mean: moments.mean[0],
        std_err: moments.std_err()[0],
        count,
    })
}

pub fn mc_estimate_grad(
    w: &[f64],
    teacher: &Teacher,
    sampler: GaussianSampler,
    count: usize,
) -> Result<VectorEstimate> {
    let v = check_mc(w, teacher, count)?;
    let w_star = &teacher.w_star;
    let moments = mc_moments(w.len(), v.len(), w.len(), sampler, count, |z, out| {
        sample_coarse_grad_into(z, w, w_star, v, out);
    });
    Ok(VectorEstimate {
        std_err: moments.std_err(),
        mean: moments.mean,
        count,
    })
}
