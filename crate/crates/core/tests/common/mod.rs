//! Independent oracles and instance builders shared by the integration suites.
//! Nothing here calls the library's projections, vertex sets or conditions.

#![allow(dead_code)]

use quantrec::dynamics::{
    ExperimentConfig, GradientSource, InitSpec, LearningRateSchedule, OutputTargets, TeacherSpec, UpdateRule,
};
use quantrec::model::Teacher;
use quantrec::QuantizationMode;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const ETA: f64 = 0.1;
pub const V: [f64; 4] = [1.0, 1.0, 1.0, 1.0];

pub struct TestRng(ChaCha8Rng);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.random_range(lo..hi)
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    pub fn sign(&mut self) -> f64 {
        if self.0.random_bool(0.5) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(&mut self.0);
        p
    }

    pub fn seed(&mut self) -> u64 {
        self.0.random()
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn unit(x: &[f64]) -> Vec<f64> {
    let r = norm(x);
    x.iter().map(|v| v / r).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn signum(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Every sign pattern over the mode's alphabet, excluding the zero pattern.
pub fn patterns(n: usize, mode: QuantizationMode) -> Vec<Vec<i8>> {
    let alphabet: &[i8] = match mode {
        QuantizationMode::Binary => &[-1, 1],
        QuantizationMode::Ternary => &[-1, 0, 1],
    };
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p: Vec<i8>| {
                alphabet.iter().map(move |&s| {
                    let mut q = p.clone();
                    q.push(s);
                    q
                })
            })
            .collect();
    }
    out.retain(|p| p.iter().any(|&s| s != 0));
    out
}

/// Exhaustive nearest distance from `y` to `{δ s : δ >= 0}` over all patterns.
pub fn brute_force_distance(y: &[f64], pats: &[Vec<i8>]) -> f64 {
    let yy = dot(y, y);
    let mut best = yy;
    for p in pats {
        let k = p.iter().filter(|&&s| s != 0).count() as f64;
        let ys: f64 = y.iter().zip(p).map(|(a, &s)| a * f64::from(s)).sum();
        if ys > 0.0 {
            best = best.min(yy - ys * ys / k);
        }
    }
    best.max(0.0).sqrt()
}

/// Unit-norm nearest pattern by exhaustive search (ties: first found with the
/// smallest support, which matches the documented rule for generic inputs).
pub fn brute_force_nproj(y: &[f64], mode: QuantizationMode) -> Vec<f64> {
    let mut best: Option<(f64, usize, Vec<i8>)> = None;
    for p in patterns(y.len(), mode) {
        let k = p.iter().filter(|&&s| s != 0).count();
        let ys: f64 = y.iter().zip(&p).map(|(a, &s)| a * f64::from(s)).sum();
        let score = ys / (k as f64).sqrt();
        let better = match &best {
            None => true,
            Some((b, bk, _)) => score > *b + 1e-12 || ((score - b).abs() <= 1e-12 && k < *bk),
        };
        if better {
            best = Some((score, k, p));
        }
    }
    let (_, k, p) = best.unwrap();
    p.iter().map(|&s| f64::from(s) / (k as f64).sqrt()).collect()
}

/// Vertex set by its defining property: unit ternary `z` with support `S`
/// agreeing in sign with `x` on `S`, nonzero there, and with every magnitude
/// inside `S` strictly larger than every magnitude outside.
pub fn vertex_oracle(x: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut out = Vec::new();
    for p in patterns(n, QuantizationMode::Ternary) {
        let ok_signs = (0..n).all(|i| p[i] == 0 || p[i] == signum(x[i]));
        if !ok_signs {
            continue;
        }
        let inside = (0..n).filter(|&i| p[i] != 0).map(|i| x[i].abs()).fold(f64::INFINITY, f64::min);
        let outside = (0..n).filter(|&i| p[i] == 0).map(|i| x[i].abs()).fold(0.0, f64::max);
        if inside > outside {
            let k = p.iter().filter(|&&s| s != 0).count() as f64;
            out.push(p.iter().map(|&s| f64::from(s) / k.sqrt()).collect());
        }
    }
    out
}

/// Coefficients of `x` over its nested vertices, from sorted magnitudes:
/// `μ_k = √k (a_k − a_{k+1})`, returned with the support size `k`.
pub fn decomposition_oracle(x: &[f64]) -> Vec<(usize, f64)> {
    let mut a: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    a.sort_by(|p, q| q.partial_cmp(p).unwrap());
    a.push(0.0);
    (1..=x.len())
        .filter(|&k| a[k - 1] > a[k])
        .map(|k| (k, (k as f64).sqrt() * (a[k - 1] - a[k])))
        .collect()
}

/// `S = Σ_{|w_j| < 1/√n} |w_j − sign(w_j)/√n|` with `sign(0) = +1`.
pub fn binary_deviation_sum(w: &[f64]) -> f64 {
    let u = 1.0 / (w.len() as f64).sqrt();
    w.iter()
        .filter(|x| x.abs() < u)
        .map(|&x| (x - if x >= 0.0 { u } else { -u }).abs())
        .sum()
}

/// Sum of the coefficients of every vertex except the optimum.
pub fn ternary_off_optimum_sum(w: &[f64]) -> f64 {
    let k_opt = brute_force_nproj(w, QuantizationMode::Ternary)
        .iter()
        .filter(|&&v| v != 0.0)
        .count();
    decomposition_oracle(w)
        .into_iter()
        .filter(|&(k, _)| k != k_opt)
        .map(|(_, mu)| mu)
        .sum()
}

/// Binary teacher near `s/√n` with `0 < S < 2/√n` and margin `>= 0.2/√n`.
pub fn binary_recurrent_teacher(rng: &mut TestRng, n: usize) -> Vec<f64> {
    let u = 1.0 / (n as f64).sqrt();
    loop {
        let s: Vec<f64> = (0..n).map(|_| rng.sign()).collect();
        let raw: Vec<f64> = s.iter().map(|si| si * u + 0.15 * rng.normal()).collect();
        let w = unit(&raw);
        if w.iter().zip(&s).any(|(a, b)| a * b <= 0.0) {
            continue;
        }
        let sum = binary_deviation_sum(&w);
        if sum > 0.0 && sum.min(2.0 * u - sum) >= 0.2 * u {
            return w;
        }
    }
}

/// Ternary teacher built from nested vertices with one dominant coefficient,
/// kept when the off-optimum coefficients sum to a value in `(0, 0.5]`.
pub fn ternary_recurrent_teacher(rng: &mut TestRng, n: usize) -> (Vec<f64>, f64) {
    loop {
        let perm = rng.permutation(n);
        let signs: Vec<f64> = (0..n).map(|_| rng.sign()).collect();
        let kstar = rng.index(n);
        let mut lam: Vec<f64> = (0..n).map(|_| rng.uniform(0.01, 1.0)).collect();
        let others: f64 = lam.iter().enumerate().filter(|&(k, _)| k != kstar).map(|(_, l)| l).sum();
        let target = rng.uniform(0.05, 0.45);
        if others > 0.0 {
            lam.iter_mut().for_each(|l| *l *= target / others);
        }
        lam[kstar] = 1.0;
        let mut raw = vec![0.0; n];
        for (k, l) in lam.iter().enumerate() {
            let scale = l / ((k + 1) as f64).sqrt();
            for &j in &perm[..=k] {
                raw[j] += scale * signs[j];
            }
        }
        let w = unit(&raw);
        let rest = ternary_off_optimum_sum(&w);
        if rest > 0.0 && rest <= 0.5 {
            return (w, rest);
        }
    }
}

/// Gaussian unit teacher whose magnitudes are at least `gap` from zero and
/// from each other.
pub fn separated_teacher(rng: &mut TestRng, n: usize, gap: f64) -> Vec<f64> {
    loop {
        let w = unit(&rng.normals(n));
        let mut a: Vec<f64> = w.iter().map(|v| v.abs()).collect();
        a.sort_by(|p, q| p.partial_cmp(q).unwrap());
        if a[0] >= gap && a.windows(2).all(|p| p[1] - p[0] >= gap) {
            return w;
        }
    }
}

pub fn config(w_star: Vec<f64>, mode: QuantizationMode, iterations: usize, init_seed: u64) -> ExperimentConfig {
    let n = w_star.len();
    ExperimentConfig {
        label: None,
        n,
        mode,
        teacher: TeacherSpec::Explicit(Teacher::new(w_star, V.to_vec()).unwrap()),
        schedule: LearningRateSchedule::constant(ETA),
        iterations,
        y0: InitSpec::Random { seed: init_seed },
        gradient_source: GradientSource::Population,
        update_rule: UpdateRule::Quant,
        outputs: OutputTargets::default(),
    }
}
