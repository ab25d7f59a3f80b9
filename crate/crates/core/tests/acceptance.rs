//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the test
//! harness so the lines are always shown; exits nonzero if any criterion fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use quantrec::analysis;
use quantrec::cli::{run_verification, VerifyArgs};
use quantrec::dynamics::{self, Trajectory};
use quantrec::geometry;
use quantrec::quantize;
use quantrec::QuantizationMode;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

const PROJECTION_TOL: f64 = 1e-10;
const ROUND_TRIP_TOL: f64 = 1e-10;
const ITERATIONS: usize = 10_000;

fn projection_oracle() -> Outcome {
    let mut rng = TestRng::new(1);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for n in 2..=8 {
        for mode in [QuantizationMode::Binary, QuantizationMode::Ternary] {
            let pats = patterns(n, mode);
            for _ in 0..10_000 {
                let y = rng.normals(n);
                let p = quantize::project(&y, mode).unwrap().to_vec();
                let d: f64 = y.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let err = (d - brute_force_distance(&y, &pats)).abs();
                worst = worst.max(err);
                if err > PROJECTION_TOL {
                    failures += 1;
                }
            }
        }
    }
    outcome(failures == 0, format!("140000 vectors, {failures} failures, max |Δd| = {worst:.2e}"))
}

fn support_threshold() -> Outcome {
    let mut rng = TestRng::new(2);
    let mut zeroed = 0;
    let total = 10_000;
    for _ in 0..total {
        let n = 2 + rng.index(7);
        let mut y = rng.normals(n);
        let j = rng.index(n);
        let rest: f64 = y.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, v)| v.abs()).sum();
        y[j] = rng.sign() * rng.uniform(0.0, 1.0) * rest / (5.0 * n as f64);
        let l1: f64 = y.iter().map(|v| v.abs()).sum();
        assert!(y[j].abs() < l1 / (5.0 * n as f64));
        if quantize::project_ternary(&y).unwrap().signs().as_slice()[j] == 0 {
            zeroed += 1;
        }
    }
    outcome(zeroed == total, format!("{zeroed}/{total} planted coordinates zeroed"))
}

fn coarse_gradient_constant() -> Outcome {
    let report = run_verification(&VerifyArgs::default()).unwrap();
    let max_grad = report.instances.iter().map(|i| i.max_grad_z).fold(0.0, f64::max);
    let max_loss = report.instances.iter().map(|i| i.loss_z).fold(0.0, f64::max);
    let failed = report.instances.iter().filter(|i| !i.passed).count();
    outcome(
        report.passed,
        format!(
            "{} instances x {} draws, {failed} failed, max z: gradient {max_grad:.2}, loss {max_loss:.2}",
            report.instances.len(),
            report.count
        ),
    )
}

fn example1_exactness() -> Outcome {
    let fractions = [
        [0.5, 0.5, 0.5, 0.5],
        [0.01, 0.99, 0.01, 0.99],
        [0.99, 0.01, 0.99, 0.01],
        [0.3, 0.7, 0.2, 0.9],
        [0.77, 0.13, 0.61, 0.05],
    ];
    let all_plus = [1i8, 1, 1, 1];
    for f in fractions {
        let traj = dynamics::run(&dynamics::example1_config(f).unwrap()).unwrap();
        let w: Vec<&[i8]> = traj.records.iter().map(|r| r.w.signs().as_slice()).collect();
        if !(0..=1000).all(|t| w[t + 3] == w[t]) {
            return outcome(false, format!("period 3 broken for fractions {f:?}"));
        }
        if w.iter().any(|p| *p == all_plus) {
            return outcome(false, format!("optimum reached for fractions {f:?}"));
        }
    }
    outcome(true, format!("{} initializations, period 3 on t in [0, 1000], optimum never visited", fractions.len()))
}

fn visits(traj: &Trajectory, target: &[f64]) -> Vec<usize> {
    let t: Vec<i8> = target.iter().map(|&x| signum(x)).collect();
    traj.records
        .iter()
        .filter(|r| r.w.signs().as_slice() == t.as_slice())
        .map(|r| r.t)
        .collect()
}

/// Each fifth of the final half contains a visit.
fn spread_over_tail(visit_times: &[usize], len: usize) -> bool {
    let start = len / 2;
    let width = (len - start) / 5;
    (0..5).all(|b| {
        let lo = start + b * width;
        let hi = if b == 4 { len } else { lo + width };
        visit_times.iter().any(|&t| t >= lo && t < hi)
    })
}

struct Instance {
    w_star: Vec<f64>,
    traj: Trajectory,
}

fn binary_instances() -> Vec<Instance> {
    let mut rng = TestRng::new(5);
    [4, 4, 4, 4, 4, 8, 8, 8, 8, 8]
        .iter()
        .map(|&n| {
            let w = binary_recurrent_teacher(&mut rng, n);
            let traj = dynamics::run(&config(w.clone(), QuantizationMode::Binary, ITERATIONS, rng.seed())).unwrap();
            Instance { w_star: w, traj }
        })
        .collect()
}

fn binary_recurrence(instances: &[Instance]) -> Outcome {
    let mut min_visits = usize::MAX;
    for inst in instances {
        let n = inst.w_star.len();
        let teacher = quantrec::model::Teacher::population(inst.w_star.clone(), 4.0).unwrap();
        let report = analysis::check_binary_condition(&teacher).unwrap();
        let sum = binary_deviation_sum(&inst.w_star);
        if !report.satisfied || (report.value - sum).abs() > 1e-12 {
            return outcome(false, format!("condition mismatch: library {} vs oracle {sum}", report.value));
        }
        let u = 1.0 / (n as f64).sqrt();
        let opt: Vec<f64> = inst.w_star.iter().map(|&x| if x >= 0.0 { u } else { -u }).collect();
        let v = visits(&inst.traj, &opt);
        min_visits = min_visits.min(v.len());
        if v.len() < 10 || !spread_over_tail(&v, inst.traj.len()) {
            return outcome(false, format!("n = {n}: {} visits, spread = {}", v.len(), spread_over_tail(&v, inst.traj.len())));
        }
    }
    outcome(true, format!("10 teachers, n in {{4, 8}}, min visits {min_visits}, every tail fifth visited"))
}

fn ternary_confinement() -> (Outcome, Vec<Instance>) {
    let mut rng = TestRng::new(6);
    let mut instances = Vec::new();
    let mut max_set = 0;
    for &n in &[4, 4, 4, 4, 4, 8, 8, 8, 8, 8] {
        let w = separated_teacher(&mut rng, n, 0.02);
        let traj = dynamics::run(&config(w.clone(), QuantizationMode::Ternary, ITERATIONS, rng.seed())).unwrap();
        let vertices = vertex_oracle(&w);
        let tail = analysis::tail_limit_set(&traj, 0.5).unwrap();
        max_set = max_set.max(tail.len());
        let outside = tail
            .iter()
            .filter(|q| {
                let u = q.unit_vector();
                !vertices.iter().any(|z| z.iter().zip(&u).all(|(a, b)| (a - b).abs() < 1e-12))
            })
            .count();
        if outside > 0 || tail.len() > n || !geometry::cone_of(&w).is_regular() {
            return (
                outcome(false, format!("n = {n}: {outside} of {} tail states outside the vertex set", tail.len())),
                instances,
            );
        }
        instances.push(Instance { w_star: w, traj });
    }
    (
        outcome(true, format!("10 regular teachers, tail sets inside the vertex set, max size {max_set}")),
        instances,
    )
}

fn ternary_instances() -> Vec<Instance> {
    let mut rng = TestRng::new(7);
    [4, 4, 4, 4, 4, 8, 8, 8, 8, 8]
        .iter()
        .map(|&n| {
            let (w, _) = ternary_recurrent_teacher(&mut rng, n);
            let traj = dynamics::run(&config(w.clone(), QuantizationMode::Ternary, ITERATIONS, rng.seed())).unwrap();
            Instance { w_star: w, traj }
        })
        .collect()
}

fn ternary_recurrence(instances: &[Instance]) -> Outcome {
    let mut min_visits = usize::MAX;
    for inst in instances {
        let rest = ternary_off_optimum_sum(&inst.w_star);
        let teacher = quantrec::model::Teacher::population(inst.w_star.clone(), 4.0).unwrap();
        let report = analysis::check_ternary_condition(&teacher).unwrap();
        if !report.satisfied || (report.value - rest).abs() > 1e-10 {
            return outcome(false, format!("condition mismatch: library {} vs oracle {rest}", report.value));
        }
        let opt = brute_force_nproj(&inst.w_star, QuantizationMode::Ternary);
        let v = visits(&inst.traj, &opt);
        min_visits = min_visits.min(v.len());
        if v.len() < 10 {
            return outcome(false, format!("n = {}: only {} visits (sum {rest:.3})", inst.w_star.len(), v.len()));
        }
    }
    outcome(true, format!("10 constructed teachers, min visits {min_visits}"))
}

fn oscillation() -> (Outcome, Vec<Instance>) {
    let mut rng = TestRng::new(8);
    let mut instances = Vec::new();
    let mut min_runs = usize::MAX;
    let mut checked = 0;
    for &n in &[4, 4, 4, 4, 4, 8, 8, 8, 8, 8] {
        let u = 1.0 / (n as f64).sqrt();
        let w = loop {
            let w = unit(&rng.normals(n));
            if w.iter().any(|x| x.abs() < u) {
                break w;
            }
        };
        let traj = dynamics::run(&config(w.clone(), QuantizationMode::Binary, ITERATIONS, rng.seed())).unwrap();
        for j in (0..n).filter(|&j| w[j].abs() < u) {
            let mut runs = [0usize; 2];
            let mut prev = 0i8;
            for r in &traj.records {
                let s = r.w.signs().as_slice()[j];
                assert!((r.w.to_vec()[j].abs() - u).abs() < 1e-15);
                if s != prev {
                    runs[usize::from(s > 0)] += 1;
                    prev = s;
                }
            }
            checked += 1;
            min_runs = min_runs.min(runs[0].min(runs[1]));
            if runs[0] < 3 || runs[1] < 3 {
                return (
                    outcome(false, format!("n = {n}, coordinate {j}: runs -{} / +{}", runs[0], runs[1])),
                    instances,
                );
            }
        }
        instances.push(Instance { w_star: w, traj });
    }
    (
        outcome(true, format!("{checked} small coordinates over 10 teachers, min runs per sign {min_runs}")),
        instances,
    )
}

/// Checks both growth properties on every run. A short ratio is reported with
/// the step at which the late-run drift would carry it past the bound.
fn norm_growth(groups: &[(&str, &[Instance])]) -> Outcome {
    let l1 = |y: &[f64]| y.iter().map(|v| v.abs()).sum::<f64>();
    let mut min_ratio = f64::INFINITY;
    let mut count = 0;
    let mut short = Vec::new();
    for (group, instances) in groups {
        for (i, inst) in instances.iter().enumerate() {
            let ip: Vec<f64> = inst.traj.records.iter().map(|r| dot(&r.y, &inst.w_star)).collect();
            if let Some(t) = ip.windows(2).position(|p| p[1] < p[0]) {
                return outcome(false, format!("{group} #{i}: <y, w*> decreased at t = {}", t + 1));
            }
            let recs = &inst.traj.records;
            let (first, mid, last) = (l1(&recs[0].y), l1(&recs[recs.len() / 2].y), l1(&recs[recs.len() - 1].y));
            let ratio = last / first;
            min_ratio = min_ratio.min(ratio);
            count += 1;
            if ratio <= 10.0 {
                let drift = (last - mid) / (recs.len() - 1 - recs.len() / 2) as f64;
                let crossing = (recs.len() - 1) as f64 + (10.0 * first - last) / drift;
                short.push(format!(
                    "{group} #{i} (n = {}): ratio {ratio:.2}, drift {drift:.2e}/step, reaches 10x near t = {crossing:.0}",
                    inst.w_star.len()
                ));
            }
        }
    }
    if short.is_empty() {
        outcome(true, format!("{count} runs, <y, w*> nondecreasing, min ‖y_T‖₁/‖y_0‖₁ = {min_ratio:.1}"))
    } else {
        outcome(
            false,
            format!(
                "<y, w*> nondecreasing on all {count} runs; {} of {count} below 10x at T = 10^4: {}",
                short.len(),
                short.join("; ")
            ),
        )
    }
}

fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

fn geometry_counting() -> Outcome {
    for n in 1..=4 {
        let e = geometry::enumerate_geometry(n).unwrap();
        let c = geometry::count_geometry(n).unwrap();
        let expect = (3u64.pow(n as u32), 2u64.pow(n as u32), factorial(n));
        let got = (e.orthants, e.regular_orthants, e.regular_cones_per_regular_orthant);
        if got != expect || c != e {
            return outcome(false, format!("n = {n}: enumerated {got:?}, expected {expect:?}"));
        }
    }
    let mut rng = TestRng::new(10);
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let n = 1 + rng.index(8);
        let mut x = rng.normals(n);
        if i % 4 == 0 {
            // plant ties and zeros
            let a = rng.index(n);
            let b = rng.index(n);
            x[a] = rng.sign() * x[b].abs();
            if i % 8 == 0 {
                x[rng.index(n)] = 0.0;
            }
        }
        if x.iter().all(|&v| v == 0.0) {
            continue;
        }
        let vs = geometry::vertex_set(&x);
        let oracle = vertex_oracle(&x);
        let lib: Vec<Vec<f64>> = vs.iter().map(|z| z.to_vec()).collect();
        let same = lib.len() == oracle.len()
            && lib.iter().all(|z| oracle.iter().any(|o| o.iter().zip(z).all(|(a, b)| (a - b).abs() < 1e-15)));
        if !same {
            return outcome(false, format!("vertex set mismatch at {x:?}"));
        }
        let mu = geometry::decompose_in_cone(&x, &vs).unwrap();
        if mu.iter().any(|&m| m < 0.0) {
            return outcome(false, format!("negative coefficient at {x:?}"));
        }
        let back = geometry::recompose(&mu, &vs);
        let err = back.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
        if err > ROUND_TRIP_TOL {
            return outcome(false, format!("round trip error {err:e} at {x:?}"));
        }
        let mut oracle_mu: Vec<f64> = decomposition_oracle(&x).into_iter().map(|(_, m)| m).collect();
        let mut lib_mu = mu.clone();
        oracle_mu.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lib_mu.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if oracle_mu.iter().zip(&lib_mu).any(|(a, b)| (a - b).abs() > ROUND_TRIP_TOL) {
            return outcome(false, format!("coefficients disagree with the oracle at {x:?}"));
        }
        let opt = quantize::normalized_project(&x, QuantizationMode::Ternary).unwrap();
        if !vs.contains(&opt) {
            return outcome(false, format!("optimum outside the vertex set at {x:?}"));
        }
    }
    outcome(
        true,
        format!("counts match for n <= 4; 10000 vertex-set/decomposition checks, max round trip {worst:.1e}"),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_quantrec"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> bool {
    names.iter().all(|f| match (fs::read(a.join(f)), fs::read(b.join(f))) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    })
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let sampled = root.join("sampled.json");
    let mut cfg = dynamics::preset("synthetic-fig2").unwrap();
    cfg.gradient_source = dynamics::GradientSource::Sampled { batch: 16, seed: 99 };
    cfg.outputs.trajectory_json = true;
    fs::write(&sampled, serde_json::to_string(&cfg).unwrap()).unwrap();

    let files = ["manifest.json", "trajectory.csv", "sign_matrix.csv"];
    let mut checked = 0;
    for (name, args) in [
        ("example1", vec!["--preset", "example1"]),
        ("fig2", vec!["--preset", "synthetic-fig2"]),
        ("fig2t", vec!["--preset", "synthetic-fig2-ternary"]),
        ("sampled", vec!["--config", sampled.to_str().unwrap()]),
    ] {
        let first = root.join(format!("{name}_a"));
        let again = root.join(format!("{name}_b"));
        let replay = root.join(format!("{name}_c"));
        let mut a = vec!["run"];
        a.extend(&args);
        a.extend(["--out", first.to_str().unwrap()]);
        let mut b = vec!["run"];
        b.extend(&args);
        b.extend(["--out", again.to_str().unwrap()]);
        let manifest = first.join("manifest.json");
        let c = ["run", "--config", manifest.to_str().unwrap(), "--out", replay.to_str().unwrap()];
        if !(run_cli(&a) && run_cli(&b) && run_cli(&c)) {
            return outcome(false, format!("{name}: run failed"));
        }
        if !same_files(&first, &again, &files) || !same_files(&first, &replay, &files) {
            return outcome(false, format!("{name}: artifacts differ"));
        }
        if name == "sampled" && !same_files(&first, &replay, &["trajectory.json"]) {
            return outcome(false, "sampled: trajectory JSON differs");
        }
        checked += 1;
    }
    outcome(true, format!("{checked} configs, repeated runs and manifest replays byte-identical"))
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome, Duration, Duration)> = Vec::new();
    let mut record = |id: usize, name: &'static str, budget: u64, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let elapsed = start.elapsed();
        let budget = Duration::from_secs(budget);
        let o = if elapsed > budget {
            outcome(false, format!("{} (over budget of {budget:?})", o.detail))
        } else {
            o
        };
        println!(
            "criterion {id:>2} {name}: {} ({}; {:.1}s)",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64()
        );
        results.push((id, name, o, elapsed, budget));
    };

    record(1, "projection oracle equivalence", 120, &mut projection_oracle);
    record(2, "support threshold", 30, &mut support_threshold);
    record(3, "coarse-gradient closed form", 300, &mut coarse_gradient_constant);
    record(4, "period-3 example", 1, &mut example1_exactness);

    let mut binary = Vec::new();
    record(5, "binary recurrence", 30, &mut || {
        binary = binary_instances();
        binary_recurrence(&binary)
    });
    let mut confined = Vec::new();
    record(6, "ternary confinement", 30, &mut || {
        let (o, inst) = ternary_confinement();
        confined = inst;
        o
    });
    let mut ternary = Vec::new();
    record(7, "ternary recurrence", 30, &mut || {
        ternary = ternary_instances();
        ternary_recurrence(&ternary)
    });
    let mut oscillating = Vec::new();
    record(8, "sign oscillation", 30, &mut || {
        let (o, inst) = oscillation();
        oscillating = inst;
        o
    });
    record(9, "norm growth", 30, &mut || {
        norm_growth(&[
            ("binary recurrent", &binary),
            ("ternary confined", &confined),
            ("ternary recurrent", &ternary),
            ("binary oscillating", &oscillating),
        ])
    });
    record(10, "geometry counting", 60, &mut geometry_counting);
    record(11, "determinism", 60, &mut determinism);

    let failed = results.iter().filter(|r| !r.2.passed).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
