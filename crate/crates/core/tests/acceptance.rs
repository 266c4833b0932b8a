//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. Tolerances and sample sizes are pinned below.

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use swapqnn::circuit::{run_product_module, DEFAULT_SHOTS};
use swapqnn::datasets::{gen_parity_split, gen_spiral, iris_setosa_versicolor, Dataset, SPIRAL_NOISE_STD};
use swapqnn::encoding::FeatureVector;
use swapqnn::experiments::{
    run_parity_cell, simulate_accuracy, CellResult, ParityCell, ProbabilityMode,
};
use swapqnn::model::{PartitionPlan, ProductModule, QnnModel};
use swapqnn::seed;
use swapqnn::theory::{
    check_identity, condition_lhs, identity_residual, representative_set, separability_oracle,
};
use swapqnn::training::{cross_validate, EarlyStopMetric, TrainConfig};

const SEED: u64 = 20_240_601;

// 1
const CIRCUIT_INSTANCES: usize = 200;
const CIRCUIT_TOL: f64 = 1e-12;
const CIRCUIT_BUDGET: Duration = Duration::from_secs(30);
// 2
const GRADIENT_PAIRS: usize = 100;
const GRADIENT_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-5;
const GRADIENT_BUDGET: Duration = Duration::from_secs(60);
// 3, 4
const IDENTITY_PER_D: usize = 100;
const IDENTITY_TOL: f64 = 1e-9;
const CONDITION_PER_D: usize = 100;
const CONDITION_TOL: f64 = 1e-9;
// 5
const SEPARABILITY_MODELS: usize = 1000;
// 6
const LR_GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];
const MAX_EPOCHS: usize = 50_000;
const PARITY_BUDGET: Duration = Duration::from_secs(2 * 3600);
// 7
const SHOT_SEEDS: u64 = 5;
const SHOT_ACCURACY: f64 = 0.90;
const SHOT_PASSES_NEEDED: usize = 3;
// 8
const SPIRAL_BUDGET: Duration = Duration::from_secs(30 * 60);
const SPIRAL_SAMPLES: usize = 1000;
const SPIRAL_FOLDS: usize = 10;
// 10
const IRIS_FOLDS: usize = 10;
const IRIS_ACCURACY: f64 = 0.95;

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

fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Independent closed form: ½(1 + Π_j (x′·w_j)² / (‖x′‖² ‖w_j‖²)), x′ = (x, 1).
fn oracle_probability(x: &[f64], weights: &[Vec<f64>]) -> f64 {
    let mut xa = x.to_vec();
    xa.push(1.0);
    let prod: f64 = weights
        .iter()
        .map(|w| dot(&xa, w).powi(2) / (dot(&xa, &xa) * dot(w, w)))
        .product();
    0.5 * (1.0 + prod)
}

fn criterion_1() -> Outcome {
    let mut rng = seed::rng(seed::derive(SEED, 1));
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..CIRCUIT_INSTANCES {
        let d = rng.random_range(1..=7);
        let k = rng.random_range(1..=3);
        let x = normal_vec(&mut rng, d);
        let ws: Vec<Vec<f64>> = (0..k).map(|_| normal_vec(&mut rng, d + 1)).collect();
        let sim = run_product_module(&FeatureVector::new(x.clone()).unwrap(), &ws).unwrap();
        worst = worst.max((sim - oracle_probability(&x, &ws)).abs());
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= CIRCUIT_TOL && elapsed < CIRCUIT_BUDGET,
        format!(
            "{CIRCUIT_INSTANCES} instances, max |circuit - closed form| = {worst:.2e} (tol {CIRCUIT_TOL:e}), {:.1}s (budget {}s)",
            elapsed.as_secs_f64(),
            CIRCUIT_BUDGET.as_secs()
        ),
    )
}

/// Logit recomputed from the flat parameter vector with the test oracle.
fn oracle_logit(model: &QnnModel, params: &[f64], x: &[f64]) -> f64 {
    let (n, k, d) = (model.n_modules(), model.k(), model.d());
    let wlen = d + 1;
    let coeffs = &params[n * k * wlen..n * k * wlen + n];
    let bias = params[n * k * wlen + n];
    let mut out = bias;
    for i in 0..n {
        let ws: Vec<Vec<f64>> = (0..k)
            .map(|j| params[(i * k + j) * wlen..(i * k + j + 1) * wlen].to_vec())
            .collect();
        out += coeffs[i] * (2.0 * oracle_probability(x, &ws) - 1.0);
    }
    out
}

fn criterion_2() -> Outcome {
    let mut rng = seed::rng(seed::derive(SEED, 2));
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for case in 0..GRADIENT_PAIRS {
        let d = rng.random_range(1..=6);
        let n = rng.random_range(1..=4);
        let k = rng.random_range(1..=3);
        let model = QnnModel::random(PartitionPlan::full(d, n, k).unwrap(), seed::derive(SEED, 1000 + case as u64));
        let x = normal_vec(&mut rng, d);
        let analytic = model.backward(&x, 1.0).unwrap().to_flat();
        let base = model.flat_params();
        let mut p = base.clone();
        let mut diff_sq = 0.0;
        let (mut a_sq, mut n_sq) = (0.0, 0.0);
        for i in 0..base.len() {
            p[i] = base[i] + FD_STEP;
            let plus = oracle_logit(&model, &p, &x);
            p[i] = base[i] - FD_STEP;
            let minus = oracle_logit(&model, &p, &x);
            p[i] = base[i];
            let fd = (plus - minus) / (2.0 * FD_STEP);
            diff_sq += (fd - analytic[i]).powi(2);
            a_sq += analytic[i].powi(2);
            n_sq += fd * fd;
        }
        let rel = diff_sq.sqrt() / a_sq.sqrt().max(n_sq.sqrt()).max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= GRADIENT_TOL && elapsed < GRADIENT_BUDGET,
        format!(
            "{GRADIENT_PAIRS} (model, sample) pairs, max relative error {worst:.2e} (tol {GRADIENT_TOL:e}), {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Brute-force {±1}^d split by sign product.
fn oracle_vertices(d: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (mut even, mut odd) = (Vec::new(), Vec::new());
    for bits in 0..(1u32 << d) {
        let v: Vec<f64> = (0..d).map(|i| if bits >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
        if v.iter().product::<f64>() > 0.0 {
            even.push(v);
        } else {
            odd.push(v);
        }
    }
    (even, odd)
}

fn criterion_3() -> Outcome {
    let mut rng = seed::rng(seed::derive(SEED, 3));
    let mut worst: f64 = 0.0;
    let mut oracle_gap: f64 = 0.0;
    for d in 3..=8 {
        let (even, odd) = oracle_vertices(d);
        for _ in 0..IDENTITY_PER_D {
            let w: Vec<f64> = normal_vec(&mut rng, d).iter().map(|v| 4.0 * v).collect();
            let r = check_identity(&w).unwrap();
            let tol_scale = 1.0 + dot(&w, &w);
            worst = worst.max(r.max() / tol_scale);
            let target = (1u64 << (d - 1)) as f64 * dot(&w, &w);
            let e: f64 = even.iter().map(|x| dot(x, &w).powi(2)).sum::<f64>() - target;
            let o: f64 = odd.iter().map(|x| dot(x, &w).powi(2)).sum::<f64>() - target;
            oracle_gap = oracle_gap.max((r.even - e.abs()).abs().max((r.odd - o.abs()).abs()) / tol_scale);
        }
    }
    let set2 = representative_set(2).unwrap();
    let mut neg_dev: f64 = 0.0;
    let mut neg_ok = true;
    for _ in 0..IDENTITY_PER_D {
        let w = normal_vec(&mut rng, 2);
        let expected = 4.0 * (w[0] * w[1]).abs();
        let r = identity_residual(&set2, &w).unwrap();
        let dev = (r.even - expected).abs().max((r.odd - expected).abs());
        neg_dev = neg_dev.max(dev);
        neg_ok &= dev <= IDENTITY_TOL && r.max() > IDENTITY_TOL * (1.0 + dot(&w, &w));
    }
    outcome(
        worst <= IDENTITY_TOL && oracle_gap <= IDENTITY_TOL && neg_ok,
        format!(
            "d=3..8 x {IDENTITY_PER_D}: max residual/(1+|w|^2) {worst:.2e} (tol {IDENTITY_TOL:e}); d=2 residual vs 4|w1w2| max dev {neg_dev:.2e}, identity fails as expected: {neg_ok}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = seed::rng(seed::derive(SEED, 4));
    let mut worst: f64 = 0.0;
    let mut cross: f64 = 0.0;
    for d in 3..=6 {
        let (even, odd) = oracle_vertices(d);
        for i in 0..CONDITION_PER_D {
            let n = rng.random_range(1..=8);
            let model = QnnModel::random(PartitionPlan::full(d, n, 1).unwrap(), seed::derive(SEED, (d * 1000 + i) as u64));
            let v = condition_lhs(&model).unwrap();
            let abs_c: f64 = model.coefficients().iter().map(|c| c.abs()).sum();
            let scale = (d as f64 + 1.0) * (1u64 << (d - 1)) as f64 * abs_c;
            worst = worst.max(v.value.abs() / scale);
            // Σ f(x⁺) − Σ f(x⁻) with the model's own forward pass, rescaled by ‖x′‖²/2.
            let fsum = |vs: &[Vec<f64>]| vs.iter().map(|x| model.forward(x).unwrap()).sum::<f64>();
            let via_forward = 0.5 * (d as f64 + 1.0) * (fsum(&even) - fsum(&odd));
            cross = cross.max((via_forward - v.value).abs() / scale);
        }
    }
    outcome(
        worst <= CONDITION_TOL && cross <= CONDITION_TOL,
        format!(
            "d=3..6 x {CONDITION_PER_D}: max |lhs|/scale {worst:.2e} (tol {CONDITION_TOL:e}); agreement with forward-pass sums {cross:.2e}"
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = seed::rng(seed::derive(SEED, 5));
    let mut max_margin = f64::NEG_INFINITY;
    for i in 0..SEPARABILITY_MODELS {
        let n = rng.random_range(1..=10);
        let model = QnnModel::random(PartitionPlan::full(3, n, 1).unwrap(), seed::derive(SEED, 50_000 + i as u64));
        max_margin = max_margin.max(separability_oracle(&model, None).unwrap().margin);
    }
    let witness = QnnModel::new(
        PartitionPlan::full(2, 1, 1).unwrap(),
        vec![ProductModule {
            factors: vec![vec![1.0, 1.0, 0.0]],
        }],
        vec![1.0],
        0.0,
    )
    .unwrap();
    let w = separability_oracle(&witness, None).unwrap();
    outcome(
        max_margin <= 0.0 && w.separable,
        format!(
            "{SEPARABILITY_MODELS} random d=3 k=1 models, largest margin {max_margin:.3e} (must be <= 0); 2-D witness margin {:.4}",
            w.margin
        ),
    )
}

fn parity_config() -> TrainConfig {
    TrainConfig {
        epochs: MAX_EPOCHS,
        patience: MAX_EPOCHS,
        early_stop_metric: EarlyStopMetric::Accuracy,
        stop_on_perfect: true,
        track_test_max: true,
        ..Default::default()
    }
}

/// Grid protocol: every learning rate, best test accuracy seen during training.
fn parity_grid(d: usize, n: usize, k: usize, s: usize) -> (f64, Vec<(CellResult, QnnModel)>) {
    let cfg = parity_config();
    let runs: Vec<(CellResult, QnnModel)> = LR_GRID
        .iter()
        .map(|&lr| {
            let cell = ParityCell {
                d,
                n,
                k,
                learning_rate: lr,
                seed: SEED,
                s,
            };
            run_parity_cell(&cell, &cfg).unwrap()
        })
        .collect();
    let best = runs.iter().map(|(r, _)| r.score()).fold(0.0, f64::max);
    (best, runs)
}

fn describe(runs: &[(CellResult, QnnModel)]) -> String {
    runs.iter()
        .map(|(r, _)| format!("lr {}: {:.4}", r.cell.learning_rate, r.score()))
        .collect::<Vec<_>>()
        .join(", ")
}

struct ParityResults {
    outcome: Outcome,
    /// Returned (best-validation) models of the d=3, N=4, k=2 runs, with their test accuracy.
    pretrained: Vec<(f64, QnnModel)>,
}

// Samples per orthant for each part; the test set is 0.2·s per orthant.
const S_2D: usize = 100;
const S_3D_PRODUCT: usize = 1000;
const S_3D_SINGLE: usize = 100;
const S_4D: usize = 250;

fn criterion_6() -> ParityResults {
    let start = Instant::now();
    let (a, runs_a) = parity_grid(2, 2, 1, S_2D);
    let (b, runs_b) = parity_grid(3, 4, 2, S_3D_PRODUCT);
    let (c10, runs_c10) = parity_grid(3, 10, 1, S_3D_SINGLE);
    let (c100, runs_c100) = parity_grid(3, 100, 1, S_3D_SINGLE);
    let (dd, runs_d) = parity_grid(4, 16, 2, S_4D);
    let elapsed = start.elapsed();
    let pass_a = a >= 1.0;
    let pass_b = b >= 0.99;
    let pass_c = c10 <= 0.95 && c100 <= 0.95;
    let pass_d = dd >= 0.99;
    for (name, runs) in [
        ("(a) d=2 N=2 k=1", &runs_a),
        ("(b) d=3 N=4 k=2", &runs_b),
        ("(c) d=3 N=10 k=1", &runs_c10),
        ("(c) d=3 N=100 k=1", &runs_c100),
        ("(d) d=4 N=16 k=2", &runs_d),
    ] {
        println!("    6{name}: {}", describe(runs));
    }
    let pretrained = runs_b.iter().map(|(r, m)| (r.test_accuracy, m.clone())).collect();
    ParityResults {
        outcome: outcome(
            pass_a && pass_b && pass_c && pass_d && elapsed < PARITY_BUDGET,
            format!(
                "(a) {a:.4} >= 1.00: {pass_a}; (b) {b:.4} >= 0.99: {pass_b}; (c) max({c10:.4}, {c100:.4}) <= 0.95: {pass_c}; (d) {dd:.4} >= 0.99: {pass_d}; {:.0}s",
                elapsed.as_secs_f64()
            ),
        ),
        pretrained,
    }
}

fn criterion_7(pretrained: &[(f64, QnnModel)]) -> Outcome {
    // The pretrained model is the returned model with the best surrogate test accuracy.
    let Some((_, model)) = pretrained
        .iter()
        .max_by(|a, b| a.0.total_cmp(&b.0))
    else {
        return outcome(false, "no pretrained model");
    };
    let (_, test) = gen_parity_split(3, S_3D_PRODUCT, SEED).unwrap();
    let exact = simulate_accuracy(model, &test, ProbabilityMode::Exact, 0).unwrap();
    let shot_acc: Vec<f64> = (0..SHOT_SEEDS)
        .map(|s| {
            simulate_accuracy(model, &test, ProbabilityMode::Shots(DEFAULT_SHOTS), seed::derive(SEED, 700 + s))
                .unwrap()
                .accuracy
        })
        .collect();
    let passes = shot_acc.iter().filter(|&&a| a >= SHOT_ACCURACY).count();
    let exact_ok = exact.accuracy == exact.surrogate_accuracy && exact.surrogate_accuracy == 1.0;
    outcome(
        exact_ok && passes >= SHOT_PASSES_NEEDED,
        format!(
            "surrogate {:.4}, exact circuit {:.4}; {DEFAULT_SHOTS} shots: {:?} ({passes}/{SHOT_SEEDS} >= {SHOT_ACCURACY})",
            exact.surrogate_accuracy,
            exact.accuracy,
            shot_acc.iter().map(|a| (a * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    )
}

fn spiral_config() -> TrainConfig {
    TrainConfig {
        epochs: MAX_EPOCHS,
        patience: 5_000,
        learning_rate: 1.0,
        early_stop_metric: EarlyStopMetric::Accuracy,
        seed: SEED,
        ..Default::default()
    }
}

/// Likelihood-ratio classifier against the noiseless curves: an estimate of the
/// best accuracy any model can reach on this data.
fn spiral_noise_ceiling(order: usize, ds: &Dataset) -> f64 {
    let grid = 4000 * order;
    let curve: Vec<(f64, f64)> = (0..=grid)
        .map(|i| {
            let theta = order as f64 * std::f64::consts::TAU * i as f64 / grid as f64;
            (0.1 * theta * theta.sin(), 0.1 * theta * theta.cos())
        })
        .collect();
    let var2 = 2.0 * SPIRAL_NOISE_STD * SPIRAL_NOISE_STD;
    let lik = |x: f64, y: f64, sign: f64| -> f64 {
        curve
            .iter()
            .map(|&(cx, cy)| (-((x - sign * cx).powi(2) + (y - sign * cy).powi(2)) / var2).exp())
            .sum()
    };
    let correct = ds
        .samples()
        .iter()
        .filter(|s| {
            let f = s.features.as_slice();
            let positive = lik(f[0], f[1], 1.0) > lik(f[0], f[1], -1.0);
            positive == (s.label == 1)
        })
        .count();
    correct as f64 / ds.len() as f64
}

fn spiral_cv(order: usize, n: usize, k: usize) -> (f64, Dataset) {
    let ds = gen_spiral(order, SPIRAL_SAMPLES, seed::derive(SEED, 800 + order as u64)).unwrap();
    let report = cross_validate(&ds, &PartitionPlan::full(3, n, k).unwrap(), &spiral_config(), SPIRAL_FOLDS).unwrap();
    (report.mean_test_accuracy, ds)
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let (o1, ds1) = spiral_cv(1, 2, 1);
    let (o2_k2, ds2) = spiral_cv(2, 3, 2);
    let (o2_k1, _) = spiral_cv(2, 3, 1);
    let elapsed = start.elapsed();
    let (c1, c2) = (spiral_noise_ceiling(1, &ds1), spiral_noise_ceiling(2, &ds2));
    outcome(
        o1 >= 0.99 && o2_k2 >= 0.95 && o2_k1 < 0.90 && elapsed < SPIRAL_BUDGET,
        format!(
            "{SPIRAL_FOLDS}-fold mean test accuracy: order 1 N=2 k=1 {o1:.4} (>= 0.99, noise ceiling {c1:.4}); order 2 N=3 k=2 {o2_k2:.4} (>= 0.95, noise ceiling {c2:.4}); order 2 N=3 k=1 {o2_k1:.4} (< 0.90); {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = seed::rng(seed::derive(SEED, 9));
    let mut bad = Vec::new();
    for _ in 0..20 {
        let (n, k, d) = (rng.random_range(1..=50), rng.random_range(1..=5), rng.random_range(1..=20));
        let m = QnnModel::random(PartitionPlan::full(d, n, k).unwrap(), rng.random());
        let expected = n * (k * (d + 1) + 1) + 1;
        if m.param_count() != expected || m.flat_params().len() != expected {
            bad.push((n, k, d, m.param_count()));
        }
    }
    outcome(bad.is_empty(), format!("20 random (N, k, d) triples, mismatches: {bad:?}"))
}

fn criterion_10() -> Outcome {
    let ds = iris_setosa_versicolor().unwrap();
    let cfg = TrainConfig {
        seed: SEED,
        ..Default::default()
    };
    let report = cross_validate(&ds, &PartitionPlan::full(4, 3, 1).unwrap(), &cfg, IRIS_FOLDS).unwrap();
    outcome(
        report.mean_test_accuracy >= IRIS_ACCURACY,
        format!(
            "{IRIS_FOLDS}-fold mean test accuracy {:.4} (>= {IRIS_ACCURACY}), per fold {:?}",
            report.mean_test_accuracy,
            report.folds.iter().map(|f| f.test.accuracy).collect::<Vec<_>>()
        ),
    )
}

fn guarded<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    panic::catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        e.downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into())
    })
}

fn report(id: u8, name: &str, r: Result<Outcome, String>, failures: &mut Vec<u8>) {
    let (passed, detail) = match r {
        Ok(o) => (o.passed, o.detail),
        Err(msg) => (false, format!("panicked: {msg}")),
    };
    if !passed {
        failures.push(id);
    }
    println!("[{}] {id:>2}. {name}: {detail}", if passed { "PASS" } else { "FAIL" });
}

fn main() {
    let only: Option<Vec<u8>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let want = |id: u8| only.as_ref().is_none_or(|o| o.contains(&id));
    let mut failures = Vec::new();
    println!("acceptance suite");
    if want(1) {
        report(1, "circuit-formula equivalence", guarded(criterion_1), &mut failures);
    }
    if want(2) {
        report(2, "gradient correctness", guarded(criterion_2), &mut failures);
    }
    if want(3) {
        report(3, "quadratic-sum identity", guarded(criterion_3), &mut failures);
    }
    if want(4) {
        report(4, "separation condition vanishes", guarded(criterion_4), &mut failures);
    }
    if want(5) {
        report(5, "non-separability d=3 k=1", guarded(criterion_5), &mut failures);
    }
    let mut pretrained = Vec::new();
    if want(6) || want(7) {
        let r = guarded(criterion_6).map(|p| {
            pretrained = p.pretrained;
            p.outcome
        });
        if want(6) {
            report(6, "parity learnability dichotomy", r, &mut failures);
        }
    }
    if want(7) {
        report(7, "shot-sampled inference", guarded(|| criterion_7(&pretrained)), &mut failures);
    }
    if want(8) {
        report(8, "spiral scaling", guarded(criterion_8), &mut failures);
    }
    if want(9) {
        report(9, "parameter count", guarded(criterion_9), &mut failures);
    }
    if want(10) {
        report(10, "iris cross-validation", guarded(criterion_10), &mut failures);
    }
    if failures.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failures:?}");
        std::process::exit(1);
    }
}
