//! Self-checks: circuit vs closed form, analytic vs numerical gradients, and
//! the parity-argument checks from [`crate::theory`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::circuit::run_product_module;
use crate::encoding::{biased_overlap_sq, norm_sq, FeatureVector};
use crate::model::{PartitionPlan, ProductModule, QnnModel};
use crate::theory::{
    check_identity, condition_lhs, identity_residual, representative_set, separability_oracle,
};
use crate::{seed, Result};

pub const CIRCUIT_TOLERANCE: f64 = 1e-12;
pub const GRADIENT_TOLERANCE: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-5;
pub const IDENTITY_TOLERANCE: f64 = 1e-9;
pub const CONDITION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub failures: usize,
    /// Largest residual seen, in the check's own units (absolute or relative).
    pub max_residual: f64,
    pub tolerance: f64,
    pub notes: Vec<String>,
}

impl CheckReport {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            passed: true,
            cases: 0,
            failures: 0,
            max_residual: 0.0,
            tolerance,
            notes: Vec::new(),
        }
    }

    /// Records one case; `ok` decides pass/fail, `residual` is only reported.
    fn record(&mut self, residual: f64, ok: bool, note: impl FnOnce() -> String) {
        self.cases += 1;
        if residual > self.max_residual || residual.is_nan() {
            self.max_residual = residual;
        }
        if !ok {
            self.failures += 1;
            self.passed = false;
            if self.notes.len() < 10 {
                self.notes.push(note());
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    pub passed: bool,
    pub checks: Vec<CheckReport>,
}

impl VerificationReport {
    pub fn new(checks: Vec<CheckReport>) -> Self {
        Self {
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }

    pub fn failing(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }
}

/// Closed-form ancilla-zero probability of a full-feature product module.
pub fn closed_form_probability(x: &[f64], weights: &[Vec<f64>]) -> Result<f64> {
    let mut prod = 1.0;
    for w in weights {
        prod *= biased_overlap_sq(x, w)?;
    }
    Ok(0.5 * (1.0 + prod))
}

fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Random `(x, weights)` instances with `d ≤ max_d`, `k ≤ max_k` compared
/// between the statevector simulator and `surrogate`.
pub fn circuit_equivalence<F>(instances: usize, max_d: usize, max_k: usize, seed: u64, surrogate: F) -> Result<CheckReport>
where
    F: Fn(&[f64], &[Vec<f64>]) -> Result<f64>,
{
    let mut rng = seed::rng(seed);
    let mut report = CheckReport::new("circuit_equivalence", CIRCUIT_TOLERANCE);
    for _ in 0..instances {
        let d = rng.random_range(1..=max_d);
        let k = rng.random_range(1..=max_k);
        let x = normal_vec(&mut rng, d);
        let weights: Vec<Vec<f64>> = (0..k).map(|_| normal_vec(&mut rng, d + 1)).collect();
        let sim = run_product_module(&FeatureVector::new(x.clone())?, &weights)?;
        let exact = surrogate(&x, &weights)?;
        let r = (sim - exact).abs();
        report.record(r, r <= CIRCUIT_TOLERANCE, || format!("d={d} k={k}: circuit {sim} vs {exact}"));
    }
    Ok(report)
}

/// Relative error `‖g − g_fd‖ / max(‖g‖, ‖g_fd‖)` of the analytic gradient of the
/// logit against central differences, over random models and inputs.
pub fn gradient_check(instances: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = seed::rng(seed);
    let mut report = CheckReport::new("gradient", GRADIENT_TOLERANCE);
    for case in 0..instances {
        let d = rng.random_range(1..=6);
        let n = rng.random_range(1..=4);
        let k = rng.random_range(1..=3);
        let model = QnnModel::random(PartitionPlan::full(d, n, k)?, seed::derive(seed, case as u64));
        let x = normal_vec(&mut rng, d);
        let rel = gradient_relative_error(&model, &x)?;
        report.record(rel, rel <= GRADIENT_TOLERANCE, || {
            format!("case {case} (d={d} N={n} k={k}): relative error {rel:e}")
        });
    }
    Ok(report)
}

pub fn gradient_relative_error(model: &QnnModel, x: &[f64]) -> Result<f64> {
    let analytic = model.backward(x, 1.0)?.to_flat();
    let numeric = finite_difference_gradient(model, x, FD_STEP)?;
    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let denom = norm_sq(&analytic).sqrt().max(norm_sq(&numeric).sqrt());
    Ok(if denom == 0.0 { diff } else { diff / denom })
}

/// Central differences of `forward(x)` in every flat parameter.
pub fn finite_difference_gradient(model: &QnnModel, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let base = model.flat_params();
    let mut probe = model.clone();
    let mut params = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        params[i] = base[i] + h;
        probe.set_flat_params(&params);
        let plus = probe.forward(x)?;
        params[i] = base[i] - h;
        probe.set_flat_params(&params);
        let minus = probe.forward(x)?;
        params[i] = base[i];
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Quadratic-sum identity for `per_d` random weight vectors in each `d ∈ dims`.
pub fn identity_check(dims: std::ops::RangeInclusive<usize>, per_d: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = seed::rng(seed);
    let mut report = CheckReport::new("identity_d>=3", IDENTITY_TOLERANCE);
    for d in dims {
        for _ in 0..per_d {
            let w: Vec<f64> = normal_vec(&mut rng, d).iter().map(|v| 5.0 * v).collect();
            let r = check_identity(&w)?.max();
            let rel = r / (1.0 + norm_sq(&w));
            report.record(rel, rel <= IDENTITY_TOLERANCE, || format!("d={d}: residual {r:e}"));
        }
    }
    Ok(report)
}

/// At d = 2 the identity must fail, with residual exactly `4|w₁w₂|`.
pub fn identity_fails_2d(cases: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = seed::rng(seed);
    let set = representative_set(2)?;
    let mut report = CheckReport::new("identity_fails_d=2", IDENTITY_TOLERANCE);
    for _ in 0..cases {
        let w = normal_vec(&mut rng, 2);
        let expected = 4.0 * (w[0] * w[1]).abs();
        let r = identity_residual(&set, &w)?;
        let dev = (r.even - expected).abs().max((r.odd - expected).abs());
        report.record(dev, dev <= IDENTITY_TOLERANCE && expected > IDENTITY_TOLERANCE, || {
            format!("w={w:?}: residuals ({}, {}) vs {expected}", r.even, r.odd)
        });
    }
    Ok(report)
}

/// The separation condition evaluated by direct summation vanishes for random k = 1 models.
pub fn condition_check(dims: std::ops::RangeInclusive<usize>, per_d: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = seed::rng(seed);
    let mut report = CheckReport::new("condition_vanishes", CONDITION_TOLERANCE);
    for d in dims {
        for i in 0..per_d {
            let n = rng.random_range(1..=8);
            let model = QnnModel::random(PartitionPlan::full(d, n, 1)?, seed::derive(seed, (d * 100_000 + i) as u64));
            let v = condition_lhs(&model)?;
            let rel = v.value.abs() / v.scale;
            report.record(rel, rel <= CONDITION_TOLERANCE, || format!("d={d} N={n}: lhs {:e}", v.value));
        }
    }
    Ok(report)
}

/// No random single-factor model separates the 3-D representative set.
pub fn nonseparability_check(models: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = seed::rng(seed);
    let mut report = CheckReport::new("nonseparable_d=3_k=1", 0.0);
    for i in 0..models {
        let n = rng.random_range(1..=10);
        let model = QnnModel::random(PartitionPlan::full(3, n, 1)?, seed::derive(seed, i as u64));
        let s = separability_oracle(&model, None)?;
        report.record(s.margin.max(0.0), s.margin <= 0.0, || format!("model {i} (N={n}) margin {:e}", s.margin));
    }
    Ok(report)
}

/// The single-module 2-D model with unit coefficient and weights separates 2-D parity.
pub fn witness_check() -> Result<CheckReport> {
    let model = QnnModel::new(
        PartitionPlan::full(2, 1, 1)?,
        vec![ProductModule {
            factors: vec![vec![1.0, 1.0, 0.0]],
        }],
        vec![1.0],
        0.0,
    )?;
    let s = separability_oracle(&model, None)?;
    let mut report = CheckReport::new("witness_d=2_separable", 0.0);
    report.record(0.0, s.separable, || format!("margin {:e}", s.margin));
    report.notes.push(format!("margin {}", s.margin));
    Ok(report)
}

/// Every check with its default sample sizes.
pub fn run_all(seed: u64) -> Result<VerificationReport> {
    Ok(VerificationReport::new(vec![
        circuit_equivalence(200, 7, 3, seed::derive_named(seed, "circuit"), closed_form_probability)?,
        gradient_check(100, seed::derive_named(seed, "gradient"))?,
        identity_check(3..=8, 100, seed::derive_named(seed, "identity"))?,
        identity_fails_2d(100, seed::derive_named(seed, "identity2d"))?,
        condition_check(3..=6, 100, seed::derive_named(seed, "condition"))?,
        nonseparability_check(1000, seed::derive_named(seed, "separability"))?,
        witness_check()?,
    ]))
}

/// Theory checks only.
pub fn run_theory(seed: u64) -> Result<VerificationReport> {
    Ok(VerificationReport::new(vec![
        identity_check(3..=8, 100, seed::derive_named(seed, "identity"))?,
        identity_fails_2d(100, seed::derive_named(seed, "identity2d"))?,
        condition_check(3..=6, 100, seed::derive_named(seed, "condition"))?,
        nonseparability_check(1000, seed::derive_named(seed, "separability"))?,
        witness_check()?,
    ]))
}
