//! Experiment runners shared by the CLI and the acceptance tests: hold-out
//! training, parity sweep cells, spiral runs and shot-sampled inference.

use serde::{Deserialize, Serialize};

use crate::circuit::{run_product_module_sliced, sample_shots};
use crate::datasets::{gen_parity_split, gen_spiral_with_noise, Dataset, SPIRAL_NOISE_STD};
use crate::model::{PartitionPlan, QnnModel};
use crate::training::{evaluate, stratified_split, train, Metrics, StopReason, TrainConfig, TrainOutcome};
use crate::{seed, Error, Result};

/// Result of training on one split and scoring on a separate test set.
#[derive(Clone, Debug)]
pub struct HoldoutOutcome {
    pub train: Metrics,
    pub validation: Metrics,
    pub test: Metrics,
    pub max_test_accuracy: Option<f64>,
    pub outcome: TrainOutcome,
}

/// Splits `train_set` into train/validation, trains a fresh model and scores it on `test_set`.
pub fn run_holdout(train_set: &Dataset, test_set: &Dataset, plan: &PartitionPlan, cfg: &TrainConfig) -> Result<HoldoutOutcome> {
    let all: Vec<usize> = (0..train_set.len()).collect();
    let (tr_idx, val_idx) = stratified_split(train_set, &all, cfg.validation_fraction, seed::derive_named(cfg.seed, "split"));
    let tr = train_set.subset(&tr_idx, format!("{}_train", train_set.name))?;
    let va = train_set.subset(&val_idx, format!("{}_val", train_set.name))?;
    let model = QnnModel::random(plan.clone(), seed::derive_named(cfg.seed, "init"));
    let outcome = train(model, &tr, &va, Some(test_set), cfg)?;
    Ok(HoldoutOutcome {
        train: evaluate(&outcome.model, &tr)?,
        validation: outcome.best,
        test: evaluate(&outcome.model, test_set)?,
        max_test_accuracy: outcome.max_test_accuracy.map(|(a, _)| a),
        outcome,
    })
}

/// One point of the parity grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityCell {
    pub d: usize,
    pub n: usize,
    pub k: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Training samples per orthant.
    pub s: usize,
}

impl ParityCell {
    /// Stable file stem, e.g. `d3_n4_k2_lr0.1_s100_seed0`.
    pub fn key(&self) -> String {
        format!(
            "d{}_n{}_k{}_lr{}_s{}_seed{}",
            self.d, self.n, self.k, self.learning_rate, self.s, self.seed
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: ParityCell,
    /// Accuracy of the returned (best-validation) model on the test set.
    pub test_accuracy: f64,
    /// Best test accuracy seen at any epoch, when tracked.
    pub max_test_accuracy: Option<f64>,
    pub validation_accuracy: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl CellResult {
    /// The figure of merit for a sweep: the tracked maximum when available.
    pub fn score(&self) -> f64 {
        self.max_test_accuracy.unwrap_or(self.test_accuracy)
    }
}

/// Trains one parity cell. Data and initialization both derive from `cell.seed`;
/// `cfg.learning_rate` and `cfg.seed` are overridden by the cell.
pub fn run_parity_cell(cell: &ParityCell, cfg: &TrainConfig) -> Result<(CellResult, QnnModel)> {
    let (train_set, test_set) = gen_parity_split(cell.d, cell.s, cell.seed)?;
    let plan = PartitionPlan::full(cell.d, cell.n, cell.k)?;
    let cfg = TrainConfig {
        learning_rate: cell.learning_rate,
        seed: seed::derive_named(cell.seed, "train"),
        ..cfg.clone()
    };
    let h = run_holdout(&train_set, &test_set, &plan, &cfg)?;
    Ok((
        CellResult {
            cell: *cell,
            test_accuracy: h.test.accuracy,
            max_test_accuracy: h.max_test_accuracy,
            validation_accuracy: h.validation.accuracy,
            epochs_run: h.outcome.epochs_run,
            best_epoch: h.validation.epoch,
            stop_reason: h.outcome.stop_reason,
        },
        h.outcome.model,
    ))
}

/// Best score per `(d, n, k)` over learning rates and seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d: usize,
    pub n: usize,
    pub k: usize,
    pub best_accuracy: f64,
    pub best_learning_rate: f64,
    pub best_seed: u64,
    pub cells: usize,
}

pub fn aggregate_sweep(results: &[CellResult]) -> Vec<SweepRow> {
    let mut rows: Vec<SweepRow> = Vec::new();
    for r in results {
        let c = &r.cell;
        match rows.iter_mut().find(|row| (row.d, row.n, row.k) == (c.d, c.n, c.k)) {
            Some(row) => {
                row.cells += 1;
                if r.score() > row.best_accuracy {
                    row.best_accuracy = r.score();
                    row.best_learning_rate = c.learning_rate;
                    row.best_seed = c.seed;
                }
            }
            None => rows.push(SweepRow {
                d: c.d,
                n: c.n,
                k: c.k,
                best_accuracy: r.score(),
                best_learning_rate: c.learning_rate,
                best_seed: c.seed,
                cells: 1,
            }),
        }
    }
    rows.sort_by_key(|r| (r.d, r.k, r.n));
    rows
}

/// Independent spiral train and test draws of `samples_per_class` each.
pub fn spiral_split(order: usize, samples_per_class: usize, noise_std: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    Ok((
        gen_spiral_with_noise(order, samples_per_class, seed::derive_named(seed, "spiral_train"), noise_std)?,
        gen_spiral_with_noise(order, samples_per_class, seed::derive_named(seed, "spiral_test"), noise_std)?,
    ))
}

/// Spiral hold-out run with a full-feature `(n, k)` model; data derives from `cfg.seed`.
pub fn run_spiral(
    order: usize,
    samples_per_class: usize,
    n: usize,
    k: usize,
    cfg: &TrainConfig,
) -> Result<HoldoutOutcome> {
    let (train_set, test_set) = spiral_split(order, samples_per_class, SPIRAL_NOISE_STD, cfg.seed)?;
    run_holdout(&train_set, &test_set, &PartitionPlan::full(3, n, k)?, cfg)
}

/// How module probabilities are obtained during circuit inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityMode {
    /// The simulator's exact ancilla probability.
    Exact,
    /// A binomial estimate from this many shots per module.
    Shots(u64),
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulationReport {
    pub mode: ProbabilityMode,
    pub samples: usize,
    pub accuracy: f64,
    pub surrogate_accuracy: f64,
    /// Mean |P̂ − P| over all (sample, module) pairs.
    pub mean_abs_probability_error: f64,
}

/// Classifies `dataset` by running every module through the statevector
/// simulator, optionally replacing each probability by a shot estimate.
/// Each (sample, module) pair gets its own sub-seed.
pub fn simulate_accuracy(model: &QnnModel, dataset: &Dataset, mode: ProbabilityMode, seed: u64) -> Result<SimulationReport> {
    if dataset.d() != model.d() {
        return Err(Error::DimensionMismatch {
            expected: model.d(),
            found: dataset.d(),
        });
    }
    if mode == ProbabilityMode::Shots(0) {
        return Err(Error::InvalidArgument("shots must be >= 1".into()));
    }
    let surrogate = evaluate(model, dataset)?.accuracy;
    let n = model.n_modules();
    let mut correct = 0usize;
    let mut err_sum = 0.0;
    for (s_idx, sample) in dataset.samples().iter().enumerate() {
        let mut logit = model.output_bias();
        for i in 0..n {
            let slices: Vec<Vec<f64>> = model
                .partition()
                .module_slices(i)
                .iter()
                .map(|s| s.iter().map(|&f| sample.features[f]).collect())
                .collect();
            let pairs: Vec<(&[f64], &[f64])> = slices
                .iter()
                .zip(&model.modules()[i].factors)
                .map(|(x, w)| (x.as_slice(), w.as_slice()))
                .collect();
            let p = run_product_module_sliced(&pairs)?;
            let p_hat = match mode {
                ProbabilityMode::Exact => p,
                ProbabilityMode::Shots(shots) => {
                    let sub = seed::derive(seed::derive(seed, s_idx as u64), i as u64);
                    sample_shots(p, shots, sub)?.estimate()
                }
            };
            err_sum += (p_hat - p).abs();
            logit += model.coefficients()[i] * (2.0 * p_hat - 1.0);
        }
        if (logit > 0.0) == (sample.label == 1) {
            correct += 1;
        }
    }
    Ok(SimulationReport {
        mode,
        samples: dataset.len(),
        accuracy: correct as f64 / dataset.len() as f64,
        surrogate_accuracy: surrogate,
        mean_abs_probability_error: err_sum / (dataset.len() * n) as f64,
    })
}
