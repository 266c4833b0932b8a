//! Loss, optimizer, training loop with early stopping, metrics and
//! stratified k-fold cross-validation.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::encoding::norm_sq;
use crate::model::{Gradients, PartitionPlan, PreparedInput, QnnModel};
use crate::{seed, Error, Result};

/// Largest number of samples in a single gradient step.
pub const MAX_BATCH: usize = 256_000;

/// Factors whose norm drops below this are re-drawn before the next step.
pub const REINIT_NORM: f64 = 1e-8;

// Fixed chunking keeps the gradient reduction order independent of thread count.
const CHUNK: usize = 512;

/// `log(1 + exp(-(2y - 1) z))`, stable for any finite logit.
pub fn bce_with_logits(logit: f64, label: u8) -> f64 {
    let m = if label == 1 { -logit } else { logit };
    // softplus(m)
    m.max(0.0) + (-m.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// d/dz of [`bce_with_logits`].
pub fn bce_grad(logit: f64, label: u8) -> f64 {
    sigmoid(logit) - f64::from(label)
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t = self.t.saturating_add(1);
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    /// Forgets the moments of a parameter range (after re-initialization).
    pub fn reset(&mut self, range: Range<usize>) {
        self.m[range.clone()].iter_mut().for_each(|x| *x = 0.0);
        self.v[range].iter_mut().for_each(|x| *x = 0.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EarlyStopMetric {
    F1,
    Accuracy,
    None,
}

impl std::str::FromStr for EarlyStopMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1" => Ok(Self::F1),
            "accuracy" => Ok(Self::Accuracy),
            "none" => Ok(Self::None),
            _ => Err(Error::InvalidArgument(format!("unknown metric {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub patience: usize,
    /// Samples per gradient step; `None` means the full training set (capped at [`MAX_BATCH`]).
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub early_stop_metric: EarlyStopMetric,
    pub validation_fraction: f64,
    /// Stop as soon as validation accuracy reaches 1.
    pub stop_on_perfect: bool,
    /// Evaluate the test set every epoch and report the maximum accuracy seen.
    pub track_test_max: bool,
    /// Keep every n-th epoch in the trace (the last epoch is always kept).
    pub trace_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50_000,
            learning_rate: 1.0,
            patience: 5_000,
            batch_size: None,
            seed: 0,
            early_stop_metric: EarlyStopMetric::F1,
            validation_fraction: 0.2,
            stop_on_perfect: false,
            track_test_max: false,
            trace_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidArgument("validation fraction must lie in (0, 1)".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn record(&mut self, predicted: bool, label: u8) {
        match (predicted, label == 1) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// Harmonic mean of precision and recall; 0 when nothing is predicted positive.
    pub fn f1(&self) -> f64 {
        if self.tp == 0 {
            return 0.0;
        }
        2.0 * self.tp as f64 / (2 * self.tp + self.fp + self.fn_) as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
    pub loss: f64,
    pub epoch: usize,
}

impl Metrics {
    fn score(&self, metric: EarlyStopMetric) -> f64 {
        match metric {
            EarlyStopMetric::F1 => self.f1,
            EarlyStopMetric::Accuracy => self.accuracy,
            EarlyStopMetric::None => 0.0,
        }
    }
}

/// Predicts label 1 iff the logit is positive.
pub fn evaluate(model: &QnnModel, dataset: &Dataset) -> Result<Metrics> {
    let prepared = prepare_all(model, dataset)?;
    evaluate_prepared(model, dataset, &prepared)
}

fn prepare_all(model: &QnnModel, dataset: &Dataset) -> Result<Vec<PreparedInput>> {
    dataset
        .samples()
        .iter()
        .map(|s| model.prepare(&s.features))
        .collect()
}

fn evaluate_prepared(model: &QnnModel, dataset: &Dataset, prepared: &[PreparedInput]) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let ev = model.evaluator()?;
    let mut conf = Confusion::default();
    let mut loss = 0.0;
    for (s, p) in dataset.samples().iter().zip(prepared) {
        let z = ev.forward(p);
        loss += bce_with_logits(z, s.label);
        conf.record(z > 0.0, s.label);
    }
    Ok(Metrics {
        accuracy: conf.accuracy(),
        f1: conf.f1(),
        loss: loss / dataset.len() as f64,
        epoch: 0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_f1: f64,
    pub test_accuracy: Option<f64>,
}

/// Metrics trace as CSV: `epoch,train_loss,val_accuracy,val_f1[,test_accuracy]`.
pub fn write_trace_csv<W: std::io::Write>(trace: &[EpochRecord], w: W) -> Result<()> {
    let with_test = trace.iter().any(|r| r.test_accuracy.is_some());
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["epoch", "train_loss", "val_accuracy", "val_f1"];
    if with_test {
        header.push("test_accuracy");
    }
    wr.write_record(&header)?;
    for r in trace {
        let mut row = vec![
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_accuracy.to_string(),
            r.val_f1.to_string(),
        ];
        if with_test {
            row.push(r.test_accuracy.map(|a| a.to_string()).unwrap_or_default());
        }
        wr.write_record(&row)?;
    }
    wr.flush().map_err(|e| Error::io("<trace>", e))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
    PerfectValidation,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch (or the last epoch when early
    /// stopping is disabled).
    pub model: QnnModel,
    pub best: Metrics,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    pub trace: Vec<EpochRecord>,
    /// Highest test accuracy seen during training and its epoch (`track_test_max`).
    pub max_test_accuracy: Option<(f64, usize)>,
    pub reinitialized_factors: usize,
}

/// Full-batch Adam on BCE-with-logits with validation-based early stopping.
pub fn train(
    mut model: QnnModel,
    train_set: &Dataset,
    val_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if cfg.track_test_max && test_set.is_none() {
        return Err(Error::InvalidArgument("track_test_max needs a test set".into()));
    }
    let train_in = prepare_all(&model, train_set)?;
    let val_in = prepare_all(&model, val_set)?;
    let test_in = test_set.map(|t| prepare_all(&model, t)).transpose()?;
    let labels: Vec<u8> = train_set.labels().collect();
    let batch = cfg.batch_size.unwrap_or(MAX_BATCH).min(MAX_BATCH).min(train_set.len());

    let mut adam = Adam::new(model.param_count(), cfg.learning_rate);
    let mut params = model.flat_params();
    let mut reinit_rng = seed::rng(seed::derive_named(cfg.seed, "reinit"));
    let mut reinitialized = 0;

    let mut best: Option<(Metrics, Vec<f64>)> = None;
    let mut since_best = 0;
    let mut trace = Vec::new();
    let mut max_test: Option<(f64, usize)> = None;
    let mut last_finite = 0;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut epochs_run = 0;
    let mut last_record: Option<EpochRecord> = None;

    for epoch in 1..=cfg.epochs {
        let mut epoch_loss = 0.0;
        for start in (0..train_in.len()).step_by(batch) {
            let end = (start + batch).min(train_in.len());
            let r = reinit_degenerate(&mut model, &mut adam, &mut reinit_rng);
            if r > 0 {
                reinitialized += r;
                params = model.flat_params();
            }
            let (loss, grads) = batch_gradient(&model, &train_in[start..end], &labels[start..end])?;
            epoch_loss += loss;
            let g = grads.to_flat();
            if !epoch_loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    last_finite_epoch: last_finite,
                });
            }
            adam.step(&mut params, &g);
            model.set_flat_params(&params);
        }
        let train_loss = epoch_loss / train_in.len() as f64;
        last_finite = epoch;
        epochs_run = epoch;

        let mut val = match evaluate_prepared(&model, val_set, &val_in) {
            Ok(m) => m,
            Err(Error::ZeroNorm { .. }) => {
                reinitialized += reinit_degenerate(&mut model, &mut adam, &mut reinit_rng);
                params = model.flat_params();
                evaluate_prepared(&model, val_set, &val_in)?
            }
            Err(e) => return Err(e),
        };
        val.epoch = epoch;
        let test_acc = match (&test_in, test_set) {
            (Some(inp), Some(ts)) if cfg.track_test_max => {
                let a = evaluate_prepared(&model, ts, inp)?.accuracy;
                if max_test.is_none_or(|(m, _)| a > m) {
                    max_test = Some((a, epoch));
                }
                Some(a)
            }
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val_accuracy: val.accuracy,
            val_f1: val.f1,
            test_accuracy: test_acc,
        };
        if epoch % cfg.trace_every.max(1) == 0 {
            trace.push(record.clone());
        }
        last_record = Some(record);

        let improved = match &best {
            None => true,
            Some((b, _)) => {
                cfg.early_stop_metric != EarlyStopMetric::None
                    && val.score(cfg.early_stop_metric) > b.score(cfg.early_stop_metric)
            }
        };
        if improved || cfg.early_stop_metric == EarlyStopMetric::None {
            best = Some((val, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }

        if cfg.stop_on_perfect && val.accuracy >= 1.0 {
            stop_reason = StopReason::PerfectValidation;
            break;
        }
        if cfg.early_stop_metric != EarlyStopMetric::None && since_best > cfg.patience {
            stop_reason = StopReason::Patience;
            break;
        }
    }
    if let Some(r) = last_record.filter(|r| trace.last().is_none_or(|t| t.epoch != r.epoch)) {
        trace.push(r);
    }

    let (best_metrics, best_params) = best.expect("at least one epoch ran");
    model.set_flat_params(&best_params);
    Ok(TrainOutcome {
        model,
        best: best_metrics,
        epochs_run,
        stop_reason,
        trace,
        max_test_accuracy: max_test,
        reinitialized_factors: reinitialized,
    })
}

fn reinit_degenerate(model: &mut QnnModel, adam: &mut Adam, rng: &mut impl rand::Rng) -> usize {
    let mut count = 0;
    for i in 0..model.n_modules() {
        for j in 0..model.k() {
            if norm_sq(&model.modules()[i].factors[j]).sqrt() < REINIT_NORM {
                let off = model.factor_offset(i, j);
                let w = model.factor_mut(i, j);
                w.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
                adam.reset(off..off + w.len());
                log::warn!("factor ({i}, {j}) collapsed below norm {REINIT_NORM:e}; re-initialized");
                count += 1;
            }
        }
    }
    count
}

/// Summed loss and mean gradient over one batch.
fn batch_gradient(model: &QnnModel, inputs: &[PreparedInput], labels: &[u8]) -> Result<(f64, Gradients)> {
    let ev = model.evaluator()?;
    let scale = 1.0 / inputs.len() as f64;
    let partials: Vec<(f64, Gradients)> = inputs
        .par_chunks(CHUNK)
        .zip(labels.par_chunks(CHUNK))
        .map(|(xs, ys)| {
            let mut g = Gradients::zeros_like(model);
            let mut cache = Vec::new();
            let mut loss = 0.0;
            for (x, &y) in xs.iter().zip(ys) {
                let z = ev.forward_cached(x, &mut cache);
                loss += bce_with_logits(z, y);
                ev.backward_cached(x, &cache, bce_grad(z, y) * scale, &mut g);
            }
            (loss, g)
        })
        .collect();
    let mut iter = partials.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        grads.add_assign(&g);
    }
    Ok((loss, grads))
}

/// Assigns each sample a fold in `0..folds`, class by class, after a seeded shuffle.
///
/// The fold counter carries over between classes, so fold sizes differ by at most one.
pub fn stratified_folds(dataset: &Dataset, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    if dataset.len() < folds {
        return Err(Error::InsufficientData {
            needed: folds,
            got: dataset.len(),
        });
    }
    let mut rng = seed::rng(seed);
    let mut assignment = vec![0; dataset.len()];
    let mut counter = 0;
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = dataset
            .labels()
            .enumerate()
            .filter(|(_, l)| *l == class)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        for i in idx {
            assignment[i] = counter % folds;
            counter += 1;
        }
    }
    Ok(assignment)
}

/// Stratified split of `indices` into (train, validation) with `fraction` held out.
pub fn stratified_split(
    dataset: &Dataset,
    indices: &[usize],
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = seed::rng(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = indices
            .iter()
            .copied()
            .filter(|&i| dataset.samples()[i].label == class)
            .collect();
        idx.shuffle(&mut rng);
        let n_val = ((idx.len() as f64) * fraction).round() as usize;
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    // A class too small to contribute validation samples still needs a nonempty set.
    if val.is_empty() && train.len() > 1 {
        val.push(train.pop().unwrap());
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

#[derive(Clone, Debug, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train: Metrics,
    pub validation: Metrics,
    pub test: Metrics,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    pub test_indices: Vec<usize>,
    #[serde(skip)]
    pub model: QnnModel,
}

#[derive(Clone, Debug, Serialize)]
pub struct FoldReport {
    pub dataset: String,
    pub folds: Vec<FoldResult>,
    pub mean_test_accuracy: f64,
    pub mean_test_f1: f64,
    pub mean_validation_accuracy: f64,
}

/// k-fold cross-validation: each fold trains a fresh model on the remaining
/// folds (split again into train/validation) and is scored on the held-out fold.
pub fn cross_validate(
    dataset: &Dataset,
    template: &PartitionPlan,
    cfg: &TrainConfig,
    folds: usize,
) -> Result<FoldReport> {
    cfg.validate()?;
    if template.d() != dataset.d() {
        return Err(Error::DimensionMismatch {
            expected: template.d(),
            found: dataset.d(),
        });
    }
    let assignment = stratified_folds(dataset, folds, seed::derive_named(cfg.seed, "folds"))?;
    let results: Vec<Result<FoldResult>> = (0..folds)
        .into_par_iter()
        .map(|fold| {
            let test_idx: Vec<usize> = (0..dataset.len()).filter(|&i| assignment[i] == fold).collect();
            let rest: Vec<usize> = (0..dataset.len()).filter(|&i| assignment[i] != fold).collect();
            let fold_seed = seed::derive(cfg.seed, fold as u64);
            let (tr_idx, val_idx) =
                stratified_split(dataset, &rest, cfg.validation_fraction, seed::derive_named(fold_seed, "split"));
            let tr = dataset.subset(&tr_idx, format!("{}_fold{fold}_train", dataset.name))?;
            let va = dataset.subset(&val_idx, format!("{}_fold{fold}_val", dataset.name))?;
            let te = dataset.subset(&test_idx, format!("{}_fold{fold}_test", dataset.name))?;
            let model = QnnModel::random(template.clone(), seed::derive_named(fold_seed, "init"));
            let fold_cfg = TrainConfig {
                seed: fold_seed,
                ..cfg.clone()
            };
            let out = train(model, &tr, &va, None, &fold_cfg)?;
            Ok(FoldResult {
                fold,
                train: evaluate(&out.model, &tr)?,
                validation: out.best,
                test: evaluate(&out.model, &te)?,
                best_epoch: out.best.epoch,
                epochs_run: out.epochs_run,
                stop_reason: out.stop_reason,
                test_indices: test_idx,
                model: out.model,
            })
        })
        .collect();
    let folds_out = results.into_iter().collect::<Result<Vec<_>>>()?;
    let n = folds_out.len() as f64;
    Ok(FoldReport {
        dataset: dataset.name.clone(),
        mean_test_accuracy: folds_out.iter().map(|f| f.test.accuracy).sum::<f64>() / n,
        mean_test_f1: folds_out.iter().map(|f| f.test.f1).sum::<f64>() / n,
        mean_validation_accuracy: folds_out.iter().map(|f| f.validation.accuracy).sum::<f64>() / n,
        folds: folds_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_parity, Sample};
    use crate::encoding::FeatureVector;
    use serde_json::Map;

    #[test]
    fn bce_values() {
        assert!((bce_with_logits(0.0, 1) - std::f64::consts::LN_2).abs() < 1e-15);
        let small = bce_with_logits(50.0, 1);
        assert!((small - (-50f64).exp()).abs() < 1e-30);
        assert!((small - 1.9287498479639178e-22).abs() < 1e-30);
        assert!((bce_with_logits(-50.0, 1) - 50.0).abs() < 1e-12);
        assert!(bce_with_logits(1e6, 0).is_finite());
        assert!((bce_with_logits(-1e6, 0)).abs() < 1e-300);
        assert_eq!(bce_with_logits(-1e6, 1), 1e6);
    }

    #[test]
    fn bce_derivative_and_convexity() {
        let h = 1e-5;
        for &y in &[0u8, 1] {
            for i in -40..=40 {
                let z = i as f64 * 0.37;
                let fd = (bce_with_logits(z + h, y) - bce_with_logits(z - h, y)) / (2.0 * h);
                assert!((fd - bce_grad(z, y)).abs() < 1e-9, "z={z} y={y}");
                let second = bce_with_logits(z + h, y) - 2.0 * bce_with_logits(z, y) + bce_with_logits(z - h, y);
                assert!(second >= -1e-13 * (1.0 + z.abs()));
            }
        }
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let mut adam = Adam::new(3, 0.1);
        let mut p = vec![1.0, 1.0, 1.0];
        adam.step(&mut p, &[2.0, -0.001, 0.0]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-4);
        assert_eq!(p[2], 1.0);
        let mut adam = Adam::new(2, 1.0);
        let mut q = vec![0.3, -0.4];
        for _ in 0..100 {
            adam.step(&mut q, &[0.0, 0.0]);
        }
        assert_eq!(q, vec![0.3, -0.4]);
    }

    #[test]
    fn confusion_edge_cases() {
        let mut c = Confusion::default();
        c.record(false, 1);
        c.record(false, 0);
        assert_eq!(c.f1(), 0.0);
        assert_eq!(c.accuracy(), 0.5);
        let mut c = Confusion::default();
        c.record(true, 1);
        c.record(false, 0);
        assert_eq!((c.accuracy(), c.f1()), (1.0, 1.0));
    }

    fn constant(label: u8, n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| Sample {
                features: FeatureVector::new(vec![i as f64 / n as f64, 0.5]).unwrap(),
                label,
            })
            .collect();
        Dataset::new("const", samples, Map::new()).unwrap()
    }

    #[test]
    fn constant_label_is_learned() {
        let ds = constant(1, 20);
        let model = QnnModel::random(PartitionPlan::full(2, 2, 1).unwrap(), 3);
        let cfg = TrainConfig {
            epochs: 300,
            ..Default::default()
        };
        let out = train(model, &ds, &ds, None, &cfg).unwrap();
        assert_eq!(evaluate(&out.model, &ds).unwrap().accuracy, 1.0);
    }

    #[test]
    fn zero_patience_runs_one_epoch_past_first_best() {
        // Validation F1 is 0 forever on an all-negative set, so epoch 1 is the only best.
        let ds = constant(0, 10);
        let model = QnnModel::random(PartitionPlan::full(2, 1, 1).unwrap(), 0);
        let cfg = TrainConfig {
            epochs: 100,
            patience: 0,
            ..Default::default()
        };
        let out = train(model, &ds, &ds, None, &cfg).unwrap();
        assert_eq!(out.epochs_run, 2);
        assert_eq!(out.stop_reason, StopReason::Patience);
        assert_eq!(out.best.epoch, 1);
    }

    #[test]
    fn training_is_deterministic_and_restores_best() {
        let ds = gen_parity(2, 30, 1).unwrap();
        let plan = PartitionPlan::full(2, 2, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            patience: 20,
            early_stop_metric: EarlyStopMetric::Accuracy,
            ..Default::default()
        };
        let a = train(QnnModel::random(plan.clone(), 4), &ds, &ds, None, &cfg).unwrap();
        let b = train(QnnModel::random(plan, 4), &ds, &ds, None, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.trace, b.trace);
        let restored = evaluate(&a.model, &ds).unwrap();
        assert_eq!(restored.accuracy, a.best.accuracy);
        for r in &a.trace {
            assert!(r.train_loss.is_finite());
            if r.epoch < a.best.epoch {
                assert!(r.val_accuracy <= a.best.accuracy);
            }
        }
    }

    #[test]
    fn divergence_reported() {
        // A huge learning rate with an absurd batch still stays finite thanks to
        // bounded outputs, so force non-finite input through the parameters instead.
        let ds = gen_parity(2, 5, 1).unwrap();
        let plan = PartitionPlan::full(2, 1, 1).unwrap();
        let mut model = QnnModel::random(plan, 1);
        let mut p = model.flat_params();
        let last = p.len() - 2;
        p[last] = 1e308;
        model.set_flat_params(&p);
        let cfg = TrainConfig {
            epochs: 5,
            learning_rate: 1e308,
            ..Default::default()
        };
        let r = train(model, &ds, &ds, None, &cfg);
        assert!(matches!(r, Err(Error::Divergence { .. })), "{r:?}");
    }

    #[test]
    fn folds_partition_the_dataset() {
        let ds = gen_parity(1, 50, 0).unwrap();
        let a = stratified_folds(&ds, 10, 5).unwrap();
        let mut sizes = [0; 10];
        a.iter().for_each(|&f| sizes[f] += 1);
        assert_eq!(sizes, [10; 10]);
        assert_eq!(a, stratified_folds(&ds, 10, 5).unwrap());
        assert_ne!(a, stratified_folds(&ds, 10, 6).unwrap());

        let small = gen_parity(1, 5, 0).unwrap();
        let b = stratified_folds(&small, 2, 1).unwrap();
        assert_eq!(b.iter().filter(|&&f| f == 0).count(), 5);
        assert!(matches!(
            stratified_folds(&small, 11, 1),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn split_fraction() {
        let ds = gen_parity(1, 50, 0).unwrap();
        let all: Vec<usize> = (0..100).collect();
        let (tr, va) = stratified_split(&ds, &all, 0.2, 3);
        assert_eq!((tr.len(), va.len()), (80, 20));
        let mut joined = [tr, va].concat();
        joined.sort_unstable();
        assert_eq!(joined, all);
    }

    #[test]
    fn trace_csv_header() {
        let trace = vec![EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            val_accuracy: 1.0,
            val_f1: 1.0,
            test_accuracy: None,
        }];
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,train_loss,val_accuracy,val_f1\n"));
    }
}
