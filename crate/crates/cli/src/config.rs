use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use swapqnn::training::{EarlyStopMetric, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Parity,
    Spiral,
    Csv,
    Iris,
}

/// Everything an experiment command needs. Flags fill it first; a JSON file
/// passed with `--config` then overrides any keys it names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub task: Task,
    pub d: usize,
    pub n: usize,
    pub k: usize,
    /// Parity samples per orthant (training set; the test set gets 0.2·s).
    pub s: usize,
    pub order: usize,
    pub samples_per_class: usize,
    pub noise: f64,
    pub csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub label_column: String,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
    /// Feature pieces for partitioned models; 1 means every factor sees all features.
    pub pieces: usize,
    pub folds: usize,
    pub d_grid: Vec<usize>,
    pub n_grid: Vec<usize>,
    pub k_grid: Vec<usize>,
    pub lr_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub full_grid: bool,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Parity,
            d: 2,
            n: 2,
            k: 1,
            s: 100,
            order: 1,
            samples_per_class: swapqnn::datasets::SPIRAL_SAMPLES_PER_CLASS,
            noise: swapqnn::datasets::SPIRAL_NOISE_STD,
            csv: None,
            test_csv: None,
            label_column: "label".into(),
            positive: vec!["1".into()],
            negative: vec!["0".into()],
            pieces: 1,
            folds: 10,
            d_grid: vec![1, 2, 3, 4, 5],
            n_grid: vec![1, 4, 16, 64],
            k_grid: vec![1, 2, 3],
            lr_grid: vec![0.01, 0.1, 1.0, 10.0],
            seeds: vec![0],
            full_grid: false,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Replaces the sub-grid with the full published grid.
    pub fn apply_full_grid(&mut self) {
        self.d_grid = (1..=10).collect();
        self.n_grid = vec![1, 10, 100, 1000];
        self.k_grid = vec![1, 2, 3, 4, 5];
        self.s = 1000;
    }
}

/// Shared experiment flags. Every field is optional so that unset flags keep
/// the defaults (or the values from `--config`).
#[derive(Args, Clone, Debug, Default)]
pub struct ExperimentArgs {
    /// JSON file whose keys override the flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub task: Option<Task>,
    /// Input dimension (parity)
    #[arg(long)]
    pub d: Option<usize>,
    /// Number of product modules
    #[arg(long)]
    pub n: Option<usize>,
    /// Factors per product module
    #[arg(long)]
    pub k: Option<usize>,
    /// Parity training samples per orthant
    #[arg(long)]
    pub s: Option<usize>,
    /// Spiral order
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub samples_per_class: Option<usize>,
    /// Spiral noise standard deviation
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub test_csv: Option<PathBuf>,
    #[arg(long)]
    pub label_column: Option<String>,
    /// Label values mapped to class 1
    #[arg(long, value_delimiter = ',')]
    pub positive: Option<Vec<String>>,
    /// Label values mapped to class 0
    #[arg(long, value_delimiter = ',')]
    pub negative: Option<Vec<String>>,
    #[arg(long)]
    pub pieces: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub d_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub lr_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Use the full d ≤ 10, N ≤ 1000, s = 1000 grid (days of compute)
    #[arg(long)]
    pub full_grid: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// f1, accuracy or none
    #[arg(long)]
    pub early_stop: Option<EarlyStopMetric>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long)]
    pub stop_on_perfect: bool,
    #[arg(long)]
    pub track_test_max: bool,
    #[arg(long)]
    pub trace_every: Option<usize>,
}

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

impl ExperimentArgs {
    pub fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut c = ExperimentConfig::default();
        set!(c.task, self.task);
        set!(c.d, self.d);
        set!(c.n, self.n);
        set!(c.k, self.k);
        set!(c.s, self.s);
        set!(c.order, self.order);
        set!(c.samples_per_class, self.samples_per_class);
        set!(c.noise, self.noise);
        if self.csv.is_some() {
            c.csv = self.csv.clone();
        }
        if self.test_csv.is_some() {
            c.test_csv = self.test_csv.clone();
        }
        set!(c.label_column, self.label_column.clone());
        set!(c.positive, self.positive.clone());
        set!(c.negative, self.negative.clone());
        set!(c.pieces, self.pieces);
        set!(c.folds, self.folds);
        if self.full_grid {
            c.full_grid = true;
            c.apply_full_grid();
        }
        set!(c.d_grid, self.d_grid.clone());
        set!(c.n_grid, self.n_grid.clone());
        set!(c.k_grid, self.k_grid.clone());
        set!(c.lr_grid, self.lr_grid.clone());
        set!(c.seeds, self.seeds.clone());
        set!(c.train.epochs, self.epochs);
        set!(c.train.learning_rate, self.lr);
        if self.batch_size.is_some() {
            c.train.batch_size = self.batch_size;
        }
        set!(c.train.patience, self.patience);
        set!(c.train.seed, self.seed);
        set!(c.train.early_stop_metric, self.early_stop);
        set!(c.train.validation_fraction, self.validation_fraction);
        c.train.stop_on_perfect |= self.stop_on_perfect;
        c.train.track_test_max |= self.track_test_max;
        set!(c.train.trace_every, self.trace_every);
        if let Some(path) = &self.config {
            c = apply_overrides(c, path)?;
        }
        c.train.validate()?;
        Ok(c)
    }
}

fn apply_overrides(base: ExperimentConfig, path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let overrides: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let Value::Object(over) = overrides else {
        bail!("{}: config must be a JSON object", path.display());
    };
    let known = serde_json::to_value(ExperimentConfig::default())?;
    if let Some(k) = over.keys().find(|k| known.get(k.as_str()).is_none()) {
        bail!("{}: unknown config key {k:?}", path.display());
    }
    let mut merged = serde_json::to_value(&base)?;
    let obj = merged.as_object_mut().expect("config serializes to an object");
    for (k, v) in &over {
        obj.insert(k.clone(), v.clone());
    }
    let mut out: ExperimentConfig =
        serde_json::from_value(merged).with_context(|| format!("invalid config in {}", path.display()))?;
    if out.full_grid && !base.full_grid {
        // Grid keys named in the file still win over the full grid.
        let explicit = out.clone();
        out.apply_full_grid();
        if over.contains_key("d_grid") {
            out.d_grid = explicit.d_grid;
        }
        if over.contains_key("n_grid") {
            out.n_grid = explicit.n_grid;
        }
        if over.contains_key("k_grid") {
            out.k_grid = explicit.k_grid;
        }
        if over.contains_key("s") {
            out.s = explicit.s;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_overrides_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"n": 7, "learning_rate": 0.5, "lr_grid": [1.0]}"#).unwrap();
        let args = ExperimentArgs {
            config: Some(path),
            n: Some(3),
            k: Some(2),
            ..Default::default()
        };
        let c = args.resolve().unwrap();
        assert_eq!((c.n, c.k), (7, 2));
        assert_eq!(c.train.learning_rate, 0.5);
        assert_eq!(c.lr_grid, vec![1.0]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"nn": 7}"#).unwrap();
        let args = ExperimentArgs {
            config: Some(path),
            ..Default::default()
        };
        assert!(args.resolve().is_err());
    }

    #[test]
    fn full_grid_flag() {
        let args = ExperimentArgs {
            full_grid: true,
            ..Default::default()
        };
        let c = args.resolve().unwrap();
        assert_eq!(c.d_grid.len(), 10);
        assert_eq!(c.s, 1000);
    }
}
