use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use swapqnn::datasets::{
    gen_parity_split, iris_setosa_versicolor, load_csv, make_partition, CsvSchema, Dataset,
};
use swapqnn::experiments::{
    aggregate_sweep, run_holdout, run_parity_cell, simulate_accuracy, spiral_split, CellResult,
    ParityCell, ProbabilityMode,
};
use swapqnn::model::{PartitionPlan, QnnModel};
use swapqnn::training::{cross_validate, stratified_split, write_trace_csv, TrainConfig};
use swapqnn::{seed, verify as checks};

use crate::config::{ExperimentConfig, Task};
use crate::output::OutDir;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DataKind {
    Parity,
    Spiral,
}

fn csv_bytes(ds: &Dataset) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    ds.write_csv(&mut buf)?;
    Ok(buf)
}

pub fn gen_data(out: &OutDir, kind: DataKind, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let seed = cfg.train.seed;
    match kind {
        DataKind::Parity => {
            let (train, test) = gen_parity_split(cfg.d, cfg.s, seed)?;
            let stem = format!("parity_d{}", cfg.d);
            let a = out.write(&format!("{stem}_train.csv"), &csv_bytes(&train)?)?;
            let b = out.write(&format!("{stem}_test.csv"), &csv_bytes(&test)?)?;
            out.write_json(
                &format!("{stem}.json"),
                &json!({
                    "train": { "file": a.file_name().map(|f| f.to_string_lossy()), "rows": train.len(), "meta": train.meta },
                    "test": { "file": b.file_name().map(|f| f.to_string_lossy()), "rows": test.len(), "meta": test.meta },
                }),
            )?;
            println!("{} ({} rows), {} ({} rows)", a.display(), train.len(), b.display(), test.len());
        }
        DataKind::Spiral => {
            let ds = swapqnn::datasets::gen_spiral_with_noise(cfg.order, cfg.samples_per_class, seed, cfg.noise)?;
            let stem = format!("spiral_order{}", cfg.order);
            let a = out.write(&format!("{stem}.csv"), &csv_bytes(&ds)?)?;
            out.write_json(&format!("{stem}.json"), &json!({ "rows": ds.len(), "meta": ds.meta }))?;
            println!("{} ({} rows)", a.display(), ds.len());
        }
    }
    out.manifest("gen-data", cfg)
}

fn schema(cfg: &ExperimentConfig) -> CsvSchema {
    CsvSchema {
        label_column: cfg.label_column.clone(),
        positive: cfg.positive.clone(),
        negative: cfg.negative.clone(),
    }
}

/// A single labelled dataset for cross-validation.
fn load_single(cfg: &ExperimentConfig) -> anyhow::Result<Dataset> {
    Ok(match cfg.task {
        Task::Iris => iris_setosa_versicolor()?,
        Task::Csv => {
            let path = cfg.csv.as_ref().context("--csv is required for the csv task")?;
            load_csv(path, &schema(cfg))?
        }
        Task::Parity => gen_parity_split(cfg.d, cfg.s, cfg.train.seed)?.0,
        Task::Spiral => spiral_split(cfg.order, cfg.samples_per_class, cfg.noise, cfg.train.seed)?.0,
    })
}

/// (training pool, test set) for hold-out training.
fn load_split(cfg: &ExperimentConfig) -> anyhow::Result<(Dataset, Dataset)> {
    let seed = cfg.train.seed;
    Ok(match cfg.task {
        Task::Parity => gen_parity_split(cfg.d, cfg.s, seed)?,
        Task::Spiral => spiral_split(cfg.order, cfg.samples_per_class, cfg.noise, seed)?,
        Task::Csv | Task::Iris => {
            let full = load_single(cfg)?;
            if let Some(test_path) = &cfg.test_csv {
                (full, load_csv(test_path, &schema(cfg))?)
            } else {
                let all: Vec<usize> = (0..full.len()).collect();
                let (tr, te) = stratified_split(&full, &all, 0.2, seed::derive_named(seed, "test_split"));
                let name = full.name.clone();
                (full.subset(&tr, format!("{name}_pool"))?, full.subset(&te, format!("{name}_test"))?)
            }
        }
    })
}

fn plan_for(cfg: &ExperimentConfig, d: usize) -> anyhow::Result<PartitionPlan> {
    if cfg.pieces <= 1 {
        return Ok(PartitionPlan::full(d, cfg.n, cfg.k)?);
    }
    if cfg.n % cfg.pieces != 0 {
        bail!("n = {} must be a multiple of pieces = {}", cfg.n, cfg.pieces);
    }
    Ok(make_partition(d, cfg.pieces, cfg.n / cfg.pieces, cfg.k)?)
}

pub fn train(out: &OutDir, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    out.manifest("train", cfg)?;
    let (pool, test) = load_split(cfg)?;
    let plan = plan_for(cfg, pool.d())?;
    let train_cfg = TrainConfig {
        seed: seed::derive_named(cfg.train.seed, "train"),
        ..cfg.train.clone()
    };
    let h = run_holdout(&pool, &test, &plan, &train_cfg)?;
    out.write("model.json", h.outcome.model.to_json()?.as_bytes())?;
    let mut trace = Vec::new();
    write_trace_csv(&h.outcome.trace, &mut trace)?;
    out.write("metrics.csv", &trace)?;
    let summary = json!({
        "dataset": pool.name,
        "d": pool.d(),
        "n": plan.n_modules(),
        "k": plan.k(),
        "parameters": h.outcome.model.param_count(),
        "train": h.train,
        "validation": h.validation,
        "test": h.test,
        "accuracy": h.test.accuracy,
        "f1": h.test.f1,
        "max_test_accuracy": h.max_test_accuracy,
        "best_epoch": h.validation.epoch,
        "epochs_run": h.outcome.epochs_run,
        "stop_reason": h.outcome.stop_reason,
        "reinitialized_factors": h.outcome.reinitialized_factors,
    });
    out.write_json("summary.json", &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

#[derive(Serialize)]
struct SweepReport<'a> {
    cells: &'a [CellResult],
    best: Vec<swapqnn::experiments::SweepRow>,
}

pub fn sweep(out: &OutDir, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let train_cfg = TrainConfig {
        track_test_max: true,
        ..cfg.train.clone()
    };
    // Settings that change cell results must match any sweep already in this directory.
    let fingerprint = json!({ "train": TrainConfig { learning_rate: 1.0, seed: 0, ..train_cfg.clone() } });
    let fp_path = out.path("sweep_settings.json");
    if fp_path.exists() {
        let old: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&fp_path)?)?;
        if old != fingerprint {
            bail!(
                "{} holds a sweep with different training settings; use another --out",
                fp_path.display()
            );
        }
    } else {
        out.write_json("sweep_settings.json", &fingerprint)?;
    }
    out.manifest("sweep", cfg)?;

    let mut grid = Vec::new();
    for &d in &cfg.d_grid {
        for &k in &cfg.k_grid {
            for &n in &cfg.n_grid {
                for &lr in &cfg.lr_grid {
                    for &s in &cfg.seeds {
                        grid.push(ParityCell {
                            d,
                            n,
                            k,
                            learning_rate: lr,
                            seed: s,
                            s: cfg.s,
                        });
                    }
                }
            }
        }
    }
    let cell_file = |c: &ParityCell| format!("cells/{}.json", c.key());
    let missing: Vec<&ParityCell> = grid.iter().filter(|c| !out.path(&cell_file(c)).exists()).collect();
    log::info!("{} of {} cells to run", missing.len(), grid.len());
    missing
        .par_iter()
        .map(|cell| {
            let (result, _) = run_parity_cell(cell, &train_cfg).with_context(|| format!("cell {}", cell.key()))?;
            out.write_json(&cell_file(cell), &result)?;
            log::info!("{} -> {:.4}", cell.key(), result.score());
            Ok(())
        })
        .collect::<anyhow::Result<Vec<()>>>()?;

    let mut results = Vec::with_capacity(grid.len());
    for c in &grid {
        let path = out.path(&cell_file(c));
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        results.push(serde_json::from_str::<CellResult>(&text).with_context(|| format!("parsing {}", path.display()))?);
    }
    let mut csv = String::from("d,n,k,learning_rate,seed,s,max_test_accuracy,test_accuracy,validation_accuracy,epochs_run,best_epoch\n");
    for r in &results {
        let c = &r.cell;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            c.d,
            c.n,
            c.k,
            c.learning_rate,
            c.seed,
            c.s,
            r.max_test_accuracy.map(|a| a.to_string()).unwrap_or_default(),
            r.test_accuracy,
            r.validation_accuracy,
            r.epochs_run,
            r.best_epoch
        ));
    }
    out.write("sweep.csv", csv.as_bytes())?;
    let best = aggregate_sweep(&results);
    let mut summary = String::from("d,n,k,best_accuracy,best_learning_rate,best_seed,cells\n");
    for b in &best {
        summary.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            b.d, b.n, b.k, b.best_accuracy, b.best_learning_rate, b.best_seed, b.cells
        ));
    }
    out.write("sweep_summary.csv", summary.as_bytes())?;
    out.write_json("sweep.json", &SweepReport { cells: &results, best })?;
    print!("{summary}");
    Ok(())
}

#[derive(Args, Clone, Debug)]
pub struct SimulateArgs {
    /// Model file written by `train`
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with a `label` column; defaults to a fresh parity test set
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Parity samples per orthant when generating (the test set gets 0.2·s)
    #[arg(long, default_value_t = 1000)]
    pub s: usize,
    /// Seed of the generated parity data (matches `train --seed`)
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[arg(long, default_value_t = swapqnn::circuit::DEFAULT_SHOTS)]
    pub shots: u64,
    /// Use exact circuit probabilities instead of shots
    #[arg(long)]
    pub exact: bool,
    /// Shot-sampling seeds; one report per seed
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
}

pub fn simulate(out: &OutDir, args: &SimulateArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let model = QnnModel::from_json(&text)?;
    let dataset = match &args.data {
        Some(p) => load_csv(p, &CsvSchema::binary("label"))?,
        None => gen_parity_split(model.d(), args.s, args.data_seed)?.1,
    };
    let mode = if args.exact {
        ProbabilityMode::Exact
    } else {
        ProbabilityMode::Shots(args.shots)
    };
    out.manifest(
        "simulate",
        &json!({
            "model": args.model,
            "data": args.data,
            "s": args.s,
            "data_seed": args.data_seed,
            "mode": mode,
            "seeds": args.seeds,
        }),
    )?;
    let reports = args
        .seeds
        .iter()
        .map(|&s| simulate_accuracy(&model, &dataset, mode, s).map(|r| (s, r)))
        .collect::<swapqnn::Result<Vec<_>>>()?;
    let rows: Vec<_> = reports
        .iter()
        .map(|(s, r)| json!({ "seed": s, "report": r }))
        .collect();
    let mean = reports.iter().map(|(_, r)| r.accuracy).sum::<f64>() / reports.len() as f64;
    let report = json!({ "dataset": dataset.name, "runs": rows, "mean_accuracy": mean });
    out.write_json("simulate.json", &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

pub fn xval(out: &OutDir, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    out.manifest("xval", cfg)?;
    let ds = load_single(cfg)?;
    let plan = plan_for(cfg, ds.d())?;
    let report = cross_validate(&ds, &plan, &cfg.train, cfg.folds)?;
    let mut csv = String::from("fold,train_accuracy,validation_accuracy,test_accuracy,test_f1,best_epoch,epochs_run\n");
    for f in &report.folds {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            f.fold, f.train.accuracy, f.validation.accuracy, f.test.accuracy, f.test.f1, f.best_epoch, f.epochs_run
        ));
    }
    out.write("folds.csv", csv.as_bytes())?;
    out.write_json("xval.json", &report)?;
    let mut per_fold = BTreeMap::new();
    for f in &report.folds {
        per_fold.insert(f.fold, f.test.accuracy);
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "dataset": report.dataset,
            "folds": cfg.folds,
            "mean_test_accuracy": report.mean_test_accuracy,
            "mean_test_f1": report.mean_test_f1,
            "test_accuracy_per_fold": per_fold,
        }))?
    );
    Ok(())
}

/// Returns whether every check passed; failing names go to stderr.
pub fn verify(out: &OutDir, seed: u64, theory_only: bool) -> anyhow::Result<bool> {
    let name = if theory_only { "verify-theory" } else { "verify" };
    out.manifest(name, &json!({ "seed": seed }))?;
    let report = if theory_only {
        checks::run_theory(seed)?
    } else {
        checks::run_all(seed)?
    };
    out.write_json(&format!("{name}.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if !report.passed {
        eprintln!("failing checks: {}", report.failing().join(", "));
    }
    Ok(report.passed)
}
