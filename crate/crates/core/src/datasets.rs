//! Synthetic generators, CSV ingestion and feature partitioning.

use std::f64::consts::TAU;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::encoding::FeatureVector;
use crate::model::PartitionPlan;
use crate::{seed, Error, Result};

/// Magnitudes below this are redrawn so the parity label is never ambiguous.
const BOUNDARY_EPS: f64 = 1e-12;

pub const SPIRAL_NOISE_STD: f64 = 0.04;
pub const SPIRAL_SAMPLES_PER_CLASS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: FeatureVector,
    /// 0 or 1.
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    d: usize,
    samples: Vec<Sample>,
    /// Generator name, seed and parameters, or the source path for ingested data.
    pub meta: Map<String, Value>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, samples: Vec<Sample>, meta: Map<String, Value>) -> Result<Self> {
        let d = samples
            .first()
            .map(|s| s.features.len())
            .ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
        for s in &samples {
            if s.features.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: s.features.len(),
                });
            }
            if s.label > 1 {
                return Err(Error::InvalidArgument(format!("label {} not in {{0, 1}}", s.label)));
            }
        }
        Ok(Self {
            name: name.into(),
            d,
            samples,
            meta,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn labels(&self) -> impl Iterator<Item = u8> + '_ {
        self.samples.iter().map(|s| s.label)
    }

    /// (count of label 0, count of label 1).
    pub fn class_counts(&self) -> (usize, usize) {
        let ones = self.labels().filter(|&l| l == 1).count();
        (self.len() - ones, ones)
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Result<Self> {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Self::new(name, samples, self.meta.clone())
    }

    /// Writes `x1,…,xd,label` with one header row. Reals use the shortest
    /// representation that round-trips exactly.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.d).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        wr.write_record(&header)?;
        for s in &self.samples {
            let mut row: Vec<String> = s.features.iter().map(|v| v.to_string()).collect();
            row.push(s.label.to_string());
            wr.write_record(&row)?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Parity data: `s` points in each of the `2^d` sign regions.
///
/// Region `r` has coordinate `i` negative iff bit `i` of `r` is set; magnitudes
/// are drawn from U[0, 1]. The label is 1 iff the number of negative coordinates
/// is even, i.e. `sgn(Π x_i) = +1`.
pub fn gen_parity(d: usize, s: usize, seed: u64) -> Result<Dataset> {
    if !(1..=16).contains(&d) {
        return Err(Error::Dimension {
            d,
            reason: "parity generator supports 1 <= d <= 16",
        });
    }
    if s == 0 {
        return Err(Error::InvalidArgument("need at least one sample per region".into()));
    }
    let mut rng = seed::rng(seed);
    let mut samples = Vec::with_capacity(s << d);
    for region in 0..1usize << d {
        let negatives = region.count_ones();
        for _ in 0..s {
            let features = (0..d)
                .map(|i| {
                    let mut u: f64 = rng.random();
                    while u < BOUNDARY_EPS {
                        u = rng.random();
                    }
                    if region >> i & 1 == 1 {
                        -u
                    } else {
                        u
                    }
                })
                .collect();
            samples.push(Sample {
                features: FeatureVector::new(features)?,
                label: u8::from(negatives % 2 == 0),
            });
        }
    }
    let meta = json!({"generator": "parity", "d": d, "samples_per_region": s, "seed": seed});
    Dataset::new(format!("parity_d{d}"), samples, into_map(meta))
}

/// Independent train and test parity sets with `s` and `0.2·s` samples per region.
pub fn gen_parity_split(d: usize, s: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let test_s = ((s as f64) * 0.2).round().max(1.0) as usize;
    let mut train = gen_parity(d, s, seed::derive_named(seed, "train"))?;
    let mut test = gen_parity(d, test_s, seed::derive_named(seed, "test"))?;
    train.name.push_str("_train");
    test.name.push_str("_test");
    train.meta.insert("split_seed".into(), json!(seed));
    test.meta.insert("split_seed".into(), json!(seed));
    Ok((train, test))
}

/// Two interleaved spirals of the given order (number of windings), with
/// Gaussian noise of standard deviation 0.04 and the 2-D norm appended as a
/// third feature.
pub fn gen_spiral(order: usize, samples_per_class: usize, seed: u64) -> Result<Dataset> {
    gen_spiral_with_noise(order, samples_per_class, seed, SPIRAL_NOISE_STD)
}

pub fn gen_spiral_with_noise(
    order: usize,
    samples_per_class: usize,
    seed: u64,
    noise_std: f64,
) -> Result<Dataset> {
    if order == 0 || samples_per_class == 0 {
        return Err(Error::InvalidArgument("spiral order and size must be >= 1".into()));
    }
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let n = samples_per_class as f64;
    let mut samples = Vec::with_capacity(2 * samples_per_class);
    for (sign, label) in [(1.0, 1u8), (-1.0, 0u8)] {
        for i in 1..=samples_per_class {
            let theta = order as f64 * TAU * i as f64 / n;
            let r = 0.1 * theta;
            let x = sign * r * theta.sin() + noise.sample(&mut rng);
            let y = sign * r * theta.cos() + noise.sample(&mut rng);
            let norm = x.hypot(y);
            samples.push(Sample {
                features: FeatureVector::new(vec![x, y, norm])?,
                label,
            });
        }
    }
    let meta = json!({
        "generator": "spiral",
        "order": order,
        "samples_per_class": samples_per_class,
        "noise_std": noise_std,
        "seed": seed,
    });
    Dataset::new(format!("spiral_order{order}"), samples, into_map(meta))
}

fn into_map(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("metadata is always an object"),
    }
}

/// Which column holds the label and how its values map to {0, 1}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: String,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

impl CsvSchema {
    /// The format written by [`Dataset::write_csv`].
    pub fn binary(label_column: impl Into<String>) -> Self {
        Self {
            label_column: label_column.into(),
            positive: vec!["1".into()],
            negative: vec!["0".into()],
        }
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    let mut ds = read_csv(file, schema, name)?;
    ds.meta.insert("source".into(), json!(path.display().to_string()));
    Ok(ds)
}

const IRIS_CSV: &str = include_str!("../data/iris_setosa_versicolor.csv");

/// The bundled 100-sample iris subset, versicolor = 1, setosa = 0.
pub fn iris_setosa_versicolor() -> Result<Dataset> {
    let schema = CsvSchema {
        label_column: "species".into(),
        positive: vec!["versicolor".into()],
        negative: vec!["setosa".into()],
    };
    let mut ds = read_csv(IRIS_CSV.as_bytes(), &schema, "iris_setosa_versicolor")?;
    ds.meta.insert("source".into(), json!("bundled"));
    Ok(ds)
}

/// Parses CSV from any reader; see [`load_csv`].
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema, name: impl Into<String>) -> Result<Dataset> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rd.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == schema.label_column)
        .ok_or_else(|| Error::Schema(format!("no label column {:?}", schema.label_column)))?;
    if headers.len() < 2 {
        return Err(Error::Schema("need at least one feature column".into()));
    }

    let mut samples = Vec::new();
    let mut missing = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != headers.len() || rec.iter().any(|c| c.trim().is_empty()) {
            missing.push(line);
            continue;
        }
        let raw_label = rec[label_idx].trim();
        let label = if schema.positive.iter().any(|p| p == raw_label) {
            1
        } else if schema.negative.iter().any(|n| n == raw_label) {
            0
        } else {
            return Err(Error::UnmappedLabel {
                row: line,
                value: raw_label.to_string(),
            });
        };
        let features = rec
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != label_idx)
            .map(|(_, c)| {
                c.trim().parse::<f64>().map_err(|e| Error::Parse {
                    row: line,
                    message: format!("{c:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let features = FeatureVector::new(features).map_err(|e| Error::Parse {
            row: line,
            message: e.to_string(),
        })?;
        samples.push(Sample { features, label });
    }
    if !missing.is_empty() {
        return Err(Error::MissingValues { rows: missing });
    }
    if samples.is_empty() {
        return Err(Error::Schema("no data rows".into()));
    }
    let meta = json!({"label_column": schema.label_column});
    Dataset::new(name, samples, into_map(meta))
}

/// Splits `d` features into `pieces` slices, each feeding `modules_per_piece`
/// product modules whose `k` factors all share the slice.
///
/// When `d` and `pieces` are both perfect squares and the image side divides
/// evenly, slices are square image blocks in row-major block order; otherwise
/// they are contiguous near-equal ranges.
pub fn make_partition(d: usize, pieces: usize, modules_per_piece: usize, k: usize) -> Result<PartitionPlan> {
    if pieces == 0 || modules_per_piece == 0 || k == 0 {
        return Err(Error::InvalidPartition(
            "pieces, modules_per_piece and k must be >= 1".into(),
        ));
    }
    if pieces > d {
        return Err(Error::InvalidPartition(format!("{pieces} pieces exceed d = {d}")));
    }
    let piece_slices: Vec<Vec<usize>> = match (exact_sqrt(d), exact_sqrt(pieces)) {
        _ if pieces == 1 => vec![(0..d).collect()],
        (Some(side), Some(per_side)) if side % per_side == 0 => {
            let block = side / per_side;
            let mut out = Vec::with_capacity(pieces);
            for br in 0..per_side {
                for bc in 0..per_side {
                    let mut idx = Vec::with_capacity(block * block);
                    for r in br * block..(br + 1) * block {
                        for c in bc * block..(bc + 1) * block {
                            idx.push(r * side + c);
                        }
                    }
                    out.push(idx);
                }
            }
            out
        }
        _ => (0..pieces)
            .map(|t| (t * d / pieces..(t + 1) * d / pieces).collect())
            .collect(),
    };
    let slices = piece_slices
        .iter()
        .flat_map(|s| std::iter::repeat_n(vec![s.clone(); k], modules_per_piece))
        .collect();
    PartitionPlan::new(d, slices)
}

fn exact_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}
