//! The two-layer network built from product modules.
//!
//! Module `i` has `k` factor weight vectors `w_ij`, each acting on its own feature
//! slice `x[S_ij]` (augmented with the dummy feature). Its ancilla probability is
//!
//! ```text
//! P(0)_i = ½ (1 + Π_j overlap²(x[S_ij], w_ij))
//! ```
//!
//! and the trained output is the rescaled logit `f(x) = Σ_i c_i (2 P(0)_i − 1) + b`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoding::{
    biased_overlap_sq, dot, norm_sq, overlap_from_parts, swap_test_probability, NORM_FLOOR,
};
use crate::{seed, Error, Result};

/// Assignment of feature indices to every (module, factor) slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPlan", into = "RawPlan")]
pub struct PartitionPlan {
    d: usize,
    slices: Vec<Vec<Vec<usize>>>,
    // Distinct slices, and the distinct-slice index of each slot.
    unique: Vec<Vec<usize>>,
    slot: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct RawPlan {
    d: usize,
    slices: Vec<Vec<Vec<usize>>>,
}

impl TryFrom<RawPlan> for PartitionPlan {
    type Error = Error;
    fn try_from(raw: RawPlan) -> Result<Self> {
        PartitionPlan::new(raw.d, raw.slices)
    }
}

impl From<PartitionPlan> for RawPlan {
    fn from(p: PartitionPlan) -> Self {
        RawPlan {
            d: p.d,
            slices: p.slices,
        }
    }
}

impl PartitionPlan {
    /// `slices[i][j]` lists the feature indices seen by factor `j` of module `i`.
    pub fn new(d: usize, slices: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidPartition("d must be >= 1".into()));
        }
        if slices.is_empty() {
            return Err(Error::InvalidPartition("need at least one module".into()));
        }
        let k = slices[0].len();
        if k == 0 {
            return Err(Error::InvalidPartition("need at least one factor per module".into()));
        }
        let mut covered = vec![false; d];
        for (i, module) in slices.iter().enumerate() {
            if module.len() != k {
                return Err(Error::InvalidPartition(format!(
                    "module {i} has {} factors, expected {k}",
                    module.len()
                )));
            }
            for (j, slice) in module.iter().enumerate() {
                if slice.is_empty() {
                    return Err(Error::InvalidPartition(format!("slice ({i}, {j}) is empty")));
                }
                for &f in slice {
                    if f >= d {
                        return Err(Error::InvalidPartition(format!(
                            "slice ({i}, {j}) references feature {f} >= d = {d}"
                        )));
                    }
                    covered[f] = true;
                }
            }
        }
        if let Some(missing) = covered.iter().position(|c| !c) {
            log::warn!("partition leaves feature {missing} (and possibly others) unused");
        }

        let mut unique: Vec<Vec<usize>> = Vec::new();
        let slot = slices
            .iter()
            .map(|module| {
                module
                    .iter()
                    .map(|s| match unique.iter().position(|u| u == s) {
                        Some(p) => p,
                        None => {
                            unique.push(s.clone());
                            unique.len() - 1
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            d,
            slices,
            unique,
            slot,
        })
    }

    /// Every factor of every module sees the full feature vector.
    pub fn full(d: usize, n: usize, k: usize) -> Result<Self> {
        let all: Vec<usize> = (0..d).collect();
        Self::new(d, vec![vec![all; k]; n])
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_modules(&self) -> usize {
        self.slices.len()
    }

    pub fn k(&self) -> usize {
        self.slices[0].len()
    }

    pub fn slices(&self) -> &[Vec<Vec<usize>>] {
        &self.slices
    }

    pub fn module_slices(&self, i: usize) -> &[Vec<usize>] {
        &self.slices[i]
    }

    /// True when every feature index appears in some slice.
    pub fn covers_all(&self) -> bool {
        let mut covered = vec![false; self.d];
        self.unique.iter().flatten().for_each(|&f| covered[f] = true);
        covered.into_iter().all(|c| c)
    }

    /// True when every slot sees `0..d` in order.
    pub fn is_full(&self) -> bool {
        self.unique.len() == 1 && self.unique[0].iter().copied().eq(0..self.d)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProductModule {
    pub factors: Vec<Vec<f64>>,
}

/// Trainable parameters plus the partition they act on.
#[derive(Clone, Debug, PartialEq)]
pub struct QnnModel {
    modules: Vec<ProductModule>,
    coefficients: Vec<f64>,
    output_bias: f64,
    partition: PartitionPlan,
    seed: Option<u64>,
}

impl QnnModel {
    pub fn new(
        partition: PartitionPlan,
        modules: Vec<ProductModule>,
        coefficients: Vec<f64>,
        output_bias: f64,
    ) -> Result<Self> {
        if modules.len() != partition.n_modules() {
            return Err(Error::ModelShape(format!(
                "{} modules for a partition of {}",
                modules.len(),
                partition.n_modules()
            )));
        }
        if coefficients.len() != modules.len() {
            return Err(Error::ModelShape(format!(
                "{} coefficients for {} modules",
                coefficients.len(),
                modules.len()
            )));
        }
        for (i, m) in modules.iter().enumerate() {
            if m.factors.len() != partition.k() {
                return Err(Error::ModelShape(format!(
                    "module {i} has {} factors, partition expects {}",
                    m.factors.len(),
                    partition.k()
                )));
            }
            for (j, w) in m.factors.iter().enumerate() {
                let want = partition.slices[i][j].len() + 1;
                if w.len() != want {
                    return Err(Error::DimensionMismatch {
                        expected: want,
                        found: w.len(),
                    });
                }
                if w.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { what: "factor weights" });
                }
            }
        }
        if coefficients.iter().any(|c| !c.is_finite()) || !output_bias.is_finite() {
            return Err(Error::NonFinite { what: "output layer" });
        }
        Ok(Self {
            modules,
            coefficients,
            output_bias,
            partition,
            seed: None,
        })
    }

    /// All parameters drawn from the standard normal distribution.
    pub fn random(partition: PartitionPlan, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let modules = partition
            .slices
            .iter()
            .map(|m| ProductModule {
                factors: m
                    .iter()
                    .map(|s| (0..=s.len()).map(|_| normal()).collect())
                    .collect(),
            })
            .collect();
        let coefficients = (0..partition.n_modules()).map(|_| normal()).collect();
        let output_bias = normal();
        Self {
            modules,
            coefficients,
            output_bias,
            partition,
            seed: Some(seed),
        }
    }

    pub fn d(&self) -> usize {
        self.partition.d
    }

    pub fn n_modules(&self) -> usize {
        self.modules.len()
    }

    pub fn k(&self) -> usize {
        self.partition.k()
    }

    pub fn modules(&self) -> &[ProductModule] {
        &self.modules
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn output_bias(&self) -> f64 {
        self.output_bias
    }

    pub fn partition(&self) -> &PartitionPlan {
        &self.partition
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub(crate) fn factor_mut(&mut self, i: usize, j: usize) -> &mut Vec<f64> {
        &mut self.modules[i].factors[j]
    }

    /// Total trainable parameters: factor weights (bias slots included),
    /// coefficients and the output bias.
    pub fn param_count(&self) -> usize {
        self.modules
            .iter()
            .flat_map(|m| m.factors.iter().map(Vec::len))
            .sum::<usize>()
            + self.coefficients.len()
            + 1
    }

    /// Parameters in canonical order: factor weights module by module, then
    /// coefficients, then the output bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for m in &self.modules {
            for w in &m.factors {
                out.extend_from_slice(w);
            }
        }
        out.extend_from_slice(&self.coefficients);
        out.push(self.output_bias);
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "parameter vector length");
        let mut it = flat.iter().copied();
        for m in &mut self.modules {
            for w in &mut m.factors {
                w.iter_mut().for_each(|v| *v = it.next().unwrap());
            }
        }
        self.coefficients
            .iter_mut()
            .for_each(|v| *v = it.next().unwrap());
        self.output_bias = it.next().unwrap();
    }

    /// Offset of factor `(i, j)` inside [`flat_params`](Self::flat_params).
    pub fn factor_offset(&self, i: usize, j: usize) -> usize {
        let mut off = 0;
        for (mi, m) in self.modules.iter().enumerate() {
            for (fj, w) in m.factors.iter().enumerate() {
                if (mi, fj) == (i, j) {
                    return off;
                }
                off += w.len();
            }
        }
        panic!("factor ({i}, {j}) out of range");
    }

    /// Gathers the feature slices of `x` once so repeated evaluation is cheap.
    pub fn prepare(&self, x: &[f64]) -> Result<PreparedInput> {
        if x.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                found: x.len(),
            });
        }
        let slices: Vec<Vec<f64>> = self
            .partition
            .unique
            .iter()
            .map(|s| s.iter().map(|&f| x[f]).collect())
            .collect();
        let aug_norm_sq = slices.iter().map(|s| norm_sq(s) + 1.0).collect();
        Ok(PreparedInput {
            slices,
            aug_norm_sq,
        })
    }

    /// Cached weight norms for a batch of evaluations; fails on degenerate factors.
    pub fn evaluator(&self) -> Result<Evaluator<'_>> {
        let w_norm_sq = self
            .modules
            .iter()
            .map(|m| {
                m.factors
                    .iter()
                    .map(|w| {
                        let n = norm_sq(w);
                        if n.sqrt() < NORM_FLOOR {
                            Err(Error::ZeroNorm { norm: n.sqrt() })
                        } else {
                            Ok(n)
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Evaluator {
            model: self,
            w_norm_sq,
        })
    }

    /// Rescaled logit `Σ c_i (2 P(0)_i − 1) + b`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(self.evaluator()?.forward(&self.prepare(x)?))
    }

    /// Raw network output `Σ c_i P(0)_i + b`.
    pub fn forward_unrescaled(&self, x: &[f64]) -> Result<f64> {
        let ev = self.evaluator()?;
        let input = self.prepare(x)?;
        let mut out = self.output_bias;
        for (i, c) in self.coefficients.iter().enumerate() {
            out += c * swap_test_probability(ev.module_product(&input, i))?;
        }
        Ok(out)
    }

    /// Per-module ancilla probabilities `P(0)_i`.
    pub fn module_probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        let ev = self.evaluator()?;
        let input = self.prepare(x)?;
        (0..self.n_modules())
            .map(|i| swap_test_probability(ev.module_product(&input, i)))
            .collect()
    }

    /// Gradient of `upstream · forward(x)` with respect to every parameter.
    pub fn backward(&self, x: &[f64], upstream: f64) -> Result<Gradients> {
        let ev = self.evaluator()?;
        let input = self.prepare(x)?;
        let mut g = Gradients::zeros_like(self);
        ev.accumulate_backward(&input, upstream, &mut g);
        Ok(g)
    }

    /// The model whose `forward` equals this model's `forward_unrescaled`
    /// (`c → c/2`, `b → b + Σc/2`).
    pub fn to_rescaled_form(&self) -> Self {
        let mut m = self.clone();
        let sum: f64 = self.coefficients.iter().sum();
        m.coefficients.iter_mut().for_each(|c| *c *= 0.5);
        m.output_bias = self.output_bias + 0.5 * sum;
        m
    }

    /// The model whose `forward_unrescaled` equals this model's `forward`
    /// (`c → 2c`, `b → b − Σc`).
    pub fn to_unrescaled_form(&self) -> Self {
        let mut m = self.clone();
        let sum: f64 = self.coefficients.iter().sum();
        m.coefficients.iter_mut().for_each(|c| *c *= 2.0);
        m.output_bias = self.output_bias - sum;
        m
    }

    /// Permutes modules (with their coefficients and slices).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let slices = order
            .iter()
            .map(|&i| self.partition.slices[i].clone())
            .collect();
        let mut m = Self::new(
            PartitionPlan::new(self.d(), slices)?,
            order.iter().map(|&i| self.modules[i].clone()).collect(),
            order.iter().map(|&i| self.coefficients[i]).collect(),
            self.output_bias,
        )?;
        m.seed = self.seed;
        Ok(m)
    }
}

/// ½ (1 + Π_j overlap²(x[slice_j], w_j)) for a single product module.
pub fn module_probability(m: &ProductModule, x: &[f64], slices: &[Vec<usize>]) -> Result<f64> {
    if slices.len() != m.factors.len() {
        return Err(Error::ModelShape(format!(
            "{} slices for {} factors",
            slices.len(),
            m.factors.len()
        )));
    }
    let mut prod = 1.0;
    for (w, s) in m.factors.iter().zip(slices) {
        let xs = s
            .iter()
            .map(|&f| {
                x.get(f).copied().ok_or(Error::DimensionMismatch {
                    expected: f + 1,
                    found: x.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        prod *= biased_overlap_sq(&xs, w)?;
    }
    swap_test_probability(prod)
}

/// Input slices gathered per distinct partition slice, with their augmented norms.
#[derive(Clone, Debug)]
pub struct PreparedInput {
    slices: Vec<Vec<f64>>,
    aug_norm_sq: Vec<f64>,
}

/// A model snapshot with cached factor norms.
pub struct Evaluator<'a> {
    model: &'a QnnModel,
    w_norm_sq: Vec<Vec<f64>>,
}

impl Evaluator<'_> {
    #[inline]
    fn overlap(&self, input: &PreparedInput, i: usize, j: usize) -> (f64, f64) {
        let u = self.model.partition.slot[i][j];
        let xs = &input.slices[u];
        let w = &self.model.modules[i].factors[j];
        let pre = dot(xs, &w[..xs.len()]) + w[xs.len()];
        (
            overlap_from_parts(pre, input.aug_norm_sq[u], self.w_norm_sq[i][j]),
            pre,
        )
    }

    /// Π_j overlap² for module `i`, i.e. `2 P(0)_i − 1`.
    pub fn module_product(&self, input: &PreparedInput, i: usize) -> f64 {
        (0..self.model.k())
            .map(|j| self.overlap(input, i, j).0)
            .product()
    }

    pub fn forward(&self, input: &PreparedInput) -> f64 {
        let mut out = self.model.output_bias;
        for (i, c) in self.model.coefficients.iter().enumerate() {
            out += c * self.module_product(input, i);
        }
        out
    }

    /// Adds the gradient of `upstream · forward(input)` into `g`; returns the forward value.
    pub fn accumulate_backward(&self, input: &PreparedInput, upstream: f64, g: &mut Gradients) -> f64 {
        let mut cache = Vec::new();
        let out = self.forward_cached(input, &mut cache);
        self.backward_cached(input, &cache, upstream, g);
        out
    }

    /// Forward pass that keeps every `(overlap², pre-activation)` pair for
    /// [`Evaluator::backward_cached`].
    pub fn forward_cached(&self, input: &PreparedInput, cache: &mut Vec<(f64, f64)>) -> f64 {
        let k = self.model.k();
        cache.clear();
        let mut out = self.model.output_bias;
        for (i, c) in self.model.coefficients.iter().enumerate() {
            let mut prod = 1.0;
            for j in 0..k {
                let qp = self.overlap(input, i, j);
                prod *= qp.0;
                cache.push(qp);
            }
            out += c * prod;
        }
        out
    }

    /// Adds the gradient of `upstream · forward(input)` into `g`, reusing a cache
    /// filled by [`Evaluator::forward_cached`] for the same input.
    pub fn backward_cached(&self, input: &PreparedInput, cache: &[(f64, f64)], upstream: f64, g: &mut Gradients) {
        let k = self.model.k();
        g.output_bias += upstream;
        for (i, &c) in self.model.coefficients.iter().enumerate() {
            let qp = &cache[i * k..(i + 1) * k];
            g.coefficients[i] += upstream * qp.iter().map(|v| v.0).product::<f64>();

            for j in 0..k {
                // ∂q/∂w = 2 pre / (A W) · (a − (pre / W) w),  a = (x_s, 1)
                let pre = qp[j].1;
                let u = self.model.partition.slot[i][j];
                let xs = &input.slices[u];
                let a_norm = input.aug_norm_sq[u];
                let w_norm = self.w_norm_sq[i][j];
                let w = &self.model.modules[i].factors[j];
                // Product of the other factors, without dividing by q_j (which may be 0).
                let excl: f64 = qp
                    .iter()
                    .enumerate()
                    .filter(|&(t, _)| t != j)
                    .map(|(_, v)| v.0)
                    .product();
                let scale = upstream * c * excl * 2.0 * pre / (a_norm * w_norm);
                let ratio = pre / w_norm;
                let gw = &mut g.factors[i][j];
                let m = xs.len();
                for t in 0..m {
                    gw[t] += scale * (xs[t] - ratio * w[t]);
                }
                gw[m] += scale * (1.0 - ratio * w[m]);
            }
        }
    }
}

/// Gradient buffer shaped like a [`QnnModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub factors: Vec<Vec<Vec<f64>>>,
    pub coefficients: Vec<f64>,
    pub output_bias: f64,
}

impl Gradients {
    pub fn zeros_like(model: &QnnModel) -> Self {
        Self {
            factors: model
                .modules
                .iter()
                .map(|m| m.factors.iter().map(|w| vec![0.0; w.len()]).collect())
                .collect(),
            coefficients: vec![0.0; model.n_modules()],
            output_bias: 0.0,
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.factors.iter_mut().zip(&other.factors) {
            for (wa, wb) in a.iter_mut().zip(b) {
                wa.iter_mut().zip(wb).for_each(|(x, y)| *x += y);
            }
        }
        self.coefficients
            .iter_mut()
            .zip(&other.coefficients)
            .for_each(|(x, y)| *x += y);
        self.output_bias += other.output_bias;
    }

    /// Same ordering as [`QnnModel::flat_params`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.factors.iter().flatten().flatten().copied().collect();
        out.extend_from_slice(&self.coefficients);
        out.push(self.output_bias);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// JSON form of a model. Field order is fixed; reals carry 17 significant digits.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    n: usize,
    k: usize,
    d: usize,
    partition: PartitionPlan,
    modules: Vec<Vec<Vec<Real>>>,
    coefficients: Vec<Real>,
    output_bias: Real,
    seed: Option<u64>,
    format_version: u32,
}

#[derive(Clone, Copy, Debug)]
struct Real(f64);

impl Serialize for Real {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::Error as _;
        if !self.0.is_finite() {
            return Err(S::Error::custom("non-finite parameter"));
        }
        let raw = serde_json::value::RawValue::from_string(format!("{:.16e}", self.0))
            .map_err(S::Error::custom)?;
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        f64::deserialize(d).map(Real)
    }
}

impl QnnModel {
    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            n: self.n_modules(),
            k: self.k(),
            d: self.d(),
            partition: self.partition.clone(),
            modules: self
                .modules
                .iter()
                .map(|m| {
                    m.factors
                        .iter()
                        .map(|w| w.iter().map(|&v| Real(v)).collect())
                        .collect()
                })
                .collect(),
            coefficients: self.coefficients.iter().map(|&v| Real(v)).collect(),
            output_bias: Real(self.output_bias),
            seed: self.seed,
            format_version: MODEL_FORMAT_VERSION,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelShape(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        let modules = file
            .modules
            .into_iter()
            .map(|m| ProductModule {
                factors: m
                    .into_iter()
                    .map(|w| w.into_iter().map(|r| r.0).collect())
                    .collect(),
            })
            .collect();
        let mut model = Self::new(
            file.partition,
            modules,
            file.coefficients.into_iter().map(|r| r.0).collect(),
            file.output_bias.0,
        )?;
        if (model.n_modules(), model.k(), model.d()) != (file.n, file.k, file.d) {
            return Err(Error::ModelShape("header (n, k, d) disagrees with body".into()));
        }
        model.seed = file.seed;
        Ok(model)
    }
}
