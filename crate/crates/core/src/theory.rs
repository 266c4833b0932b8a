//! Numerical checks of the parity impossibility argument for single-factor
//! networks: the representative set {±1}^d, the quadratic-sum identity, the
//! vanishing separation condition, the 2-D condition and a brute-force
//! separability oracle.

use rayon::prelude::*;
use serde::Serialize;

use crate::encoding::{dot, norm_sq};
use crate::model::QnnModel;
use crate::{Error, Result};

pub const MAX_REPRESENTATIVE_DIM: usize = 16;

/// The 2^d vertices of the hypercube, split by parity of the number of
/// negative entries (even → label +1).
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentativeSet {
    pub d: usize,
    pub even_vectors: Vec<Vec<f64>>,
    pub odd_vectors: Vec<Vec<f64>>,
}

impl RepresentativeSet {
    /// `‖x′‖² = d + 1`, shared by every vertex.
    pub fn augmented_norm_sq(&self) -> f64 {
        self.d as f64 + 1.0
    }
}

/// Vertex `bits` has a −1 in coordinate `i` iff bit `i` is set.
pub fn representative_set(d: usize) -> Result<RepresentativeSet> {
    if !(2..=MAX_REPRESENTATIVE_DIM).contains(&d) {
        return Err(Error::Dimension {
            d,
            reason: "representative set needs 2 <= d <= 16",
        });
    }
    let mut even = Vec::with_capacity(1 << (d - 1));
    let mut odd = Vec::with_capacity(1 << (d - 1));
    for bits in 0u32..(1 << d) {
        let v: Vec<f64> = (0..d)
            .map(|i| if bits >> i & 1 == 1 { -1.0 } else { 1.0 })
            .collect();
        if bits.count_ones() % 2 == 0 {
            even.push(v);
        } else {
            odd.push(v);
        }
    }
    Ok(RepresentativeSet {
        d,
        even_vectors: even,
        odd_vectors: odd,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IdentityResidual {
    pub even: f64,
    pub odd: f64,
}

impl IdentityResidual {
    pub fn max(&self) -> f64 {
        self.even.max(self.odd)
    }
}

/// `|Σ_i (x_i · w)² − 2^{d−1}‖w‖²|` per parity class. Holds (residual 0) only for d ≥ 3.
pub fn check_identity(w: &[f64]) -> Result<IdentityResidual> {
    if w.len() < 3 {
        return Err(Error::Dimension {
            d: w.len(),
            reason: "the quadratic-sum identity needs d >= 3",
        });
    }
    identity_residual(&representative_set(w.len())?, w)
}

/// Same as [`check_identity`] without the d ≥ 3 guard (used to show the d = 2 failure).
pub fn identity_residual(set: &RepresentativeSet, w: &[f64]) -> Result<IdentityResidual> {
    if w.len() != set.d {
        return Err(Error::DimensionMismatch {
            expected: set.d,
            found: w.len(),
        });
    }
    let target = (1u64 << (set.d - 1)) as f64 * norm_sq(w);
    let sum = |vs: &[Vec<f64>]| vs.iter().map(|x| dot(x, w).powi(2)).sum::<f64>();
    Ok(IdentityResidual {
        even: (sum(&set.even_vectors) - target).abs(),
        odd: (sum(&set.odd_vectors) - target).abs(),
    })
}

fn require_single_factor(model: &QnnModel) -> Result<()> {
    if model.k() != 1 {
        return Err(Error::ModelShape(format!("expected k = 1, got k = {}", model.k())));
    }
    if !model.partition().is_full() {
        return Err(Error::ModelShape("expected a full-feature partition".into()));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConditionValue {
    /// `(‖x′‖²/2) Σ_i Σ_j c_j [(x⁺_i·w_j + b_j)² − (x⁻_i·w_j + b_j)²] / (‖x′‖² ‖w′_j‖²)`,
    /// summed directly over the representative set.
    pub value: f64,
    /// Magnitude bound used to scale tolerances: `‖x′‖² 2^{d−1} Σ|c_j|`.
    pub scale: f64,
}

/// Necessary-condition left-hand side for separating the parity classes with a
/// single-factor network. The closed form is `Σ_j c_j b_j/‖w′_j‖² · w_j · Σ_i(x⁺_i − x⁻_i)`,
/// which is identically zero for d ≥ 3; this evaluates it the long way.
pub fn condition_lhs(model: &QnnModel) -> Result<ConditionValue> {
    require_single_factor(model)?;
    let d = model.d();
    if d < 3 {
        return Err(Error::Dimension {
            d,
            reason: "use condition_2d for d = 2",
        });
    }
    let set = representative_set(d)?;
    let a = set.augmented_norm_sq();
    let mut total = 0.0;
    for (m, &c) in model.modules().iter().zip(model.coefficients()) {
        let w = &m.factors[0];
        let w_norm = norm_sq(w);
        if w_norm.sqrt() < crate::encoding::NORM_FLOOR {
            return Err(Error::ZeroNorm { norm: w_norm.sqrt() });
        }
        let term = |x: &Vec<f64>| (dot(x, &w[..d]) + w[d]).powi(2);
        let diff: f64 = set
            .even_vectors
            .iter()
            .zip(&set.odd_vectors)
            .map(|(p, n)| term(p) - term(n))
            .sum();
        total += c * diff / (a * w_norm);
    }
    let abs_c: f64 = model.coefficients().iter().map(|c| c.abs()).sum();
    Ok(ConditionValue {
        value: 0.5 * a * total,
        scale: a * (1u64 << (d - 1)) as f64 * abs_c,
    })
}

/// `Σ_j c_j w_{j,1} w_{j,2} / ‖w′_j‖²`; a positive value is necessary for learning 2-D parity.
pub fn condition_2d(model: &QnnModel) -> Result<f64> {
    require_single_factor(model)?;
    if model.d() != 2 {
        return Err(Error::ModelShape(format!("expected d = 2, got d = {}", model.d())));
    }
    let mut total = 0.0;
    for (m, &c) in model.modules().iter().zip(model.coefficients()) {
        let w = &m.factors[0];
        total += c * w[0] * w[1] / norm_sq(w);
    }
    Ok(total)
}

/// Affine map `x → scale · R x` applied to the representative set before evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct SetTransform {
    pub rotation: Vec<Vec<f64>>,
    pub scale: f64,
}

impl SetTransform {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rotation.iter().map(|row| self.scale * dot(row, x)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Separability {
    pub separable: bool,
    /// `max(min f⁺ − max f⁻, min f⁻ − max f⁺)`; positive iff some threshold separates.
    pub margin: f64,
}

/// Evaluates the model on every vertex and checks whether a threshold splits
/// the parity classes (in either orientation).
pub fn separability_oracle(model: &QnnModel, transform: Option<&SetTransform>) -> Result<Separability> {
    let d = model.d();
    let set = representative_set(d)?;
    if let Some(t) = transform {
        if t.rotation.len() != d || t.rotation.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: t.rotation.len(),
            });
        }
    }
    let ev = model.evaluator()?;
    let eval = |vs: &[Vec<f64>]| -> Result<(f64, f64)> {
        let vals = vs
            .par_iter()
            .map(|x| {
                let x = transform.map_or_else(|| x.clone(), |t| t.apply(x));
                Ok(ev.forward(&model.prepare(&x)?))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))))
    };
    let (min_p, max_p) = eval(&set.even_vectors)?;
    let (min_n, max_n) = eval(&set.odd_vectors)?;
    let margin = (min_p - max_n).max(min_n - max_p);
    Ok(Separability {
        separable: margin > 0.0,
        margin,
    })
}
