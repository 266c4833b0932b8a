//! Amplitude encoding and the closed-form SWAP-test probability.
//!
//! All amplitudes are real. A classical vector `v` is encoded as `v / ‖v‖`,
//! zero-padded to the next power of two. Inputs carry a trailing dummy feature
//! equal to 1 so that the last weight entry acts as a bias inside the overlap:
//!
//! ```text
//! overlap²(x, w) = (x · w[..d] + w[d])² / (‖x′‖² ‖w‖²),   x′ = (x, 1)
//! P(0)           = ½ (1 + overlap²)
//! ```

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Norms below this are rejected rather than regularized.
pub const NORM_FLOOR: f64 = 1e-12;

/// Probabilities this far outside `[0, 1]` are clamped; anything further is an error.
pub const CLAMP_SLACK: f64 = 1e-9;

/// A finite, non-empty real feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("feature vector must have d >= 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "feature vector" });
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for FeatureVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

/// A weight vector of length `d + 1`; the last entry is the bias slot.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument(
                "weight vector needs at least one weight and the bias slot".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "weight vector" });
        }
        Ok(Self(values))
    }

    pub fn bias(&self) -> f64 {
        self.0[self.0.len() - 1]
    }
}

impl Deref for WeightVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A normalized, zero-padded real amplitude vector over `qubits` qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudeState {
    amplitudes: Vec<f64>,
    qubits: usize,
}

impl AmplitudeState {
    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    /// Inner product with another state of the same width.
    pub fn inner(&self, other: &AmplitudeState) -> f64 {
        dot(&self.amplitudes, &other.amplitudes)
    }

    /// Pads with zeros up to `qubits` qubits.
    pub(crate) fn widened(&self, qubits: usize) -> Vec<f64> {
        let mut out = self.amplitudes.clone();
        out.resize(1 << qubits, 0.0);
        out
    }
}

/// Number of qubits needed to amplitude-encode a vector of length `dim`: ⌈log₂ dim⌉.
pub fn qubits_for(dim: usize) -> usize {
    assert!(dim >= 1, "cannot encode an empty vector");
    dim.next_power_of_two().trailing_zeros() as usize
}

/// Appends the dummy feature 1.
pub fn augment(x: &FeatureVector) -> FeatureVector {
    let mut v = Vec::with_capacity(x.len() + 1);
    v.extend_from_slice(x);
    v.push(1.0);
    FeatureVector(v)
}

pub fn amplitude_encode(v: &[f64]) -> Result<AmplitudeState> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("cannot encode an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "encoded vector" });
    }
    let norm = norm_sq(v).sqrt();
    if norm < NORM_FLOOR {
        return Err(Error::ZeroNorm { norm });
    }
    let qubits = qubits_for(v.len());
    let mut amplitudes = vec![0.0; 1 << qubits];
    for (a, x) in amplitudes.iter_mut().zip(v) {
        *a = x / norm;
    }
    Ok(AmplitudeState { amplitudes, qubits })
}

/// Squared overlap between the augmented input `(x, 1)` and the weight vector `w`.
///
/// `w` must have length `x.len() + 1`; its last entry is the bias slot.
pub fn biased_overlap_sq(x: &[f64], w: &[f64]) -> Result<f64> {
    if w.len() != x.len() + 1 {
        return Err(Error::DimensionMismatch {
            expected: x.len() + 1,
            found: w.len(),
        });
    }
    let w_norm_sq = norm_sq(w);
    if w_norm_sq.sqrt() < NORM_FLOOR {
        return Err(Error::ZeroNorm {
            norm: w_norm_sq.sqrt(),
        });
    }
    let pre = dot(x, &w[..x.len()]) + w[x.len()];
    let x_norm_sq = norm_sq(x) + 1.0;
    Ok(overlap_from_parts(pre, x_norm_sq, w_norm_sq))
}

/// `pre² / (‖x′‖² ‖w‖²)`, clamped to 1 against rounding.
#[inline]
pub(crate) fn overlap_from_parts(pre: f64, x_norm_sq: f64, w_norm_sq: f64) -> f64 {
    (pre * pre / (x_norm_sq * w_norm_sq)).min(1.0)
}

/// Ancilla-zero probability of the SWAP test: ½ (1 + overlap²).
pub fn swap_test_probability(overlap_sq: f64) -> Result<f64> {
    Ok(0.5 * (1.0 + clamp_probability(overlap_sq)?))
}

/// Clamps into `[0, 1]` when within [`CLAMP_SLACK`]; larger violations are errors.
pub fn clamp_probability(p: f64) -> Result<f64> {
    if !p.is_finite() || p < -CLAMP_SLACK || p > 1.0 + CLAMP_SLACK {
        return Err(Error::ProbabilityOutOfRange { value: p });
    }
    Ok(p.clamp(0.0, 1.0))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}
