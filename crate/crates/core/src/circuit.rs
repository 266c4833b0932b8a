//! Exact statevector simulation of the SWAP test and its product-module
//! generalization.
//!
//! Qubit ordering: the ancilla is bit 0 (least significant). Registers follow in
//! layout order `input₁, weight₁, input₂, weight₂, …`, each `delta` bits wide,
//! with the register value stored little-endian. Gates are applied as in-place
//! index operations on the real amplitude array; no gate matrices are formed.

use std::f64::consts::FRAC_1_SQRT_2;

use rand_distr::{Binomial, Distribution};

use crate::encoding::{amplitude_encode, augment, qubits_for, FeatureVector};
use crate::{seed, Error, Result};

/// Largest register the simulator will allocate.
pub const MAX_QUBITS: usize = 24;

/// Shot count used for the noiseless hardware comparison.
pub const DEFAULT_SHOTS: u64 = 8192;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegisterLayout {
    /// Qubits per data register.
    pub delta: usize,
    /// Number of (input, weight) register pairs.
    pub pairs: usize,
}

impl RegisterLayout {
    pub fn new(delta: usize, pairs: usize) -> Result<Self> {
        if pairs == 0 {
            return Err(Error::InvalidArgument("a product module needs k >= 1".into()));
        }
        let layout = Self { delta, pairs };
        if layout.total_qubits() > MAX_QUBITS {
            return Err(Error::SimulatorLimit {
                qubits: layout.total_qubits(),
                max: MAX_QUBITS,
            });
        }
        Ok(layout)
    }

    pub const ANCILLA: usize = 0;

    pub fn total_qubits(&self) -> usize {
        1 + 2 * self.pairs * self.delta
    }

    /// First qubit of the input register of pair `j`.
    pub fn input_offset(&self, j: usize) -> usize {
        1 + 2 * j * self.delta
    }

    /// First qubit of the weight register of pair `j`.
    pub fn weight_offset(&self, j: usize) -> usize {
        1 + (2 * j + 1) * self.delta
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<f64>,
    layout: RegisterLayout,
}

impl StateVector {
    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn layout(&self) -> RegisterLayout {
        self.layout
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// Builds a state from raw amplitudes, e.g. for gate tests on random states.
    pub fn from_amplitudes(amplitudes: Vec<f64>, layout: RegisterLayout) -> Result<Self> {
        let expected = 1usize << layout.total_qubits();
        if amplitudes.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: amplitudes.len(),
            });
        }
        Ok(Self { amplitudes, layout })
    }
}

/// Prepares `|0⟩_anc ⊗ |x′⟩ ⊗ |w₁⟩ ⊗ … ⊗ |x′⟩ ⊗ |w_k⟩` with the same input in every pair.
pub fn build_initial_state(x: &FeatureVector, weights: &[Vec<f64>]) -> Result<StateVector> {
    let pairs: Vec<(&[f64], &[f64])> = weights.iter().map(|w| (&x[..], &w[..])).collect();
    build_initial_state_sliced(&pairs)
}

/// Like [`build_initial_state`], but every pair carries its own (raw, un-augmented)
/// input slice. All registers share `delta = max ⌈log₂(len)⌉` over the pairs.
pub fn build_initial_state_sliced(pairs: &[(&[f64], &[f64])]) -> Result<StateVector> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("a product module needs k >= 1".into()));
    }
    let mut registers = Vec::with_capacity(2 * pairs.len());
    for (x, w) in pairs {
        if w.len() != x.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: x.len() + 1,
                found: w.len(),
            });
        }
        let x = augment(&FeatureVector::new(x.to_vec())?);
        registers.push(amplitude_encode(&x)?);
        registers.push(amplitude_encode(w)?);
    }
    let delta = registers.iter().map(|r| r.qubits()).max().unwrap_or(0);
    let layout = RegisterLayout::new(delta, pairs.len())?;
    debug_assert_eq!(delta, qubits_for(pairs.iter().map(|p| p.1.len()).max().unwrap()));

    // Ancilla in |0⟩ occupies bit 0, then each register is prepended as higher bits.
    let mut amps = vec![1.0, 0.0];
    for reg in &registers {
        let reg = reg.widened(delta);
        let low = amps.len();
        let mut next = vec![0.0; low * reg.len()];
        for (v, &r) in reg.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            let block = &mut next[v * low..(v + 1) * low];
            for (dst, &a) in block.iter_mut().zip(&amps) {
                *dst = r * a;
            }
        }
        amps = next;
    }
    Ok(StateVector {
        amplitudes: amps,
        layout,
    })
}

/// Hadamard on the ancilla: mixes each amplitude pair `(…0, …1)`.
pub fn apply_hadamard_ancilla(s: &mut StateVector) {
    for pair in s.amplitudes.chunks_exact_mut(2) {
        let (a0, a1) = (pair[0], pair[1]);
        pair[0] = FRAC_1_SQRT_2 * (a0 + a1);
        pair[1] = FRAC_1_SQRT_2 * (a0 - a1);
    }
}

/// Ancilla-controlled swap of the input and weight registers of pair `pair_index`,
/// realized as `delta` qubit-wise Fredkin gates.
pub fn apply_controlled_register_swap(s: &mut StateVector, pair_index: usize) -> Result<()> {
    let layout = s.layout;
    if pair_index >= layout.pairs {
        return Err(Error::InvalidArgument(format!(
            "pair index {pair_index} out of range for k = {}",
            layout.pairs
        )));
    }
    for q in 0..layout.delta {
        fredkin(
            &mut s.amplitudes,
            RegisterLayout::ANCILLA,
            layout.input_offset(pair_index) + q,
            layout.weight_offset(pair_index) + q,
        );
    }
    Ok(())
}

/// Controlled swap of qubits `a` and `b` with control `control`.
fn fredkin(amps: &mut [f64], control: usize, a: usize, b: usize) {
    let (cm, am, bm) = (1usize << control, 1usize << a, 1usize << b);
    for idx in 0..amps.len() {
        // Visit each swapped pair once: control set, a set, b clear.
        if idx & cm != 0 && idx & am != 0 && idx & bm == 0 {
            amps.swap(idx, idx ^ am ^ bm);
        }
    }
}

/// Exact marginal probability of measuring the ancilla in |0⟩.
pub fn ancilla_zero_probability(s: &StateVector) -> f64 {
    s.amplitudes.iter().step_by(2).map(|a| a * a).sum()
}

/// Full product-module circuit: prepare, H, k controlled swaps, H, measure.
pub fn run_product_module(x: &FeatureVector, weights: &[Vec<f64>]) -> Result<f64> {
    let mut s = build_initial_state(x, weights)?;
    run_on_state(&mut s)
}

/// Product-module circuit with per-factor input slices.
pub fn run_product_module_sliced(pairs: &[(&[f64], &[f64])]) -> Result<f64> {
    let mut s = build_initial_state_sliced(pairs)?;
    run_on_state(&mut s)
}

fn run_on_state(s: &mut StateVector) -> Result<f64> {
    apply_hadamard_ancilla(s);
    for j in 0..s.layout.pairs {
        apply_controlled_register_swap(s, j)?;
    }
    apply_hadamard_ancilla(s);
    Ok(ancilla_zero_probability(s))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub struct ShotResult {
    pub shots: u64,
    pub zeros: u64,
}

impl ShotResult {
    pub fn estimate(&self) -> f64 {
        self.zeros as f64 / self.shots as f64
    }
}

/// Draws `zeros ~ Binomial(shots, p)` from an RNG seeded with `seed`.
pub fn sample_shots(p: f64, shots: u64, seed: u64) -> Result<ShotResult> {
    if shots == 0 {
        return Err(Error::InvalidArgument("shots must be >= 1".into()));
    }
    let p = crate::encoding::clamp_probability(p)?;
    let dist = Binomial::new(shots, p).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let zeros = dist.sample(&mut seed::rng(seed));
    Ok(ShotResult { shots, zeros })
}
