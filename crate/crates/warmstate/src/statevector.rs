//! Dense statevector simulation of Pauli-rotation circuits.
//!
//! Circuits are products of gates V_j · exp(−i f_j(θ_j, x) P_j) applied to
//! |0…0⟩, with P_j a Pauli string (so P_j² = 1) and f_j(θ_j, x) = g_j(x)·θ_j
//! an optional deformation encoding of the angle. Applying a string is a bit
//! flip plus a sign per amplitude, never a dense matrix, so one gate costs
//! O(2^n). Gradients come from the two-point shift rule for involutory
//! generators: with a = g·θ the loss obeys L(θ ± π/(4g)) = L|_{a ± π/4}, and
//! dL/dθ = g·[L(θ + π/(4g)) − L(θ − π/(4g))].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pauli::{PauliString, PauliSum, DENSE_QUBIT_LIMIT};

/// Tolerance on the imaginary residue of a Hermitian expectation value.
const IMAG_TOL: f64 = 1e-10;

/// Normalized n-qubit state, amplitudes indexed by basis integer
/// (bit q of the index is qubit q).
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// The computational basis state |0…0⟩.
    pub fn zero_state(n: usize) -> Result<Self> {
        if n == 0 || n > DENSE_QUBIT_LIMIT {
            return Err(Error::QubitCount { n, min: 1, max: DENSE_QUBIT_LIMIT });
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(StateVector { n, amps })
    }

    /// Wrap explicit amplitudes; must have length 2^n for some 1 ≤ n ≤ 14
    /// and unit norm to 1e-8.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let dim = amps.len();
        let n = dim.trailing_zeros() as usize;
        if dim == 0 || dim != 1 << n || n == 0 || n > DENSE_QUBIT_LIMIT {
            return Err(Error::dims(format!("amplitude vector of length {dim} is not 2^n")));
        }
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-8 {
            return Err(Error::invalid(format!("state norm² = {norm}, expected 1")));
        }
        Ok(StateVector { n, amps })
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    /// Apply exp(−i·angle·P) in place.
    pub fn apply_rotation(&mut self, p: &PauliString, angle: f64) -> Result<()> {
        if p.num_qubits() != self.n {
            return Err(Error::dims(format!(
                "rotation on {} qubits applied to {}-qubit state",
                p.num_qubits(),
                self.n
            )));
        }
        let (s, c) = angle.sin_cos();
        let x = p.x_mask();
        if x == 0 {
            // Diagonal string: each amplitude picks up e^{∓i·angle}.
            let plus = Complex64::new(c, -s);
            let minus = Complex64::new(c, s);
            for (b, a) in self.amps.iter_mut().enumerate() {
                *a *= if p.z_sign(b as u64) > 0.0 { plus } else { minus };
            }
        } else {
            // (Pψ)[b] = i^{#Y}·(−1)^{|(b⊕x) ∧ z|}·ψ[b⊕x]; process index pairs.
            let f = Complex64::new(0.0, -s) * p.y_phase();
            for b in 0..self.amps.len() as u64 {
                let d = b ^ x;
                if b < d {
                    let ab = self.amps[b as usize];
                    let ad = self.amps[d as usize];
                    self.amps[b as usize] = c * ab + f * p.z_sign(d) * ad;
                    self.amps[d as usize] = c * ad + f * p.z_sign(b) * ab;
                }
            }
        }
        Ok(())
    }

    pub fn apply_fixed(&mut self, gate: &FixedGate) -> Result<()> {
        match *gate {
            FixedGate::Hadamard { qubit } => {
                if qubit >= self.n {
                    return Err(Error::invalid(format!("qubit {qubit} out of range")));
                }
                let mask = 1u64 << qubit;
                let norm = std::f64::consts::FRAC_1_SQRT_2;
                for b in 0..self.amps.len() as u64 {
                    if b & mask == 0 {
                        let a0 = self.amps[b as usize];
                        let a1 = self.amps[(b | mask) as usize];
                        self.amps[b as usize] = (a0 + a1) * norm;
                        self.amps[(b | mask) as usize] = (a0 - a1) * norm;
                    }
                }
            }
            FixedGate::CNot { control, target } => {
                if control >= self.n || target >= self.n || control == target {
                    return Err(Error::invalid(format!(
                        "bad CNOT qubits ({control}, {target}) on n={}",
                        self.n
                    )));
                }
                let c_mask = 1u64 << control;
                let t_mask = 1u64 << target;
                for b in 0..self.amps.len() as u64 {
                    if b & c_mask != 0 && b & t_mask == 0 {
                        self.amps.swap(b as usize, (b | t_mask) as usize);
                    }
                }
            }
        }
        Ok(())
    }

    /// ⟨ψ|P|ψ⟩ before the Hermiticity assertion (internal; callers take .re).
    pub(crate) fn expectation_string(&self, p: &PauliString) -> Complex64 {
        let x = p.x_mask();
        if x == 0 {
            let mut acc = 0.0;
            for (b, a) in self.amps.iter().enumerate() {
                acc += a.norm_sqr() * p.z_sign(b as u64);
            }
            Complex64::new(acc, 0.0)
        } else {
            let iy = p.y_phase();
            let mut acc = Complex64::new(0.0, 0.0);
            for b in 0..self.amps.len() as u64 {
                let src = b ^ x;
                acc += self.amps[b as usize].conj()
                    * p.z_sign(src)
                    * self.amps[src as usize];
            }
            acc * iy
        }
    }
}

/// ⟨ψ|H|ψ⟩ for a Pauli sum. Errors on qubit mismatch or if the accumulated
/// imaginary residue exceeds tolerance (which would indicate a broken state).
pub fn expectation(state: &StateVector, h: &PauliSum) -> Result<f64> {
    if h.num_qubits() != state.num_qubits() {
        return Err(Error::dims(format!(
            "Hamiltonian on {} qubits, state on {}",
            h.num_qubits(),
            state.num_qubits()
        )));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for term in h.terms() {
        acc += term.coeff * state.expectation_string(&term.string);
    }
    if acc.im.abs() > IMAG_TOL {
        return Err(Error::NonFinite(format!(
            "expectation has imaginary residue {}",
            acc.im
        )));
    }
    Ok(acc.re)
}

/// Squared overlap |⟨a|b⟩|².
pub fn fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    if a.num_qubits() != b.num_qubits() {
        return Err(Error::dims(format!(
            "fidelity of {}- and {}-qubit states",
            a.num_qubits(),
            b.num_qubits()
        )));
    }
    let mut ov = Complex64::new(0.0, 0.0);
    for (x, y) in a.amps.iter().zip(&b.amps) {
        ov += x.conj() * y;
    }
    Ok(ov.norm_sqr())
}

/// Squared overlap with a raw amplitude vector (e.g. a dense ground vector).
pub fn fidelity_with(state: &StateVector, reference: &[Complex64]) -> Result<f64> {
    if reference.len() != state.amps.len() {
        return Err(Error::dims(format!(
            "reference of length {} against state of dimension {}",
            reference.len(),
            state.amps.len()
        )));
    }
    let mut ov = Complex64::new(0.0, 0.0);
    for (r, a) in reference.iter().zip(&state.amps) {
        ov += r.conj() * a;
    }
    Ok(ov.norm_sqr())
}

/// How a rotation angle depends on the deformation value: f(θ, x) = g(x)·θ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncodingFn {
    /// g(x) = 1: an ordinary, deformation-blind rotation.
    ConstantOne,
    /// g(x) = a·x.
    Linear { a: f64 },
    /// g(x) = a·x + b.
    Affine { a: f64, b: f64 },
}

impl EncodingFn {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            EncodingFn::ConstantOne => 1.0,
            EncodingFn::Linear { a } => a * x,
            EncodingFn::Affine { a, b } => a * x + b,
        }
    }

    /// dg/dx.
    pub fn deriv(&self) -> f64 {
        match *self {
            EncodingFn::ConstantOne => 0.0,
            EncodingFn::Linear { a } | EncodingFn::Affine { a, .. } => a,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, EncodingFn::ConstantOne)
    }
}

/// Parameter-free circuit elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "gate", rename_all = "snake_case")]
pub enum FixedGate {
    Hadamard { qubit: usize },
    CNot { control: usize, target: usize },
}

/// One circuit element: a parameterized Pauli rotation or a fixed unitary.
#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    Rotation { generator: PauliString, encoding: EncodingFn },
    Fixed(FixedGate),
}

/// Gate sequence applied left to right to |0…0⟩. Rotations are numbered in
/// application order; rotation j consumes θ\[j\].
#[derive(Debug, Clone, PartialEq)]
pub struct Ansatz {
    n: usize,
    gates: Vec<Gate>,
    num_params: usize,
}

impl Ansatz {
    pub fn new(n: usize, gates: Vec<Gate>) -> Result<Self> {
        if n == 0 || n > DENSE_QUBIT_LIMIT {
            return Err(Error::QubitCount { n, min: 1, max: DENSE_QUBIT_LIMIT });
        }
        let mut num_params = 0;
        for g in &gates {
            match g {
                Gate::Rotation { generator, .. } => {
                    if generator.num_qubits() != n {
                        return Err(Error::dims(format!(
                            "generator on {} qubits in an {n}-qubit circuit",
                            generator.num_qubits()
                        )));
                    }
                    num_params += 1;
                }
                Gate::Fixed(FixedGate::Hadamard { qubit }) => {
                    if *qubit >= n {
                        return Err(Error::invalid(format!("qubit {qubit} out of range")));
                    }
                }
                Gate::Fixed(FixedGate::CNot { control, target }) => {
                    if *control >= n || *target >= n || control == target {
                        return Err(Error::invalid(format!(
                            "bad CNOT qubits ({control}, {target})"
                        )));
                    }
                }
            }
        }
        Ok(Ansatz { n, gates, num_params })
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    /// Number of trainable parameters (rotation count M).
    pub fn num_params(&self) -> usize {
        self.num_params
    }

    /// Rotations in application order as (param index, generator, encoding).
    pub fn rotations(&self) -> impl Iterator<Item = (usize, &PauliString, &EncodingFn)> {
        self.gates
            .iter()
            .filter_map(|g| match g {
                Gate::Rotation { generator, encoding } => Some((generator, encoding)),
                Gate::Fixed(_) => None,
            })
            .enumerate()
            .map(|(j, (p, e))| (j, p, e))
    }

    pub fn is_rotation_only(&self) -> bool {
        self.gates.iter().all(|g| matches!(g, Gate::Rotation { .. }))
    }

    pub fn has_constant_encodings(&self) -> bool {
        self.gates.iter().all(|g| match g {
            Gate::Rotation { encoding, .. } => encoding.is_constant(),
            Gate::Fixed(_) => true,
        })
    }
}

/// Run the circuit on |0…0⟩ at parameters θ and deformation value x.
pub fn prepare(ansatz: &Ansatz, theta: &[f64], x: f64) -> Result<StateVector> {
    if theta.len() != ansatz.num_params() {
        return Err(Error::dims(format!(
            "{} parameters supplied to a circuit with {}",
            theta.len(),
            ansatz.num_params()
        )));
    }
    let mut state = StateVector::zero_state(ansatz.num_qubits())?;
    let mut k = 0;
    for gate in ansatz.gates() {
        match gate {
            Gate::Rotation { generator, encoding } => {
                state.apply_rotation(generator, encoding.eval(x) * theta[k])?;
                k += 1;
            }
            Gate::Fixed(f) => state.apply_fixed(f)?,
        }
    }
    Ok(state)
}

/// Exact gradient of a loss in θ by the two-point shift rule.
///
/// Component j uses shifts ±π/(4·g_j(x)) scaled by g_j(x); a vanishing
/// encoding value makes the gate inert at this x and the component is 0.
/// `loss` may be stateful (e.g. a shot-noise evaluator); each shifted point
/// is one fresh evaluation.
pub fn parameter_shift_grad<F>(
    ansatz: &Ansatz,
    mut loss: F,
    theta: &[f64],
    x: f64,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if theta.len() != ansatz.num_params() {
        return Err(Error::dims(format!(
            "{} parameters supplied to a circuit with {}",
            theta.len(),
            ansatz.num_params()
        )));
    }
    let mut grad = vec![0.0; theta.len()];
    let mut shifted = theta.to_vec();
    for (j, _, encoding) in ansatz.rotations() {
        let g = encoding.eval(x);
        if g == 0.0 {
            continue;
        }
        let shift = std::f64::consts::FRAC_PI_4 / g;
        shifted[j] = theta[j] + shift;
        let up = loss(&shifted)?;
        shifted[j] = theta[j] - shift;
        let down = loss(&shifted)?;
        shifted[j] = theta[j];
        grad[j] = g * (up - down);
    }
    Ok(grad)
}

fn ring_bonds(n: usize) -> Vec<(usize, usize)> {
    (0..n).map(|i| (i, (i + 1) % n)).collect()
}

fn rotation(n: usize, letters: &[(usize, crate::pauli::Pauli)], encoding: EncodingFn) -> Result<Gate> {
    use crate::pauli::Pauli;
    let mut ls = vec![Pauli::I; n];
    for &(q, p) in letters {
        ls[q] = p;
    }
    Ok(Gate::Rotation { generator: PauliString::new(&ls)?, encoding })
}

/// Hardware-efficient layers: per layer, Z rotations on every qubit, then
/// XX, YY and ZZ rotations on every nearest-neighbor bond of the periodic
/// chain. All angles independent, so M = 4·n·layers. At n = 2 the wrap bond
/// duplicates the single physical pair as distinct gates.
pub fn build_hea(n: usize, layers: usize) -> Result<Ansatz> {
    build_layered(n, layers, false, |_| LayerEncoding::constant())
}

/// Same gate set as [`build_hea`] with each layer reordered to XX, YY, ZZ,
/// then Z, so the circuit starts with a rotation whose generator flips
/// |0…0⟩ (⟨0…0|X X|0…0⟩ = 0). Bound experiments that need their first-gate
/// condition satisfied use this variant.
pub fn build_hea_entangler_first(n: usize, layers: usize) -> Result<Ansatz> {
    build_layered(n, layers, true, |_| LayerEncoding::constant())
}

/// Per-layer encoding assignment for the deformation-aware ansatz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerEncoding {
    /// Encoding on the single-qubit Z rotations.
    pub single: EncodingFn,
    /// Encoding on the two-qubit XX/YY/ZZ rotations.
    pub coupling: EncodingFn,
}

impl LayerEncoding {
    pub fn constant() -> Self {
        LayerEncoding { single: EncodingFn::ConstantOne, coupling: EncodingFn::ConstantOne }
    }

    /// Default deformation encoding: singles scale linearly with x,
    /// couplings stay constant.
    pub fn default_meta() -> Self {
        LayerEncoding { single: EncodingFn::Linear { a: 1.0 }, coupling: EncodingFn::ConstantOne }
    }
}

/// Deformation-encoded variant of [`build_hea`] with the default per-layer
/// assignment (singles linear in x with a = 1, couplings constant).
pub fn build_meta_ansatz(n: usize, layers: usize) -> Result<Ansatz> {
    build_meta_ansatz_with(n, layers, &vec![LayerEncoding::default_meta(); layers])
}

/// Deformation-encoded HEA with an explicit per-layer encoding assignment;
/// `spec` must contain exactly one entry per layer.
pub fn build_meta_ansatz_with(n: usize, layers: usize, spec: &[LayerEncoding]) -> Result<Ansatz> {
    if spec.len() != layers {
        return Err(Error::dims(format!(
            "{} layer encodings supplied for {layers} layers",
            spec.len()
        )));
    }
    build_layered(n, layers, false, |l| spec[l])
}

fn build_layered(
    n: usize,
    layers: usize,
    entangler_first: bool,
    enc: impl Fn(usize) -> LayerEncoding,
) -> Result<Ansatz> {
    use crate::pauli::Pauli;
    if n < 2 {
        return Err(Error::QubitCount { n, min: 2, max: DENSE_QUBIT_LIMIT });
    }
    if layers == 0 {
        return Err(Error::invalid("ansatz needs at least one layer"));
    }
    let mut gates = Vec::with_capacity(4 * n * layers);
    for l in 0..layers {
        let LayerEncoding { single, coupling } = enc(l);
        let mut singles = Vec::with_capacity(n);
        for q in 0..n {
            singles.push(rotation(n, &[(q, Pauli::Z)], single)?);
        }
        let mut couplings = Vec::with_capacity(3 * n);
        for p in [Pauli::X, Pauli::Y, Pauli::Z] {
            for (i, j) in ring_bonds(n) {
                couplings.push(rotation(n, &[(i, p), (j, p)], coupling)?);
            }
        }
        if entangler_first {
            gates.extend(couplings);
            gates.extend(singles);
        } else {
            gates.extend(singles);
            gates.extend(couplings);
        }
    }
    Ansatz::new(n, gates)
}
