//! Pauli-string Hamiltonians and their dense spectra.
//!
//! A Hamiltonian is a real-weighted sum H = Σ_k c_k · P_k over n-qubit Pauli
//! strings. Strings are stored in symplectic form (an X mask and a Z mask,
//! with Y occupying both), so applying one to a basis state is a bit flip
//! plus a sign: P|b⟩ = i^{#Y} (−1)^{|b ∧ z|} |b ⊕ x⟩. Dense matrices are
//! built only for diagonalization and the closed-form oracles; the simulation
//! hot path stays index-wise.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest qubit count accepted by dense operations (spectrum, dense matrix).
pub const DENSE_QUBIT_LIMIT: usize = 14;

/// Single-qubit Pauli letter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// Tensor product of Pauli letters over `n` qubits.
///
/// Qubit `q` corresponds to bit `q` of a basis index, and to position `q`
/// (left to right) in the string form, so `"XZI"` puts X on qubit 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PauliString {
    n: usize,
    x_mask: u64,
    z_mask: u64,
}

impl PauliString {
    pub fn new(letters: &[Pauli]) -> Result<Self> {
        let n = letters.len();
        if n == 0 || n > 64 {
            return Err(Error::QubitCount { n, min: 1, max: 64 });
        }
        let mut x_mask = 0u64;
        let mut z_mask = 0u64;
        for (q, &p) in letters.iter().enumerate() {
            match p {
                Pauli::I => {}
                Pauli::X => x_mask |= 1 << q,
                Pauli::Y => {
                    x_mask |= 1 << q;
                    z_mask |= 1 << q;
                }
                Pauli::Z => z_mask |= 1 << q,
            }
        }
        Ok(PauliString { n, x_mask, z_mask })
    }

    /// All-identity string on `n` qubits.
    pub fn identity(n: usize) -> Result<Self> {
        if n == 0 || n > 64 {
            return Err(Error::QubitCount { n, min: 1, max: 64 });
        }
        Ok(PauliString { n, x_mask: 0, z_mask: 0 })
    }

    /// Single non-identity letter on qubit `q`.
    pub fn single(n: usize, q: usize, p: Pauli) -> Result<Self> {
        let mut letters = vec![Pauli::I; n];
        if q >= n {
            return Err(Error::invalid(format!("qubit {q} out of range for n={n}")));
        }
        letters[q] = p;
        Self::new(&letters)
    }

    /// Same letter on two qubits, identity elsewhere.
    pub fn two(n: usize, a: usize, b: usize, p: Pauli) -> Result<Self> {
        if a == b {
            return Err(Error::invalid(format!("coupling needs distinct qubits, got {a},{b}")));
        }
        let mut letters = vec![Pauli::I; n];
        if a >= n || b >= n {
            return Err(Error::invalid(format!("qubits {a},{b} out of range for n={n}")));
        }
        letters[a] = p;
        letters[b] = p;
        Self::new(&letters)
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn letter(&self, q: usize) -> Pauli {
        assert!(q < self.n, "qubit {q} out of range");
        let x = (self.x_mask >> q) & 1 == 1;
        let z = (self.z_mask >> q) & 1 == 1;
        match (x, z) {
            (false, false) => Pauli::I,
            (true, false) => Pauli::X,
            (true, true) => Pauli::Y,
            (false, true) => Pauli::Z,
        }
    }

    pub fn letters(&self) -> Vec<Pauli> {
        (0..self.n).map(|q| self.letter(q)).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.x_mask == 0 && self.z_mask == 0
    }

    /// Number of non-identity letters.
    pub fn weight(&self) -> usize {
        (self.x_mask | self.z_mask).count_ones() as usize
    }

    /// True if the string is diagonal in the computational basis (no X or Y).
    pub fn is_diagonal(&self) -> bool {
        self.x_mask == 0
    }

    pub(crate) fn x_mask(&self) -> u64 {
        self.x_mask
    }

    /// Global factor i^{#Y} in P|b⟩ = i^{#Y} (−1)^{|b ∧ z|} |b ⊕ x⟩.
    pub(crate) fn y_phase(&self) -> Complex64 {
        match (self.x_mask & self.z_mask).count_ones() % 4 {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        }
    }

    /// Sign (−1)^{|b ∧ z|} picked up by basis state `b`.
    #[inline]
    pub(crate) fn z_sign(&self, b: u64) -> f64 {
        if (b & self.z_mask).count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for q in 0..self.n {
            write!(f, "{}", self.letter(q).as_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let letters = s
            .chars()
            .map(|c| match c {
                'I' => Ok(Pauli::I),
                'X' => Ok(Pauli::X),
                'Y' => Ok(Pauli::Y),
                'Z' => Ok(Pauli::Z),
                other => Err(Error::invalid(format!("bad Pauli letter '{other}'"))),
            })
            .collect::<Result<Vec<_>>>()?;
        PauliString::new(&letters)
    }
}

/// One weighted string in a Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliTerm {
    pub coeff: f64,
    pub string: PauliString,
}

impl PauliTerm {
    pub fn new(coeff: f64, string: PauliString) -> Self {
        PauliTerm { coeff, string }
    }
}

/// Real-weighted Pauli sum on a fixed qubit count.
///
/// Construction merges duplicate strings by summing coefficients and drops
/// exact zeros, keeping first-occurrence order so downstream grouping and
/// shot allocation are deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliSum {
    n: usize,
    terms: Vec<PauliTerm>,
}

impl PauliSum {
    pub fn new(n: usize, terms: Vec<PauliTerm>) -> Result<Self> {
        if n == 0 || n > 64 {
            return Err(Error::QubitCount { n, min: 1, max: 64 });
        }
        let mut merged: Vec<PauliTerm> = Vec::with_capacity(terms.len());
        for t in terms {
            if t.string.num_qubits() != n {
                return Err(Error::dims(format!(
                    "term on {} qubits in a sum on {n}",
                    t.string.num_qubits()
                )));
            }
            if !t.coeff.is_finite() {
                return Err(Error::NonFinite(format!("coefficient of {}", t.string)));
            }
            match merged.iter_mut().find(|m| m.string == t.string) {
                Some(m) => m.coeff += t.coeff,
                None => merged.push(t),
            }
        }
        merged.retain(|t| t.coeff != 0.0);
        Ok(PauliSum { n, terms: merged })
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &[PauliTerm] {
        &self.terms
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Sum scaled by a constant.
    pub fn scaled(&self, factor: f64) -> PauliSum {
        let terms = self
            .terms
            .iter()
            .map(|t| PauliTerm::new(factor * t.coeff, t.string.clone()))
            .collect();
        PauliSum::new(self.n, terms).expect("scaling preserves validity")
    }

    /// Merged sum of two Hamiltonians on the same qubits.
    pub fn plus(&self, other: &PauliSum) -> Result<PauliSum> {
        if self.n != other.n {
            return Err(Error::dims(format!(
                "adding sums on {} and {} qubits",
                self.n, other.n
            )));
        }
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        PauliSum::new(self.n, terms)
    }

    /// Dense 2^n × 2^n matrix form. Oracle and spectrum use only; refuses
    /// above [`DENSE_QUBIT_LIMIT`].
    pub fn dense_matrix(&self) -> Result<DMatrix<Complex64>> {
        if self.n > DENSE_QUBIT_LIMIT {
            return Err(Error::QubitCount { n: self.n, min: 1, max: DENSE_QUBIT_LIMIT });
        }
        let dim = 1usize << self.n;
        let mut m = DMatrix::<Complex64>::zeros(dim, dim);
        for term in &self.terms {
            let x = term.string.x_mask();
            let iy = term.string.y_phase();
            for col in 0..dim as u64 {
                let row = col ^ x;
                let amp = iy * term.string.z_sign(col) * term.coeff;
                m[(row as usize, col as usize)] += amp;
            }
        }
        Ok(m)
    }
}

/// Dense unitary of a single Pauli string (oracle helper).
pub fn dense_string(p: &PauliString) -> Result<DMatrix<Complex64>> {
    let one = PauliSum::new(p.num_qubits(), vec![PauliTerm::new(1.0, p.clone())])?;
    one.dense_matrix()
}

/// Linear family H(x) = H0 + x·H1 with the deformation range it models.
#[derive(Debug, Clone)]
pub struct HamiltonianFamily {
    h0: PauliSum,
    h1: PauliSum,
    domain: (f64, f64),
}

impl HamiltonianFamily {
    pub fn new(h0: PauliSum, h1: PauliSum, domain: (f64, f64)) -> Result<Self> {
        if h0.num_qubits() != h1.num_qubits() {
            return Err(Error::dims(format!(
                "H0 on {} qubits, H1 on {}",
                h0.num_qubits(),
                h1.num_qubits()
            )));
        }
        if !(domain.0 < domain.1) || !domain.0.is_finite() || !domain.1.is_finite() {
            return Err(Error::invalid(format!("bad domain ({}, {})", domain.0, domain.1)));
        }
        Ok(HamiltonianFamily { h0, h1, domain })
    }

    pub fn num_qubits(&self) -> usize {
        self.h0.num_qubits()
    }

    pub fn h0(&self) -> &PauliSum {
        &self.h0
    }

    pub fn h1(&self) -> &PauliSum {
        &self.h1
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.domain.0 && x <= self.domain.1
    }

    /// Merged Hamiltonian at deformation value `x`.
    pub fn at(&self, x: f64) -> PauliSum {
        self.h0
            .plus(&self.h1.scaled(x))
            .expect("family members share qubit count")
    }
}

/// Field term −Σ Z_i deformed by a periodic Heisenberg coupling
/// x·Σ_{⟨i,j⟩} (XX + YY + ZZ).
pub fn heisenberg_field_family(n: usize) -> Result<HamiltonianFamily> {
    if n < 2 {
        return Err(Error::QubitCount { n, min: 2, max: 64 });
    }
    let mut field = Vec::with_capacity(n);
    for q in 0..n {
        field.push(PauliTerm::new(-1.0, PauliString::single(n, q, Pauli::Z)?));
    }
    let mut coupling = Vec::with_capacity(3 * n);
    for i in 0..n {
        let j = (i + 1) % n;
        for p in [Pauli::X, Pauli::Y, Pauli::Z] {
            coupling.push(PauliTerm::new(1.0, PauliString::two(n, i, j, p)?));
        }
    }
    HamiltonianFamily::new(
        PauliSum::new(n, field)?,
        PauliSum::new(n, coupling)?,
        (0.0, 2.0),
    )
}

/// Anisotropy-deformed XY chain −J[(1+x)·Σ XX + (1−x)·Σ YY] with open ends.
pub fn xy_family(n: usize, j: f64) -> Result<HamiltonianFamily> {
    if n < 2 {
        return Err(Error::QubitCount { n, min: 2, max: 64 });
    }
    if !j.is_finite() {
        return Err(Error::NonFinite("coupling J".into()));
    }
    let mut h0 = Vec::new();
    let mut h1 = Vec::new();
    for i in 0..n - 1 {
        let xx = PauliString::two(n, i, i + 1, Pauli::X)?;
        let yy = PauliString::two(n, i, i + 1, Pauli::Y)?;
        h0.push(PauliTerm::new(-j, xx.clone()));
        h0.push(PauliTerm::new(-j, yy.clone()));
        h1.push(PauliTerm::new(-j, xx));
        h1.push(PauliTerm::new(j, yy));
    }
    HamiltonianFamily::new(PauliSum::new(n, h0)?, PauliSum::new(n, h1)?, (0.0, 1.0))
}

/// Transverse-field Ising ring −J·Σ Z_i Z_{i+1} − x·Σ X_i carrying the
/// boundary string −Y_1 X_2 ⋯ X_{n−1} Y_n so the fermionic picture is exact.
/// The field sweep drives the model through a level crossing near x = 1.
pub fn ising_jw_family(n: usize, j: f64) -> Result<HamiltonianFamily> {
    if n < 3 {
        return Err(Error::QubitCount { n, min: 3, max: 64 });
    }
    if !j.is_finite() {
        return Err(Error::NonFinite("coupling J".into()));
    }
    let mut h0 = Vec::with_capacity(n + 1);
    for i in 0..n {
        h0.push(PauliTerm::new(-j, PauliString::two(n, i, (i + 1) % n, Pauli::Z)?));
    }
    let mut string = vec![Pauli::X; n];
    string[0] = Pauli::Y;
    string[n - 1] = Pauli::Y;
    h0.push(PauliTerm::new(-1.0, PauliString::new(&string)?));
    let mut h1 = Vec::with_capacity(n);
    for q in 0..n {
        h1.push(PauliTerm::new(-1.0, PauliString::single(n, q, Pauli::X)?));
    }
    HamiltonianFamily::new(PauliSum::new(n, h0)?, PauliSum::new(n, h1)?, (0.0, 2.0))
}

/// Heisenberg-field Hamiltonian at a single deformation value.
pub fn build_heisenberg_field(n: usize, x: f64) -> Result<PauliSum> {
    Ok(heisenberg_field_family(n)?.at(x))
}

/// XY-chain Hamiltonian at a single deformation value.
pub fn build_xy(n: usize, x: f64, j: f64) -> Result<PauliSum> {
    Ok(xy_family(n, j)?.at(x))
}

/// Ising-ring Hamiltonian at a single deformation value.
pub fn build_ising_jw(n: usize, x: f64, j: f64) -> Result<PauliSum> {
    Ok(ising_jw_family(n, j)?.at(x))
}

/// Model families addressable by name in configs and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    HeisenbergField,
    Xy,
    IsingJw,
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::HeisenbergField => "heisenberg_field",
            Model::Xy => "xy",
            Model::IsingJw => "ising_jw",
        }
    }

    /// The family at size `n`; `j` scales the couplings where the model has
    /// one (heisenberg_field has a fixed unit coupling and ignores it).
    pub fn family(&self, n: usize, j: f64) -> Result<HamiltonianFamily> {
        match self {
            Model::HeisenbergField => heisenberg_field_family(n),
            Model::Xy => xy_family(n, j),
            Model::IsingJw => ising_jw_family(n, j),
        }
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heisenberg_field" => Ok(Model::HeisenbergField),
            "xy" => Ok(Model::Xy),
            "ising_jw" => Ok(Model::IsingJw),
            other => Err(Error::invalid(format!(
                "unknown model '{other}' (expected heisenberg_field, xy, ising_jw)"
            ))),
        }
    }
}

/// Full dense spectrum of a Pauli sum.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Eigenvalues in ascending order.
    pub eigenvalues: Vec<f64>,
    /// Normalized ground eigenvector with its largest-magnitude amplitude
    /// rotated to the positive real axis.
    pub ground_vector: Vec<Complex64>,
    /// Second-lowest eigenvalue (with multiplicity).
    pub first_excited_value: f64,
}

impl Spectrum {
    pub fn ground_energy(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// E1 − E0, clamped at zero against diagonalization round-off.
    pub fn gap(&self) -> f64 {
        (self.first_excited_value - self.eigenvalues[0]).max(0.0)
    }
}

/// Dense diagonalization of a Pauli sum. Limited to [`DENSE_QUBIT_LIMIT`]
/// qubits; ascending eigenvalues, deterministic ground-vector phase.
pub fn exact_spectrum(h: &PauliSum) -> Result<Spectrum> {
    let m = h.dense_matrix()?;
    let dim = m.nrows();
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("Hermitian eigenvalues are finite")
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let ground_col = eig.eigenvectors.column(order[0]);
    let mut ground_vector: Vec<Complex64> = ground_col.iter().copied().collect();
    let mut best = 0;
    for (i, a) in ground_vector.iter().enumerate() {
        if a.norm_sqr() > ground_vector[best].norm_sqr() {
            best = i;
        }
    }
    let pivot = ground_vector[best];
    let rotation = if pivot.norm() > 0.0 {
        pivot.conj() / pivot.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    let norm: f64 = ground_vector.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    for a in &mut ground_vector {
        *a *= rotation / norm;
    }
    let first_excited_value = eigenvalues[1];
    Ok(Spectrum { eigenvalues, ground_vector, first_excited_value })
}

/// Spectral semi-norm λ_max − λ_min (the operator spread).
pub fn semi_norm(h: &PauliSum) -> Result<f64> {
    let s = exact_spectrum(h)?;
    Ok(s.eigenvalues[s.eigenvalues.len() - 1] - s.eigenvalues[0])
}

/// Gap E1 − E0 with multiplicity: a degenerate ground level gives 0.
pub fn spectral_gap(h: &PauliSum) -> Result<f64> {
    Ok(exact_spectrum(h)?.gap())
}
