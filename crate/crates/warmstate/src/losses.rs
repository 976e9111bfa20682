//! Loss functions and the Gaussian surrogate for finite-shot noise.
//!
//! The exact losses are plain expectation values of the circuit state. The
//! noisy variants model a measurement budget instead of sampling individual
//! outcomes: commuting terms are packed into tensor-product-basis groups by a
//! greedy first-fit scan, the budget is split uniformly (floor division,
//! remainders to the earliest groups and terms), and every evaluation adds
//! one zero-mean Gaussian per group with the estimator variance
//! V_g = Σ_{α∈g} c_α²·(1 − ⟨P_α⟩²)/S_α. Draws are fresh on every call and
//! keyed by a (seed, counter) stream, so a run is reproducible bit for bit.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::pauli::{HamiltonianFamily, Pauli, PauliSum};
use crate::statevector::{expectation, prepare, Ansatz, StateVector};
use crate::stream::RandomStream;

/// Plain variational loss ⟨ψ(θ)|H|ψ(θ)⟩ for a deformation-blind circuit.
pub fn vqe_loss(ansatz: &Ansatz, h: &PauliSum, theta: &[f64]) -> Result<f64> {
    if !ansatz.has_constant_encodings() {
        return Err(Error::invalid(
            "vqe_loss expects a constant-encoded circuit; use meta_vqe_loss",
        ));
    }
    expectation(&prepare(ansatz, theta, 0.0)?, h)
}

/// Averaged encoded loss (1/N)·Σ_j ⟨ψ(θ, x_j)|H(x_j)|ψ(θ, x_j)⟩.
pub fn meta_vqe_loss(
    ansatz: &Ansatz,
    family: &HamiltonianFamily,
    xs: &[f64],
    theta: &[f64],
) -> Result<f64> {
    let points: Vec<(f64, PauliSum)> = xs.iter().map(|&x| (x, family.at(x))).collect();
    meta_vqe_loss_precomputed(ansatz, &points, theta)
}

/// [`meta_vqe_loss`] against Hamiltonians the caller has already built
/// (training loops evaluate the same points many times).
pub fn meta_vqe_loss_precomputed(
    ansatz: &Ansatz,
    points: &[(f64, PauliSum)],
    theta: &[f64],
) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::invalid("meta loss needs at least one training point"));
    }
    let mut acc = 0.0;
    for (x, h) in points {
        acc += expectation(&prepare(ansatz, theta, *x)?, h)?;
    }
    Ok(acc / points.len() as f64)
}

/// A set of mutually compatible terms with the tensor-product basis that
/// measures them all; `basis_signature[q] = I` means qubit q is unconstrained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurementGroup {
    pub term_indices: Vec<usize>,
    pub basis_signature: Vec<Pauli>,
}

fn compatible(sig: &[Pauli], letters: &[Pauli]) -> bool {
    sig.iter()
        .zip(letters)
        .all(|(&s, &t)| t == Pauli::I || s == Pauli::I || s == t)
}

/// Greedy first-fit grouping in term order: each term joins the first group
/// whose signature it fits (qubit-wise equal or identity on either side),
/// filling that group's wildcards, and opens a new group otherwise. The
/// result partitions the term indices deterministically.
pub fn group_terms(h: &PauliSum) -> Vec<MeasurementGroup> {
    let n = h.num_qubits();
    let mut groups: Vec<MeasurementGroup> = Vec::new();
    for (idx, term) in h.terms().iter().enumerate() {
        let letters = term.string.letters();
        match groups.iter_mut().find(|g| compatible(&g.basis_signature, &letters)) {
            Some(g) => {
                for (s, &t) in g.basis_signature.iter_mut().zip(&letters) {
                    if *s == Pauli::I && t != Pauli::I {
                        *s = t;
                    }
                }
                g.term_indices.push(idx);
            }
            None => {
                let mut sig = vec![Pauli::I; n];
                for (s, &t) in sig.iter_mut().zip(&letters) {
                    *s = t;
                }
                groups.push(MeasurementGroup { term_indices: vec![idx], basis_signature: sig });
            }
        }
    }
    groups
}

/// Shot budget split over the groups of one Hamiltonian.
///
/// The total is divided uniformly across groups and then uniformly across
/// the terms inside each group, floor-balanced with remainders handed to the
/// earliest entries, so Σ_α S_α equals the requested total exactly.
#[derive(Debug, Clone)]
pub struct ShotPlan {
    groups: Vec<MeasurementGroup>,
    shots: Vec<Vec<u64>>,
    total: u64,
}

fn split_evenly(total: u64, bins: usize) -> Vec<u64> {
    let base = total / bins as u64;
    let rem = (total % bins as u64) as usize;
    (0..bins).map(|i| base + u64::from(i < rem)).collect()
}

impl ShotPlan {
    pub fn new(h: &PauliSum, n_shots: u64) -> Result<Self> {
        if n_shots == 0 {
            return Err(Error::invalid("shot budget must be positive"));
        }
        let groups = group_terms(h);
        let mut shots = Vec::with_capacity(groups.len());
        if !groups.is_empty() {
            let per_group = split_evenly(n_shots, groups.len());
            for (g, &s_g) in groups.iter().zip(&per_group) {
                let per_term = split_evenly(s_g, g.term_indices.len());
                if per_term.iter().any(|&s| s == 0) {
                    return Err(Error::invalid(format!(
                        "budget of {n_shots} shots leaves some of {} terms with zero shots",
                        h.num_terms()
                    )));
                }
                shots.push(per_term);
            }
        }
        Ok(ShotPlan { groups, shots, total: n_shots })
    }

    pub fn groups(&self) -> &[MeasurementGroup] {
        &self.groups
    }

    /// Per-term shot counts aligned with `groups()[g].term_indices`.
    pub fn shots(&self) -> &[Vec<u64>] {
        &self.shots
    }

    pub fn total_shots(&self) -> u64 {
        self.total
    }
}

/// Exact group energy and estimator variance at the given per-term shots.
fn group_stats(
    state: &StateVector,
    h: &PauliSum,
    group: &MeasurementGroup,
    shots: &[u64],
) -> Result<(f64, f64)> {
    if shots.len() != group.term_indices.len() {
        return Err(Error::dims(format!(
            "{} shot counts for a group of {} terms",
            shots.len(),
            group.term_indices.len()
        )));
    }
    let mut energy = 0.0;
    let mut var = 0.0;
    for (&idx, &s_alpha) in group.term_indices.iter().zip(shots) {
        let term = &h.terms()[idx];
        let ev = state.expectation_string(&term.string).re;
        energy += term.coeff * ev;
        // Single-shot outcomes are ±1, so the estimator of c·⟨P⟩ from
        // S_α shots has variance c²(1 − ⟨P⟩²)/S_α. Clamp against round-off.
        var += term.coeff * term.coeff * (1.0 - ev * ev).max(0.0) / s_alpha as f64;
    }
    Ok((energy, var))
}

/// Estimator variance V_g of one measurement group at the given shots.
pub fn group_variance(
    state: &StateVector,
    h: &PauliSum,
    group: &MeasurementGroup,
    shots: &[u64],
) -> Result<f64> {
    Ok(group_stats(state, h, group, shots)?.1)
}

/// One noisy energy evaluation: Σ_g (E_g + √V_g·ξ_g) with ξ_g i.i.d. standard
/// normal, consuming exactly one counter of the stream. The estimator is
/// unbiased and repeated calls draw independently.
pub fn noisy_energy(
    state: &StateVector,
    h: &PauliSum,
    plan: &ShotPlan,
    stream: &mut RandomStream,
) -> Result<f64> {
    let mut rng = stream.next_rng();
    let mut total = 0.0;
    for (group, shots) in plan.groups().iter().zip(plan.shots()) {
        let (energy, var) = group_stats(state, h, group, shots)?;
        let xi: f64 = rng.sample(StandardNormal);
        total += energy + var.sqrt() * xi;
    }
    Ok(total)
}

/// Sum over groups of the estimator variance at θ (the variance of one
/// [`noisy_energy`] draw).
pub fn total_noise_variance(state: &StateVector, h: &PauliSum, plan: &ShotPlan) -> Result<f64> {
    let mut var = 0.0;
    for (group, shots) in plan.groups().iter().zip(plan.shots()) {
        var += group_stats(state, h, group, shots)?.1;
    }
    Ok(var)
}

/// Stateful noisy loss for deformation-blind circuits: every call prepares
/// ψ(θ), then draws one noisy energy.
#[derive(Debug, Clone)]
pub struct NoisyVqeEvaluator {
    ansatz: Ansatz,
    h: PauliSum,
    plan: ShotPlan,
    stream: RandomStream,
}

impl NoisyVqeEvaluator {
    pub fn new(ansatz: &Ansatz, h: PauliSum, n_shots: u64, seed: u64) -> Result<Self> {
        if !ansatz.has_constant_encodings() {
            return Err(Error::invalid(
                "noisy VQE loss expects a constant-encoded circuit",
            ));
        }
        let plan = ShotPlan::new(&h, n_shots)?;
        Ok(NoisyVqeEvaluator {
            ansatz: ansatz.clone(),
            h,
            plan,
            stream: RandomStream::new(seed),
        })
    }

    pub fn eval(&mut self, theta: &[f64]) -> Result<f64> {
        let state = prepare(&self.ansatz, theta, 0.0)?;
        noisy_energy(&state, &self.h, &self.plan, &mut self.stream)
    }

    /// Independent evaluator on the same problem with the budget scaled by
    /// `factor` (used for the final higher-shot comparison of candidates).
    pub fn reweighted(&self, factor: u64, seed: u64) -> Result<Self> {
        NoisyVqeEvaluator::new(
            &self.ansatz,
            self.h.clone(),
            self.plan.total_shots() * factor,
            seed,
        )
    }
}

/// Stateful noisy averaged loss for encoded circuits; each training point
/// carries its own full shot budget and its own groups, and one call draws
/// every point's groups afresh.
#[derive(Debug, Clone)]
pub struct NoisyMetaEvaluator {
    ansatz: Ansatz,
    points: Vec<(f64, PauliSum, ShotPlan)>,
    n_shots: u64,
    stream: RandomStream,
}

impl NoisyMetaEvaluator {
    pub fn new(
        ansatz: &Ansatz,
        family: &HamiltonianFamily,
        xs: &[f64],
        n_shots: u64,
        seed: u64,
    ) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::invalid("meta loss needs at least one training point"));
        }
        let mut points = Vec::with_capacity(xs.len());
        for &x in xs {
            let h = family.at(x);
            let plan = ShotPlan::new(&h, n_shots)?;
            points.push((x, h, plan));
        }
        Ok(NoisyMetaEvaluator {
            ansatz: ansatz.clone(),
            points,
            n_shots,
            stream: RandomStream::new(seed),
        })
    }

    pub fn eval(&mut self, theta: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (x, h, plan) in &self.points {
            let state = prepare(&self.ansatz, theta, *x)?;
            acc += noisy_energy(&state, h, plan, &mut self.stream)?;
        }
        Ok(acc / self.points.len() as f64)
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn point_x(&self, idx: usize) -> f64 {
        self.points[idx].0
    }

    /// One noisy draw of a single training point's energy — the unit the
    /// shift-rule gradient of the averaged loss is assembled from, since
    /// each point shifts by its own encoding value.
    pub fn eval_point(&mut self, idx: usize, theta: &[f64]) -> Result<f64> {
        let (x, h, plan) = &self.points[idx];
        let state = prepare(&self.ansatz, theta, *x)?;
        noisy_energy(&state, h, plan, &mut self.stream)
    }

    pub fn reweighted(&self, factor: u64, seed: u64) -> Result<Self> {
        let mut out = self.clone();
        out.stream = RandomStream::new(seed);
        out.n_shots *= factor;
        for (_, h, plan) in out.points.iter_mut() {
            *plan = ShotPlan::new(h, out.n_shots)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::{
        build_heisenberg_field, exact_spectrum, heisenberg_field_family, PauliString, PauliTerm,
    };
    use crate::statevector::{build_hea, build_meta_ansatz};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn ps(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    fn sum_of(n: usize, terms: &[(f64, &str)]) -> PauliSum {
        PauliSum::new(
            n,
            terms.iter().map(|&(c, s)| PauliTerm::new(c, ps(s))).collect(),
        )
        .unwrap()
    }

    #[test]
    fn vqe_loss_at_zero_parameters() {
        let ansatz = build_hea(4, 1).unwrap();
        let h = build_heisenberg_field(4, 0.2).unwrap();
        let loss = vqe_loss(&ansatz, &h, &vec![0.0; 16]).unwrap();
        assert_relative_eq!(loss, -3.2, epsilon = 1e-12);
    }

    #[test]
    fn vqe_loss_rejects_encoded_circuit() {
        let meta = build_meta_ansatz(2, 1).unwrap();
        let h = build_heisenberg_field(2, 0.2).unwrap();
        assert!(vqe_loss(&meta, &h, &vec![0.1; 8]).is_err());
    }

    #[test]
    fn meta_loss_reduces_to_vqe_on_single_point() {
        let ansatz = build_hea(3, 1).unwrap();
        let family = heisenberg_field_family(3).unwrap();
        let theta: Vec<f64> = (0..12).map(|k| 0.07 * k as f64).collect();
        let a = meta_vqe_loss(&ansatz, &family, &[0.4], &theta).unwrap();
        let b = vqe_loss(&ansatz, &family.at(0.4), &theta).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-12);
        // A duplicated point changes nothing.
        let c = meta_vqe_loss(&ansatz, &family, &[0.4, 0.4], &theta).unwrap();
        assert_relative_eq!(a, c, epsilon = 1e-12);
    }

    #[test]
    fn meta_loss_is_the_average_of_point_losses() {
        let ansatz = build_meta_ansatz(2, 1).unwrap();
        let family = heisenberg_field_family(2).unwrap();
        let theta: Vec<f64> = (0..8).map(|k| 0.1 + 0.05 * k as f64).collect();
        let xs = [0.1, 0.3, 0.8];
        let mut manual = 0.0;
        for &x in &xs {
            manual += expectation(&prepare(&ansatz, &theta, x).unwrap(), &family.at(x)).unwrap();
        }
        manual /= 3.0;
        let got = meta_vqe_loss(&ansatz, &family, &xs, &theta).unwrap();
        assert_relative_eq!(got, manual, epsilon = 1e-12);
    }

    #[test]
    fn grouping_examples() {
        // All-diagonal terms share one group.
        let g = group_terms(&sum_of(2, &[(1.0, "ZI"), (1.0, "IZ"), (0.5, "ZZ")]));
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].term_indices, vec![0, 1, 2]);
        assert_eq!(g[0].basis_signature, ps("ZZ").letters());
        // X and Z on the same qubit cannot share a basis.
        let g = group_terms(&sum_of(1, &[(1.0, "X"), (1.0, "Z")]));
        assert_eq!(g.len(), 2);
        // Heisenberg at n = 4: diagonal group, XX group, YY group.
        let g = group_terms(&build_heisenberg_field(4, 0.2).unwrap());
        assert_eq!(g.len(), 3);
        let sizes: Vec<usize> = g.iter().map(|x| x.term_indices.len()).collect();
        assert_eq!(sizes, vec![8, 4, 4]);
    }

    #[test]
    fn grouping_is_a_partition_and_members_match_signature() {
        let h = build_heisenberg_field(3, 0.7).unwrap();
        let groups = group_terms(&h);
        let mut seen = vec![false; h.num_terms()];
        for g in &groups {
            for &i in &g.term_indices {
                assert!(!seen[i], "term {i} in two groups");
                seen[i] = true;
                for (q, letter) in h.terms()[i].string.letters().into_iter().enumerate() {
                    if letter != Pauli::I {
                        assert_eq!(g.basis_signature[q], letter);
                    }
                }
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn shot_plan_matches_floor_balanced_split() {
        let h = build_heisenberg_field(4, 0.2).unwrap();
        let plan = ShotPlan::new(&h, 10_000).unwrap();
        let per_group: Vec<u64> = plan.shots().iter().map(|s| s.iter().sum()).collect();
        assert_eq!(per_group, vec![3334, 3333, 3333]);
        // Group 0 has 8 terms: 3334 = 6·417 + 2·416 with remainders first.
        assert_eq!(plan.shots()[0][0], 417);
        assert_eq!(plan.shots()[0][5], 417);
        assert_eq!(plan.shots()[0][6], 416);
        let total: u64 = plan.shots().iter().flatten().sum();
        assert_eq!(total, 10_000);
    }

    #[test]
    fn shot_plan_refuses_sub_single_shot_budgets() {
        let h = build_heisenberg_field(4, 0.2).unwrap();
        assert!(ShotPlan::new(&h, 2).is_err());
        assert!(ShotPlan::new(&h, 0).is_err());
    }

    #[test]
    fn group_variance_vanishes_on_eigenstates_and_scales_with_shots() {
        let h = sum_of(2, &[(0.8, "ZI"), (-0.3, "ZZ")]);
        let state = crate::statevector::StateVector::zero_state(2).unwrap();
        let groups = group_terms(&h);
        let v = group_variance(&state, &h, &groups[0], &[100, 100]).unwrap();
        assert_eq!(v, 0.0);
        // Off-eigenstate: doubling every shot count halves the variance.
        let mut st = crate::statevector::StateVector::zero_state(2).unwrap();
        st.apply_rotation(&ps("YI"), 0.4).unwrap();
        let v1 = group_variance(&st, &h, &groups[0], &[50, 50]).unwrap();
        let v2 = group_variance(&st, &h, &groups[0], &[100, 100]).unwrap();
        assert_relative_eq!(v1, 2.0 * v2, epsilon = 1e-12);
        assert!(v1 > 0.0);
    }

    #[test]
    fn group_variance_matches_binomial_sampling_oracle() {
        // One term c·Z on a rotated single qubit; compare the closed-form
        // estimator variance against simulated ±1 batches.
        let c = 0.7;
        let h = sum_of(1, &[(c, "Z")]);
        let mut st = crate::statevector::StateVector::zero_state(1).unwrap();
        st.apply_rotation(&ps("Y"), 0.4).unwrap();
        let ev = st.expectation_string(&ps("Z")).re;
        let groups = group_terms(&h);
        let s_alpha = 8u64;
        let formula = group_variance(&st, &h, &groups[0], &[s_alpha]).unwrap();

        let p_up = (1.0 + ev) / 2.0;
        let mut rng = RandomStream::rng_at(777, 0);
        let batches = 20_000;
        let mut means = Vec::with_capacity(batches);
        for _ in 0..batches {
            let mut acc = 0.0;
            for _ in 0..s_alpha {
                acc += if rng.gen::<f64>() < p_up { 1.0 } else { -1.0 };
            }
            means.push(c * acc / s_alpha as f64);
        }
        let mean: f64 = means.iter().sum::<f64>() / batches as f64;
        let var: f64 =
            means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (batches - 1) as f64;
        // Chi-square spread of a sample variance: SE ≈ V·√(2/(K−1)).
        let se = formula * (2.0 / (batches as f64 - 1.0)).sqrt();
        assert!(
            (var - formula).abs() < 3.0 * se + 1e-12,
            "simulated {var} vs formula {formula} (se {se})"
        );
    }

    #[test]
    fn noisy_energy_is_deterministic_per_counter_and_fresh_per_call() {
        let h = build_heisenberg_field(3, 0.5).unwrap();
        let ansatz = build_hea(3, 1).unwrap();
        let theta: Vec<f64> = (0..12).map(|k| 0.03 * (k + 1) as f64).collect();
        let state = prepare(&ansatz, &theta, 0.0).unwrap();
        let plan = ShotPlan::new(&h, 500).unwrap();

        let mut s1 = RandomStream::new(99);
        let a1 = noisy_energy(&state, &h, &plan, &mut s1).unwrap();
        let a2 = noisy_energy(&state, &h, &plan, &mut s1).unwrap();
        assert_ne!(a1, a2, "fresh draws expected on every call");

        let mut s2 = RandomStream::new(99);
        let b1 = noisy_energy(&state, &h, &plan, &mut s2).unwrap();
        let b2 = noisy_energy(&state, &h, &plan, &mut s2).unwrap();
        assert_eq!(a1, b1);
        assert_eq!(a2, b2);
    }

    #[test]
    fn noisy_energy_huge_budget_pins_the_exact_value() {
        let h = build_heisenberg_field(3, 0.5).unwrap();
        let ansatz = build_hea(3, 1).unwrap();
        let theta: Vec<f64> = (0..12).map(|k| 0.05 * (k + 1) as f64).collect();
        let state = prepare(&ansatz, &theta, 0.0).unwrap();
        let exact = expectation(&state, &h).unwrap();
        let plan = ShotPlan::new(&h, 1_000_000_000).unwrap();
        let mut stream = RandomStream::new(3);
        let noisy = noisy_energy(&state, &h, &plan, &mut stream).unwrap();
        assert!(
            (noisy - exact).abs() < 1e-3,
            "noisy {noisy} vs exact {exact}"
        );
    }

    #[test]
    fn noisy_estimator_is_unbiased_with_correct_spread() {
        let h = build_heisenberg_field(3, 0.4).unwrap();
        let ansatz = build_hea(3, 1).unwrap();
        let theta: Vec<f64> = (0..12).map(|k| 0.04 * (k + 1) as f64).collect();
        let state = prepare(&ansatz, &theta, 0.0).unwrap();
        let exact = expectation(&state, &h).unwrap();
        let plan = ShotPlan::new(&h, 2000).unwrap();
        let v_total = total_noise_variance(&state, &h, &plan).unwrap();

        let mut stream = RandomStream::new(12345);
        let reps = 4000;
        let draws: Vec<f64> = (0..reps)
            .map(|_| noisy_energy(&state, &h, &plan, &mut stream).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / reps as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (reps - 1) as f64;
        let se_mean = (v_total / reps as f64).sqrt();
        assert!(
            (mean - exact).abs() < 4.0 * se_mean,
            "mean {mean} vs exact {exact} (se {se_mean})"
        );
        let se_var = v_total * (2.0 / (reps as f64 - 1.0)).sqrt();
        assert!(
            (var - v_total).abs() < 4.0 * se_var,
            "sample variance {var} vs predicted {v_total}"
        );
    }

    #[test]
    fn evaluators_reset_bit_for_bit() {
        let family = heisenberg_field_family(3).unwrap();
        let ansatz = build_hea(3, 1).unwrap();
        let theta = vec![0.1; 12];
        let mut e1 = NoisyVqeEvaluator::new(&ansatz, family.at(0.3), 800, 5).unwrap();
        let mut e2 = NoisyVqeEvaluator::new(&ansatz, family.at(0.3), 800, 5).unwrap();
        let seq1: Vec<f64> = (0..4).map(|_| e1.eval(&theta).unwrap()).collect();
        let seq2: Vec<f64> = (0..4).map(|_| e2.eval(&theta).unwrap()).collect();
        assert_eq!(seq1, seq2);

        let meta = build_meta_ansatz(3, 1).unwrap();
        let mut m1 = NoisyMetaEvaluator::new(&meta, &family, &[0.2, 0.6], 900, 8).unwrap();
        let mut m2 = NoisyMetaEvaluator::new(&meta, &family, &[0.2, 0.6], 900, 8).unwrap();
        assert_eq!(m1.eval(&theta).unwrap(), m2.eval(&theta).unwrap());
        assert_ne!(m1.eval(&theta).unwrap(), m1.eval(&theta).unwrap());
    }

    #[test]
    fn meta_evaluator_gives_every_point_its_full_budget() {
        let family = heisenberg_field_family(3).unwrap();
        let meta = build_meta_ansatz(3, 1).unwrap();
        let ev = NoisyMetaEvaluator::new(&meta, &family, &[0.2, 0.5, 0.9], 600, 1).unwrap();
        for (_, _, plan) in &ev.points {
            assert_eq!(plan.total_shots(), 600);
            let sum: u64 = plan.shots().iter().flatten().sum();
            assert_eq!(sum, 600);
        }
    }

    #[test]
    fn identity_terms_carry_no_noise() {
        let h = sum_of(2, &[(2.5, "II")]);
        let state = crate::statevector::StateVector::zero_state(2).unwrap();
        let plan = ShotPlan::new(&h, 100).unwrap();
        let mut stream = RandomStream::new(0);
        for _ in 0..3 {
            let e = noisy_energy(&state, &h, &plan, &mut stream).unwrap();
            assert_relative_eq!(e, 2.5, epsilon = 1e-14);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn loss_respects_the_rayleigh_bound(seed in 0u64..300, x in 0.0f64..1.2) {
            let ansatz = build_hea(3, 1).unwrap();
            let h = build_heisenberg_field(3, x).unwrap();
            let s = exact_spectrum(&h).unwrap();
            let mut rng = RandomStream::rng_at(seed, 0);
            let theta: Vec<f64> = (0..12).map(|_| rng.gen_range(-3.15..3.15)).collect();
            let loss = vqe_loss(&ansatz, &h, &theta).unwrap();
            prop_assert!(loss >= s.ground_energy() - 1e-9);
        }

        #[test]
        fn shot_conservation(n_shots in 60u64..5000) {
            let h = build_heisenberg_field(3, 0.5).unwrap();
            let plan = ShotPlan::new(&h, n_shots).unwrap();
            let total: u64 = plan.shots().iter().flatten().sum();
            prop_assert_eq!(total, n_shots);
            for shots in plan.shots() {
                for &s in shots {
                    prop_assert!(s >= 1);
                }
            }
        }
    }
}
