//! Warm-started training along a deformation path.
//!
//! The strategy: optimize at x₁, then initialize each subsequent step from a
//! small hypercube around the previous optimum. The plain driver deforms the
//! Hamiltonian under a deformation-blind circuit; the encoded driver grows
//! the training set one point at a time and averages the encoded losses.
//! Every step records exact diagnostics (energy, gap-resolved branch,
//! ground-state fidelity) plus the analytic step/radius budgets, so a run
//! documents whether its own schedule stayed inside the guaranteed regime.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    first_valid_gate, max_radius_meta, max_radius_vqe, max_step_meta, max_step_vqe, BoundInputs,
};
use crate::error::{Error, Result};
use crate::losses::{meta_vqe_loss_precomputed, vqe_loss, NoisyMetaEvaluator, NoisyVqeEvaluator};
use crate::pauli::{exact_spectrum, semi_norm, HamiltonianFamily, Model, PauliSum};
use crate::statevector::{expectation, fidelity_with, parameter_shift_grad, prepare, Ansatz, StateVector};
use crate::stream::{derive_seed, RandomStream};

/// Window for the noisy-mode stopping rule: stop once the moving average of
/// the last `MA_WINDOW` losses no longer improves on the window before it.
const MA_WINDOW: usize = 10;

/// Shot multiplier for the one-off candidate comparison at the end of a
/// noisy step.
const SELECTION_SHOT_FACTOR: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// Deform the Hamiltonian point by point under one fixed circuit.
    VqePath,
    /// Grow the encoded training set one point at a time.
    MetaIncremental,
}

/// Strictly increasing deformation values to visit, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub mode: ScheduleMode,
    pub xs: Vec<f64>,
}

impl Schedule {
    pub fn new(mode: ScheduleMode, xs: Vec<f64>) -> Result<Self> {
        let s = Schedule { mode, xs };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.xs.is_empty() {
            return Err(Error::invalid("schedule needs at least one point"));
        }
        if self.xs.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("schedule points must be finite"));
        }
        if self.xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("schedule points must be strictly increasing"));
        }
        Ok(())
    }

    pub fn check_domain(&self, family: &HamiltonianFamily) -> Result<()> {
        for &x in &self.xs {
            if !family.contains(x) {
                let (lo, hi) = family.domain();
                return Err(Error::invalid(format!(
                    "schedule point {x} outside the family domain [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    GradientDescent,
    Adam,
}

/// How the very first step is initialized (later steps always warm-start).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// θ = 0: right when the path starts at a product ground state that the
    /// identity circuit already prepares.
    Zeros,
    /// Independent Unif[−π, π] per coordinate, one draw per restart.
    RandomUniform,
}

impl InitPolicy {
    /// Zeros where the x → 0 limit has the |0…0⟩ product ground state
    /// (field-dominated and ferromagnetic families); random otherwise.
    pub fn default_for(model: Model) -> InitPolicy {
        match model {
            Model::HeisenbergField | Model::IsingJw => InitPolicy::Zeros,
            Model::Xy => InitPolicy::RandomUniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Half-width of the warm-start hypercube around the previous optimum.
    pub r_warm: f64,
    pub n_restarts: usize,
    /// None = exact evaluation; Some(s) = s shots per energy evaluation.
    pub shots: Option<u64>,
    pub seed: u64,
    pub init: InitPolicy,
    /// Explicit first-step center; overrides `init` when present.
    pub theta_init: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 0.05,
            max_iters: 300,
            grad_tol: 1e-4,
            r_warm: 0.05,
            n_restarts: 1,
            shots: None,
            seed: 0,
            init: InitPolicy::Zeros,
            theta_init: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.grad_tol.is_finite() && self.grad_tol > 0.0) {
            return Err(Error::invalid("grad_tol must be positive"));
        }
        if !(self.r_warm.is_finite() && self.r_warm >= 0.0) {
            return Err(Error::invalid("r_warm must be ≥ 0"));
        }
        if self.n_restarts == 0 || self.n_restarts > 0xFFFF {
            return Err(Error::invalid("n_restarts must be in 1..=65535"));
        }
        if self.shots == Some(0) {
            return Err(Error::invalid("shots, when set, must be positive"));
        }
        if let Some(t) = &self.theta_init {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("theta_init must be finite"));
            }
        }
        Ok(())
    }
}

/// One draw from the hypercube of half-width `r` centered at `center`.
pub fn sample_hypercube(center: &[f64], r: f64, rng: &mut impl Rng) -> Vec<f64> {
    assert!(r.is_finite() && r >= 0.0, "hypercube half-width must be ≥ 0");
    if r == 0.0 {
        return center.to_vec();
    }
    center.iter().map(|&c| c + rng.gen_range(-r..r)).collect()
}

#[derive(Debug, Clone)]
pub struct OptimOptions {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Noisy losses: switch the stopping rule to the moving-average test
    /// (a gradient-norm threshold is meaningless under shot noise).
    pub noisy: bool,
}

impl OptimOptions {
    fn from_config(cfg: &TrainConfig) -> Self {
        OptimOptions {
            optimizer: cfg.optimizer,
            learning_rate: cfg.learning_rate,
            max_iters: cfg.max_iters,
            grad_tol: cfg.grad_tol,
            noisy: cfg.shots.is_some(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimOutcome {
    /// Iterate with the lowest evaluated loss (the initial point included).
    pub theta_best: Vec<f64>,
    pub loss_best: f64,
    /// Final iterate, which under noise is often better than the lucky-draw
    /// argmin of `trace`.
    pub theta_final: Vec<f64>,
    /// Evaluated loss at the initial point and after every update.
    pub trace: Vec<f64>,
    pub iters: usize,
    pub grad_norm_final: f64,
    pub converged: bool,
}

fn ensure_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("{what} evaluated to {value}")))
    }
}

/// Gradient descent / adaptive-moment descent with best-seen tracking.
///
/// Exact mode stops when ‖grad‖₂ ≤ grad_tol; noisy mode stops when the
/// moving average of the last [`MA_WINDOW`] losses fails to improve on the
/// window before it. Either way the loop is capped at `max_iters` updates.
pub fn optimize(
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
    mut grad: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    theta0: &[f64],
    opts: &OptimOptions,
) -> Result<OptimOutcome> {
    let mut theta = theta0.to_vec();
    let l0 = ensure_finite(loss(&theta)?, "loss at the initial point")?;
    let mut trace = vec![l0];
    let mut best = (l0, theta.clone());
    let mut iters = 0;
    let mut grad_norm_final = 0.0;
    let mut converged = false;

    // Adaptive-moment state (ignored under plain gradient descent).
    let (beta1, beta2, adam_eps) = (0.9f64, 0.999f64, 1e-8);
    let mut m1 = vec![0.0; theta.len()];
    let mut m2 = vec![0.0; theta.len()];

    for t in 1..=opts.max_iters {
        let g = grad(&theta)?;
        if g.len() != theta.len() {
            return Err(Error::dims(format!(
                "gradient length {} for {} parameters",
                g.len(),
                theta.len()
            )));
        }
        for v in &g {
            ensure_finite(*v, "gradient component")?;
        }
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        grad_norm_final = gnorm;
        if !opts.noisy && gnorm <= opts.grad_tol {
            converged = true;
            break;
        }
        match opts.optimizer {
            Optimizer::GradientDescent => {
                for (th, gi) in theta.iter_mut().zip(&g) {
                    *th -= opts.learning_rate * gi;
                }
            }
            Optimizer::Adam => {
                let bc1 = 1.0 - beta1.powi(t as i32);
                let bc2 = 1.0 - beta2.powi(t as i32);
                for i in 0..theta.len() {
                    m1[i] = beta1 * m1[i] + (1.0 - beta1) * g[i];
                    m2[i] = beta2 * m2[i] + (1.0 - beta2) * g[i] * g[i];
                    let step = (m1[i] / bc1) / ((m2[i] / bc2).sqrt() + adam_eps);
                    theta[i] -= opts.learning_rate * step;
                }
            }
        }
        let l = ensure_finite(loss(&theta)?, "loss")?;
        trace.push(l);
        iters = t;
        if l < best.0 {
            best = (l, theta.clone());
        }
        if opts.noisy && trace.len() >= 2 * MA_WINDOW {
            let n = trace.len();
            let recent: f64 = trace[n - MA_WINDOW..].iter().sum::<f64>() / MA_WINDOW as f64;
            let prior: f64 =
                trace[n - 2 * MA_WINDOW..n - MA_WINDOW].iter().sum::<f64>() / MA_WINDOW as f64;
            if recent >= prior {
                converged = true;
                break;
            }
        }
    }

    Ok(OptimOutcome {
        theta_best: best.1,
        loss_best: best.0,
        theta_final: theta,
        trace,
        iters,
        grad_norm_final,
        converged,
    })
}

/// Which spectral branch an energy sits on, within an absolute tolerance of
/// 0.05·(e1 − e0) + 1e−6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Ground,
    Excited,
    Neither,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Branch::Ground => "ground",
            Branch::Excited => "excited",
            Branch::Neither => "neither",
        })
    }
}

/// The ground label needs both proximity and the absolute tolerance; any
/// state strictly closer to e1 counts as excited (branch-following failure
/// is a *direction*, not a precision statement). Neither = closer to e0 but
/// outside tolerance.
pub fn classify_branch(energy: f64, e0: f64, e1: f64) -> Branch {
    let tol = 0.05 * (e1 - e0) + 1e-6;
    let d0 = (energy - e0).abs();
    let d1 = (energy - e1).abs();
    if d0 <= d1.min(tol) {
        Branch::Ground
    } else if d1 < d0 {
        Branch::Excited
    } else {
        Branch::Neither
    }
}

/// Exact per-step diagnostics and budget telemetry.
#[derive(Debug, Clone, Serialize)]
pub struct TrainRecord {
    pub k: usize,
    pub x: f64,
    pub theta_star: Vec<f64>,
    /// Exact energy of the prepared state at this step's x.
    pub energy_learned: f64,
    pub e0: f64,
    pub e1: f64,
    pub fidelity_gs: f64,
    /// √(1 − fidelity): the preparation error the budget formulas consume.
    pub eps: f64,
    pub iters_used: usize,
    pub grad_norm_final: f64,
    pub branch: Branch,
    /// Whether this step's exact objective beat the warm-start center.
    pub improved: bool,
    /// Admissible |Δx| onward from this step (0 when eps disqualifies it).
    pub max_step: f64,
    pub max_step_unbounded: bool,
    /// Admissible hypercube half-width at this step.
    pub max_radius: f64,
    /// |x_{k+1} − x_k| ≤ max_step, for every step that has a successor.
    pub step_within_budget: Option<bool>,
    /// r_warm ≤ max_radius at this step.
    pub warm_radius_within_budget: bool,
}

/// Exact evaluation at an untrained deformation value (encoded runs only).
#[derive(Debug, Clone, Serialize)]
pub struct TestRecord {
    pub x: f64,
    pub energy: f64,
    pub e0: f64,
    pub e1: f64,
    pub fidelity_gs: f64,
    pub branch: Branch,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunLog {
    pub schedule: Schedule,
    pub config: TrainConfig,
    pub records: Vec<TrainRecord>,
    /// Midpoint evaluations of the final encoded circuit; empty for plain
    /// runs and single-point schedules.
    pub test_records: Vec<TestRecord>,
}

impl RunLog {
    /// Per-step CSV (RFC-4180, LF endings): k, x, energy_learned, e0, e1,
    /// fidelity_gs, eps, iters_used, grad_norm_final, branch.
    pub fn records_csv(&self) -> String {
        let mut out =
            String::from("k,x,energy_learned,e0,e1,fidelity_gs,eps,iters_used,grad_norm_final,branch\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.k,
                r.x,
                r.energy_learned,
                r.e0,
                r.e1,
                r.fidelity_gs,
                r.eps,
                r.iters_used,
                r.grad_norm_final,
                r.branch
            ));
        }
        out
    }

    /// Test-point CSV: x, energy, e0, e1, fidelity, branch.
    pub fn test_records_csv(&self) -> String {
        let mut out = String::from("x,energy,e0,e1,fidelity,branch\n");
        for r in &self.test_records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.x, r.energy, r.e0, r.e1, r.fidelity_gs, r.branch
            ));
        }
        out
    }
}

/// Per-restart derived seeds; sub-tags keep the init draw, the two noisy
/// evaluators and the selection pass on disjoint streams.
fn restart_seed(seed: u64, k: usize, t: usize) -> u64 {
    derive_seed(seed, ((k as u64) << 16) | t as u64)
}

fn selection_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, ((k as u64) << 16) | 0xFFFF)
}

struct RestartOutcome {
    theta_best: Vec<f64>,
    loss_best: f64,
    theta_final: Vec<f64>,
    iters: usize,
    grad_norm_final: f64,
}

/// First-step / warm-start initialization for restart `t` of step `k`.
fn initial_theta(
    cfg: &TrainConfig,
    num_params: usize,
    prev: Option<&[f64]>,
    k: usize,
    t: usize,
) -> Vec<f64> {
    let mut rng = RandomStream::rng_at(derive_seed(restart_seed(cfg.seed, k, t), 0), 0);
    if let Some(center) = prev {
        return sample_hypercube(center, cfg.r_warm, &mut rng);
    }
    if let Some(center) = &cfg.theta_init {
        return if t == 0 {
            center.clone()
        } else {
            sample_hypercube(center, cfg.r_warm, &mut rng)
        };
    }
    match cfg.init {
        InitPolicy::Zeros => {
            let zeros = vec![0.0; num_params];
            if t == 0 {
                zeros
            } else {
                sample_hypercube(&zeros, cfg.r_warm, &mut rng)
            }
        }
        InitPolicy::RandomUniform => (0..num_params)
            .map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI))
            .collect(),
    }
}

/// Candidate θs of one step in deterministic order (restart-major, best
/// before final), deduplicated against exact re-evaluation cost.
fn step_candidates(restarts: &[RestartOutcome], noisy: bool) -> Vec<&Vec<f64>> {
    let mut out = Vec::new();
    for r in restarts {
        out.push(&r.theta_best);
        if noisy {
            out.push(&r.theta_final);
        }
    }
    out
}

struct ChosenTheta {
    theta: Vec<f64>,
    restart: usize,
}

/// Pick this step's winner. Exact runs compare the evaluated losses
/// directly; noisy runs re-score every candidate once at 10× shots (one
/// fresh draw each, deterministic order, earliest index wins ties).
fn select_theta(
    restarts: &[RestartOutcome],
    noisy_rescore: Option<&mut dyn FnMut(&[f64]) -> Result<f64>>,
) -> Result<ChosenTheta> {
    match noisy_rescore {
        None => {
            let mut best = 0;
            for (i, r) in restarts.iter().enumerate() {
                if r.loss_best < restarts[best].loss_best {
                    best = i;
                }
            }
            Ok(ChosenTheta { theta: restarts[best].theta_best.clone(), restart: best })
        }
        Some(rescore) => {
            let candidates = step_candidates(restarts, true);
            let mut best: Option<(f64, usize)> = None;
            for (i, cand) in candidates.iter().enumerate() {
                let score = rescore(cand)?;
                if best.map_or(true, |(s, _)| score < s) {
                    best = Some((score, i));
                }
            }
            let (_, idx) = best.expect("at least one restart");
            Ok(ChosenTheta {
                theta: candidates[idx].clone(),
                restart: idx / 2,
            })
        }
    }
}

/// Shared per-step record assembly: exact diagnostics at (θ*, x) plus the
/// budget telemetry computed from the measured preparation error.
#[allow(clippy::too_many_arguments)]
fn make_record(
    ansatz: &Ansatz,
    h: &PauliSum,
    k: usize,
    x: f64,
    theta: Vec<f64>,
    iters: usize,
    grad_norm_final: f64,
    improved: bool,
    cfg: &TrainConfig,
    encoded: bool,
    xs_so_far: &[f64],
    h1_seminorm: f64,
) -> Result<TrainRecord> {
    let spectrum = exact_spectrum(h)?;
    let state = prepare(ansatz, &theta, if encoded { x } else { 0.0 })?;
    let energy = expectation(&state, h)?;
    let fidelity = fidelity_with(&state, &spectrum.ground_vector)?;
    let eps = (1.0 - fidelity).max(0.0).sqrt();
    let branch = classify_branch(energy, spectrum.ground_energy(), spectrum.first_excited_value);

    let m = ansatz.num_params();
    let mut max_step = 0.0;
    let mut max_step_unbounded = false;
    let mut max_radius = 0.0;
    if eps * eps <= 0.5 {
        let inputs = BoundInputs {
            gap: spectrum.gap(),
            h_seminorm: semi_norm(h)?,
            h1_seminorm,
            m,
            eps,
            gamma: 0.5,
            gamma_tilde: 0.5,
            g_max_deriv: ansatz
                .rotations()
                .map(|(_, _, enc)| enc.deriv().abs())
                .fold(0.0, f64::max),
        };
        if encoded {
            let budget = max_step_meta(&inputs)?;
            max_step = budget.value;
            max_step_unbounded = budget.unbounded;
            if m >= 2 {
                if let Some(pivot) = first_valid_gate(ansatz, &StateVector::zero_state(ansatz.num_qubits())?) {
                    let enc = ansatz
                        .rotations()
                        .find(|(idx, _, _)| *idx == pivot)
                        .map(|(_, _, e)| e.clone())
                        .expect("pivot index comes from rotations()");
                    let g1: Vec<f64> = xs_so_far.iter().map(|&xj| enc.eval(xj)).collect();
                    max_radius = max_radius_meta(&inputs, &g1)?;
                }
            }
        } else {
            let budget = max_step_vqe(&inputs)?;
            max_step = budget.value;
            max_step_unbounded = budget.unbounded;
            if m >= 2 {
                max_radius = max_radius_vqe(&inputs)?;
            }
        }
    }

    Ok(TrainRecord {
        k,
        x,
        theta_star: theta,
        energy_learned: energy,
        e0: spectrum.ground_energy(),
        e1: spectrum.first_excited_value,
        fidelity_gs: fidelity,
        eps,
        iters_used: iters,
        grad_norm_final,
        branch,
        improved,
        max_step,
        max_step_unbounded,
        max_radius,
        step_within_budget: None,
        warm_radius_within_budget: cfg.r_warm <= max_radius,
    })
}

fn fill_step_flags(schedule: &Schedule, records: &mut [TrainRecord]) {
    for k in 0..records.len().saturating_sub(1) {
        let dx = (schedule.xs[k + 1] - schedule.xs[k]).abs();
        records[k].step_within_budget =
            Some(records[k].max_step_unbounded || dx <= records[k].max_step);
    }
}

/// Path training with a deformation-blind circuit: step k minimizes the
/// exact or shot-noise energy of H(x_k), warm-started from step k−1.
pub fn warm_start_vqe(
    family: &HamiltonianFamily,
    ansatz: &Ansatz,
    schedule: &Schedule,
    cfg: &TrainConfig,
) -> Result<RunLog> {
    cfg.validate()?;
    schedule.validate()?;
    schedule.check_domain(family)?;
    if schedule.mode != ScheduleMode::VqePath {
        return Err(Error::invalid("plain path training expects a vqe_path schedule"));
    }
    if !ansatz.has_constant_encodings() {
        return Err(Error::invalid(
            "plain path training expects a constant-encoded circuit",
        ));
    }
    if let Some(t) = &cfg.theta_init {
        if t.len() != ansatz.num_params() {
            return Err(Error::dims(format!(
                "theta_init has {} entries for {} parameters",
                t.len(),
                ansatz.num_params()
            )));
        }
    }

    let h1_seminorm = semi_norm(family.h1())?;
    let mut records: Vec<TrainRecord> = Vec::with_capacity(schedule.xs.len());
    let mut prev_theta: Option<Vec<f64>> = None;

    for (k0, &x) in schedule.xs.iter().enumerate() {
        let k = k0 + 1;
        let h = family.at(x);
        let opts = OptimOptions::from_config(cfg);

        let restarts: Vec<RestartOutcome> = (0..cfg.n_restarts)
            .into_par_iter()
            .map(|t| -> Result<RestartOutcome> {
                let theta0 = initial_theta(cfg, ansatz.num_params(), prev_theta.as_deref(), k, t);
                let outcome = match cfg.shots {
                    None => optimize(
                        |th| vqe_loss(ansatz, &h, th),
                        |th| parameter_shift_grad(ansatz, |q| vqe_loss(ansatz, &h, q), th, 0.0),
                        &theta0,
                        &opts,
                    )?,
                    Some(shots) => {
                        let s_kt = restart_seed(cfg.seed, k, t);
                        let mut ev_loss =
                            NoisyVqeEvaluator::new(ansatz, h.clone(), shots, derive_seed(s_kt, 1))?;
                        let mut ev_grad =
                            NoisyVqeEvaluator::new(ansatz, h.clone(), shots, derive_seed(s_kt, 2))?;
                        optimize(
                            |th| ev_loss.eval(th),
                            |th| parameter_shift_grad(ansatz, |q| ev_grad.eval(q), th, 0.0),
                            &theta0,
                            &opts,
                        )?
                    }
                };
                Ok(RestartOutcome {
                    theta_best: outcome.theta_best,
                    loss_best: outcome.loss_best,
                    theta_final: outcome.theta_final,
                    iters: outcome.iters,
                    grad_norm_final: outcome.grad_norm_final,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let chosen = match cfg.shots {
            None => select_theta(&restarts, None)?,
            Some(shots) => {
                let mut sel = NoisyVqeEvaluator::new(
                    ansatz,
                    h.clone(),
                    shots * SELECTION_SHOT_FACTOR,
                    selection_seed(cfg.seed, k),
                )?;
                let mut rescore = |th: &[f64]| sel.eval(th);
                select_theta(&restarts, Some(&mut rescore))?
            }
        };

        // Did the step's exact objective beat carrying the center forward?
        let center = prev_theta.clone().unwrap_or_else(|| {
            initial_theta(cfg, ansatz.num_params(), None, k, 0)
        });
        let improved =
            vqe_loss(ansatz, &h, &chosen.theta)? < vqe_loss(ansatz, &h, &center)? - 1e-12;

        let picked = &restarts[chosen.restart.min(restarts.len() - 1)];
        let record = make_record(
            ansatz,
            &h,
            k,
            x,
            chosen.theta.clone(),
            picked.iters,
            picked.grad_norm_final,
            improved,
            cfg,
            false,
            &schedule.xs[..k],
            h1_seminorm,
        )?;
        prev_theta = Some(chosen.theta);
        records.push(record);
    }

    fill_step_flags(schedule, &mut records);
    Ok(RunLog {
        schedule: schedule.clone(),
        config: cfg.clone(),
        records,
        test_records: Vec::new(),
    })
}

/// Incremental encoded training: step k minimizes the average energy over
/// the first k schedule points, warm-started from step k−1; the final
/// circuit is then probed exactly at the schedule midpoints.
pub fn warm_start_meta(
    family: &HamiltonianFamily,
    ansatz: &Ansatz,
    schedule: &Schedule,
    cfg: &TrainConfig,
) -> Result<RunLog> {
    cfg.validate()?;
    schedule.validate()?;
    schedule.check_domain(family)?;
    if schedule.mode != ScheduleMode::MetaIncremental {
        return Err(Error::invalid(
            "incremental encoded training expects a meta_incremental schedule",
        ));
    }
    if let Some(t) = &cfg.theta_init {
        if t.len() != ansatz.num_params() {
            return Err(Error::dims(format!(
                "theta_init has {} entries for {} parameters",
                t.len(),
                ansatz.num_params()
            )));
        }
    }

    let h1_seminorm = semi_norm(family.h1())?;
    let all_points: Vec<(f64, PauliSum)> =
        schedule.xs.iter().map(|&x| (x, family.at(x))).collect();
    let mut records: Vec<TrainRecord> = Vec::with_capacity(schedule.xs.len());
    let mut prev_theta: Option<Vec<f64>> = None;

    for (k0, &x) in schedule.xs.iter().enumerate() {
        let k = k0 + 1;
        let points = &all_points[..k];
        let opts = OptimOptions::from_config(cfg);

        let restarts: Vec<RestartOutcome> = (0..cfg.n_restarts)
            .into_par_iter()
            .map(|t| -> Result<RestartOutcome> {
                let theta0 = initial_theta(cfg, ansatz.num_params(), prev_theta.as_deref(), k, t);
                let outcome = match cfg.shots {
                    None => optimize(
                        |th| meta_vqe_loss_precomputed(ansatz, points, th),
                        |th| exact_meta_grad(ansatz, points, th),
                        &theta0,
                        &opts,
                    )?,
                    Some(shots) => {
                        let s_kt = restart_seed(cfg.seed, k, t);
                        let xs_now: Vec<f64> = points.iter().map(|p| p.0).collect();
                        let mut ev_loss = NoisyMetaEvaluator::new(
                            ansatz,
                            family,
                            &xs_now,
                            shots,
                            derive_seed(s_kt, 1),
                        )?;
                        let mut ev_grad = NoisyMetaEvaluator::new(
                            ansatz,
                            family,
                            &xs_now,
                            shots,
                            derive_seed(s_kt, 2),
                        )?;
                        optimize(
                            |th| ev_loss.eval(th),
                            |th| noisy_meta_grad(ansatz, &mut ev_grad, th),
                            &theta0,
                            &opts,
                        )?
                    }
                };
                Ok(RestartOutcome {
                    theta_best: outcome.theta_best,
                    loss_best: outcome.loss_best,
                    theta_final: outcome.theta_final,
                    iters: outcome.iters,
                    grad_norm_final: outcome.grad_norm_final,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let chosen = match cfg.shots {
            None => select_theta(&restarts, None)?,
            Some(shots) => {
                let xs_now: Vec<f64> = points.iter().map(|p| p.0).collect();
                let mut sel = NoisyMetaEvaluator::new(
                    ansatz,
                    family,
                    &xs_now,
                    shots * SELECTION_SHOT_FACTOR,
                    selection_seed(cfg.seed, k),
                )?;
                let mut rescore = |th: &[f64]| sel.eval(th);
                select_theta(&restarts, Some(&mut rescore))?
            }
        };

        let center = prev_theta.clone().unwrap_or_else(|| {
            initial_theta(cfg, ansatz.num_params(), None, k, 0)
        });
        let improved = meta_vqe_loss_precomputed(ansatz, points, &chosen.theta)?
            < meta_vqe_loss_precomputed(ansatz, points, &center)? - 1e-12;

        let picked = &restarts[chosen.restart.min(restarts.len() - 1)];
        let record = make_record(
            ansatz,
            &points[k - 1].1,
            k,
            x,
            chosen.theta.clone(),
            picked.iters,
            picked.grad_norm_final,
            improved,
            cfg,
            true,
            &schedule.xs[..k],
            h1_seminorm,
        )?;
        prev_theta = Some(chosen.theta);
        records.push(record);
    }

    fill_step_flags(schedule, &mut records);

    // Probe the final circuit at the midpoints between training values.
    let theta_final = records.last().expect("schedule is non-empty").theta_star.clone();
    let mut test_records = Vec::new();
    for w in schedule.xs.windows(2) {
        let x_mid = 0.5 * (w[0] + w[1]);
        let h = family.at(x_mid);
        let spectrum = exact_spectrum(&h)?;
        let state = prepare(ansatz, &theta_final, x_mid)?;
        let energy = expectation(&state, &h)?;
        let fidelity = fidelity_with(&state, &spectrum.ground_vector)?;
        test_records.push(TestRecord {
            x: x_mid,
            energy,
            e0: spectrum.ground_energy(),
            e1: spectrum.first_excited_value,
            fidelity_gs: fidelity,
            branch: classify_branch(energy, spectrum.ground_energy(), spectrum.first_excited_value),
        });
    }

    Ok(RunLog {
        schedule: schedule.clone(),
        config: cfg.clone(),
        records,
        test_records,
    })
}

/// Gradient of the averaged encoded loss: each point contributes its own
/// shift-rule gradient (the shift width depends on that point's encoding
/// values), averaged with equal weights.
fn exact_meta_grad(
    ansatz: &Ansatz,
    points: &[(f64, PauliSum)],
    theta: &[f64],
) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; theta.len()];
    for (x, h) in points {
        let g = parameter_shift_grad(
            ansatz,
            |q| expectation(&prepare(ansatz, q, *x)?, h),
            theta,
            *x,
        )?;
        for (a, gi) in acc.iter_mut().zip(&g) {
            *a += gi / points.len() as f64;
        }
    }
    Ok(acc)
}

fn noisy_meta_grad(
    ansatz: &Ansatz,
    ev: &mut NoisyMetaEvaluator,
    theta: &[f64],
) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; theta.len()];
    let count = ev.num_points();
    for p in 0..count {
        let x = ev.point_x(p);
        let g = parameter_shift_grad(ansatz, |q| ev.eval_point(p, q), theta, x)?;
        for (a, gi) in acc.iter_mut().zip(&g) {
            *a += gi / count as f64;
        }
    }
    Ok(acc)
}
