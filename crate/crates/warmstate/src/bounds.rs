//! Closed-form budgets for warm-started path following.
//!
//! Everything here is scalar arithmetic: the k± weights and h(r) moments of
//! cos² under a uniform hypercube draw, the two-argument covariance kernel
//! and its degree-6 companion for encoded circuits, and the admissible step,
//! radius, and variance-floor budgets they imply. Conventions:
//!
//! * `gap` is |e1 − e0| ≥ 0, `h_seminorm`/`h1_seminorm` are spectral ranges
//!   λmax − λmin, and `eps` is the previous step's preparation error
//!   √(1 − fidelity), admissible up to 1/√2.
//! * `gamma` and `gamma_tilde` are the free safety factors in [0, 1]; budgets
//!   scale with them and the variance floor carries the complementary
//!   (1−γ)(1−γ̃) weight.
//! * Budgets never go negative; a vanishing gap collapses them all to zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statevector::{Ansatz, StateVector};

/// sin(x)/x extended with sinc(0) = 1.
pub fn sinc(x: f64) -> f64 {
    // Below this the series is exact to double precision and avoids 0/0.
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

fn assert_radius(r: f64) {
    assert!(r.is_finite() && r >= 0.0, "hypercube half-width must be ≥ 0, got {r}");
}

/// Mean of cos²(α) over α ~ Unif[−r, r]: (1 + sinc 2r)/2.
pub fn k_plus(r: f64) -> f64 {
    assert_radius(r);
    0.5 * (1.0 + sinc(2.0 * r))
}

/// Mean of sin²(α) over α ~ Unif[−r, r]: (1 − sinc 2r)/2.
pub fn k_minus(r: f64) -> f64 {
    assert_radius(r);
    0.5 * (1.0 - sinc(2.0 * r))
}

/// Variance of cos²(α) over α ~ Unif[−r, r].
///
/// Algebraically equal to (cos 4r − 1)/(32r²) + (1 + sinc 4r)/8; evaluated
/// as (1 + sinc 4r)/8 − sinc²(2r)/4, which is the same function without the
/// cancellation-prone division and with the correct limit 0 at r = 0.
pub fn h_exact(r: f64) -> f64 {
    assert_radius(r);
    let s = sinc(2.0 * r);
    ((1.0 + sinc(4.0 * r)) / 8.0 - s * s / 4.0).max(0.0)
}

/// Quartic lower envelope (1 − 4r²/7)·(4r⁴/45) of [`h_exact`]; negative past
/// its root at √7/2, where it no longer says anything.
pub fn h_envelope(r: f64) -> f64 {
    let r2 = r * r;
    (1.0 - 4.0 * r2 / 7.0) * (4.0 * r2 * r2 / 45.0)
}

/// Covariance of cos²(aα) and cos²(bα) over a shared α ~ Unif[−r, r]:
/// [sinc(2(a−b)r) + sinc(2(a+b)r) − 2·sinc(2ar)·sinc(2br)]/8.
/// The diagonal a = b reduces to [`h_exact`] identically.
pub fn h_cov(a: f64, b: f64, r: f64) -> f64 {
    assert_radius(r);
    (sinc(2.0 * (a - b) * r) + sinc(2.0 * (a + b) * r)
        - 2.0 * sinc(2.0 * a * r) * sinc(2.0 * b * r))
        / 8.0
}

/// The same kernel with the prefactors as printed in the source derivation
/// (1/4 outside, 1/2 on the product). Kept for comparison only: its
/// diagonal tends to 3/8 instead of 0 as r → 0, so it is not a covariance.
pub fn h_cov_printed(a: f64, b: f64, r: f64) -> f64 {
    assert_radius(r);
    (sinc(2.0 * (a - b) * r) + sinc(2.0 * (a + b) * r)
        - 0.5 * sinc(2.0 * a * r) * sinc(2.0 * b * r))
        / 4.0
}

/// Degree-6 coefficient polynomial bounding the sixth radial derivative of
/// the covariance kernel, evaluated term for term as printed, including its
/// two distinct a·b⁵ terms (1/7 and 1/2, summed) — the polynomial is *not*
/// symmetric under a ↔ b.
pub fn h6(a: f64, b: f64) -> f64 {
    let (a2, b2) = (a * a, b * b);
    let (a3, b3) = (a2 * a, b2 * b);
    64.0 * (3.0 * a3 * a3 / 7.0
        + a3 * a2 * b / 2.0
        + 37.0 * a2 * a2 * b2 / 7.0
        + 5.0 * a3 * b3 / 4.0
        + 37.0 * a2 * b2 * b2 / 7.0
        + a * b3 * b2 / 7.0
        + a * b3 * b2 / 2.0
        + 3.0 * b3 * b3 / 7.0)
}

/// Scalar problem data feeding the budget formulas.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundInputs {
    /// |e1 − e0| at the relevant path point (minimum over the path for
    /// whole-protocol budgets).
    pub gap: f64,
    /// ‖H(x)‖_s = λmax − λmin.
    pub h_seminorm: f64,
    /// ‖H₁‖_s of the deformation direction.
    pub h1_seminorm: f64,
    /// Number of trainable rotation parameters.
    pub m: usize,
    /// Preparation error √(1 − fidelity) carried in from the previous step.
    pub eps: f64,
    pub gamma: f64,
    pub gamma_tilde: f64,
    /// max_l |∂_x g_l| over the encodings; 0 for deformation-blind circuits.
    #[serde(default)]
    pub g_max_deriv: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("gap", self.gap),
            ("h_seminorm", self.h_seminorm),
            ("h1_seminorm", self.h1_seminorm),
            ("eps", self.eps),
            ("gamma", self.gamma),
            ("gamma_tilde", self.gamma_tilde),
            ("g_max_deriv", self.g_max_deriv),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        if self.m == 0 {
            return Err(Error::invalid("parameter count m must be ≥ 1"));
        }
        if self.eps * self.eps > 0.5 + 1e-12 {
            return Err(Error::invalid(format!(
                "eps = {} exceeds 1/√2; the analysis assumes eps² ≤ 1/2",
                self.eps
            )));
        }
        for (name, v) in [("gamma", self.gamma), ("gamma_tilde", self.gamma_tilde)] {
            if v > 1.0 {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// (1 − 2ε²), the fidelity discount shared by every budget.
    fn eps_factor(&self) -> f64 {
        (1.0 - 2.0 * self.eps * self.eps).max(0.0)
    }
}

/// A step-size budget; `unbounded` marks the degenerate case of a vanishing
/// denominator (no deformation direction to move along).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepBudget {
    pub value: f64,
    pub unbounded: bool,
}

impl StepBudget {
    fn finite(value: f64) -> Self {
        StepBudget { value: value.max(0.0), unbounded: false }
    }
}

/// Largest admissible |Δx| for a deformation-blind circuit:
/// γ̃·(1−2ε²)·gap/‖H₁‖_s.
pub fn max_step_vqe(inputs: &BoundInputs) -> Result<StepBudget> {
    inputs.validate()?;
    if inputs.h1_seminorm == 0.0 {
        return Ok(StepBudget { value: f64::INFINITY, unbounded: true });
    }
    Ok(StepBudget::finite(
        inputs.gamma_tilde * inputs.eps_factor() * inputs.gap / inputs.h1_seminorm,
    ))
}

/// Largest admissible |Δx| for an encoded circuit:
/// γ̃·(1−2ε²)·gap/(‖H₁‖_s + M·g∂max·‖H‖_s). The extra denominator term pays
/// for the encodings dragging every gate when x moves.
pub fn max_step_meta(inputs: &BoundInputs) -> Result<StepBudget> {
    inputs.validate()?;
    let denom = inputs.h1_seminorm + inputs.m as f64 * inputs.g_max_deriv * inputs.h_seminorm;
    if denom == 0.0 {
        return Err(Error::invalid(
            "step budget denominator is zero: no deformation coupling at all",
        ));
    }
    Ok(StepBudget::finite(inputs.gamma_tilde * inputs.eps_factor() * inputs.gap / denom))
}

/// Refined encoded-circuit step budget: the positive root of
/// a·s² + b·s − c = 0 with a = M·g∂max·‖H₁‖_s, b = M·g∂max·‖H‖_s + ‖H₁‖_s,
/// c = (1−2ε²)·gap, scaled by γ̃. The quadratic term accounts for the
/// seminorm growing along the step itself; at g∂max = 0 this reduces to
/// [`max_step_vqe`], and it is never larger than [`max_step_meta`].
pub fn max_step_meta_quadratic(inputs: &BoundInputs) -> Result<StepBudget> {
    inputs.validate()?;
    let a = inputs.m as f64 * inputs.g_max_deriv * inputs.h1_seminorm;
    let b = inputs.m as f64 * inputs.g_max_deriv * inputs.h_seminorm + inputs.h1_seminorm;
    let c = inputs.eps_factor() * inputs.gap;
    if a == 0.0 {
        if b == 0.0 {
            return Err(Error::invalid(
                "step budget denominator is zero: no deformation coupling at all",
            ));
        }
        return Ok(StepBudget::finite(inputs.gamma_tilde * c / b));
    }
    let root = (-b + (b * b + 4.0 * a * c).sqrt()) / (2.0 * a);
    Ok(StepBudget::finite(inputs.gamma_tilde * root))
}

/// Largest admissible hypercube half-width for a deformation-blind circuit:
/// r² = γ·(3/(M−1))·q/(‖H‖_s + q) with q = (1−2ε²)(1−γ̃)·gap.
pub fn max_radius_vqe(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    if inputs.m < 2 {
        return Err(Error::invalid("radius budget needs at least 2 parameters"));
    }
    let q = inputs.eps_factor() * (1.0 - inputs.gamma_tilde) * inputs.gap;
    let denom = inputs.h_seminorm + q;
    if denom == 0.0 {
        return Ok(0.0);
    }
    let r2 = inputs.gamma * 3.0 / (inputs.m as f64 - 1.0) * q / denom;
    Ok(r2.max(0.0).sqrt())
}

/// Largest admissible half-width for an encoded circuit over the whole
/// training set: r² = γ·min{ min_{j,k} 4a²b²/(45·h₆(a,b)), the gap branch },
/// where a, b range over the first-order encoding magnitudes g₁(x_j) and the
/// gap branch is (3/(g_max²(M−1)))·γ̃(1−2ε²)·gap/(‖H‖_s + (1−2ε²)·gap).
/// Pairs with a = b = 0 contribute 0 (a frozen direction has no curvature
/// to protect).
pub fn max_radius_meta(inputs: &BoundInputs, g1_values: &[f64]) -> Result<f64> {
    inputs.validate()?;
    if inputs.m < 2 {
        return Err(Error::invalid("radius budget needs at least 2 parameters"));
    }
    if g1_values.is_empty() {
        return Err(Error::invalid("radius budget needs at least one encoding magnitude"));
    }
    let mut kernel_branch = f64::INFINITY;
    for &a in g1_values {
        for &b in g1_values {
            let denom = 45.0 * h6(a, b);
            let branch = if denom == 0.0 { 0.0 } else { 4.0 * a * a * b * b / denom };
            kernel_branch = kernel_branch.min(branch);
        }
    }
    let g_max = g1_values.iter().fold(0.0f64, |m, &g| m.max(g.abs()));
    let q = inputs.eps_factor() * inputs.gap;
    let gap_branch = if g_max == 0.0 || inputs.h_seminorm + q == 0.0 {
        f64::INFINITY
    } else {
        3.0 / (g_max * g_max * (inputs.m as f64 - 1.0)) * inputs.gamma_tilde * q
            / (inputs.h_seminorm + q)
    };
    let r2 = inputs.gamma * kernel_branch.min(gap_branch);
    if !r2.is_finite() {
        // Both branches degenerate: nothing constrains r, but nothing
        // supports the bound either.
        return Ok(0.0);
    }
    Ok(r2.max(0.0).sqrt())
}

/// The guaranteed variance floor and whether its hypotheses hold.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct VarianceBound {
    pub value: f64,
    /// False when the radius exceeds its budget, the gap vanishes, or the
    /// parameter count is too small — the floor is then reported as 0 and
    /// not claimed.
    pub conditions_met: bool,
}

/// Variance floor h_envelope(r)·((1−γ)(1−γ̃)(1−2ε²)·gap)² for hypercube
/// sampling at half-width r around a trained point.
pub fn variance_bound_vqe(inputs: &BoundInputs, r: f64) -> Result<VarianceBound> {
    inputs.validate()?;
    assert_radius(r);
    let radius_ok = inputs.m >= 2 && r <= max_radius_vqe(inputs)? + 1e-12;
    if !radius_ok || inputs.gap == 0.0 {
        return Ok(VarianceBound { value: 0.0, conditions_met: false });
    }
    let amp = (1.0 - inputs.gamma) * (1.0 - inputs.gamma_tilde) * inputs.eps_factor() * inputs.gap;
    Ok(VarianceBound { value: (h_envelope(r) * amp * amp).max(0.0), conditions_met: true })
}

/// The full certificate for one set of inputs: step budget, radius budget,
/// and the variance floor at one probe half-width, with each theorem
/// condition reported separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub max_step: f64,
    pub max_step_unbounded: bool,
    pub max_radius: f64,
    /// Half-width the floor is evaluated at.
    pub r: f64,
    pub variance_lower: f64,
    pub gap_positive: bool,
    pub enough_params: bool,
    pub radius_within_budget: bool,
    pub conditions_met: bool,
}

/// Assemble a [`BoundReport`]; `r = None` evaluates the floor at the radius
/// budget itself. Degenerate inputs (m = 1, zero gap) produce zeroed budgets
/// with the flags down rather than an error.
pub fn bound_report(inputs: &BoundInputs, r: Option<f64>) -> Result<BoundReport> {
    inputs.validate()?;
    let step = max_step_vqe(inputs)?;
    let max_radius = if inputs.m >= 2 { max_radius_vqe(inputs)? } else { 0.0 };
    let r = r.unwrap_or(max_radius);
    assert_radius(r);
    let vb = variance_bound_vqe(inputs, r)?;
    Ok(BoundReport {
        max_step: step.value,
        max_step_unbounded: step.unbounded,
        max_radius,
        r,
        variance_lower: vb.value,
        gap_positive: inputs.gap > 0.0,
        enough_params: inputs.m >= 2,
        radius_within_budget: r <= max_radius + 1e-12,
        conditions_met: vb.conditions_met,
    })
}

/// Smallest rotation index whose generator has zero expectation in `state`
/// (tolerance 1e−10) — the gate the variance floor pivots on. `None` when
/// every generator is stabilized by the state (e.g. all-Z layers on |0…0⟩).
pub fn first_valid_gate(ansatz: &Ansatz, state: &StateVector) -> Option<usize> {
    ansatz
        .rotations()
        .find(|(_, p, _)| state.expectation_string(p).re.abs() <= 1e-10)
        .map(|(idx, _, _)| idx)
}
