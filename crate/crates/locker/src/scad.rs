//! SCAD penalty and the functional-SCAD local quadratic approximation.
//!
//! The sparseness penalty acts on per-breakpoint-interval L2 norms of the
//! varying coefficient function. Around a previous iterate it is majorized
//! by a quadratic form `½ γᵀ U γ` whose matrix `U` is assembled here from
//! the interval Gram matrices of the basis.

use nalgebra::{DMatrix, DVector};

use crate::bspline::SplineBasis;
use crate::error::{LockerError, Result};

/// SCAD parameters: sparseness level `λ ≥ 0` and shape `a > 2`.
#[derive(Debug, Clone, Copy)]
pub struct ScadParams {
    pub lambda: f64,
    pub a: f64,
}

/// Conventional SCAD shape parameter.
pub const DEFAULT_SCAD_A: f64 = 3.7;

impl ScadParams {
    pub fn new(lambda: f64, a: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(LockerError::param("lambda", format!("must be ≥ 0, got {lambda}")));
        }
        if !(a > 2.0) || !a.is_finite() {
            return Err(LockerError::param("a", format!("must be > 2, got {a}")));
        }
        Ok(ScadParams { lambda, a })
    }

    /// `λ` with the conventional shape `a = 3.7`.
    pub fn with_lambda(lambda: f64) -> Result<Self> {
        Self::new(lambda, DEFAULT_SCAD_A)
    }
}

/// SCAD penalty `p_λ(v)` for `v ≥ 0`: linear up to `λ`, quadratic blend up
/// to `aλ`, constant plateau beyond.
pub fn scad(p: &ScadParams, v: f64) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(LockerError::param("v", format!("must be ≥ 0, got {v}")));
    }
    let (l, a) = (p.lambda, p.a);
    Ok(if v <= l {
        l * v
    } else if v <= a * l {
        (2.0 * a * l * v - v * v - l * l) / (2.0 * (a - 1.0))
    } else {
        l * l * (a + 1.0) / 2.0
    })
}

/// SCAD derivative `p'_λ(v)` for `v ≥ 0`.
pub fn scad_deriv(p: &ScadParams, v: f64) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(LockerError::param("v", format!("must be ≥ 0, got {v}")));
    }
    let (l, a) = (p.lambda, p.a);
    Ok(if v <= l {
        l
    } else if v <= a * l {
        (a * l - v) / (a - 1.0)
    } else {
        0.0
    })
}

/// Quadratic majorization state at a previous iterate.
#[derive(Debug, Clone)]
pub struct LqaState {
    /// Per-interval norms `‖β₁[m]‖₂ = sqrt(γ⁽¹⁾ᵀ T_m γ⁽¹⁾)`.
    pub interval_norms: Vec<f64>,
    /// Intervals whose norm fell below the degeneracy floor; they contribute
    /// nothing to `U` and are handled by the shrink rule of the solver.
    pub degenerate: Vec<bool>,
    /// `2L × 2L` matrix `diag(O, Σ_m U_m)`; the intercept block is never
    /// penalized.
    pub u: DMatrix<f64>,
}

/// Degeneracy floor for interval norms: below this the quadratic weight
/// `p'/(2‖·‖)` would blow up, so the interval is left to the shrink rule.
pub fn norm_floor(basis: &SplineBasis) -> f64 {
    1e-8 * (basis.domain_len() / basis.num_intervals() as f64).sqrt()
}

/// Assembles `U` from the previous iterate of the coefficient block `γ⁽¹⁾`.
///
/// For each interval `m`, with `c = sqrt((K+1)/T)`:
/// `U_m = c · p'_λ(c‖β₁[m]‖₂) / (2‖β₁[m]‖₂) · T_m`.
pub fn lqa_matrix(
    gamma1_prev: &DVector<f64>,
    basis: &SplineBasis,
    params: &ScadParams,
) -> Result<LqaState> {
    let l = basis.num_basis();
    if gamma1_prev.len() != l {
        return Err(LockerError::param(
            "gamma1_prev",
            format!("expected length {l}, got {}", gamma1_prev.len()),
        ));
    }
    let n_int = basis.num_intervals();
    let c = (n_int as f64 / basis.domain_len()).sqrt();
    let floor = norm_floor(basis);
    let grams = basis.interval_grams();

    let mut norms = Vec::with_capacity(n_int);
    let mut degenerate = vec![false; n_int];
    let mut block = DMatrix::<f64>::zeros(l, l);
    for (m, gram) in grams.iter().enumerate() {
        let q = (gamma1_prev.transpose() * gram * gamma1_prev)[(0, 0)];
        let norm = q.max(0.0).sqrt();
        norms.push(norm);
        if norm < floor {
            degenerate[m] = true;
            continue;
        }
        let coef = c * scad_deriv(params, c * norm)? / (2.0 * norm);
        if coef != 0.0 {
            block += gram * coef;
        }
    }

    let mut u = DMatrix::zeros(2 * l, 2 * l);
    u.view_mut((l, l), (l, l)).copy_from(&block);
    Ok(LqaState {
        interval_norms: norms,
        degenerate,
        u,
    })
}
