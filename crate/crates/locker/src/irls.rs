//! Penalized kernel-weighted IRLS solver.
//!
//! Each iteration linearizes the estimating equation at the previous
//! iterate, assembles the quadratic majorization of the sparseness penalty,
//! and solves one penalized weighted least-squares system restricted to the
//! currently active coefficients. Coefficients of the varying-coefficient
//! block that fall below the shrink threshold are set to exactly zero and
//! never re-enter.
//!
//! All linear systems are normalized by the full pair count `N_0`, i.e. they
//! are solved on the scale of the estimating equation itself; residuals and
//! fixed-point defects are reported on that scale.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::bspline::SplineBasis;
use crate::error::{LockerError, Result};
use crate::family::Family;
use crate::kernel::PairDesign;
use crate::scad::{lqa_matrix, ScadParams};

/// Solver configuration.
#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Roughness penalty for the intercept function.
    pub rho0: f64,
    /// Roughness penalty for the varying coefficient function.
    pub rho1: f64,
    /// Sparseness penalty parameters.
    pub scad: ScadParams,
    /// Iteration cap.
    pub max_iter: usize,
    /// Relative change in the coefficient vector below which the iteration
    /// stops.
    pub tol: f64,
    /// Shrink threshold: coefficient-block entries with magnitude below
    /// `shrink_eps · max(1, ‖γ⁽¹⁾‖_∞)` are zeroed.
    pub shrink_eps: f64,
    pub family: Family,
}

impl FitConfig {
    pub fn new(family: Family) -> Self {
        FitConfig {
            rho0: 0.0,
            rho1: 0.0,
            scad: ScadParams {
                lambda: 0.0,
                a: crate::scad::DEFAULT_SCAD_A,
            },
            max_iter: 100,
            tol: 1e-6,
            shrink_eps: 1e-4,
            family,
        }
    }

    /// Sets both roughness parameters to the same value.
    pub fn with_roughness(mut self, rho: f64) -> Self {
        self.rho0 = rho;
        self.rho1 = rho;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.scad.lambda = lambda;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.rho0 >= 0.0 && self.rho1 >= 0.0) {
            return Err(LockerError::param("rho", "roughness parameters must be ≥ 0"));
        }
        if self.max_iter == 0 {
            return Err(LockerError::param("max_iter", "must be ≥ 1"));
        }
        if !(self.tol > 0.0) {
            return Err(LockerError::param("tol", "must be > 0"));
        }
        if !(self.shrink_eps >= 0.0) {
            return Err(LockerError::param("shrink_eps", "must be ≥ 0"));
        }
        Ok(())
    }
}

/// Fitted coefficient vector with its active set and evaluation handle.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Stacked coefficients `γ = (γ⁽⁰⁾ᵀ, γ⁽¹⁾ᵀ)ᵀ`; entries outside the
    /// active set are exactly zero.
    pub gamma: DVector<f64>,
    /// Indices of coefficients still in the model.
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm defect of the final solved linear system at the returned
    /// coefficients (estimating-equation scale).
    pub residual: f64,
    /// Active-set size after each iteration, starting at the initializer.
    pub active_history: Vec<usize>,
    basis: SplineBasis,
}

impl FitResult {
    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    /// Intercept-block coefficients `γ⁽⁰⁾`.
    pub fn gamma0(&self) -> DVector<f64> {
        let l = self.basis.num_basis();
        self.gamma.rows(0, l).clone_owned()
    }

    /// Coefficient-block coefficients `γ⁽¹⁾`.
    pub fn gamma1(&self) -> DVector<f64> {
        let l = self.basis.num_basis();
        self.gamma.rows(l, l).clone_owned()
    }

    /// Coefficient-function estimates `(β̂₀(t), β̂₁(t))`.
    pub fn beta_at(&self, t: f64) -> Result<(f64, f64)> {
        let b = self.basis.evaluate(t)?;
        let l = self.basis.num_basis();
        let mut b0 = 0.0;
        let mut b1 = 0.0;
        for i in 0..l {
            b0 += b[i] * self.gamma[i];
            b1 += b[i] * self.gamma[l + i];
        }
        Ok((b0, b1))
    }
}

/// `diag(ρ₀ V, ρ₁ V)` on the stacked coefficient vector.
pub fn roughness_block(basis: &SplineBasis, rho0: f64, rho1: f64) -> DMatrix<f64> {
    let l = basis.num_basis();
    let v = basis.roughness_matrix();
    let mut out = DMatrix::zeros(2 * l, 2 * l);
    out.view_mut((0, 0), (l, l)).copy_from(&(v * rho0));
    out.view_mut((l, l), (l, l)).copy_from(&(v * rho1));
    out
}

/// Solves an SPD system, with a one-shot jitter retry for matrices that are
/// positive definite but too ill-conditioned for a clean factorization.
/// Rank-deficient systems are reported as singular.
fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(chol.solve(rhs));
    }
    let eigen = SymmetricEigen::new(m.clone());
    let max = eigen.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 1e-14 * max.max(0.0)) {
        return Err(LockerError::SingularSystem { context });
    }
    let dim = m.nrows();
    let jitter = 1e-10 * m.trace() / dim as f64;
    let mut jittered = m.clone();
    for i in 0..dim {
        jittered[(i, i)] += jitter;
    }
    match Cholesky::new(jittered) {
        Some(chol) => Ok(chol.solve(rhs)),
        None => Err(LockerError::SingularSystem { context }),
    }
}

/// Restricts `(m, rhs)` to `active`, solves, and scatters back to a full
/// vector with exact zeros elsewhere. Also returns the max-norm defect of
/// the restricted system at the solution.
fn solve_restricted(
    m: &DMatrix<f64>,
    rhs: &DVector<f64>,
    active: &[usize],
    context: &'static str,
) -> Result<(DVector<f64>, f64)> {
    let p = active.len();
    let sub_m = DMatrix::from_fn(p, p, |i, j| m[(active[i], active[j])]);
    let sub_rhs = DVector::from_fn(p, |i, _| rhs[active[i]]);
    let sub_sol = solve_spd(&sub_m, &sub_rhs, context)?;
    if sub_sol.iter().any(|x| !x.is_finite()) {
        return Err(LockerError::NonFinite { context: "linear solve" });
    }
    let defect = (&sub_m * &sub_sol - &sub_rhs).abs().max();
    let mut full = DVector::zeros(m.nrows());
    for (i, &idx) in active.iter().enumerate() {
        full[idx] = sub_sol[i];
    }
    Ok((full, defect))
}

/// Weighted normal-equation pieces on the estimating-equation scale:
/// `Xᵀ diag(w ∘ h) X / N₀` and `Xᵀ (w ∘ h ∘ target) / N₀`.
fn weighted_normal_parts(
    pairs: &PairDesign,
    h: Option<&[f64]>,
    target: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let x = pairs.design();
    let w = pairs.weights();
    let n = x.nrows();
    let n0 = pairs.total_pairs() as f64;
    let mut scale = DVector::zeros(n);
    for r in 0..n {
        let hr = h.map_or(1.0, |h| h[r]);
        scale[r] = w[r] * hr / n0;
    }
    let mut xs = x.clone();
    for r in 0..n {
        let s = scale[r];
        xs.row_mut(r).scale_mut(s);
    }
    let mut gram = x.transpose() * &xs;
    // gemm introduces tiny asymmetry; the factorization expects symmetry.
    for i in 0..gram.nrows() {
        for j in 0..i {
            let avg = 0.5 * (gram[(i, j)] + gram[(j, i)]);
            gram[(i, j)] = avg;
            gram[(j, i)] = avg;
        }
    }
    let rhs = x.transpose() * scale.component_mul(target);
    (gram, rhs)
}

/// Initializer: kernel-weighted least squares with the roughness penalty,
/// `γ⁰ = (X̃ᵀWX̃ + N₀ V_ρ)⁻¹ X̃ᵀWY`.
pub fn initial_gamma(pairs: &PairDesign, cfg: &FitConfig, basis: &SplineBasis) -> Result<DVector<f64>> {
    cfg.validate()?;
    if pairs.num_retained() == 0 {
        return Err(LockerError::param("pairs", "no retained pair rows"));
    }
    let v_rho = roughness_block(basis, cfg.rho0, cfg.rho1);
    let (mut m, rhs) = weighted_normal_parts(pairs, None, pairs.responses());
    m += v_rho;
    let active: Vec<usize> = (0..2 * basis.num_basis()).collect();
    let (gamma, _) = solve_restricted(&m, &rhs, &active, "initializer")?;
    Ok(gamma)
}

/// Builds the linearized system at `gamma` and returns `(matrix, rhs)`.
fn linearized_system(
    pairs: &PairDesign,
    gamma: &DVector<f64>,
    cfg: &FitConfig,
    basis: &SplineBasis,
    v_rho: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let l = basis.num_basis();
    let eta = pairs.design() * gamma;
    let (z, h) = cfg
        .family
        .working_quantities(eta.as_slice(), pairs.responses().as_slice())?;
    let gamma1 = gamma.rows(l, l).clone_owned();
    let lqa = lqa_matrix(&gamma1, basis, &cfg.scad)?;
    let (mut m, rhs) = weighted_normal_parts(pairs, Some(&h), &DVector::from_vec(z));
    m += v_rho;
    m += &lqa.u;
    Ok((m, rhs))
}

/// One IRLS step from `gamma_prev`, restricted to the columns active in
/// `gamma_prev` (the intercept block plus the nonzero coefficient-block
/// entries). Returns the new coefficients and the solve defect.
pub fn irls_step(
    pairs: &PairDesign,
    gamma_prev: &DVector<f64>,
    cfg: &FitConfig,
    basis: &SplineBasis,
) -> Result<(DVector<f64>, f64)> {
    cfg.validate()?;
    let l = basis.num_basis();
    if gamma_prev.len() != 2 * l {
        return Err(LockerError::param("gamma_prev", "length must be 2L"));
    }
    if gamma_prev.iter().any(|x| !x.is_finite()) {
        return Err(LockerError::NonFinite { context: "gamma_prev" });
    }
    let active: Vec<usize> = (0..l)
        .chain((l..2 * l).filter(|&i| gamma_prev[i] != 0.0))
        .collect();
    let v_rho = roughness_block(basis, cfg.rho0, cfg.rho1);
    let (m, rhs) = linearized_system(pairs, gamma_prev, cfg, basis, &v_rho)?;
    solve_restricted(&m, &rhs, &active, "irls step")
}

/// Full solve: initialize, iterate with shrinking, and package the result.
pub fn fit(pairs: &PairDesign, cfg: &FitConfig, basis: &SplineBasis) -> Result<FitResult> {
    cfg.validate()?;
    let l = basis.num_basis();
    let v_rho = roughness_block(basis, cfg.rho0, cfg.rho1);
    let mut gamma = initial_gamma(pairs, cfg, basis)?;
    let mut active: Vec<usize> = (0..2 * l).collect();
    let mut active_history = vec![active.len()];
    let mut converged = false;
    let mut iterations = 0;
    let mut residual = f64::NAN;

    for _ in 1..=cfg.max_iter {
        let (m, rhs) = linearized_system(pairs, &gamma, cfg, basis, &v_rho)?;
        let (mut next, defect) = solve_restricted(&m, &rhs, &active, "irls step")?;
        residual = defect;
        iterations += 1;

        // Shrink small coefficient-block entries to exactly zero; dropped
        // columns never re-enter. The intercept block is never shrunk. With
        // no sparseness penalty the solver is plain penalized IRLS and no
        // shrinking applies.
        if cfg.scad.lambda > 0.0 {
            let max_c = next.rows(l, l).amax();
            let threshold = cfg.shrink_eps * max_c.max(1.0);
            active.retain(|&i| {
                if i < l {
                    return true;
                }
                if next[i].abs() < threshold {
                    next[i] = 0.0;
                    false
                } else {
                    true
                }
            });
        }

        let rel = (&next - &gamma).norm() / (gamma.norm() + 1e-12);
        gamma = next;
        active_history.push(active.len());
        if rel <= cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        gamma,
        active_set: active,
        iterations,
        converged,
        residual,
        active_history,
        basis: basis.clone(),
    })
}

/// Max-norm defect of the linearized system evaluated *at* the fitted
/// coefficients (working quantities and penalty majorization recomputed at
/// the fit), restricted to the active set. A converged fit certifies a
/// small value here.
pub fn fixed_point_defect(result: &FitResult, pairs: &PairDesign, cfg: &FitConfig) -> Result<f64> {
    let basis = result.basis();
    let v_rho = roughness_block(basis, cfg.rho0, cfg.rho1);
    let (m, rhs) = linearized_system(pairs, &result.gamma, cfg, basis, &v_rho)?;
    let defect_full = &m * &result.gamma - &rhs;
    Ok(result
        .active_set
        .iter()
        .map(|&i| defect_full[i].abs())
        .fold(0.0, f64::max))
}
