//! Clamped B-spline basis: evaluation, second derivatives, and the exact
//! integral matrices used by the roughness and sparseness penalties.
//!
//! The basis has degree `d`, `K` interior knots and `L = K + d + 1` functions
//! on a closed domain. Knots are clamped with multiplicity `d + 1` at both
//! ends, so the basis interpolates at the endpoints and forms a partition of
//! unity everywhere in between.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{LockerError, Result};

/// Clamped B-spline basis on a closed interval.
///
/// Immutable after construction; integral matrices are computed lazily and
/// cached, so sharing a basis across concurrent fits is cheap.
#[derive(Debug, Clone)]
pub struct SplineBasis {
    degree: usize,
    domain: (f64, f64),
    /// Full clamped knot vector, length `L + d + 1`.
    knots: Vec<f64>,
    /// Breakpoints `τ_0 < τ_1 < … < τ_{K+1}` (K + 2 of them).
    breaks: Vec<f64>,
    roughness: OnceLock<DMatrix<f64>>,
    interval_grams: OnceLock<Vec<DMatrix<f64>>>,
}

impl SplineBasis {
    /// Basis with `interior_knots` equally spaced interior knots on `[lo, hi]`.
    pub fn uniform(degree: usize, interior_knots: usize, lo: f64, hi: f64) -> Result<Self> {
        if interior_knots == 0 {
            return Err(LockerError::param(
                "interior_knots",
                "at least one interior knot is required",
            ));
        }
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(LockerError::DegenerateDomain { lo, hi });
        }
        let k = interior_knots;
        let mut breaks = Vec::with_capacity(k + 2);
        for m in 0..=(k + 1) {
            breaks.push(lo + (hi - lo) * m as f64 / (k + 1) as f64);
        }
        // Pin the endpoints exactly; the affine form above can round.
        breaks[0] = lo;
        breaks[k + 1] = hi;
        Self::from_breakpoints(degree, breaks)
    }

    /// Basis from an explicit strictly increasing breakpoint sequence.
    ///
    /// `breaks` must contain the domain endpoints and at least one interior
    /// breakpoint.
    pub fn from_breakpoints(degree: usize, breaks: Vec<f64>) -> Result<Self> {
        if breaks.len() < 3 {
            return Err(LockerError::param(
                "breaks",
                "need at least 3 breakpoints (one interior knot)",
            ));
        }
        if breaks.iter().any(|b| !b.is_finite()) {
            return Err(LockerError::param("breaks", "non-finite breakpoint"));
        }
        if breaks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LockerError::param(
                "breaks",
                "breakpoints must be strictly increasing",
            ));
        }
        let lo = breaks[0];
        let hi = *breaks.last().unwrap();
        let mut knots = Vec::with_capacity(breaks.len() + 2 * degree);
        knots.extend(std::iter::repeat(lo).take(degree));
        knots.extend_from_slice(&breaks);
        knots.extend(std::iter::repeat(hi).take(degree));
        Ok(SplineBasis {
            degree,
            domain: (lo, hi),
            knots,
            breaks,
            roughness: OnceLock::new(),
            interval_grams: OnceLock::new(),
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of interior knots `K`.
    pub fn interior_knots(&self) -> usize {
        self.breaks.len() - 2
    }

    /// Number of basis functions `L = K + d + 1`.
    pub fn num_basis(&self) -> usize {
        self.interior_knots() + self.degree + 1
    }

    /// Number of breakpoint intervals `K + 1`.
    pub fn num_intervals(&self) -> usize {
        self.breaks.len() - 1
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn domain_len(&self) -> f64 {
        self.domain.1 - self.domain.0
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    pub fn knot_vector(&self) -> &[f64] {
        &self.knots
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        if !t.is_finite() || t < self.domain.0 || t > self.domain.1 {
            return Err(LockerError::OutsideDomain {
                t,
                lo: self.domain.0,
                hi: self.domain.1,
            });
        }
        Ok(())
    }

    /// Index `m` of the breakpoint interval `[τ_m, τ_{m+1})` containing `t`,
    /// with `t = t_hi` assigned to the last interval so the domain is closed.
    fn interval_index(&self, t: f64) -> usize {
        let last = self.breaks.len() - 2;
        match self
            .breaks
            .binary_search_by(|b| b.partial_cmp(&t).unwrap())
        {
            Ok(i) => i.min(last),
            Err(i) => (i - 1).min(last),
        }
    }

    /// The `q + 1` possibly nonzero degree-`q` basis values at `t`,
    /// together with the index of the first of them.
    ///
    /// Uses the Cox–de Boor triangle on the knot span containing `t`.
    fn nonzero_values(&self, t: f64, q: usize) -> (usize, Vec<f64>) {
        debug_assert!(q <= self.degree);
        let span = self.degree + self.interval_index(t);
        let kn = &self.knots;
        let mut vals = vec![0.0; q + 1];
        vals[0] = 1.0;
        let mut left = vec![0.0; q + 1];
        let mut right = vec![0.0; q + 1];
        for r in 1..=q {
            left[r] = t - kn[span + 1 - r];
            right[r] = kn[span + r] - t;
            let mut saved = 0.0;
            for j in 0..r {
                let denom = right[j + 1] + left[r - j];
                let tmp = vals[j] / denom;
                vals[j] = saved + right[j + 1] * tmp;
                saved = left[r - j] * tmp;
            }
            vals[r] = saved;
        }
        (span - q, vals)
    }

    /// All degree-`q` basis values at `t` (length `L + d - q`).
    fn all_values(&self, t: f64, q: usize) -> Vec<f64> {
        let n = self.knots.len() - q - 1;
        let mut out = vec![0.0; n];
        let (start, vals) = self.nonzero_values(t, q);
        out[start..start + vals.len()].copy_from_slice(&vals);
        out
    }

    /// One derivative step: degree-`q` derivative values from degree-`q-1`
    /// function (or derivative) values.
    fn derivative_step(&self, lower: &[f64], q: usize) -> Vec<f64> {
        let kn = &self.knots;
        let n = lower.len() - 1;
        let mut out = vec![0.0; n];
        for i in 0..n {
            let d1 = kn[i + q] - kn[i];
            let d2 = kn[i + q + 1] - kn[i + 1];
            let a = if d1 > 0.0 { lower[i] / d1 } else { 0.0 };
            let b = if d2 > 0.0 { lower[i + 1] / d2 } else { 0.0 };
            out[i] = q as f64 * (a - b);
        }
        out
    }

    /// Evaluate all `L` basis functions at `t`.
    pub fn evaluate(&self, t: f64) -> Result<DVector<f64>> {
        self.check_domain(t)?;
        Ok(DVector::from_vec(self.all_values(t, self.degree)))
    }

    /// The nonzero block of basis values at `t`: `(first index, d + 1 values)`.
    ///
    /// Cheaper than [`evaluate`](Self::evaluate) when assembling many design
    /// rows.
    pub fn evaluate_nonzero(&self, t: f64) -> Result<(usize, Vec<f64>)> {
        self.check_domain(t)?;
        Ok(self.nonzero_values(t, self.degree))
    }

    /// Second derivatives of all basis functions at `t`.
    ///
    /// For degree `d ≤ 1` the second derivative vanishes almost everywhere
    /// and the zero vector is returned.
    pub fn evaluate_deriv2(&self, t: f64) -> Result<DVector<f64>> {
        self.check_domain(t)?;
        let d = self.degree;
        if d < 2 {
            return Ok(DVector::zeros(self.num_basis()));
        }
        let base = self.all_values(t, d - 2);
        let first = self.derivative_step(&base, d - 1);
        let second = self.derivative_step(&first, d);
        Ok(DVector::from_vec(second))
    }

    /// Roughness matrix `V = ∫ B''(t) B''(t)ᵀ dt` over the domain.
    ///
    /// Piecewise Gauss–Legendre with enough nodes to be exact for the
    /// degree-`2(d-2)` polynomial integrand.
    pub fn roughness_matrix(&self) -> &DMatrix<f64> {
        self.roughness.get_or_init(|| {
            let l = self.num_basis();
            let d = self.degree;
            if d < 2 {
                return DMatrix::zeros(l, l);
            }
            let rule = gauss_legendre(d);
            let mut v = DMatrix::zeros(l, l);
            for w in self.breaks.windows(2) {
                let (a, b) = (w[0], w[1]);
                let half = 0.5 * (b - a);
                let mid = 0.5 * (a + b);
                for &(x, wq) in &rule {
                    let t = mid + half * x;
                    let b2 = self
                        .evaluate_deriv2(t)
                        .expect("quadrature node inside domain");
                    let scale = wq * half;
                    for i in 0..l {
                        if b2[i] == 0.0 {
                            continue;
                        }
                        for j in 0..l {
                            v[(i, j)] += scale * b2[i] * b2[j];
                        }
                    }
                }
            }
            v
        })
    }

    /// Interval Gram matrix `T_m = ∫_{τ_{m-1}}^{τ_m} B(t) B(t)ᵀ dt` for the
    /// 1-based interval index `m ∈ 1..=K+1`.
    ///
    /// Only the `(d+1) × (d+1)` block of the functions supported on the
    /// interval is nonzero.
    pub fn interval_gram(&self, m: usize) -> Result<&DMatrix<f64>> {
        let n_int = self.num_intervals();
        if m == 0 || m > n_int {
            return Err(LockerError::IndexOutOfRange {
                index: m,
                max: n_int,
            });
        }
        Ok(&self.interval_grams()[m - 1])
    }

    /// All interval Gram matrices, indexed `0..K+1` (interval `m` is entry
    /// `m - 1`).
    pub fn interval_grams(&self) -> &[DMatrix<f64>] {
        self.interval_grams.get_or_init(|| {
            let l = self.num_basis();
            let d = self.degree;
            let rule = gauss_legendre(d + 1);
            let mut grams = Vec::with_capacity(self.num_intervals());
            for w in self.breaks.windows(2) {
                let (a, b) = (w[0], w[1]);
                let half = 0.5 * (b - a);
                let mid = 0.5 * (a + b);
                let mut g = DMatrix::zeros(l, l);
                for &(x, wq) in &rule {
                    let t = mid + half * x;
                    // Nodes are strictly interior, so this is block idx..=idx+d
                    // except when rounding lands a node on a breakpoint, in
                    // which case the shifted block still carries the right
                    // values.
                    let (start, vals) = self.nonzero_values(t, d);
                    let scale = wq * half;
                    for i in 0..=d {
                        for j in 0..=d {
                            g[(start + i, start + j)] += scale * vals[i] * vals[j];
                        }
                    }
                }
                grams.push(g);
            }
            grams
        })
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, ascending by node.
///
/// Newton iteration on the Legendre recurrence; exact for polynomials of
/// degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut rule = Vec::with_capacity(n);
    for i in 1..=n {
        let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.push((x, w));
    }
    rule.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    rule
}

/// Legendre polynomial `P_n(x)` and its derivative via the three-term
/// recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
