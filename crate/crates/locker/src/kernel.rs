//! Kernel weights for asynchronous observation pairs, the data-driven
//! bandwidth rule, and expansion of a dataset into kernel-weighted design
//! rows.

use nalgebra::{DMatrix, DVector};

use crate::bspline::SplineBasis;
use crate::error::{LockerError, Result};
use crate::longdata::LongDataset;

/// Mass of the standard normal on [-5, 5]; renormalizes the truncated kernel.
const TRUNC_NORMAL_MASS: f64 = 0.999_999_426_696_856_2;
const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Kernel family. Both are symmetric densities with finite second moment;
/// both have compact support, which keeps the count of nonzero weights (the
/// effective sample size used by the information criterion) meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    /// `K(z) = 0.75 (1 - z²)` on `[-1, 1]`.
    Epanechnikov,
    /// Standard normal density truncated to `[-5, 5]` and renormalized.
    TruncatedGaussian,
}

impl KernelFamily {
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "epanechnikov" => Ok(KernelFamily::Epanechnikov),
            "truncated-gaussian" | "truncated_gaussian" | "tgaussian" => {
                Ok(KernelFamily::TruncatedGaussian)
            }
            other => Err(LockerError::param(
                "kernel",
                format!("unknown kernel `{other}` (expected epanechnikov or truncated-gaussian)"),
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Epanechnikov => "epanechnikov",
            KernelFamily::TruncatedGaussian => "truncated-gaussian",
        }
    }

    /// Base kernel `K(z)`.
    pub fn density(&self, z: f64) -> f64 {
        match self {
            KernelFamily::Epanechnikov => {
                if z.abs() <= 1.0 {
                    0.75 * (1.0 - z * z)
                } else {
                    0.0
                }
            }
            KernelFamily::TruncatedGaussian => {
                if z.abs() <= 5.0 {
                    (-0.5 * z * z).exp() / (SQRT_2PI * TRUNC_NORMAL_MASS)
                } else {
                    0.0
                }
            }
        }
    }
}

/// A kernel family together with a bandwidth `h > 0`.
#[derive(Debug, Clone, Copy)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(LockerError::param(
                "bandwidth",
                format!("bandwidth must be positive, got {bandwidth}"),
            ));
        }
        Ok(KernelSpec { family, bandwidth })
    }

    /// Scaled kernel weight `K_h(u) = K(u / h) / h`.
    pub fn weight(&self, u: f64) -> f64 {
        self.family.density(u / self.bandwidth) / self.bandwidth
    }
}

/// Bandwidth rule `h = max(q_{0.95}, 0.01)` where `q_{0.95}` is the
/// 0.95-quantile over subjects of the per-subject minimum response/covariate
/// time gap.
pub fn default_bandwidth(ds: &LongDataset) -> Result<f64> {
    let mut gaps: Vec<f64> = ds.subjects().iter().map(|s| s.min_time_gap()).collect();
    if gaps.is_empty() {
        return Err(LockerError::EmptyDataset);
    }
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(quantile_type7(&gaps, 0.95).max(0.01))
}

/// Linear interpolation between order statistics (the common "type 7" rule).
/// `sorted` must be ascending and nonempty.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Kernel-weighted expansion of all response × covariate observation pairs.
///
/// Rows are stored columnar for fast weighted Gram assembly; zero-weight
/// pairs are dropped from storage but still counted in `total_pairs`, since
/// the estimating equation divides by the full pair count `N_0`.
#[derive(Debug, Clone)]
pub struct PairDesign {
    /// `n_0 × 2L` design matrix; row r is `(B(S)ᵀ, X(S)·B(S)ᵀ)`.
    design: DMatrix<f64>,
    /// Kernel weights `K_h(T - S)`, all strictly positive.
    weights: DVector<f64>,
    /// Responses `Y_i(T_ij)` aligned with rows.
    responses: DVector<f64>,
    /// Subject index of each row.
    subjects: Vec<usize>,
    /// `N_0 = Σ_i L_i · M_i`, counting dropped zero-weight pairs too.
    total_pairs: usize,
    /// Basis dimension `L` (design width is `2L`).
    basis_dim: usize,
}

impl PairDesign {
    /// Builds a design from raw parts; rows with nonpositive weight are
    /// rejected. Mostly useful for synthetic designs in tests.
    pub fn from_parts(
        design: DMatrix<f64>,
        weights: DVector<f64>,
        responses: DVector<f64>,
        subjects: Vec<usize>,
        total_pairs: usize,
        basis_dim: usize,
    ) -> Result<Self> {
        let n = design.nrows();
        if weights.len() != n || responses.len() != n || subjects.len() != n {
            return Err(LockerError::param("design", "row count mismatch"));
        }
        if design.ncols() != 2 * basis_dim {
            return Err(LockerError::param("design", "width must be 2L"));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(LockerError::param("weights", "stored weights must be > 0"));
        }
        if total_pairs < n {
            return Err(LockerError::param("total_pairs", "N0 below retained count"));
        }
        Ok(PairDesign {
            design,
            weights,
            responses,
            subjects,
            total_pairs,
            basis_dim,
        })
    }

    /// Retained (nonzero-weight) pair count `n_0`.
    pub fn num_retained(&self) -> usize {
        self.design.nrows()
    }

    /// Full pair count `N_0 = Σ_i L_i M_i`.
    pub fn total_pairs(&self) -> usize {
        self.total_pairs
    }

    pub fn basis_dim(&self) -> usize {
        self.basis_dim
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }

    pub fn subjects(&self) -> &[usize] {
        &self.subjects
    }

    /// Copy with all weights multiplied by `c > 0` and the total pair count
    /// scaled accordingly; the estimating equation is invariant to this.
    pub fn scaled(&self, c: f64) -> Result<PairDesign> {
        if !(c > 0.0) {
            return Err(LockerError::param("c", "scale must be positive"));
        }
        Ok(PairDesign {
            design: self.design.clone(),
            weights: &self.weights * c,
            responses: self.responses.clone(),
            subjects: self.subjects.clone(),
            total_pairs: ((self.total_pairs as f64) * c).round() as usize,
            basis_dim: self.basis_dim,
        })
    }
}

/// Enumerates all `(i, j, k)` response × covariate pairs, keeping rows with
/// nonzero kernel weight. Rows are ordered by subject, then response index,
/// then covariate index.
pub fn pair_expand(
    ds: &LongDataset,
    basis: &SplineBasis,
    spec: &KernelSpec,
) -> Result<PairDesign> {
    let l = basis.num_basis();
    let (lo, hi) = basis.domain();
    let d = basis.degree();

    // Validate all observation times against the basis domain up front.
    for s in ds.subjects() {
        for &(t, _) in s.response_obs.iter().chain(s.covariate_obs.iter()) {
            if !t.is_finite() || t < lo || t > hi {
                return Err(LockerError::TimeOutsideDomain {
                    subject: s.id.clone(),
                    time: t,
                    lo,
                    hi,
                });
            }
        }
    }

    let mut total_pairs = 0usize;
    let mut rows: Vec<(usize, f64, f64)> = Vec::new(); // (subject, weight, response)
    let mut design_rows: Vec<(usize, Vec<f64>, f64)> = Vec::new(); // (offset, basis block, x value)

    for (i, s) in ds.subjects().iter().enumerate() {
        total_pairs += s.num_response() * s.num_covariate();
        // Basis values at covariate times, computed once per covariate obs.
        let cov_eval: Vec<(usize, Vec<f64>, f64)> = s
            .covariate_obs
            .iter()
            .map(|&(time, x)| {
                let (offset, vals) = basis.evaluate_nonzero(time)?;
                Ok((offset, vals, x))
            })
            .collect::<Result<_>>()?;
        for &(t, y) in &s.response_obs {
            for (k, &(s_time, _)) in s.covariate_obs.iter().enumerate() {
                let w = spec.weight(t - s_time);
                if w > 0.0 {
                    let (offset, vals, x) = &cov_eval[k];
                    rows.push((i, w, y));
                    design_rows.push((*offset, vals.clone(), *x));
                }
            }
        }
    }

    let n = rows.len();
    let mut design = DMatrix::zeros(n, 2 * l);
    for (r, (offset, vals, x)) in design_rows.iter().enumerate() {
        for (c, &b) in vals.iter().enumerate() {
            design[(r, offset + c)] = b;
            design[(r, l + offset + c)] = x * b;
        }
        debug_assert!(vals.len() <= d + 1);
    }

    Ok(PairDesign {
        design,
        weights: DVector::from_iterator(n, rows.iter().map(|r| r.1)),
        responses: DVector::from_iterator(n, rows.iter().map(|r| r.2)),
        subjects: rows.iter().map(|r| r.0).collect(),
        total_pairs,
        basis_dim: l,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::longdata::Subject;
    use approx::assert_abs_diff_eq;

    #[test]
    fn epanechnikov_weight_values() {
        let spec = KernelSpec::new(KernelFamily::Epanechnikov, 1.0).unwrap();
        assert_abs_diff_eq!(spec.weight(0.0), 0.75, epsilon = 1e-15);
        let spec = KernelSpec::new(KernelFamily::Epanechnikov, 0.1).unwrap();
        assert_eq!(spec.weight(0.2), 0.0);
        let spec = KernelSpec::new(KernelFamily::Epanechnikov, 0.5).unwrap();
        assert_abs_diff_eq!(spec.weight(0.25), 1.125, epsilon = 1e-12);
    }

    #[test]
    fn nonpositive_bandwidth_rejected() {
        assert!(KernelSpec::new(KernelFamily::Epanechnikov, 0.0).is_err());
        assert!(KernelSpec::new(KernelFamily::Epanechnikov, -1.0).is_err());
    }

    #[test]
    fn kernels_are_symmetric_densities() {
        for family in [KernelFamily::Epanechnikov, KernelFamily::TruncatedGaussian] {
            // Symmetry on a grid.
            for step in 0..100 {
                let z = step as f64 * 0.06;
                assert_abs_diff_eq!(family.density(z), family.density(-z), epsilon = 1e-15);
            }
            // Unit mass by fine trapezoid over the support.
            let (a, b) = (-6.0, 6.0);
            let n = 600_000;
            let h = (b - a) / n as f64;
            let mut total = 0.5 * (family.density(a) + family.density(b));
            for i in 1..n {
                total += family.density(a + i as f64 * h);
            }
            total *= h;
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn bandwidth_single_subject() {
        let s = Subject::new("A", vec![(0.5, 1.0)], vec![(0.4, 0.1), (0.6, 0.2)]);
        let ds = LongDataset::new(vec![s], (0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(default_bandwidth(&ds).unwrap(), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn bandwidth_floor_on_synchronous_data() {
        let subjects: Vec<Subject> = (0..5)
            .map(|i| {
                let t = 0.1 + 0.15 * i as f64;
                Subject::new(format!("s{i}"), vec![(t, 1.0)], vec![(t, 0.5)])
            })
            .collect();
        let ds = LongDataset::new(subjects, (0.0, 1.0)).unwrap();
        assert_eq!(default_bandwidth(&ds).unwrap(), 0.01);
    }

    #[test]
    fn bandwidth_uses_type7_quantile() {
        // 20 subjects with per-subject min gaps i/100, i = 1..20.
        let subjects: Vec<Subject> = (1..=20)
            .map(|i| {
                let gap = i as f64 / 100.0;
                Subject::new(format!("s{i}"), vec![(0.5, 1.0)], vec![(0.5 + gap, 0.1)])
            })
            .collect();
        let ds = LongDataset::new(subjects, (0.0, 1.0)).unwrap();
        // Independent sorted-order oracle.
        let gaps: Vec<f64> = (1..=20).map(|i| i as f64 / 100.0).collect();
        let pos: f64 = 0.95 * 19.0;
        let lo = pos.floor() as usize;
        let expected = gaps[lo] + (pos - lo as f64) * (gaps[lo + 1] - gaps[lo]);
        assert_abs_diff_eq!(default_bandwidth(&ds).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.1905, epsilon = 1e-12);
    }

    #[test]
    fn pair_expand_counts_and_drops() {
        let basis = SplineBasis::uniform(1, 3, 0.0, 1.0).unwrap();
        let s = Subject::new(
            "A",
            vec![(0.2, 1.0), (0.8, 2.0)],
            vec![(0.21, 0.5), (0.5, 0.7), (0.79, 0.9)],
        );
        let ds = LongDataset::new(vec![s], (0.0, 1.0)).unwrap();
        let spec = KernelSpec::new(KernelFamily::Epanechnikov, 0.05).unwrap();
        let pd = pair_expand(&ds, &basis, &spec).unwrap();
        // L_i = 2, M_i = 3 contributes 6 pairs to N0.
        assert_eq!(pd.total_pairs(), 6);
        // Only |0.2-0.21| and |0.8-0.79| fall inside the bandwidth.
        assert_eq!(pd.num_retained(), 2);
        assert!(pd.weights().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn coincident_times_use_kernel_at_zero() {
        let basis = SplineBasis::uniform(1, 3, 0.0, 1.0).unwrap();
        let s = Subject::new("A", vec![(0.4, 1.0)], vec![(0.4, 2.0)]);
        let ds = LongDataset::new(vec![s], (0.0, 1.0)).unwrap();
        let h = 0.05;
        let spec = KernelSpec::new(KernelFamily::Epanechnikov, h).unwrap();
        let pd = pair_expand(&ds, &basis, &spec).unwrap();
        assert_eq!(pd.num_retained(), 1);
        assert_abs_diff_eq!(pd.weights()[0], 0.75 / h, epsilon = 1e-12);
    }

    #[test]
    fn design_rows_split_into_basis_and_scaled_blocks() {
        let basis = SplineBasis::uniform(3, 4, 0.0, 1.0).unwrap();
        let x_val = 1.7;
        let s = Subject::new("A", vec![(0.33, 1.0)], vec![(0.3, x_val)]);
        let ds = LongDataset::new(vec![s], (0.0, 1.0)).unwrap();
        let spec = KernelSpec::new(KernelFamily::Epanechnikov, 0.1).unwrap();
        let pd = pair_expand(&ds, &basis, &spec).unwrap();
        assert_eq!(pd.num_retained(), 1);
        let l = basis.num_basis();
        let row = pd.design().row(0);
        let first: f64 = row.columns(0, l).sum();
        let second: f64 = row.columns(l, l).sum();
        assert_abs_diff_eq!(first, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(second, x_val, epsilon = 1e-12);
    }

    #[test]
    fn weights_symmetric_in_time_gap_sign() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for family in [KernelFamily::Epanechnikov, KernelFamily::TruncatedGaussian] {
            let spec = KernelSpec::new(family, 0.13).unwrap();
            for _ in 0..200 {
                let u: f64 = rng.random_range(-1.0..1.0);
                assert_abs_diff_eq!(spec.weight(u), spec.weight(-u), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn time_outside_basis_domain_is_an_error() {
        let basis = SplineBasis::uniform(3, 4, 0.0, 0.5).unwrap();
        let s = Subject::new("A", vec![(0.9, 1.0)], vec![(0.4, 2.0)]);
        let ds = LongDataset::new(vec![s], (0.0, 1.0)).unwrap();
        let spec = KernelSpec::new(KernelFamily::Epanechnikov, 0.1).unwrap();
        match pair_expand(&ds, &basis, &spec) {
            Err(LockerError::TimeOutsideDomain { subject, time, .. }) => {
                assert_eq!(subject, "A");
                assert_eq!(time, 0.9);
            }
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn retained_count_matches_strict_support() {
        // Under Epanechnikov, n0 equals the number of pairs with |T - S| < h.
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let basis = SplineBasis::uniform(2, 3, 0.0, 1.0).unwrap();
        let h = 0.07;
        let spec = KernelSpec::new(KernelFamily::Epanechnikov, h).unwrap();
        let subjects: Vec<Subject> = (0..10)
            .map(|i| {
                let resp: Vec<(f64, f64)> =
                    (0..4).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
                let cov: Vec<(f64, f64)> =
                    (0..3).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
                Subject::new(format!("s{i}"), resp, cov)
            })
            .collect();
        let ds = LongDataset::new(subjects, (0.0, 1.0)).unwrap();
        let expected: usize = ds
            .subjects()
            .iter()
            .map(|s| {
                s.response_obs
                    .iter()
                    .flat_map(|&(t, _)| s.covariate_obs.iter().map(move |&(u, _)| (t, u)))
                    .filter(|(t, u)| (t - u).abs() < h)
                    .count()
            })
            .sum();
        let pd = pair_expand(&ds, &basis, &spec).unwrap();
        assert_eq!(pd.num_retained(), expected);
        assert_eq!(pd.total_pairs(), 10 * 12);
    }
}
