//! Simulation data generators, accuracy and zero-identification metrics, and
//! the Monte Carlo benchmark runner.

use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use rayon::prelude::*;

use crate::bspline::SplineBasis;
use crate::error::{LockerError, Result};
use crate::family::Family;
use crate::kernel::{default_bandwidth, pair_expand, KernelFamily, KernelSpec};
use crate::longdata::{LongDataset, Subject};
use crate::tuning::{default_lambda_grid, default_rho_grid, select_rho_lambda};

/// Number of grid points used by the accuracy and identification metrics.
pub const METRIC_GRID: usize = 1001;

/// Zero-detection threshold for the identification metrics. Estimates are
/// exactly zero by construction of the shrink rule; this only guards float
/// noise.
pub const ZERO_TOL: f64 = 1e-8;

/// One simulated setting.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub family: Family,
    /// Locally sparse truth for the varying coefficient function.
    pub sparse: bool,
    /// Observe response and covariate at identical times.
    pub synchronous: bool,
    /// Number of subjects.
    pub n: usize,
    /// Observation intensity: counts are `Poisson(m) + 1`.
    pub m: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn new(family: Family, sparse: bool, n: usize, m: f64, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(LockerError::param("n", "need at least one subject"));
        }
        if !(m > 0.0) {
            return Err(LockerError::param("m", "intensity must be positive"));
        }
        let name = format!(
            "{}-{}",
            family.name(),
            if sparse { "sparse" } else { "nonsparse" }
        );
        Ok(Scenario {
            name,
            family,
            sparse,
            synchronous: false,
            n,
            m,
            seed,
        })
    }

    pub fn synchronous(mut self) -> Self {
        self.synchronous = true;
        self.name.push_str("-sync");
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// The data-generating coefficient functions on `[0, 1]`:
/// `β₀(t) = cos(2πt)` and either `β₁(t) = sin(2πt)` or the locally sparse
/// `β₁(t) = 2(B₆(t) + B₇(t))` on the cubic basis with nine equally spaced
/// interior knots (supported exactly on `[0.2, 0.7]`).
#[derive(Debug, Clone)]
pub struct TrueFunctions {
    sparse: bool,
    truth_basis: SplineBasis,
}

impl TrueFunctions {
    pub fn new(sparse: bool) -> Self {
        TrueFunctions {
            sparse,
            truth_basis: SplineBasis::uniform(3, 9, 0.0, 1.0).expect("fixed truth basis"),
        }
    }

    pub fn sparse(&self) -> bool {
        self.sparse
    }

    pub fn beta0(&self, t: f64) -> f64 {
        (2.0 * std::f64::consts::PI * t).cos()
    }

    pub fn beta1(&self, t: f64) -> f64 {
        if self.sparse {
            let (start, vals) = self.truth_basis.evaluate_nonzero(t).expect("t in [0,1]");
            let mut out = 0.0;
            for (offset, v) in vals.iter().enumerate() {
                let idx = start + offset;
                // 1-based basis indices 6 and 7.
                if idx == 5 || idx == 6 {
                    out += 2.0 * v;
                }
            }
            out
        } else {
            (2.0 * std::f64::consts::PI * t).sin()
        }
    }
}

/// Generation bookkeeping: how often the family mean clamp was binding.
#[derive(Debug, Clone, Copy, Default)]
pub struct GenStats {
    pub clamp_events: usize,
    pub response_draws: usize,
}

impl GenStats {
    pub fn clamp_rate(&self) -> f64 {
        if self.response_draws == 0 {
            0.0
        } else {
            self.clamp_events as f64 / self.response_draws as f64
        }
    }
}

/// Generates one dataset from a scenario; deterministic in the seed.
pub fn gen_dataset(sc: &Scenario) -> Result<(LongDataset, TrueFunctions)> {
    let (ds, truth, _) = gen_dataset_with_stats(sc)?;
    Ok((ds, truth))
}

/// As [`gen_dataset`], also reporting the clamp rate of the response mean.
pub fn gen_dataset_with_stats(sc: &Scenario) -> Result<(LongDataset, TrueFunctions, GenStats)> {
    let truth = TrueFunctions::new(sc.sparse);
    // Covariate paths are smooth draws on a rich spline basis.
    let cov_basis = SplineBasis::uniform(4, 69, 0.0, 1.0)?;
    let n_cov = cov_basis.num_basis();
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let poisson = Poisson::new(sc.m).map_err(|e| LockerError::param("m", e.to_string()))?;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut stats = GenStats::default();

    let x_at = |coef: &[f64], t: f64| -> f64 {
        let (start, vals) = cov_basis.evaluate_nonzero(t).expect("t in [0,1]");
        vals.iter()
            .enumerate()
            .map(|(o, v)| coef[start + o] * v)
            .sum()
    };

    let mut subjects = Vec::with_capacity(sc.n);
    for i in 0..sc.n {
        let l_i = poisson.sample(&mut rng) as usize + 1;
        let resp_times: Vec<f64> = (0..l_i).map(|_| rng.random::<f64>()).collect();
        let cov_times: Vec<f64> = if sc.synchronous {
            resp_times.clone()
        } else {
            let m_i = poisson.sample(&mut rng) as usize + 1;
            (0..m_i).map(|_| rng.random::<f64>()).collect()
        };
        let coef: Vec<f64> = (0..n_cov).map(|_| normal.sample(&mut rng)).collect();

        let covariate_obs: Vec<(f64, f64)> =
            cov_times.iter().map(|&s| (s, x_at(&coef, s))).collect();
        let mut response_obs = Vec::with_capacity(l_i);
        for &t in &resp_times {
            let mu = truth.beta0(t) + truth.beta1(t) * x_at(&coef, t);
            stats.response_draws += 1;
            let y = match sc.family {
                Family::Gaussian => mu + normal.sample(&mut rng),
                Family::Bernoulli => {
                    let p = mu.clamp(0.01, 0.99);
                    if p != mu {
                        stats.clamp_events += 1;
                    }
                    u8::from(rng.random_bool(p)) as f64
                }
                Family::Poisson => {
                    let lam = mu.max(0.01);
                    if lam != mu {
                        stats.clamp_events += 1;
                    }
                    Poisson::new(lam).unwrap().sample(&mut rng)
                }
            };
            response_obs.push((t, y));
        }
        subjects.push(Subject::new(format!("S{i:05}"), response_obs, covariate_obs));
    }
    let ds = LongDataset::new(subjects, (0.0, 1.0))?;
    Ok((ds, truth, stats))
}

/// Integrated squared error `∫₀¹ (est - truth)² dt` by composite trapezoid
/// on the metric grid.
pub fn ise(est: impl Fn(f64) -> f64, truth: impl Fn(f64) -> f64) -> Result<f64> {
    let n = METRIC_GRID - 1;
    let h = 1.0 / n as f64;
    let mut acc = 0.0;
    for i in 0..METRIC_GRID {
        let t = i as f64 * h;
        let d = est(t) - truth(t);
        if !d.is_finite() {
            return Err(LockerError::NonFinite { context: "ise integrand" });
        }
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        acc += w * d * d;
    }
    Ok(acc * h)
}

/// Zero-identification rates on the metric grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroIdentification {
    /// Fraction of truth-zero grid points also estimated zero; absent when
    /// the truth has no zero region.
    pub tp: Option<f64>,
    /// Fraction of truth-nonzero grid points falsely estimated zero.
    pub fn_rate: f64,
}

/// Computes TP/FN rates. A grid point counts as a truth zero only when it
/// belongs to a run of at least two consecutive near-zero points, so that
/// isolated crossings (e.g. the zeros of a sine) do not register as a zero
/// region.
pub fn tpfn(est: impl Fn(f64) -> f64, truth: impl Fn(f64) -> f64) -> ZeroIdentification {
    let n = METRIC_GRID;
    let h = 1.0 / (n - 1) as f64;
    let est_zero: Vec<bool> = (0..n).map(|i| est(i as f64 * h).abs() < ZERO_TOL).collect();
    let truth_small: Vec<bool> = (0..n).map(|i| truth(i as f64 * h).abs() < ZERO_TOL).collect();

    // Keep only runs of length ≥ 2: a zero region at grid resolution.
    let mut truth_zero = vec![false; n];
    let mut i = 0;
    while i < n {
        if truth_small[i] {
            let mut j = i;
            while j < n && truth_small[j] {
                j += 1;
            }
            if j - i >= 2 {
                for k in i..j {
                    truth_zero[k] = true;
                }
            }
            i = j;
        } else {
            i += 1;
        }
    }

    let zero_count = truth_zero.iter().filter(|&&z| z).count();
    let nonzero_count = n - zero_count;
    let tp = if zero_count == 0 {
        None
    } else {
        let hits = (0..n).filter(|&i| truth_zero[i] && est_zero[i]).count();
        Some(hits as f64 / zero_count as f64)
    };
    let fn_rate = if nonzero_count == 0 {
        0.0
    } else {
        let misses = (0..n).filter(|&i| !truth_zero[i] && est_zero[i]).count();
        misses as f64 / nonzero_count as f64
    };
    ZeroIdentification { tp, fn_rate }
}

/// Fit options shared by all benchmark replicates.
#[derive(Debug, Clone)]
pub struct BenchOptions {
    /// Basis dimension used for fitting.
    pub l: usize,
    pub degree: usize,
    pub kernel: KernelFamily,
    /// Fixed bandwidth override; the bandwidth rule runs per replicate when
    /// absent.
    pub bandwidth: Option<f64>,
    pub rho_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            l: 13,
            degree: 3,
            kernel: KernelFamily::Epanechnikov,
            bandwidth: None,
            rho_grid: default_rho_grid(),
            lambda_grid: default_lambda_grid(),
        }
    }
}

/// Metrics of a single successful replicate.
#[derive(Debug, Clone, Copy)]
pub struct ReplicateOutcome {
    pub ise0: f64,
    pub ise1: f64,
    pub tp: Option<f64>,
    pub fn_rate: f64,
    pub bandwidth: f64,
    pub rho: f64,
    pub lambda: f64,
    pub converged: bool,
    pub clamp_rate: f64,
}

/// Generates, tunes, fits and scores one replicate of a scenario.
pub fn run_replicate(sc: &Scenario, opts: &BenchOptions) -> Result<ReplicateOutcome> {
    let (ds, truth, stats) = gen_dataset_with_stats(sc)?;
    let h = match opts.bandwidth {
        Some(h) => h,
        None => default_bandwidth(&ds)?,
    };
    let spec = KernelSpec::new(opts.kernel, h)?;
    let (lo, hi) = ds.domain();
    if opts.l < opts.degree + 2 {
        return Err(LockerError::param("l", "basis dimension below degree + 2"));
    }
    let basis = SplineBasis::uniform(opts.degree, opts.l - opts.degree - 1, lo, hi)?;
    let pairs = pair_expand(&ds, &basis, &spec)?;
    let selection = select_rho_lambda(&pairs, &basis, sc.family, &opts.rho_grid, &opts.lambda_grid)?;
    let fitres = &selection.fit;

    let est0 = |t: f64| fitres.beta_at(t).map(|b| b.0).unwrap_or(f64::NAN);
    let est1 = |t: f64| fitres.beta_at(t).map(|b| b.1).unwrap_or(f64::NAN);
    let ise0 = ise(est0, |t| truth.beta0(t))?;
    let ise1 = ise(est1, |t| truth.beta1(t))?;
    let ident = tpfn(est1, |t| truth.beta1(t));

    Ok(ReplicateOutcome {
        ise0,
        ise1,
        tp: ident.tp,
        fn_rate: ident.fn_rate,
        bandwidth: h,
        rho: selection.rho,
        lambda: selection.lambda,
        converged: fitres.converged,
        clamp_rate: stats.clamp_rate(),
    })
}

/// Mean and sample standard deviation; the sd of fewer than two values is 0.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregated results of one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioSummary {
    pub scenario: Scenario,
    pub replicates: usize,
    pub successes: usize,
    pub failures: usize,
    pub ise0: (f64, f64),
    pub ise1: (f64, f64),
    /// Absent when the truth has no zero region.
    pub tp: Option<(f64, f64)>,
    pub fn_rate: (f64, f64),
    pub mean_bandwidth: f64,
    pub mean_clamp_rate: f64,
    /// Fraction of successful replicates with a nonzero selected λ.
    pub lambda_nonzero_rate: f64,
}

/// Full benchmark output. `elapsed` is wall-clock bookkeeping and is not
/// part of any emitted file.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<ScenarioSummary>,
    pub elapsed: Duration,
}

/// Runs `replicates` independent replicates of each scenario; replicate `r`
/// reuses the scenario with seed `base_seed + r`, so results do not depend
/// on execution order.
pub fn run_benchmark(
    scenarios: &[Scenario],
    replicates: usize,
    opts: &BenchOptions,
) -> Result<BenchReport> {
    if replicates == 0 {
        return Err(LockerError::param("replicates", "need at least one"));
    }
    let start = Instant::now();
    let mut rows = Vec::with_capacity(scenarios.len());
    for sc in scenarios {
        let outcomes: Vec<Result<ReplicateOutcome>> = (0..replicates)
            .into_par_iter()
            .map(|r| run_replicate(&sc.clone().with_seed(sc.seed + r as u64), opts))
            .collect();
        let ok: Vec<&ReplicateOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
        let failures = replicates - ok.len();
        let ise0: Vec<f64> = ok.iter().map(|o| o.ise0).collect();
        let ise1: Vec<f64> = ok.iter().map(|o| o.ise1).collect();
        let fns: Vec<f64> = ok.iter().map(|o| o.fn_rate).collect();
        let tps: Vec<f64> = ok.iter().filter_map(|o| o.tp).collect();
        let bandwidths: Vec<f64> = ok.iter().map(|o| o.bandwidth).collect();
        let clamps: Vec<f64> = ok.iter().map(|o| o.clamp_rate).collect();
        let lambda_nonzero = ok.iter().filter(|o| o.lambda > 0.0).count();
        rows.push(ScenarioSummary {
            scenario: sc.clone(),
            replicates,
            successes: ok.len(),
            failures,
            ise0: mean_sd(&ise0),
            ise1: mean_sd(&ise1),
            tp: if tps.is_empty() {
                None
            } else {
                Some(mean_sd(&tps))
            },
            fn_rate: mean_sd(&fns),
            mean_bandwidth: mean_sd(&bandwidths).0,
            mean_clamp_rate: mean_sd(&clamps).0,
            lambda_nonzero_rate: if ok.is_empty() {
                0.0
            } else {
                lambda_nonzero as f64 / ok.len() as f64
            },
        });
    }
    Ok(BenchReport {
        rows,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn observation_counts_have_shifted_poisson_mean() {
        let sc = Scenario::new(Family::Gaussian, false, 10_000, 4.0, 42).unwrap();
        let (ds, _) = gen_dataset(&sc).unwrap();
        let mean_l: f64 = ds
            .subjects()
            .iter()
            .map(|s| s.num_response() as f64)
            .sum::<f64>()
            / ds.num_subjects() as f64;
        // E[L_i] = m + 1; tolerance of three standard errors.
        let se = (4.0f64).sqrt() / (10_000f64).sqrt();
        assert!((mean_l - 5.0).abs() < 3.0 * se, "mean {mean_l}");
    }

    #[test]
    fn sparse_truth_is_zero_outside_its_support() {
        let truth = TrueFunctions::new(true);
        assert_eq!(truth.beta1(0.1), 0.0);
        assert_eq!(truth.beta1(0.9), 0.0);
        let eps = 1e-9;
        let mut t = 0.0;
        while t <= 0.2 - eps {
            assert_eq!(truth.beta1(t), 0.0, "nonzero at {t}");
            t += 1e-3;
        }
        let mut t = 0.7 + eps;
        while t <= 1.0 {
            assert_eq!(truth.beta1(t), 0.0, "nonzero at {t}");
            t += 1e-3;
        }
        // Strictly positive inside.
        assert!(truth.beta1(0.45) > 0.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let sc = Scenario::new(Family::Poisson, true, 25, 6.0, 7).unwrap();
        let (a, _) = gen_dataset(&sc).unwrap();
        let (b, _) = gen_dataset(&sc).unwrap();
        assert_eq!(a.num_subjects(), b.num_subjects());
        for (sa, sb) in a.subjects().iter().zip(b.subjects()) {
            assert_eq!(sa.id, sb.id);
            assert_eq!(sa.response_obs, sb.response_obs);
            assert_eq!(sa.covariate_obs, sb.covariate_obs);
        }
    }

    #[test]
    fn synchronous_scenarios_share_times() {
        let sc = Scenario::new(Family::Gaussian, false, 10, 5.0, 3)
            .unwrap()
            .synchronous();
        let (ds, _) = gen_dataset(&sc).unwrap();
        for s in ds.subjects() {
            assert_eq!(s.num_response(), s.num_covariate());
            for (r, c) in s.response_obs.iter().zip(s.covariate_obs.iter()) {
                assert_eq!(r.0, c.0);
            }
        }
    }

    #[test]
    fn ise_of_identical_functions_is_zero() {
        let f = |t: f64| (3.0 * t).sin();
        assert_eq!(ise(f, f).unwrap(), 0.0);
    }

    #[test]
    fn ise_of_sine_against_zero_is_half() {
        let truth = |t: f64| (2.0 * std::f64::consts::PI * t).sin();
        let v = ise(|_| 0.0, truth).unwrap();
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn ise_rejects_non_finite() {
        assert!(matches!(
            ise(|_| f64::NAN, |_| 0.0),
            Err(LockerError::NonFinite { .. })
        ));
    }

    #[test]
    fn perfect_sparse_identification() {
        let truth = TrueFunctions::new(true);
        let ident = tpfn(|t| truth.beta1(t), |t| truth.beta1(t));
        assert_eq!(ident.tp, Some(1.0));
        assert_eq!(ident.fn_rate, 0.0);
    }

    #[test]
    fn all_zero_estimate_on_nonsparse_truth() {
        let truth = TrueFunctions::new(false);
        let ident = tpfn(|_| 0.0, |t| truth.beta1(t));
        // The sine has no zero region, only isolated crossings.
        assert_eq!(ident.tp, None);
        assert_eq!(ident.fn_rate, 1.0);
    }

    #[test]
    fn tpfn_counts_match_direct_enumeration() {
        // Estimate zero exactly on [0, 0.2]; sparse truth zero on [0, 0.2] ∪ [0.7, 1].
        let truth = TrueFunctions::new(true);
        let est = |t: f64| if t <= 0.2 { 0.0 } else { 1.0 };
        let ident = tpfn(est, |t| truth.beta1(t));
        let grid_in = |a: f64, b: f64| {
            (0..METRIC_GRID)
                .map(|i| i as f64 / (METRIC_GRID - 1) as f64)
                .filter(|&t| t >= a && t <= b)
                .count()
        };
        let expected_tp = grid_in(0.0, 0.2) as f64
            / (grid_in(0.0, 0.2) + grid_in(0.7, 1.0)) as f64;
        assert_abs_diff_eq!(ident.tp.unwrap(), expected_tp, epsilon = 1e-12);
        assert_eq!(ident.fn_rate, 0.0);
    }

    #[test]
    fn single_replicate_reports_zero_sd() {
        let sc = Scenario::new(Family::Gaussian, false, 30, 6.0, 11).unwrap();
        let opts = BenchOptions {
            l: 6,
            rho_grid: vec![1e-3],
            lambda_grid: vec![0.0],
            ..BenchOptions::default()
        };
        let report = run_benchmark(&[sc], 1, &opts).unwrap();
        let row = &report.rows[0];
        assert_eq!(row.successes, 1);
        assert_eq!(row.ise0.1, 0.0);
        assert_eq!(row.ise1.1, 0.0);
        assert!(row.ise0.0.is_finite());
    }

    #[test]
    fn mean_sd_basics() {
        let (m, s) = mean_sd(&[2.0, 4.0]);
        assert_abs_diff_eq!(m, 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s, std::f64::consts::SQRT_2, epsilon = 1e-12);
        assert_eq!(mean_sd(&[5.0]).1, 0.0);
    }
}
