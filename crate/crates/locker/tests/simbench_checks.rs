//! Metric oracles and a smoke run of the Monte Carlo harness.

use locker::family::Family;
use locker::simbench::{
    ise, run_benchmark, BenchOptions, Scenario, TrueFunctions,
};

#[test]
fn ise_against_sparse_truth_matches_fine_quadrature() {
    let truth = TrueFunctions::new(true);
    let v = ise(|_| 0.0, |t| truth.beta1(t)).unwrap();
    // 10⁶-point trapezoid oracle of β₁².
    let points = 1_000_001;
    let h = 1.0 / (points - 1) as f64;
    let mut oracle = 0.0;
    for i in 0..points {
        let t = (i as f64 * h).min(1.0);
        let b = truth.beta1(t);
        let w = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
        oracle += w * b * b;
    }
    oracle *= h;
    assert!(
        (v - oracle).abs() < 1e-6,
        "metric {v} vs fine-grid oracle {oracle}"
    );
}

#[test]
fn benchmark_smoke_run_produces_finite_rows() {
    let sc = Scenario::new(Family::Gaussian, false, 40, 8.0, 21).unwrap();
    let opts = BenchOptions {
        l: 8,
        rho_grid: vec![1e-4, 1e-2],
        lambda_grid: vec![0.0, 0.1],
        ..BenchOptions::default()
    };
    let report = run_benchmark(&[sc], 2, &opts).unwrap();
    assert_eq!(report.rows.len(), 1);
    let row = &report.rows[0];
    assert_eq!(row.replicates, 2);
    assert_eq!(row.failures, 0);
    assert!(row.ise0.0.is_finite() && row.ise0.0 >= 0.0);
    assert!(row.ise1.0.is_finite() && row.ise1.0 >= 0.0);
    // Nonsparse truth: no zero region to identify.
    assert!(row.tp.is_none());
}

#[test]
fn benchmark_rows_are_reproducible() {
    let sc = Scenario::new(Family::Poisson, true, 30, 6.0, 5).unwrap();
    let opts = BenchOptions {
        l: 7,
        rho_grid: vec![1e-3],
        lambda_grid: vec![0.0, 0.2],
        ..BenchOptions::default()
    };
    let a = run_benchmark(std::slice::from_ref(&sc), 3, &opts).unwrap();
    let b = run_benchmark(std::slice::from_ref(&sc), 3, &opts).unwrap();
    let (ra, rb) = (&a.rows[0], &b.rows[0]);
    assert_eq!(ra.ise0, rb.ise0);
    assert_eq!(ra.ise1, rb.ise1);
    assert_eq!(ra.tp, rb.tp);
    assert_eq!(ra.fn_rate, rb.fn_rate);
    assert_eq!(ra.mean_bandwidth, rb.mean_bandwidth);
}
