//! Temporary diagnostic sweep (not part of the suite).

use locker::bspline::SplineBasis;
use locker::family::Family;
use locker::irls::{fit, FitConfig};
use locker::kernel::{default_bandwidth, pair_expand, KernelFamily, KernelSpec};
use locker::simbench::{gen_dataset, tpfn, Scenario};

#[test]
#[ignore]
fn sweep_lambda_tp_fn() {
    let lambdas = [0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5];
    let rhos = [1e-5, 1e-4, 1e-3];
    for &rho in &rhos {
        for &lam in &lambdas {
            let mut tps = Vec::new();
            let mut fns_ = Vec::new();
            let mut ises = Vec::new();
            for seed in 0..5 {
                let sc = Scenario::new(Family::Gaussian, true, 200, 15.0, 3000 + seed)
                    .unwrap()
                    .synchronous();
                let (ds, truth) = gen_dataset(&sc).unwrap();
                let h = default_bandwidth(&ds).unwrap();
                let spec = KernelSpec::new(KernelFamily::Epanechnikov, h).unwrap();
                let basis = SplineBasis::uniform(3, 9, 0.0, 1.0).unwrap();
                let pairs = pair_expand(&ds, &basis, &spec).unwrap();
                let cfg = FitConfig::new(Family::Gaussian)
                    .with_roughness(rho)
                    .with_lambda(lam);
                let res = fit(&pairs, &cfg, &basis).unwrap();
                let est = |t: f64| res.beta_at(t).unwrap().1;
                let id = tpfn(est, |t| truth.beta1(t));
                let ise1: f64 = {
                    let mut acc = 0.0;
                    for i in 0..=1000 {
                        let t = i as f64 / 1000.0;
                        let d = est(t) - truth.beta1(t);
                        let w = if i == 0 || i == 1000 { 0.5 } else { 1.0 };
                        acc += w * d * d;
                    }
                    acc / 1000.0
                };
                tps.push(id.tp.unwrap_or(f64::NAN));
                fns_.push(id.fn_rate);
                ises.push(ise1);
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            println!(
                "rho={rho:<8} lam={lam:<5} meanTP={:.3} meanFN={:.3} meanISE1={:.4}",
                mean(&tps),
                mean(&fns_),
                mean(&ises)
            );
        }
    }
}
