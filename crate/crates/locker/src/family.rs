//! Response families: mean function, working response/weight for the
//! reweighted least-squares iteration, and kernel-weighted deviances.

use crate::error::{LockerError, Result};
use crate::kernel::PairDesign;

/// Linear predictors are clamped to this range before exp/logistic to keep
/// the working quantities finite.
pub const ETA_CLAMP: f64 = 30.0;

/// Floor (and ceiling, for Bernoulli) applied to fitted means before logs.
pub const MEAN_FLOOR: f64 = 1e-10;

/// Response family with its canonical mean function `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Identity mean: `g(η) = η`.
    Gaussian,
    /// Logistic mean: `g(η) = 1 / (1 + e^{-η})`.
    Bernoulli,
    /// Exponential mean: `g(η) = e^η`.
    Poisson,
}

impl Family {
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Family::Gaussian),
            "bernoulli" => Ok(Family::Bernoulli),
            "poisson" => Ok(Family::Poisson),
            other => Err(LockerError::param(
                "family",
                format!("unknown family `{other}` (expected gaussian, bernoulli or poisson)"),
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Bernoulli => "bernoulli",
            Family::Poisson => "poisson",
        }
    }

    /// Mean `g(η)` after clamping the linear predictor.
    pub fn mean(&self, eta: f64) -> f64 {
        let eta = eta.clamp(-ETA_CLAMP, ETA_CLAMP);
        match self {
            Family::Gaussian => eta,
            Family::Bernoulli => 1.0 / (1.0 + (-eta).exp()),
            Family::Poisson => eta.exp(),
        }
    }

    /// Mean derivative `g'(η)`, strictly positive on the clamped range.
    pub fn mean_deriv(&self, eta: f64) -> f64 {
        let eta = eta.clamp(-ETA_CLAMP, ETA_CLAMP);
        match self {
            Family::Gaussian => 1.0,
            Family::Bernoulli => {
                let mu = 1.0 / (1.0 + (-eta).exp());
                mu * (1.0 - mu)
            }
            Family::Poisson => eta.exp(),
        }
    }

    /// Working response `Z = η + (y - g(η)) f'(g(η))` and working weight
    /// `H = 1 / f'(g(η)) = g'(η)`, elementwise.
    pub fn working_quantities(&self, eta: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if eta.len() != y.len() {
            return Err(LockerError::param("eta", "eta and y lengths differ"));
        }
        let mut z = Vec::with_capacity(eta.len());
        let mut h = Vec::with_capacity(eta.len());
        for (&e, &yv) in eta.iter().zip(y.iter()) {
            if !e.is_finite() || !yv.is_finite() {
                return Err(LockerError::NonFinite {
                    context: "working quantities input",
                });
            }
            let ec = e.clamp(-ETA_CLAMP, ETA_CLAMP);
            let gp = self.mean_deriv(ec);
            let zi = ec + (yv - self.mean(ec)) / gp;
            if !zi.is_finite() || !gp.is_finite() {
                return Err(LockerError::NonFinite {
                    context: "working quantities",
                });
            }
            z.push(zi);
            h.push(gp);
        }
        Ok((z, h))
    }

    /// Kernel-weighted deviance over the retained pairs.
    ///
    /// `fitted` holds the fitted means aligned with the design rows. Bernoulli
    /// and Poisson means are clamped away from the boundary of their range
    /// before taking logs; the Bernoulli convention `0·log 0 = 0` applies.
    pub fn deviance(&self, pairs: &PairDesign, fitted: &[f64]) -> Result<f64> {
        if fitted.len() != pairs.num_retained() {
            return Err(LockerError::param(
                "fitted",
                "length must match retained pair count",
            ));
        }
        let w = pairs.weights();
        let y = pairs.responses();
        let mut dev = 0.0;
        for r in 0..fitted.len() {
            let mu = fitted[r];
            if !mu.is_finite() {
                return Err(LockerError::NonFinite { context: "fitted mean" });
            }
            let term = match self {
                Family::Gaussian => {
                    let d = y[r] - mu;
                    d * d
                }
                Family::Bernoulli => {
                    let mu = mu.clamp(MEAN_FLOOR, 1.0 - MEAN_FLOOR);
                    let yv = y[r];
                    let a = if yv > 0.0 { yv * (yv / mu).ln() } else { 0.0 };
                    let b = if yv < 1.0 {
                        (1.0 - yv) * ((1.0 - yv) / (1.0 - mu)).ln()
                    } else {
                        0.0
                    };
                    2.0 * (a + b)
                }
                Family::Poisson => {
                    let mu = mu.max(MEAN_FLOOR);
                    let yv = y[r];
                    let log_term = if yv != 0.0 { yv * mu.ln() } else { 0.0 };
                    2.0 * (mu - log_term)
                }
            };
            if !term.is_finite() {
                return Err(LockerError::NonFinite { context: "deviance term" });
            }
            dev += w[r] * term;
        }
        Ok(dev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    fn toy_pairs(weights: Vec<f64>, responses: Vec<f64>) -> PairDesign {
        let n = weights.len();
        let design = DMatrix::from_element(n, 2, 0.5);
        PairDesign::from_parts(
            design,
            DVector::from_vec(weights),
            DVector::from_vec(responses),
            vec![0; n],
            n,
            1,
        )
        .unwrap()
    }

    #[test]
    fn means_at_reference_points() {
        assert_eq!(Family::Gaussian.mean(2.5), 2.5);
        assert_eq!(Family::Bernoulli.mean(0.0), 0.5);
        assert_eq!(Family::Poisson.mean(0.0), 1.0);
    }

    #[test]
    fn mean_deriv_matches_finite_differences() {
        let h = 1e-6;
        for family in [Family::Gaussian, Family::Bernoulli, Family::Poisson] {
            for &eta in &[-3.0, -0.7, 0.0, 1.1, 4.0] {
                let fd = (family.mean(eta + h) - family.mean(eta - h)) / (2.0 * h);
                assert_abs_diff_eq!(family.mean_deriv(eta), fd, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn gaussian_working_quantities_collapse() {
        let eta = [0.3, -1.0, 2.0];
        let y = [1.0, 0.0, -2.0];
        let (z, h) = Family::Gaussian.working_quantities(&eta, &y).unwrap();
        assert_eq!(z, y.to_vec());
        assert!(h.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn bernoulli_working_quantities_at_zero() {
        let (z, h) = Family::Bernoulli.working_quantities(&[0.0], &[1.0]).unwrap();
        assert_abs_diff_eq!(z[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h[0], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn poisson_working_quantities_at_zero() {
        let (z, h) = Family::Poisson.working_quantities(&[0.0], &[3.0]).unwrap();
        assert_abs_diff_eq!(z[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn working_quantities_reject_non_finite() {
        assert!(matches!(
            Family::Gaussian.working_quantities(&[f64::NAN], &[1.0]),
            Err(LockerError::NonFinite { .. })
        ));
    }

    #[test]
    fn gaussian_deviance_zero_at_perfect_fit() {
        let pairs = toy_pairs(vec![1.0, 2.0], vec![0.7, -0.3]);
        let dev = Family::Gaussian.deviance(&pairs, &[0.7, -0.3]).unwrap();
        assert_eq!(dev, 0.0);
    }

    #[test]
    fn bernoulli_deviance_closed_form() {
        let pairs = toy_pairs(vec![1.0], vec![1.0]);
        let dev = Family::Bernoulli.deviance(&pairs, &[0.5]).unwrap();
        assert_abs_diff_eq!(dev, 2.0 * 2.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn poisson_deviance_zero_count() {
        let pairs = toy_pairs(vec![2.0], vec![0.0]);
        let dev = Family::Poisson.deviance(&pairs, &[1.5]).unwrap();
        assert_abs_diff_eq!(dev, 6.0, epsilon = 1e-12);
    }

    #[test]
    fn deviance_nonnegative_and_increasing_in_misfit() {
        let pairs = toy_pairs(vec![1.0, 1.0, 1.0], vec![1.0, 0.0, 1.0]);
        for family in [Family::Gaussian, Family::Bernoulli] {
            let close = family.deviance(&pairs, &[0.9, 0.1, 0.9]).unwrap();
            let far = family.deviance(&pairs, &[0.6, 0.4, 0.6]).unwrap();
            assert!(close >= 0.0);
            assert!(far > close);
        }
    }

    #[test]
    fn family_names_round_trip() {
        for name in ["gaussian", "bernoulli", "poisson"] {
            assert_eq!(Family::from_name(name).unwrap().name(), name);
        }
        assert!(Family::from_name("gamma").is_err());
    }
}
