use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Prior hyperparameters. Gamma priors use shape/rate; `σ²` is
/// inverse-gamma(`a_sigma`, `b_sigma`).
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparams {
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub a_lambda: f64,
    pub b_lambda: f64,
    pub a_tau: f64,
    pub b_tau: f64,
    pub a_z: f64,
    pub b_z: f64,
    pub a_phi: f64,
    pub b_phi: f64,
    pub mu_gamma: Vec<f64>,
    pub sigma_gamma: DMatrix<f64>,
}

impl Hyperparams {
    /// Default settings for a coefficient tensor of the given order and ranks.
    pub fn defaults(order: usize, ranks: &[usize], q: usize) -> Self {
        let d = order as f64;
        let min_rank = ranks.iter().copied().min().unwrap_or(1).max(1) as f64;
        let a_lambda = 3.0;
        let a_phi = 3.0;
        let rank_rate = min_rank.powf(1.0 / d - 1.0);
        Self {
            a_sigma: 3.0,
            b_sigma: 20.0,
            a_lambda,
            b_lambda: a_lambda.powf(1.0 / (2.0 * d)),
            a_tau: 1.0,
            b_tau: rank_rate,
            a_z: 1.0,
            b_z: rank_rate,
            a_phi,
            b_phi: a_phi.powf(1.0 / (2.0 * d)),
            mu_gamma: vec![0.0; q],
            sigma_gamma: DMatrix::identity(q, q) * 900.0,
        }
    }

    pub fn q(&self) -> usize {
        self.mu_gamma.len()
    }

    pub fn scalars(&self) -> [(&'static str, f64); 10] {
        [
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
            ("a_lambda", self.a_lambda),
            ("b_lambda", self.b_lambda),
            ("a_tau", self.a_tau),
            ("b_tau", self.b_tau),
            ("a_z", self.a_z),
            ("b_z", self.b_z),
            ("a_phi", self.a_phi),
            ("b_phi", self.b_phi),
        ]
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        for (name, v) in self.scalars() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.mu_gamma.len() != q || self.sigma_gamma.shape() != (q, q) {
            return Err(Error::Shape(format!(
                "gamma prior has length {} and covariance {:?}, expected q = {q}",
                self.mu_gamma.len(),
                self.sigma_gamma.shape()
            )));
        }
        if q > 0 && self.sigma_gamma.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("sigma_gamma".into()));
        }
        Ok(())
    }

    /// Prior mean of `σ²`, or `b_sigma` when the mean does not exist.
    pub fn sigma2_prior_mean(&self) -> f64 {
        if self.a_sigma > 1.0 {
            self.b_sigma / (self.a_sigma - 1.0)
        } else {
            self.b_sigma
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_rank_formulas() {
        let h = Hyperparams::defaults(2, &[4, 4], 3);
        assert_eq!((h.a_sigma, h.b_sigma), (3.0, 20.0));
        assert!((h.b_lambda - 3f64.powf(0.25)).abs() < 1e-15);
        assert!((h.b_tau - 0.5).abs() < 1e-15);
        assert!((h.b_z - 0.5).abs() < 1e-15);
        assert!((h.b_phi - 1.316_074_012_952_492).abs() < 1e-12);
        assert_eq!(h.sigma_gamma[(1, 1)], 900.0);
        assert_eq!(h.mu_gamma, vec![0.0; 3]);
        h.validate(3).unwrap();

        // All ranks 1: tau and z have prior mean 1.
        let h = Hyperparams::defaults(3, &[1, 1, 1], 0);
        assert_eq!(h.a_tau / h.b_tau, 1.0);
        // Unequal ranks use the minimum.
        let h = Hyperparams::defaults(2, &[3, 2], 0);
        assert!((h.b_tau - 2f64.powf(-0.5)).abs() < 1e-15);
    }

    #[test]
    fn validate_rejects_bad_values() {
        let mut h = Hyperparams::defaults(2, &[2, 2], 1);
        h.b_tau = 0.0;
        assert!(h.validate(1).is_err());
        let h = Hyperparams::defaults(2, &[2, 2], 1);
        assert!(h.validate(2).is_err());
        let mut h = Hyperparams::defaults(2, &[2, 2], 2);
        h.sigma_gamma[(0, 1)] = 2000.0;
        h.sigma_gamma[(1, 0)] = 2000.0;
        assert!(h.validate(2).is_err());
    }
}
