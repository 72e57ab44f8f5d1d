//! Factorial Gaussian prior `p(s) = prod_i exp(-t1_i s_i - t2_i s_i^2) / Z_i`.
//!
//! Stored as means and unconstrained `rho` with `var = softplus(rho)`, which
//! keeps `t2 = 1 / (2 var)` positive for any parameter value.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub mean: Vec<f64>,
    pub rho: Vec<f64>,
}

impl GaussianPrior {
    pub fn new(mean: &[f64], variance: &[f64]) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                actual: variance.len(),
            });
        }
        if let Some(v) = variance.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Invalid(format!("prior variance must be finite and positive, got {v}")));
        }
        Ok(Self {
            mean: mean.to_vec(),
            rho: variance.iter().map(|&v| softplus_inverse(v)).collect(),
        })
    }

    pub fn standard(n: usize) -> Self {
        Self::new(&vec![0.0; n], &vec![1.0; n]).expect("unit variances are valid")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    /// `t1_i = -mu_i / var_i`.
    pub fn theta1(&self) -> Vec<f64> {
        self.mean.iter().zip(self.variance()).map(|(m, v)| -m / v).collect()
    }

    /// `t2_i = 1 / (2 var_i)`.
    pub fn theta2(&self) -> Vec<f64> {
        self.variance().iter().map(|v| 0.5 / v).collect()
    }

    /// `log Z_i = t1^2 / (4 t2) + log(pi / t2) / 2`.
    pub fn log_normalizers(&self) -> Vec<f64> {
        self.theta1()
            .iter()
            .zip(self.theta2())
            .map(|(t1, t2)| t1 * t1 / (4.0 * t2) + 0.5 * (PI / t2).ln())
            .collect()
    }

    pub fn log_density(&self, s: &DVector<f64>) -> f64 {
        let (t1, t2, lz) = (self.theta1(), self.theta2(), self.log_normalizers());
        (0..self.dim()).map(|i| -t1[i] * s[i] - t2[i] * s[i] * s[i] - lz[i]).sum()
    }

    pub fn num_params(&self) -> usize {
        2 * self.dim()
    }

    /// Means followed by `rho`.
    pub fn params(&self) -> Vec<f64> {
        self.mean.iter().chain(&self.rho).copied().collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                actual: params.len(),
            });
        }
        let n = self.dim();
        self.mean.copy_from_slice(&params[..n]);
        self.rho.copy_from_slice(&params[n..]);
        Ok(())
    }
}

/// Tape leaves for the prior parameters.
pub struct PriorVars {
    mean: Var,
    rho: Var,
}

impl PriorVars {
    pub fn record(tape: &mut Tape, prior: &GaussianPrior) -> Self {
        let n = prior.dim();
        Self {
            mean: tape.leaf(DMatrix::from_row_slice(1, n, &prior.mean)),
            rho: tape.leaf(DMatrix::from_row_slice(1, n, &prior.rho)),
        }
    }

    /// `B x 1` log-densities of a `B x n` batch.
    pub fn log_density(&self, tape: &mut Tape, s: Var) -> Var {
        let n = tape.value(s).ncols();
        let neg_mean = tape.neg(self.mean);
        let centered = tape.add_row(s, neg_mean);
        let sq = tape.square(centered);
        let var = tape.softplus(self.rho);
        let log_var = tape.log(var);
        let neg_log_var = tape.neg(log_var);
        let inv_var = tape.exp(neg_log_var);
        let half_inv = tape.scale(inv_var, 0.5);
        let quad = tape.mul_row(sq, half_inv);
        let quad = tape.row_sum(quad);
        let log_norm = tape.sum(log_var);
        let log_norm = tape.scale(log_norm, 0.5);
        let log_norm = tape.add_scalar(log_norm, 0.5 * n as f64 * (2.0 * PI).ln());
        // broadcast the 1x1 normalizer over the batch
        let neg_quad = tape.neg(quad);
        let neg_norm = tape.neg(log_norm);
        tape.add_row(neg_quad, neg_norm)
    }

    /// Gradient with respect to means then `rho`.
    pub fn gradient(&self, grads: &crate::autodiff::Gradients) -> Vec<f64> {
        grads.wrt(self.mean).iter().chain(grads.wrt(self.rho).iter()).copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, seeded_rng};

    #[test]
    fn natural_parameters_and_density() {
        let p = GaussianPrior::new(&[1.0, -0.5], &[2.0, 0.5]).unwrap();
        for (v, want) in p.variance().iter().zip([2.0, 0.5]) {
            assert!((v - want).abs() < 1e-12);
        }
        assert!((p.theta1()[0] + 0.5).abs() < 1e-12);
        assert!((p.theta2()[1] - 1.0).abs() < 1e-12);
        let s = DVector::from_vec(vec![0.3, 0.2]);
        let direct: f64 = [(0.3f64, 1.0f64, 2.0f64), (0.2, -0.5, 0.5)]
            .iter()
            .map(|(x, m, v)| -(x - m).powi(2) / (2.0 * v) - 0.5 * (2.0 * PI * v).ln())
            .sum();
        assert!((p.log_density(&s) - direct).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_variance() {
        assert!(GaussianPrior::new(&[0.0], &[0.0]).is_err());
        assert!(GaussianPrior::new(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn taped_density_matches() {
        let mut rng = seeded_rng(5);
        let p = GaussianPrior::new(&[0.2, -1.0, 0.0], &[0.7, 1.9, 40.0]).unwrap();
        let s = gaussian_matrix(4, 3, &mut rng);
        let mut tape = Tape::new();
        let vars = PriorVars::record(&mut tape, &p);
        let sv = tape.leaf(s.clone());
        let out = vars.log_density(&mut tape, sv);
        for b in 0..4 {
            let want = p.log_density(&s.row(b).transpose());
            assert!((tape.value(out)[(b, 0)] - want).abs() < 1e-12);
        }
    }
}
