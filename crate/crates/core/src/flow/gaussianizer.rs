use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{normal_cdf, normal_pdf, normal_quantile};

/// Minimum samples per component for the empirical variant.
pub const MIN_EMPIRICAL_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaussianizerKind {
    /// Fitted Gaussian CDF followed by the standard normal quantile.
    Parametric,
    /// Midpoint-rank empirical CDF, linearly interpolated, then the normal quantile.
    Empirical,
}

/// Per-component monotone map to a standard normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Parametric { mean: f64, std: f64 },
    /// `probs[i]` is the interpolated CDF value at `knots[i]`; both strictly increasing.
    Empirical { knots: Vec<f64>, probs: Vec<f64> },
}

impl Marginal {
    fn fit_empirical(values: &[f64]) -> Result<Self> {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let k = v.len() as f64;
        let mut knots: Vec<f64> = Vec::new();
        let mut probs: Vec<f64> = Vec::new();
        let mut i = 0;
        while i < v.len() {
            let mut j = i;
            while j + 1 < v.len() && v[j + 1] == v[i] {
                j += 1;
            }
            // midpoint rank of the tie block
            let rank = (i + j) as f64 / 2.0 + 0.5;
            knots.push(v[i]);
            probs.push(rank / k);
            i = j + 1;
        }
        if knots.len() < 2 {
            return Err(Error::Degenerate("constant component".into()));
        }
        Ok(Marginal::Empirical { knots, probs })
    }

    fn to_uniform(knots: &[f64], probs: &[f64], x: f64) -> (f64, f64) {
        let last = knots.len() - 1;
        if x <= knots[0] {
            return (probs[0], 0.0);
        }
        if x >= knots[last] {
            return (probs[last], 0.0);
        }
        let hi = knots.partition_point(|&k| k <= x);
        let lo = hi - 1;
        let slope = (probs[hi] - probs[lo]) / (knots[hi] - knots[lo]);
        (probs[lo] + slope * (x - knots[lo]), slope)
    }

    fn from_uniform(knots: &[f64], probs: &[f64], u: f64) -> (f64, f64) {
        let last = probs.len() - 1;
        let u = u.clamp(probs[0], probs[last]);
        let hi = probs.partition_point(|&p| p <= u).clamp(1, last);
        let lo = hi - 1;
        let slope = (probs[hi] - probs[lo]) / (knots[hi] - knots[lo]);
        (knots[lo] + (u - probs[lo]) / slope, slope)
    }

    /// `(z, dz/dx)`.
    pub fn forward(&self, x: f64) -> (f64, f64) {
        match self {
            Marginal::Parametric { mean, std } => ((x - mean) / std, 1.0 / std),
            Marginal::Empirical { knots, probs } => {
                let (u, du) = Self::to_uniform(knots, probs, x);
                let z = normal_quantile(u);
                (z, du / normal_pdf(z))
            }
        }
    }

    /// `(x, dx/dz)`.
    pub fn inverse(&self, z: f64) -> (f64, f64) {
        match self {
            Marginal::Parametric { mean, std } => (mean + std * z, *std),
            Marginal::Empirical { knots, probs } => {
                let (x, slope) = Self::from_uniform(knots, probs, normal_cdf(z));
                (x, normal_pdf(z) / slope)
            }
        }
    }

    /// Interval on which the map is strictly increasing.
    pub fn fitted_range(&self) -> (f64, f64) {
        match self {
            Marginal::Parametric { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Marginal::Empirical { knots, .. } => (knots[0], knots[knots.len() - 1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussianizer {
    pub marginals: Vec<Marginal>,
}

impl Gaussianizer {
    /// Fits one marginal per column of a `k x n` sample matrix.
    pub fn fit(samples: &DMatrix<f64>, kind: GaussianizerKind) -> Result<Self> {
        let marginals = samples
            .column_iter()
            .enumerate()
            .map(|(j, col)| {
                let v: Vec<f64> = col.iter().copied().collect();
                match kind {
                    GaussianizerKind::Parametric => {
                        let (mean, std) = crate::stats::mean_std(&v);
                        if !(std > 0.0) {
                            return Err(Error::Degenerate(format!("component {j} is constant")));
                        }
                        Ok(Marginal::Parametric { mean, std })
                    }
                    GaussianizerKind::Empirical => {
                        if v.len() < MIN_EMPIRICAL_SAMPLES {
                            return Err(Error::Invalid(format!(
                                "empirical Gaussianization needs at least {MIN_EMPIRICAL_SAMPLES} samples, got {}",
                                v.len()
                            )));
                        }
                        Marginal::fit_empirical(&v)
                            .map_err(|_| Error::Degenerate(format!("component {j} is constant")))
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { marginals })
    }

    /// Exact Gaussianization of a factorial Gaussian with the given moments.
    pub fn from_moments(means: &[f64], variances: &[f64]) -> Result<Self> {
        if means.len() != variances.len() {
            return Err(Error::DimensionMismatch {
                expected: means.len(),
                actual: variances.len(),
            });
        }
        let marginals = means
            .iter()
            .zip(variances)
            .map(|(&mean, &var)| {
                if !(var > 0.0) {
                    return Err(Error::Degenerate("nonpositive variance".into()));
                }
                Ok(Marginal::Parametric { mean, std: var.sqrt() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { marginals })
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    /// `(G(x), diag of J_G(x))`.
    pub fn forward(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let pairs: Vec<(f64, f64)> = self.marginals.iter().zip(x.iter()).map(|(m, &v)| m.forward(v)).collect();
        (
            DVector::from_iterator(pairs.len(), pairs.iter().map(|p| p.0)),
            DVector::from_iterator(pairs.len(), pairs.iter().map(|p| p.1)),
        )
    }

    /// `(G^{-1}(z), diag of J_{G^{-1}}(z))`.
    pub fn inverse(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let pairs: Vec<(f64, f64)> = self.marginals.iter().zip(z.iter()).map(|(m, &v)| m.inverse(v)).collect();
        (
            DVector::from_iterator(pairs.len(), pairs.iter().map(|p| p.0)),
            DVector::from_iterator(pairs.len(), pairs.iter().map(|p| p.1)),
        )
    }

    pub fn transform_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| self.marginals[c].forward(x[(r, c)]).0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, seeded_rng};
    use crate::stats::ks_statistic;
    use rand::Rng;

    #[test]
    fn parametric_standard_normal_is_identity() {
        let mut rng = seeded_rng(1);
        let s = gaussian_matrix(200_000, 1, &mut rng);
        let g = Gaussianizer::fit(&s, GaussianizerKind::Parametric).unwrap();
        let Marginal::Parametric { mean, std } = g.marginals[0] else { panic!() };
        assert!(mean.abs() < 0.01 && (std - 1.0).abs() < 0.01);
    }

    #[test]
    fn parametric_from_moments_is_affine() {
        let g = Gaussianizer::from_moments(&[3.0], &[4.0]).unwrap();
        for x in [-1.0, 0.0, 3.0, 7.5] {
            let (z, dz) = g.forward(&DVector::from_vec(vec![x]));
            assert!((z[0] - (x - 3.0) / 2.0).abs() < 1e-15);
            assert_eq!(dz[0], 0.5);
        }
    }

    fn mixture(k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seeded_rng(seed);
        let base = gaussian_matrix(k, 1, &mut rng);
        DMatrix::from_fn(k, 1, |r, _| {
            if rng.random_bool(0.3) {
                -2.0 + 0.5 * base[(r, 0)]
            } else {
                1.5 + base[(r, 0)]
            }
        })
    }

    #[test]
    fn empirical_gaussianizes_a_mixture() {
        let x = mixture(10_000, 2);
        let g = Gaussianizer::fit(&x, GaussianizerKind::Empirical).unwrap();
        let z = g.transform_rows(&x);
        let v: Vec<f64> = z.iter().copied().collect();
        assert!(ks_statistic(&v, normal_cdf) < 0.05);
    }

    #[test]
    fn empirical_round_trip_and_monotone() {
        let x = mixture(1000, 3);
        let g = Gaussianizer::fit(&x, GaussianizerKind::Empirical).unwrap();
        let (lo, hi) = g.marginals[0].fitted_range();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=500 {
            let v = lo + (hi - lo) * i as f64 / 500.0;
            let (z, dz) = g.marginals[0].forward(v);
            assert!(z > prev);
            assert!(dz > 0.0 || i == 0 || i == 500);
            prev = z;
            let (back, _) = g.marginals[0].inverse(z);
            assert!((back - v).abs() < 1e-6, "{v} -> {z} -> {back}");
        }
    }

    #[test]
    fn fit_errors() {
        let flat = DMatrix::from_element(500, 1, 2.0);
        assert!(matches!(Gaussianizer::fit(&flat, GaussianizerKind::Parametric), Err(Error::Degenerate(_))));
        assert!(matches!(Gaussianizer::fit(&flat, GaussianizerKind::Empirical), Err(Error::Degenerate(_))));
        let few = mixture(50, 1);
        assert!(Gaussianizer::fit(&few, GaussianizerKind::Empirical).is_err());
    }
}
