//! Normal-distribution helpers and Kolmogorov–Smirnov statistics.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use std::sync::OnceLock;

fn standard() -> &'static Normal {
    static N: OnceLock<Normal> = OnceLock::new();
    N.get_or_init(|| Normal::new(0.0, 1.0).expect("valid parameters"))
}

pub fn normal_cdf(z: f64) -> f64 {
    standard().cdf(z)
}

pub fn normal_pdf(z: f64) -> f64 {
    standard().pdf(z)
}

pub fn normal_quantile(p: f64) -> f64 {
    standard().inverse_cdf(p)
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// One-sample statistic `sup |F_n - cdf|`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let v = sorted(samples);
    let k = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / k).abs().max(((i + 1) as f64 / k - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample statistic `sup |F_a - F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_vector, seeded_rng};

    #[test]
    fn quantile_inverts_cdf() {
        for z in [-4.0, -1.3, 0.0, 0.2, 2.7] {
            assert!((normal_quantile(normal_cdf(z)) - z).abs() < 1e-9);
        }
    }

    #[test]
    fn ks_of_normal_samples_is_small() {
        let mut rng = seeded_rng(3);
        let v: Vec<f64> = gaussian_vector(10_000, &mut rng).iter().copied().collect();
        assert!(ks_statistic(&v, normal_cdf) < 0.02);
        let shifted: Vec<f64> = v.iter().map(|x| x + 0.5).collect();
        assert!(ks_statistic(&shifted, normal_cdf) > 0.15);
        let w: Vec<f64> = gaussian_vector(10_000, &mut rng).iter().copied().collect();
        assert!(ks_two_sample(&v, &w) < 0.03);
        assert!(ks_two_sample(&v, &shifted) > 0.15);
        assert_eq!(ks_two_sample(&v, &v), 0.0);
    }
}
