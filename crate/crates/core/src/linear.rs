//! Gaussian linear ICA: whitening followed by a search for the orthogonal
//! rotation that makes the mixing estimate as sparse as possible.
//!
//! For Gaussian sources the whitened factor `F` of the observation covariance
//! equals the true mixing up to an unknown rotation and column scaling. The
//! rotation is chosen to minimize the number of nonzeros of `F U`, using a
//! smoothed count `sum rho_eps(|(FU)_ij|)` with `rho_eps(t) = t^2 / (t^2 + eps^2)`
//! and an annealed `eps`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::assign;
use crate::linalg::{column_means, derived_seed, givens_product, max_abs, seeded_rng};
use crate::mixing::Mixing;
use crate::optim::NelderMead;
use crate::support::{compute_support, SupportPattern};

/// Entries of the recovered mixing below this fraction of its largest entry are zeroed.
pub const HARD_THRESHOLD: f64 = 1e-6;

/// A mixing matrix with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMixing {
    pub matrix: DMatrix<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<SupportPattern>,
}

impl LinearMixing {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self {
            matrix,
            seed: None,
            mask: None,
        }
    }

    pub fn support(&self, tol: f64) -> SupportPattern {
        compute_support(&self.matrix, tol)
    }
}

impl Mixing for LinearMixing {
    fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }
    fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn eval(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        if s.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: s.len(),
            });
        }
        Ok(&self.matrix * s)
    }
    fn jacobian(&self, _s: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.matrix.clone())
    }
    fn eval_rows(&self, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(s * self.matrix.transpose())
    }
}

/// Givens angles parameterizing a rotation in SO(n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationParam {
    pub dim: usize,
    pub angles: Vec<f64>,
}

impl RotationParam {
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            angles: vec![0.0; dim * dim.saturating_sub(1) / 2],
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        givens_product(self.dim, &self.angles)
    }
}

#[derive(Debug, Clone)]
pub struct Whitening {
    /// `m x n`; `factor * factor^T` is the rank-`n` part of the covariance.
    pub factor: DMatrix<f64>,
    /// `k x n` whitened samples.
    pub latents: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub eigenvalues: Vec<f64>,
}

/// Whitens `k x m` samples down to `n` components using the leading
/// eigenpairs of the (1/k) sample covariance.
pub fn whiten(x: &DMatrix<f64>, n: usize) -> Result<Whitening> {
    let (k, m) = x.shape();
    if n == 0 || n > m {
        return Err(Error::Invalid(format!("target dimension {n} must be in 1..={m}")));
    }
    if k < 2 {
        return Err(Error::RankDeficient { rank: 0, required: n });
    }
    let mean = column_means(x);
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let cov = (centered.transpose() * &centered) / k as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > 1e-10 * top.max(f64::MIN_POSITIVE))
        .count();
    if rank < n {
        return Err(Error::RankDeficient { rank, required: n });
    }
    let mut factor = DMatrix::zeros(m, n);
    let mut unmix = DMatrix::zeros(m, n);
    let mut eigenvalues = Vec::with_capacity(n);
    for (c, &i) in order.iter().take(n).enumerate() {
        let lambda = eig.eigenvalues[i];
        let v = eig.eigenvectors.column(i);
        factor.set_column(c, &(v * lambda.sqrt()));
        unmix.set_column(c, &(v / lambda.sqrt()));
        eigenvalues.push(lambda);
    }
    Ok(Whitening {
        factor,
        latents: centered * unmix,
        mean,
        eigenvalues,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RotationSearchConfig {
    pub restarts: usize,
    pub eps_schedule: Vec<f64>,
    pub max_evals_per_stage: usize,
    pub seed: u64,
}

impl Default for RotationSearchConfig {
    fn default() -> Self {
        Self {
            restarts: 32,
            eps_schedule: vec![1.0, 0.3, 0.1, 0.03, 0.01],
            max_evals_per_stage: 600,
            seed: 0,
        }
    }
}

/// One annealing stage of one restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub restart: usize,
    pub eps: f64,
    /// Smoothed objective at this stage's `eps`, before and after the stage.
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotationSearch {
    pub rotation: DMatrix<f64>,
    pub param: RotationParam,
    /// Smoothed objective at the final `eps`.
    pub objective: f64,
    /// Number of entries of `F U` above the hard threshold.
    pub l0: usize,
    pub best_restart: usize,
    pub trace: Vec<StageRecord>,
}

/// `sum_ij rho_eps(|m_ij|)`.
pub fn smoothed_l0(m: &DMatrix<f64>, eps: f64) -> f64 {
    let e2 = eps * eps;
    m.iter().map(|v| v * v / (v * v + e2)).sum()
}

fn thresholded_l0(m: &DMatrix<f64>) -> usize {
    let tau = HARD_THRESHOLD * max_abs(m);
    m.iter().filter(|v| v.abs() > tau).count()
}

/// Rotation `U` making `F U` sparsest under the annealed smoothed count.
pub fn sparsest_rotation(factor: &DMatrix<f64>, config: &RotationSearchConfig) -> Result<RotationSearch> {
    let n = factor.ncols();
    if config.eps_schedule.is_empty() || config.eps_schedule.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Invalid("eps schedule must be nonempty and positive".into()));
    }
    let restarts = config.restarts.max(1);
    let dim = n * n.saturating_sub(1) / 2;
    let nm = NelderMead {
        max_evals: config.max_evals_per_stage,
        ..Default::default()
    };
    let objective = |angles: &[f64], eps: f64| smoothed_l0(&(factor * givens_product(n, angles)), eps);

    let runs: Vec<(Vec<f64>, f64, Vec<StageRecord>)> = (0..restarts)
        .into_par_iter()
        .map(|restart| {
            let mut rng = seeded_rng(derived_seed(config.seed, restart as u64));
            let mut angles: Vec<f64> = if restart == 0 {
                vec![0.0; dim]
            } else {
                (0..dim)
                    .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
                    .collect()
            };
            // Staggered entry points keep restarts from all collapsing into
            // the basin favoured by the coarsest stage.
            let first_stage = restart % config.eps_schedule.len();
            let mut trace = Vec::with_capacity(config.eps_schedule.len());
            let mut value = 0.0;
            for &eps in &config.eps_schedule[first_stage..] {
                let start = objective(&angles, eps);
                let step = 0.5 * eps.sqrt().min(1.0);
                let found = nm.minimize(|a| objective(a, eps), &angles, step);
                if found.value <= start {
                    angles = found.x;
                    value = found.value;
                } else {
                    value = start;
                }
                trace.push(StageRecord {
                    restart,
                    eps,
                    start,
                    end: value,
                });
            }
            (angles, value, trace)
        })
        .collect();

    let best_restart = runs
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.1.total_cmp(&b.1).then(ia.cmp(ib)))
        .map(|(i, _)| i)
        .expect("at least one restart");
    let trace = runs.iter().flat_map(|r| r.2.iter().cloned()).collect();
    let (angles, objective_value, _) = runs.into_iter().nth(best_restart).expect("index in range");
    let param = RotationParam { dim: n, angles };
    let rotation = param.matrix();
    let l0 = thresholded_l0(&(factor * &rotation));
    Ok(RotationSearch {
        rotation,
        param,
        objective: objective_value,
        l0,
        best_restart,
        trace,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearRecovery {
    pub mixing: LinearMixing,
    pub search: RotationSearch,
}

/// Estimates the mixing of Gaussian linear ICA as `F U`, with `U` the sparsest rotation.
pub fn recover_linear_gaussian(x: &DMatrix<f64>, n: usize, config: &RotationSearchConfig) -> Result<LinearRecovery> {
    let w = whiten(x, n)?;
    let search = sparsest_rotation(&w.factor, config)?;
    let mut a_hat = &w.factor * &search.rotation;
    let tau = HARD_THRESHOLD * max_abs(&a_hat);
    a_hat.iter_mut().filter(|v| v.abs() <= tau).for_each(|v| *v = 0.0);
    Ok(LinearRecovery {
        mixing: LinearMixing {
            matrix: a_hat,
            seed: Some(config.seed),
            mask: None,
        },
        search,
    })
}

/// `1 - mean |cos|` between matched columns of `a_hat` and `a` under the best
/// assignment; zero iff `a_hat = a D P`.
pub fn signed_perm_distance(a_hat: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<f64> {
    if a_hat.shape() != a.shape() {
        return Err(Error::shape(
            format!("{}x{}", a.nrows(), a.ncols()),
            format!("{}x{}", a_hat.nrows(), a_hat.ncols()),
        ));
    }
    let norms = |m: &DMatrix<f64>, label: &str| -> Result<Vec<f64>> {
        m.column_iter()
            .enumerate()
            .map(|(j, c)| {
                let norm = c.norm();
                if norm == 0.0 {
                    Err(Error::Degenerate(format!("{label} column {j} is zero")))
                } else {
                    Ok(norm)
                }
            })
            .collect()
    };
    let nh = norms(a_hat, "estimate")?;
    let na = norms(a, "reference")?;
    let n = a.ncols();
    let cos = DMatrix::from_fn(n, n, |j, i| (a_hat.column(i).dot(&a.column(j)) / (nh[i] * na[j])).abs());
    let perm = assign(&cos)?;
    let total: f64 = perm.iter().enumerate().map(|(j, &i)| cos[(j, i)]).sum();
    Ok((1.0 - total / n as f64).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{covariance, gaussian_matrix, orthogonality_deviation, random_rotation, rotation_2d};
    use std::f64::consts::FRAC_PI_4;

    fn fast() -> RotationSearchConfig {
        RotationSearchConfig {
            restarts: 8,
            ..Default::default()
        }
    }

    #[test]
    fn whitening_gives_identity_covariance() {
        let mut rng = seeded_rng(1);
        let a = gaussian_matrix(3, 3, &mut rng);
        let s = gaussian_matrix(10_000, 3, &mut rng);
        let x = &s * a.transpose();
        let w = whiten(&x, 3).unwrap();
        let c = covariance(&w.latents);
        assert!((c - DMatrix::identity(3, 3)).norm() < 1e-6);
        // F F^T equals the sample covariance
        assert!((&w.factor * w.factor.transpose() - covariance(&x)).norm() < 1e-9);
        // and reconstructs the centered data
        let recon = &w.latents * w.factor.transpose();
        let mut centered = x.clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-w.mean[j]);
        }
        assert!((recon - centered).amax() < 1e-9);
    }

    #[test]
    fn whitening_white_data_is_a_rotation() {
        let mut rng = seeded_rng(2);
        let raw = gaussian_matrix(4000, 3, &mut rng);
        let pre = whiten(&raw, 3).unwrap().latents;
        let w = whiten(&pre, 3).unwrap();
        assert!((w.factor.transpose() * &w.factor - DMatrix::identity(3, 3)).amax() < 1e-9);
        assert!((&w.latents * w.factor.transpose() - &pre).amax() < 1e-9);
    }

    #[test]
    fn whitening_rejects_rank_deficiency() {
        let mut rng = seeded_rng(3);
        let s = gaussian_matrix(500, 2, &mut rng);
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let x = &s * a.transpose();
        assert!(whiten(&x, 2).is_ok());
        assert!(matches!(whiten(&x, 3), Err(Error::RankDeficient { rank: 2, required: 3 })));
    }

    #[test]
    fn undercomplete_whitening_at_finite_sample() {
        let mut rng = seeded_rng(4);
        let a = gaussian_matrix(3, 3, &mut rng);
        let s = gaussian_matrix(10_000, 3, &mut rng);
        let w = whiten(&(&s * a.transpose()), 3).unwrap();
        assert!((covariance(&w.latents) - DMatrix::identity(3, 3)).amax() < 2e-2);
    }

    #[test]
    fn identity_factor_is_already_sparsest() {
        let r = sparsest_rotation(&DMatrix::identity(2, 2), &fast()).unwrap();
        assert_eq!(r.l0, 2);
        assert!(orthogonality_deviation(&r.rotation) < 1e-10);
    }

    #[test]
    fn rotated_sparse_factor_is_unrotated() {
        let mut rng = seeded_rng(5);
        let a = DMatrix::from_row_slice(4, 2, &[1.5, 0.0, 0.0, -0.8, 0.7, 0.0, 0.0, 1.1]);
        let r = rotation_2d(0.61);
        let f = &a * &r;
        let search = sparsest_rotation(&f, &fast()).unwrap();
        let rec = &f * &search.rotation;
        assert!(signed_perm_distance(&rec, &a).unwrap() < 1e-9);
        assert_eq!(search.l0, 4);
        // stays exact for a random rotation in 3d too
        let a3 = DMatrix::from_row_slice(5, 3, &[
            1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, -1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.7,
        ]);
        let f3 = &a3 * random_rotation(3, &mut rng);
        let search = sparsest_rotation(&f3, &fast()).unwrap();
        assert!(signed_perm_distance(&(&f3 * &search.rotation), &a3).unwrap() < 1e-8);
    }

    #[test]
    fn dense_factor_stays_dense() {
        let f = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.3, 0.4, 1.2, 0.8, -0.7, 0.5, 1.1]);
        let search = sparsest_rotation(&f, &fast()).unwrap();
        assert!(search.l0 >= 6, "{}", search.l0);
    }

    #[test]
    fn stages_never_increase_their_objective() {
        let mut rng = seeded_rng(6);
        let f = gaussian_matrix(4, 3, &mut rng);
        let search = sparsest_rotation(&f, &fast()).unwrap();
        // restarts enter the schedule at staggered stages
        assert_eq!(search.trace.len(), (0..8).map(|r| 5 - r % 5).sum::<usize>());
        assert!(search.trace.iter().all(|s| s.end <= s.start));
    }

    #[test]
    fn search_is_deterministic() {
        let mut rng = seeded_rng(7);
        let f = gaussian_matrix(3, 3, &mut rng);
        let a = sparsest_rotation(&f, &fast()).unwrap();
        let b = sparsest_rotation(&f, &fast()).unwrap();
        assert_eq!(a.param, b.param);
    }

    #[test]
    fn distance_examples() {
        let mut rng = seeded_rng(8);
        let a = gaussian_matrix(3, 3, &mut rng);
        assert!(signed_perm_distance(&a, &a).unwrap() < 1e-12);
        let p = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -1.0, 0.5]));
        assert!(signed_perm_distance(&(&a * d * p), &a).unwrap() < 1e-12);
        let r = rotation_2d(FRAC_PI_4);
        let dist = signed_perm_distance(&r, &DMatrix::identity(2, 2)).unwrap();
        assert!((dist - (1.0 - FRAC_PI_4.cos())).abs() < 1e-12);
        let mut z = a.clone();
        z.column_mut(1).fill(0.0);
        assert!(signed_perm_distance(&z, &a).is_err());
    }

    #[test]
    fn recovers_scaled_permutation_mixing() {
        let mut rng = seeded_rng(9);
        let p = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0])) * p;
        let s = gaussian_matrix(10_000, 3, &mut rng);
        let x = &s * a.transpose();
        let rec = recover_linear_gaussian(&x, 3, &fast()).unwrap();
        assert!(signed_perm_distance(&rec.mixing.matrix, &a).unwrap() < 0.02);
    }
}
