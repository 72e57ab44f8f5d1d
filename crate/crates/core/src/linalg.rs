//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Rng64 = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream from a base seed and a label.
pub fn derived_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(n: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign correction).
pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let qr = gaussian_matrix(n, n, rng).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Haar rotation (determinant +1).
pub fn random_rotation(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut q = random_orthogonal(n, rng);
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

/// `max |U U^T - I|`.
pub fn orthogonality_deviation(u: &DMatrix<f64>) -> f64 {
    let n = u.nrows();
    let g = u * u.transpose();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Rank with singular values below `rel_tol * sigma_max` treated as zero.
pub fn numeric_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Column-wise sample mean of a `k x d` data matrix.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let k = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / k))
}

/// Biased (1/k) sample covariance of a `k x d` data matrix.
pub fn covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = column_means(x);
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    (centered.transpose() * &centered) / x.nrows() as f64
}

/// Product of plane rotations `G(0,1) G(0,2) ... G(n-2,n-1)` with the given angles.
pub fn givens_product(n: usize, angles: &[f64]) -> DMatrix<f64> {
    debug_assert_eq!(angles.len(), n * (n - 1) / 2);
    let mut u = DMatrix::<f64>::identity(n, n);
    let mut idx = 0;
    for p in 0..n {
        for q in (p + 1)..n {
            let (s, c) = angles[idx].sin_cos();
            // u <- u * G(p, q, theta); only columns p and q change
            for r in 0..n {
                let up = u[(r, p)];
                let uq = u[(r, q)];
                u[(r, p)] = c * up + s * uq;
                u[(r, q)] = -s * up + c * uq;
            }
            idx += 1;
        }
    }
    u
}

pub fn rotation_2d(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn givens_product_is_orthogonal() {
        let mut rng = seeded_rng(3);
        for n in 2..6 {
            let angles: Vec<f64> = (0..n * (n - 1) / 2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let u = givens_product(n, &angles);
            assert!(orthogonality_deviation(&u) < 1e-12);
            assert!((u.determinant() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn random_rotation_has_unit_determinant() {
        let mut rng = seeded_rng(1);
        let u = random_rotation(4, &mut rng);
        assert!(orthogonality_deviation(&u) < 1e-12);
        assert!((u.determinant() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rank_of_outer_product_is_one() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let m = &v * v.transpose();
        assert_eq!(numeric_rank(&m, 1e-9), 1);
        assert_eq!(numeric_rank(&DMatrix::zeros(3, 3), 1e-9), 0);
    }
}
