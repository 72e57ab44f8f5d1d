//! The rotated-Gaussian measure-preserving automorphism `G^{-1} . U . G`
//! composed with a mixing: `f_hat = f . G^{-1} . U . G`. When `G` maps the
//! source distribution to an isotropic Gaussian, `f_hat(s)` has the same
//! distribution as `f(s)` although `f_hat != f`.

use nalgebra::{DMatrix, DVector};

use super::gaussianizer::Gaussianizer;
use crate::error::{Error, Result};
use crate::linalg::orthogonality_deviation;
use crate::mixing::Mixing;

/// Required orthogonality of the rotation.
pub const ROTATION_TOL: f64 = 1e-10;

pub struct RotatedGaussianMpa<M> {
    pub mixing: M,
    pub rotation: DMatrix<f64>,
    pub gaussianizer: Gaussianizer,
}

pub fn rotated_gaussian_mpa<M: Mixing>(
    mixing: M,
    rotation: DMatrix<f64>,
    gaussianizer: Gaussianizer,
) -> Result<RotatedGaussianMpa<M>> {
    let n = mixing.input_dim();
    if rotation.shape() != (n, n) {
        return Err(Error::shape(format!("{n}x{n}"), format!("{}x{}", rotation.nrows(), rotation.ncols())));
    }
    if gaussianizer.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: gaussianizer.dim(),
        });
    }
    let deviation = orthogonality_deviation(&rotation);
    if !(deviation < ROTATION_TOL) {
        return Err(Error::NonOrthogonal { deviation });
    }
    Ok(RotatedGaussianMpa {
        mixing,
        rotation,
        gaussianizer,
    })
}

impl<M: Mixing> RotatedGaussianMpa<M> {
    /// The automorphism `G^{-1} U G` on source space with its Jacobian.
    pub fn automorphism(&self, s: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (z, dz) = self.gaussianizer.forward(s);
        let (moved, dmoved) = self.gaussianizer.inverse(&(&self.rotation * z));
        let jac = DMatrix::from_diagonal(&dmoved) * &self.rotation * DMatrix::from_diagonal(&dz);
        (moved, jac)
    }
}

impl<M: Mixing> Mixing for RotatedGaussianMpa<M> {
    fn input_dim(&self) -> usize {
        self.mixing.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.mixing.output_dim()
    }
    fn eval(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        if s.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: s.len(),
            });
        }
        let (moved, _) = self.automorphism(s);
        self.mixing.eval(&moved)
    }
    fn jacobian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>> {
        if s.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: s.len(),
            });
        }
        let (moved, inner) = self.automorphism(s);
        Ok(self.mixing.jacobian(&moved)? * inner)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{CouplingFlow, FlowMode};
    use crate::linalg::{gaussian_matrix, gaussian_vector, random_rotation, seeded_rng};
    use crate::mixing::{finite_difference_jacobian, relative_error, LinearMap};
    use crate::stats::ks_two_sample;
    use crate::support::{function_support, support_with, Tolerance};

    fn scaled_sources(k: usize, vars: &[f64], seed: u64) -> DMatrix<f64> {
        let mut rng = seeded_rng(seed);
        let mut s = gaussian_matrix(k, vars.len(), &mut rng);
        for (j, v) in vars.iter().enumerate() {
            s.column_mut(j).scale_mut(v.sqrt());
        }
        s
    }

    #[test]
    fn identity_rotation_is_pointwise_identity() {
        let a = LinearMap::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 2.0]));
        let g = Gaussianizer::from_moments(&[0.0, 0.0], &[1.5, 0.7]).unwrap();
        let mpa = rotated_gaussian_mpa(a.clone(), DMatrix::identity(2, 2), g).unwrap();
        let s = DVector::from_vec(vec![0.3, -1.2]);
        assert!((mpa.eval(&s).unwrap() - a.eval(&s).unwrap()).amax() < 1e-14);
    }

    #[test]
    fn rejects_non_orthogonal_rotation() {
        let a = LinearMap::new(DMatrix::identity(2, 2));
        let g = Gaussianizer::from_moments(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 1e-6, 0.0, 1.0]);
        assert!(matches!(rotated_gaussian_mpa(a, bad, g), Err(Error::NonOrthogonal { .. })));
    }

    #[test]
    fn sparse_linear_mixing_becomes_denser() {
        let mut rng = seeded_rng(31);
        let a = DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 0.0, 0.0, 1.3, 0.0, 0.0, 0.0, -0.8, 0.6, 0.0, 0.9]);
        let vars = [0.8, 1.9, 2.5];
        let g = Gaussianizer::from_moments(&[0.0; 3], &vars).unwrap();
        let u = random_rotation(3, &mut rng);
        let mpa = rotated_gaussian_mpa(LinearMap::new(a.clone()), u, g).unwrap();
        let points: Vec<_> = (0..64).map(|_| gaussian_vector(3, &mut rng)).collect();
        let truth = support_with(&a, Tolerance::Absolute(1e-6));
        let est = function_support(|s| mpa.jacobian(s), &points, Tolerance::Absolute(1e-6)).unwrap();
        assert!(truth.is_subset(&est) && est.len() > truth.len());
    }

    #[test]
    fn distribution_is_preserved() {
        let mut rng = seeded_rng(32);
        let vars = [0.6, 2.2];
        let f = CouplingFlow::random(2, 6, 8, FlowMode::General, 1.0, &mut rng).unwrap();
        let g = Gaussianizer::from_moments(&[0.0; 2], &vars).unwrap();
        let mpa = rotated_gaussian_mpa(&f, random_rotation(2, &mut rng), g).unwrap();
        let s = scaled_sources(10_000, &vars, 33);
        let x = f.eval_rows(&s).unwrap();
        let x_hat = mpa.eval_rows(&s).unwrap();
        for j in 0..2 {
            let a: Vec<f64> = x.column(j).iter().copied().collect();
            let b: Vec<f64> = x_hat.column(j).iter().copied().collect();
            assert!(ks_two_sample(&a, &b) < 0.05);
        }
    }

    #[test]
    fn chain_rule_matches_finite_differences() {
        let mut rng = seeded_rng(34);
        let f = CouplingFlow::random(3, 8, 8, FlowMode::General, 1.0, &mut rng).unwrap();
        let g = Gaussianizer::from_moments(&[0.1, -0.2, 0.0], &[0.9, 1.7, 2.9]).unwrap();
        let mpa = rotated_gaussian_mpa(&f, random_rotation(3, &mut rng), g).unwrap();
        for _ in 0..10 {
            let s = gaussian_vector(3, &mut rng);
            let fd = finite_difference_jacobian(&mpa, &s, 1e-5).unwrap();
            assert!(relative_error(&mpa.jacobian(&s).unwrap(), &fd, 1e-12) < 1e-4);
        }
    }
}
