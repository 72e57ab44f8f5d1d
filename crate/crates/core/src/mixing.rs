//! Pointwise-differentiable maps between source and observation spaces.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A differentiable map `R^input_dim -> R^output_dim`.
pub trait Mixing: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, s: &DVector<f64>) -> Result<DVector<f64>>;
    /// `output_dim x input_dim` Jacobian at `s`.
    fn jacobian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// Applies the map to every row of a `k x input_dim` matrix.
    fn eval_rows(&self, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if s.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: s.ncols(),
            });
        }
        let mut out = DMatrix::zeros(s.nrows(), self.output_dim());
        for r in 0..s.nrows() {
            let x = self.eval(&s.row(r).transpose())?;
            out.row_mut(r).copy_from(&x.transpose());
        }
        Ok(out)
    }
}

impl<M: Mixing + ?Sized> Mixing for &M {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn eval(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).eval(s)
    }
    fn jacobian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>> {
        (**self).jacobian(s)
    }
}

impl<M: Mixing + ?Sized> Mixing for Box<M> {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn eval(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).eval(s)
    }
    fn jacobian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>> {
        (**self).jacobian(s)
    }
}

/// `s -> A s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub matrix: DMatrix<f64>,
}

impl LinearMap {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }
}

impl Mixing for LinearMap {
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

/// `outer . inner`.
pub struct Composed<A, B> {
    pub inner: A,
    pub outer: B,
}

impl<A: Mixing, B: Mixing> Composed<A, B> {
    pub fn new(inner: A, outer: B) -> Result<Self> {
        if inner.output_dim() != outer.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: outer.input_dim(),
                actual: inner.output_dim(),
            });
        }
        Ok(Self { inner, outer })
    }
}

impl<A: Mixing, B: Mixing> Mixing for Composed<A, B> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.outer.output_dim()
    }
    fn eval(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        self.outer.eval(&self.inner.eval(s)?)
    }
    fn jacobian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mid = self.inner.eval(s)?;
        Ok(self.outer.jacobian(&mid)? * self.inner.jacobian(s)?)
    }
}

/// Central finite-difference Jacobian with step `h`.
pub fn finite_difference_jacobian(map: &dyn Mixing, s: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
    let mut jac = DMatrix::zeros(map.output_dim(), map.input_dim());
    for j in 0..map.input_dim() {
        let mut plus = s.clone();
        let mut minus = s.clone();
        plus[j] += h;
        minus[j] -= h;
        let diff = (map.eval(&plus)? - map.eval(&minus)?) / (2.0 * h);
        jac.set_column(j, &diff);
    }
    Ok(jac)
}

/// `max |a - b| / max(max |b|, floor)`.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    let diff = (a - b).amax();
    diff / b.amax().max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Square;

    impl Mixing for Square {
        fn input_dim(&self) -> usize {
            2
        }
        fn output_dim(&self) -> usize {
            2
        }
        fn eval(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![s[0] * s[0], s[0] * s[1]]))
        }
        fn jacobian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_row_slice(2, 2, &[2.0 * s[0], 0.0, s[1], s[0]]))
        }
    }

    #[test]
    fn composition_uses_chain_rule() {
        let a = LinearMap::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]));
        let c = Composed::new(a, Square).unwrap();
        let s = DVector::from_vec(vec![0.3, -0.7]);
        let fd = finite_difference_jacobian(&c, &s, 1e-5).unwrap();
        assert!(relative_error(&c.jacobian(&s).unwrap(), &fd, 1e-12) < 1e-8);
    }

    #[test]
    fn composition_checks_dimensions() {
        let a = LinearMap::new(DMatrix::zeros(3, 2));
        assert!(Composed::new(a, Square).is_err());
    }
}
