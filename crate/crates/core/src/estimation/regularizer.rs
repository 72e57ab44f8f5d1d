use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::registry::{Named, Registry};

/// `n log(mean_i ||J_{:,i}||) - log|det J|`; nonnegative by the AM-GM and
/// Hadamard inequalities, zero exactly on scaled orthogonal matrices.
pub fn ortho_reg(jac: &DMatrix<f64>) -> Result<f64> {
    if !jac.is_square() || jac.is_empty() {
        return Err(Error::shape("square nonempty matrix", format!("{}x{}", jac.nrows(), jac.ncols())));
    }
    let n = jac.ncols() as f64;
    let det = jac.clone().lu().determinant();
    if det == 0.0 || !det.is_finite() {
        return Err(Error::Singular);
    }
    let mean_norm = jac.column_iter().map(|c| c.norm()).sum::<f64>() / n;
    Ok(n * mean_norm.ln() - det.abs().ln())
}

/// A penalty on the unmixing Jacobian, evaluable pointwise and on a tape.
pub trait Regularizer: Named + Send + Sync {
    /// Whether the penalty reads the Jacobian at all.
    fn needs_jacobian(&self) -> bool {
        true
    }

    fn value(&self, jac: &DMatrix<f64>) -> Result<f64>;

    /// `B x 1` per-sample penalties from the taped Jacobian columns and the
    /// taped `log|det J|` (`None` means zero). `None` for a zero penalty.
    fn record(&self, tape: &mut Tape, columns: &[Var], log_det: Option<Var>) -> Option<Var>;
}

pub struct L1Jacobian;

impl Named for L1Jacobian {
    fn name(&self) -> &'static str {
        "l1-jacobian"
    }
}

impl Regularizer for L1Jacobian {
    fn value(&self, jac: &DMatrix<f64>) -> Result<f64> {
        Ok(jac.iter().map(|v| v.abs()).sum())
    }

    fn record(&self, tape: &mut Tape, columns: &[Var], _log_det: Option<Var>) -> Option<Var> {
        columns.iter().fold(None, |acc, &col| {
            let a = tape.abs(col);
            let r = tape.row_sum(a);
            Some(match acc {
                None => r,
                Some(prev) => tape.add(prev, r),
            })
        })
    }
}

pub struct Orthogonality;

impl Named for Orthogonality {
    fn name(&self) -> &'static str {
        "orthogonality"
    }
}

impl Regularizer for Orthogonality {
    fn value(&self, jac: &DMatrix<f64>) -> Result<f64> {
        ortho_reg(jac)
    }

    fn record(&self, tape: &mut Tape, columns: &[Var], log_det: Option<Var>) -> Option<Var> {
        let n = columns.len();
        let mut total: Option<Var> = None;
        for &col in columns {
            let sq = tape.square(col);
            let rs = tape.row_sum(sq);
            let norm = tape.sqrt(rs);
            total = Some(match total {
                None => norm,
                Some(prev) => tape.add(prev, norm),
            });
        }
        let total = total?;
        let mean = tape.scale(total, 1.0 / n as f64);
        let log_mean = tape.log(mean);
        let first = tape.scale(log_mean, n as f64);
        Some(match log_det {
            None => first,
            Some(ld) => tape.sub(first, ld),
        })
    }
}

pub struct NoRegularizer;

impl Named for NoRegularizer {
    fn name(&self) -> &'static str {
        "none"
    }
}

impl Regularizer for NoRegularizer {
    fn needs_jacobian(&self) -> bool {
        false
    }

    fn value(&self, _jac: &DMatrix<f64>) -> Result<f64> {
        Ok(0.0)
    }

    fn record(&self, _tape: &mut Tape, _columns: &[Var], _log_det: Option<Var>) -> Option<Var> {
        None
    }
}

pub fn regularizers() -> &'static Registry<dyn Regularizer> {
    static REG: OnceLock<Registry<dyn Regularizer>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn Regularizer> = Registry::new("regularizer");
        r.register(Arc::new(L1Jacobian))
            .register(Arc::new(Orthogonality))
            .register(Arc::new(NoRegularizer));
        r
    })
}
