//! Identifiability scoring: correlation matrices, exact assignment, MCC and
//! post-hoc diagnostics on the recovered sources.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixing::Mixing;
use crate::support::{function_support, SupportPattern, Tolerance};

/// Default relative threshold for Jacobian-of-`h` supports.
pub const JH_SUPPORT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMethod {
    #[default]
    Pearson,
    /// Rank correlation; invariant to strictly monotone per-component maps.
    Spearman,
}

impl FromStr for CorrelationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pearson" => Ok(Self::Pearson),
            "spearman" => Ok(Self::Spearman),
            _ => Err(Error::UnknownStrategy {
                kind: "correlation method",
                name: s.to_string(),
                available: "pearson, spearman".into(),
            }),
        }
    }
}

impl fmt::Display for CorrelationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pearson => "pearson",
            Self::Spearman => "spearman",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mcc: f64,
    /// `assignment[i]` is the estimated component matched to true source `i`.
    pub assignment: Vec<usize>,
    /// Rows are true sources, columns estimates.
    pub correlation: Vec<Vec<f64>>,
    pub linearity_r2: Vec<f64>,
    pub method: CorrelationMethod,
}

impl EvalReport {
    /// Correlation matrix as CSV, one row per true source.
    pub fn correlation_csv(&self) -> String {
        let n = self.correlation.first().map_or(0, Vec::len);
        let mut out = String::from("source");
        for j in 0..n {
            out.push_str(&format!(",est{}", j + 1));
        }
        out.push('\n');
        for (i, row) in self.correlation.iter().enumerate() {
            out.push_str(&format!("s{}", i + 1));
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Average ranks (1-based), ties share their mean rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            out[t] = rank;
        }
        i = j + 1;
    }
    out
}

fn standardized_columns(x: &DMatrix<f64>, method: CorrelationMethod, label: &str) -> Result<Vec<DVector<f64>>> {
    x.column_iter()
        .enumerate()
        .map(|(j, col)| {
            let v: Vec<f64> = match method {
                CorrelationMethod::Pearson => col.iter().copied().collect(),
                CorrelationMethod::Spearman => ranks(col.as_slice()),
            };
            let k = v.len() as f64;
            let mean = v.iter().sum::<f64>() / k;
            let centered = DVector::from_iterator(v.len(), v.iter().map(|x| x - mean));
            let norm = centered.norm();
            if norm <= f64::EPSILON * k.sqrt() * mean.abs().max(1.0) {
                return Err(Error::Degenerate(format!("{label} column {j} has zero variance")));
            }
            Ok(centered / norm)
        })
        .collect()
}

/// Entry `(i, j)` is the correlation between true source `i` and estimate `j`.
pub fn correlation_matrix(
    sources: &DMatrix<f64>,
    estimates: &DMatrix<f64>,
    method: CorrelationMethod,
) -> Result<DMatrix<f64>> {
    if sources.nrows() != estimates.nrows() {
        return Err(Error::DimensionMismatch {
            expected: sources.nrows(),
            actual: estimates.nrows(),
        });
    }
    if sources.nrows() < 3 {
        return Err(Error::Invalid("correlation needs at least 3 samples".into()));
    }
    let a = standardized_columns(sources, method, "source")?;
    let b = standardized_columns(estimates, method, "estimate")?;
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| a[i].dot(&b[j]).clamp(-1.0, 1.0)))
}

/// Hungarian method (shortest augmenting paths with potentials) minimizing
/// total cost; returns `row -> column`.
fn hungarian_min(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    let inf = f64::INFINITY;
    // 1-based potentials over rows (u) and columns (v); way/p track the matching.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

fn matched_total(weights: &DMatrix<f64>, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| weights[(i, j)]).sum()
}

/// Permutation maximizing `sum_i |costs[i, perm[i]]|`.
///
/// Exact; among optimal permutations the lexicographically smallest one is
/// returned.
pub fn assign(costs: &DMatrix<f64>) -> Result<Vec<usize>> {
    if costs.nrows() != costs.ncols() {
        return Err(Error::shape("square matrix", format!("{}x{}", costs.nrows(), costs.ncols())));
    }
    let n = costs.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let weights = costs.map(f64::abs);
    let best = |w: &DMatrix<f64>| -> f64 {
        let top = w.max();
        matched_total(w, &hungarian_min(&w.map(|x| top - x)))
    };
    let optimum = best(&weights);
    let scale = weights.max().max(1.0) * n as f64;
    let tie_tol = 1e-12 * scale;

    // Fix rows one at a time to the smallest column that keeps the optimum reachable.
    let mut perm = Vec::with_capacity(n);
    let mut free_cols: Vec<usize> = (0..n).collect();
    let mut gathered = 0.0;
    for row in 0..n {
        let rest_rows: Vec<usize> = (row + 1..n).collect();
        let mut chosen = None;
        for (pos, &col) in free_cols.iter().enumerate() {
            let remaining: Vec<usize> = free_cols.iter().copied().filter(|&c| c != col).collect();
            let sub = DMatrix::from_fn(rest_rows.len(), remaining.len(), |a, b| weights[(rest_rows[a], remaining[b])]);
            let tail = if sub.is_empty() { 0.0 } else { best(&sub) };
            if gathered + weights[(row, col)] + tail >= optimum - tie_tol {
                chosen = Some(pos);
                break;
            }
        }
        let pos = chosen.expect("some column always attains the optimum");
        let col = free_cols.remove(pos);
        gathered += weights[(row, col)];
        perm.push(col);
    }
    Ok(perm)
}

/// Mean matched absolute correlation under the optimal assignment.
pub fn mcc(sources: &DMatrix<f64>, estimates: &DMatrix<f64>, method: CorrelationMethod) -> Result<EvalReport> {
    if sources.ncols() != estimates.ncols() {
        return Err(Error::DimensionMismatch {
            expected: sources.ncols(),
            actual: estimates.ncols(),
        });
    }
    let corr = correlation_matrix(sources, estimates, method)?;
    let assignment = assign(&corr)?;
    let n = assignment.len();
    let score = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| corr[(i, j)].abs())
        .sum::<f64>()
        / n as f64;
    let linearity_r2 = componentwise_linearity(sources, estimates, &assignment)?;
    Ok(EvalReport {
        mcc: score.clamp(0.0, 1.0),
        assignment,
        correlation: corr.row_iter().map(|r| r.iter().copied().collect()).collect(),
        linearity_r2,
        method,
    })
}

/// R^2 of the least-squares fit `estimate[assignment[i]] ~ a * source[i] + b`.
pub fn componentwise_linearity(
    sources: &DMatrix<f64>,
    estimates: &DMatrix<f64>,
    assignment: &[usize],
) -> Result<Vec<f64>> {
    let n = sources.ncols();
    let mut seen = vec![false; estimates.ncols()];
    if assignment.len() != n || assignment.iter().any(|&j| j >= seen.len() || std::mem::replace(&mut seen[j], true)) {
        return Err(Error::Invalid("assignment is not a valid permutation".into()));
    }
    let k = sources.nrows() as f64;
    assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let x = sources.column(i);
            let y = estimates.column(j);
            let (mx, my) = (x.sum() / k, y.sum() / k);
            let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
            let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
            if sxx == 0.0 || syy == 0.0 {
                return Err(Error::Degenerate(format!("component {i} has zero variance")));
            }
            let sxy: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - mx) * (b - my)).sum();
            let slope = sxy / sxx;
            let intercept = my - slope * mx;
            let ss_res: f64 = x
                .iter()
                .zip(y.iter())
                .map(|(a, b)| (b - slope * a - intercept).powi(2))
                .sum();
            Ok((1.0 - ss_res / syy).clamp(0.0, 1.0))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JhSupport {
    pub support: SupportPattern,
    pub permutation_like: bool,
}

/// Union support of the Jacobian of `h = f_hat_inverse . f_true` over `points`.
pub fn jh_support(
    f_true: &dyn Mixing,
    f_hat_inverse: &dyn Mixing,
    points: &[DVector<f64>],
    tol: Tolerance,
) -> Result<JhSupport> {
    if f_true.output_dim() != f_hat_inverse.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: f_true.output_dim(),
            actual: f_hat_inverse.input_dim(),
        });
    }
    let support = function_support(
        |s| {
            let x = f_true.eval(s)?;
            Ok(f_hat_inverse.jacobian(&x)? * f_true.jacobian(s)?)
        },
        points,
        tol,
    )?;
    let permutation_like = support.is_permutation();
    Ok(JhSupport {
        support,
        permutation_like,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, seeded_rng};
    use crate::mixing::LinearMap;
    use rand::Rng;

    fn brute_force(costs: &DMatrix<f64>) -> (f64, Vec<usize>) {
        let n = costs.nrows();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = (f64::NEG_INFINITY, perm.clone());
        loop {
            let total: f64 = perm.iter().enumerate().map(|(i, &j)| costs[(i, j)].abs()).sum();
            if total > best.0 {
                best = (total, perm.clone());
            }
            if !next_permutation(&mut perm) {
                break;
            }
        }
        best
    }

    fn next_permutation(p: &mut [usize]) -> bool {
        let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
            return false;
        };
        let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).unwrap();
        p.swap(i - 1, j);
        p[i..].reverse();
        true
    }

    #[test]
    fn assignment_matches_enumeration() {
        let mut rng = seeded_rng(9);
        for n in 1..=6 {
            for _ in 0..30 {
                let c = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
                let (total, perm) = brute_force(&c);
                let got = assign(&c).unwrap();
                assert_eq!(got, perm);
                let got_total: f64 = got.iter().enumerate().map(|(i, &j)| c[(i, j)].abs()).sum();
                assert!((got_total - total).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn assignment_examples() {
        let id = DMatrix::from_fn(3, 3, |i, j| if i == j { 0.9 } else { 0.1 });
        assert_eq!(assign(&id).unwrap(), vec![0, 1, 2]);
        let anti = DMatrix::from_fn(3, 3, |i, j| if i + j == 2 { -0.9 } else { 0.1 });
        assert_eq!(assign(&anti).unwrap(), vec![2, 1, 0]);
        // all ties: lexicographically smallest
        assert_eq!(assign(&DMatrix::from_element(3, 3, 0.5)).unwrap(), vec![0, 1, 2]);
        assert!(assign(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn correlation_examples() {
        let mut rng = seeded_rng(4);
        let s = gaussian_matrix(500, 3, &mut rng);
        let c = correlation_matrix(&s, &s, CorrelationMethod::Pearson).unwrap();
        for i in 0..3 {
            assert!((c[(i, i)] - 1.0).abs() < 1e-12);
        }
        let c = correlation_matrix(&s, &(-&s), CorrelationMethod::Pearson).unwrap();
        for i in 0..3 {
            assert!((c[(i, i)] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_noise_is_uncorrelated() {
        let mut rng = seeded_rng(6);
        let s = gaussian_matrix(10_000, 3, &mut rng);
        let e = gaussian_matrix(10_000, 3, &mut rng);
        let c = correlation_matrix(&s, &e, CorrelationMethod::Pearson).unwrap();
        assert!(c.amax() < 0.05, "{c}");
    }

    #[test]
    fn correlation_errors() {
        let s = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let flat = DMatrix::from_element(3, 1, 2.0);
        assert!(matches!(
            correlation_matrix(&s, &flat, CorrelationMethod::Pearson),
            Err(Error::Degenerate(_))
        ));
        assert!(correlation_matrix(&s.rows(0, 2).into_owned(), &s.rows(0, 2).into_owned(), CorrelationMethod::Pearson).is_err());
        assert!(correlation_matrix(&s, &DMatrix::zeros(4, 1), CorrelationMethod::Pearson).is_err());
    }

    #[test]
    fn mcc_of_signed_scaled_permutation_is_one() {
        let mut rng = seeded_rng(8);
        let s = gaussian_matrix(1000, 4, &mut rng);
        let p = [2usize, 0, 3, 1];
        let d = [2.0, -0.5, 3.0, -1.0];
        let est = DMatrix::from_fn(1000, 4, |r, c| d[c] * s[(r, p[c])]);
        let report = mcc(&s, &est, CorrelationMethod::Pearson).unwrap();
        assert!((report.mcc - 1.0).abs() < 1e-12);
        for (i, &j) in report.assignment.iter().enumerate() {
            assert_eq!(p[j], i);
        }
    }

    #[test]
    fn spearman_ignores_monotone_maps() {
        let mut rng = seeded_rng(10);
        let s = gaussian_matrix(800, 3, &mut rng);
        let est = DMatrix::from_fn(800, 3, |r, c| s[(r, (c + 1) % 3)].powi(3));
        let report = mcc(&s, &est, CorrelationMethod::Spearman).unwrap();
        assert!((report.mcc - 1.0).abs() < 1e-12);
        assert!(mcc(&s, &est, CorrelationMethod::Pearson).unwrap().mcc < 1.0);
    }

    #[test]
    fn rotated_sources_score_cos_45() {
        let mut rng = seeded_rng(12);
        let s = gaussian_matrix(200_000, 2, &mut rng);
        let r = crate::linalg::rotation_2d(std::f64::consts::FRAC_PI_4);
        let est = &s * r.transpose();
        let report = mcc(&s, &est, CorrelationMethod::Pearson).unwrap();
        assert!((report.mcc - std::f64::consts::FRAC_1_SQRT_2).abs() < 5e-3, "{}", report.mcc);
    }

    #[test]
    fn linearity_scores() {
        let mut rng = seeded_rng(14);
        let s = gaussian_matrix(2000, 2, &mut rng);
        let affine = s.map(|v| 2.0 * v + 1.0);
        let r2 = componentwise_linearity(&s, &affine, &[0, 1]).unwrap();
        assert!(r2.iter().all(|&r| (r - 1.0).abs() < 1e-12));
        let squashed = s.map(f64::tanh);
        let r2 = componentwise_linearity(&s, &squashed, &[0, 1]).unwrap();
        assert!(r2.iter().all(|&r| r < 0.99 && r > 0.5), "{r2:?}");
        assert!(componentwise_linearity(&s, &s, &[0, 0]).is_err());
    }

    #[test]
    fn jh_support_diagnoses_rotation_and_swap() {
        let mut rng = seeded_rng(15);
        let a = gaussian_matrix(2, 2, &mut rng);
        let f = LinearMap::new(a.clone());
        let points: Vec<_> = (0..16).map(|_| crate::linalg::gaussian_vector(2, &mut rng)).collect();
        let inv = LinearMap::new(a.clone().try_inverse().unwrap());
        let jh = jh_support(&f, &inv, &points, Tolerance::Relative(JH_SUPPORT_TOL)).unwrap();
        assert_eq!(jh.support, SupportPattern::identity(2));
        assert!(jh.permutation_like);

        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let inv_swapped = LinearMap::new(&swap * a.clone().try_inverse().unwrap());
        let jh = jh_support(&f, &inv_swapped, &points, Tolerance::Relative(JH_SUPPORT_TOL)).unwrap();
        assert_eq!(jh.support, SupportPattern::from_rows(&[[0u8, 1], [1, 0]]).unwrap());
        assert!(jh.permutation_like);

        let rot = crate::linalg::rotation_2d(std::f64::consts::FRAC_PI_4);
        let inv_rot = LinearMap::new(rot.transpose() * a.try_inverse().unwrap());
        let jh = jh_support(&f, &inv_rot, &points, Tolerance::Relative(JH_SUPPORT_TOL)).unwrap();
        assert_eq!(jh.support, SupportPattern::full(2, 2));
        assert!(!jh.permutation_like);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut rng = seeded_rng(1);
        let s = gaussian_matrix(100, 2, &mut rng);
        let csv = mcc(&s, &s, CorrelationMethod::Pearson).unwrap().correlation_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "source,est1,est2");
        assert!(lines[1].starts_with("s1,1.000000"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mcc_invariant_under_signed_scaled_permutations(
                seed in 0u64..1000,
                scales in proptest::collection::vec(0.1f64..5.0, 3),
                signs in proptest::collection::vec(proptest::bool::ANY, 3),
                perm_idx in 0usize..6,
            ) {
                let perms = [[0,1,2],[0,2,1],[1,0,2],[1,2,0],[2,0,1],[2,1,0]];
                let p = perms[perm_idx];
                let mut rng = seeded_rng(seed);
                let s = gaussian_matrix(200, 3, &mut rng);
                let est = gaussian_matrix(200, 3, &mut rng) + &s * 0.5;
                let moved = DMatrix::from_fn(200, 3, |r, c| {
                    let sign = if signs[c] { -1.0 } else { 1.0 };
                    sign * scales[c] * est[(r, p[c])]
                });
                let a = mcc(&s, &est, CorrelationMethod::Pearson).unwrap().mcc;
                let b = mcc(&s, &moved, CorrelationMethod::Pearson).unwrap().mcc;
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&a));
            }

            #[test]
            fn spearman_invariant_under_monotone_maps(seed in 0u64..1000) {
                let mut rng = seeded_rng(seed);
                let s = gaussian_matrix(150, 2, &mut rng);
                let est = gaussian_matrix(150, 2, &mut rng) + &s;
                let warped = est.map(|v| v.powi(3) + v.exp());
                let a = mcc(&s, &est, CorrelationMethod::Spearman).unwrap().mcc;
                let b = mcc(&s, &warped, CorrelationMethod::Spearman).unwrap().mcc;
                prop_assert_eq!(a, b);
            }
        }
    }
}
