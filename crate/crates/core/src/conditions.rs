//! Executable checks of the structural-sparsity assumptions.
//!
//! Every checker returns a [`ConditionReport`] carrying a verdict and, per
//! source (or row), the witness that satisfies the condition or the
//! counterexample that breaks it.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gaussian_vector, numeric_rank};
use crate::support::{binary_rank, compute_support, overlap, SupportPattern};

/// Largest column count the undercomplete check will enumerate (2^n subsets).
pub const MAX_ENUMERATION_COLUMNS: usize = 20;

/// Relative singular-value threshold for the span check.
pub const SPAN_RANK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub verdict: bool,
    pub details: Vec<ConditionDetail>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditionDetail {
    /// `rows` is `C_k`; the condition holds iff `intersection == {source}`.
    Intersection {
        source: usize,
        holds: bool,
        rows: Vec<usize>,
        intersection: Vec<usize>,
    },
    /// For a passing source, the tightest column set; otherwise the first violation.
    Undercomplete {
        source: usize,
        holds: bool,
        columns: Vec<usize>,
        union_size: usize,
        overlap_rank: usize,
        source_support: usize,
    },
    Span {
        row: usize,
        holds: bool,
        support: Vec<usize>,
        achieved_rank: usize,
        points_used: usize,
        points: Vec<Vec<f64>>,
    },
    Budget {
        estimated: usize,
        truth: usize,
        holds: bool,
    },
}

impl ConditionDetail {
    pub fn holds(&self) -> bool {
        match self {
            ConditionDetail::Intersection { holds, .. }
            | ConditionDetail::Undercomplete { holds, .. }
            | ConditionDetail::Span { holds, .. }
            | ConditionDetail::Budget { holds, .. } => *holds,
        }
    }
}

impl ConditionReport {
    fn from_details(condition: &str, details: Vec<ConditionDetail>, tolerance: Option<f64>) -> Self {
        Self {
            condition: condition.to_string(),
            verdict: details.iter().all(ConditionDetail::holds),
            details,
            tolerance,
            notes: Vec::new(),
        }
    }

    /// The per-source verdicts in order.
    pub fn per_source(&self) -> Vec<bool> {
        self.details.iter().map(ConditionDetail::holds).collect()
    }
}

/// For each source `k`, whether the rows touching `k` intersect exactly in `{k}`.
///
/// The intersection over all rows containing `k` is the smallest intersection
/// any row subset containing `k` can reach, so testing that single set decides
/// the existential condition.
pub fn check_intersection_condition(s: &SupportPattern) -> ConditionReport {
    let details = (0..s.cols())
        .map(|k| {
            let rows: Vec<usize> = s.col(k).into_iter().collect();
            let intersection: BTreeSet<usize> = match rows.split_first() {
                None => BTreeSet::new(),
                Some((&first, rest)) => rest.iter().fold(s.row(first), |acc, &r| {
                    acc.intersection(&s.row(r)).copied().collect()
                }),
            };
            let holds = !rows.is_empty() && intersection.len() == 1 && intersection.contains(&k);
            ConditionDetail::Intersection {
                source: k,
                holds,
                rows,
                intersection: intersection.into_iter().collect(),
            }
        })
        .collect();
    ConditionReport::from_details("intersection", details, None)
}

/// Undercomplete structural condition on a mixing-matrix support.
///
/// Enumerates all `2^n - n - 1` column subsets with more than one element, so
/// the cost is exponential in `n`; inputs wider than
/// [`MAX_ENUMERATION_COLUMNS`] are refused.
pub fn check_undercomplete_condition(a: &SupportPattern) -> Result<ConditionReport> {
    let n = a.cols();
    if n > MAX_ENUMERATION_COLUMNS {
        return Err(Error::EnumerationGuard {
            columns: n,
            limit: MAX_ENUMERATION_COLUMNS,
        });
    }
    let col_rows: Vec<BTreeSet<usize>> = (0..n).map(|j| a.col(j)).collect();

    // Per subset: (mask, per-member margins). Folded per source into the
    // tightest margin and the first violating mask.
    #[derive(Clone, Copy)]
    struct Best {
        margin: i64,
        mask: u32,
        first_violation: Option<u32>,
    }
    let init = vec![
        Best {
            margin: i64::MAX,
            mask: 0,
            first_violation: None,
        };
        n
    ];
    let merge = |mut acc: Vec<Best>, other: Vec<Best>| {
        for (a, b) in acc.iter_mut().zip(other) {
            if b.margin < a.margin || (b.margin == a.margin && b.mask < a.mask) {
                a.margin = b.margin;
                a.mask = b.mask;
            }
            a.first_violation = match (a.first_violation, b.first_violation) {
                (Some(x), Some(y)) => Some(x.min(y)),
                (x, y) => x.or(y),
            };
        }
        acc
    };

    let stats = |mask: u32| -> (usize, usize) {
        let cols: Vec<usize> = (0..n).filter(|&j| mask & (1 << j) != 0).collect();
        let union: BTreeSet<usize> = cols.iter().flat_map(|&j| col_rows[j].iter().copied()).collect();
        let rank = binary_rank(&overlap(&a.select_cols(&cols)));
        (union.len(), rank)
    };

    let total: u32 = if n == 0 { 0 } else { (1u64 << n) as u32 - 1 };
    let best = (1..=total)
        .into_par_iter()
        .filter(|m| m.count_ones() > 1)
        .fold(
            || init.clone(),
            |mut acc, mask| {
                let (union, rank) = stats(mask);
                for (k, slot) in acc.iter_mut().enumerate() {
                    if mask & (1 << k) == 0 {
                        continue;
                    }
                    let margin = union as i64 - rank as i64 - col_rows[k].len() as i64;
                    if margin < slot.margin || (margin == slot.margin && mask < slot.mask) {
                        slot.margin = margin;
                        slot.mask = mask;
                    }
                    if margin <= 0 && slot.first_violation.is_none_or(|v| mask < v) {
                        slot.first_violation = Some(mask);
                    }
                }
                acc
            },
        )
        .reduce(|| init.clone(), merge);

    let details: Vec<ConditionDetail> = best
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let mask = b.first_violation.unwrap_or(b.mask);
            let columns: Vec<usize> = (0..n).filter(|&j| mask & (1 << j) != 0).collect();
            let (union_size, overlap_rank) = if columns.is_empty() { (col_rows[k].len(), 0) } else { stats(mask) };
            ConditionDetail::Undercomplete {
                source: k,
                holds: b.first_violation.is_none(),
                columns,
                union_size,
                overlap_rank,
                source_support: col_rows[k].len(),
            }
        })
        .collect();

    let mut report = ConditionReport::from_details("undercomplete", details, None);
    // Lowest-mask violation first, ties broken by source index.
    if let Some((k, mask)) = best
        .iter()
        .enumerate()
        .filter_map(|(k, b)| b.first_violation.map(|m| (k, m)))
        .min_by_key(|&(k, m)| (m, k))
    {
        let cols: Vec<usize> = (0..n).filter(|&j| mask & (1 << j) != 0).collect();
        report
            .notes
            .push(format!("first violation: C = {cols:?}, k = {k}"));
    }
    Ok(report)
}

/// Undercomplete check on a real matrix thresholded at `tol`.
pub fn check_undercomplete_matrix(a: &DMatrix<f64>, tol: f64) -> Result<ConditionReport> {
    let mut report = check_undercomplete_condition(&compute_support(a, tol))?;
    report.tolerance = Some(tol);
    Ok(report)
}

/// Span half of the generic-Jacobian assumption.
///
/// For each row `i` with support `F_i`, greedily collects sample points whose
/// `i`-th Jacobian rows raise the rank of the rows restricted to `F_i`, until
/// the rank reaches `|F_i|` or `trials` points are exhausted. Points are drawn
/// from a standard normal.
pub fn check_span_condition<F>(
    mut jacobian_at: F,
    support: &SupportPattern,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<ConditionReport>
where
    F: FnMut(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    let (m, n) = support.shape();
    let supports: Vec<Vec<usize>> = (0..m).map(|i| support.row(i).into_iter().collect()).collect();
    let mut collected: Vec<Vec<DVector<f64>>> = vec![Vec::new(); m];
    let mut witnesses: Vec<Vec<Vec<f64>>> = vec![Vec::new(); m];
    let mut used = vec![0usize; m];
    let done = |rows: &Vec<DVector<f64>>, need: usize| rows.len() >= need;

    for _ in 0..trials {
        if (0..m).all(|i| done(&collected[i], supports[i].len())) {
            break;
        }
        let p = gaussian_vector(n, rng);
        let jac = jacobian_at(&p)?;
        if jac.shape() != (m, n) {
            return Err(Error::shape(format!("{m}x{n}"), format!("{}x{}", jac.nrows(), jac.ncols())));
        }
        for i in 0..m {
            let f = &supports[i];
            if done(&collected[i], f.len()) {
                continue;
            }
            used[i] += 1;
            let candidate = DVector::from_iterator(f.len(), f.iter().map(|&j| jac[(i, j)]));
            let mut stacked = collected[i].clone();
            stacked.push(candidate.clone());
            let mat = DMatrix::from_columns(&stacked);
            if numeric_rank(&mat, SPAN_RANK_TOL) == stacked.len() {
                collected[i].push(candidate);
                witnesses[i].push(p.iter().copied().collect());
            }
        }
    }

    let details = (0..m)
        .map(|i| ConditionDetail::Span {
            row: i,
            holds: collected[i].len() == supports[i].len(),
            support: supports[i].clone(),
            achieved_rank: collected[i].len(),
            points_used: used[i],
            points: witnesses[i].clone(),
        })
        .collect();
    let mut report = ConditionReport::from_details("span", details, Some(SPAN_RANK_TOL));
    report.notes.push(
        "only the span half is checked; the constraint involving the estimated support depends on the fitted model"
            .into(),
    );
    Ok(report)
}

/// `|S_hat| <= |S_true|`.
pub fn check_sparsity_budget(s_hat: &SupportPattern, s_true: &SupportPattern) -> Result<bool> {
    s_hat.check_same_shape(s_true)?;
    Ok(s_hat.len() <= s_true.len())
}

pub fn sparsity_budget_report(s_hat: &SupportPattern, s_true: &SupportPattern) -> Result<ConditionReport> {
    let holds = check_sparsity_budget(s_hat, s_true)?;
    Ok(ConditionReport::from_details(
        "sparsity_budget",
        vec![ConditionDetail::Budget {
            estimated: s_hat.len(),
            truth: s_true.len(),
            holds,
        }],
        None,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::seeded_rng;

    fn pat(rows: &[&[u8]]) -> SupportPattern {
        SupportPattern::from_rows(rows).unwrap()
    }

    /// Exhaustive search over every nonempty row subset.
    pub(crate) fn intersection_by_enumeration(s: &SupportPattern) -> Vec<bool> {
        let m = s.rows();
        (0..s.cols())
            .map(|k| {
                (1u32..(1 << m)).any(|mask| {
                    let mut acc: Option<BTreeSet<usize>> = None;
                    for i in 0..m {
                        if mask & (1 << i) != 0 {
                            let row = s.row(i);
                            acc = Some(match acc {
                                None => row,
                                Some(a) => a.intersection(&row).copied().collect(),
                            });
                        }
                    }
                    acc.is_some_and(|a| a.len() == 1 && a.contains(&k))
                })
            })
            .collect()
    }

    /// A 4x4 pattern in the spirit of the two-observation illustration:
    /// rows 1 and 4 (0-based 0 and 3) share only source 1.
    pub(crate) fn figure_one_pattern() -> SupportPattern {
        pat(&[&[1, 1, 0, 0], &[0, 1, 1, 0], &[0, 0, 1, 1], &[1, 0, 0, 1]])
    }

    #[test]
    fn identity_satisfies_intersection() {
        let r = check_intersection_condition(&SupportPattern::identity(4));
        assert!(r.verdict);
        for (k, d) in r.details.iter().enumerate() {
            let ConditionDetail::Intersection { rows, .. } = d else { panic!() };
            assert_eq!(rows, &vec![k]);
        }
    }

    #[test]
    fn full_pattern_fails_everywhere() {
        let r = check_intersection_condition(&SupportPattern::full(3, 3));
        assert!(!r.verdict);
        assert!(r.per_source().iter().all(|&h| !h));
    }

    #[test]
    fn figure_one_pattern_holds_with_witness() {
        let s = figure_one_pattern();
        let r = check_intersection_condition(&s);
        assert!(r.verdict);
        let ConditionDetail::Intersection { rows, intersection, .. } = &r.details[0] else { panic!() };
        assert_eq!(rows, &vec![0, 3]);
        assert_eq!(intersection, &vec![0]);
        assert_eq!(intersection_by_enumeration(&s), vec![true; 4]);
    }

    #[test]
    fn unused_source_fails() {
        let r = check_intersection_condition(&pat(&[&[1, 0], &[1, 0]]));
        assert_eq!(r.per_source(), vec![true, false]);
    }

    #[test]
    fn intersection_agrees_with_enumeration_exhaustively_on_small_shapes() {
        for (m, n) in [(2, 2), (3, 2), (2, 3), (3, 3)] {
            for bits in 0u32..(1 << (m * n)) {
                let s = SupportPattern::from_entries(
                    m,
                    n,
                    (0..m * n).filter(|b| bits & (1 << b) != 0).map(|b| (b / n, b % n)),
                )
                .unwrap();
                assert_eq!(
                    check_intersection_condition(&s).per_source(),
                    intersection_by_enumeration(&s),
                    "{s}"
                );
            }
        }
    }

    #[test]
    fn undercomplete_disjoint_columns_hold() {
        let r = check_undercomplete_condition(&pat(&[&[1, 0], &[0, 1], &[1, 0], &[0, 1]])).unwrap();
        assert!(r.verdict);
        let ConditionDetail::Undercomplete { union_size, overlap_rank, .. } = r.details[0] else { panic!() };
        assert_eq!((union_size, overlap_rank), (4, 0));
    }

    #[test]
    fn undercomplete_shared_row_fails_with_witness() {
        let r = check_undercomplete_condition(&pat(&[&[1, 0], &[0, 1], &[1, 1]])).unwrap();
        assert!(!r.verdict);
        let ConditionDetail::Undercomplete {
            holds,
            ref columns,
            union_size,
            overlap_rank,
            source_support,
            ..
        } = r.details[0]
        else {
            panic!()
        };
        assert!(!holds);
        assert_eq!(columns, &vec![0, 1]);
        assert_eq!((union_size, overlap_rank, source_support), (3, 1, 2));
        assert!(r.notes[0].contains("C = [0, 1], k = 0"));
    }

    #[test]
    fn undercomplete_counting_illustration() {
        // Seven touched rows, overlap of rank two, first column of size four.
        let a = pat(&[
            &[1, 0, 0],
            &[1, 0, 0],
            &[1, 1, 0],
            &[1, 1, 0],
            &[0, 1, 0],
            &[0, 1, 1],
            &[0, 0, 1],
        ]);
        assert_eq!(binary_rank(&overlap(&a)), 2);
        let r = check_undercomplete_condition(&a).unwrap();
        // The full set C = {0,1,2} with k = 0 gives 7 - 2 = 5 > 4.
        let union: BTreeSet<usize> = (0..3).flat_map(|j| a.col(j)).collect();
        assert_eq!(union.len(), 7);
        assert!(union.len() - binary_rank(&overlap(&a)) > a.col(0).len());
        assert_eq!(r.verdict, r.per_source().iter().all(|&h| h));
    }

    #[test]
    fn duplicated_column_defeats_undercomplete() {
        let base = pat(&[&[1, 0], &[0, 1], &[1, 0], &[0, 1]]);
        assert!(check_undercomplete_condition(&base).unwrap().verdict);
        let dup = pat(&[&[1, 0, 1], &[0, 1, 0], &[1, 0, 1], &[0, 1, 0]]);
        assert!(!check_undercomplete_condition(&dup).unwrap().verdict);
    }

    #[test]
    fn undercomplete_refuses_wide_inputs() {
        let wide = SupportPattern::identity(21);
        assert!(matches!(
            check_undercomplete_condition(&wide),
            Err(Error::EnumerationGuard { columns: 21, limit: 20 })
        ));
    }

    #[test]
    fn span_fails_for_constant_dense_jacobian() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.7, -0.4, 1.3]);
        let mut rng = seeded_rng(1);
        let r = check_span_condition(|_| Ok(a.clone()), &compute_support(&a, 1e-9), 64, &mut rng).unwrap();
        assert!(!r.verdict);
        assert!(r.details.iter().all(|d| matches!(d, ConditionDetail::Span { achieved_rank: 1, .. })));
    }

    #[test]
    fn span_holds_for_diagonal_maps() {
        let mut rng = seeded_rng(2);
        let jac = |p: &DVector<f64>| Ok(DMatrix::from_diagonal(&p.map(|v| 1.0 + v.tanh().powi(2))));
        let r = check_span_condition(jac, &SupportPattern::identity(3), 8, &mut rng).unwrap();
        assert!(r.verdict);
    }

    #[test]
    fn span_holds_for_point_dependent_rows() {
        let mut rng = seeded_rng(3);
        // x0 = s0 + 0.5 tanh(s1), x1 = s1
        let jac = |p: &DVector<f64>| {
            Ok(DMatrix::from_row_slice(2, 2, &[1.0, 0.5 * (1.0 - p[1].tanh().powi(2)), 0.0, 1.0]))
        };
        let s = pat(&[&[1, 1], &[0, 1]]);
        assert!(check_span_condition(jac, &s, 32, &mut rng).unwrap().verdict);
    }

    #[test]
    fn sparsity_budget() {
        let t = SupportPattern::identity(3);
        assert!(check_sparsity_budget(&t, &t).unwrap());
        let mut bigger = t.clone();
        bigger.insert(0, 1).unwrap();
        assert!(!check_sparsity_budget(&bigger, &t).unwrap());
        assert!(check_sparsity_budget(&SupportPattern::identity(2), &t).is_err());
        assert!(!sparsity_budget_report(&bigger, &t).unwrap().verdict);
    }

    #[test]
    fn report_json_lists_witnesses() {
        let r = check_intersection_condition(&SupportPattern::identity(2));
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["details"][1]["rows"], serde_json::json!([1]));
        assert_eq!(v["details"][1]["kind"], "intersection");
    }
}
