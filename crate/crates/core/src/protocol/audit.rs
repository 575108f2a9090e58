//! Fairness auditors. They integrate the densities directly and never issue
//! queries.

use serde::{Deserialize, Serialize};

use super::Allocation;
use crate::measure::{Interval, PieceSet, PiecewiseConstantMeasure, MASS_TOL};

/// Outcome of one audit. `worst_margin` is the minimum slack over all
/// constrained pairs; `None` when there are no constraints (a single player,
/// or only players who value the piece at zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub passed: bool,
    pub worst_margin: Option<f64>,
    /// Super envy-freeness only: `min_i mu_i(C_i) - 1/n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub own_margin: Option<f64>,
    /// Super envy-freeness only: `min_{i != j} 1/n - mu_i(C_j)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_margin: Option<f64>,
}

impl AuditRecord {
    fn plain(passed: bool, worst_margin: Option<f64>) -> Self {
        AuditRecord {
            passed,
            worst_margin,
            own_margin: None,
            cross_margin: None,
        }
    }

    /// Conjunction of several records of the same kind.
    pub fn combine<'a>(records: impl IntoIterator<Item = &'a AuditRecord>) -> AuditRecord {
        let mut passed = true;
        let mut worst: Option<f64> = None;
        for r in records {
            passed &= r.passed;
            worst = min_opt(worst, r.worst_margin);
        }
        AuditRecord::plain(passed, worst)
    }
}

fn min_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// `values[i][j] = mu_i(C_j)`.
pub fn value_matrix(measures: &[PiecewiseConstantMeasure], alloc: &Allocation) -> Vec<Vec<f64>> {
    measures
        .iter()
        .map(|m| alloc.pieces.iter().map(|p| m.mass_of(p)).collect())
        .collect()
}

/// Checks `|mu_i(A_j) - alpha_j mu_i(w)| < eps mu_i(w)` for every player with
/// `mu_i(w) > 0` and that the parts tile `w`.
pub fn audit_near_exact(
    measures: &[PiecewiseConstantMeasure],
    w: Interval,
    parts: &[PieceSet],
    ratios: &[f64],
    epsilon: f64,
) -> AuditRecord {
    let mut worst: Option<f64> = None;
    let mut passed = parts_tile(parts, w);
    for m in measures {
        let total = m.mass(w.lo(), w.hi());
        if total <= 0.0 {
            continue;
        }
        for (part, alpha) in parts.iter().zip(ratios) {
            let slack = epsilon * total - (m.mass_of(part) - alpha * total).abs();
            passed &= slack > 0.0;
            worst = min_opt(worst, Some(slack));
        }
    }
    AuditRecord::plain(passed, worst)
}

fn parts_tile(parts: &[PieceSet], w: Interval) -> bool {
    let mut all: Vec<Interval> = parts.iter().flat_map(|p| p.intervals().iter().copied()).collect();
    all.sort_by(|a, b| a.lo().total_cmp(&b.lo()));
    let inside = all.iter().all(|iv| iv.lo() >= w.lo() && iv.hi() <= w.hi());
    let disjoint = all.windows(2).all(|p| p[1].lo() >= p[0].hi());
    let covered: f64 = all.iter().map(Interval::len).sum();
    inside && disjoint && (covered - w.len()).abs() <= 1e-9
}

/// `mu_i(C_i) >= mu_i(C_j)` for all `i != j`.
pub fn audit_envy_free(measures: &[PiecewiseConstantMeasure], alloc: &Allocation) -> AuditRecord {
    let v = value_matrix(measures, alloc);
    let mut worst: Option<f64> = None;
    for (i, row) in v.iter().enumerate() {
        for (j, vij) in row.iter().enumerate() {
            if i != j {
                worst = min_opt(worst, Some(row[i] - vij));
            }
        }
    }
    AuditRecord::plain(worst.is_none_or(|m| m >= -MASS_TOL), worst)
}

/// `mu_i(C_i) >= 1/n` for all `i`.
pub fn audit_proportional(
    measures: &[PiecewiseConstantMeasure],
    alloc: &Allocation,
) -> AuditRecord {
    let v = value_matrix(measures, alloc);
    let share = 1.0 / v.len() as f64;
    let worst = v
        .iter()
        .enumerate()
        .map(|(i, row)| row[i] - share)
        .fold(None, |acc, x| min_opt(acc, Some(x)));
    AuditRecord::plain(worst.is_none_or(|m| m >= -MASS_TOL), worst)
}

/// `mu_i(C_i) > 1/n > mu_i(C_j)` for all `i != j`, strictly.
pub fn audit_super_envy_free(
    measures: &[PiecewiseConstantMeasure],
    alloc: &Allocation,
) -> AuditRecord {
    let v = value_matrix(measures, alloc);
    let n = v.len();
    if n < 2 {
        return AuditRecord::plain(true, None);
    }
    let share = 1.0 / n as f64;
    let mut own = f64::INFINITY;
    let mut cross = f64::INFINITY;
    for (i, row) in v.iter().enumerate() {
        own = own.min(row[i] - share);
        for (j, vij) in row.iter().enumerate() {
            if i != j {
                cross = cross.min(share - vij);
            }
        }
    }
    let worst = own.min(cross);
    AuditRecord {
        passed: worst > 0.0,
        worst_margin: Some(worst),
        own_margin: Some(own),
        cross_margin: Some(cross),
    }
}
