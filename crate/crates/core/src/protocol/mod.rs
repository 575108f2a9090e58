//! Fair-division protocols: near-exact division, Webb's super envy-free
//! protocol, the envy-free wrapper around it, and the auditors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{Interval, PieceSet};

pub mod audit;
pub mod near_exact;
pub mod webb;

pub use audit::{
    audit_envy_free, audit_near_exact, audit_proportional, audit_super_envy_free, value_matrix,
    AuditRecord,
};
pub use near_exact::{
    hoeffding_k, near_exact_divide, DivisionMethod, DivisionStats, EpsilonMode, NearExactConfig,
    NearExactDivision,
};
pub use webb::{envy_free, webb_super_envy_free, witness_matrix, Audits, CellReport, QueryBounds, WebbReport};

/// One piece set per player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Allocation {
    pub pieces: Vec<PieceSet>,
}

impl Allocation {
    pub fn players(&self) -> usize {
        self.pieces.len()
    }

    /// Checks that the pieces are pairwise interior-disjoint and cover `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        let mut all: Vec<Interval> = self
            .pieces
            .iter()
            .flat_map(|p| p.intervals().iter().copied())
            .collect();
        all.sort_by(|a, b| a.lo().total_cmp(&b.lo()));
        if let Some(p) = all.windows(2).find(|p| p[1].lo() < p[0].hi()) {
            return Err(Error::InvariantViolation(format!(
                "pieces overlap: {:?} and {:?}",
                p[0], p[1]
            )));
        }
        let covered: f64 = all.iter().map(Interval::len).sum();
        if (covered - 1.0).abs() > 1e-9 {
            return Err(Error::InvariantViolation(format!("pieces cover length {covered}")));
        }
        Ok(())
    }
}
