use serde::{Deserialize, Serialize};

use super::audit::{
    audit_envy_free, audit_near_exact, audit_proportional, audit_super_envy_free, AuditRecord,
};
use super::near_exact::{near_exact_divide, DivisionStats, EpsilonMode, NearExactConfig};
use super::Allocation;
use crate::error::{Error, Result, SingularWitness};
use crate::linalg::{
    delta, invert, min_entry, ratio_matrix, sigma_query_bound, singular_values, target_matrix,
    webb_query_bound, SigmaBound, SquareMatrix, StochasticMatrix, ROW_SUM_TOL, SINGULAR_RATIO,
};
use crate::measure::{Interval, Mediator, PieceSet, QueryCounts};
use crate::models::{jittered_grid, uniform_grid, validate_partition};
use crate::rng::{derive_seed, stream, TAG_JITTER, TAG_PROTOCOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryBounds {
    /// `n^5 (2 + 2n^{3/2}) (1 - tn) / (n - 1)`; absent for one player.
    pub webb_query_bound: Option<f64>,
    /// `n^7 max(1, 1/sigma_n)`; absent when `sigma_n = 0`.
    pub sigma_query_bound: Option<SigmaBound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Audits {
    pub near_exact: AuditRecord,
    pub envy_free: AuditRecord,
    pub super_envy_free: AuditRecord,
    pub proportional: AuditRecord,
}

impl Audits {
    pub fn all_passed(&self) -> bool {
        self.near_exact.passed
            && self.envy_free.passed
            && self.super_envy_free.passed
            && self.proportional.passed
    }
}

/// Per witness cell: the ratios it was divided in and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: usize,
    pub ratios: Vec<f64>,
    pub near_exact: AuditRecord,
    #[serde(flatten)]
    pub stats: DivisionStats,
}

/// Everything a protocol run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebbReport {
    pub n: usize,
    pub partition: Vec<Interval>,
    /// True when the uniform grid was singular and a jittered grid was used.
    pub jittered: bool,
    pub allocation: Allocation,
    pub witness: StochasticMatrix,
    pub t: f64,
    pub delta: f64,
    pub sigma_n: f64,
    pub epsilon: f64,
    pub epsilon_mode: EpsilonMode,
    pub queries: QueryCounts,
    /// Queries spent on the witness matrix (all partitions tried).
    pub witness_queries: u64,
    /// Repeated identical queries are answered from the mediator's memory and
    /// are not counted.
    pub query_convention: String,
    pub bounds: QueryBounds,
    pub audits: Audits,
    pub cells: Vec<CellReport>,
    pub seed: u64,
}

/// `m_ij = eval_i(W_j)`: `n^2` queries.
pub fn witness_matrix(med: &mut Mediator, partition: &[Interval]) -> Result<StochasticMatrix> {
    validate_partition(partition)?;
    let n = med.players();
    if partition.len() != n {
        return Err(Error::Partition(format!("{} cells for {n} players", partition.len())));
    }
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        for w in partition {
            data.push(med.eval(i, w.lo(), w.hi())?);
        }
    }
    StochasticMatrix::with_tolerance(SquareMatrix::new(n, data)?, 0.0, ROW_SUM_TOL)
}

struct Witness {
    matrix: StochasticMatrix,
    sigma_n: f64,
    inverse: Option<SquareMatrix>,
}

fn analyse(matrix: StochasticMatrix) -> Result<Witness> {
    let sv = singular_values(&matrix)?;
    let sigma_n = *sv.last().expect("n >= 1");
    let inverse = if sigma_n < SINGULAR_RATIO * sv[0] {
        None
    } else {
        match invert(&matrix) {
            Ok(inv) => Some(inv),
            Err(Error::Singular(_)) => None,
            Err(e) => return Err(e),
        }
    };
    Ok(Witness {
        matrix,
        sigma_n,
        inverse,
    })
}

/// Webb's super envy-free protocol on a given partition.
pub fn webb_super_envy_free(
    med: &mut Mediator,
    partition: &[Interval],
    cfg: &NearExactConfig,
) -> Result<WebbReport> {
    cfg.validate()?;
    let witness = analyse(witness_matrix(med, partition)?)?;
    if witness.inverse.is_none() {
        return Err(Error::Singular(format!(
            "witness sigma_n = {:e}",
            witness.sigma_n
        )));
    }
    let queries = med.ledger().total();
    run_on_witness(med, partition, witness, false, queries, cfg)
}

/// The envy-free protocol: build the witness matrix on the uniform grid and
/// run Webb's protocol. A singular witness gets one retry on a jittered grid;
/// if that is singular too the run fails with
/// [`Error::SingularWitnessMatrix`].
pub fn envy_free(med: &mut Mediator, cfg: &NearExactConfig) -> Result<WebbReport> {
    cfg.validate()?;
    let n = med.players();
    if n == 0 {
        return Err(Error::domain("no players"));
    }
    let grid = uniform_grid(n);
    let first = analyse(witness_matrix(med, &grid)?)?;
    if first.inverse.is_some() {
        let queries = med.ledger().total();
        return run_on_witness(med, &grid, first, false, queries, cfg);
    }
    let mut rng = stream(derive_seed(cfg.seed, &[TAG_JITTER]), 0);
    let jittered = jittered_grid(n, &mut rng);
    let second = analyse(witness_matrix(med, &jittered)?)?;
    if second.inverse.is_some() {
        let queries = med.ledger().total();
        return run_on_witness(med, &jittered, second, true, queries, cfg);
    }
    Err(Error::SingularWitnessMatrix(Box::new(SingularWitness {
        matrices: vec![first.matrix.into_inner(), second.matrix.into_inner()],
        sigma_n: vec![first.sigma_n, second.sigma_n],
    })))
}

fn run_on_witness(
    med: &mut Mediator,
    partition: &[Interval],
    witness: Witness,
    jittered: bool,
    witness_queries: u64,
    cfg: &NearExactConfig,
) -> Result<WebbReport> {
    let n = med.players();
    let inverse = witness.inverse.expect("checked non-singular");
    let t = min_entry(&inverse);

    let (d, ratios, epsilon) = if n == 1 {
        (0.0, SquareMatrix::identity(1), 0.0)
    } else {
        let d = delta(n, t)?;
        let target = target_matrix(n, d)?;
        let r = ratio_matrix(&inverse, &target)?;
        (d, r.into_inner(), cfg.epsilon_mode.epsilon(n, d))
    };

    let key = derive_seed(cfg.seed, &[TAG_PROTOCOL]);
    let mut pieces = vec![PieceSet::empty(); n];
    let mut cells = Vec::with_capacity(n);
    if n == 1 {
        pieces[0] = PieceSet::single(partition[0]);
    } else {
        for (j, w) in partition.iter().enumerate() {
            let row = ratios.row(j);
            let division = near_exact_divide(med, *w, row, epsilon, cfg, &mut stream(key, j as u64))?;
            let audit = audit_near_exact(med.measures(), *w, &division.parts, row, epsilon);
            for (owner, part) in division.parts.iter().enumerate() {
                pieces[owner] = pieces[owner].union(part);
            }
            cells.push(CellReport {
                cell: j,
                ratios: row.to_vec(),
                near_exact: audit,
                stats: division.stats,
            });
        }
    }

    let allocation = Allocation { pieces };
    let measures = med.measures();
    let audits = Audits {
        near_exact: AuditRecord::combine(cells.iter().map(|c| &c.near_exact)),
        envy_free: audit_envy_free(measures, &allocation),
        super_envy_free: audit_super_envy_free(measures, &allocation),
        proportional: audit_proportional(measures, &allocation),
    };
    let bounds = QueryBounds {
        webb_query_bound: if n >= 2 { webb_query_bound(n, t).ok() } else { None },
        sigma_query_bound: sigma_query_bound(n, witness.sigma_n).ok(),
    };
    Ok(WebbReport {
        n,
        partition: partition.to_vec(),
        jittered,
        allocation,
        witness: witness.matrix,
        t,
        delta: d,
        sigma_n: witness.sigma_n,
        epsilon,
        epsilon_mode: cfg.epsilon_mode,
        queries: med.ledger().snapshot(),
        witness_queries,
        query_convention: "distinct".into(),
        bounds,
        audits,
        cells,
        seed: cfg.seed,
    })
}
