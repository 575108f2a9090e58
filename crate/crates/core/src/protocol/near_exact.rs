//! Near-exact division of one interval in prescribed ratios.
//!
//! The mediator tries, in order of cost:
//!
//! 1. the degenerate shortcut, when a single bucket has positive ratio;
//! 2. a contiguous split by one reference player (`n' - 1` cuts plus one
//!    evaluation of each part by every player), accepted when every player
//!    already sees the ratios within tolerance;
//! 3. refinement rounds. Each non-vacuous player cuts `w` into `K` parts of
//!    equal value, the union of all cut points gives atoms worth at most
//!    `mu_i(w)/K` to every player, every player evaluates every atom, and the
//!    mediator searches for an assignment of atoms to buckets: one greedy
//!    balancing pass followed by random assignments drawn with the target
//!    ratios. If `retry_cap` assignments fail, `K` doubles.
//!
//! Checking an assignment reuses answers already paid for, so only new cuts
//! and atom evaluations are charged. Once `K` reaches [`hoeffding_k`] each
//! random assignment succeeds with probability at least 1/2, which bounds the
//! number of rounds almost surely.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{Interval, Mediator, PieceSet};

/// Ratios at or below this are treated as zero.
pub const ZERO_RATIO: f64 = 1e-12;

/// Tolerance on `sum(ratios) = 1`.
pub const RATIO_SUM_TOL: f64 = 1e-9;

/// The mediator accepts only assignments whose error stays below
/// `eps * (1 - VERIFY_SAFETY) * mu_i(w)`, leaving room for rounding between
/// queried values and the audit's direct integration.
const VERIFY_SAFETY: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpsilonMode {
    /// `eps = delta / n^2`.
    Paper,
    /// `eps = delta / (2 (n - 1))`, already enough for strict super envy-freeness.
    Fast,
}

impl EpsilonMode {
    pub fn epsilon(&self, n: usize, delta: f64) -> f64 {
        let nf = n as f64;
        match self {
            EpsilonMode::Paper => delta / (nf * nf),
            EpsilonMode::Fast => delta / (2.0 * (nf - 1.0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearExactConfig {
    pub epsilon_mode: EpsilonMode,
    /// Assignment attempts per refinement level before `K` doubles.
    pub retry_cap: usize,
    /// Largest `K` the refinement may reach; beyond it the call fails with
    /// [`Error::Resource`].
    pub k_cap: usize,
    /// Seed of the mediator's random streams.
    pub seed: u64,
}

impl Default for NearExactConfig {
    fn default() -> Self {
        NearExactConfig {
            epsilon_mode: EpsilonMode::Fast,
            retry_cap: 64,
            k_cap: 1 << 20,
            seed: 0,
        }
    }
}

impl NearExactConfig {
    pub fn validate(&self) -> Result<()> {
        if self.retry_cap == 0 {
            return Err(Error::config("retry_cap must be at least 1"));
        }
        if self.k_cap < 2 {
            return Err(Error::config("k_cap must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivisionMethod {
    Shortcut,
    Contiguous,
    Refined,
}

/// How one near-exact division was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivisionStats {
    pub method: DivisionMethod,
    /// Final `K` of the refinement (0 when no refinement ran).
    pub k_used: usize,
    /// Refinement levels run.
    pub rounds: usize,
    /// Assignments checked by the mediator, all levels together.
    pub attempts: usize,
    /// Atoms at the final level (parts for the contiguous split).
    pub pieces: usize,
    /// New queries charged by this call.
    pub queries: u64,
    /// `K` at which a random assignment provably succeeds with probability 1/2.
    pub hoeffding_k: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NearExactDivision {
    pub parts: Vec<PieceSet>,
    pub stats: DivisionStats,
}

/// `max(n, ceil(ln(4 n^2) / (2 eps^2)))`, saturating.
pub fn hoeffding_k(n: usize, epsilon: f64) -> u64 {
    let nf = n as f64;
    let k = ((4.0 * nf * nf).ln() / (2.0 * epsilon * epsilon)).ceil();
    let k = if k.is_finite() && k < u64::MAX as f64 { k as u64 } else { u64::MAX };
    k.max(n as u64)
}

/// Divides `w` into `ratios.len()` piece sets `A_j` with
/// `|mu_i(A_j) - ratios[j] mu_i(w)| < epsilon mu_i(w)` for every player `i`
/// valuing `w`.
pub fn near_exact_divide<R: Rng + ?Sized>(
    med: &mut Mediator,
    w: Interval,
    ratios: &[f64],
    epsilon: f64,
    cfg: &NearExactConfig,
    rng: &mut R,
) -> Result<NearExactDivision> {
    cfg.validate()?;
    let n = med.players();
    if ratios.len() != n {
        return Err(Error::domain(format!("{} ratios for {n} players", ratios.len())));
    }
    if ratios.iter().any(|r| !r.is_finite() || *r < -ZERO_RATIO) {
        return Err(Error::domain("ratios must be non-negative"));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > RATIO_SUM_TOL {
        return Err(Error::domain(format!("ratios sum to {sum}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::domain(format!("epsilon {epsilon} outside (0, 1)")));
    }

    let start = med.ledger().total();
    let alpha: Vec<f64> = ratios.iter().map(|r| r.max(0.0)).collect();
    let active: Vec<usize> = (0..n).filter(|&j| alpha[j] > ZERO_RATIO).collect();
    let mut stats = DivisionStats {
        method: DivisionMethod::Shortcut,
        k_used: 0,
        rounds: 0,
        attempts: 0,
        pieces: 1,
        queries: 0,
        hoeffding_k: hoeffding_k(n, epsilon),
    };

    if active.len() == 1 {
        let mut parts = vec![PieceSet::empty(); n];
        parts[active[0]] = PieceSet::single(w);
        return Ok(NearExactDivision { parts, stats });
    }

    let mut totals = vec![0.0; n];
    for (i, t) in totals.iter_mut().enumerate() {
        *t = med.eval(i, w.lo(), w.hi())?;
    }
    let hungry: Vec<usize> = (0..n).filter(|&i| totals[i] > 0.0).collect();
    let check = Checker {
        hungry: &hungry,
        totals: &totals,
        alpha: &alpha,
        active: &active,
        epsilon,
    };

    if hungry.is_empty() {
        // no constraint binds; split by length
        let parts = contiguous_parts(w, &alpha, &active, |a| w.lo() + a * w.len());
        stats.method = DivisionMethod::Contiguous;
        stats.pieces = active.len();
        return Ok(NearExactDivision { parts, stats });
    }

    // contiguous split by the first hungry player
    let reference = hungry[0];
    let mut cut_err = None;
    let parts = contiguous_parts(w, &alpha, &active, |a| {
        match med.cut(reference, w.lo(), a * totals[reference]) {
            Ok(y) => y.min(w.hi()),
            Err(e) => {
                cut_err.get_or_insert(e);
                w.hi()
            }
        }
    });
    if let Some(e) = cut_err {
        return Err(e);
    }
    let mut sums = vec![vec![0.0; n]; n];
    for &i in &hungry {
        for &j in &active {
            sums[i][j] = med.eval_pieces(i, &parts[j])?;
        }
    }
    stats.attempts = 1;
    if check.accepts(&sums) {
        stats.method = DivisionMethod::Contiguous;
        stats.pieces = active.len();
        stats.queries = med.ledger().total() - start;
        return Ok(NearExactDivision { parts, stats });
    }

    stats.method = DivisionMethod::Refined;
    let mut k = n.max(2);
    loop {
        if k > cfg.k_cap {
            return Err(Error::Resource(format!(
                "near-exact refinement needs K > {} (eps = {epsilon:e})",
                cfg.k_cap
            )));
        }
        stats.rounds += 1;
        stats.k_used = k;
        let atoms = refine(med, w, &hungry, k)?;
        let mut values = vec![Vec::new(); n];
        for &i in &hungry {
            values[i] = atoms
                .iter()
                .map(|a| med.eval(i, a.lo(), a.hi()))
                .collect::<Result<Vec<f64>>>()?;
        }
        stats.pieces = atoms.len();

        for attempt in 0..cfg.retry_cap {
            stats.attempts += 1;
            let assignment = if attempt == 0 {
                greedy_assignment(&check, &values, atoms.len())
            } else {
                random_assignment(&alpha, &active, atoms.len(), rng)
            };
            let sums = bucket_sums(&hungry, &values, &assignment, n);
            if check.accepts(&sums) {
                let mut buckets = vec![Vec::new(); n];
                for (atom, j) in atoms.iter().zip(&assignment) {
                    buckets[*j].push(*atom);
                }
                let parts = buckets.into_iter().map(PieceSet::from_intervals).collect();
                stats.queries = med.ledger().total() - start;
                return Ok(NearExactDivision { parts, stats });
            }
        }
        k = k.saturating_mul(2);
    }
}

struct Checker<'a> {
    hungry: &'a [usize],
    totals: &'a [f64],
    alpha: &'a [f64],
    active: &'a [usize],
    epsilon: f64,
}

impl Checker<'_> {
    /// `sums[i][j]` is player `i`'s value of bucket `j` as the mediator knows it.
    fn accepts(&self, sums: &[Vec<f64>]) -> bool {
        let n = self.alpha.len();
        self.hungry.iter().all(|&i| {
            let limit = self.epsilon * (1.0 - VERIFY_SAFETY) * self.totals[i];
            (0..n).all(|j| (sums[i][j] - self.alpha[j] * self.totals[i]).abs() < limit)
        })
    }
}

/// Consecutive parts of `w` in the active ratios; `locate(a)` maps a
/// cumulative ratio to a point of `w`.
fn contiguous_parts(
    w: Interval,
    alpha: &[f64],
    active: &[usize],
    mut locate: impl FnMut(f64) -> f64,
) -> Vec<PieceSet> {
    let mut parts = vec![PieceSet::empty(); alpha.len()];
    let mut left = w.lo();
    let mut cumulative = 0.0;
    for (pos, &j) in active.iter().enumerate() {
        let right = if pos + 1 == active.len() {
            w.hi()
        } else {
            cumulative += alpha[j];
            locate(cumulative).clamp(left, w.hi())
        };
        parts[j] = PieceSet::single(Interval::new(left, right).expect("ordered points of w"));
        left = right;
    }
    parts
}

/// Atoms from the union of every hungry player's `k`-quantile cuts.
fn refine(med: &mut Mediator, w: Interval, hungry: &[usize], k: usize) -> Result<Vec<Interval>> {
    let mut points = vec![w.lo(), w.hi()];
    for &i in hungry {
        points.extend(med.quantile_cuts(i, w, k)?);
    }
    points.sort_by(f64::total_cmp);
    points.dedup();
    Ok(points
        .windows(2)
        .filter(|p| p[1] > p[0])
        .map(|p| Interval::new(p[0], p[1]).expect("sorted points of w"))
        .collect())
}

fn bucket_sums(hungry: &[usize], values: &[Vec<f64>], assignment: &[usize], n: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; n]; n];
    for &i in hungry {
        for (v, j) in values[i].iter().zip(assignment) {
            sums[i][*j] += v;
        }
    }
    sums
}

/// Largest atoms first, each to the active bucket with the largest
/// value-weighted remaining deficit.
fn greedy_assignment(check: &Checker<'_>, values: &[Vec<f64>], atoms: usize) -> Vec<usize> {
    let n = check.alpha.len();
    let share = |i: usize, k: usize| values[i][k] / check.totals[i];
    let mut order: Vec<usize> = (0..atoms).collect();
    let weight: Vec<f64> = (0..atoms)
        .map(|k| check.hungry.iter().map(|&i| share(i, k)).fold(0.0, f64::max))
        .collect();
    order.sort_by(|a, b| weight[*b].total_cmp(&weight[*a]).then(a.cmp(b)));

    let mut deficit: Vec<Vec<f64>> = (0..n).map(|_| check.alpha.to_vec()).collect();
    let mut assignment = vec![check.active[0]; atoms];
    for k in order {
        let best = check
            .active
            .iter()
            .copied()
            .max_by(|&a, &b| {
                let score = |j: usize| -> f64 {
                    check.hungry.iter().map(|&i| share(i, k) * deficit[i][j]).sum()
                };
                score(a).total_cmp(&score(b)).then(b.cmp(&a))
            })
            .expect("at least two active buckets");
        for &i in check.hungry {
            deficit[i][best] -= share(i, k);
        }
        assignment[k] = best;
    }
    assignment
}

fn random_assignment<R: Rng + ?Sized>(
    alpha: &[f64],
    active: &[usize],
    atoms: usize,
    rng: &mut R,
) -> Vec<usize> {
    let total: f64 = active.iter().map(|&j| alpha[j]).sum();
    (0..atoms)
        .map(|_| {
            let mut u: f64 = rng.random::<f64>() * total;
            for &j in active {
                if u < alpha[j] {
                    return j;
                }
                u -= alpha[j];
            }
            *active.last().expect("non-empty")
        })
        .collect()
}
