//! Player measures on the cake `[0, 1]` and the two Robertson-Webb queries.
//!
//! A measure is a piecewise-constant density stored together with its prefix
//! masses, so both `eval` and `cut` are closed-form. Every query goes through a
//! [`MeasureOracle`], which charges it to a shared [`QueryLedger`]. Auditors that
//! need the true values read the densities directly through
//! [`PiecewiseConstantMeasure::mass`], which never touches a ledger.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for comparing masses.
pub const MASS_TOL: f64 = 1e-12;

/// Allowed drift of a loaded measure's total mass before renormalization.
pub const LOAD_TOL: f64 = 1e-9;

/// A closed sub-interval `[lo, hi]` of the cake.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi > 1.0 || lo > hi {
            return Err(Error::domain(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }

    /// The whole cake.
    pub fn unit() -> Self {
        Interval { lo: 0.0, hi: 1.0 }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        Interval::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(iv: Interval) -> Self {
        [iv.lo, iv.hi]
    }
}

/// A finite union of intervals, kept sorted with touching intervals merged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Interval>", into = "Vec<Interval>")]
pub struct PieceSet {
    intervals: Vec<Interval>,
}

impl PieceSet {
    pub fn empty() -> Self {
        PieceSet::default()
    }

    pub fn single(iv: Interval) -> Self {
        PieceSet::from_intervals(vec![iv])
    }

    /// Builds a normalized piece set: sorted by `lo`, zero-length intervals
    /// dropped, touching or overlapping intervals merged.
    pub fn from_intervals(mut intervals: Vec<Interval>) -> Self {
        intervals.retain(|iv| !iv.is_empty());
        intervals.sort_by(|a, b| a.lo.total_cmp(&b.lo).then(a.hi.total_cmp(&b.hi)));
        let mut merged: Vec<Interval> = Vec::with_capacity(intervals.len());
        for iv in intervals {
            match merged.last_mut() {
                Some(last) if iv.lo <= last.hi => last.hi = last.hi.max(iv.hi),
                _ => merged.push(iv),
            }
        }
        PieceSet { intervals: merged }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Lebesgue measure of the union.
    pub fn lebesgue(&self) -> f64 {
        self.intervals.iter().map(Interval::len).sum()
    }

    pub fn union(&self, other: &PieceSet) -> PieceSet {
        let mut all = self.intervals.clone();
        all.extend_from_slice(&other.intervals);
        PieceSet::from_intervals(all)
    }
}

impl From<Vec<Interval>> for PieceSet {
    fn from(v: Vec<Interval>) -> Self {
        PieceSet::from_intervals(v)
    }
}

impl From<PieceSet> for Vec<Interval> {
    fn from(p: PieceSet) -> Self {
        p.intervals
    }
}

#[derive(Deserialize)]
struct MeasureFile {
    breakpoints: Vec<f64>,
    densities: Vec<f64>,
}

/// An absolutely continuous probability measure on `[0, 1]` with a
/// piecewise-constant density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureFile")]
pub struct PiecewiseConstantMeasure {
    breakpoints: Vec<f64>,
    densities: Vec<f64>,
    #[serde(skip)]
    prefix: Vec<f64>,
}

impl TryFrom<MeasureFile> for PiecewiseConstantMeasure {
    type Error = Error;

    fn try_from(f: MeasureFile) -> Result<Self> {
        PiecewiseConstantMeasure::new(f.breakpoints, f.densities)
    }
}

impl PiecewiseConstantMeasure {
    /// Builds a measure from breakpoints `0 = b_0 < ... < b_B = 1` and `B`
    /// densities. The total mass is renormalized to one; a total further than
    /// [`LOAD_TOL`] from one is rejected.
    pub fn new(breakpoints: Vec<f64>, densities: Vec<f64>) -> Result<Self> {
        let cells = densities.len();
        if cells == 0 || breakpoints.len() != cells + 1 {
            return Err(Error::domain(format!(
                "need B+1 breakpoints for B densities (got {} and {cells})",
                breakpoints.len()
            )));
        }
        if breakpoints[0] != 0.0 || breakpoints[cells] != 1.0 {
            return Err(Error::domain("breakpoints must start at 0 and end at 1"));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::domain("breakpoints must be strictly increasing"));
        }
        if densities.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::domain("densities must be finite and non-negative"));
        }
        let total: f64 = densities
            .iter()
            .zip(breakpoints.windows(2))
            .map(|(d, w)| d * (w[1] - w[0]))
            .sum();
        if (total - 1.0).abs() > LOAD_TOL {
            return Err(Error::domain(format!("total mass {total} is not 1")));
        }
        let densities: Vec<f64> = densities.into_iter().map(|d| d / total).collect();
        let mut m = PiecewiseConstantMeasure {
            breakpoints,
            densities,
            prefix: Vec::new(),
        };
        m.rebuild_prefix();
        Ok(m)
    }

    /// Builds a measure from the mass carried by each cell.
    pub fn from_cell_masses(breakpoints: Vec<f64>, masses: &[f64]) -> Result<Self> {
        if breakpoints.len() != masses.len() + 1 {
            return Err(Error::domain("need one more breakpoint than masses"));
        }
        let densities = masses
            .iter()
            .zip(breakpoints.windows(2))
            .map(|(m, w)| m / (w[1] - w[0]))
            .collect();
        PiecewiseConstantMeasure::new(breakpoints, densities)
    }

    /// Lebesgue measure on `[0, 1]`.
    pub fn uniform() -> Self {
        PiecewiseConstantMeasure::new(vec![0.0, 1.0], vec![1.0]).expect("uniform measure")
    }

    fn rebuild_prefix(&mut self) {
        let mut prefix = Vec::with_capacity(self.densities.len() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for (d, w) in self.densities.iter().zip(self.breakpoints.windows(2)) {
            acc += d * (w[1] - w[0]);
            prefix.push(acc);
        }
        self.prefix = prefix;
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn prefix_masses(&self) -> &[f64] {
        &self.prefix
    }

    fn cells(&self) -> usize {
        self.densities.len()
    }

    fn cell_of(&self, x: f64) -> usize {
        let idx = self.breakpoints.partition_point(|b| *b <= x);
        idx.saturating_sub(1).min(self.cells() - 1)
    }

    /// Cumulative mass `mu([0, x])`.
    pub fn cdf(&self, x: f64) -> f64 {
        let c = self.cell_of(x);
        let v = self.prefix[c] + self.densities[c] * (x - self.breakpoints[c]);
        v.min(self.prefix[c + 1])
    }

    /// `mu([x, y])` read directly from the density. Not a query.
    pub fn mass(&self, x: f64, y: f64) -> f64 {
        (self.cdf(y) - self.cdf(x)).max(0.0)
    }

    /// Total mass of a piece set. Not a query.
    pub fn mass_of(&self, pieces: &PieceSet) -> f64 {
        pieces.intervals().iter().map(|iv| self.mass(iv.lo, iv.hi)).sum()
    }

    /// Smallest `y >= x` with `mu([x, y]) = a`, clamping `a` to the available mass.
    pub fn inverse(&self, x: f64, a: f64) -> f64 {
        if a <= 0.0 {
            return x;
        }
        let start = self.cdf(x);
        let target = (start + a).min(self.prefix[self.cells()]);
        if target <= start {
            return x;
        }
        let c0 = self.cell_of(x);
        let c = (c0 + self.prefix[c0 + 1..].partition_point(|p| *p < target)).min(self.cells() - 1);
        let (lo, base) = if c == c0 {
            (x, start)
        } else {
            (self.breakpoints[c], self.prefix[c])
        };
        let d = self.densities[c];
        if d <= 0.0 {
            return lo;
        }
        (lo + (target - base) / d).clamp(lo, self.breakpoints[c + 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Eval,
    Cut,
}

/// Canonical identity of a query: kind, player and the bit patterns of both
/// real arguments (`-0.0` folded into `0.0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QueryKey {
    pub kind: QueryKind,
    pub player: usize,
    pub arg0: u64,
    pub arg1: u64,
}

impl QueryKey {
    pub fn new(kind: QueryKind, player: usize, a: f64, b: f64) -> Self {
        QueryKey {
            kind,
            player,
            arg0: canonical_bits(a),
            arg1: canonical_bits(b),
        }
    }
}

fn canonical_bits(v: f64) -> u64 {
    if v == 0.0 {
        0.0f64.to_bits()
    } else {
        v.to_bits()
    }
}

/// Query totals at a point in time.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryCounts {
    pub eval: u64,
    pub cut: u64,
    pub total: u64,
    pub eval_per_player: Vec<u64>,
    pub cut_per_player: Vec<u64>,
}

/// Counts distinct queries. The mediator remembers every answer, so asking the
/// same question twice costs nothing the second time.
#[derive(Debug, Clone, Default)]
pub struct QueryLedger {
    eval_counts: Vec<u64>,
    cut_counts: Vec<u64>,
    seen: HashSet<QueryKey>,
    trace: Option<Vec<QueryKey>>,
}

impl QueryLedger {
    pub fn new(players: usize) -> Self {
        QueryLedger {
            eval_counts: vec![0; players],
            cut_counts: vec![0; players],
            seen: HashSet::new(),
            trace: None,
        }
    }

    /// A ledger that additionally keeps every issued query, repeats included.
    pub fn with_trace(players: usize) -> Self {
        QueryLedger {
            trace: Some(Vec::new()),
            ..QueryLedger::new(players)
        }
    }

    /// Charges a query; returns whether it was new.
    pub fn record(&mut self, key: QueryKey) -> bool {
        if let Some(trace) = &mut self.trace {
            trace.push(key);
        }
        let fresh = self.seen.insert(key);
        if fresh {
            match key.kind {
                QueryKind::Eval => self.eval_counts[key.player] += 1,
                QueryKind::Cut => self.cut_counts[key.player] += 1,
            }
        }
        fresh
    }

    pub fn total(&self) -> u64 {
        self.seen.len() as u64
    }

    pub fn trace(&self) -> Option<&[QueryKey]> {
        self.trace.as_deref()
    }

    pub fn snapshot(&self) -> QueryCounts {
        let eval = self.eval_counts.iter().sum();
        let cut = self.cut_counts.iter().sum();
        QueryCounts {
            eval,
            cut,
            total: eval + cut,
            eval_per_player: self.eval_counts.clone(),
            cut_per_player: self.cut_counts.clone(),
        }
    }
}

/// One player's view: answers `eval` and `cut` and charges the ledger.
pub struct MeasureOracle<'a> {
    player: usize,
    measure: &'a PiecewiseConstantMeasure,
    ledger: &'a mut QueryLedger,
}

impl MeasureOracle<'_> {
    pub fn player(&self) -> usize {
        self.player
    }

    /// `eval_i(x, y)`: the value of `[x, y]`.
    pub fn eval(&mut self, x: f64, y: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) || x > y {
            return Err(Error::domain(format!("eval on invalid interval [{x}, {y}]")));
        }
        self.ledger.record(QueryKey::new(QueryKind::Eval, self.player, x, y));
        Ok(self.measure.mass(x, y))
    }

    /// `cut_i(x, a)`: the leftmost `y` with `mu_i([x, y]) = a`.
    pub fn cut(&mut self, x: f64, a: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::domain(format!("cut from {x} outside the cake")));
        }
        if !(a >= 0.0) {
            return Err(Error::domain(format!("cut with negative value {a}")));
        }
        let available = self.measure.mass(x, 1.0);
        if a > available + MASS_TOL {
            return Err(Error::InsufficientMass {
                requested: a,
                available,
            });
        }
        self.ledger.record(QueryKey::new(QueryKind::Cut, self.player, x, a));
        Ok(self.measure.inverse(x, a))
    }

    /// Sum of `eval` over the intervals of a piece set.
    pub fn eval_pieces(&mut self, pieces: &PieceSet) -> Result<f64> {
        let mut total = 0.0;
        for iv in pieces.intervals() {
            total += self.eval(iv.lo, iv.hi)?;
        }
        Ok(total)
    }

    /// Points splitting `w` into `k` parts of equal value to this player:
    /// one `eval` for the value of `w`, then `k - 1` cuts from `w.lo`.
    /// Empty when the player gives `w` no value.
    pub fn quantile_cuts(&mut self, w: Interval, k: usize) -> Result<Vec<f64>> {
        if k == 0 {
            return Err(Error::domain("quantile_cuts needs k >= 1"));
        }
        let total = self.eval(w.lo, w.hi)?;
        if total <= 0.0 {
            return Ok(Vec::new());
        }
        let mut cuts = Vec::with_capacity(k - 1);
        for step in 1..k {
            let a = (step as f64 * total) / k as f64;
            cuts.push(self.cut(w.lo, a)?.min(w.hi));
        }
        Ok(cuts)
    }
}

/// The mediator's side of a protocol run: every player's measure plus the
/// single ledger their oracles share.
#[derive(Debug, Clone)]
pub struct Mediator {
    measures: Vec<PiecewiseConstantMeasure>,
    ledger: QueryLedger,
}

impl Mediator {
    pub fn new(measures: Vec<PiecewiseConstantMeasure>) -> Self {
        let ledger = QueryLedger::new(measures.len());
        Mediator { measures, ledger }
    }

    pub fn with_trace(measures: Vec<PiecewiseConstantMeasure>) -> Self {
        let ledger = QueryLedger::with_trace(measures.len());
        Mediator { measures, ledger }
    }

    pub fn players(&self) -> usize {
        self.measures.len()
    }

    pub fn oracle(&mut self, player: usize) -> Result<MeasureOracle<'_>> {
        let measure = self
            .measures
            .get(player)
            .ok_or_else(|| Error::domain(format!("no player {player}")))?;
        Ok(MeasureOracle {
            player,
            measure,
            ledger: &mut self.ledger,
        })
    }

    pub fn eval(&mut self, player: usize, x: f64, y: f64) -> Result<f64> {
        self.oracle(player)?.eval(x, y)
    }

    pub fn cut(&mut self, player: usize, x: f64, a: f64) -> Result<f64> {
        self.oracle(player)?.cut(x, a)
    }

    pub fn eval_pieces(&mut self, player: usize, pieces: &PieceSet) -> Result<f64> {
        self.oracle(player)?.eval_pieces(pieces)
    }

    pub fn quantile_cuts(&mut self, player: usize, w: Interval, k: usize) -> Result<Vec<f64>> {
        self.oracle(player)?.quantile_cuts(w, k)
    }

    pub fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    /// Direct density access for auditors. Bypasses the ledger.
    pub fn measures(&self) -> &[PiecewiseConstantMeasure] {
        &self.measures
    }
}
