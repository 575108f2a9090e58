//! Seeded Monte Carlo experiments over grids of player counts.
//!
//! Each trial draws its witness matrix from the stream addressed by
//! `(seed, n, trial)`, so the tables do not depend on the thread count or on
//! the order in which trials finish: results are collected in trial order and
//! folded deterministically.
//!
//! * [`mc_sigma`] samples witness matrices only and tabulates the events
//!   `{sigma_n(M) <= n^-b}`, `{sigma_n(D) <= n^-3/2}` and
//!   `{sigma_n(X) <= n^{-b+3/2}}`, checking the per-trial inequalities that tie
//!   them together.
//! * [`mc_queries`] runs the full envy-free protocol and tabulates the number
//!   of distinct queries it spent.
//!
//! At the player counts a desktop can reach, the tail events for `b > 4` are
//! expected to have essentially zero hits; the tables can confirm consistency
//! with the bounds but cannot exhibit their decay rate.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{
    determinant, invert, min_entry, singular_values, smallest_singular_value, tail_exponent,
    SINGULAR_RATIO,
};
use crate::measure::Mediator;
use crate::models::{measures_from_matrix, sample, uniform_grid, ModelConfig, ModelKind};
use crate::protocol::{envy_free, EpsilonMode, NearExactConfig};
use crate::rng::SeedPath;

/// Relative slack on the singular-value inequalities.
pub const INEQ_TOL: f64 = 1e-9;
/// Relative tolerance of `prod sigma_k = |det M|`.
pub const DET_TOL: f64 = 1e-8;
/// Largest `n` for which the determinant identity is checked.
pub const DET_CHECK_MAX_N: usize = 50;

pub const REPORT_NOTE: &str = "Frequencies are raw counts over the trials; no constant is fitted. \
At these player counts the tail events are expected to have (near) zero hits, so the table \
checks consistency with the bounds, not their decay rate.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sigma,
    Queries,
    /// Like `Queries`, additionally tracing every query and re-deriving the
    /// ledger totals from the trace.
    Audit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Model template; its `n` is replaced by each grid point.
    pub model: ModelConfig,
    pub n_grid: Vec<usize>,
    pub b: f64,
    pub trials: u64,
    pub seed: u64,
    /// Not serialized: reports must not depend on it.
    #[serde(skip, default = "one_thread")]
    pub threads: usize,
    pub mode: Mode,
    pub epsilon_mode: EpsilonMode,
}

fn one_thread() -> usize {
    1
}

impl ExperimentSpec {
    pub fn new(model: ModelConfig, n_grid: Vec<usize>, b: f64, trials: u64, seed: u64) -> Self {
        ExperimentSpec {
            model,
            n_grid,
            b,
            trials,
            seed,
            threads: 1,
            mode: Mode::Sigma,
            epsilon_mode: EpsilonMode::Fast,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1"));
        }
        if self.threads == 0 {
            return Err(Error::config("threads must be at least 1"));
        }
        if !(self.b > 4.0) {
            return Err(Error::config(format!("b must exceed 4, got {}", self.b)));
        }
        if self.n_grid.is_empty() {
            return Err(Error::config("empty n grid"));
        }
        for &n in &self.n_grid {
            self.model.at_n(n).validate()?;
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))
    }
}

/// One trial of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub n: usize,
    pub trial: u64,
    pub sigma_m: f64,
    pub sigma_d: f64,
    pub sigma_x: f64,
    pub det_m: f64,
    pub t: Option<f64>,
    pub delta: Option<f64>,
    pub c_measured: Option<u64>,
    pub censored: bool,
    pub singular: bool,
    pub audits_passed: Option<bool>,
    pub webb_bound: Option<f64>,
    pub sigma_bound: Option<f64>,
    /// Per-trial invariant failures, empty when everything held.
    pub violations: Vec<String>,
}

impl TrialResult {
    /// `{sigma_n(M) <= n^-b}`.
    pub fn sigma_event(&self, b: f64) -> bool {
        self.sigma_m <= (self.n as f64).powf(-b)
    }

    /// `{sigma_n(D) <= n^-3/2}`.
    pub fn d_component(&self) -> bool {
        self.sigma_d <= (self.n as f64).powf(-1.5)
    }

    /// `{sigma_n(X) <= n^{-b+3/2}}`.
    pub fn x_event(&self, b: f64) -> bool {
        self.sigma_x <= (self.n as f64).powf(1.5 - b)
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(hits: u64, trials: u64, confidence: f64) -> Result<(f64, f64)> {
    if trials == 0 || hits > trials {
        return Err(Error::domain(format!("need 0 <= hits <= trials, trials >= 1 ({hits}/{trials})")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::domain(format!("confidence {confidence} outside (0, 1)")));
    }
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - confidence) / 2.0);
    let nf = trials as f64;
    let p = hits as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    Ok(((centre - half).max(0.0), (centre + half).min(1.0)))
}

/// Linear-interpolation quantile of sorted data (`NaN` when empty).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        len => {
            let h = (len - 1) as f64 * q.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Empirical `P(C >= T)` for each threshold.
pub fn survival(values: &[u64], thresholds: &[f64]) -> Vec<f64> {
    let total = values.len().max(1) as f64;
    thresholds
        .iter()
        .map(|t| values.iter().filter(|v| **v as f64 >= *t).count() as f64 / total)
        .collect()
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn run_trials<F>(spec: &ExperimentSpec, trial_fn: F) -> Result<Vec<Vec<TrialResult>>>
where
    F: Fn(&ModelConfig, SeedPath) -> Result<TrialResult> + Sync,
{
    spec.validate()?;
    let pool = spec.pool()?;
    spec.n_grid
        .iter()
        .map(|&n| {
            let cfg = spec.model.at_n(n);
            pool.install(|| {
                (0..spec.trials)
                    .into_par_iter()
                    .map(|trial| trial_fn(&cfg, SeedPath::new(spec.seed, trial)))
                    .collect::<Result<Vec<_>>>()
            })
        })
        .collect()
}

/// Singular values and the per-trial inequalities of a sampled witness.
pub fn sigma_trial(cfg: &ModelConfig, path: SeedPath, b: f64) -> Result<TrialResult> {
    let n = cfg.n;
    let nf = n as f64;
    let rec = sample(cfg, path)?;
    let sv = singular_values(&rec.m)?;
    let sigma_m = *sv.last().expect("n >= 1");
    let sigma_x = smallest_singular_value(&rec.x)?;
    let sigma_d = rec.d_diagonal().into_iter().map(f64::abs).fold(f64::INFINITY, f64::min);
    let det_m = determinant(&rec.m);
    let mut violations = Vec::new();

    let mut t = None;
    if sigma_m >= SINGULAR_RATIO * sv[0] {
        if let Ok(inv) = invert(&rec.m) {
            let tv = min_entry(&inv);
            if n >= 2 && tv > 0.0 {
                violations.push(format!("t = {tv:e} > 0"));
            }
            if tv.abs() > (1.0 + INEQ_TOL) / sigma_m {
                violations.push(format!("|t| = {:e} exceeds 1/sigma_n = {:e}", tv.abs(), 1.0 / sigma_m));
            }
            t = Some(tv);
        }
    }
    if sigma_d * sigma_x > sigma_m * (1.0 + INEQ_TOL) {
        violations.push(format!(
            "sigma_n(D) sigma_n(X) = {:e} exceeds sigma_n(M) = {sigma_m:e}",
            sigma_d * sigma_x
        ));
    }
    if n <= DET_CHECK_MAX_N {
        let prod: f64 = sv.iter().product();
        if (prod - det_m.abs()).abs() > DET_TOL * det_m.abs() {
            violations.push(format!("prod sigma = {prod:e} but |det| = {:e}", det_m.abs()));
        }
    }
    let result = TrialResult {
        n,
        trial: path.trial,
        sigma_m,
        sigma_d,
        sigma_x,
        det_m,
        t,
        delta: None,
        c_measured: None,
        censored: false,
        singular: sigma_m < SINGULAR_RATIO * sv[0],
        audits_passed: None,
        webb_bound: None,
        sigma_bound: None,
        violations,
    };
    let mut result = result;
    if cfg.kind == ModelKind::H2 && n >= 3 && result.d_component() {
        result.violations.push(format!(
            "h2 with n >= 3 but sigma_n(D) = {sigma_d:e} <= n^-3/2"
        ));
    }
    if result.sigma_event(b) && !result.d_component() && !result.x_event(b) {
        result.violations.push(format!(
            "sigma_n(M) <= n^-b and sigma_n(D) > n^-3/2 but sigma_n(X) = {sigma_x:e} > n^{{-b+3/2}} = {:e}",
            nf.powf(1.5 - b)
        ));
    }
    Ok(result)
}

/// One full protocol run on a sampled witness.
pub fn query_trial(
    cfg: &ModelConfig,
    path: SeedPath,
    epsilon_mode: EpsilonMode,
    trace: bool,
) -> Result<TrialResult> {
    let n = cfg.n;
    let rec = sample(cfg, path)?;
    let measures = measures_from_matrix(&rec.m, &uniform_grid(n))?;
    let mut med = if trace {
        Mediator::with_trace(measures)
    } else {
        Mediator::new(measures)
    };
    let protocol = NearExactConfig {
        epsilon_mode,
        seed: path.protocol_seed(n),
        ..Default::default()
    };
    let sigma_x = smallest_singular_value(&rec.x)?;
    let sigma_d = rec.d_diagonal().into_iter().fold(f64::INFINITY, f64::min);
    let mut result = TrialResult {
        n,
        trial: path.trial,
        sigma_m: smallest_singular_value(&rec.m)?,
        sigma_d,
        sigma_x,
        det_m: determinant(&rec.m),
        t: None,
        delta: None,
        c_measured: None,
        censored: false,
        singular: false,
        audits_passed: None,
        webb_bound: None,
        sigma_bound: None,
        violations: Vec::new(),
    };
    match envy_free(&mut med, &protocol) {
        Ok(report) => {
            let total = report.queries.total;
            result.sigma_m = report.sigma_n;
            result.t = Some(report.t);
            result.delta = Some(report.delta);
            result.c_measured = Some(total);
            result.webb_bound = report.bounds.webb_query_bound;
            result.sigma_bound = report.bounds.sigma_query_bound.map(|b| b.value);
            let valid = report.allocation.validate();
            if let Err(e) = &valid {
                result.violations.push(e.to_string());
            }
            result.audits_passed = Some(report.audits.all_passed() && valid.is_ok());
            let cells: u64 = report.cells.iter().map(|c| c.stats.queries).sum();
            if report.witness_queries + cells != total {
                result.violations.push(format!(
                    "witness {} + cells {cells} != ledger {total}",
                    report.witness_queries
                ));
            }
            if let Some(trace) = med.ledger().trace() {
                let distinct: BTreeSet<_> = trace.iter().collect();
                if distinct.len() as u64 != total {
                    result.violations.push(format!(
                        "trace has {} distinct queries, ledger {total}",
                        distinct.len()
                    ));
                }
            }
        }
        Err(Error::Resource(_)) => result.censored = true,
        Err(Error::SingularWitnessMatrix(_)) => result.singular = true,
        Err(e) => return Err(e),
    }
    Ok(result)
}

/// One row of the `mc-sigma` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaRow {
    pub model: String,
    pub n: usize,
    pub b: f64,
    pub trials: u64,
    pub hits_sigma_le: u64,
    pub freq: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    #[serde(rename = "freq_D_component")]
    pub freq_d_component: f64,
    #[serde(rename = "freq_X_event")]
    pub freq_x_event: f64,
    pub sigma_median: f64,
    pub sigma_q01: f64,
    pub ref_ne_sqrt: f64,
    pub ref_tail_curve: f64,
}

pub const SIGMA_COLUMNS: [&str; 14] = [
    "model",
    "n",
    "b",
    "trials",
    "hits_sigma_le",
    "freq",
    "wilson_lo",
    "wilson_hi",
    "freq_D_component",
    "freq_X_event",
    "sigma_median",
    "sigma_q01",
    "ref_ne_sqrt",
    "ref_tail_curve",
];

/// One row of the `mc-queries` table. Query statistics cover completed trials;
/// they are empty when every trial was censored or singular.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueriesRow {
    pub model: String,
    pub n: usize,
    pub b: f64,
    pub trials: u64,
    pub censored: u64,
    #[serde(rename = "C_min")]
    pub c_min: Option<u64>,
    #[serde(rename = "C_med")]
    pub c_med: Option<f64>,
    #[serde(rename = "C_max")]
    pub c_max: Option<u64>,
    #[serde(rename = "C_q99")]
    pub c_q99: Option<f64>,
    #[serde(rename = "hits_C_ge_n7b")]
    pub hits_c_ge_n7b: u64,
    pub audit_pass_rate: f64,
    pub webb_bound_med: f64,
    pub sigma_bound_med: f64,
}

pub const QUERIES_COLUMNS: [&str; 13] = [
    "model",
    "n",
    "b",
    "trials",
    "censored",
    "C_min",
    "C_med",
    "C_max",
    "C_q99",
    "hits_C_ge_n7b",
    "audit_pass_rate",
    "webb_bound_med",
    "sigma_bound_med",
];

/// Extra per-grid-point counts kept in the JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub n: usize,
    pub completed: u64,
    pub censored: u64,
    pub singular: u64,
    pub hits_d_component: u64,
    pub hits_x_event: u64,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaReport {
    pub spec: ExperimentSpec,
    pub rows: Vec<SigmaRow>,
    pub summaries: Vec<GridSummary>,
    pub note: String,
    #[serde(skip)]
    pub trials: Vec<TrialResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueriesReport {
    pub spec: ExperimentSpec,
    pub rows: Vec<QueriesRow>,
    pub summaries: Vec<GridSummary>,
    pub note: String,
    #[serde(skip)]
    pub trials: Vec<TrialResult>,
}

impl SigmaReport {
    pub fn violation_count(&self) -> usize {
        self.summaries.iter().map(|s| s.violations.len()).sum()
    }
}

impl QueriesReport {
    pub fn violation_count(&self) -> usize {
        self.summaries.iter().map(|s| s.violations.len()).sum()
    }
}

fn summary(n: usize, trials: &[TrialResult], b: f64) -> GridSummary {
    GridSummary {
        n,
        completed: trials.iter().filter(|t| t.c_measured.is_some()).count() as u64,
        censored: trials.iter().filter(|t| t.censored).count() as u64,
        singular: trials.iter().filter(|t| t.singular).count() as u64,
        hits_d_component: trials.iter().filter(|t| t.d_component()).count() as u64,
        hits_x_event: trials.iter().filter(|t| t.x_event(b)).count() as u64,
        violations: trials
            .iter()
            .flat_map(|t| t.violations.iter().map(move |v| format!("trial {}: {v}", t.trial)))
            .collect(),
    }
}

/// Tail frequencies of `sigma_n(M)` and its decomposition.
pub fn mc_sigma(spec: &ExperimentSpec) -> Result<SigmaReport> {
    if spec.mode != Mode::Sigma {
        return Err(Error::config("mc_sigma needs mode sigma"));
    }
    let grid = run_trials(spec, |cfg, path| sigma_trial(cfg, path, spec.b))?;
    let exponent = tail_exponent(spec.b)?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (&n, trials) in spec.n_grid.iter().zip(&grid) {
        let count = trials.len() as u64;
        let hits = trials.iter().filter(|t| t.sigma_event(spec.b)).count() as u64;
        let (lo, hi) = wilson_interval(hits, count, 0.95)?;
        let s = summary(n, trials, spec.b);
        let sig = sorted(trials.iter().map(|t| t.sigma_m).collect());
        let nf = n as f64;
        rows.push(SigmaRow {
            model: spec.model.kind.name().into(),
            n,
            b: spec.b,
            trials: count,
            hits_sigma_le: hits,
            freq: hits as f64 / count as f64,
            wilson_lo: lo,
            wilson_hi: hi,
            freq_d_component: s.hits_d_component as f64 / count as f64,
            freq_x_event: s.hits_x_event as f64 / count as f64,
            sigma_median: quantile(&sig, 0.5),
            sigma_q01: quantile(&sig, 0.01),
            ref_ne_sqrt: nf * (-nf.sqrt()).exp(),
            ref_tail_curve: nf.powf(exponent),
        });
        summaries.push(s);
    }
    Ok(SigmaReport {
        spec: spec.clone(),
        rows,
        summaries,
        note: REPORT_NOTE.into(),
        trials: grid.into_iter().flatten().collect(),
    })
}

/// Distribution of the number of queries spent by full protocol runs.
pub fn mc_queries(spec: &ExperimentSpec) -> Result<QueriesReport> {
    if spec.mode == Mode::Sigma {
        return Err(Error::config("mc_queries needs mode queries or audit"));
    }
    let trace = spec.mode == Mode::Audit;
    let grid = run_trials(spec, |cfg, path| query_trial(cfg, path, spec.epsilon_mode, trace))?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (&n, trials) in spec.n_grid.iter().zip(&grid) {
        let done: Vec<&TrialResult> = trials.iter().filter(|t| t.c_measured.is_some()).collect();
        let c: Vec<u64> = done.iter().filter_map(|t| t.c_measured).collect();
        let c_sorted = sorted(c.iter().map(|v| *v as f64).collect());
        let threshold = (n as f64).powf(7.0 + spec.b);
        let passes = done.iter().filter(|t| t.audits_passed == Some(true)).count();
        let median_of = |f: &dyn Fn(&TrialResult) -> Option<f64>| {
            quantile(&sorted(done.iter().filter_map(|t| f(t)).collect()), 0.5)
        };
        let s = summary(n, trials, spec.b);
        rows.push(QueriesRow {
            model: spec.model.kind.name().into(),
            n,
            b: spec.b,
            trials: trials.len() as u64,
            censored: s.censored,
            c_min: c.iter().min().copied(),
            c_med: (!c.is_empty()).then(|| quantile(&c_sorted, 0.5)),
            c_max: c.iter().max().copied(),
            c_q99: (!c.is_empty()).then(|| quantile(&c_sorted, 0.99)),
            hits_c_ge_n7b: c.iter().filter(|v| **v as f64 >= threshold).count() as u64,
            audit_pass_rate: if done.is_empty() {
                f64::NAN
            } else {
                passes as f64 / done.len() as f64
            },
            webb_bound_med: median_of(&|t| t.webb_bound),
            sigma_bound_med: median_of(&|t| t.sigma_bound),
        });
        summaries.push(s);
    }
    Ok(QueriesReport {
        spec: spec.clone(),
        rows,
        summaries,
        note: REPORT_NOTE.into(),
        trials: grid.into_iter().flatten().collect(),
    })
}

/// Writes `rows` as CSV under `columns`; an empty table yields the header only.
pub fn write_csv_to<W: Write, T: Serialize>(out: W, columns: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(columns)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Replaces `path` atomically: the content goes to a temporary file in the
/// same directory, which is then renamed over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, columns: &[&str], rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    write_csv_to(&mut buf, columns, rows)?;
    write_atomic(path, &buf)
}

pub fn write_json<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(report)?;
    buf.push(b'\n');
    write_atomic(path, &buf)
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let data = fs::read(path)?;
    let mut r = csv::Reader::from_reader(data.as_slice());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
