//! Random witness matrices.
//!
//! * `H1` (full independence): every row of `M` is uniform on the standard
//!   simplex, realized as i.i.d. rate-one exponentials divided by their row sum.
//! * `H2(eps)` (smoothed): `M` is a fixed stochastic base with entries above
//!   `eps`, plus i.i.d. mean-zero noise in `(-eps, eps)`, renormalized by row.
//!
//! In both cases `M = D X` with `D` the diagonal of reciprocal row sums of the
//! raw factor `X`; a [`SampleRecord`] keeps all three.

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{SquareMatrix, StochasticMatrix};
use crate::measure::{Interval, PiecewiseConstantMeasure};
use crate::rng::SeedPath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    H1,
    H2,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::H1 => "h1",
            ModelKind::H2 => "h2",
        }
    }
}

/// Law of the perturbations `eps_ij` under `H2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    /// Uniform on the open interval `(-eps, eps)`.
    #[default]
    Uniform,
    /// No perturbation at all; `M` equals the base.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// `H2` base matrix; the uniform matrix when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<StochasticMatrix>,
    #[serde(default)]
    pub noise: Noise,
}

impl ModelConfig {
    pub fn h1(n: usize) -> Self {
        ModelConfig {
            kind: ModelKind::H1,
            n,
            epsilon: None,
            base: None,
            noise: Noise::Uniform,
        }
    }

    pub fn h2(n: usize, epsilon: f64) -> Self {
        ModelConfig {
            kind: ModelKind::H2,
            n,
            epsilon: Some(epsilon),
            base: None,
            noise: Noise::Uniform,
        }
    }

    pub fn with_base(mut self, base: StochasticMatrix) -> Self {
        self.base = Some(base);
        self
    }

    pub fn with_noise(mut self, noise: Noise) -> Self {
        self.noise = noise;
        self
    }

    /// The same model at another player count. A custom base is kept, so the
    /// result only validates when its size matches.
    pub fn at_n(&self, n: usize) -> Self {
        ModelConfig { n, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n must be at least 1"));
        }
        if self.kind == ModelKind::H1 {
            return Ok(());
        }
        let eps = self
            .epsilon
            .ok_or_else(|| Error::config("h2 requires epsilon"))?;
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::config(format!("epsilon {eps} outside (0, 1)")));
        }
        let base = self.resolved_base();
        if base.n() != self.n {
            return Err(Error::config(format!(
                "base is {}x{} but n = {}",
                base.n(),
                base.n(),
                self.n
            )));
        }
        if let Some(a) = base.as_slice().iter().find(|a| !(**a > eps)) {
            return Err(Error::config(format!(
                "h2 needs every base entry above epsilon = {eps}, found {a}"
            )));
        }
        Ok(())
    }

    pub fn resolved_base(&self) -> StochasticMatrix {
        self.base.clone().unwrap_or_else(|| default_base(self.n))
    }
}

/// One draw of `(X, D, M = D X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub x: SquareMatrix,
    pub d: SquareMatrix,
    pub m: StochasticMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_path: Option<SeedPath>,
}

impl SampleRecord {
    fn from_raw(x: SquareMatrix) -> Result<Self> {
        let n = x.n();
        let recip: Vec<f64> = x.rows().map(|r| 1.0 / r.iter().sum::<f64>()).collect();
        let m = SquareMatrix::from_fn(n, |i, j| recip[i] * x[(i, j)]);
        Ok(SampleRecord {
            d: SquareMatrix::diagonal(&recip),
            m: StochasticMatrix::new(m)?,
            x,
            seed_path: None,
        })
    }

    /// Diagonal entries of `D`.
    pub fn d_diagonal(&self) -> Vec<f64> {
        (0..self.d.n()).map(|i| self.d[(i, i)]).collect()
    }
}

/// Draws `X_ij = -ln(1 - U_ij)` i.i.d. and normalizes rows.
pub fn sample_h1<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<SampleRecord> {
    if n == 0 {
        return Err(Error::config("n must be at least 1"));
    }
    let data = (0..n * n)
        .map(|_| {
            let u: f64 = rng.random();
            -(-u).ln_1p()
        })
        .collect();
    SampleRecord::from_raw(SquareMatrix::new(n, data)?)
}

/// Draws `X = base + noise` and normalizes rows.
pub fn sample_h2<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<SampleRecord> {
    if cfg.kind != ModelKind::H2 {
        return Err(Error::config("sample_h2 called with a non-h2 config"));
    }
    cfg.validate()?;
    let eps = cfg.epsilon.expect("validated");
    let base = cfg.resolved_base();
    let data = base
        .as_slice()
        .iter()
        .map(|a| match cfg.noise {
            Noise::Uniform => {
                let u: f64 = rng.sample(Open01);
                a + eps * (2.0 * u - 1.0)
            }
            Noise::Zero => *a,
        })
        .collect();
    SampleRecord::from_raw(SquareMatrix::new(cfg.n, data)?)
}

/// Draws the sample addressed by `path`; identical paths give identical records.
pub fn sample(cfg: &ModelConfig, path: SeedPath) -> Result<SampleRecord> {
    cfg.validate()?;
    let mut rng = path.sample_rng(cfg.n);
    let mut rec = match cfg.kind {
        ModelKind::H1 => sample_h1(cfg.n, &mut rng)?,
        ModelKind::H2 => sample_h2(cfg, &mut rng)?,
    };
    rec.seed_path = Some(path);
    Ok(rec)
}

/// The uniform stochastic matrix `a_ij = 1/n`.
pub fn default_base(n: usize) -> StochasticMatrix {
    let v = 1.0 / n as f64;
    StochasticMatrix::new(SquareMatrix::from_fn(n, |_, _| v)).expect("uniform rows are stochastic")
}

/// Witness intervals `W_j = [j/n, (j+1)/n]`.
pub fn uniform_grid(n: usize) -> Vec<Interval> {
    (0..n)
        .map(|j| {
            Interval::new(j as f64 / n as f64, (j + 1) as f64 / n as f64).expect("grid in [0,1]")
        })
        .collect()
}

/// The uniform grid with every interior point moved by an independent uniform
/// offset in `[-1/(4n), 1/(4n))`.
pub fn jittered_grid<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Interval> {
    let amp = 1.0 / (4.0 * n as f64);
    let mut points = vec![0.0];
    for j in 1..n {
        let u: f64 = rng.random();
        points.push(j as f64 / n as f64 + amp * (2.0 * u - 1.0));
    }
    points.push(1.0);
    points
        .windows(2)
        .map(|w| Interval::new(w[0], w[1]).expect("jitter keeps order"))
        .collect()
}

/// Checks that `partition` tiles `[0, 1]` left to right with no gaps, no
/// overlaps and no empty cells.
pub fn validate_partition(partition: &[Interval]) -> Result<()> {
    let first = partition
        .first()
        .ok_or_else(|| Error::Partition("empty partition".into()))?;
    if first.lo() != 0.0 {
        return Err(Error::Partition(format!("starts at {}", first.lo())));
    }
    if partition.last().expect("non-empty").hi() != 1.0 {
        return Err(Error::Partition("does not end at 1".into()));
    }
    for (j, w) in partition.iter().enumerate() {
        if w.is_empty() {
            return Err(Error::Partition(format!("cell {j} is empty")));
        }
    }
    for (j, pair) in partition.windows(2).enumerate() {
        if pair[0].hi() != pair[1].lo() {
            return Err(Error::Partition(format!(
                "cells {j} and {} do not meet ({} vs {})",
                j + 1,
                pair[0].hi(),
                pair[1].lo()
            )));
        }
    }
    Ok(())
}

fn partition_breakpoints(partition: &[Interval]) -> Vec<f64> {
    let mut b: Vec<f64> = partition.iter().map(Interval::lo).collect();
    b.push(1.0);
    b
}

/// Player `i` gets density `M_ij / |W_j|` on `W_j`, so evaluating the
/// partition reproduces `M`.
pub fn measures_from_matrix(
    m: &StochasticMatrix,
    partition: &[Interval],
) -> Result<Vec<PiecewiseConstantMeasure>> {
    validate_partition(partition)?;
    if partition.len() != m.n() {
        return Err(Error::Partition(format!(
            "{} cells for {} players",
            partition.len(),
            m.n()
        )));
    }
    let breaks = partition_breakpoints(partition);
    m.rows()
        .map(|row| PiecewiseConstantMeasure::from_cell_masses(breaks.clone(), row))
        .collect()
}

/// Like [`measures_from_matrix`], but each cell is split into `sub_cells`
/// equal-width pieces whose share of the cell mass is Dirichlet(1, ..., 1),
/// drawn independently per player. The witness values are unchanged while the
/// players disagree inside every cell.
pub fn textured_measures<R: Rng + ?Sized>(
    m: &StochasticMatrix,
    partition: &[Interval],
    sub_cells: usize,
    rng: &mut R,
) -> Result<Vec<PiecewiseConstantMeasure>> {
    validate_partition(partition)?;
    if partition.len() != m.n() || sub_cells == 0 {
        return Err(Error::Partition("bad texture request".into()));
    }
    let mut breaks = vec![0.0];
    for w in partition {
        for s in 1..=sub_cells {
            let p = if s == sub_cells {
                w.hi()
            } else {
                w.lo() + w.len() * s as f64 / sub_cells as f64
            };
            breaks.push(p);
        }
    }
    m.rows()
        .map(|row| {
            let mut masses = Vec::with_capacity(row.len() * sub_cells);
            for mass in row {
                let e: Vec<f64> = (0..sub_cells)
                    .map(|_| {
                        let u: f64 = rng.random();
                        -(-u).ln_1p()
                    })
                    .collect();
                let total: f64 = e.iter().sum();
                masses.extend(e.iter().map(|v| mass * v / total));
            }
            PiecewiseConstantMeasure::from_cell_masses(breaks.clone(), &masses)
        })
        .collect()
}
