//! Envy-free cake cutting in the Robertson-Webb query model.
//!
//! Players hold piecewise-constant measures on `[0, 1]` and answer only two
//! questions, `eval` and `cut`, each charged to a ledger ([`measure`]). Webb's
//! super envy-free protocol ([`protocol`]) turns the witness matrix
//! `M = (mu_i(W_j))` into an allocation every player strictly prefers, using
//! the matrix routines in [`linalg`]. Witness matrices come from the two random
//! models in [`models`], and [`harness`] runs seeded Monte Carlo experiments on
//! the smallest singular value of `M` and on the number of queries spent.
//!
//! ```
//! use cakecut::models::{measures_from_matrix, sample, uniform_grid, ModelConfig};
//! use cakecut::protocol::{envy_free, NearExactConfig};
//! use cakecut::{Mediator, SeedPath};
//!
//! let rec = sample(&ModelConfig::h1(4), SeedPath::new(7, 0)).unwrap();
//! let measures = measures_from_matrix(&rec.m, &uniform_grid(4)).unwrap();
//! let mut mediator = Mediator::new(measures);
//! let report = envy_free(&mut mediator, &NearExactConfig::default()).unwrap();
//! assert!(report.audits.super_envy_free.passed);
//! ```

pub mod cli;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod measure;
pub mod models;
pub mod protocol;
pub mod rng;

pub use error::{Error, Result};
pub use measure::{Interval, Mediator, PieceSet, PiecewiseConstantMeasure, QueryLedger};
pub use rng::SeedPath;
