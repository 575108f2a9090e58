//! A small Monte Carlo run of both experiments, printed as CSV.
//!
//! `cargo run --release --example tail_experiment -- 2000`

use cakecut::harness::{mc_queries, mc_sigma, write_csv_to, ExperimentSpec, Mode, QUERIES_COLUMNS, SIGMA_COLUMNS};
use cakecut::models::ModelConfig;

fn main() -> cakecut::Result<()> {
    let trials = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());

    let mut spec = ExperimentSpec::new(ModelConfig::h1(5), vec![5, 10, 20, 40], 5.0, trials, 1);
    spec.threads = threads;
    let sigma = mc_sigma(&spec)?;
    write_csv_to(std::io::stdout(), &SIGMA_COLUMNS, &sigma.rows)?;
    println!();

    let mut spec = ExperimentSpec::new(ModelConfig::h2(3, 0.1), vec![3, 4, 5, 6], 5.0, trials / 10 + 1, 1);
    spec.threads = threads;
    spec.mode = Mode::Queries;
    let queries = mc_queries(&spec)?;
    write_csv_to(std::io::stdout(), &QUERIES_COLUMNS, &queries.rows)?;
    eprintln!("{}", sigma.note);
    Ok(())
}
