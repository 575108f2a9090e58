//! Sample a witness matrix under either model and run the envy-free protocol.
//!
//! `cargo run --example random_instance -- 6 h2 42`

use cakecut::models::{measures_from_matrix, sample, uniform_grid, ModelConfig};
use cakecut::protocol::{envy_free, EpsilonMode, NearExactConfig};
use cakecut::{Mediator, SeedPath};

fn main() -> cakecut::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(5);
    let model = match args.get(1).map(String::as_str) {
        Some("h2") => ModelConfig::h2(n, 0.1),
        _ => ModelConfig::h1(n),
    };
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(7);

    let path = SeedPath::new(seed, 0);
    let rec = sample(&model, path)?;
    for mode in [EpsilonMode::Fast, EpsilonMode::Paper] {
        let mut med = Mediator::new(measures_from_matrix(&rec.m, &uniform_grid(n))?);
        let cfg = NearExactConfig { epsilon_mode: mode, seed: path.protocol_seed(n), ..Default::default() };
        let report = envy_free(&mut med, &cfg)?;
        let sef = &report.audits.super_envy_free;
        println!(
            "{mode:?}: sigma_n = {:.3e}, t = {:.3}, delta = {:.4}, eps = {:.2e}, own margin {:.4}, cross margin {:.4}, passed {}",
            report.sigma_n, report.t, report.delta, report.epsilon,
            sef.own_margin.unwrap(), sef.cross_margin.unwrap(), report.audits.all_passed()
        );
        println!(
            "  queries {} (witness {}), bounds: webb {:.3e}, sigma {:.3e}",
            report.queries.total,
            report.witness_queries,
            report.bounds.webb_query_bound.unwrap_or(f64::NAN),
            report.bounds.sigma_query_bound.map_or(f64::NAN, |b| b.value)
        );
    }
    Ok(())
}
