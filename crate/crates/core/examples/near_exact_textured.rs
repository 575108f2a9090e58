//! Near-exact division when players disagree inside a cell, so a single
//! contiguous split is not enough and the mediator refines.

use cakecut::models::{sample, textured_measures, uniform_grid, ModelConfig};
use cakecut::protocol::{audit_near_exact, near_exact_divide, NearExactConfig};
use cakecut::rng::stream;
use cakecut::{Interval, Mediator, SeedPath};

fn main() -> cakecut::Result<()> {
    let n = 4;
    let rec = sample(&ModelConfig::h1(n), SeedPath::new(3, 0))?;
    let measures = textured_measures(&rec.m, &uniform_grid(n), 8, &mut stream(11, 0))?;
    let mut med = Mediator::new(measures);
    let w = Interval::new(0.0, 0.5)?;
    let ratios = [0.4, 0.3, 0.2, 0.1];
    for (k, eps) in [0.1, 0.02, 0.005].into_iter().enumerate() {
        let before = med.ledger().total();
        let div = near_exact_divide(&mut med, w, &ratios, eps, &NearExactConfig::default(), &mut stream(12, k as u64))?;
        let audit = audit_near_exact(med.measures(), w, &div.parts, &ratios, eps);
        println!(
            "eps {eps}: {:?}, K = {}, {} atoms, {} attempts, {} new queries, audit {} (slack {:.2e}); Hoeffding K would be {}",
            div.stats.method,
            div.stats.k_used,
            div.stats.pieces,
            div.stats.attempts,
            med.ledger().total() - before,
            audit.passed,
            audit.worst_margin.unwrap_or(f64::NAN),
            div.stats.hoeffding_k
        );
    }
    Ok(())
}
