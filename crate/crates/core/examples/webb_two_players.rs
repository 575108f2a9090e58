//! Webb's protocol by hand on a two-player witness matrix.

use cakecut::linalg::{delta, invert, min_entry, ratio_matrix, target_matrix, SquareMatrix, StochasticMatrix};
use cakecut::models::{measures_from_matrix, uniform_grid};
use cakecut::protocol::{envy_free, NearExactConfig};
use cakecut::Mediator;

fn main() -> cakecut::Result<()> {
    let m = StochasticMatrix::new(SquareMatrix::from_rows(&[[2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0]])?)?;
    let inv = invert(&m)?;
    let t = min_entry(&inv);
    let d = delta(2, t)?;
    let target = target_matrix(2, d)?;
    let r = ratio_matrix(&inv, &target)?;
    println!("M^-1 = {:?}", inv.rows().collect::<Vec<_>>());
    println!("t = {t}, delta = {d}");
    println!("N = {:?}", target.rows().collect::<Vec<_>>());
    println!("R = {:?}", r.rows().collect::<Vec<_>>());

    let mut med = Mediator::new(measures_from_matrix(&m, &uniform_grid(2))?);
    let report = envy_free(&mut med, &NearExactConfig::default())?;
    for (i, piece) in report.allocation.pieces.iter().enumerate() {
        println!("player {i} gets {:?}", piece.intervals());
    }
    println!(
        "envy-free margin {:.4}, super envy-free margin {:.4}, {} queries",
        report.audits.envy_free.worst_margin.unwrap(),
        report.audits.super_envy_free.worst_margin.unwrap(),
        report.queries.total
    );
    Ok(())
}
