//! Asking players `eval` and `cut` questions and watching the ledger.

use cakecut::{Interval, Mediator, PiecewiseConstantMeasure};

fn main() -> cakecut::Result<()> {
    // player 0 is uniform; player 1 only cares about the left half
    let left = PiecewiseConstantMeasure::new(vec![0.0, 0.5, 1.0], vec![2.0, 0.0])?;
    let mut med = Mediator::with_trace(vec![PiecewiseConstantMeasure::uniform(), left]);

    println!("eval_0(0.2, 0.5) = {}", med.eval(0, 0.2, 0.5)?);
    println!("eval_1(0.1, 0.4) = {}", med.eval(1, 0.1, 0.4)?);
    println!("cut_1(0, 0.6)    = {}", med.cut(1, 0.0, 0.6)?);
    println!("eval_1(0.1, 0.4) = {} (asked again)", med.eval(1, 0.1, 0.4)?);

    let quartiles = med.quantile_cuts(1, Interval::unit(), 4)?;
    println!("player 1 quartiles: {quartiles:?}");

    let ledger = med.ledger();
    println!(
        "{} queries issued, {} distinct charged ({} eval, {} cut)",
        ledger.trace().map_or(0, |t| t.len()),
        ledger.total(),
        ledger.snapshot().eval,
        ledger.snapshot().cut
    );
    Ok(())
}
