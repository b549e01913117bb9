//! Build a two-asset market, inspect its support span and allowed set, and
//! compute terminal wealth for a strategy.

use na1lab::market::{preset_constraints, wealth, ConstraintSet, DiscreteMarket, Preset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // The second asset is twice the first, so the support spans a line.
    let returns = vec![vec![0.2, 0.4], vec![-0.1, -0.2], vec![0.05, 0.1]];
    let probs = vec![0.3, 0.3, 0.4];

    // A borrowing cap also limits the riskless direction (2, -1) and is refused.
    let capped = DiscreteMarket::new(probs.clone(), returns.clone(), preset_constraints(&Preset::BorrowLimit(1.5), 2)?);
    println!("borrowing cap on a degenerate market: {}", capped.unwrap_err());

    let market = DiscreteMarket::new(probs, returns, ConstraintSet::unconstrained(2))?;
    let basis = market.subspace();
    println!("support span has rank {} in dimension {}", basis.rank(), basis.dim());
    let pi = [1.0, 0.25];
    println!("projection of {pi:?} onto the span: {:?}", basis.project(&pi));

    let allowed = market.allowed_set();
    println!("allowed set has {} halfspaces; contains {pi:?}: {}", allowed.halfspaces.len(), allowed.contains(&pi, 1e-12));
    println!("wealth from 100 under {pi:?}: {:?}", wealth(&pi, 100.0, &market));
    Ok(())
}
