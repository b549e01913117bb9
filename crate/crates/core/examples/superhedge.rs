//! Super-hedging price with its dual certificate, next to the real-world,
//! indifference and shortfall valuations of the same claim.

use na1lab::hedging::{indifference_price, real_world_price, shortfall_hedge, superhedge, Claim, PiecewiseLinearLoss};
use na1lab::market::{preset_constraints, DiscreteMarket, Preset};
use na1lab::portfolio::UtilitySpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let market = DiscreteMarket::new(vec![0.5, 0.5], vec![vec![-0.5], vec![1.0]], preset_constraints(&Preset::NoShortNoBorrow, 1)?)?;
    let claim = Claim::new(vec![0.0, 1.5])?;

    let sh = superhedge(&market, &claim)?;
    println!("super-hedge: primal {} dual {} strategy {:?}", sh.primal_value, sh.dual_value, sh.strategy);
    println!("dual deflator {:?}", sh.dual_deflator);
    println!("real-world price {}", real_world_price(&market, &claim)?);
    println!("log-indifference price at capital 1: {:.6}", indifference_price(&market, &claim, &UtilitySpec::Log, 1.0)?);

    let short = shortfall_hedge(&market, &claim, &PiecewiseLinearLoss::positive_part(), 0.5)?;
    println!("expected shortfall with half the super-hedging capital: {:.6}", short.risk);
    Ok(())
}
