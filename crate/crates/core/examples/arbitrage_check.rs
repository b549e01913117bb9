//! Classical arbitrage, NA1 and the supermartingale measure on small markets.

use na1lab::arbitrage::{check_na1, construct_esmm, find_classical_arbitrage};
use na1lab::market::{preset_constraints, ConstraintSet, DiscreteMarket, Preset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // An asset that never loses: arbitrage without constraints.
    let free = DiscreteMarket::new(vec![0.5, 0.5], vec![vec![0.0], vec![0.3]], ConstraintSet::unconstrained(1))?;
    let cert = find_classical_arbitrage(&free)?;
    println!("sure-gain asset: {:?}, strategy {:?}", cert.verdict, cert.strategy);
    println!("NA1 holds: {}", check_na1(&free)?.holds());

    // Capping the position keeps the arbitrage but bounds it, so NA1 holds.
    let capped = DiscreteMarket::new(vec![0.5, 0.5], vec![vec![0.0], vec![0.3]], preset_constraints(&Preset::NoShortNoBorrow, 1)?)?;
    println!("capped: classical {:?}, NA1 {}", find_classical_arbitrage(&capped)?.verdict, check_na1(&capped)?.holds());

    let fair = DiscreteMarket::new(vec![0.5, 0.5], vec![vec![-0.2], vec![0.3]], ConstraintSet::unconstrained(1))?;
    let q = construct_esmm(&fair)?;
    println!("supermartingale measure on a fair coin market: {:?}", q.measure);
    Ok(())
}
