//! Two-period binomial tree: global NA1, dynamic programming for log and
//! power utility, the numeraire process and a super-hedge of a path claim.

use na1lab::market::{preset_constraints, DiscreteMarket, Preset};
use na1lab::portfolio::UtilitySpec;
use na1lab::tree::{backward_induction, global_na1, iid_tree, numeraire_process, superhedge_tree, DpOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let step = DiscreteMarket::new(vec![0.5, 0.5], vec![vec![1.0], vec![-0.5]], preset_constraints(&Preset::NoShortNoBorrow, 1)?)?;
    let tree = iid_tree(&step, 2)?;
    println!("global NA1: {}", global_na1(&tree)?.holds);

    for u in [UtilitySpec::Log, UtilitySpec::Power { gamma: -1.0 }] {
        let dp = backward_induction(&tree, &u, &DpOptions::default())?;
        println!("{u:?}: value {:.6}, root strategy {:?}", dp.value, dp.policy.strategy(tree.root()));
    }

    let np = numeraire_process(&tree)?;
    println!("deflator supermartingale slack {:.3e}", np.deflator.min_slack());

    // pays 3 only after two up moves
    let claim: Vec<f64> = tree.leaves().iter().map(|&l| if tree.id(l) == "0.0.0" { 3.0 } else { 0.0 }).collect();
    println!("super-hedging value of the path claim: {:.6}", superhedge_tree(&tree, &claim)?.value);
    Ok(())
}
