//! The two-asset factor model: NA1 across gamma, the maximal arbitrage
//! strategy, and the plot data of the arbitrage and borrowing lines.

use na1lab::factor::{arbitrage_line_csv, max_arbitrage_strategy, na1_factor, FactorModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for gamma in [-1.0, 0.0, 0.5, 0.99, 1.0, 1.5] {
        let m = FactorModel::two_dim(gamma, 2.5, None)?;
        let na1 = na1_factor(&m)?;
        let best = if na1 { format!("{:?}", max_arbitrage_strategy(&m)?) } else { "none".into() };
        println!("gamma {gamma:>5}: NA1 {na1:<5} maximal arbitrage {best}");
    }
    let path = std::env::temp_dir().join("arbitrage_line.csv");
    std::fs::write(&path, arbitrage_line_csv(0.5, 2.5))?;
    println!("plot data for gamma 0.5, c 2.5 written to {}", path.display());
    Ok(())
}
