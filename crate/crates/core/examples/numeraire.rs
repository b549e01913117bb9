//! Log-optimal (numeraire) portfolio, its certificate and the deflator it
//! induces, on the lognormal asset with a position cap.

use na1lab::factor::lognormal_asset_market;
use na1lab::market::ConstraintSet;
use na1lab::portfolio::{deflator_from_numeraire, numeraire_portfolio, verify_numeraire};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for cap in [1.0, 0.3] {
        let set = ConstraintSet::from_rows(1, vec![(vec![1.0], cap), (vec![-1.0], 0.0)])?;
        let market = lognormal_asset_market(0.0, 1.0, 64, set)?;
        let rho = numeraire_portfolio(&market)?;
        let cert = verify_numeraire(&market, &rho.strategy)?;
        let z = deflator_from_numeraire(&market, &rho.strategy)?;
        let mass: f64 = market.probs().iter().zip(&z.values).map(|(p, z)| p * z).sum();
        println!("cap {cap}: rho = {:.6}, sup E[V/V^rho] = {cert:.9}, E[Z] = {mass:.6}", rho.strategy[0]);
    }
    // Below 1/2 the cap binds and the deflator loses mass: it is not a density.
    Ok(())
}
