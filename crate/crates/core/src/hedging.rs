//! Super-hedging with LP duality, shortfall hedging, utility indifference
//! prices and real-world prices.

use crate::arbitrage::{check_na1, expected_gain_max};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::lp::{LinearProgram, LpStatus};
use crate::market::DiscreteMarket;
use crate::portfolio::{maximize_state_utility, numeraire_portfolio, OptimizerOptions, StateUtility, UtilitySpec};
use serde::{Deserialize, Serialize};

/// Deflator entries below this are replaced by it to keep the deflator positive.
pub const DEFLATOR_FLOOR: f64 = 1e-12;

/// Nonnegative payoff per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Claim {
    payoff: Vec<f64>,
}

impl Claim {
    pub fn new(payoff: Vec<f64>) -> Result<Self> {
        if payoff.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidParameter("claim payoffs must be finite and nonnegative".into()));
        }
        Ok(Claim { payoff })
    }

    pub fn payoff(&self) -> &[f64] {
        &self.payoff
    }

    pub fn scaled(&self, k: f64) -> Result<Claim> {
        Claim::new(self.payoff.iter().map(|x| k * x).collect())
    }

    fn check(&self, market: &DiscreteMarket) -> Result<()> {
        if self.payoff.len() != market.num_states() {
            return Err(Error::InvalidParameter("claim needs one payoff per state".into()));
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for Claim {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Claim::new(v)
    }
}

impl From<Claim> for Vec<f64> {
    fn from(c: Claim) -> Self {
        c.payoff
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuationReport {
    pub primal_value: f64,
    pub strategy: Vec<f64>,
    pub dual_value: f64,
    pub dual_deflator: Vec<f64>,
    pub gap: f64,
    pub attainable: bool,
    /// States whose deflator entry was lifted to the positivity floor.
    pub floored_states: Vec<usize>,
    /// `min_w (v (1 + <pi, R(w)>) - xi(w))`.
    pub replication_residual: f64,
    /// `max over Theta ∩ L of E[Z* (1 + <pi, R>)]`.
    pub deflator_check: f64,
    pub lp_status: String,
}

fn require_na1(market: &DiscreteMarket) -> Result<()> {
    if !check_na1(market)?.holds() {
        return Err(Error::Precondition("NA1 fails, so some nonzero claims have zero super-hedging price".into()));
    }
    Ok(())
}

/// Cheapest super-replication `v + <y, R> >= xi` with `y = v pi`, plus the dual deflator.
pub fn superhedge(market: &DiscreteMarket, claim: &Claim) -> Result<ValuationReport> {
    claim.check(market)?;
    require_na1(market)?;
    let basis = market.subspace();
    let r = basis.rank();
    let m = market.num_states();
    let xi = claim.payoff();
    let red = market.reduced_allowed();
    let ru: Vec<Vec<f64>> = market.returns().iter().map(|z| basis.coords(z)).collect();

    let mut obj = vec![0.0; r + 1];
    obj[0] = 1.0;
    let mut lp = LinearProgram::minimize(obj);
    for w in 0..m {
        let mut row = vec![-1.0];
        row.extend(ru[w].iter().map(|v| -v));
        lp.le(row, -xi[w]);
    }
    for (a, b) in red.rows.iter().zip(&red.rhs) {
        let mut row = vec![-b];
        row.extend(a.iter().cloned());
        lp.le(row, 0.0);
    }
    let mut nonneg = vec![0.0; r + 1];
    nonneg[0] = -1.0;
    lp.le(nonneg, 0.0);
    let sol = lp.solve()?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::numeric(format!("super-hedging LP ended {:?}", sol.status), f64::NAN));
    }
    let v = sol.x[0];
    let y = basis.embed(&sol.x[1..]);
    let strategy: Vec<f64> = if v > 0.0 { y.iter().map(|c| c / v).collect() } else { vec![0.0; market.dim()] };
    let residuals: Vec<f64> = (0..m).map(|w| v + dot(&y, &market.returns()[w]) - xi[w]).collect();
    let replication_residual = residuals.iter().cloned().fold(f64::INFINITY, f64::min);
    let replicates = residuals.iter().all(|e| e.abs() <= 1e-9);

    // State multipliers are the super-hedging dual: Z* = lambda / p.
    let p = market.probs();
    let mut z: Vec<f64> = (0..m).map(|w| sol.duals[w] / p[w]).collect();
    let mut strictly_positive = z.iter().all(|v| *v > DEFLATOR_FLOOR);
    if !strictly_positive {
        if let Some(zp) = positive_optimal_dual(market, xi, &ru, &red, dot_p(p, &z, xi))? {
            z = zp;
            strictly_positive = true;
        }
    }
    let mut floored_states = vec![];
    for (w, zw) in z.iter_mut().enumerate() {
        if *zw <= DEFLATOR_FLOOR {
            *zw = DEFLATOR_FLOOR;
            floored_states.push(w);
        }
    }
    let pz: Vec<f64> = p.iter().zip(&z).map(|(a, b)| a * b).collect();
    let deflator_check = pz.iter().sum::<f64>() + expected_gain_max(market, &pz)?;
    if deflator_check > 1.0 + 1e-8 {
        return Err(Error::numeric("dual deflator fails the supermartingale check", deflator_check - 1.0));
    }
    let dual_value = dot_p(p, &z, xi);
    Ok(ValuationReport {
        primal_value: v,
        strategy,
        dual_value,
        dual_deflator: z,
        gap: (v - dual_value).abs(),
        attainable: replicates && strictly_positive,
        floored_states,
        replication_residual,
        deflator_check,
        lp_status: format!("{:?}", sol.status).to_lowercase(),
    })
}

fn dot_p(p: &[f64], z: &[f64], xi: &[f64]) -> f64 {
    (0..p.len()).map(|w| p[w] * z[w] * xi[w]).sum()
}

/// Looks for an optimal dual solution with every `lambda_w >= t p_w` for a
/// clearly positive `t`.
fn positive_optimal_dual(
    market: &DiscreteMarket,
    xi: &[f64],
    ru: &[Vec<f64>],
    red: &crate::market::Reduced,
    target: f64,
) -> Result<Option<Vec<f64>>> {
    let m = xi.len();
    let k = red.rows.len();
    let r = market.subspace().rank();
    let n = m + k + 1;
    let mut c = vec![0.0; n];
    c[n - 1] = 1.0;
    let mut lp = LinearProgram::maximize(c);
    // value: sum lambda xi >= target
    let mut row = vec![0.0; n];
    row[..m].copy_from_slice(xi);
    lp.ge(row, target - 1e-13 * (1.0 + target.abs()));
    // sum lambda + sum mu b <= 1
    let mut row = vec![0.0; n];
    row[..m].iter_mut().for_each(|v| *v = 1.0);
    row[m..m + k].copy_from_slice(&red.rhs);
    lp.le(row, 1.0);
    // sum lambda R = sum mu a
    for i in 0..r {
        let mut row = vec![0.0; n];
        for w in 0..m {
            row[w] = ru[w][i];
        }
        for j in 0..k {
            row[m + j] = -red.rows[j][i];
        }
        lp.eq(row, 0.0);
    }
    let p = market.probs();
    for w in 0..m {
        let mut row = vec![0.0; n];
        row[w] = -1.0;
        row[n - 1] = p[w];
        lp.le(row, 0.0);
    }
    for j in 0..k {
        let mut row = vec![0.0; n];
        row[m + j] = -1.0;
        lp.le(row, 0.0);
    }
    let mut cap = vec![0.0; n];
    cap[n - 1] = 1.0;
    lp.le(cap, 1.0);
    let sol = lp.solve()?;
    if sol.status == LpStatus::Optimal && sol.objective > 1e-9 {
        return Ok(Some((0..m).map(|w| sol.x[w] / p[w]).collect()));
    }
    Ok(None)
}

/// Convex loss `l(x) = max(0, max_k (slope_k x + intercept_k))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearLoss {
    pub pieces: Vec<LossPiece>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPiece {
    pub slope: f64,
    pub intercept: f64,
}

impl PiecewiseLinearLoss {
    /// `l(x) = x^+`.
    pub fn positive_part() -> Self {
        PiecewiseLinearLoss { pieces: vec![LossPiece { slope: 1.0, intercept: 0.0 }] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pieces.is_empty() {
            return Err(Error::InvalidParameter("loss needs at least one piece".into()));
        }
        for p in &self.pieces {
            if !(p.slope >= 0.0) || !(p.intercept <= 0.0) || !p.slope.is_finite() || !p.intercept.is_finite() {
                return Err(Error::InvalidParameter("loss pieces need slope >= 0 and intercept <= 0".into()));
            }
        }
        Ok(())
    }

    pub fn value(&self, x: f64) -> f64 {
        self.pieces.iter().map(|p| p.slope * x + p.intercept).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortfallHedge {
    pub capital: f64,
    pub strategy: Vec<f64>,
    /// `E[l(xi - V)]` at the optimum.
    pub risk: f64,
}

/// Minimises expected shortfall loss using at most `v0` of initial capital.
pub fn shortfall_hedge(market: &DiscreteMarket, claim: &Claim, loss: &PiecewiseLinearLoss, v0: f64) -> Result<ShortfallHedge> {
    claim.check(market)?;
    loss.validate()?;
    if !(v0 > 0.0) || !v0.is_finite() {
        return Err(Error::InvalidParameter("initial capital must be positive".into()));
    }
    require_na1(market)?;
    let basis = market.subspace();
    let r = basis.rank();
    let m = market.num_states();
    let xi = claim.payoff();
    let red = market.reduced_allowed();
    let n = 1 + r + m;
    let mut c = vec![0.0; n];
    for w in 0..m {
        c[1 + r + w] = market.probs()[w];
    }
    let mut lp = LinearProgram::minimize(c);
    for w in 0..m {
        let rw = basis.coords(&market.returns()[w]);
        let mut row = vec![0.0; n];
        row[1 + r + w] = -1.0;
        lp.le(row, 0.0);
        for piece in &loss.pieces {
            // s_w >= slope (xi - v - <y, r>) + intercept
            let mut row = vec![0.0; n];
            row[0] = -piece.slope;
            for i in 0..r {
                row[1 + i] = -piece.slope * rw[i];
            }
            row[1 + r + w] = -1.0;
            lp.le(row, -piece.slope * xi[w] - piece.intercept);
        }
    }
    for (a, b) in red.rows.iter().zip(&red.rhs) {
        let mut row = vec![0.0; n];
        row[0] = -b;
        row[1..1 + r].copy_from_slice(a);
        lp.le(row, 0.0);
    }
    let mut row = vec![0.0; n];
    row[0] = -1.0;
    lp.le(row.clone(), 0.0);
    row[0] = 1.0;
    lp.le(row, v0);
    let sol = lp.solve()?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::numeric(format!("shortfall LP ended {:?}", sol.status), f64::NAN));
    }
    let v = sol.x[0];
    let y = basis.embed(&sol.x[1..1 + r]);
    let strategy = if v > 0.0 { y.iter().map(|c| c / v).collect() } else { vec![0.0; market.dim()] };
    let risk = (0..m)
        .map(|w| market.probs()[w] * loss.value(xi[w] - v - dot(&y, &market.returns()[w])))
        .sum();
    Ok(ShortfallHedge { capital: v, strategy, risk })
}

fn optimal_value(market: &DiscreteMarket, su: &StateUtility) -> Result<f64> {
    let opts = OptimizerOptions { tol: 1e-11, require_na1: false, ..Default::default() };
    Ok(maximize_state_utility(market, su, &opts)?.value)
}

/// Price `p` at which selling the claim for `p` leaves optimal expected utility unchanged.
pub fn indifference_price(market: &DiscreteMarket, claim: &Claim, u: &UtilitySpec, v: f64) -> Result<f64> {
    claim.check(market)?;
    u.validate()?;
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::InvalidParameter("initial wealth must be positive".into()));
    }
    require_na1(market)?;
    let m = market.num_states();
    let with_claim = |p: f64| -> Result<f64> {
        let su = StateUtility { base: u.clone(), scale: v - p, shifts: claim.payoff().to_vec(), weights: vec![1.0; m], offsets: vec![0.0; m] };
        optimal_value(market, &su)
    };
    let base = optimal_value(market, &StateUtility { scale: v, ..StateUtility::plain(u.clone(), m) })?;
    let tol = 1e-12 * (1.0 + base.abs());
    let f0 = with_claim(0.0)?;
    if f0 < base - tol {
        return Err(Error::Domain("holding the claim lowers utility at price 0".into()));
    }
    if f0 <= base + tol {
        return Ok(0.0);
    }
    let hi_p = v * (1.0 - 1e-9);
    if with_claim(hi_p)? > base {
        return Err(Error::Domain("the claim is worth more than the whole initial wealth".into()));
    }
    let (mut lo, mut hi) = (0.0, hi_p);
    while hi - lo > 1e-10 * (1.0 + v) {
        let mid = 0.5 * (lo + hi);
        if with_claim(mid)? > base {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `E[xi / V^rho]` for the numeraire portfolio `rho`.
pub fn real_world_price(market: &DiscreteMarket, claim: &Claim) -> Result<f64> {
    claim.check(market)?;
    require_na1(market)?;
    let rho = numeraire_portfolio(market)?;
    let mut price = 0.0;
    for w in 0..market.num_states() {
        let vr = 1.0 + dot(&rho.strategy, &market.returns()[w]);
        let x = claim.payoff()[w];
        if x > 0.0 {
            if !(vr > 0.0) {
                return Ok(f64::INFINITY);
            }
            price += market.probs()[w] * x / vr;
        }
    }
    Ok(price)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::ConstraintSet;

    fn fixture() -> DiscreteMarket {
        let set = ConstraintSet::from_rows(1, vec![(vec![1.0], 1.0), (vec![-1.0], 0.0)]).unwrap();
        DiscreteMarket::new(vec![0.5, 0.5], vec![vec![-0.5], vec![1.0]], set).unwrap()
    }

    /// Vertex enumeration of the 2-variable super-hedging LP in (v, y).
    fn brute_force_superhedge(xi: [f64; 2]) -> f64 {
        // constraints: v + y*r >= xi, 0 <= y <= v, v >= 0
        let rows: [([f64; 2], f64); 5] = [([1.0, -0.5], xi[0]), ([1.0, 1.0], xi[1]), ([0.0, 1.0], 0.0), ([1.0, -1.0], 0.0), ([1.0, 0.0], 0.0)];
        let mut best = f64::INFINITY;
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                let (a, b) = (rows[i].0, rows[j].0);
                let det = a[0] * b[1] - a[1] * b[0];
                if det.abs() < 1e-14 {
                    continue;
                }
                let v = (rows[i].1 * b[1] - a[1] * rows[j].1) / det;
                let y = (a[0] * rows[j].1 - rows[i].1 * b[0]) / det;
                if rows.iter().all(|(c, d)| c[0] * v + c[1] * y >= d - 1e-12) {
                    best = best.min(v);
                }
            }
        }
        best
    }

    #[test]
    fn two_state_fixture() {
        let m = fixture();
        let rep = superhedge(&m, &Claim::new(vec![0.0, 1.5]).unwrap()).unwrap();
        assert!((rep.primal_value - 0.75).abs() < 1e-12);
        let bf = brute_force_superhedge([0.0, 1.5]);
        assert!((rep.primal_value - bf).abs() < 1e-12, "{} vs {bf}", rep.primal_value);
        assert!((rep.strategy[0] - 1.0).abs() < 1e-12);
        assert!(rep.gap < 1e-12, "{rep:?}");
        assert!(rep.replication_residual >= -1e-12);
    }

    #[test]
    fn trivial_claims() {
        let m = fixture();
        let zero = superhedge(&m, &Claim::new(vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(zero.primal_value, 0.0);
        assert!(zero.attainable);
        let one = superhedge(&m, &Claim::new(vec![1.0, 1.0]).unwrap()).unwrap();
        assert!((one.primal_value - 1.0).abs() < 1e-12);
        assert!(one.strategy[0].abs() < 1e-12);
        assert!(one.attainable);
    }

    #[test]
    fn shortfall_is_zero_when_superhedge_is_affordable() {
        let m = fixture();
        let xi = Claim::new(vec![0.0, 1.5]).unwrap();
        let s = shortfall_hedge(&m, &xi, &PiecewiseLinearLoss::positive_part(), 0.75).unwrap();
        assert!(s.risk.abs() < 1e-12);
        let s = shortfall_hedge(&m, &Claim::new(vec![0.0, 0.0]).unwrap(), &PiecewiseLinearLoss::positive_part(), 0.1).unwrap();
        assert_eq!(s.risk, 0.0);
    }

    #[test]
    fn indifference_cash_claim_is_face_value() {
        let m = DiscreteMarket::new(vec![0.5, 0.5], vec![vec![-0.5], vec![1.0]], ConstraintSet::unconstrained(1)).unwrap();
        let p = indifference_price(&m, &Claim::new(vec![0.5, 0.5]).unwrap(), &UtilitySpec::Log, 1.0).unwrap();
        assert!((p - 0.5).abs() < 1e-8);
        let p = indifference_price(&m, &Claim::new(vec![0.0, 0.0]).unwrap(), &UtilitySpec::Log, 1.0).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn real_world_price_of_numeraire_payoff_is_one() {
        let m = fixture();
        let rho = numeraire_portfolio(&m).unwrap();
        let payoff = crate::market::wealth(&rho.strategy, 1.0, &m);
        let p = real_world_price(&m, &Claim::new(payoff).unwrap()).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        assert_eq!(real_world_price(&m, &Claim::new(vec![0.0, 0.0]).unwrap()).unwrap(), 0.0);
    }
}
