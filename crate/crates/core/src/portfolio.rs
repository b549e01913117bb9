//! Expected-utility maximisation over allowed strategies, the numeraire
//! (log-optimal) portfolio and the deflators it induces.

use crate::arbitrage::{check_na1, expected_gain_max};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::lp::{LinearProgram, LpStatus};
use crate::market::{DiscreteMarket, Reduced};
use crate::optim::{projected_newton, Objective, Polyhedron};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Utility of terminal wealth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilitySpec {
    Log,
    /// `x^gamma / gamma` with `gamma < 1`, `gamma != 0`.
    Power { gamma: f64 },
    /// Concave interpolation of `(x, u(x))` knots, extended linearly on both sides.
    PiecewiseLinear { knots: Vec<[f64; 2]> },
}

impl UtilitySpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            UtilitySpec::Log => Ok(()),
            UtilitySpec::Power { gamma } => {
                if !(gamma.is_finite() && *gamma < 1.0 && *gamma != 0.0) {
                    return Err(Error::InvalidParameter(format!("power utility needs gamma < 1, gamma != 0; got {gamma}")));
                }
                Ok(())
            }
            UtilitySpec::PiecewiseLinear { knots } => {
                if knots.len() < 2 {
                    return Err(Error::InvalidParameter("piecewise-linear utility needs at least two knots".into()));
                }
                let mut last = f64::INFINITY;
                for w in knots.windows(2) {
                    let dx = w[1][0] - w[0][0];
                    if !(dx > 0.0) {
                        return Err(Error::InvalidParameter("utility knots must have increasing abscissae".into()));
                    }
                    let s = (w[1][1] - w[0][1]) / dx;
                    if !(s > 0.0) || s > last * (1.0 + 1e-12) {
                        return Err(Error::InvalidParameter("utility knots must be increasing and concave".into()));
                    }
                    last = s;
                }
                Ok(())
            }
        }
    }

    /// Affine pieces `(slope, intercept)` whose minimum is the utility.
    pub fn pieces(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            UtilitySpec::PiecewiseLinear { knots } => Some(
                knots
                    .windows(2)
                    .map(|w| {
                        let s = (w[1][1] - w[0][1]) / (w[1][0] - w[0][0]);
                        (s, w[0][1] - s * w[0][0])
                    })
                    .collect(),
            ),
            _ => None,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            UtilitySpec::Log => if x > 0.0 { x.ln() } else { f64::NEG_INFINITY },
            UtilitySpec::Power { gamma } => {
                if x > 0.0 {
                    x.powf(*gamma) / gamma
                } else if *gamma > 0.0 && x == 0.0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            UtilitySpec::PiecewiseLinear { .. } => {
                self.pieces().unwrap().iter().map(|(s, c)| s * x + c).fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            UtilitySpec::Log => 1.0 / x,
            UtilitySpec::Power { gamma } => x.powf(gamma - 1.0),
            UtilitySpec::PiecewiseLinear { .. } => {
                let p = self.pieces().unwrap();
                let k = (0..p.len()).min_by(|&a, &b| (p[a].0 * x + p[a].1).total_cmp(&(p[b].0 * x + p[b].1))).unwrap();
                p[k].0
            }
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match self {
            UtilitySpec::Log => -1.0 / (x * x),
            UtilitySpec::Power { gamma } => (gamma - 1.0) * x.powf(gamma - 2.0),
            UtilitySpec::PiecewiseLinear { .. } => 0.0,
        }
    }

    /// Finite lower bound of the utility on `[x, inf)`.
    pub fn lower_bound_at(&self, x: f64) -> f64 {
        self.value(x)
    }

    fn is_smooth(&self) -> bool {
        !matches!(self, UtilitySpec::PiecewiseLinear { .. })
    }
}

/// State-dependent utility `U_w(x) = weight_w * u(scale * x + shift_w) + offset_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateUtility {
    pub base: UtilitySpec,
    pub scale: f64,
    pub shifts: Vec<f64>,
    pub weights: Vec<f64>,
    pub offsets: Vec<f64>,
}

impl StateUtility {
    pub fn plain(base: UtilitySpec, states: usize) -> Self {
        StateUtility { base, scale: 1.0, shifts: vec![0.0; states], weights: vec![1.0; states], offsets: vec![0.0; states] }
    }

    fn check(&self, states: usize) -> Result<()> {
        self.base.validate()?;
        if self.shifts.len() != states || self.weights.len() != states || self.offsets.len() != states {
            return Err(Error::InvalidParameter("state utility tables must have one entry per state".into()));
        }
        if !(self.scale > 0.0) || self.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidParameter("state utility scale and weights must be positive".into()));
        }
        if self.shifts.iter().any(|b| !(*b >= 0.0)) {
            return Err(Error::InvalidParameter("state utility shifts must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    /// Projected-gradient tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Floor on terminal wealth, relative to the scale, for utilities singular at zero.
    pub epsilon: f64,
    /// Starting strategy; the Chebyshev centre when absent.
    pub start: Option<Vec<f64>>,
    pub require_na1: bool,
    /// Return the last iterate instead of an error when the tolerance is not met.
    pub fail_on_nonconvergence: bool,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions { tol: 1e-8, max_iter: 10_000, epsilon: 1e-9, start: None, require_na1: true, fail_on_nonconvergence: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalPortfolio {
    pub strategy: Vec<f64>,
    /// Expected utility at `strategy`.
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Allowed-set halfspaces active at the solution.
    pub active_constraints: Vec<usize>,
    /// States whose wealth sits on the positivity floor.
    pub active_floor_states: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deflator {
    pub values: Vec<f64>,
    /// `max over Theta ∩ L of E[Z (1 + <pi, R>)]`.
    pub supermartingale_value: f64,
}

/// Expected state utility of the strategy `pi`.
pub fn expected_utility(market: &DiscreteMarket, su: &StateUtility, pi: &[f64]) -> f64 {
    let mut v = 0.0;
    for w in 0..market.num_states() {
        let x = su.scale * (1.0 + dot(pi, &market.returns()[w])) + su.shifts[w];
        let uw = su.base.value(x);
        if uw == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        v += market.probs()[w] * (su.weights[w] * uw + su.offsets[w]);
    }
    v
}

/// Gradient of `pi -> E[U(V^pi)]` in strategy coordinates.
pub fn utility_gradient(market: &DiscreteMarket, su: &StateUtility, pi: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; market.dim()];
    for w in 0..market.num_states() {
        let r = &market.returns()[w];
        let x = su.scale * (1.0 + dot(pi, r)) + su.shifts[w];
        let c = market.probs()[w] * su.weights[w] * su.scale * su.base.derivative(x);
        for (gi, ri) in g.iter_mut().zip(r) {
            *gi += c * ri;
        }
    }
    g
}

struct NegUtility<'a> {
    probs: &'a [f64],
    ru: Vec<Vec<f64>>,
    su: &'a StateUtility,
}

impl NegUtility<'_> {
    fn wealth(&self, w: usize, u: &[f64]) -> f64 {
        self.su.scale * (1.0 + dot(&self.ru[w], u)) + self.su.shifts[w]
    }
}

impl Objective for NegUtility<'_> {
    fn value(&self, u: &[f64]) -> Option<f64> {
        let mut v = 0.0;
        for w in 0..self.probs.len() {
            let x = self.wealth(w, u);
            if !(x > 0.0) {
                return None;
            }
            v += self.probs[w] * (self.su.weights[w] * self.su.base.value(x) + self.su.offsets[w]);
        }
        Some(-v)
    }

    fn gradient_hessian(&self, u: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let r = u.len();
        let mut g = vec![0.0; r];
        let mut h = DMatrix::zeros(r, r);
        let a = self.su.scale;
        for w in 0..self.probs.len() {
            let x = self.wealth(w, u);
            let c = self.probs[w] * self.su.weights[w];
            let d1 = c * a * self.su.base.derivative(x);
            let d2 = c * a * a * self.su.base.second_derivative(x);
            let rw = &self.ru[w];
            for i in 0..r {
                g[i] -= d1 * rw[i];
                for j in 0..r {
                    h[(i, j)] -= d2 * rw[i] * rw[j];
                }
            }
        }
        (g, h)
    }
}

/// Maximises `E[u(1 + <pi, R>)]` over allowed strategies in `L`.
pub fn maximize_utility(market: &DiscreteMarket, u: &UtilitySpec, tol: f64) -> Result<OptimalPortfolio> {
    let opts = OptimizerOptions { tol, ..Default::default() };
    maximize_state_utility(market, &StateUtility::plain(u.clone(), market.num_states()), &opts)
}

pub fn maximize_state_utility(market: &DiscreteMarket, su: &StateUtility, opts: &OptimizerOptions) -> Result<OptimalPortfolio> {
    su.check(market.num_states())?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    if opts.require_na1 && !check_na1(market)?.holds() {
        return Err(Error::Precondition(
            "NA1 fails, so expected utility can be increased without bound along an arbitrage ray".into(),
        ));
    }
    let basis = market.subspace();
    let red = market.reduced_allowed();
    if basis.rank() == 0 {
        let pi = vec![0.0; market.dim()];
        return Ok(OptimalPortfolio {
            value: expected_utility(market, su, &pi),
            strategy: pi,
            gradient_norm: 0.0,
            iterations: 0,
            converged: true,
            active_constraints: vec![],
            active_floor_states: vec![],
        });
    }
    if !su.base.is_smooth() {
        return maximize_piecewise_linear(market, su, &red);
    }
    let ru: Vec<Vec<f64>> = market.returns().iter().map(|r| basis.coords(r)).collect();
    let mut rows = red.rows.clone();
    let mut rhs = red.rhs.clone();
    let n_theta = rows.len();
    for w in 0..market.num_states() {
        // scale * (1 + <r, u>) + shift >= eps * scale
        rows.push(ru[w].iter().map(|v| -su.scale * v).collect());
        rhs.push(su.scale + su.shifts[w] - opts.epsilon * su.scale);
    }
    let poly = Polyhedron { rows, rhs };
    let start = match &opts.start {
        Some(s) => {
            let u0 = basis.coords(s);
            let viol = poly.rows.iter().zip(&poly.rhs).map(|(a, b)| dot(a, &u0) - b).fold(0.0, f64::max);
            if viol > 1e-12 {
                return Err(Error::InvalidParameter(format!("start point violates the feasible set by {viol:e}")));
            }
            u0
        }
        None => Reduced { rows: poly.rows.clone(), rhs: poly.rhs.clone(), origin: vec![] }.chebyshev_center()?,
    };
    let obj = NegUtility { probs: market.probs(), ru, su };
    let rep = projected_newton(&obj, &poly, start, opts.tol, opts.max_iter)?;
    let strategy = basis.embed(&rep.u);
    if !rep.converged && opts.fail_on_nonconvergence {
        return Err(Error::numeric(
            format!("utility maximisation stopped after {} iterations at {:?}", rep.iterations, strategy),
            rep.pg_norm,
        ));
    }
    Ok(OptimalPortfolio {
        value: expected_utility(market, su, &strategy),
        strategy,
        gradient_norm: rep.pg_norm,
        iterations: rep.iterations,
        converged: rep.converged,
        active_constraints: rep.active.iter().filter(|&&i| i < n_theta).map(|&i| red.origin[i]).collect(),
        active_floor_states: rep.active.iter().filter(|&&i| i >= n_theta).map(|&i| i - n_theta).collect(),
    })
}

/// Exact LP for piecewise-linear utilities (epigraph form).
fn maximize_piecewise_linear(market: &DiscreteMarket, su: &StateUtility, red: &Reduced) -> Result<OptimalPortfolio> {
    let basis = market.subspace();
    let r = basis.rank();
    let m = market.num_states();
    let pieces = su.base.pieces().expect("piecewise-linear");
    let mut c = vec![0.0; r + m];
    for w in 0..m {
        c[r + w] = market.probs()[w] * su.weights[w];
    }
    let mut lp = LinearProgram::maximize(c);
    for (a, b) in red.rows.iter().zip(&red.rhs) {
        let mut row = a.clone();
        row.extend(std::iter::repeat(0.0).take(m));
        lp.le(row, *b);
    }
    for w in 0..m {
        let rw = basis.coords(&market.returns()[w]);
        for (s, icpt) in &pieces {
            // t_w <= s * (scale * (1 + <r, u>) + shift) + icpt
            let mut row: Vec<f64> = rw.iter().map(|v| -s * su.scale * v).collect();
            row.extend(std::iter::repeat(0.0).take(m));
            row[r + w] = 1.0;
            lp.le(row, s * (su.scale + su.shifts[w]) + icpt);
        }
    }
    let sol = lp.solve()?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::numeric(format!("piecewise-linear utility LP ended {:?}", sol.status), f64::NAN));
    }
    let strategy = basis.embed(&sol.x[..r]);
    let allowed = market.allowed_set();
    let active = (0..allowed.halfspaces.len())
        .filter(|&j| allowed.halfspaces[j].b - dot(&allowed.halfspaces[j].a, &strategy) <= 1e-9)
        .collect();
    Ok(OptimalPortfolio {
        value: expected_utility(market, su, &strategy),
        strategy,
        gradient_norm: 0.0,
        iterations: sol.pivots,
        converged: true,
        active_constraints: active,
        active_floor_states: vec![],
    })
}

/// Log-optimal portfolio, certified as numeraire by LP.
pub fn numeraire_portfolio(market: &DiscreteMarket) -> Result<OptimalPortfolio> {
    numeraire_portfolio_with(market, 1e-10)
}

pub fn numeraire_portfolio_with(market: &DiscreteMarket, tol: f64) -> Result<OptimalPortfolio> {
    let rho = maximize_utility(market, &UtilitySpec::Log, tol)?;
    let v = verify_numeraire(market, &rho.strategy)?;
    if v > 1.0 + 1e-8 {
        return Err(Error::numeric("log-optimal portfolio failed numeraire certification", v - 1.0));
    }
    Ok(rho)
}

/// `max over Theta ∩ L of E[V^pi / V^rho]`; `rho` is numeraire iff this is at most 1.
pub fn verify_numeraire(market: &DiscreteMarket, rho: &[f64]) -> Result<f64> {
    let vr = crate::market::wealth(rho, 1.0, market);
    if let Some(w) = vr.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter(format!("candidate numeraire has nonpositive wealth in state {w}")));
    }
    let weights: Vec<f64> = market.probs().iter().zip(&vr).map(|(p, v)| p / v).collect();
    Ok(weights.iter().sum::<f64>() + expected_gain_max(market, &weights)?)
}

/// `Z = 1 / V^rho`, after checking the supermartingale inequality.
pub fn deflator_from_numeraire(market: &DiscreteMarket, rho: &[f64]) -> Result<Deflator> {
    let v = verify_numeraire(market, rho)?;
    if v > 1.0 + 1e-8 {
        return Err(Error::Precondition(format!("strategy is not a numeraire: sup E[V^pi/V^rho] = {v}")));
    }
    let values = crate::market::wealth(rho, 1.0, market).iter().map(|w| 1.0 / w).collect();
    Ok(Deflator { values, supermartingale_value: v })
}

/// `E[log(V^pi / V^rho)]`, `-inf` when `pi` loses everything in some state.
pub fn relative_log_optimality_gap(market: &DiscreteMarket, rho: &[f64], pi: &[f64]) -> f64 {
    let mut g = 0.0;
    for (p, r) in market.probs().iter().zip(market.returns()) {
        let vp = 1.0 + dot(pi, r);
        let vr = 1.0 + dot(rho, r);
        if !(vp > 0.0) {
            return f64::NEG_INFINITY;
        }
        if !(vr > 0.0) {
            return f64::INFINITY;
        }
        g += p * (vp / vr).ln();
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::ConstraintSet;

    fn m1(returns: &[f64], probs: &[f64], set: ConstraintSet) -> DiscreteMarket {
        DiscreteMarket::new(probs.to_vec(), returns.iter().map(|r| vec![*r]).collect(), set).unwrap()
    }

    fn interval(lo: f64, hi: f64) -> ConstraintSet {
        ConstraintSet::from_rows(1, vec![(vec![1.0], hi), (vec![-1.0], -lo)]).unwrap()
    }

    #[test]
    fn two_state_log_optimum_closed_form() {
        // first-order condition -0.5/(1 - 0.5 pi) + 1/(1 + pi) = 0 gives pi = 0.5
        let m = m1(&[-0.5, 1.0], &[0.5, 0.5], ConstraintSet::unconstrained(1));
        let o = maximize_utility(&m, &UtilitySpec::Log, 1e-12).unwrap();
        assert!((o.strategy[0] - 0.5).abs() < 1e-10);
        let o = maximize_utility(&m1(&[-0.5, 1.0], &[0.5, 0.5], interval(0.0, 0.3)), &UtilitySpec::Log, 1e-12).unwrap();
        assert!((o.strategy[0] - 0.3).abs() < 1e-12);
        assert_eq!(o.active_constraints.len(), 1);
    }

    #[test]
    fn flat_market_value_is_utility_of_one() {
        let m = m1(&[0.0], &[1.0], ConstraintSet::unconstrained(1));
        let o = maximize_utility(&m, &UtilitySpec::Power { gamma: 0.5 }, 1e-10).unwrap();
        assert!((o.value - 2.0).abs() < 1e-15);
        let r = numeraire_portfolio(&m).unwrap();
        assert_eq!(r.strategy, vec![0.0]);
    }

    #[test]
    fn numeraire_certification() {
        let m = m1(&[-0.5, 1.0], &[0.5, 0.5], interval(0.0, 1.0));
        let rho = numeraire_portfolio(&m).unwrap();
        let v = verify_numeraire(&m, &rho.strategy).unwrap();
        assert!((v - 1.0).abs() < 1e-8);
        // rho = 0 is not numeraire when the mean is positive and buying is allowed
        assert!(verify_numeraire(&m, &[0.0]).unwrap() > 1.0);
        assert!(matches!(deflator_from_numeraire(&m, &[0.0]), Err(Error::Precondition(_))));
        let z = deflator_from_numeraire(&m, &rho.strategy).unwrap();
        assert!(z.values.iter().all(|v| *v > 0.0));
        assert_eq!(relative_log_optimality_gap(&m, &rho.strategy, &rho.strategy), 0.0);
        assert_eq!(relative_log_optimality_gap(&m, &rho.strategy, &[2.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn piecewise_linear_utility_by_lp() {
        let u = UtilitySpec::PiecewiseLinear { knots: vec![[0.0, 0.0], [1.0, 1.0], [3.0, 2.0]] };
        u.validate().unwrap();
        assert_eq!(u.value(2.0), 1.5);
        let m = m1(&[-0.5, 1.0], &[0.5, 0.5], interval(0.0, 1.0));
        let o = maximize_utility(&m, &u, 1e-10).unwrap();
        // brute force over a fine grid of pi
        let best = (0..=10_000)
            .map(|k| {
                let pi = k as f64 / 10_000.0;
                0.5 * u.value(1.0 - 0.5 * pi) + 0.5 * u.value(1.0 + pi)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((o.value - best).abs() < 1e-12);
        assert!(UtilitySpec::PiecewiseLinear { knots: vec![[0.0, 0.0], [1.0, 1.0], [2.0, 3.0]] }.validate().is_err());
    }

    #[test]
    fn refuses_without_na1() {
        let m = m1(&[0.1, 0.3], &[0.5, 0.5], ConstraintSet::unconstrained(1));
        assert!(matches!(maximize_utility(&m, &UtilitySpec::Log, 1e-8), Err(Error::Precondition(_))));
    }
}
