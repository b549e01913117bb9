//! Classical arbitrage, arbitrage of the first kind (NA1), relative
//! arbitrage and equivalent supermartingale measures.

use crate::error::{Error, Result};
use crate::linalg::{dot, log_sum_exp, norm, norm_inf};
use crate::lp::{LinearProgram, LpStatus};
use crate::market::{ConstraintSet, DiscreteMarket, Halfspace, Reduced};
use crate::optim::{projected_newton, Objective, Polyhedron};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Cap on `|pi|_inf` used to detect unbounded rays.
pub const ARBITRAGE_CAP: f64 = 1e6;
/// A gain or LP optimum above this counts as strictly positive.
pub const POSITIVITY_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArbitrageOptions {
    pub cap: f64,
    pub threshold: f64,
}

impl Default for ArbitrageOptions {
    fn default() -> Self {
        ArbitrageOptions { cap: ARBITRAGE_CAP, threshold: POSITIVITY_THRESHOLD }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArbitrageVerdict {
    NoArbitrage,
    ArbitrageFound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrageCertificate {
    pub verdict: ArbitrageVerdict,
    /// The dominating strategy (scaled into the unit box when the LP optimum is larger).
    pub strategy: Option<Vec<f64>>,
    /// Per-state gain over the reference strategy.
    pub gains: Option<Vec<f64>>,
    /// Optimal expected gain of the detection LP.
    pub lp_objective: f64,
    /// Largest violation of the allowed-set halfspaces by `strategy`.
    pub residual: Option<f64>,
    pub cap: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Na1Verdict {
    Na1Holds,
    Na1Fails,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Na1Certificate {
    pub verdict: Na1Verdict,
    /// Nonzero direction of the recession cone inside `L`, normalised to `|.|_inf <= 1`.
    pub witness_ray: Option<Vec<f64>>,
    /// `r` with `Theta ∩ L` inside the sup-norm ball of radius `r`.
    pub bound_radius: Option<f64>,
    pub threshold: f64,
}

impl Na1Certificate {
    pub fn holds(&self) -> bool {
        self.verdict == Na1Verdict::Na1Holds
    }
}

/// Equivalent supermartingale measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Esmm {
    /// `q / p` per state.
    pub density: Vec<f64>,
    pub measure: Vec<f64>,
    /// Minimiser of the exponential criterion over the cone of allowed strategies.
    pub strategy: Vec<f64>,
    /// `max over Theta ∩ L of E^Q[<pi, R>]`.
    pub supermartingale_value: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
}

fn lp_in_coords(market: &DiscreteMarket, objective_pi: &[f64]) -> (LinearProgram, DMatrix<f64>) {
    let b = market.subspace().matrix().clone();
    let c = market.subspace().coords(objective_pi);
    (LinearProgram::maximize(c), b)
}

fn add_cap(lp: &mut LinearProgram, b: &DMatrix<f64>, cap: f64) {
    for i in 0..b.nrows() {
        let row: Vec<f64> = b.row(i).iter().cloned().collect();
        if norm(&row) > 0.0 {
            lp.le(row.clone(), cap);
            lp.le(row.iter().map(|v| -v).collect(), cap);
        }
    }
}

fn mean_return(market: &DiscreteMarket) -> Vec<f64> {
    let mut m = vec![0.0; market.dim()];
    for (p, r) in market.probs().iter().zip(market.returns()) {
        for (mi, ri) in m.iter_mut().zip(r) {
            *mi += p * ri;
        }
    }
    m
}

/// Searches for `delta` in `L` with `theta + delta` allowed and nonnegative gains.
fn dominance_lp(market: &DiscreteMarket, theta: &[f64], opts: &ArbitrageOptions) -> Result<ArbitrageCertificate> {
    let none = |obj: f64| ArbitrageCertificate {
        verdict: ArbitrageVerdict::NoArbitrage,
        strategy: None,
        gains: None,
        lp_objective: obj,
        residual: None,
        cap: opts.cap,
        threshold: opts.threshold,
    };
    if market.subspace().rank() == 0 {
        return Ok(none(0.0));
    }
    let (mut lp, b) = lp_in_coords(market, &mean_return(market));
    let red = market.reduced_allowed();
    let theta_u = market.subspace().coords(theta);
    for (a, rhs) in red.rows.iter().zip(&red.rhs) {
        lp.le(a.clone(), rhs - dot(a, &theta_u));
    }
    for z in market.support() {
        let zu = market.subspace().coords(z);
        lp.le(zu.iter().map(|v| -v).collect(), 0.0);
    }
    add_cap(&mut lp, &b, opts.cap);
    let sol = lp.solve()?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::InvalidParameter("reference strategy is not allowed".into())),
        LpStatus::Unbounded => return Err(Error::numeric("capped arbitrage LP reported unbounded", f64::INFINITY)),
    }
    if sol.objective <= opts.threshold {
        return Ok(none(sol.objective));
    }
    let mut delta = market.subspace().embed(&sol.x);
    let big = norm_inf(&delta);
    if big > 1.0 {
        delta.iter_mut().for_each(|v| *v /= big);
    }
    let strategy: Vec<f64> = theta.iter().zip(&delta).map(|(a, b)| a + b).collect();
    let gains = market.gains(&delta);
    let residual = market.allowed_set().max_violation(&strategy);
    let gmin = gains.iter().cloned().fold(f64::INFINITY, f64::min);
    let gmax = gains.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if gmin < -1e-12 || gmax <= opts.threshold || residual > 1e-9 {
        return Err(Error::numeric(
            format!("arbitrage certificate failed re-check (min gain {gmin:e}, max gain {gmax:e})"),
            residual.max(-gmin),
        ));
    }
    Ok(ArbitrageCertificate {
        verdict: ArbitrageVerdict::ArbitrageFound,
        strategy: Some(strategy),
        gains: Some(gains),
        lp_objective: sol.objective,
        residual: Some(residual),
        cap: opts.cap,
        threshold: opts.threshold,
    })
}

/// Allowed strategy with nonnegative gains everywhere and a positive gain somewhere.
pub fn find_classical_arbitrage(market: &DiscreteMarket) -> Result<ArbitrageCertificate> {
    find_classical_arbitrage_with(market, &ArbitrageOptions::default())
}

pub fn find_classical_arbitrage_with(market: &DiscreteMarket, opts: &ArbitrageOptions) -> Result<ArbitrageCertificate> {
    dominance_lp(market, &vec![0.0; market.dim()], opts)
}

/// Strategy dominating `theta` state-wise with a strict improvement somewhere.
pub fn relative_arbitrage(market: &DiscreteMarket, theta: &[f64]) -> Result<ArbitrageCertificate> {
    relative_arbitrage_with(market, theta, &ArbitrageOptions::default())
}

pub fn relative_arbitrage_with(market: &DiscreteMarket, theta: &[f64], opts: &ArbitrageOptions) -> Result<ArbitrageCertificate> {
    if theta.len() != market.dim() {
        return Err(Error::InvalidParameter("reference strategy has wrong length".into()));
    }
    let v = market.allowed_set().max_violation(theta);
    if v > 1e-9 {
        return Err(Error::InvalidParameter(format!("reference strategy violates the allowed set by {v:e}")));
    }
    dominance_lp(market, theta, opts)
}

/// Decides NA1 by looking for a nonzero direction in `recession cone ∩ L`.
pub fn check_na1(market: &DiscreteMarket) -> Result<Na1Certificate> {
    check_na1_with(market, &ArbitrageOptions::default())
}

pub fn check_na1_with(market: &DiscreteMarket, opts: &ArbitrageOptions) -> Result<Na1Certificate> {
    let d = market.dim();
    let basis = market.subspace();
    let red = market.reduced_allowed();
    if basis.rank() == 0 {
        return Ok(Na1Certificate { verdict: Na1Verdict::Na1Holds, witness_ray: None, bound_radius: Some(0.0), threshold: opts.threshold });
    }
    let b = basis.matrix().clone();
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[i] = s;
            let (mut lp, _) = lp_in_coords(market, &e);
            for a in &red.rows {
                lp.le(a.clone(), 0.0);
            }
            add_cap(&mut lp, &b, 1.0);
            let sol = lp.solve()?;
            if sol.status != LpStatus::Optimal {
                return Err(Error::numeric("recession-cone LP did not reach an optimum", f64::NAN));
            }
            if sol.objective > opts.threshold {
                let ray = basis.embed(&sol.x);
                let gains = market.gains(&ray);
                let gmin = gains.iter().cloned().fold(f64::INFINITY, f64::min);
                let gmax = gains.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if gmin < -1e-12 || gmax <= 0.0 {
                    return Err(Error::numeric("witness ray is not an arbitrage direction", -gmin));
                }
                return Ok(Na1Certificate { verdict: Na1Verdict::Na1Fails, witness_ray: Some(ray), bound_radius: None, threshold: opts.threshold });
            }
        }
    }
    let radius = sup_norm_radius(market, &red)?;
    Ok(Na1Certificate { verdict: Na1Verdict::Na1Holds, witness_ray: None, bound_radius: Some(radius), threshold: opts.threshold })
}

fn sup_norm_radius(market: &DiscreteMarket, red: &Reduced) -> Result<f64> {
    let d = market.dim();
    let mut radius: f64 = 0.0;
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[i] = s;
            let (mut lp, _) = lp_in_coords(market, &e);
            for (a, rhs) in red.rows.iter().zip(&red.rhs) {
                lp.le(a.clone(), *rhs);
            }
            let sol = lp.solve()?;
            match sol.status {
                LpStatus::Optimal => radius = radius.max(sol.objective),
                LpStatus::Unbounded => {
                    return Err(Error::numeric("allowed set unbounded although the recession cone is trivial", f64::INFINITY))
                }
                LpStatus::Infeasible => return Err(Error::Infeasible("allowed set is empty".into())),
            }
        }
    }
    Ok(radius)
}

/// Closed cone generated by an allowed set containing the origin: the rows active at 0.
pub fn conic_hull(theta: &ConstraintSet) -> ConstraintSet {
    let rows = theta
        .halfspaces
        .iter()
        .filter(|h| h.b <= 1e-14 * norm(&h.a).max(1.0))
        .map(|h| Halfspace { a: h.a.clone(), b: 0.0 })
        .collect();
    ConstraintSet { dim: theta.dim, halfspaces: rows, preset_tag: None }
}

struct ExpCriterion {
    /// `log p - |R|^2 - 1` per state.
    shift: Vec<f64>,
    /// Returns in `L` coordinates.
    ru: Vec<Vec<f64>>,
}

impl ExpCriterion {
    fn logits(&self, u: &[f64]) -> Vec<f64> {
        self.shift.iter().zip(&self.ru).map(|(s, r)| s - dot(r, u)).collect()
    }

    fn weights(&self, u: &[f64]) -> Vec<f64> {
        let l = self.logits(u);
        let m = log_sum_exp(&l);
        l.iter().map(|v| (v - m).exp()).collect()
    }
}

impl Objective for ExpCriterion {
    fn value(&self, u: &[f64]) -> Option<f64> {
        let v = log_sum_exp(&self.logits(u));
        v.is_finite().then_some(v)
    }

    fn gradient_hessian(&self, u: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let r = u.len();
        let q = self.weights(u);
        let mut mean = vec![0.0; r];
        for (qw, rw) in q.iter().zip(&self.ru) {
            for k in 0..r {
                mean[k] += qw * rw[k];
            }
        }
        let mut h = DMatrix::zeros(r, r);
        for (qw, rw) in q.iter().zip(&self.ru) {
            for i in 0..r {
                for j in 0..r {
                    h[(i, j)] += qw * (rw[i] - mean[i]) * (rw[j] - mean[j]);
                }
            }
        }
        (mean.iter().map(|v| -v).collect(), h)
    }
}

/// Equivalent supermartingale measure from the exponential criterion
/// `E[exp(-|R|^2) exp(-1 - <pi, R>)]` minimised over the cone of allowed strategies.
pub fn construct_esmm(market: &DiscreteMarket) -> Result<Esmm> {
    let cert = find_classical_arbitrage(market)?;
    if cert.verdict == ArbitrageVerdict::ArbitrageFound {
        return Err(Error::Precondition("the market admits classical arbitrage, so no supermartingale measure exists".into()));
    }
    let basis = market.subspace();
    let p = market.probs();
    if basis.rank() == 0 {
        return Ok(Esmm {
            density: vec![1.0; p.len()],
            measure: p.to_vec(),
            strategy: vec![0.0; market.dim()],
            supermartingale_value: 0.0,
            iterations: 0,
            gradient_norm: 0.0,
        });
    }
    let cone = Reduced::new(&conic_hull(&market.allowed_set()), basis);
    let obj = ExpCriterion {
        shift: market.returns().iter().zip(p).map(|(r, pw)| pw.ln() - dot(r, r) - 1.0).collect(),
        ru: market.returns().iter().map(|r| basis.coords(r)).collect(),
    };
    let poly = Polyhedron { rows: cone.rows, rhs: cone.rhs };
    let rep = projected_newton(&obj, &poly, vec![0.0; basis.rank()], 1e-10, 500)?;
    if !rep.converged {
        return Err(Error::numeric("supermartingale measure optimiser did not converge", rep.pg_norm));
    }
    let mut q = obj.weights(&rep.u);
    let floor = 1e-300;
    q.iter_mut().for_each(|v| *v = v.max(floor));
    let s: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= s);
    let value = expected_gain_max(market, &q)?;
    if value > 1e-8 {
        return Err(Error::numeric("constructed measure is not a supermartingale measure", value));
    }
    Ok(Esmm {
        density: q.iter().zip(p).map(|(a, b)| a / b).collect(),
        measure: q,
        strategy: basis.embed(&rep.u),
        supermartingale_value: value,
        iterations: rep.iterations,
        gradient_norm: rep.pg_norm,
    })
}

/// `max over Theta ∩ L of sum_w weight_w <pi, R(w)>`.
pub fn expected_gain_max(market: &DiscreteMarket, weights: &[f64]) -> Result<f64> {
    let mut m = vec![0.0; market.dim()];
    for (w, r) in weights.iter().zip(market.returns()) {
        for (mi, ri) in m.iter_mut().zip(r) {
            *mi += w * ri;
        }
    }
    if market.subspace().rank() == 0 {
        return Ok(0.0);
    }
    let (mut lp, _) = lp_in_coords(market, &m);
    let red = market.reduced_allowed();
    for (a, rhs) in red.rows.iter().zip(&red.rhs) {
        lp.le(a.clone(), *rhs);
    }
    let sol = lp.solve()?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective),
        LpStatus::Unbounded => Ok(f64::INFINITY),
        LpStatus::Infeasible => Err(Error::Infeasible("allowed set is empty".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{preset_constraints, Preset};

    fn m1(returns: &[f64], probs: &[f64], set: ConstraintSet) -> DiscreteMarket {
        DiscreteMarket::new(probs.to_vec(), returns.iter().map(|r| vec![*r]).collect(), set).unwrap()
    }

    fn unit_interval() -> ConstraintSet {
        ConstraintSet::from_rows(1, vec![(vec![1.0], 1.0), (vec![-1.0], 0.0)]).unwrap()
    }

    #[test]
    fn sign_mixed_market_has_no_arbitrage() {
        let m = m1(&[-0.5, 0.5], &[0.5, 0.5], unit_interval());
        assert_eq!(find_classical_arbitrage(&m).unwrap().verdict, ArbitrageVerdict::NoArbitrage);
        let na1 = check_na1(&m).unwrap();
        assert!(na1.holds());
        assert!((na1.bound_radius.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn null_return_is_not_arbitrage() {
        let m = m1(&[0.0], &[1.0], ConstraintSet::unconstrained(1));
        assert_eq!(find_classical_arbitrage(&m).unwrap().verdict, ArbitrageVerdict::NoArbitrage);
        assert!(check_na1(&m).unwrap().holds());
        let q = construct_esmm(&m).unwrap();
        assert_eq!(q.measure, vec![1.0]);
    }

    #[test]
    fn conic_constraints_make_the_two_notions_coincide() {
        // Positive returns only: buying is an arbitrage, and Theta_c = R_+ is a cone.
        let m = m1(&[0.1, 0.3], &[0.5, 0.5], preset_constraints(&Preset::NoShort, 1).unwrap());
        let c = find_classical_arbitrage(&m).unwrap();
        assert_eq!(c.verdict, ArbitrageVerdict::ArbitrageFound);
        let s = c.strategy.unwrap();
        assert!(s[0] > 0.0 && s[0] <= 1.0);
        let na1 = check_na1(&m).unwrap();
        assert_eq!(na1.verdict, Na1Verdict::Na1Fails);
        assert!(na1.witness_ray.unwrap()[0] > 0.0);
        assert!(matches!(construct_esmm(&m), Err(Error::Precondition(_))));
    }

    #[test]
    fn bounded_arbitrage_keeps_na1() {
        // Positive returns but the position is capped: classical arbitrage, NA1 holds.
        let m = m1(&[0.1, 0.3], &[0.5, 0.5], unit_interval());
        assert_eq!(find_classical_arbitrage(&m).unwrap().verdict, ArbitrageVerdict::ArbitrageFound);
        assert!(check_na1(&m).unwrap().holds());
    }

    fn f_prime(pi: f64) -> f64 {
        // derivative of sum p exp(-R^2) exp(-1 - pi R)
        [(-0.5f64, 0.5f64), (1.0, 0.5)].iter().map(|(r, p)| -p * r * (-(r * r) - 1.0 - pi * r).exp()).sum()
    }

    #[test]
    fn esmm_matches_one_dimensional_bisection() {
        let m = m1(&[-0.5, 1.0], &[0.5, 0.5], unit_interval());
        let q = construct_esmm(&m).unwrap();
        // Oracle: the cone of [0,1] is [0, inf); f is convex, so the minimiser is 0
        // if f'(0) >= 0 and otherwise the root of f'.
        let pi_star = if f_prime(0.0) >= 0.0 {
            0.0
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            while f_prime(hi) < 0.0 {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f_prime(mid) < 0.0 { lo = mid } else { hi = mid }
            }
            0.5 * (lo + hi)
        };
        let w: Vec<f64> = [(-0.5f64, 0.5f64), (1.0, 0.5)].iter().map(|(r, p)| p * (-(r * r) - 1.0 - pi_star * r).exp()).collect();
        let s: f64 = w.iter().sum();
        for k in 0..2 {
            assert!((q.measure[k] - w[k] / s).abs() < 1e-9);
        }
        assert!(q.measure[0] * -0.5 + q.measure[1] * 1.0 <= 1e-12);
        assert!(q.density.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn esmm_interior_minimiser_gives_martingale_measure() {
        let m = m1(&[-0.5, 1.0], &[0.5, 0.5], ConstraintSet::unconstrained(1));
        let q = construct_esmm(&m).unwrap();
        let mean = q.measure[0] * -0.5 + q.measure[1];
        assert!(mean.abs() < 1e-10);
    }

    #[test]
    fn relative_arbitrage_reference_checks() {
        let m = m1(&[-0.5, 0.5], &[0.5, 0.5], unit_interval());
        assert!(matches!(relative_arbitrage(&m, &[2.0]), Err(Error::InvalidParameter(_))));
        let c = relative_arbitrage(&m, &[0.0]).unwrap();
        assert_eq!(c.verdict, find_classical_arbitrage(&m).unwrap().verdict);
    }
}
