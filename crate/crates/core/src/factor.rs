//! Linear factor models `R = Q Y`.
//!
//! Factor 1 is the "arbitrage factor": it is nonnegative and unbounded above,
//! while every other factor takes both signs. The admissible set, the
//! arbitrage strategies and NA1 can then be written down in closed form, and
//! `discretize` turns a model into a finite [`DiscreteMarket`] for the LP code.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::market::{ConstraintSet, DiscreteMarket, Halfspace};
use crate::quadrature::{gauss_hermite, gauss_legendre, integrate, integrate_to_infinity};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Closed support interval `[inf, sup]` of one factor; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorSupport {
    #[serde(with = "crate::sentinel")]
    pub inf: f64,
    #[serde(with = "crate::sentinel")]
    pub sup: f64,
}

impl FactorSupport {
    pub fn new(inf: f64, sup: f64) -> Self {
        FactorSupport { inf, sup }
    }
}

/// Distribution of a single factor. Factors are independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorDist {
    /// Finitely many `[value, probability]` pairs.
    PointMass { points: Vec<[f64; 2]> },
    /// `shift + E` with `E ~ Exp(rate)`.
    Exponential { rate: f64, shift: f64 },
    /// `exp(N(mu, sigma^2))`.
    Lognormal { mu: f64, sigma: f64 },
    Uniform { a: f64, b: f64 },
}

impl FactorDist {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        match self {
            FactorDist::PointMass { points } => {
                if points.is_empty() || points.iter().any(|[v, p]| !v.is_finite() || !(*p > 0.0)) {
                    return bad("point masses need finite values and positive probabilities");
                }
                let s: f64 = points.iter().map(|q| q[1]).sum();
                if (s - 1.0).abs() > 1e-12 {
                    return bad("point-mass probabilities must sum to 1");
                }
            }
            FactorDist::Exponential { rate, shift } => {
                if !(*rate > 0.0) || !rate.is_finite() || !shift.is_finite() {
                    return bad("exponential needs a positive rate and a finite shift");
                }
            }
            FactorDist::Lognormal { mu, sigma } => {
                if !mu.is_finite() || !(*sigma > 0.0) || !sigma.is_finite() {
                    return bad("lognormal needs finite mu and positive sigma");
                }
            }
            FactorDist::Uniform { a, b } => {
                if !a.is_finite() || !b.is_finite() || !(a < b) {
                    return bad("uniform needs finite a < b");
                }
            }
        }
        Ok(())
    }

    /// Smallest closed interval carrying the distribution.
    pub fn support(&self) -> (f64, f64) {
        match self {
            FactorDist::PointMass { points } => points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), [v, _]| (lo.min(*v), hi.max(*v))),
            FactorDist::Exponential { shift, .. } => (*shift, f64::INFINITY),
            FactorDist::Lognormal { .. } => (0.0, f64::INFINITY),
            FactorDist::Uniform { a, b } => (*a, *b),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            FactorDist::PointMass { points } => points.iter().map(|[v, p]| v * p).sum(),
            FactorDist::Exponential { rate, shift } => shift + 1.0 / rate,
            FactorDist::Lognormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            FactorDist::Uniform { a, b } => 0.5 * (a + b),
        }
    }

    /// Inverse CDF of a continuous distribution; `None` for point masses.
    pub fn quantile(&self, u: f64) -> Option<f64> {
        match self {
            FactorDist::PointMass { .. } => None,
            FactorDist::Exponential { rate, shift } => Some(shift - (-u).ln_1p() / rate),
            FactorDist::Lognormal { mu, sigma } => {
                let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(u);
                Some((mu + sigma * z).exp())
            }
            FactorDist::Uniform { a, b } => Some(a + (b - a) * u),
        }
    }

    /// `E[f(Y)]`, exact for point masses and by adaptive quadrature in the
    /// quantile variable otherwise. `f` must be bounded on the support.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        match self {
            FactorDist::PointMass { points } => points.iter().map(|[v, p]| p * f(*v)).sum(),
            _ => integrate(|u| f(self.quantile(u).unwrap()), 0.0, 1.0, 1e-13, 1e-12).0,
        }
    }

    /// Nodes and probabilities. Continuous laws use `n` Gauss-Legendre nodes
    /// on the quantile interval `(t/2, 1 - t/2)`; the weights are rescaled to
    /// sum to one and the dropped mass `t` is returned.
    fn nodes(&self, n: usize, t: f64) -> (Vec<f64>, Vec<f64>, f64) {
        if let FactorDist::PointMass { points } = self {
            return (points.iter().map(|q| q[0]).collect(), points.iter().map(|q| q[1]).collect(), 0.0);
        }
        let (x, w) = gauss_legendre(n);
        let (lo, hi) = (0.5 * t, 1.0 - 0.5 * t);
        let vals = x.iter().map(|xi| self.quantile(lo + (hi - lo) * 0.5 * (xi + 1.0)).unwrap()).collect();
        let ws: f64 = w.iter().sum();
        (vals, w.iter().map(|wi| wi / ws).collect(), t)
    }
}

/// `R = Q Y` with `Q` of size `d x l`, per-factor supports, optional laws and
/// the borrowing bound `c` in `<pi, 1> <= c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub q: Vec<Vec<f64>>,
    pub supports: Vec<FactorSupport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dists: Option<Vec<FactorDist>>,
    pub c: f64,
}

impl FactorModel {
    pub fn new(q: Vec<Vec<f64>>, supports: Vec<FactorSupport>, dists: Option<Vec<FactorDist>>, c: f64) -> Result<Self> {
        let m = FactorModel { q, supports, dists, c };
        m.validate()?;
        Ok(m)
    }

    /// The two-asset model `Q = [[1, gamma], [0, 1]]` with the largest
    /// support of the second factor that keeps both prices positive.
    pub fn two_dim(gamma: f64, c: f64, dists: Option<Vec<FactorDist>>) -> Result<Self> {
        let (lo, hi) = largest_second_support(gamma);
        Self::new(
            vec![vec![1.0, gamma], vec![0.0, 1.0]],
            vec![FactorSupport::new(0.0, f64::INFINITY), FactorSupport::new(lo, hi)],
            dists,
            c,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.q.len();
        let l = self.supports.len();
        if d == 0 || self.q.iter().any(|r| r.len() != l) {
            return Err(Error::InvalidModel("Q must be d x l with one support per column".into()));
        }
        if self.q.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidModel("Q has non-finite entries".into()));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::InvalidModel("borrowing bound c must be positive".into()));
        }
        check_rank(&self.q_matrix())?;
        let s1 = self.supports[0];
        if s1.inf != 0.0 || s1.sup != f64::INFINITY {
            return Err(Error::InvalidModel("factor 1 must have support [0, inf)".into()));
        }
        for (k, s) in self.supports.iter().enumerate().skip(1) {
            if !(s.inf < 0.0 && s.sup > 0.0) {
                return Err(Error::InvalidModel(format!("factor {} must take both signs: need inf < 0 < sup", k + 1)));
            }
        }
        if let Some(dists) = &self.dists {
            if dists.len() != l {
                return Err(Error::InvalidModel("one distribution per factor required".into()));
            }
            for (k, (dist, s)) in dists.iter().zip(&self.supports).enumerate() {
                dist.validate()?;
                let (lo, hi) = dist.support();
                if lo < s.inf || hi > s.sup {
                    return Err(Error::InvalidModel(format!(
                        "factor {} law lives on [{lo}, {hi}], outside the declared [{}, {}]",
                        k + 1,
                        s.inf,
                        s.sup
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_assets(&self) -> usize {
        self.q.len()
    }

    pub fn num_factors(&self) -> usize {
        self.supports.len()
    }

    pub fn q_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.q.len(), self.supports.len(), |i, j| self.q[i][j])
    }

    /// `pi^T Q`, the factor exposures of a strategy.
    pub fn exposures(&self, pi: &[f64]) -> Vec<f64> {
        (0..self.num_factors()).map(|k| (0..self.num_assets()).map(|i| pi[i] * self.q[i][k]).sum()).collect()
    }

    /// Returns `Q y` for one factor realisation.
    pub fn returns_for(&self, y: &[f64]) -> Vec<f64> {
        self.q.iter().map(|row| dot(row, y)).collect()
    }
}

fn check_rank(q: &DMatrix<f64>) -> Result<()> {
    let d = q.nrows();
    if q.ncols() < d {
        return Err(Error::InvalidModel(format!("Q has {} columns, fewer than its {d} rows", q.ncols())));
    }
    let sv = q.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smax > 0.0) || smin <= 1e-10 * smax {
        return Err(Error::InvalidModel(format!("Q is rank deficient (singular values {smin:e} .. {smax:e})")));
    }
    Ok(())
}

/// Largest interval for the second factor of the two-asset model.
pub fn largest_second_support(gamma: f64) -> (f64, f64) {
    if gamma >= 1.0 {
        (-1.0 / gamma, f64::INFINITY)
    } else if gamma >= 0.0 {
        (-1.0, f64::INFINITY)
    } else {
        (-1.0, -1.0 / gamma)
    }
}

/// What each column of a standard-form `Q` multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorSlot {
    Constant,
    Common(usize),
    Idiosyncratic(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSkeleton {
    pub q: Vec<Vec<f64>>,
    pub slots: Vec<FactorSlot>,
}

impl FactorSkeleton {
    pub fn into_model(self, supports: Vec<FactorSupport>, dists: Option<Vec<FactorDist>>, c: f64) -> Result<FactorModel> {
        FactorModel::new(self.q, supports, dists, c)
    }
}

/// Assembles `Q = [mean | B | I]` for `R = mean + B F + eps`.
pub fn from_standard_form(mean: &[f64], b: &[Vec<f64>], idio: bool) -> Result<FactorSkeleton> {
    let d = mean.len();
    if d == 0 || b.iter().any(|r| r.len() != b.first().map_or(0, |r0| r0.len())) || (!b.is_empty() && b.len() != d) {
        return Err(Error::InvalidParameter("mean must have length d and B must be d x k".into()));
    }
    let k = b.first().map_or(0, |r| r.len());
    let mut slots = vec![FactorSlot::Constant];
    slots.extend((0..k).map(FactorSlot::Common));
    if idio {
        slots.extend((0..d).map(FactorSlot::Idiosyncratic));
    }
    let q: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let mut row = vec![mean[i]];
            if k > 0 {
                row.extend_from_slice(&b[i]);
            }
            if idio {
                row.extend((0..d).map(|j| if i == j { 1.0 } else { 0.0 }));
            }
            row
        })
        .collect();
    check_rank(&DMatrix::from_fn(d, slots.len(), |i, j| q[i][j]))?;
    Ok(FactorSkeleton { q, slots })
}

/// `a * y` with `0 * (+-inf) = 0`.
fn mul0(a: f64, y: f64) -> f64 {
    if a == 0.0 { 0.0 } else { a * y }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetPositivity {
    pub ok: bool,
    /// `q_{i,1}`, which must be nonnegative.
    pub first_loading: f64,
    /// Worst-case return carried by factors `2..l`; must be `>= -1`.
    #[serde(with = "crate::sentinel")]
    pub worst_case: f64,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub assets: Vec<AssetPositivity>,
    pub all_ok: bool,
    /// Verdict of the recursive form, present when `Q` is unit upper-triangular.
    pub triangular_ok: Option<bool>,
}

/// Checks that every price stays positive for all factor values in the
/// declared supports.
pub fn validate_positivity(model: &FactorModel) -> PositivityReport {
    let assets: Vec<AssetPositivity> = model
        .q
        .iter()
        .map(|row| {
            let worst: f64 = row
                .iter()
                .zip(&model.supports)
                .skip(1)
                .map(|(&q, s)| mul0(q.max(0.0), s.inf) - mul0((-q).max(0.0), s.sup))
                .sum();
            let mut violations = vec![];
            if row[0] < 0.0 {
                violations.push(format!("q_1 = {} < 0", row[0]));
            }
            if worst < -1.0 {
                violations.push(format!("worst-case return {worst} < -1"));
            }
            AssetPositivity { ok: violations.is_empty(), first_loading: row[0], worst_case: worst, violations }
        })
        .collect();
    let all_ok = assets.iter().all(|a| a.ok);
    let triangular_ok = unit_upper_triangular(&model.q).then(|| triangular_positivity(model));
    PositivityReport { assets, all_ok, triangular_ok }
}

/// Recursive form for triangular models: `y_d_inf >= -1` and
/// `y_i_inf >= -1 - sum_{k>i} (q+_ik y_k_inf - q-_ik y_k_sup)`.
fn triangular_positivity(model: &FactorModel) -> bool {
    let d = model.num_assets();
    let s = &model.supports;
    (0..d).all(|i| {
        let tail: f64 =
            (i + 1..d).map(|k| mul0(model.q[i][k].max(0.0), s[k].inf) - mul0((-model.q[i][k]).max(0.0), s[k].sup)).sum();
        s[i].inf >= -1.0 - tail
    })
}

fn unit_upper_triangular(q: &[Vec<f64>]) -> bool {
    let d = q.len();
    q.iter().all(|r| r.len() == d)
        && (0..d).all(|i| (q[i][i] - 1.0).abs() <= 1e-12 && (0..i).all(|j| q[i][j].abs() <= 1e-12))
}

/// Direction of every arbitrage strategy, `g = (Q Q^T)^{-1} Q e_1`, when
/// `e_1` lies in the range of `Q^T`.
pub fn arbitrage_ray(model: &FactorModel) -> Option<Vec<f64>> {
    let q = model.q_matrix();
    let qqt = &q * q.transpose();
    let g = qqt.lu().solve(&q.column(0).into_owned())?;
    let mut e1 = DVector::zeros(model.num_factors());
    e1[0] = 1.0;
    let resid = (q.transpose() * &g - e1).norm();
    (resid <= 1e-10 * (1.0 + g.norm())).then(|| g.iter().cloned().collect())
}

/// NA1 holds iff `<g, 1> > 0`. The boundary `<g, 1> = 0` counts as a failure.
pub fn na1_factor(model: &FactorModel) -> Result<bool> {
    let g = arbitrage_ray(model)
        .ok_or_else(|| Error::Domain("e_1 is not in the range of Q^T, so factor 1 generates no arbitrage".into()))?;
    Ok(g.iter().sum::<f64>() > 1e-12)
}

/// The arbitrage strategy that uses the whole borrowing allowance,
/// `c g / <g, 1>`. It dominates every other arbitrage strategy state-wise.
pub fn max_arbitrage_strategy(model: &FactorModel) -> Result<Vec<f64>> {
    if !na1_factor(model)? {
        return Err(Error::Domain("NA1 fails, so a maximal arbitrage strategy does not exist".into()));
    }
    let g = arbitrage_ray(model).expect("checked by na1_factor");
    let s: f64 = g.iter().sum();
    let pi: Vec<f64> = g.iter().map(|x| model.c * x / s).collect();
    let total: f64 = pi.iter().sum();
    if (total - model.c).abs() > 1e-10 * (1.0 + model.c) {
        return Err(Error::numeric("maximal arbitrage strategy misses the borrowing bound", total - model.c));
    }
    Ok(pi)
}

fn require_unit_triangular(q: &[Vec<f64>]) -> Result<()> {
    if q.is_empty() || !unit_upper_triangular(q) {
        return Err(Error::InvalidParameter("Q must be square and unit upper-triangular".into()));
    }
    if q.len() > 24 {
        return Err(Error::InvalidParameter("path sums are limited to d <= 24".into()));
    }
    Ok(())
}

/// First row of `Q^{-1}` for unit upper-triangular `Q`, by the recursion
/// `a_1 = 1`, `a_k = -sum_{i<k} a_i q_ik`. Cross-checked against the matrix
/// inverse and the path expansion.
pub fn alpha_recursion(q: &[Vec<f64>]) -> Result<Vec<f64>> {
    require_unit_triangular(q)?;
    let d = q.len();
    let mut a = vec![0.0; d];
    a[0] = 1.0;
    for k in 1..d {
        a[k] = -(0..k).map(|i| a[i] * q[i][k]).sum::<f64>();
    }
    let inv = alpha_by_inverse(q)?;
    let paths = alpha_by_paths(q)?;
    let scale = 1.0 + norm(&a);
    let dev = a.iter().zip(&inv).zip(&paths).map(|((x, y), z)| (x - y).abs().max((x - z).abs())).fold(0.0, f64::max);
    if dev > 1e-10 * scale {
        return Err(Error::numeric("alpha recursion disagrees with the inverse or the path sum", dev));
    }
    Ok(a)
}

/// First row of the numerically inverted `Q`.
pub fn alpha_by_inverse(q: &[Vec<f64>]) -> Result<Vec<f64>> {
    require_unit_triangular(q)?;
    let d = q.len();
    let m = DMatrix::from_fn(d, d, |i, j| q[i][j]);
    let inv = m.try_inverse().ok_or_else(|| Error::numeric("Q is not invertible", f64::NAN))?;
    Ok((0..d).map(|k| inv[(0, k)]).collect())
}

/// `a_k = sum over increasing paths 1 = j_0 < ... < j_m = k of
/// (-1)^m prod q_{j_l j_{l+1}}`.
pub fn alpha_by_paths(q: &[Vec<f64>]) -> Result<Vec<f64>> {
    require_unit_triangular(q)?;
    let d = q.len();
    let mut a = vec![0.0; d];
    a[0] = 1.0;
    for k in 1..d {
        // Intermediate nodes are a subset of {2, ..., k-1}.
        let inner = k - 1;
        for mask in 0u32..(1u32 << inner) {
            let mut prev = 0;
            let mut prod = 1.0;
            let mut len = 0;
            for j in 1..k {
                if mask >> (j - 1) & 1 == 1 {
                    prod *= q[prev][j];
                    prev = j;
                    len += 1;
                }
            }
            prod *= q[prev][k];
            len += 1;
            a[k] += if len % 2 == 1 { -prod } else { prod };
        }
    }
    Ok(a)
}

/// NA1 for unit-triangular `Q` via the signed sum over all increasing paths
/// from asset 1: `1 + sum_J (-1)^{|J|-1} prod q > 0`.
pub fn na1_triangular(q: &[Vec<f64>]) -> Result<bool> {
    require_unit_triangular(q)?;
    let d = q.len();
    let mut total = 1.0;
    // J = {1 = j_1 < ... < j_m}, m >= 2: choose the rest as a subset of {2..d}.
    for mask in 1u32..(1u32 << (d - 1)) {
        let mut prev = 0;
        let mut prod = 1.0;
        let mut size = 1;
        for j in 1..d {
            if mask >> (j - 1) & 1 == 1 {
                prod *= q[prev][j];
                prev = j;
                size += 1;
            }
        }
        total += if size % 2 == 0 { -prod } else { prod };
    }
    let alpha_sum: f64 = alpha_recursion(q)?.iter().sum();
    if (total - alpha_sum).abs() > 1e-10 * (1.0 + total.abs()) {
        return Err(Error::numeric("signed path sum disagrees with <alpha, 1>", total - alpha_sum));
    }
    Ok(total > 1e-12)
}

/// Membership in the admissible set of the two-asset model, using the
/// largest possible support of the second factor.
pub fn two_dim_admissibility(gamma: f64, pi: &[f64; 2]) -> bool {
    let [p1, p2] = *pi;
    if p1 < 0.0 {
        return false;
    }
    if gamma >= 1.0 {
        -gamma * p1 <= p2 && p2 <= gamma - gamma * p1
    } else if gamma >= 0.0 {
        -gamma * p1 <= p2 && p2 <= 1.0 - gamma * p1
    } else {
        gamma - gamma * p1 <= p2 && p2 <= 1.0 - gamma * p1
    }
}

/// Exact admissible set `{pi : <pi, Q Y> >= -1 for all Y}` as halfspaces.
///
/// With exposures `z = pi^T Q` the condition reads `z_1 >= 0` and
/// `sum_k min(z_k y_k_inf, z_k y_k_sup) >= -1`; the minimum over sign
/// patterns gives one linear row per pattern. Infinite bounds force a sign on
/// `z_k` instead.
pub fn symbolic_admissible_set(model: &FactorModel) -> Result<ConstraintSet> {
    let d = model.num_assets();
    let col = |k: usize| -> Vec<f64> { model.q.iter().map(|r| r[k]).collect() };
    let neg = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| -x).collect() };
    let mut rows: Vec<Halfspace> = vec![Halfspace { a: neg(col(0)), b: 0.0 }];
    // Candidate coefficients per factor k >= 2.
    let mut choices: Vec<Vec<f64>> = vec![];
    let mut cols: Vec<Vec<f64>> = vec![];
    for (k, s) in model.supports.iter().enumerate().skip(1) {
        let qk = col(k);
        let mut opts = vec![];
        if s.sup.is_infinite() {
            rows.push(Halfspace { a: neg(qk.clone()), b: 0.0 });
        } else {
            opts.push(s.sup);
        }
        if s.inf.is_infinite() {
            rows.push(Halfspace { a: qk.clone(), b: 0.0 });
        } else {
            opts.push(s.inf);
        }
        if opts.is_empty() {
            opts.push(0.0);
        }
        choices.push(opts);
        cols.push(qk);
    }
    let patterns: usize = choices.iter().map(|c| c.len()).product();
    if patterns > 1 << 16 {
        return Err(Error::InvalidParameter(format!("{patterns} sign patterns; too many factors with bounded support")));
    }
    for mut idx in 0..patterns {
        let mut a = vec![0.0; d];
        for (opts, qk) in choices.iter().zip(&cols) {
            let y = opts[idx % opts.len()];
            idx /= opts.len();
            for i in 0..d {
                a[i] -= y * qk[i];
            }
        }
        rows.push(Halfspace { a, b: 1.0 });
    }
    ConstraintSet::new(d, rows)
}

/// Borrowing constraint `<pi, 1> <= c`.
pub fn borrowing_set(model: &FactorModel) -> ConstraintSet {
    let d = model.num_assets();
    ConstraintSet::new(d, vec![Halfspace { a: vec![1.0; d], b: model.c }]).expect("finite row")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizeOptions {
    pub nodes_per_factor: usize,
    pub truncation_mass: f64,
    /// Also intersect with the exact admissible set of the model, so that
    /// truncating the tails does not enlarge the set of allowed strategies.
    pub exact_admissibility: bool,
}

impl Default for DiscretizeOptions {
    fn default() -> Self {
        DiscretizeOptions { nodes_per_factor: 16, truncation_mass: 1e-6, exact_admissibility: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretized {
    pub market: DiscreteMarket,
    /// Probability mass outside the quadrature range, over all factors.
    pub truncated_mass: f64,
    /// Number of return entries raised from below -1 to `-1 + 1e-12`.
    pub clip_count: usize,
    /// How the finite market was produced.
    pub provenance: String,
}

/// Tensor-product quadrature market for a model with independent factors.
/// The constraints are the borrowing bound, optionally intersected with the
/// exact admissible set.
pub fn discretize(model: &FactorModel, opts: &DiscretizeOptions) -> Result<Discretized> {
    model.validate()?;
    let dists = model
        .dists
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("discretize needs a distribution for every factor".into()))?;
    if opts.nodes_per_factor < 2 {
        return Err(Error::InvalidParameter("nodes_per_factor must be at least 2".into()));
    }
    let t = opts.truncation_mass;
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidParameter("truncation_mass must lie in (0, 1)".into()));
    }
    let rules: Vec<(Vec<f64>, Vec<f64>, f64)> = dists.iter().map(|f| f.nodes(opts.nodes_per_factor, t)).collect();
    let states: f64 = rules.iter().map(|r| r.0.len() as f64).product();
    if states > 2e6 {
        return Err(Error::InvalidParameter(format!("tensor grid has {states} states; reduce nodes_per_factor")));
    }
    let kept: f64 = rules.iter().map(|r| 1.0 - r.2).product();
    let mut probs = vec![];
    let mut returns = vec![];
    let mut clip_count = 0;
    let mut idx = vec![0usize; rules.len()];
    loop {
        let y: Vec<f64> = idx.iter().zip(&rules).map(|(&i, r)| r.0[i]).collect();
        let p: f64 = idx.iter().zip(&rules).map(|(&i, r)| r.1[i]).product();
        let mut r = model.returns_for(&y);
        for x in r.iter_mut() {
            if *x < -1.0 {
                *x = -1.0 + 1e-12;
                clip_count += 1;
            }
        }
        probs.push(p);
        returns.push(r);
        // odometer
        let mut k = 0;
        while k < idx.len() {
            idx[k] += 1;
            if idx[k] < rules[k].0.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == idx.len() {
            break;
        }
    }
    let s: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= s);
    let mut set = borrowing_set(model);
    if opts.exact_admissibility {
        set = set.intersect(&symbolic_admissible_set(model)?)?;
    }
    let market = DiscreteMarket::new(probs, returns, set)?;
    let provenance = format!(
        "{} states from {} quantile-mapped Gauss-Legendre nodes per continuous factor; tails of mass {t:e} per factor dropped; \
         constraints: borrowing bound{}",
        market.num_states(),
        opts.nodes_per_factor,
        if opts.exact_admissibility { " and the exact admissible set" } else { " only" }
    );
    Ok(Discretized { market, truncated_mass: 1.0 - kept, clip_count, provenance })
}

/// Single asset with `R = exp(Y) - 1`, `Y ~ N(mu, sigma^2)`, on `n`
/// Gauss-Hermite nodes.
pub fn lognormal_asset_market(mu: f64, sigma: f64, n: usize, constraints: ConstraintSet) -> Result<DiscreteMarket> {
    if !(sigma > 0.0) || !mu.is_finite() || n < 2 {
        return Err(Error::InvalidParameter("need sigma > 0, finite mu and at least 2 nodes".into()));
    }
    let (x, w) = gauss_hermite(n);
    let ws: f64 = w.iter().sum();
    let probs = w.iter().map(|wi| wi / ws).collect();
    let returns = x.iter().map(|xi| vec![(mu + sigma * std::f64::consts::SQRT_2 * xi).exp_m1()]).collect();
    DiscreteMarket::new(probs, returns, constraints)
}

/// `E[(1 + Y2)/(1 + 2 Y1)]` in the two-asset model with `gamma = 1/2`, `c = 1`,
/// `Y1 ~ Exp(1)` and `1 + Y2 ~ Exp(beta)`. This is the expected wealth ratio of
/// holding asset 2 against the maximal arbitrage strategy; above 1 the latter
/// is not the numeraire portfolio.
pub fn example_3_7_ratio(beta: f64) -> f64 {
    let (e1, _) = integrate_to_infinity(|x| (-x).exp() / x, 0.5, 1e-12, 1e-13);
    0.5f64.exp() / (2.0 * beta) * e1
}

/// For the two-asset model with `gamma < 0`, the maximal arbitrage strategy is
/// the numeraire portfolio iff
/// `E[Y1 / (1 + k Y1)] = (1 - gamma) E[Y2 / (1 + k Y1)]`, `k = c/(1 - gamma)`.
/// Returns left side minus right side.
pub fn example_3_8_condition(model: &FactorModel) -> Result<f64> {
    if model.num_assets() != 2 || model.num_factors() != 2 || model.q[1] != [0.0, 1.0] || model.q[0][0] != 1.0 {
        return Err(Error::InvalidParameter("expected Q = [[1, gamma], [0, 1]]".into()));
    }
    let gamma = model.q[0][1];
    if !(gamma < 0.0) {
        return Err(Error::InvalidParameter("the condition applies to gamma < 0".into()));
    }
    let dists = model.dists.as_ref().ok_or_else(|| Error::InvalidParameter("factor laws are required".into()))?;
    let k = model.c / (1.0 - gamma);
    let lhs = dists[0].expect(|y| y / (1.0 + k * y));
    // Y1 and Y2 are independent, so the right side factorises.
    let rhs = (1.0 - gamma) * dists[1].mean() * dists[0].expect(|y| 1.0 / (1.0 + k * y));
    Ok(lhs - rhs)
}

/// Plot data for the two-asset model: arbitrage line, borrowing line and the
/// two edges of the admissible set, on 201 points of `pi_1`.
pub fn arbitrage_line_csv(gamma: f64, c: f64) -> String {
    let top = if gamma < 1.0 { 1.2 * c / (1.0 - gamma) } else { 2.0 * c };
    let (upper, lower): (Box<dyn Fn(f64) -> f64>, Box<dyn Fn(f64) -> f64>) = if gamma >= 1.0 {
        (Box::new(move |p| gamma - gamma * p), Box::new(move |p| -gamma * p))
    } else if gamma >= 0.0 {
        (Box::new(move |p| 1.0 - gamma * p), Box::new(move |p| -gamma * p))
    } else {
        (Box::new(move |p| 1.0 - gamma * p), Box::new(move |p| gamma - gamma * p))
    };
    let mut out = String::from("pi1,arbitrage_line,borrowing_line,admissible_upper,admissible_lower\n");
    for i in 0..=200 {
        let p = top * i as f64 / 200.0;
        // adding 0.0 turns -0.0 into 0.0
        let cols = [p, -gamma * p, c - p, upper(p), lower(p)].map(|x| format!("{:?}", x + 0.0));
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    out
}
