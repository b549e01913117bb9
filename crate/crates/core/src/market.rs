//! One-period markets with polyhedral trading constraints.
//!
//! A strategy `pi` is a vector of fractions of wealth invested in the risky
//! assets; one unit of wealth becomes `1 + <pi, R(w)>` in state `w`. The set of
//! allowed strategies is the admissible set `{pi : <pi, z> >= -1 for z in S}`
//! intersected with the user constraints. All optimisation is carried out in
//! coordinates of `L`, the span of the support `S`.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, row_space_basis};
use crate::lp::{LinearProgram, LpStatus};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// `<a, pi> <= b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub a: Vec<f64>,
    pub b: f64,
}

/// Named constraint families.
#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    /// `pi >= 0`.
    NoShort,
    /// `pi >= 0` and `<pi, 1> <= 1`.
    NoShortNoBorrow,
    /// `<pi, 1> <= c`.
    BorrowLimit(f64),
    /// `-alpha_i <= pi_i <= beta_i`.
    Box { alpha: Vec<f64>, beta: Vec<f64> },
}

impl Preset {
    pub fn tag(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        match self {
            Preset::NoShort => "no_short".into(),
            Preset::NoShortNoBorrow => "no_short_no_borrow".into(),
            Preset::BorrowLimit(c) => format!("borrow_limit(c={c:?})"),
            Preset::Box { alpha, beta } => format!("box(alpha=[{}],beta=[{}])", list(alpha), list(beta)),
        }
    }

    /// Parses tags such as `borrow_limit(c=2.5)` or `box(alpha=[1,1],beta=[1,1])`.
    pub fn parse(tag: &str) -> Result<Self> {
        let tag = tag.trim();
        let bad = || Error::InvalidParameter(format!("unrecognised preset '{tag}'"));
        let (name, args) = match tag.find('(') {
            Some(i) if tag.ends_with(')') => (&tag[..i], Some(&tag[i + 1..tag.len() - 1])),
            Some(_) => return Err(bad()),
            None => (tag, None),
        };
        #[derive(Deserialize)]
        struct Args {
            c: Option<f64>,
            alpha: Option<Vec<f64>>,
            beta: Option<Vec<f64>>,
        }
        let parsed = match args {
            None => None,
            Some(a) if a.trim().parse::<f64>().is_ok() => Some(Args { c: a.trim().parse().ok(), alpha: None, beta: None }),
            Some(a) => {
                let json = format!("{{{}}}", a.replace("alpha=", "\"alpha\":").replace("beta=", "\"beta\":").replace("c=", "\"c\":"));
                Some(serde_json::from_str::<Args>(&json).map_err(|_| bad())?)
            }
        };
        match (name, parsed) {
            ("no_short", None) => Ok(Preset::NoShort),
            ("no_short_no_borrow", None) => Ok(Preset::NoShortNoBorrow),
            ("borrow_limit", Some(Args { c: Some(c), .. })) => Ok(Preset::BorrowLimit(c)),
            ("box", Some(Args { alpha: Some(alpha), beta: Some(beta), .. })) => Ok(Preset::Box { alpha, beta }),
            _ => Err(bad()),
        }
    }
}

/// A closed convex polyhedron `{pi : <a_j, pi> <= b_j}` in `R^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub dim: usize,
    pub halfspaces: Vec<Halfspace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset_tag: Option<String>,
}

impl ConstraintSet {
    pub fn unconstrained(dim: usize) -> Self {
        ConstraintSet { dim, halfspaces: vec![], preset_tag: None }
    }

    pub fn new(dim: usize, halfspaces: Vec<Halfspace>) -> Result<Self> {
        for (j, h) in halfspaces.iter().enumerate() {
            if h.a.len() != dim {
                return Err(Error::InvalidParameter(format!("halfspace {j} has length {} but dim is {dim}", h.a.len())));
            }
            if h.a.iter().any(|v| !v.is_finite()) || !h.b.is_finite() {
                return Err(Error::InvalidParameter(format!("halfspace {j} is not finite")));
            }
        }
        Ok(ConstraintSet { dim, halfspaces, preset_tag: None })
    }

    pub fn from_rows(dim: usize, rows: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        Self::new(dim, rows.into_iter().map(|(a, b)| Halfspace { a, b }).collect())
    }

    pub fn intersect(&self, other: &ConstraintSet) -> Result<ConstraintSet> {
        if self.dim != other.dim {
            return Err(Error::InvalidParameter("intersecting sets of different dimension".into()));
        }
        let mut h = self.halfspaces.clone();
        h.extend(other.halfspaces.iter().cloned());
        Ok(ConstraintSet { dim: self.dim, halfspaces: h, preset_tag: None })
    }

    /// Largest violation `max_j (<a_j, pi> - b_j)`, or 0 when all hold.
    pub fn max_violation(&self, pi: &[f64]) -> f64 {
        self.halfspaces.iter().map(|h| dot(&h.a, pi) - h.b).fold(0.0, f64::max)
    }

    pub fn contains(&self, pi: &[f64], tol: f64) -> bool {
        self.max_violation(pi) <= tol
    }

    /// LP feasibility check.
    pub fn is_feasible(&self) -> Result<bool> {
        let mut lp = LinearProgram::maximize(vec![0.0; self.dim]);
        for h in &self.halfspaces {
            lp.le(h.a.clone(), h.b);
        }
        Ok(lp.solve()?.status != LpStatus::Infeasible)
    }
}

/// H-representation of a named preset.
pub fn preset_constraints(kind: &Preset, dim: usize) -> Result<ConstraintSet> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    let unit = |i: usize, s: f64| {
        let mut a = vec![0.0; dim];
        a[i] = s;
        a
    };
    let mut rows = Vec::new();
    match kind {
        Preset::NoShort => (0..dim).for_each(|i| rows.push((unit(i, -1.0), 0.0))),
        Preset::NoShortNoBorrow => {
            (0..dim).for_each(|i| rows.push((unit(i, -1.0), 0.0)));
            rows.push((vec![1.0; dim], 1.0));
        }
        Preset::BorrowLimit(c) => {
            if !(*c > 0.0) || !c.is_finite() {
                return Err(Error::InvalidParameter(format!("borrowing bound must be positive, got {c}")));
            }
            rows.push((vec![1.0; dim], *c));
        }
        Preset::Box { alpha, beta } => {
            if alpha.len() != dim || beta.len() != dim {
                return Err(Error::InvalidParameter("box bounds must have length dim".into()));
            }
            if alpha.iter().chain(beta).any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidParameter("box bounds must be positive".into()));
            }
            for i in 0..dim {
                rows.push((unit(i, 1.0), beta[i]));
                rows.push((unit(i, -1.0), alpha[i]));
            }
        }
    }
    let mut set = ConstraintSet::from_rows(dim, rows)?;
    set.preset_tag = Some(kind.tag());
    Ok(set)
}

/// Orthonormal basis `B` (d x r) of the subspace `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    basis: DMatrix<f64>,
}

impl SubspaceBasis {
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// `B^T x`.
    pub fn coords(&self, x: &[f64]) -> Vec<f64> {
        (self.basis.transpose() * DVector::from_column_slice(x)).iter().cloned().collect()
    }

    /// `B u`.
    pub fn embed(&self, u: &[f64]) -> Vec<f64> {
        if self.rank() == 0 {
            return vec![0.0; self.dim()];
        }
        (&self.basis * DVector::from_column_slice(u)).iter().cloned().collect()
    }

    /// `p_L(x) = B B^T x`.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.embed(&self.coords(x))
    }

    /// `p_{L^perp}(x) = x - B B^T x`.
    pub fn project_perp(&self, x: &[f64]) -> Vec<f64> {
        let p = self.project(x);
        x.iter().zip(&p).map(|(a, b)| a - b).collect()
    }
}

/// `{y : <a, y> <= 0}` for each stored normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    pub dim: usize,
    pub halfspaces: Vec<Vec<f64>>,
}

impl Cone {
    pub fn contains(&self, y: &[f64], tol: f64) -> bool {
        self.halfspaces.iter().all(|a| dot(a, y) <= tol)
    }
}

/// A finite-state one-period market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MarketSpec", into = "MarketSpec")]
pub struct DiscreteMarket {
    probs: Vec<f64>,
    returns: Vec<Vec<f64>>,
    constraints: ConstraintSet,
    support: Vec<Vec<f64>>,
    basis: SubspaceBasis,
}

impl DiscreteMarket {
    /// Validates the data and checks that `L^perp` lies inside the constraints.
    pub fn new(probs: Vec<f64>, returns: Vec<Vec<f64>>, constraints: ConstraintSet) -> Result<Self> {
        if probs.is_empty() || probs.len() != returns.len() {
            return Err(Error::InvalidMarket("need one return row per probability and at least one state".into()));
        }
        if probs.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidMarket("state probabilities must be positive".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMarket(format!("probabilities sum to {total}, not 1")));
        }
        let d = constraints.dim;
        for (w, r) in returns.iter().enumerate() {
            if r.len() != d {
                return Err(Error::InvalidMarket(format!("state {w} has {} returns, constraints have dim {d}", r.len())));
            }
            if r.iter().any(|x| !x.is_finite() || *x < -1.0) {
                return Err(Error::InvalidMarket(format!("state {w} has a return below -1 or not finite")));
            }
        }
        for (j, h) in constraints.halfspaces.iter().enumerate() {
            if h.b < 0.0 {
                return Err(Error::InvalidMarket(format!("constraint {j} excludes the zero strategy")));
            }
        }
        let support = support_of(&returns);
        let basis = span_and_projection(&support);
        for (j, h) in constraints.halfspaces.iter().enumerate() {
            let perp = basis.project_perp(&h.a);
            let n = norm(&perp);
            if n > 1e-10 * norm(&h.a).max(1.0) {
                return Err(Error::InvalidMarket(format!(
                    "constraint {j} restricts directions orthogonal to the support span (|p_perp(a)| = {n:e}); \
                     such directions carry no risk and must stay unconstrained"
                )));
            }
        }
        Ok(DiscreteMarket { probs, returns, constraints, support, basis })
    }

    pub fn dim(&self) -> usize {
        self.constraints.dim
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn returns(&self) -> &[Vec<f64>] {
        &self.returns
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn subspace(&self) -> &SubspaceBasis {
        &self.basis
    }

    /// Gains `<pi, R(w)>` per state.
    pub fn gains(&self, pi: &[f64]) -> Vec<f64> {
        self.returns.iter().map(|r| dot(pi, r)).collect()
    }

    pub fn expectation(&self, x: &[f64]) -> f64 {
        self.probs.iter().zip(x).map(|(p, v)| p * v).sum()
    }

    /// The allowed set `Theta = Theta_adm ∩ Theta_c`.
    pub fn allowed_set(&self) -> ConstraintSet {
        admissible_polyhedron(self).intersect(&self.constraints).expect("same dimension")
    }

    /// Allowed set in coordinates `u` of `L` (`pi = B u`).
    pub(crate) fn reduced_allowed(&self) -> Reduced {
        Reduced::new(&self.allowed_set(), &self.basis)
    }

    /// Chebyshev centre of `Theta ∩ L`, capped at radius 1.
    pub fn chebyshev_center(&self) -> Result<Vec<f64>> {
        let red = self.reduced_allowed();
        Ok(self.basis.embed(&red.chebyshev_center()?))
    }
}

/// Row-form polyhedron `{u : rows u <= rhs}` in `L` coordinates.
#[derive(Debug, Clone)]
pub(crate) struct Reduced {
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    /// Index of each kept row in the originating constraint set.
    pub origin: Vec<usize>,
}

impl Reduced {
    pub fn new(set: &ConstraintSet, basis: &SubspaceBasis) -> Self {
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        let mut origin = Vec::new();
        for (j, h) in set.halfspaces.iter().enumerate() {
            let a = basis.coords(&h.a);
            if norm(&a) <= 1e-14 * norm(&h.a).max(1.0) {
                // Constant row 0 <= b; it always holds for sets containing 0.
                continue;
            }
            rows.push(a);
            rhs.push(h.b);
            origin.push(j);
        }
        Reduced { rows, rhs, origin }
    }

    pub fn chebyshev_center(&self) -> Result<Vec<f64>> {
        let r = self.rows.first().map_or(0, |a| a.len());
        if r == 0 {
            return Ok(vec![]);
        }
        let mut c = vec![0.0; r + 1];
        c[r] = 1.0;
        let mut lp = LinearProgram::maximize(c);
        for (a, b) in self.rows.iter().zip(&self.rhs) {
            let mut row = a.clone();
            row.push(norm(a));
            lp.le(row, *b);
        }
        let mut cap = vec![0.0; r + 1];
        cap[r] = 1.0;
        lp.le(cap, 1.0);
        let mut pos = vec![0.0; r + 1];
        pos[r] = -1.0;
        lp.le(pos, 0.0);
        let s = lp.solve()?;
        match s.status {
            LpStatus::Optimal => Ok(s.x[..r].to_vec()),
            LpStatus::Infeasible => Err(Error::Infeasible("allowed set is empty".into())),
            LpStatus::Unbounded => Err(Error::numeric("Chebyshev LP unbounded", f64::INFINITY)),
        }
    }
}

/// Distinct return rows, compared after rounding to 1e-12, in first-seen order.
pub fn support(market: &DiscreteMarket) -> Vec<Vec<f64>> {
    market.support.clone()
}

fn support_of(returns: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for r in returns {
        let key: Vec<u64> = r.iter().map(|x| ((x * 1e12).round() + 0.0).to_bits()).collect();
        if seen.insert(key) {
            out.push(r.clone());
        }
    }
    out
}

/// Orthonormal basis of the span `L` of the support vectors.
pub fn span_and_projection(support: &[Vec<f64>]) -> SubspaceBasis {
    let dim = support.first().map_or(0, |z| z.len());
    SubspaceBasis { basis: row_space_basis(support, dim, 1e-10) }
}

/// `Theta_adm`: one halfspace `<-z, pi> <= 1` per support point.
pub fn admissible_polyhedron(market: &DiscreteMarket) -> ConstraintSet {
    let rows = market.support.iter().map(|z| Halfspace { a: z.iter().map(|v| -v).collect(), b: 1.0 }).collect();
    ConstraintSet { dim: market.dim(), halfspaces: rows, preset_tag: None }
}

/// Recession cone of a nonempty polyhedron: the same normals with zero right-hand sides.
pub fn recession_cone(theta: &ConstraintSet) -> Result<Cone> {
    if !theta.is_feasible()? {
        return Err(Error::Infeasible("cannot form the recession cone of an empty set".into()));
    }
    Ok(Cone { dim: theta.dim, halfspaces: theta.halfspaces.iter().map(|h| h.a.clone()).collect() })
}

/// Terminal wealth `v (1 + <pi, R(w)>)` per state.
pub fn wealth(pi: &[f64], v: f64, market: &DiscreteMarket) -> Vec<f64> {
    market.returns.iter().map(|r| v * (1.0 + dot(pi, r))).collect()
}

/// Random points of `Theta ∩ L` by a hit-and-run walk from the Chebyshev centre.
///
/// Fails when `Theta ∩ L` is unbounded.
pub fn sample_allowed<R: Rng>(market: &DiscreteMarket, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let red = market.reduced_allowed();
    let r = market.basis.rank();
    if r == 0 {
        return Ok(vec![vec![0.0; market.dim()]; n]);
    }
    let mut u = red.chebyshev_center()?;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let dir: Vec<f64> = (0..r).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nd = norm(&dir);
        if nd < 1e-3 {
            continue;
        }
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for (a, b) in red.rows.iter().zip(&red.rhs) {
            let ad = dot(a, &dir) / nd;
            let slack = (b - dot(a, &u)).max(0.0);
            if ad > 1e-14 {
                hi = hi.min(slack / ad);
            } else if ad < -1e-14 {
                lo = lo.max(slack / ad);
            }
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Precondition("allowed set is unbounded; cannot sample".into()));
        }
        let t = lo + (hi - lo) * rng.gen_range(0.0..1.0);
        for (ui, di) in u.iter_mut().zip(&dir) {
            *ui += t * di / nd;
        }
        out.push(market.basis.embed(&u));
    }
    Ok(out)
}

/// JSON form of constraints: explicit halfspaces, a preset tag, or both.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halfspaces: Option<Vec<Halfspace>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
}

impl ConstraintSpec {
    pub fn to_set(&self, dim: usize) -> Result<ConstraintSet> {
        match (&self.halfspaces, &self.preset) {
            (Some(h), tag) => {
                let mut s = ConstraintSet::new(dim, h.clone())?;
                s.preset_tag = tag.clone();
                Ok(s)
            }
            (None, Some(tag)) => preset_constraints(&Preset::parse(tag)?, dim),
            (None, None) => Ok(ConstraintSet::unconstrained(dim)),
        }
    }

    pub fn from_set(set: &ConstraintSet) -> Self {
        ConstraintSpec { halfspaces: Some(set.halfspaces.clone()), preset: set.preset_tag.clone() }
    }
}

/// JSON form of a market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub probs: Vec<f64>,
    pub returns: Vec<Vec<f64>>,
    #[serde(default)]
    pub constraints: ConstraintSpec,
}

impl TryFrom<MarketSpec> for DiscreteMarket {
    type Error = Error;
    fn try_from(s: MarketSpec) -> Result<Self> {
        let dim = s.returns.first().map_or(0, |r| r.len());
        let set = s.constraints.to_set(dim)?;
        DiscreteMarket::new(s.probs, s.returns, set)
    }
}

impl From<DiscreteMarket> for MarketSpec {
    fn from(m: DiscreteMarket) -> Self {
        MarketSpec { probs: m.probs, returns: m.returns, constraints: ConstraintSpec::from_set(&m.constraints) }
    }
}
