//! Multi-period markets on a finite scenario tree.
//!
//! Every non-leaf node carries a one-period market made of its children's
//! branch probabilities and returns, together with the constraint set that
//! governs the strategy chosen at that node. Most questions reduce to
//! node-by-node one-period problems.

use crate::arbitrage::{check_na1, expected_gain_max, Na1Certificate};
use crate::error::{Error, Result};
use crate::hedging::{superhedge, Claim};
use crate::linalg::dot;
use crate::lp::{LinearProgram, LpStatus};
use crate::market::{ConstraintSet, ConstraintSpec, DiscreteMarket};
use crate::portfolio::{
    expected_utility, maximize_state_utility, numeraire_portfolio, OptimizerOptions, StateUtility, UtilitySpec,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    #[serde(default)]
    pub parent: Option<String>,
    /// Probability of reaching this node from its parent; ignored at the root.
    #[serde(default = "one")]
    pub prob: f64,
    /// Returns on the edge from the parent; absent at the root.
    #[serde(default)]
    pub returns: Option<Vec<f64>>,
    /// Name of the constraint set for the strategy chosen at this node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<String>,
}

fn one() -> f64 {
    1.0
}

/// JSON form of a tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub dim: usize,
    #[serde(default)]
    pub constraints: BTreeMap<String, ConstraintSpec>,
    pub nodes: Vec<NodeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeSpec", into = "TreeSpec")]
pub struct ScenarioTree {
    spec: TreeSpec,
    sets: BTreeMap<String, ConstraintSet>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    root: usize,
    horizon: usize,
}

impl TryFrom<TreeSpec> for ScenarioTree {
    type Error = Error;
    fn try_from(s: TreeSpec) -> Result<Self> {
        ScenarioTree::new(s)
    }
}

impl From<ScenarioTree> for TreeSpec {
    fn from(t: ScenarioTree) -> Self {
        t.spec
    }
}

impl ScenarioTree {
    pub fn new(spec: TreeSpec) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let n = spec.nodes.len();
        if n == 0 {
            return bad("tree has no nodes".into());
        }
        let mut index = BTreeMap::new();
        for (i, node) in spec.nodes.iter().enumerate() {
            if index.insert(node.id.clone(), i).is_some() {
                return bad(format!("duplicate node id '{}'", node.id));
            }
        }
        let mut sets = BTreeMap::new();
        for (name, cs) in &spec.constraints {
            sets.insert(name.clone(), cs.to_set(spec.dim)?);
        }
        let mut parent = vec![None; n];
        let mut children = vec![vec![]; n];
        let mut roots = vec![];
        for (i, node) in spec.nodes.iter().enumerate() {
            match &node.parent {
                None => roots.push(i),
                Some(p) => {
                    let Some(&j) = index.get(p) else { return bad(format!("node '{}' has unknown parent '{p}'", node.id)) };
                    parent[i] = Some(j);
                    children[j].push(i);
                }
            }
            if let Some(c) = &node.constraints {
                if !sets.contains_key(c) {
                    return bad(format!("node '{}' refers to unknown constraint set '{c}'", node.id));
                }
            }
        }
        if roots.len() != 1 {
            return bad(format!("tree needs exactly one root, found {}", roots.len()));
        }
        let root = roots[0];
        if spec.nodes[root].returns.is_some() {
            return bad("the root has no incoming returns".into());
        }
        // breadth-first depths; unreachable nodes mean a cycle
        let mut depth = vec![usize::MAX; n];
        depth[root] = 0;
        let mut queue = vec![root];
        let mut k = 0;
        while k < queue.len() {
            let i = queue[k];
            k += 1;
            for &c in &children[i] {
                depth[c] = depth[i] + 1;
                queue.push(c);
            }
        }
        if queue.len() != n {
            return bad("tree is not connected".into());
        }
        let leaves: Vec<usize> = (0..n).filter(|&i| children[i].is_empty()).collect();
        let horizon = depth[leaves[0]];
        if leaves.iter().any(|&l| depth[l] != horizon) {
            return bad("all leaves must sit at the same depth".into());
        }
        for i in 0..n {
            let node = &spec.nodes[i];
            if i != root {
                let Some(r) = &node.returns else { return bad(format!("node '{}' has no returns", node.id)) };
                if r.len() != spec.dim || r.iter().any(|x| !x.is_finite() || *x < -1.0) {
                    return bad(format!("node '{}' needs {} finite returns >= -1", node.id, spec.dim));
                }
                if !(node.prob > 0.0) {
                    return bad(format!("node '{}' has nonpositive probability", node.id));
                }
            }
            if !children[i].is_empty() {
                let s: f64 = children[i].iter().map(|&c| spec.nodes[c].prob).sum();
                if (s - 1.0).abs() > 1e-12 {
                    return bad(format!("children of '{}' have probabilities summing to {s}", node.id));
                }
            }
        }
        Ok(ScenarioTree { spec, sets, parent, children, depth, root, horizon })
    }

    pub fn spec(&self) -> &TreeSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.spec.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spec.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn id(&self, i: usize) -> &str {
        &self.spec.nodes[i].id
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.spec.nodes.iter().position(|n| n.id == id)
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn depth(&self, i: usize) -> usize {
        self.depth[i]
    }

    pub fn prob(&self, i: usize) -> f64 {
        if i == self.root { 1.0 } else { self.spec.nodes[i].prob }
    }

    pub fn returns(&self, i: usize) -> Option<&[f64]> {
        self.spec.nodes[i].returns.as_deref()
    }

    /// Leaves in node order; claims are indexed the same way.
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.children[i].is_empty()).collect()
    }

    /// Non-leaf nodes, deepest first.
    pub fn interior_bottom_up(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.len()).filter(|&i| !self.children[i].is_empty()).collect();
        v.sort_by_key(|&i| std::cmp::Reverse(self.depth[i]));
        v
    }

    /// Non-leaf nodes, root first.
    pub fn interior_top_down(&self) -> Vec<usize> {
        let mut v = self.interior_bottom_up();
        v.reverse();
        v
    }

    /// Probability of the path from the root to `i`.
    pub fn path_prob(&self, mut i: usize) -> f64 {
        let mut p = 1.0;
        while let Some(j) = self.parent[i] {
            p *= self.spec.nodes[i].prob;
            i = j;
        }
        p
    }

    pub fn constraints_at(&self, i: usize) -> ConstraintSet {
        match &self.spec.nodes[i].constraints {
            Some(name) => self.sets[name].clone(),
            None => ConstraintSet::unconstrained(self.dim()),
        }
    }
}

/// The one-period market seen from a non-leaf node.
pub fn node_market(tree: &ScenarioTree, node: usize) -> Result<DiscreteMarket> {
    if node >= tree.len() {
        return Err(Error::InvalidParameter(format!("no node with index {node}")));
    }
    let kids = tree.children(node);
    if kids.is_empty() {
        return Err(Error::InvalidParameter(format!("node '{}' is a leaf", tree.id(node))));
    }
    let probs = kids.iter().map(|&c| tree.prob(c)).collect();
    let returns = kids.iter().map(|&c| tree.returns(c).expect("validated").to_vec()).collect();
    DiscreteMarket::new(probs, returns, tree.constraints_at(node)).map_err(|e| match e {
        Error::InvalidMarket(m) => Error::InvalidMarket(format!("node '{}': {m}", tree.id(node))),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeNa1 {
    pub id: String,
    pub certificate: Na1Certificate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNa1Report {
    pub holds: bool,
    pub nodes: Vec<NodeNa1>,
    pub failing: Vec<String>,
}

/// NA1 on the whole tree holds iff it holds at every node.
pub fn global_na1(tree: &ScenarioTree) -> Result<TreeNa1Report> {
    let mut nodes = vec![];
    let mut failing = vec![];
    for i in tree.interior_top_down() {
        let cert = check_na1(&node_market(tree, i)?)?;
        if !cert.holds() {
            failing.push(tree.id(i).to_string());
        }
        nodes.push(NodeNa1 { id: tree.id(i).to_string(), certificate: cert });
    }
    Ok(TreeNa1Report { holds: failing.is_empty(), nodes, failing })
}

fn require_na1(tree: &ScenarioTree) -> Result<()> {
    let rep = global_na1(tree)?;
    if !rep.holds {
        return Err(Error::Precondition(format!(
            "NA1 fails at node(s) {:?}; without it the optimisation problem has no solution",
            rep.failing
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNode {
    pub id: String,
    /// Strategy chosen at this node; absent at leaves.
    pub strategy: Option<Vec<f64>>,
    /// Wealth at this node per unit of initial wealth.
    pub wealth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyProcess {
    pub nodes: Vec<PolicyNode>,
}

impl PolicyProcess {
    fn from_strategies(tree: &ScenarioTree, strategies: &[Option<Vec<f64>>]) -> Self {
        let mut wealth = vec![0.0; tree.len()];
        wealth[tree.root()] = 1.0;
        for i in tree.interior_top_down() {
            let pi = strategies[i].as_ref().expect("interior strategy");
            for &c in tree.children(i) {
                wealth[c] = wealth[i] * (1.0 + dot(pi, tree.returns(c).unwrap()));
            }
        }
        let nodes = (0..tree.len())
            .map(|i| PolicyNode { id: tree.id(i).to_string(), strategy: strategies[i].clone(), wealth: wealth[i] })
            .collect();
        PolicyProcess { nodes }
    }

    pub fn strategy(&self, i: usize) -> Option<&[f64]> {
        self.nodes[i].strategy.as_deref()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DpOptions {
    /// Wealth grid for utilities without a closed-form value function.
    /// Defaults to zero plus 256 geometric points over the reachable range.
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    /// Restrict the strategy at each node to a finite list, keyed by node id.
    #[serde(default)]
    pub candidates: Option<BTreeMap<String, Vec<Vec<f64>>>>,
    /// Optimiser tolerance; 1e-10 when absent.
    #[serde(default)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpResult {
    /// Root value `U_0(1)`.
    pub value: f64,
    pub policy: PolicyProcess,
    /// Largest gap seen between the interpolated value function and a direct
    /// solve at grid midpoints; absent when the recursion is exact.
    pub interpolation_error: Option<f64>,
}

/// Dynamic programming for the expected utility of terminal wealth.
///
/// Log and power utilities factorise, `U_t(x) = a + log x` and
/// `U_t(x) = b x^g / g`, so each node is a single one-period problem. Other
/// utilities are tabulated on a wealth grid.
pub fn backward_induction(tree: &ScenarioTree, u: &UtilitySpec, opts: &DpOptions) -> Result<DpResult> {
    u.validate()?;
    require_na1(tree)?;
    let tol = opts.tol.unwrap_or(1e-10);
    if let Some(c) = &opts.candidates {
        check_candidates(tree, c)?;
        return match u {
            UtilitySpec::PiecewiseLinear { .. } => dp_candidates_exact(tree, u, c),
            _ => dp_separable(tree, u, Some(c), tol),
        };
    }
    match u {
        UtilitySpec::PiecewiseLinear { .. } => dp_grid(tree, u, opts.grid.as_deref()),
        _ => dp_separable(tree, u, None, tol),
    }
}

fn check_candidates(tree: &ScenarioTree, cands: &BTreeMap<String, Vec<Vec<f64>>>) -> Result<()> {
    for i in tree.interior_top_down() {
        let id = tree.id(i);
        let list = cands
            .get(id)
            .filter(|l| !l.is_empty())
            .ok_or_else(|| Error::InvalidParameter(format!("no candidate strategies for node '{id}'")))?;
        let market = node_market(tree, i)?;
        let allowed = market.allowed_set();
        for pi in list {
            if pi.len() != tree.dim() || !allowed.contains(pi, 1e-9) {
                return Err(Error::InvalidParameter(format!("candidate {pi:?} at node '{id}' is not allowed")));
            }
        }
    }
    Ok(())
}

fn dp_separable(
    tree: &ScenarioTree,
    u: &UtilitySpec,
    cands: Option<&BTreeMap<String, Vec<Vec<f64>>>>,
    tol: f64,
) -> Result<DpResult> {
    let n = tree.len();
    // log: U = a + log x; power: U = b x^g / g
    let mut coef = vec![0.0; n];
    let leaf_coef = if matches!(u, UtilitySpec::Log) { 0.0 } else { 1.0 };
    for l in tree.leaves() {
        coef[l] = leaf_coef;
    }
    let mut strategies: Vec<Option<Vec<f64>>> = vec![None; n];
    for i in tree.interior_bottom_up() {
        let market = node_market(tree, i)?;
        let kids = tree.children(i);
        let m = kids.len();
        let su = match u {
            UtilitySpec::Log => StateUtility {
                base: u.clone(),
                scale: 1.0,
                shifts: vec![0.0; m],
                weights: vec![1.0; m],
                offsets: kids.iter().map(|&c| coef[c]).collect(),
            },
            _ => StateUtility {
                base: u.clone(),
                scale: 1.0,
                shifts: vec![0.0; m],
                weights: kids.iter().map(|&c| coef[c]).collect(),
                offsets: vec![0.0; m],
            },
        };
        let (pi, value) = match cands {
            Some(c) => c[tree.id(i)]
                .iter()
                .map(|pi| (pi.clone(), expected_utility(&market, &su, pi)))
                .fold((vec![], f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best }),
            None => {
                let o = OptimizerOptions { tol, require_na1: false, ..Default::default() };
                let opt = maximize_state_utility(&market, &su, &o).map_err(|e| match e {
                    Error::Numeric { message, residual } => {
                        Error::Numeric { message: format!("node '{}': {message}", tree.id(i)), residual }
                    }
                    other => other,
                })?;
                (opt.strategy, opt.value)
            }
        };
        if !value.is_finite() {
            return Err(Error::numeric(format!("node '{}' has no strategy with finite utility", tree.id(i)), value));
        }
        coef[i] = match u {
            UtilitySpec::Power { gamma } => gamma * value,
            _ => value,
        };
        strategies[i] = Some(pi);
    }
    let root = tree.root();
    let value = match u {
        UtilitySpec::Power { gamma } => coef[root] / gamma,
        _ => coef[root],
    };
    Ok(DpResult { value, policy: PolicyProcess::from_strategies(tree, &strategies), interpolation_error: None })
}

/// Exact recursion over a finite strategy list per node, at the wealth that
/// actually reaches each node.
fn dp_candidates_exact(tree: &ScenarioTree, u: &UtilitySpec, cands: &BTreeMap<String, Vec<Vec<f64>>>) -> Result<DpResult> {
    fn value(
        tree: &ScenarioTree,
        u: &UtilitySpec,
        cands: &BTreeMap<String, Vec<Vec<f64>>>,
        i: usize,
        x: f64,
        out: &mut Vec<Option<Vec<f64>>>,
        record: bool,
    ) -> f64 {
        let kids = tree.children(i);
        if kids.is_empty() {
            return u.value(x);
        }
        let mut best = (f64::NEG_INFINITY, 0);
        for (k, pi) in cands[tree.id(i)].iter().enumerate() {
            let v: f64 = kids
                .iter()
                .map(|&c| tree.prob(c) * value(tree, u, cands, c, x * (1.0 + dot(pi, tree.returns(c).unwrap())), out, false))
                .sum();
            if v > best.0 {
                best = (v, k);
            }
        }
        if record {
            let pi = cands[tree.id(i)][best.1].clone();
            out[i] = Some(pi.clone());
            for &c in kids {
                value(tree, u, cands, c, x * (1.0 + dot(&pi, tree.returns(c).unwrap())), out, true);
            }
        }
        best.0
    }
    let mut strategies = vec![None; tree.len()];
    let v = value(tree, u, cands, tree.root(), 1.0, &mut strategies, true);
    Ok(DpResult { value: v, policy: PolicyProcess::from_strategies(tree, &strategies), interpolation_error: None })
}

/// Concave piecewise-linear function as the minimum of affine pieces.
#[derive(Debug, Clone)]
struct Pieces(Vec<(f64, f64)>);

impl Pieces {
    fn from_points(x: &[f64], y: &[f64]) -> Self {
        Pieces(
            x.windows(2)
                .zip(y.windows(2))
                .map(|(xs, ys)| {
                    let s = (ys[1] - ys[0]) / (xs[1] - xs[0]);
                    (s, ys[0] - s * xs[0])
                })
                .collect(),
        )
    }

    fn eval(&self, x: f64) -> f64 {
        self.0.iter().map(|(s, b)| s * x + b).fold(f64::INFINITY, f64::min)
    }
}

/// `max over Theta ∩ L of sum_c p_c U_c(x (1 + <pi, R_c>))` by the epigraph LP.
fn grid_node_lp(market: &DiscreteMarket, fns: &[Pieces], x: f64) -> Result<(Vec<f64>, f64)> {
    let basis = market.subspace();
    let r = basis.rank();
    let m = market.num_states();
    let red = market.reduced_allowed();
    let mut c = vec![0.0; r + m];
    c[r..].copy_from_slice(market.probs());
    let mut lp = LinearProgram::maximize(c);
    for (a, b) in red.rows.iter().zip(&red.rhs) {
        let mut row = a.clone();
        row.resize(r + m, 0.0);
        lp.le(row, *b);
    }
    for (w, f) in fns.iter().enumerate() {
        let rw = basis.coords(&market.returns()[w]);
        for (s, b) in &f.0 {
            // t_w <= s x (1 + <r, u>) + b
            let mut row: Vec<f64> = rw.iter().map(|v| -s * x * v).collect();
            row.resize(r + m, 0.0);
            row[r + w] = 1.0;
            lp.le(row, s * x + b);
        }
    }
    let sol = lp.solve()?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::numeric(format!("grid LP ended {:?}", sol.status), f64::NAN));
    }
    Ok((basis.embed(&sol.x[..r]), sol.objective))
}

/// Range of `1 + <pi, R_c>` over the node's allowed set, per child.
fn multiplier_range(market: &DiscreteMarket) -> Result<Vec<(f64, f64)>> {
    let basis = market.subspace();
    let red = market.reduced_allowed();
    let mut out = vec![];
    for z in market.returns() {
        let rz = basis.coords(z);
        let mut ends = [0.0; 2];
        for (k, sign) in [-1.0, 1.0].into_iter().enumerate() {
            if rz.is_empty() {
                ends[k] = 0.0;
                continue;
            }
            let mut lp = LinearProgram::maximize(rz.iter().map(|v| sign * v).collect());
            for (a, b) in red.rows.iter().zip(&red.rhs) {
                lp.le(a.clone(), *b);
            }
            let sol = lp.solve()?;
            if sol.status != LpStatus::Optimal {
                return Err(Error::numeric("allowed set is unbounded at a node that passed NA1", f64::INFINITY));
            }
            ends[k] = sign * sol.objective;
        }
        out.push(((1.0 + ends[0]).max(0.0), 1.0 + ends[1]));
    }
    Ok(out)
}

/// Zero, 256 geometric points over `[lo, hi]`, and the utility's own kinks.
fn default_grid(lo: f64, hi: f64, knots: &[f64]) -> Vec<f64> {
    let (mut lo, mut hi) = (lo.max(1e-6 * hi), hi);
    if !(hi > lo * (1.0 + 1e-9)) {
        lo *= 0.5;
        hi *= 2.0;
    }
    let mut g = vec![0.0];
    let k = 256;
    g.extend((0..k).map(|j| lo * (hi / lo).powf(j as f64 / (k - 1) as f64)));
    g.extend(knots.iter().filter(|&&x| x > 0.0));
    g.sort_by(f64::total_cmp);
    g.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    g
}

fn dp_grid(tree: &ScenarioTree, u: &UtilitySpec, user_grid: Option<&[f64]>) -> Result<DpResult> {
    if let Some(g) = user_grid {
        if g.len() < 2 || g.windows(2).any(|w| !(w[1] > w[0])) || g[0] < 0.0 {
            return Err(Error::InvalidParameter("wealth grid must be increasing, nonnegative, with at least 2 points".into()));
        }
    }
    let n = tree.len();
    let mut markets: Vec<Option<DiscreteMarket>> = vec![None; n];
    for i in tree.interior_top_down() {
        markets[i] = Some(node_market(tree, i)?);
    }
    // reachable wealth per node by interval propagation
    let mut range = vec![(1.0, 1.0); n];
    for i in tree.interior_top_down() {
        let mr = multiplier_range(markets[i].as_ref().unwrap())?;
        for (&c, (lo, hi)) in tree.children(i).iter().zip(mr) {
            range[c] = (range[i].0 * lo, range[i].1 * hi);
        }
    }
    let base = Pieces(u.pieces().expect("piecewise-linear utility"));
    let knots: Vec<f64> = match u {
        UtilitySpec::PiecewiseLinear { knots } => knots.iter().map(|k| k[0]).collect(),
        _ => vec![],
    };
    let mut fns: Vec<Option<Pieces>> = vec![None; n];
    for l in tree.leaves() {
        fns[l] = Some(base.clone());
    }
    let mut grids: Vec<Vec<f64>> = vec![vec![]; n];
    let mut interp_err: f64 = 0.0;
    for i in tree.interior_bottom_up() {
        let market = markets[i].as_ref().unwrap();
        let child_fns: Vec<Pieces> = tree.children(i).iter().map(|&c| fns[c].clone().unwrap()).collect();
        let grid = match user_grid {
            Some(g) => g.to_vec(),
            None => default_grid(range[i].0, range[i].1, &knots),
        };
        let vals = grid
            .iter()
            .map(|&x| grid_node_lp(market, &child_fns, x).map(|r| r.1))
            .collect::<Result<Vec<f64>>>()
            .map_err(|e| node_err(tree, i, e))?;
        let f = Pieces::from_points(&grid, &vals);
        for k in (0..grid.len() - 1).step_by(16) {
            let mid = 0.5 * (grid[k] + grid[k + 1]);
            let direct = grid_node_lp(market, &child_fns, mid).map_err(|e| node_err(tree, i, e))?.1;
            interp_err = interp_err.max((f.eval(mid) - direct).abs());
        }
        fns[i] = Some(f);
        grids[i] = grid;
    }
    // forward pass at the wealth actually reached
    let mut strategies: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut wealth = vec![0.0; n];
    wealth[tree.root()] = 1.0;
    let mut value = f64::NAN;
    for i in tree.interior_top_down() {
        let child_fns: Vec<Pieces> = tree.children(i).iter().map(|&c| fns[c].clone().unwrap()).collect();
        let x = wealth[i];
        let (pi, v) = if x > 0.0 {
            grid_node_lp(markets[i].as_ref().unwrap(), &child_fns, x).map_err(|e| node_err(tree, i, e))?
        } else {
            (vec![0.0; tree.dim()], child_fns.iter().zip(tree.children(i)).map(|(f, &c)| tree.prob(c) * f.eval(0.0)).sum())
        };
        if i == tree.root() {
            value = v;
        }
        for &c in tree.children(i) {
            wealth[c] = x * (1.0 + dot(&pi, tree.returns(c).unwrap()));
        }
        strategies[i] = Some(pi);
    }
    Ok(DpResult {
        value,
        policy: PolicyProcess::from_strategies(tree, &strategies),
        interpolation_error: Some(interp_err),
    })
}

fn node_err(tree: &ScenarioTree, i: usize, e: Error) -> Error {
    match e {
        Error::Numeric { message, residual } => Error::Numeric { message: format!("node '{}': {message}", tree.id(i)), residual },
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeflatorNode {
    pub id: String,
    pub z: f64,
    /// `max over allowed pi of sum_c p_c Z_c (1 + <pi, R_c>) / Z`, at most 1
    /// for a supermartingale; absent at leaves.
    pub check: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeflatorProcess {
    pub nodes: Vec<DeflatorNode>,
}

impl DeflatorProcess {
    /// Smallest `1 - check` over interior nodes.
    pub fn min_slack(&self) -> f64 {
        self.nodes.iter().filter_map(|n| n.check).map(|c| 1.0 - c).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumeraireProcess {
    pub policy: PolicyProcess,
    pub deflator: DeflatorProcess,
}

/// Node-wise numeraire portfolio and the deflator `Z = 1 / V^rho`, with a
/// supermartingale LP at every node.
pub fn numeraire_process(tree: &ScenarioTree) -> Result<NumeraireProcess> {
    require_na1(tree)?;
    let n = tree.len();
    let mut strategies: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut markets = vec![None; n];
    for i in tree.interior_top_down() {
        let market = node_market(tree, i)?;
        let rho = numeraire_portfolio(&market).map_err(|e| node_err(tree, i, e))?;
        strategies[i] = Some(rho.strategy);
        markets[i] = Some(market);
    }
    let policy = PolicyProcess::from_strategies(tree, &strategies);
    let z: Vec<f64> = policy.nodes.iter().map(|p| 1.0 / p.wealth).collect();
    let mut check = vec![None; n];
    for i in tree.interior_top_down() {
        let market = markets[i].as_ref().unwrap();
        let w: Vec<f64> = tree.children(i).iter().map(|&c| tree.prob(c) * z[c] / z[i]).collect();
        let v = w.iter().sum::<f64>() + expected_gain_max(market, &w)?;
        if v > 1.0 + 1e-8 {
            return Err(Error::numeric(format!("deflator fails the supermartingale check at node '{}'", tree.id(i)), v - 1.0));
        }
        check[i] = Some(v);
    }
    let nodes = (0..n).map(|i| DeflatorNode { id: tree.id(i).to_string(), z: z[i], check: check[i] }).collect();
    Ok(NumeraireProcess { policy, deflator: DeflatorProcess { nodes } })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeNode {
    pub id: String,
    /// Super-hedging value of the continuation claim at this node.
    pub value: f64,
    /// Amount held in each asset at this node; absent at leaves.
    pub holdings: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeHedge {
    pub value: f64,
    pub nodes: Vec<HedgeNode>,
}

/// Backward super-hedging: each node prices the vector of its children's values.
/// `claim` has one payoff per leaf, in the order of [`ScenarioTree::leaves`].
pub fn superhedge_tree(tree: &ScenarioTree, claim: &[f64]) -> Result<TreeHedge> {
    let leaves = tree.leaves();
    if claim.len() != leaves.len() {
        return Err(Error::InvalidParameter(format!("claim needs {} leaf payoffs, got {}", leaves.len(), claim.len())));
    }
    Claim::new(claim.to_vec())?;
    require_na1(tree)?;
    let n = tree.len();
    let mut value = vec![0.0; n];
    let mut holdings = vec![None; n];
    for (&l, &x) in leaves.iter().zip(claim) {
        value[l] = x;
    }
    for i in tree.interior_bottom_up() {
        let market = node_market(tree, i)?;
        let cont = Claim::new(tree.children(i).iter().map(|&c| value[c]).collect())?;
        let rep = superhedge(&market, &cont).map_err(|e| node_err(tree, i, e))?;
        value[i] = rep.primal_value;
        holdings[i] = Some(rep.strategy);
    }
    let nodes = (0..n).map(|i| HedgeNode { id: tree.id(i).to_string(), value: value[i], holdings: holdings[i].clone() }).collect();
    Ok(TreeHedge { value: value[tree.root()], nodes })
}

/// Tree in which every node has the same children as the one-period `market`.
pub fn iid_tree(market: &DiscreteMarket, horizon: usize) -> Result<ScenarioTree> {
    let mut constraints = BTreeMap::new();
    constraints.insert("theta".to_string(), ConstraintSpec::from_set(market.constraints()));
    let mut nodes = vec![NodeSpec { id: "0".into(), parent: None, prob: 1.0, returns: None, constraints: Some("theta".into()) }];
    let mut frontier = vec!["0".to_string()];
    for t in 0..horizon {
        let mut next = vec![];
        for p in &frontier {
            for (w, (q, r)) in market.probs().iter().zip(market.returns()).enumerate() {
                let id = format!("{p}.{w}");
                nodes.push(NodeSpec {
                    id: id.clone(),
                    parent: Some(p.clone()),
                    prob: *q,
                    returns: Some(r.clone()),
                    constraints: (t + 1 < horizon).then(|| "theta".to_string()),
                });
                next.push(id);
            }
        }
        frontier = next;
    }
    ScenarioTree::new(TreeSpec { dim: market.dim(), constraints, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::ConstraintSet;
    use crate::portfolio::maximize_utility;

    fn two_state() -> DiscreteMarket {
        DiscreteMarket::new(vec![0.5, 0.5], vec![vec![1.0], vec![-0.5]], ConstraintSet::unconstrained(1)).unwrap()
    }

    #[test]
    fn depth_one_recovers_market() {
        let m = two_state();
        let t = iid_tree(&m, 1).unwrap();
        assert_eq!(node_market(&t, t.root()).unwrap(), m);
        assert!(node_market(&t, 1).is_err());
    }

    #[test]
    fn log_value_adds_over_periods() {
        let m = two_state();
        let one = maximize_utility(&m, &UtilitySpec::Log, 1e-12).unwrap();
        let t = iid_tree(&m, 2).unwrap();
        let dp = backward_induction(&t, &UtilitySpec::Log, &DpOptions::default()).unwrap();
        assert!((dp.value - 2.0 * one.value).abs() < 1e-10);
    }

    #[test]
    fn power_matches_one_period() {
        let m = two_state();
        let u = UtilitySpec::Power { gamma: -1.0 };
        let one = maximize_utility(&m, &u, 1e-12).unwrap();
        let dp = backward_induction(&iid_tree(&m, 1).unwrap(), &u, &DpOptions::default()).unwrap();
        assert!((dp.value - one.value).abs() < 1e-12);
        // two periods: b = g * v1, value = b * v1
        let dp2 = backward_induction(&iid_tree(&m, 2).unwrap(), &u, &DpOptions::default()).unwrap();
        assert!((dp2.value - (-1.0) * one.value * one.value).abs() < 1e-10);
    }

    #[test]
    fn cash_claim_costs_one() {
        let t = iid_tree(&two_state(), 2).unwrap();
        let h = superhedge_tree(&t, &[1.0; 4]).unwrap();
        assert!((h.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_trees() {
        let spec = TreeSpec {
            dim: 1,
            constraints: BTreeMap::new(),
            nodes: vec![
                NodeSpec { id: "r".into(), parent: None, prob: 1.0, returns: None, constraints: None },
                NodeSpec { id: "a".into(), parent: Some("r".into()), prob: 0.6, returns: Some(vec![0.1]), constraints: None },
                NodeSpec { id: "b".into(), parent: Some("r".into()), prob: 0.6, returns: Some(vec![-0.1]), constraints: None },
            ],
        };
        assert!(ScenarioTree::new(spec).is_err());
    }

    #[test]
    fn grid_dp_one_period_is_exact() {
        let m = DiscreteMarket::new(vec![0.3, 0.7], vec![vec![1.0], vec![-0.5]], ConstraintSet::unconstrained(1)).unwrap();
        let u = UtilitySpec::PiecewiseLinear { knots: vec![[0.0, 0.0], [1.0, 1.0], [3.0, 2.0]] };
        let one = maximize_utility(&m, &u, 1e-10).unwrap();
        let dp = backward_induction(&iid_tree(&m, 1).unwrap(), &u, &DpOptions::default()).unwrap();
        assert!((dp.value - one.value).abs() < 1e-10, "{} vs {}", dp.value, one.value);
        let dp2 = backward_induction(&iid_tree(&m, 2).unwrap(), &u, &DpOptions::default()).unwrap();
        // holding cash in the second period reproduces the one-period value
        assert!(dp2.value >= one.value - 1e-9, "{} vs {}", dp2.value, one.value);
        assert!(dp2.interpolation_error.unwrap().is_finite());
    }
}
