//! Random markets and small linear-algebra oracles shared by the integration tests.
#![allow(dead_code)]

use na1lab::arbitrage::check_na1;
use na1lab::lp::{LinearProgram, LpStatus};
use na1lab::market::{preset_constraints, ConstraintSet, DiscreteMarket, Preset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Returns on a 0.05 grid so that ties and degenerate supports show up.
fn random_returns(r: &mut ChaCha8Rng, states: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> =
        (0..states).map(|_| (0..d).map(|_| (r.gen_range(-18..=30) as f64) * 0.05).collect()).collect();
    // Occasionally duplicate an asset to get a rank-deficient support.
    if d > 1 && r.gen_bool(0.15) {
        for row in rows.iter_mut() {
            row[d - 1] = row[0];
        }
    }
    rows
}

fn random_probs(r: &mut ChaCha8Rng, states: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..states).map(|_| r.gen_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

pub fn random_preset(r: &mut ChaCha8Rng, d: usize) -> Option<Preset> {
    match r.gen_range(0..5) {
        0 => None,
        1 => Some(Preset::NoShort),
        2 => Some(Preset::NoShortNoBorrow),
        3 => Some(Preset::BorrowLimit(r.gen_range(0.5..3.0))),
        _ => Some(Preset::Box {
            alpha: (0..d).map(|_| r.gen_range(0.2..2.0)).collect(),
            beta: (0..d).map(|_| r.gen_range(0.2..2.0)).collect(),
        }),
    }
}

/// Market with `d <= 3` assets and at most 6 states. Constraint families that
/// the market rejects (rows leaving the support span) fall back to none.
pub fn random_market(seed: u64) -> DiscreteMarket {
    let mut r = rng(seed);
    let d = r.gen_range(1..=3);
    let states = r.gen_range(1..=6);
    let probs = random_probs(&mut r, states);
    let returns = random_returns(&mut r, states, d);
    let set = match random_preset(&mut r, d) {
        Some(p) => preset_constraints(&p, d).unwrap(),
        None => ConstraintSet::unconstrained(d),
    };
    DiscreteMarket::new(probs.clone(), returns.clone(), set)
        .or_else(|_| DiscreteMarket::new(probs, returns, ConstraintSet::unconstrained(d)))
        .expect("unconstrained market is always valid")
}

/// Like [`random_market`] but only markets satisfying NA1.
pub fn random_na1_market(seed: u64) -> DiscreteMarket {
    (0..).map(|k| random_market(seed.wrapping_mul(1_000_003).wrapping_add(k))).find(|m| check_na1(m).unwrap().holds()).unwrap()
}

/// Market whose NA1 check fails.
pub fn random_na1_failing_market(seed: u64) -> DiscreteMarket {
    (0..).map(|k| random_market(seed.wrapping_mul(7_919).wrapping_add(k))).find(|m| !check_na1(m).unwrap().holds()).unwrap()
}

pub fn random_claim(r: &mut ChaCha8Rng, states: usize) -> Vec<f64> {
    (0..states).map(|_| if r.gen_bool(0.2) { 0.0 } else { r.gen_range(0.0..2.0) }).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Orthonormal basis of the span of `rows` by modified Gram-Schmidt.
pub fn gram_schmidt(rows: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = vec![];
    for r in rows {
        let mut v = r.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > tol {
            basis.push(v.iter().map(|x| x / n).collect());
        }
    }
    basis
}

/// Orthonormal basis of the orthogonal complement of the support span.
pub fn support_complement(market: &DiscreteMarket) -> Vec<Vec<f64>> {
    let d = market.dim();
    let span = gram_schmidt(market.returns(), 1e-9);
    let k = span.len();
    let mut all = span;
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        all.push(e);
    }
    gram_schmidt(&all, 1e-9).split_off(k)
}

/// Decides whether the allowed strategies inside the support span form a
/// bounded set by maximising each coordinate in both directions.
pub fn allowed_set_is_bounded(market: &DiscreteMarket) -> bool {
    let d = market.dim();
    let set = market.allowed_set();
    let perp = support_complement(market);
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut c = vec![0.0; d];
            c[i] = s;
            let mut lp = LinearProgram::maximize(c).with_bound(1e7);
            for h in &set.halfspaces {
                lp.le(h.a.clone(), h.b);
            }
            for p in &perp {
                lp.eq(p.clone(), 0.0);
            }
            let sol = lp.solve().unwrap();
            if sol.status == LpStatus::Unbounded || sol.objective > 1e6 {
                return false;
            }
        }
    }
    true
}

use na1lab::market::ConstraintSpec;
use na1lab::tree::{NodeSpec, TreeSpec};
use std::collections::BTreeMap;

fn node(id: &str, parent: Option<&str>, prob: f64, returns: Option<Vec<f64>>, set: Option<String>) -> NodeSpec {
    NodeSpec { id: id.into(), parent: parent.map(Into::into), prob, returns, constraints: set }
}

/// Tree of the given horizon with 1 to 3 children per node, returns on a
/// 0.05 grid and a random constraint family at each interior node.
pub fn random_tree(seed: u64, dim: usize, horizon: usize) -> TreeSpec {
    let mut r = rng(seed);
    let mut constraints = BTreeMap::new();
    let mut nodes = vec![];
    let mut frontier = vec![("r".to_string(), None::<String>, 1.0, None::<Vec<f64>>)];
    for t in 0..=horizon {
        let mut next = vec![];
        for (id, parent, prob, returns) in frontier {
            let set = if t < horizon {
                random_preset(&mut r, dim).map(|p| {
                    let name = format!("set_{id}");
                    constraints.insert(name.clone(), ConstraintSpec { halfspaces: None, preset: Some(p.tag()) });
                    name
                })
            } else {
                None
            };
            if t < horizon {
                let k = r.gen_range(1..=3);
                let probs = random_probs(&mut r, k);
                for (j, rows) in random_returns(&mut r, k, dim).into_iter().enumerate() {
                    next.push((format!("{id}.{j}"), Some(id.clone()), probs[j], Some(rows)));
                }
            }
            nodes.push(node(&id, parent.as_deref(), prob, returns, set));
        }
        frontier = next;
    }
    TreeSpec { dim, constraints, nodes }
}

/// Two-period tree whose root is `root` and whose i-th child carries `kids[i]`.
pub fn two_period_tree(root: &DiscreteMarket, kids: &[DiscreteMarket]) -> TreeSpec {
    assert_eq!(root.num_states(), kids.len());
    let mut constraints = BTreeMap::new();
    let mut nodes = vec![];
    constraints.insert("root".to_string(), ConstraintSpec::from_set(root.constraints()));
    nodes.push(node("r", None, 1.0, None, Some("root".into())));
    for (i, (k, (p, ret))) in kids.iter().zip(root.probs().iter().zip(root.returns())).enumerate() {
        let id = format!("r.{i}");
        let name = format!("set_{i}");
        constraints.insert(name.clone(), ConstraintSpec::from_set(k.constraints()));
        nodes.push(node(&id, Some("r"), *p, Some(ret.clone()), Some(name)));
        for (j, (q, rr)) in k.probs().iter().zip(k.returns()).enumerate() {
            nodes.push(node(&format!("{id}.{j}"), Some(&id), *q, Some(rr.clone()), None));
        }
    }
    TreeSpec { dim: root.dim(), constraints, nodes }
}
