//! Dense linear programming by an active-set (vertex) simplex method.
//!
//! The problem is kept in inequality form `maximize c'x` subject to
//! `a_i'x <= b_i` and `a_i'x = b_i` with free variables. A working set of
//! `n` linearly independent active rows defines the current vertex, the
//! multipliers `y` solve `A_W' y = c`, and a row with a negative multiplier is
//! released (Bland's rule on both choices, so degenerate cycling cannot occur).
//! Every variable is additionally boxed by `|x_j| <= bound`; a box row carrying
//! a positive multiplier at the end means the original problem is unbounded.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use nalgebra::{DMatrix, DVector};

const FEAS_TOL: f64 = 1e-9;
const DIR_TOL: f64 = 1e-11;
const MAX_PIVOTS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Unbounded,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    /// Objective value in the caller's sense (max or min).
    pub objective: f64,
    /// One multiplier per user row, `>= 0` for inequality rows.
    ///
    /// For a maximization `c = sum_i y_i a_i` and `objective = sum_i y_i b_i`.
    /// For a minimization the same holds with `-c` and `-objective`.
    pub duals: Vec<f64>,
    pub pivots: usize,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    n: usize,
    c: Vec<f64>,
    minimize: bool,
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    eq: Vec<bool>,
    bound: f64,
}

impl LinearProgram {
    pub fn maximize(c: Vec<f64>) -> Self {
        LinearProgram { n: c.len(), c, minimize: false, rows: vec![], rhs: vec![], eq: vec![], bound: 1e9 }
    }

    pub fn minimize(c: Vec<f64>) -> Self {
        LinearProgram { minimize: true, ..Self::maximize(c) }
    }

    /// Internal box used to keep every iterate at a vertex.
    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = bound;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Adds `a'x <= b` and returns its row index.
    pub fn le(&mut self, a: Vec<f64>, b: f64) -> usize {
        self.push(a, b, false)
    }

    /// Adds `a'x >= b` (stored as `-a'x <= -b`).
    pub fn ge(&mut self, a: Vec<f64>, b: f64) -> usize {
        self.push(a.into_iter().map(|v| -v).collect(), -b, false)
    }

    pub fn eq(&mut self, a: Vec<f64>, b: f64) -> usize {
        self.push(a, b, true)
    }

    fn push(&mut self, a: Vec<f64>, b: f64, eq: bool) -> usize {
        assert_eq!(a.len(), self.n, "row length must match the number of variables");
        self.rows.push(a);
        self.rhs.push(b);
        self.eq.push(eq);
        self.rows.len() - 1
    }

    pub fn solve(&self) -> Result<LpSolution> {
        for (i, r) in self.rows.iter().enumerate() {
            if r.iter().any(|v| !v.is_finite()) || !self.rhs[i].is_finite() {
                return Err(Error::InvalidParameter(format!("LP row {i} is not finite")));
            }
        }
        if self.c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("LP objective is not finite".into()));
        }
        let sign = if self.minimize { -1.0 } else { 1.0 };
        let c: Vec<f64> = self.c.iter().map(|v| sign * v).collect();

        // Normalise rows; zero rows are checked once and dropped.
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        let mut eq = Vec::new();
        let mut origin = Vec::new();
        let mut scale = Vec::new();
        for i in 0..self.rows.len() {
            let s = norm(&self.rows[i]);
            if s == 0.0 {
                let ok = if self.eq[i] { self.rhs[i].abs() <= FEAS_TOL } else { self.rhs[i] >= -FEAS_TOL };
                if !ok {
                    return Ok(self.infeasible());
                }
                continue;
            }
            rows.push(self.rows[i].iter().map(|v| v / s).collect::<Vec<_>>());
            rhs.push(self.rhs[i] / s);
            eq.push(self.eq[i]);
            origin.push(Some(i));
            scale.push(s);
        }
        let n_user = rows.len();
        for j in 0..self.n {
            for s in [1.0, -1.0] {
                let mut a = vec![0.0; self.n];
                a[j] = s;
                rows.push(a);
                rhs.push(self.bound);
                eq.push(false);
                origin.push(None);
                scale.push(1.0);
            }
        }
        let mut pivots = 0;

        // Phase one: find a feasible point unless the origin already is one.
        let viol0 = (0..n_user)
            .map(|i| if eq[i] { rhs[i].abs() } else { (-rhs[i]).max(0.0) })
            .fold(0.0, f64::max);
        let x0 = if viol0 <= 1e-12 {
            vec![0.0; self.n]
        } else {
            let m = self.n + 1;
            let mut prows = Vec::new();
            let mut prhs = Vec::new();
            for i in 0..rows.len() {
                let is_box = origin[i].is_none();
                let mut a = rows[i].clone();
                a.push(if is_box { 0.0 } else { -1.0 });
                prows.push(a);
                prhs.push(rhs[i]);
                if eq[i] {
                    let mut a: Vec<f64> = rows[i].iter().map(|v| -v).collect();
                    a.push(-1.0);
                    prows.push(a);
                    prhs.push(-rhs[i]);
                }
            }
            let mut lo = vec![0.0; m];
            lo[self.n] = -1.0;
            prows.push(lo);
            prhs.push(0.0);
            let mut hi = vec![0.0; m];
            hi[self.n] = 1.0;
            prows.push(hi);
            prhs.push(viol0 + 1.0);
            let mut pc = vec![0.0; m];
            pc[self.n] = -1.0;
            let mut start = vec![0.0; m];
            start[self.n] = viol0;
            let peq = vec![false; prows.len()];
            let core = active_set(&prows, &prhs, &peq, &pc, start)?;
            pivots += core.pivots;
            let t = core.x[self.n];
            if t > FEAS_TOL {
                log::debug!("LP phase one ended with infeasibility {t:e}");
                return Ok(self.infeasible());
            }
            core.x[..self.n].to_vec()
        };

        let core = active_set(&rows, &rhs, &eq, &c, x0)?;
        pivots += core.pivots;
        let mut duals = vec![0.0; self.rows.len()];
        let mut unbounded = false;
        let ctol = 1e-9 * (1.0 + norm(&c));
        for (k, &i) in core.working.iter().enumerate() {
            match origin[i] {
                Some(o) => duals[o] = core.y[k] / scale[i],
                None => {
                    if core.y[k] > ctol {
                        unbounded = true;
                    }
                }
            }
        }
        let obj = dot(&c, &core.x);
        Ok(LpSolution {
            status: if unbounded { LpStatus::Unbounded } else { LpStatus::Optimal },
            objective: sign * obj,
            x: core.x,
            duals,
            pivots,
        })
    }

    fn infeasible(&self) -> LpSolution {
        LpSolution {
            status: LpStatus::Infeasible,
            x: vec![0.0; self.n],
            objective: f64::NAN,
            duals: vec![0.0; self.rows.len()],
            pivots: 0,
        }
    }
}

struct CoreResult {
    x: Vec<f64>,
    working: Vec<usize>,
    y: Vec<f64>,
    pivots: usize,
}

/// Maximises `c'x` from a feasible `x`, all rows bounded by the internal box.
fn active_set(rows: &[Vec<f64>], rhs: &[f64], eq: &[bool], c: &[f64], mut x: Vec<f64>) -> Result<CoreResult> {
    let n = c.len();
    let m = rows.len();
    let mut working: Vec<usize> = Vec::with_capacity(n);
    let mut in_w = vec![false; m];
    // Orthonormal basis of the working rows, used only while crashing.
    let mut q: Vec<Vec<f64>> = Vec::new();
    let residual = |q: &Vec<Vec<f64>>, v: &[f64]| -> Vec<f64> {
        let mut r = v.to_vec();
        for _ in 0..2 {
            for qi in q {
                let s = dot(qi, &r);
                for (a, b) in r.iter_mut().zip(qi) {
                    *a -= s * b;
                }
            }
        }
        r
    };

    for i in 0..m {
        if eq[i] {
            let r = residual(&q, &rows[i]);
            let nr = norm(&r);
            if nr > 1e-9 {
                q.push(r.iter().map(|v| v / nr).collect());
                working.push(i);
                in_w[i] = true;
            }
        }
    }

    // Crash: move inside the null space of the working rows until it is empty.
    let mut pivots = 0;
    while working.len() < n {
        pivots += 1;
        if pivots > MAX_PIVOTS {
            return Err(Error::numeric("LP crash phase did not terminate", f64::NAN));
        }
        let mut d = residual(&q, c);
        if norm(&d) <= 1e-12 * (1.0 + norm(c)) {
            let mut best = (0.0, vec![0.0; n]);
            for k in 0..n {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                let r = residual(&q, &e);
                let nr = norm(&r);
                if nr > best.0 + 1e-12 {
                    best = (nr, r);
                }
            }
            d = best.1;
        }
        let nd = norm(&d);
        for v in d.iter_mut() {
            *v /= nd;
        }
        let (t, j) = match ratio_test(rows, rhs, &in_w, &x, &d) {
            Some(b) => b,
            None => {
                for v in d.iter_mut() {
                    *v = -*v;
                }
                ratio_test(rows, rhs, &in_w, &x, &d)
                    .ok_or_else(|| Error::numeric("LP crash direction is unblocked", f64::NAN))?
            }
        };
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += t * di;
        }
        let r = residual(&q, &rows[j]);
        let nr = norm(&r);
        if nr <= 1e-12 {
            return Err(Error::numeric("LP crash added a dependent row", nr));
        }
        q.push(r.iter().map(|v| v / nr).collect());
        working.push(j);
        in_w[j] = true;
    }

    // The crash accumulates rounding along long steps; restart from the exact vertex.
    if n > 0 {
        let b = DMatrix::from_fn(n, n, |i, j| rows[working[i]][j]);
        let rhs_w = DVector::from_fn(n, |i, _| rhs[working[i]]);
        if let Some(xv) = b.lu().solve(&rhs_w) {
            x = xv.iter().cloned().collect();
        }
    }

    loop {
        let b = DMatrix::from_fn(n, n, |i, j| rows[working[i]][j]);
        let lu = b.clone().lu();
        let lut = b.transpose().lu();
        let y = lut
            .solve(&DVector::from_column_slice(c))
            .ok_or_else(|| Error::numeric("singular LP basis", f64::NAN))?;
        let ytol = 1e-11 * (1.0 + norm(c));
        let leave = (0..n)
            .filter(|&k| !eq[working[k]] && y[k] < -ytol)
            .min_by_key(|&k| working[k]);
        let Some(k) = leave else {
            return Ok(CoreResult { x, working, y: y.iter().cloned().collect(), pivots });
        };
        pivots += 1;
        if pivots > MAX_PIVOTS {
            return Err(Error::numeric("LP pivot limit reached", f64::NAN));
        }
        let mut e = DVector::zeros(n);
        e[k] = -1.0;
        let dv = lu.solve(&e).ok_or_else(|| Error::numeric("singular LP basis", f64::NAN))?;
        let nd = dv.norm();
        let d: Vec<f64> = dv.iter().map(|v| v / nd).collect();
        let Some((_, j)) = ratio_test(rows, rhs, &in_w, &x, &d) else {
            return Err(Error::numeric("LP edge is unblocked despite the box", f64::NAN));
        };
        in_w[working[k]] = false;
        working[k] = j;
        in_w[j] = true;
        let b = DMatrix::from_fn(n, n, |i, jj| rows[working[i]][jj]);
        let rhs_w = DVector::from_fn(n, |i, _| rhs[working[i]]);
        let xv = b.lu().solve(&rhs_w).ok_or_else(|| Error::numeric("singular LP basis", f64::NAN))?;
        x = xv.iter().cloned().collect();
    }
}

/// Longest feasible step along `d`; ties go to the smallest row index.
fn ratio_test(rows: &[Vec<f64>], rhs: &[f64], in_w: &[bool], x: &[f64], d: &[f64]) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    let mut cands: Vec<(f64, usize)> = Vec::new();
    for j in 0..rows.len() {
        if in_w[j] {
            continue;
        }
        let ad = dot(&rows[j], d);
        if ad > DIR_TOL {
            let t = ((rhs[j] - dot(&rows[j], x)) / ad).max(0.0);
            cands.push((t, j));
            if best.map_or(true, |(bt, _)| t < bt) {
                best = Some((t, j));
            }
        }
    }
    let (tmin, _) = best?;
    let tie = tmin + 1e-12 * (1.0 + tmin);
    cands.into_iter().filter(|&(t, _)| t <= tie).min_by_key(|&(_, j)| j).map(|(_, j)| (tmin, j))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_maximisation() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18, x,y >= 0 -> (2,6), 36
        let mut lp = LinearProgram::maximize(vec![3.0, 5.0]);
        lp.le(vec![1.0, 0.0], 4.0);
        lp.le(vec![0.0, 2.0], 12.0);
        lp.le(vec![3.0, 2.0], 18.0);
        lp.ge(vec![1.0, 0.0], 0.0);
        lp.ge(vec![0.0, 1.0], 0.0);
        let s = lp.solve().unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 36.0).abs() < 1e-12);
        assert!((s.x[0] - 2.0).abs() < 1e-12 && (s.x[1] - 6.0).abs() < 1e-12);
        // strong duality: objective = sum y b, y >= 0
        let yb = s.duals[1] * 12.0 + s.duals[2] * 18.0;
        assert!((yb - 36.0).abs() < 1e-12);
        assert!((s.duals[1] - 1.5).abs() < 1e-12 && (s.duals[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn phase_one_and_minimisation() {
        // min x + y, x + y >= 2, x - y = 1 -> x = 1.5, y = 0.5
        let mut lp = LinearProgram::minimize(vec![1.0, 1.0]);
        lp.ge(vec![1.0, 1.0], 2.0);
        lp.eq(vec![1.0, -1.0], 1.0);
        let s = lp.solve().unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 2.0).abs() < 1e-12);
        assert!((s.x[0] - 1.5).abs() < 1e-12);
        assert!((s.duals[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LinearProgram::maximize(vec![1.0]);
        lp.le(vec![1.0], -1.0);
        lp.ge(vec![1.0], 1.0);
        assert_eq!(lp.solve().unwrap().status, LpStatus::Infeasible);
        let mut lp = LinearProgram::maximize(vec![1.0, 0.0]);
        lp.ge(vec![1.0, -1.0], 0.0);
        assert_eq!(lp.solve().unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn degenerate_vertex_does_not_cycle() {
        // Classic Beale example, degenerate at the origin.
        let mut lp = LinearProgram::maximize(vec![0.75, -150.0, 0.02, -6.0]);
        lp.le(vec![0.25, -60.0, -0.04, 9.0], 0.0);
        lp.le(vec![0.5, -90.0, -0.02, 3.0], 0.0);
        lp.le(vec![0.0, 0.0, 1.0, 0.0], 1.0);
        for j in 0..4 {
            let mut a = vec![0.0; 4];
            a[j] = 1.0;
            lp.ge(a, 0.0);
        }
        let s = lp.solve().unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 0.05).abs() < 1e-10);
    }

    #[test]
    fn feasible_after_a_long_crash() {
        // The crash walks to the internal box before reaching the optimum.
        let r = [1.15, 1.0, 0.95];
        let xi = [1.6371123946469934, 0.5113024991108954, 0.48951068736194303];
        let mut lp = LinearProgram::minimize(vec![1.0, 0.0]);
        for w in 0..3 {
            lp.le(vec![-1.0, -r[w]], -xi[w]);
        }
        for (a, b) in [(1.0, 1.9189121196402477), (-1.0, 1.4396611864902071), (-1.15, 1.0), (-1.0, 1.0), (-0.95, 1.0)] {
            lp.le(vec![-b, a], 0.0);
        }
        lp.le(vec![-1.0, 0.0], 0.0);
        let s = lp.solve().unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        let v = xi[0] / (1.0 + 1.15 * 1.9189121196402477);
        assert!((s.objective - v).abs() < 1e-12);
    }
}
