//! Strictly convex quadratic programs `min 1/2 x'Hx + g'x` s.t. `Ax <= b`,
//! solved by a primal active-set method started from a feasible point.

use crate::error::{Error, Result};
use crate::linalg::{complement_basis, dot, norm};
use nalgebra::{DMatrix, DVector};

const MAX_ITER: usize = 20_000;

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Rows in the final working set.
    pub active: Vec<usize>,
    pub iterations: usize,
}

/// `h` must be symmetric positive definite and `x0` feasible.
pub fn solve_qp(h: &DMatrix<f64>, g: &[f64], rows: &[Vec<f64>], rhs: &[f64], x0: Vec<f64>) -> Result<QpSolution> {
    let n = g.len();
    let mut x = x0;
    let scale: Vec<f64> = rows.iter().map(|r| norm(r).max(f64::MIN_POSITIVE)).collect();
    let a: Vec<Vec<f64>> = rows.iter().zip(&scale).map(|(r, s)| r.iter().map(|v| v / s).collect()).collect();
    let b: Vec<f64> = rhs.iter().zip(&scale).map(|(v, s)| v / s).collect();

    let mut working: Vec<usize> = Vec::new();
    let mut q: Vec<Vec<f64>> = Vec::new();
    for i in 0..a.len() {
        if working.len() == n {
            break;
        }
        if scale[i] > 1e-300 && b[i] - dot(&a[i], &x) <= 1e-10 {
            if let Some(qi) = orth(&q, &a[i]) {
                q.push(qi);
                working.push(i);
            }
        }
    }

    let hv = |v: &[f64]| -> Vec<f64> { (h * DVector::from_column_slice(v)).iter().cloned().collect() };
    // After a full unblocked step x minimises over the working set; a fresh
    // step would only be rounding noise, and following it can oscillate.
    let mut at_subspace_min = false;
    for it in 0..MAX_ITER {
        let grad: Vec<f64> = hv(&x).iter().zip(g).map(|(p, q)| p + q).collect();
        let qm = DMatrix::from_fn(n, q.len(), |i, j| q[j][i]);
        let z = complement_basis(&qm);
        let mut p = vec![0.0; n];
        if z.ncols() > 0 && !at_subspace_min {
            let rh = z.transpose() * h * &z;
            let rg = -(z.transpose() * DVector::from_column_slice(&grad));
            let v = rh
                .clone()
                .cholesky()
                .map(|c| c.solve(&rg))
                .or_else(|| rh.lu().solve(&rg))
                .ok_or_else(|| Error::numeric("QP reduced Hessian is singular", f64::NAN))?;
            p = (z * v).iter().cloned().collect();
        }
        let xs = 1.0 + norm(&x);
        if norm(&p) <= 1e-13 * xs {
            if working.is_empty() {
                return Ok(QpSolution { x, active: working, iterations: it });
            }
            let aw = DMatrix::from_fn(working.len(), n, |i, j| a[working[i]][j]);
            let rhs_l = -(&aw * DVector::from_column_slice(&grad));
            let lam = (&aw * aw.transpose())
                .lu()
                .solve(&rhs_l)
                .ok_or_else(|| Error::numeric("QP working set is dependent", f64::NAN))?;
            let tol = 1e-12 * (1.0 + norm(&grad));
            let (k, lmin) = lam.iter().enumerate().fold((0, f64::INFINITY), |acc, (k, &l)| if l < acc.1 { (k, l) } else { acc });
            if lmin >= -tol {
                return Ok(QpSolution { x, active: working, iterations: it });
            }
            working.remove(k);
            q = rebuild(&a, &working);
            at_subspace_min = false;
            continue;
        }
        let np = norm(&p);
        let mut alpha = 1.0;
        let mut block = None;
        for j in 0..a.len() {
            if working.contains(&j) {
                continue;
            }
            let ap = dot(&a[j], &p);
            if ap > 1e-14 * np {
                let t = ((b[j] - dot(&a[j], &x)) / ap).max(0.0);
                if t < alpha {
                    alpha = t;
                    block = Some(j);
                }
            }
        }
        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += alpha * pi;
        }
        at_subspace_min = block.is_none();
        if let Some(j) = block {
            match orth(&q, &a[j]) {
                Some(qj) => {
                    q.push(qj);
                    working.push(j);
                }
                None => return Err(Error::numeric("QP blocking row is dependent", f64::NAN)),
            }
        }
    }
    Err(Error::numeric("QP iteration limit reached", f64::NAN))
}

fn orth(q: &[Vec<f64>], v: &[f64]) -> Option<Vec<f64>> {
    let mut r = v.to_vec();
    for _ in 0..2 {
        for qi in q {
            let s = dot(qi, &r);
            for (a, b) in r.iter_mut().zip(qi) {
                *a -= s * b;
            }
        }
    }
    let nr = norm(&r);
    (nr > 1e-9).then(|| r.iter().map(|v| v / nr).collect())
}

fn rebuild(a: &[Vec<f64>], working: &[usize]) -> Vec<Vec<f64>> {
    let mut q = Vec::new();
    for &i in working {
        if let Some(v) = orth(&q, &a[i]) {
            q.push(v);
        }
    }
    q
}

/// Euclidean projection of `y` onto `{x : Ax <= b}` starting from feasible `x0`.
pub fn project(y: &[f64], rows: &[Vec<f64>], rhs: &[f64], x0: Vec<f64>) -> Result<Vec<f64>> {
    let n = y.len();
    let g: Vec<f64> = y.iter().map(|v| -v).collect();
    Ok(solve_qp(&DMatrix::identity(n, n), &g, rows, rhs, x0)?.x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_onto_simplex_corner() {
        // project (2, 2) onto x + y <= 1, x >= 0, y >= 0 -> (0.5, 0.5)
        let rows = vec![vec![1.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]];
        let rhs = vec![1.0, 0.0, 0.0];
        let x = project(&[2.0, 2.0], &rows, &rhs, vec![0.0, 0.0]).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-14 && (x[1] - 0.5).abs() < 1e-14);
        let x = project(&[3.0, -1.0], &rows, &rhs, vec![0.0, 0.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && x[1].abs() < 1e-14);
    }

    #[test]
    fn interior_minimum_is_found() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = [-1.0, -1.0];
        let rows = vec![vec![1.0, 0.0]];
        let s = solve_qp(&h, &g, &rows, &[10.0], vec![0.0, 0.0]).unwrap();
        // stationarity H x = -g
        let r = &h * DVector::from_column_slice(&s.x) + DVector::from_column_slice(&g);
        assert!(r.norm() < 1e-12);
        assert!(s.active.is_empty());
    }
}
