//! Projected Newton method for smooth convex minimisation over a polyhedron.
//!
//! Each step minimises the local quadratic model over the polyhedron (a QP in
//! the Hessian metric) and is followed by Armijo backtracking. Convergence is
//! measured by the Euclidean projected-gradient norm `|u - P(u - grad f(u))|`.

use crate::error::Result;
use crate::linalg::{dot, norm};
use crate::qp::{project, solve_qp};
use nalgebra::DMatrix;

pub(crate) trait Objective {
    /// `None` outside the domain of the function.
    fn value(&self, u: &[f64]) -> Option<f64>;
    fn gradient_hessian(&self, u: &[f64]) -> (Vec<f64>, DMatrix<f64>);
}

#[derive(Debug, Clone)]
pub(crate) struct Polyhedron {
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct MinimizeReport {
    pub u: Vec<f64>,
    pub pg_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub active: Vec<usize>,
}

pub(crate) fn projected_gradient_norm(poly: &Polyhedron, u: &[f64], g: &[f64]) -> Result<f64> {
    // Projection of -g onto the polyhedron shifted to the origin at u.
    let slack = slacks(poly, u);
    let y: Vec<f64> = g.iter().map(|v| -v).collect();
    let p = project(&y, &poly.rows, &slack, vec![0.0; u.len()])?;
    Ok(norm(&p))
}

/// `b - Au`, clipped at zero so that the step origin is feasible.
fn slacks(poly: &Polyhedron, u: &[f64]) -> Vec<f64> {
    poly.rows.iter().zip(&poly.rhs).map(|(a, b)| (b - dot(a, u)).max(0.0)).collect()
}

pub(crate) fn active_rows(poly: &Polyhedron, u: &[f64], tol: f64) -> Vec<usize> {
    (0..poly.rows.len())
        .filter(|&i| poly.rhs[i] - dot(&poly.rows[i], u) <= tol * (1.0 + norm(&poly.rows[i])))
        .collect()
}

pub(crate) fn projected_newton<O: Objective>(
    obj: &O,
    poly: &Polyhedron,
    u0: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<MinimizeReport> {
    let n = u0.len();
    let mut u = u0;
    let mut f = obj.value(&u).ok_or_else(|| crate::error::Error::InvalidParameter("start point outside domain".into()))?;
    let mut pg = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let (g, h) = obj.gradient_hessian(&u);
        pg = projected_gradient_norm(poly, &u, &g)?;
        if pg <= tol {
            converged = true;
            break;
        }
        iterations += 1;
        let hmax = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max);
        let mut moved = false;
        for metric in 0..2 {
            let hm = if metric == 0 {
                &h + DMatrix::identity(n, n) * (1e-10 * (1.0 + hmax))
            } else {
                DMatrix::identity(n, n) * (1.0 + hmax)
            };
            // The subproblem is posed in the step s = x - u, which keeps the
            // small final steps accurate when |u| is large.
            let s = match solve_qp(&hm, &g, &poly.rows, &slacks(poly, &u), vec![0.0; n]) {
                Ok(sol) => sol.x,
                Err(e) => {
                    log::debug!("projected Newton subproblem failed: {e}");
                    continue;
                }
            };
            let slope = dot(&g, &s);
            if !(slope < 0.0) {
                continue;
            }
            let mut t = 1.0;
            for _ in 0..80 {
                let trial: Vec<f64> = u.iter().zip(&s).map(|(a, b)| a + t * b).collect();
                if let Some(ft) = obj.value(&trial) {
                    // A full step is also accepted when the change is below rounding noise.
                    let noise = if t == 1.0 { 1e-13 * (1.0 + f.abs()) } else { 0.0 };
                    if ft <= f + 1e-4 * t * slope + noise {
                        u = trial;
                        f = ft;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if moved {
                break;
            }
        }
        if !moved {
            log::debug!("projected Newton stalled at pg = {pg:e}");
            break;
        }
    }
    if !converged {
        let (g, _) = obj.gradient_hessian(&u);
        pg = projected_gradient_norm(poly, &u, &g)?;
        converged = pg <= tol;
    }
    let active = active_rows(poly, &u, 1e-9);
    Ok(MinimizeReport { u, pg_norm: pg, iterations, converged, active })
}
