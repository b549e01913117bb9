//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn rows_to_matrix(rows: &[Vec<f64>], ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

/// Orthonormal basis (as columns) of the span of `rows`, each of length `dim`.
///
/// Singular values below `rel_tol` times the largest one are treated as zero.
pub fn row_space_basis(rows: &[Vec<f64>], dim: usize, rel_tol: f64) -> DMatrix<f64> {
    if rows.is_empty() || dim == 0 {
        return DMatrix::zeros(dim, 0);
    }
    let m = rows_to_matrix(rows, dim);
    // The row space of M is the column space of M^T M; use the SVD of M^T.
    let svd = m.transpose().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return DMatrix::zeros(dim, 0);
    }
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > rel_tol * smax)
        .collect();
    DMatrix::from_fn(dim, keep.len(), |i, j| u[(i, keep[j])])
}

/// Orthonormal basis of the null space of the matrix whose rows are `rows`.
pub fn null_space_basis(rows: &[Vec<f64>], dim: usize, rel_tol: f64) -> DMatrix<f64> {
    let range = row_space_basis(rows, dim, rel_tol);
    complement_basis(&range)
}

/// Orthonormal basis of the orthogonal complement of the columns of `q`,
/// which must already be orthonormal.
pub fn complement_basis(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    let k = q.ncols();
    if k == 0 {
        return DMatrix::identity(n, n);
    }
    if k >= n {
        return DMatrix::zeros(n, 0);
    }
    // Complete the columns of q by Gram-Schmidt on the coordinate vectors,
    // taking at each step the one with the largest remaining component.
    let mut basis: Vec<DVector<f64>> = (0..k).map(|j| q.column(j).into_owned()).collect();
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(n - k);
    while out.len() < n - k {
        let mut best: Option<DVector<f64>> = None;
        for i in 0..n {
            let mut v = DVector::zeros(n);
            v[i] = 1.0;
            for _ in 0..2 {
                for b in &basis {
                    let c = b.dot(&v);
                    v -= b * c;
                }
            }
            if best.as_ref().map_or(true, |w| v.norm() > w.norm()) {
                best = Some(v);
            }
        }
        let v = best.expect("n > 0");
        let v = &v / v.norm();
        basis.push(v.clone());
        out.push(v);
    }
    DMatrix::from_columns(&out)
}

pub fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().cloned().collect()
}

/// Numerically stable log of a sum of exponentials.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_space_of_rank_one_rows() {
        let b = row_space_basis(&[vec![1.0, 1.0], vec![2.0, 2.0]], 2, 1e-10);
        assert_eq!(b.ncols(), 1);
        assert!((b[(0, 0)].abs() - 0.5f64.sqrt()).abs() < 1e-14);
        let n = null_space_basis(&[vec![1.0, 1.0]], 2, 1e-10);
        assert_eq!(n.ncols(), 1);
        assert!((n[(0, 0)] + n[(1, 0)]).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let x = [0.1, -2.0, 3.0];
        let naive: f64 = x.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&x) - naive).abs() < 1e-14);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn complement_is_orthogonal_to_the_columns() {
        for (n, cols) in [(2, vec![vec![0.6, 0.8]]), (3, vec![vec![0.0, 0.6, 0.8], vec![1.0, 0.0, 0.0]]), (3, vec![vec![1.0, 0.0, 0.0]])] {
            let q = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
            let z = complement_basis(&q);
            assert_eq!(z.ncols(), n - cols.len());
            assert!((q.transpose() * &z).amax() < 1e-15);
            assert!((z.transpose() * &z - DMatrix::identity(z.ncols(), z.ncols())).amax() < 1e-15);
        }
    }
}
