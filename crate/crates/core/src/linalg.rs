//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest singular value.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    let mtm = m.transpose() * m;
    let eig = mtm.symmetric_eigenvalues();
    eig.iter().cloned().fold(0.0, f64::max).max(0.0).sqrt()
}

pub fn spd_inverse(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    g.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::numeric("metric is not positive definite"))
}

/// Smallest `λ` with `a v = λ g v` for symmetric `a` and SPD `g`.
pub fn min_generalized_eigen(a: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<f64> {
    let chol = g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numeric("metric is not positive definite"))?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| Error::numeric("singular Cholesky factor"))?;
    let m = sym(&(&l_inv * a * l_inv.transpose()));
    Ok(m.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Gram–Schmidt of the columns of `u` in the inner product `g`.
pub fn gram_schmidt(u: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = u.ncols();
    let mut out = u.clone();
    for i in 0..d {
        let mut v: DVector<f64> = out.column(i).into_owned();
        for j in 0..i {
            let e = out.column(j);
            let c = (e.transpose() * g * &v)[(0, 0)];
            v -= e * c;
        }
        let n2 = (v.transpose() * g * &v)[(0, 0)];
        if !(n2 > 0.0) || !n2.is_finite() {
            return Err(Error::numeric("degenerate frame in Gram-Schmidt"));
        }
        out.set_column(i, &(v / n2.sqrt()));
    }
    Ok(out)
}

/// `‖uᵀ g u − I‖` in the max-entry norm.
pub fn orthonormality_defect(u: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let m = u.transpose() * g * u;
    let d = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((m[(i, j)] - target).abs());
        }
    }
    worst
}

/// A `g`-orthonormal basis of the `g`-orthogonal complement of the unit vector `n`.
pub fn tangent_basis(n: &DVector<f64>, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = n.len();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d.saturating_sub(1));
    let gn = g * n;
    for i in 0..d {
        if basis.len() + 1 == d {
            break;
        }
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        v -= n * gn.dot(&v);
        for e in &basis {
            let c = (e.transpose() * g * &v)[(0, 0)];
            v -= e * c;
        }
        let n2 = (v.transpose() * g * &v)[(0, 0)];
        if n2 > 1e-10 {
            basis.push(v / n2.sqrt());
        }
    }
    if basis.len() + 1 != d {
        return Err(Error::numeric("could not complete tangent basis"));
    }
    Ok(DMatrix::from_columns(&basis).resize(d, d - 1, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn op_norm_of_rotation_and_scaling() {
        let r = DMatrix::from_row_slice(2, 2, &[0.0, -3.0, 3.0, 0.0]);
        assert_relative_eq!(op_norm(&r), 3.0, epsilon = 1e-12);
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -5.0]);
        assert_relative_eq!(op_norm(&d), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn generalized_eigen_of_scaled_metric() {
        let g = DMatrix::from_diagonal_element(2, 2, 4.0);
        let a = DMatrix::from_row_slice(2, 2, &[8.0, 0.0, 0.0, 12.0]);
        assert_relative_eq!(min_generalized_eigen(&a, &g).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn gram_schmidt_orthonormalizes() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let u = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.1, 1.0]);
        let e = gram_schmidt(&u, &g).unwrap();
        assert!(orthonormality_defect(&e, &g) < 1e-14);
    }

    #[test]
    fn tangent_basis_is_orthogonal_to_normal() {
        let g = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.0, 0.0, 0.0, 3.0]);
        let raw: DVector<f64> = DVector::from_vec(vec![0.3, -0.5, 1.0]);
        let len: f64 = (raw.transpose() * &g * &raw)[(0, 0)];
        let n = &raw / len.sqrt();
        let b = tangent_basis(&n, &g).unwrap();
        assert_eq!(b.ncols(), 2);
        for c in 0..2 {
            let e = b.column(c);
            assert!(((e.transpose() * &g * &n)[(0, 0)]).abs() < 1e-12);
        }
        assert!(orthonormality_defect(&b, &g) < 1e-12);
    }
}
