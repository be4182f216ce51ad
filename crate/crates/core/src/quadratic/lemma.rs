//! Coefficient-level identities: `x^T theta(x) = 0` forces `theta = 0`, and
//! the divisibility system behind the exclusion of non-parabolic,
//! non-conical quadrics.

use nalgebra::{DMatrix, DVector};

use super::poly::Poly;
use crate::affine_core::{AffineMatrixField, QuadraticForm};
use crate::linalg;

/// Number of free parameters of a symmetric affine `p x p` field in `p` variables.
pub fn symmetric_param_count(p: usize) -> usize {
    (p + 1) * p * (p + 1) / 2
}

/// Field with a single unit parameter set; the parameter order is
/// `(A^0, A^1, ..., A^p)`, each upper triangle row by row.
pub fn unit_field(p: usize, idx: usize) -> AffineMatrixField {
    let per = p * (p + 1) / 2;
    let (block, mut r) = (idx / per, idx % per);
    let mut m = DMatrix::zeros(p, p);
    'outer: for i in 0..p {
        for j in i..p {
            if r == 0 {
                m[(i, j)] = 1.0;
                m[(j, i)] = 1.0;
                break 'outer;
            }
            r -= 1;
        }
    }
    let mut f = AffineMatrixField::zero(p, p);
    if block == 0 {
        f.a0 = m;
    } else {
        f.a[block - 1] = m;
    }
    f
}

/// Coefficients of the `p` polynomials `(x^T theta(x))_j`, ordered by
/// component and then by monomial `x_i` (`i < p`) and `x_i x_k` (`i <= k`).
pub fn theta_zero_coefficients(theta: &AffineMatrixField) -> Vec<f64> {
    let p = theta.size();
    let mut out = Vec::with_capacity(p * (p + p * (p + 1) / 2));
    for j in 0..p {
        for i in 0..p {
            out.push(theta.a0[(i, j)]);
        }
        for i in 0..p {
            for k in i..p {
                if i == k {
                    out.push(theta.a[i][(i, j)]);
                } else {
                    out.push(theta.a[k][(i, j)] + theta.a[i][(k, j)]);
                }
            }
        }
    }
    out
}

/// True iff every coefficient of `x^T theta(x)` vanishes (to 1e-10).
pub fn verify_theta_zero_lemma(theta: &AffineMatrixField) -> bool {
    theta_zero_coefficients(theta).iter().all(|c| c.abs() <= 1e-10)
}

/// Matrix of the linear map from symmetric parameters of `theta` to the
/// coefficients of `x^T theta(x)`.
pub fn theta_zero_system(p: usize) -> DMatrix<f64> {
    let n = symmetric_param_count(p);
    let cols: Vec<DVector<f64>> = (0..n)
        .map(|k| DVector::from_vec(theta_zero_coefficients(&unit_field(p, k))))
        .collect();
    DMatrix::from_columns(&cols)
}

/// Numeric nullity of [`theta_zero_system`].
pub fn theta_zero_nullity(p: usize) -> usize {
    let m = theta_zero_system(p);
    m.ncols() - linalg::numeric_rank(&m, 1e-8)
}

/// Linear system in `(theta, w)` for `grad Phi(x) theta(x) = Phi(x) w^T`
/// with `theta` symmetric affine and `w` constant: the coefficient form of
/// tangency of `theta` to the quadric `{Phi = 0}`.
pub fn tangency_system(phi: &QuadraticForm) -> DMatrix<f64> {
    let p = phi.dim();
    let nt = symmetric_param_count(p);
    let phi_poly = Poly::from_quadratic(phi);
    let grad: Vec<Poly> = (0..p).map(|i| phi_poly.derivative(i)).collect();
    let monos = Poly::monomials_up_to(p, 2);
    let field_poly = |f: &AffineMatrixField, i: usize, j: usize| {
        let mut s = Poly::constant(p, f.a0[(i, j)]);
        for k in 0..p {
            s = &s + &(Poly::var(p, k) * f.a[k][(i, j)]);
        }
        s
    };
    let mut cols = Vec::with_capacity(nt + p);
    for idx in 0..nt {
        let f = unit_field(p, idx);
        let mut col = Vec::with_capacity(p * monos.len());
        for j in 0..p {
            let mut s = Poly::zero(p);
            for (i, g) in grad.iter().enumerate() {
                s = &s + &(g * &field_poly(&f, i, j));
            }
            col.extend(s.coefficients(&monos).iter());
        }
        cols.push(DVector::from_vec(col));
    }
    for wj in 0..p {
        let mut col = Vec::with_capacity(p * monos.len());
        for j in 0..p {
            let s = if j == wj { -&phi_poly } else { Poly::zero(p) };
            col.extend(s.coefficients(&monos).iter());
        }
        cols.push(DVector::from_vec(col));
    }
    DMatrix::from_columns(&cols)
}

/// Dimension of the space of `theta` tangent to `{Phi = 0}`.
pub fn tangency_nullity(phi: &QuadraticForm) -> usize {
    let m = tangency_system(phi);
    m.ncols() - linalg::numeric_rank(&m, 1e-8)
}
