//! Conical state spaces `{x_1 > |y|}` with `x = (x_1, y)` and `p = q`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::lemma::{symmetric_param_count, unit_field};
use super::AffineMap;
use crate::affine_core::{AffineMatrixField, AffineVectorField};
use crate::error::{Error, Result};
use crate::linalg;

/// `zeta(x) = [[x_1, y^T], [y, x_1 I]]`.
pub fn cone_zeta(q: usize) -> AffineMatrixField {
    let mut f = AffineMatrixField::zero(q, q);
    for i in 0..q {
        f.a[0][(i, i)] = 1.0;
    }
    for i in 1..q {
        f.a[i][(0, i)] = 1.0;
        f.a[i][(i, 0)] = 1.0;
    }
    f
}

/// `rho(i)` for `1 <= i < q`: row and column `i` equal `(x_1, y^T)`, the
/// `(0, 0)` entry is `y_i`, the other diagonal entries are `-y_i`.
pub fn cone_rho(q: usize, i: usize) -> AffineMatrixField {
    assert!(i >= 1 && i < q, "rho index out of range");
    let mut f = AffineMatrixField::zero(q, q);
    f.a[0][(i, 0)] = 1.0;
    f.a[0][(0, i)] = 1.0;
    for k in 1..q {
        if k != i {
            f.a[k][(i, k)] = 1.0;
            f.a[k][(k, i)] = 1.0;
        }
    }
    f.a[i][(i, i)] = 1.0;
    f.a[i][(0, 0)] = 1.0;
    for j in 1..q {
        if j != i {
            f.a[i][(j, j)] = -1.0;
        }
    }
    f
}

pub fn conical_basis(q: usize) -> Result<Vec<AffineMatrixField>> {
    if q < 2 {
        return Err(Error::DimensionMismatch(format!("cone rank q = {q} must be at least 2")));
    }
    Ok(std::iter::once(cone_zeta(q)).chain((1..q).map(|i| cone_rho(q, i))).collect())
}

fn pairing(f: &AffineMatrixField, x: &[f64]) -> DVector<f64> {
    let mut l = DVector::from_row_slice(x);
    for v in l.iter_mut().skip(1) {
        *v = -*v;
    }
    f.eval(x).transpose() * l
}

/// Deterministic points of the double cone `{x_1^2 = y^T y}`.
pub fn cone_boundary_points(q: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let mut x: Vec<f64> = (0..q).map(|_| rng.random_range(-2.0..2.0)).collect();
            let r = x[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
            x[0] = if k % 2 == 0 { r } else { -r };
            x
        })
        .collect()
}

/// Dimension of the space of symmetric affine `q x q` fields whose columns
/// are annihilated by `(x_1, -y^T)` on the double cone, from pointwise
/// evaluation at enough boundary points.
pub fn conical_space_dimension(q: usize) -> Result<usize> {
    if q < 2 {
        return Err(Error::DimensionMismatch(format!("cone rank q = {q} must be at least 2")));
    }
    let npts = 10 * (q + 1) * (q + 2) / 2;
    let pts = cone_boundary_points(q, npts, 0x0c0e);
    let cols: Vec<DVector<f64>> = (0..symmetric_param_count(q))
        .map(|k| {
            let f = unit_field(q, k);
            let mut v = Vec::with_capacity(q * npts);
            for x in &pts {
                v.extend(pairing(&f, x).iter());
            }
            DVector::from_vec(v)
        })
        .collect();
    let m = DMatrix::from_columns(&cols);
    Ok(m.ncols() - linalg::numeric_rank(&m, 1e-8))
}

#[derive(Debug, Clone, Serialize)]
pub struct ConicalDecomposition {
    pub q: usize,
    pub coeff_zeta: f64,
    pub coeff_rho: Vec<f64>,
    pub residual: f64,
}

impl ConicalDecomposition {
    pub fn reconstruct(&self) -> AffineMatrixField {
        let mut f = cone_zeta(self.q);
        scale_field(&mut f, self.coeff_zeta);
        for (i, c) in self.coeff_rho.iter().enumerate() {
            let r = cone_rho(self.q, i + 1);
            f.a0 += &r.a0 * *c;
            for k in 0..self.q {
                f.a[k] += &r.a[k] * *c;
            }
        }
        f
    }

    /// `theta = zeta` exactly, the setting of the open-cone conditions.
    pub fn is_pure_zeta(&self) -> bool {
        (self.coeff_zeta - 1.0).abs() <= 1e-9 && self.coeff_rho.iter().all(|c| c.abs() <= 1e-9)
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "kind": "conical",
            "q": self.q,
            "coeff_zeta": self.coeff_zeta,
            "coeff_rho": self.coeff_rho,
            "residual": self.residual,
        })
    }
}

fn scale_field(f: &mut AffineMatrixField, s: f64) {
    f.a0 *= s;
    for m in &mut f.a {
        *m *= s;
    }
}

fn flatten(f: &AffineMatrixField) -> DVector<f64> {
    let mut v = f.a0.as_slice().to_vec();
    for m in &f.a {
        v.extend_from_slice(m.as_slice());
    }
    DVector::from_vec(v)
}

pub fn conical_theta_decompose(theta: &AffineMatrixField, q: usize) -> Result<ConicalDecomposition> {
    if theta.size() != q || theta.nvars() != q {
        return Err(Error::PreconditionFailed(format!(
            "conical models are supported only with p = q (got p = {}, q = {q})",
            theta.size()
        )));
    }
    let basis = conical_basis(q)?;
    let g = DMatrix::from_columns(&basis.iter().map(flatten).collect::<Vec<_>>());
    let target = flatten(theta);
    let w = linalg::lstsq(&g, &target);
    let residual = (&g * &w - &target).amax();
    if residual > 1e-8 * (1.0 + theta.coeff_scale()) {
        return Err(Error::NotInSpan(residual));
    }
    Ok(ConicalDecomposition {
        q,
        coeff_zeta: w[0],
        coeff_rho: w.as_slice()[1..].to_vec(),
        residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConeAdmissibilityReport {
    /// `max |a_{1Q} - a_{Q1}^T|`.
    pub symmetry_violation: f64,
    pub symmetry_ok: bool,
    /// Smallest eigenvalue of `a_11 I - sym(a_QQ)`.
    pub min_eigenvalue: f64,
    pub psd_ok: bool,
    /// `b_1 - p/2 - |b_Q|`.
    pub b_margin: f64,
    pub b_ok: bool,
}

impl ConeAdmissibilityReport {
    pub fn admissible(&self) -> bool {
        self.symmetry_ok && self.psd_ok && self.b_ok
    }
}

pub fn check_cone_admissibility(drift: &AffineVectorField, p: usize, q: usize) -> Result<ConeAdmissibilityReport> {
    if drift.dim() != p || q != p {
        return Err(Error::PreconditionFailed(format!(
            "conical models are supported only with p = q (got p = {p}, q = {q})"
        )));
    }
    let a = &drift.a;
    let b = &drift.b;
    let scale = 1.0 + a.amax();
    let sym = (1..q).fold(0.0_f64, |m, i| m.max((a[(0, i)] - a[(i, 0)]).abs()));
    let aqq = a.view((1, 1), (q - 1, q - 1)).into_owned();
    let m = DMatrix::identity(q - 1, q - 1) * a[(0, 0)] - linalg::sym_part(&aqq);
    let min_eig = linalg::min_eigenvalue(&m);
    let bq = b.rows(1, q - 1).norm();
    let b_margin = b[0] - 0.5 * p as f64 - bq;
    Ok(ConeAdmissibilityReport {
        symmetry_violation: sym,
        symmetry_ok: sym <= 1e-12 * scale,
        min_eigenvalue: min_eig,
        psd_ok: min_eig >= -1e-9,
        b_margin,
        b_ok: b_margin >= 0.0,
    })
}

/// `sigma = zeta^{1/2}` in closed form: eigenvalues `x_1 +- |y|` on
/// `(1, +-y/|y|)` and `x_1` on the rest.
#[derive(Debug, Clone)]
pub struct ConeRoot {
    pub q: usize,
    /// Map `Y = l X + ell` into canonical cone coordinates.
    pub outer: Option<AffineMap>,
}

impl ConeRoot {
    pub fn new(q: usize) -> Self {
        Self { q, outer: None }
    }

    pub fn dim(&self) -> usize {
        self.q
    }

    pub fn sigma_x(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.outer {
            None => self.sigma(x),
            Some(m) => m.pull_sigma(&self.sigma(&m.forward(x))),
        }
    }

    pub fn project_x(&self, x: &mut [f64]) {
        match &self.outer {
            None => self.project(x),
            Some(m) => {
                let mut y = m.forward(x);
                self.project(&mut y);
                x.copy_from_slice(&m.backward(&y));
            }
        }
    }

    pub fn sigma(&self, x: &[f64]) -> DMatrix<f64> {
        let q = self.q;
        let r = x[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut u = DVector::zeros(q);
        if r > 0.0 {
            for i in 1..q {
                u[i] = x[i] / r;
            }
        } else {
            u[1] = 1.0;
        }
        let sp = (x[0] + r).max(0.0).sqrt();
        let sm = (x[0] - r).max(0.0).sqrt();
        let s0 = x[0].max(0.0).sqrt();
        let mut e0 = DVector::zeros(q);
        e0[0] = 1.0;
        let vp = (&e0 + &u) * std::f64::consts::FRAC_1_SQRT_2;
        let vm = (&e0 - &u) * std::f64::consts::FRAC_1_SQRT_2;
        let pp = &vp * vp.transpose();
        let pm = &vm * vm.transpose();
        let rest = DMatrix::identity(q, q) - &pp - &pm;
        pp * sp + pm * sm + rest * s0
    }

    pub fn project(&self, x: &mut [f64]) {
        let r = x[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
        let floor = r * (1.0 + 1e-12);
        if x[0] < floor {
            x[0] = floor;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::lemma::tangency_nullity;
    use super::*;
    use crate::affine_core::QuadraticForm;

    #[test]
    fn example_matrices_q3() {
        let x = [1.0, 2.0, 3.0];
        let z = cone_zeta(3).eval(&x);
        assert_eq!(z, DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 1.0, 0.0, 3.0, 0.0, 1.0]));
        // rho(1) = [[y1, x1, y2], [x1, y1, 0], [y2, 0, -y1]]
        let r1 = cone_rho(3, 1).eval(&x);
        assert_eq!(r1, DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 3.0, 0.0, 3.0, -2.0]));
        let r2 = cone_rho(3, 2).eval(&x);
        assert_eq!(r2, DMatrix::from_row_slice(3, 3, &[3.0, 0.0, 1.0, 0.0, -3.0, 2.0, 1.0, 2.0, 3.0]));
    }

    #[test]
    fn basis_annihilation() {
        for q in 2..=5 {
            let basis = conical_basis(q).unwrap();
            assert_eq!(basis.len(), q);
            for x in cone_boundary_points(q, 100, 4) {
                for f in &basis {
                    assert!(pairing(f, &x).amax() < 1e-12);
                }
            }
        }
        for f in conical_basis(3).unwrap() {
            assert!(pairing(&f, &[1.0, 0.6, 0.8]).amax() < 1e-12);
        }
    }

    #[test]
    fn space_dimension_is_q() {
        for q in 2..=6 {
            let basis = conical_basis(q).unwrap();
            let g = DMatrix::from_columns(&basis.iter().map(flatten).collect::<Vec<_>>());
            assert_eq!(linalg::numeric_rank(&g, 1e-8), q);
            assert_eq!(conical_space_dimension(q).unwrap(), q, "q = {q}");
        }
    }

    #[test]
    fn space_dimension_matches_tangency_oracle() {
        // Coefficient-level oracle: grad Phi theta = Phi w^T for the cone.
        for q in 2..=4 {
            let mut d = vec![-1.0; q];
            d[0] = 1.0;
            let phi = QuadraticForm::new(DMatrix::from_diagonal(&DVector::from_vec(d)), DVector::zeros(q), 0.0).unwrap();
            assert_eq!(tangency_nullity(&phi), conical_space_dimension(q).unwrap());
        }
    }

    #[test]
    fn decompose_examples() {
        let d = conical_theta_decompose(&cone_zeta(3), 3).unwrap();
        assert!((d.coeff_zeta - 1.0).abs() < 1e-12 && d.coeff_rho.iter().all(|c| c.abs() < 1e-12));
        assert!(d.is_pure_zeta());
        let mut f = cone_zeta(3);
        let r = cone_rho(3, 1);
        f.a0 += &r.a0;
        for k in 0..3 {
            f.a[k] += &r.a[k];
        }
        let d = conical_theta_decompose(&f, 3).unwrap();
        assert!((d.coeff_zeta - 1.0).abs() < 1e-12);
        assert!((d.coeff_rho[0] - 1.0).abs() < 1e-12 && d.coeff_rho[1].abs() < 1e-12);
        assert!(d.reconstruct().coeff_distance(&f) < 1e-12);
        let mut diag = AffineMatrixField::zero(3, 3);
        for k in 0..3 {
            diag.a[k][(k, k)] = 1.0;
        }
        assert!(matches!(conical_theta_decompose(&diag, 3), Err(Error::NotInSpan(_))));
    }

    #[test]
    fn combinations_are_psd_on_cone() {
        let mut f = cone_zeta(3);
        let r = cone_rho(3, 2);
        f.a0 += &r.a0;
        for k in 0..3 {
            f.a[k] += &r.a[k];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x1 = (y[0] * y[0] + y[1] * y[1]).sqrt() + rng.random_range(0.0..1.0);
            assert!(linalg::is_psd(&f.eval(&[x1, y[0], y[1]]), 1e-9));
        }
    }

    #[test]
    fn admissibility_examples() {
        let drift = |a: DMatrix<f64>, b: &[f64]| AffineVectorField::new(a, DVector::from_row_slice(b)).unwrap();
        let r = check_cone_admissibility(&drift(DMatrix::zeros(3, 3), &[2.0, 0.0, 0.0]), 3, 3).unwrap();
        assert!(r.admissible());
        assert!((r.b_margin - 0.5).abs() < 1e-15);
        let r = check_cone_admissibility(&drift(DMatrix::zeros(3, 3), &[1.4, 0.0, 0.0]), 3, 3).unwrap();
        assert!(!r.b_ok && r.symmetry_ok && r.psd_ok);
        let mut a = DMatrix::zeros(3, 3);
        a[(0, 1)] = 1.0;
        a[(2, 0)] = 1.0;
        let r = check_cone_admissibility(&drift(a, &[2.0, 0.0, 0.0]), 3, 3).unwrap();
        assert!(!r.symmetry_ok);
        assert!(check_cone_admissibility(&AffineVectorField::zero(4), 4, 3).is_err());
    }

    #[test]
    fn closed_form_root() {
        let root = ConeRoot::new(3);
        let zeta = cone_zeta(3);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x = [(y[0] * y[0] + y[1] * y[1]).sqrt() + rng.random_range(0.0..2.0), y[0], y[1]];
            let s = root.sigma(&x);
            assert!(linalg::max_abs(&(&s - s.transpose())) < 1e-12);
            assert!(linalg::max_abs(&(&s * &s - zeta.eval(&x))) < 1e-10);
        }
        let mut x = [0.5, 1.0, 0.0];
        root.project(&mut x);
        assert!(x[0] >= 1.0);
    }
}
