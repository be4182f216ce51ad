//! Parabolic state spaces `{x_1 >= y^T y}` in canonical coordinates
//! `x = (x_1, y, z)` with `y` of length `q - 1`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::poly::Poly;
use super::AffineMap;
use crate::affine_core::{matrix_to_rows, AffineMatrixField, AffineVectorField, ModelSpec, QuadraticSpace, StateSpace};
use crate::error::{Error, Result};
use crate::linalg;

/// Affine `R^q`-valued function `x -> c0 + c x`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineColumn {
    pub c0: DVector<f64>,
    pub c: DMatrix<f64>,
}

impl AffineColumn {
    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        &self.c0 + &self.c * DVector::from_row_slice(x)
    }

    /// `c0` followed by the columns of `c`.
    pub fn coeffs(&self) -> DVector<f64> {
        let mut v = self.c0.as_slice().to_vec();
        v.extend_from_slice(self.c.as_slice());
        DVector::from_vec(v)
    }
}

pub fn eta_count(q: usize) -> usize {
    (q - 1) * (q - 2) / 2
}

/// Columns of `zeta` followed by the columns `(0; T_ij(y))` of `eta`.
#[derive(Debug, Clone)]
pub struct ParabolicBasis {
    pub p: usize,
    pub q: usize,
    pub zeta_cols: Vec<AffineColumn>,
    pub eta_cols: Vec<AffineColumn>,
    /// `(i, j)` with `1 <= i < j < q`, one per `eta` column.
    pub pairs: Vec<(usize, usize)>,
}

impl ParabolicBasis {
    pub fn len(&self) -> usize {
        self.zeta_cols.len() + self.eta_cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn columns(&self) -> impl Iterator<Item = &AffineColumn> {
        self.zeta_cols.iter().chain(&self.eta_cols)
    }

    pub fn zeta(&self, x: &[f64]) -> DMatrix<f64> {
        zeta_at(self.q, x)
    }

    pub fn eta(&self, x: &[f64]) -> DMatrix<f64> {
        eta_at(self.q, x)
    }

    /// Coefficient vectors of all columns, side by side.
    pub fn coefficient_matrix(&self) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = self.columns().map(AffineColumn::coeffs).collect();
        DMatrix::from_columns(&cols)
    }
}

/// `zeta(x) = [[4 x_1, 2 y^T], [2 y, I]]`.
pub fn zeta_at(q: usize, x: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::identity(q, q);
    m[(0, 0)] = 4.0 * x[0];
    for i in 1..q {
        m[(0, i)] = 2.0 * x[i];
        m[(i, 0)] = 2.0 * x[i];
    }
    m
}

fn pairs(q: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(eta_count(q));
    for i in 1..q {
        for j in i + 1..q {
            out.push((i, j));
        }
    }
    out
}

/// `eta(x)`, a `q x (q-1)(q-2)/2` matrix.
pub fn eta_at(q: usize, x: &[f64]) -> DMatrix<f64> {
    let pr = pairs(q);
    let mut m = DMatrix::zeros(q, pr.len());
    for (k, &(i, j)) in pr.iter().enumerate() {
        m[(i, k)] = x[j];
        m[(j, k)] = -x[i];
    }
    m
}

fn check_dims(p: usize, q: usize) -> Result<()> {
    if q < 2 || q > p {
        return Err(Error::DimensionMismatch(format!("parabolic rank q = {q} must satisfy 2 <= q <= p = {p}")));
    }
    Ok(())
}

pub fn parabolic_basis(p: usize, q: usize) -> Result<ParabolicBasis> {
    check_dims(p, q)?;
    let mut zeta_cols = Vec::with_capacity(q);
    let mut first = AffineColumn {
        c0: DVector::zeros(q),
        c: DMatrix::zeros(q, p),
    };
    first.c[(0, 0)] = 4.0;
    for i in 1..q {
        first.c[(i, i)] = 2.0;
    }
    zeta_cols.push(first);
    for j in 1..q {
        let mut col = AffineColumn {
            c0: DVector::zeros(q),
            c: DMatrix::zeros(q, p),
        };
        col.c[(0, j)] = 2.0;
        col.c0[j] = 1.0;
        zeta_cols.push(col);
    }
    let pr = pairs(q);
    let eta_cols = pr
        .iter()
        .map(|&(i, j)| {
            let mut c = DMatrix::zeros(q, p);
            c[(i, j)] = 1.0;
            c[(j, i)] = -1.0;
            AffineColumn {
                c0: DVector::zeros(q),
                c,
            }
        })
        .collect();
    Ok(ParabolicBasis {
        p,
        q,
        zeta_cols,
        eta_cols,
        pairs: pr,
    })
}

/// Affine `R^q`-valued map with a single unit coefficient: index
/// `r + q * k`, where `k = 0` is the constant and `k = j + 1` is `x_j`.
fn unit_column(p: usize, q: usize, idx: usize) -> AffineColumn {
    let (r, k) = (idx % q, idx / q);
    let mut col = AffineColumn {
        c0: DVector::zeros(q),
        c: DMatrix::zeros(q, p),
    };
    if k == 0 {
        col.c0[r] = 1.0;
    } else {
        col.c[(r, k - 1)] = 1.0;
    }
    col
}

fn column_polys(col: &AffineColumn) -> Vec<Poly> {
    let (q, p) = col.c.shape();
    (0..q)
        .map(|r| {
            let mut s = Poly::constant(p, col.c0[r]);
            for k in 0..p {
                s = &s + &(Poly::var(p, k) * col.c[(r, k)]);
            }
            s
        })
        .collect()
}

/// `(1, -2 y^T) a(x)` as a polynomial.
pub fn boundary_pairing(col: &AffineColumn) -> Poly {
    let polys = column_polys(col);
    let p = col.c.ncols();
    let mut s = polys[0].clone();
    for (i, f) in polys.iter().enumerate().skip(1) {
        s = &s - &(&(Poly::var(p, i) * 2.0) * f);
    }
    s
}

/// Matrix of the operator that sends an affine `a: R^p -> R^q` to the
/// coefficients of `(1, -2 y^T) a(x)` restricted to `x_1 = y^T y`.
pub fn parabolic_constraint_system(p: usize, q: usize) -> Result<DMatrix<f64>> {
    check_dims(p, q)?;
    let mut ysq = Poly::zero(p);
    for i in 1..q {
        ysq = &ysq + &Poly::var(p, i).pow(2);
    }
    let monos = Poly::monomials_up_to(p, 3);
    let cols: Vec<DVector<f64>> = (0..q * (p + 1))
        .map(|idx| boundary_pairing(&unit_column(p, q, idx)).substitute(0, &ysq).coefficients(&monos))
        .collect();
    Ok(DMatrix::from_columns(&cols))
}

/// Numeric nullity of [`parabolic_constraint_system`] (rank tolerance 1e-8).
pub fn parabolic_kernel_dimension(p: usize, q: usize) -> Result<usize> {
    let m = parabolic_constraint_system(p, q)?;
    Ok(m.ncols() - linalg::numeric_rank(&m, 1e-8))
}

/// `theta = [[c zeta, A], [A^T, B]]` with `A = zeta A1 + eta A2`.
#[derive(Debug, Clone)]
pub struct ParabolicDecomposition {
    pub p: usize,
    pub q: usize,
    pub c: f64,
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub b: AffineMatrixField,
    pub residual: f64,
}

/// Affine field from an affine matrix-valued function, by evaluation at the
/// origin and the unit vectors.
fn field_from_fn(p: usize, f: impl Fn(&[f64]) -> DMatrix<f64>) -> AffineMatrixField {
    let zero = vec![0.0; p];
    let a0 = f(&zero);
    let a = (0..p)
        .map(|k| {
            let mut e = zero.clone();
            e[k] = 1.0;
            f(&e) - &a0
        })
        .collect();
    AffineMatrixField { a0, a }
}

impl ParabolicDecomposition {
    pub fn off_diagonal(&self, x: &[f64]) -> DMatrix<f64> {
        zeta_at(self.q, x) * &self.a1 + eta_at(self.q, x) * &self.a2
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let (p, q) = (self.p, self.q);
        let mut m = DMatrix::zeros(p, p);
        m.view_mut((0, 0), (q, q)).copy_from(&(zeta_at(q, x) * self.c));
        let a = self.off_diagonal(x);
        m.view_mut((0, q), (q, p - q)).copy_from(&a);
        m.view_mut((q, 0), (p - q, q)).copy_from(&a.transpose());
        m.view_mut((q, q), (p - q, p - q)).copy_from(&self.b.eval(x));
        m
    }

    pub fn reconstruct(&self) -> AffineMatrixField {
        field_from_fn(self.p, |x| self.eval(x))
    }

    pub fn is_normalized(&self) -> bool {
        (self.c - 1.0).abs() <= 1e-9 && linalg::max_abs(&self.a1) <= 1e-9
    }

    /// `B(x) - A2^T eta(x)^T eta(x) A2`.
    pub fn psd_residual(&self, x: &[f64]) -> DMatrix<f64> {
        let ea = eta_at(self.q, x) * &self.a2;
        self.b.eval(x) - ea.transpose() * ea
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "kind": "parabolic",
            "q": self.q,
            "c": self.c,
            "A1": matrix_to_rows(&self.a1),
            "A2": matrix_to_rows(&self.a2),
            "B": {
                "A0": matrix_to_rows(&self.b.a0),
                "A": self.b.a.iter().map(matrix_to_rows).collect::<Vec<_>>(),
            },
            "residual": self.residual,
        })
    }
}

fn block(f: &AffineMatrixField, r: usize, c: usize, nr: usize, nc: usize) -> AffineMatrixField {
    AffineMatrixField {
        a0: f.a0.view((r, c), (nr, nc)).into_owned(),
        a: f.a.iter().map(|m| m.view((r, c), (nr, nc)).into_owned()).collect(),
    }
}

fn flatten(f: &AffineMatrixField) -> DVector<f64> {
    let mut v = f.a0.as_slice().to_vec();
    for m in &f.a {
        v.extend_from_slice(m.as_slice());
    }
    DVector::from_vec(v)
}

/// Splits `theta` (canonical parabolic coordinates) into the blocks of the
/// necessary form.
pub fn parabolic_theta_decompose(theta: &AffineMatrixField, q: usize) -> Result<ParabolicDecomposition> {
    let p = theta.size();
    check_dims(p, q)?;
    let basis = parabolic_basis(p, q)?;
    let scale = 1.0 + theta.coeff_scale();

    let ul = flatten(&block(theta, 0, 0, q, q));
    let zeta = flatten(&field_from_fn(p, |x| zeta_at(q, x)));
    let c = ul.dot(&zeta) / zeta.norm_squared();
    let mut residual = (&ul - &zeta * c).amax();

    let nz = p - q;
    let nb = basis.len();
    let g = basis.coefficient_matrix();
    let mut a1 = DMatrix::zeros(q, nz);
    let mut a2 = DMatrix::zeros(nb - q, nz);
    for m in 0..nz {
        let col = AffineColumn {
            c0: theta.a0.view((0, q + m), (q, 1)).column(0).into_owned(),
            c: DMatrix::from_columns(&theta.a.iter().map(|a| a.view((0, q + m), (q, 1)).column(0).into_owned()).collect::<Vec<_>>()),
        };
        let target = col.coeffs();
        let w = linalg::lstsq(&g, &target);
        residual = residual.max((&g * &w - &target).amax());
        a1.set_column(m, &w.rows(0, q));
        a2.set_column(m, &w.rows(q, nb - q));
    }
    if residual > 1e-8 * scale {
        return Err(Error::NotAdmissible(format!(
            "theta is not of the parabolic form (residual {residual:.3e})"
        )));
    }
    if c < -1e-10 {
        return Err(Error::NegativeC(c));
    }
    Ok(ParabolicDecomposition {
        p,
        q,
        c,
        a1,
        a2,
        b: block(theta, q, q, nz, nz),
        residual,
    })
}

/// Matrix `K` of the normalizing change of coordinates
/// `x_1 -> x_1 / c`, `y -> y / sqrt(c)`, `z -> z - A1^T (x_1, y) / c`.
pub fn normalizing_map(dec: &ParabolicDecomposition) -> Result<DMatrix<f64>> {
    if dec.c <= 1e-10 {
        return Err(Error::PreconditionFailed(format!(
            "the parabolic block vanishes (c = {:.3e}); nothing to normalize",
            dec.c
        )));
    }
    let (p, q) = (dec.p, dec.q);
    let mut k = DMatrix::identity(p, p);
    k[(0, 0)] = 1.0 / dec.c;
    for i in 1..q {
        k[(i, i)] = dec.c.powf(-0.5);
    }
    k.view_mut((q, 0), (p - q, q)).copy_from(&(-dec.a1.transpose() / dec.c));
    Ok(k)
}

/// Applies [`normalizing_map`] to a model in canonical parabolic
/// coordinates and decomposes again. The state space keeps its canonical
/// form.
pub fn normalize_parabolic(model: &ModelSpec, dec: &ParabolicDecomposition) -> Result<(DMatrix<f64>, ModelSpec, ParabolicDecomposition)> {
    let k = normalizing_map(dec)?;
    let p = model.dimension;
    let mut out = model.transformed(&k, &DVector::zeros(p))?;
    if let (StateSpace::Quadratic(new), Some(old)) = (&mut out.state_space, model.quadratic()) {
        *new = QuadraticSpace {
            phi: old.phi.clone(),
            ..new.clone()
        };
    }
    let nd = parabolic_theta_decompose(&out.diffusion, dec.q)?;
    if !nd.is_normalized() {
        return Err(Error::NumericalFailure(format!(
            "normalization left c = {:.3e}, |A1| = {:.3e}",
            nd.c,
            linalg::max_abs(&nd.a1)
        )));
    }
    Ok((k, out, nd))
}

#[derive(Debug, Clone, Serialize)]
pub struct PsdConditionReport {
    /// `B = (q - 2) x_1 A2^T A2` at coefficient level.
    pub structural: bool,
    pub passed: bool,
    /// Smallest eigenvalue of the residual over the samples.
    pub min_eigenvalue: f64,
    pub witness: Option<Vec<f64>>,
    /// True when the verdict rests on sampling only.
    pub sampled_only: bool,
}

pub fn check_parabolic_psd_condition(dec: &ParabolicDecomposition, samples: &[Vec<f64>]) -> Result<PsdConditionReport> {
    if !dec.is_normalized() {
        return Err(Error::NotNormalized {
            c: dec.c,
            a1: linalg::max_abs(&dec.a1),
        });
    }
    let q = dec.q;
    let ata = dec.a2.transpose() * &dec.a2;
    let target = {
        let mut f = AffineMatrixField::zero(dec.p - q, dec.p);
        f.a[0] = &ata * (q as f64 - 2.0);
        f
    };
    let tol = 1e-9 * (1.0 + dec.b.coeff_scale());
    let structural = dec.b.coeff_distance(&target) <= tol;
    let mut min_eig = f64::INFINITY;
    let mut witness = None;
    for x in samples {
        let r = dec.psd_residual(x);
        if r.nrows() == 0 {
            continue;
        }
        let e = linalg::min_eigenvalue(&r);
        if e < min_eig {
            min_eig = e;
            if e < -1e-9 {
                witness = Some(x.clone());
            }
        }
    }
    let sampled_ok = min_eig >= -1e-9;
    Ok(PsdConditionReport {
        structural,
        passed: structural || sampled_ok,
        min_eigenvalue: min_eig,
        witness: if structural { None } else { witness },
        sampled_only: !structural,
    })
}

/// Deterministic points of `{x_1 >= y^T y}`, a fifth of them on the boundary.
pub fn parabolic_sample_points(p: usize, q: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let mut x: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
            let ysq: f64 = x[1..q].iter().map(|v| v * v).sum();
            x[0] = if k % 5 == 0 { ysq } else { ysq + rng.random_range(0.0..3.0) };
            x
        })
        .collect()
}

/// Square root for a normalized decomposition, optionally composed with an
/// outer affine map `Y = l X + ell` into the normalized coordinates.
#[derive(Debug, Clone)]
pub struct ParabolicRoot {
    pub dec: ParabolicDecomposition,
    pub outer: Option<AffineMap>,
}

impl ParabolicRoot {
    pub fn dim(&self) -> usize {
        self.dec.p
    }

    /// `sigma` in normalized coordinates.
    pub fn sigma_canonical(&self, y: &[f64]) -> DMatrix<f64> {
        let (p, q) = (self.dec.p, self.dec.q);
        let mut s = DMatrix::zeros(p, p);
        let ysq: f64 = y[1..q].iter().map(|v| v * v).sum();
        s[(0, 0)] = 2.0 * (y[0] - ysq).abs().sqrt();
        for i in 1..q {
            s[(0, i)] = 2.0 * y[i];
            s[(i, i)] = 1.0;
        }
        if p > q {
            let ea = eta_at(q, y) * &self.dec.a2;
            s.view_mut((q, 0), (p - q, q)).copy_from(&ea.transpose());
            let r = linalg::psd_sqrt(&linalg::sym_part(&self.dec.psd_residual(y)));
            s.view_mut((q, q), (p - q, p - q)).copy_from(&r);
        }
        s
    }

    pub fn project_canonical(&self, y: &mut [f64]) {
        let ysq: f64 = y[1..self.dec.q].iter().map(|v| v * v).sum();
        if y[0] < ysq {
            y[0] = ysq;
        }
    }

    pub fn sigma_x(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.outer {
            None => self.sigma_canonical(x),
            Some(m) => m.pull_sigma(&self.sigma_canonical(&m.forward(x))),
        }
    }

    pub fn project_x(&self, x: &mut [f64]) {
        match &self.outer {
            None => self.project_canonical(x),
            Some(m) => {
                let mut y = m.forward(x);
                self.project_canonical(&mut y);
                x.copy_from_slice(&m.backward(&y));
            }
        }
    }
}

/// Square root of a normalized decomposition passing the PSD condition on
/// `samples`.
pub fn parabolic_square_root(dec: &ParabolicDecomposition, samples: &[Vec<f64>]) -> Result<ParabolicRoot> {
    let rep = check_parabolic_psd_condition(dec, samples)?;
    if !rep.passed {
        return Err(Error::PsdConditionFailed(rep.min_eigenvalue));
    }
    Ok(ParabolicRoot {
        dec: dec.clone(),
        outer: None,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ParabolicDriftReport {
    /// Largest entry that must vanish in `a_{Q1}`, `a_{1Z}`, `a_{QZ}`.
    pub structure_violation: f64,
    pub structure_ok: bool,
    /// Eigenvalues of `a_11 I - 2 sym(a_QQ)`.
    pub d: Vec<f64>,
    pub psd_ok: bool,
    /// Largest `|a_1i - 2 b_i|` over the null directions (rotated).
    pub q2_violation: f64,
    pub q2_ok: bool,
    pub penalty: f64,
    /// `b_1 - (q - 1) - penalty`.
    pub closed_margin: f64,
    /// `b_1 - (q + 1) - penalty`.
    pub open_margin: f64,
}

impl ParabolicDriftReport {
    fn base_ok(&self) -> bool {
        self.structure_ok && self.psd_ok && self.q2_ok
    }

    pub fn closed_admissible(&self) -> bool {
        self.base_ok() && self.closed_margin >= -1e-12
    }

    pub fn open_invariant(&self) -> bool {
        self.base_ok() && self.open_margin >= -1e-12
    }
}

pub fn check_parabolic_drift(drift: &AffineVectorField, q: usize) -> Result<ParabolicDriftReport> {
    let p = drift.dim();
    check_dims(p, q)?;
    let a = &drift.a;
    let b = &drift.b;
    let mut viol = 0.0_f64;
    for i in 1..q {
        viol = viol.max(a[(i, 0)].abs());
    }
    for i in 0..q {
        for k in q..p {
            viol = viol.max(a[(i, k)].abs());
        }
    }
    let scale = 1.0 + a.amax() + b.amax();
    let aqq = a.view((1, 1), (q - 1, q - 1)).into_owned();
    let m = DMatrix::identity(q - 1, q - 1) * a[(0, 0)] - linalg::sym_part(&aqq) * 2.0;
    let (d, o) = linalg::sym_eigen_sorted(&m);
    let dmax = d.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    let psd_ok = d.iter().all(|&v| v >= -1e-9);
    let raw = DVector::from_iterator(q - 1, (1..q).map(|i| a[(0, i)] - 2.0 * b[i]));
    let w = o.transpose() * raw;
    let thr = 1e-9 * (1.0 + dmax);
    let mut penalty = 0.0;
    let mut q2v = 0.0_f64;
    for i in 0..q - 1 {
        if d[i] > thr {
            penalty += 0.25 * w[i] * w[i] / d[i];
        } else {
            q2v = q2v.max(w[i].abs());
        }
    }
    Ok(ParabolicDriftReport {
        structure_violation: viol,
        structure_ok: viol <= 1e-12 * scale,
        d: d.as_slice().to_vec(),
        psd_ok,
        q2_violation: q2v,
        q2_ok: q2v <= 1e-9 * scale,
        penalty,
        closed_margin: b[0] - (q as f64 - 1.0) - penalty,
        open_margin: b[0] - (q as f64 + 1.0) - penalty,
    })
}
