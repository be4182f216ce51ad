use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::decompose::PsdFacetDecomposition;
use crate::affine_core::{AffineMatrixField, AffineVectorField, ModelSpec, Polyhedron, StateSpace};
use crate::error::{Error, Result};
use crate::linalg;

/// Higher-dimensional model whose diffusion matrix is congruent to a
/// diagonal one: `theta_hat = E D E^T` with `E = diag(I_k, T)` and
/// `D = diag(x_M, 0_N, w(u(x)), 0_r)`.
#[derive(Debug, Clone)]
pub struct ExtendedModel {
    pub model: ModelSpec,
    pub original_dim: usize,
    /// Leading coordinates that already carry `diag(x_M, 0_N)`.
    pub lead: usize,
    /// Width `r` of the block handled through `T`.
    pub r: usize,
    pub e: DMatrix<f64>,
    pub lambda_sqrt: DMatrix<f64>,
    d0: DVector<f64>,
    d: Vec<DVector<f64>>,
    /// Worst residual of the projection and congruence checks.
    pub residual: f64,
}

impl ExtendedModel {
    pub fn dim(&self) -> usize {
        self.model.dimension
    }

    /// Diagonal of `D` at the original state `x`.
    pub fn diagonal(&self, x: &[f64]) -> DVector<f64> {
        let mut out = self.d0.clone();
        for (dk, xk) in self.d.iter().zip(x) {
            out += dk * *xk;
        }
        out
    }

    /// Projection of the extended diffusion onto the original coordinates.
    pub fn projected_theta(&self, x: &[f64]) -> DMatrix<f64> {
        let p = self.original_dim;
        let mut full = vec![0.0; self.dim()];
        full[..p].copy_from_slice(&x[..p]);
        self.model.diffusion.eval(&full).view((0, 0), (p, p)).into_owned()
    }
}

/// Leading canonical block size when the facets are `x_0..x_{q-1} >= 0` and
/// theta has the matching `diag(x_M, 0_N)` pattern; zero otherwise.
fn canonical_lead(model: &ModelSpec, poly: &Polyhedron) -> usize {
    let p = model.dimension;
    let q = poly.nfacets();
    if q > p || poly.delta.amax() != 0.0 {
        return 0;
    }
    let unit = (0..q).all(|i| (0..p).all(|k| poly.gamma[(i, k)] == if i == k { 1.0 } else { 0.0 }));
    if !unit {
        return 0;
    }
    let th = &model.diffusion;
    let tol = 1e-12 * (1.0 + th.coeff_scale());
    let pattern_ok = |mat: &DMatrix<f64>, j: Option<usize>| {
        (0..q).all(|r| {
            (0..p).all(|c| {
                let v = mat[(r, c)];
                if Some(r) == j && c == r {
                    v.abs() <= tol || (v - 1.0).abs() <= tol
                } else {
                    v.abs() <= tol
                }
            })
        })
    };
    let ok = pattern_ok(&th.a0, None)
        && (0..p).all(|j| pattern_ok(&th.a[j], if j < q { Some(j) } else { None }))
        && (q..p).all(|j| linalg::max_abs(&th.a[j]) <= tol);
    if ok {
        q
    } else {
        0
    }
}

pub fn diagonalize_extended(model: &ModelSpec, dec: &PsdFacetDecomposition) -> Result<ExtendedModel> {
    let p = model.dimension;
    let poly = &dec.polyhedron;
    let q = poly.nfacets();
    if poly.dim() != p || dec.b.len() != q {
        return Err(Error::PreconditionFailed("decomposition does not match the model dimensions".into()));
    }
    let rec = dec.reconstruct();
    let res = rec.coeff_distance(&model.diffusion);
    if res > 1e-8 * (1.0 + model.diffusion.coeff_scale()) {
        return Err(Error::PreconditionFailed(format!(
            "decomposition does not reconstruct theta (residual {res:.3e})"
        )));
    }
    let k = canonical_lead(model, poly);
    let r = p - k;
    let nw = r * (q + 1);
    let big = p + nw;

    let parts: Vec<&DMatrix<f64>> = std::iter::once(&dec.b0).chain(dec.b.iter()).collect();
    let mut lambda_sqrt = DMatrix::zeros(r, nw);
    for (j, b) in parts.iter().enumerate() {
        let block = b.view((k, k), (r, r)).into_owned();
        lambda_sqrt.view_mut((0, j * r), (r, r)).copy_from(&linalg::psd_sqrt(&block));
    }
    let s = nw + r;
    let mut t = DMatrix::zeros(s, s);
    t.view_mut((0, 0), (r, nw)).copy_from(&lambda_sqrt);
    t.view_mut((0, nw), (r, r)).copy_from(&DMatrix::identity(r, r));
    t.view_mut((r, 0), (nw, nw)).copy_from(&DMatrix::identity(nw, nw));
    let mut e = DMatrix::identity(big, big);
    e.view_mut((k, k), (s, s)).copy_from(&t);

    // D = D0 + sum_k D^k x_k, affine in the original coordinates.
    let mut d0 = DVector::zeros(big);
    let mut d = vec![DVector::zeros(big); p];
    for i in 0..k {
        if model.diffusion.a[i][(i, i)] != 0.0 {
            d[i][i] = 1.0;
        }
    }
    for c in 0..r {
        d0[k + c] = 1.0;
    }
    for i in 0..q {
        for c in 0..r {
            let idx = k + (i + 1) * r + c;
            d0[idx] = poly.delta[i];
            for kk in 0..p {
                d[kk][idx] = poly.gamma[(i, kk)];
            }
        }
    }
    let congr = |diag: &DVector<f64>| linalg::sym_part(&(&e * DMatrix::from_diagonal(diag) * e.transpose()));
    let a0 = congr(&d0);
    let mut a: Vec<DMatrix<f64>> = d.iter().map(congr).collect();
    a.resize(big, DMatrix::zeros(big, big));
    let diffusion = AffineMatrixField { a0, a };

    let mut da = DMatrix::zeros(big, big);
    da.view_mut((0, 0), (p, p)).copy_from(&model.drift.a);
    let mut db = DVector::zeros(big);
    db.rows_mut(0, p).copy_from(&model.drift.b);
    let mut gamma = DMatrix::zeros(q, big);
    gamma.view_mut((0, 0), (q, p)).copy_from(&poly.gamma);
    let ext_poly = Polyhedron {
        gamma,
        delta: poly.delta.clone(),
        minimal: poly.minimal,
    };
    let ext = ModelSpec::new(AffineVectorField::new(da, db)?, diffusion, StateSpace::Polyhedral(ext_poly))?;

    let mut out = ExtendedModel {
        model: ext,
        original_dim: p,
        lead: k,
        r,
        e,
        lambda_sqrt,
        d0,
        d,
        residual: 0.0,
    };
    let e_inv = out
        .e
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure("extension matrix is singular".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xd1a6);
    let mut worst = 0.0_f64;
    let mut scale = 1.0_f64;
    for _ in 0..20 {
        let x: Vec<f64> = (0..big).map(|_| rng.random_range(-2.0..2.0)).collect();
        let th = model.diffusion.eval(&x[..p]);
        let proj = out.projected_theta(&x);
        worst = worst.max(linalg::max_abs(&(proj - &th)));
        let full = out.model.diffusion.eval(&x);
        let back = &e_inv * full * e_inv.transpose();
        let diag = DMatrix::from_diagonal(&out.diagonal(&x[..p]));
        worst = worst.max(linalg::max_abs(&(back - diag)));
        scale = scale.max(linalg::max_abs(&th));
    }
    out.residual = worst;
    if worst > 1e-9 * scale {
        return Err(Error::NumericalFailure(format!("extension does not reproduce theta (residual {worst:.3e})")));
    }
    Ok(out)
}
