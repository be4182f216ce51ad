use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::minimal_polyhedron;
use crate::affine_core::{matrix_to_rows, AffineMatrixField, ModelSpec, Polyhedron, StateSpace, Tolerances};
use crate::convex_oracle;
use crate::error::{Error, Result};
use crate::linalg;

const BLOCK_SAMPLES: usize = 100;

/// Affine change of coordinates `y = L x + ell` that brings an admissible
/// polyhedral model to the block form
/// `theta(y) = diag(y_M, 0_N) (+) Psi(y_{M u N})` on `R^{m+n}_{>=0} x ...`.
#[derive(Debug, Clone)]
pub struct CanonicalTransform {
    pub l: DMatrix<f64>,
    pub l_inv: DMatrix<f64>,
    pub ell: DVector<f64>,
    pub m: usize,
    pub n: usize,
    /// Facets (indices into the minimal polyhedron) that become `y_0..y_{m-1}`.
    pub m_facets: Vec<usize>,
    /// Facets that become `y_m..y_{m+n-1}`.
    pub n_facets: Vec<usize>,
    /// Positive factor dividing each facet of the minimal polyhedron.
    pub facet_scales: Vec<f64>,
    /// Lower-right block as an affine function of `y_{M u N}`.
    pub psi: AffineMatrixField,
    /// Rows `B_i = gamma_i theta(x0) / u_i(x0)`, before rescaling.
    pub b_rows: DMatrix<f64>,
    pub x0: DVector<f64>,
    /// Minimal polyhedron with the rescaled facets, in the original coordinates.
    pub polyhedron: Polyhedron,
    /// The model in canonical coordinates.
    pub canonical_model: ModelSpec,
    /// Max over random points of the block-identity residual.
    pub block_residual: f64,
}

impl CanonicalTransform {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn to_canonical(&self, x: &[f64]) -> DVector<f64> {
        &self.l * DVector::from_row_slice(x) + &self.ell
    }

    pub fn from_canonical(&self, y: &[f64]) -> DVector<f64> {
        &self.l_inv * (DVector::from_row_slice(y) - &self.ell)
    }

    /// `diag(y_M, 0_N) (+) Psi(y_{M u N})`.
    pub fn block(&self, y: &[f64]) -> DMatrix<f64> {
        let p = self.dim();
        let k = self.m + self.n;
        let mut out = DMatrix::zeros(p, p);
        for i in 0..self.m {
            out[(i, i)] = y[i];
        }
        if p > k {
            out.view_mut((k, k), (p - k, p - k)).copy_from(&self.psi.eval(&y[..k]));
        }
        out
    }

    /// Block identity residual `|L theta(x) L^T - block(L x + ell)|` at `y`.
    pub fn block_residual_at(&self, model: &ModelSpec, y: &[f64]) -> f64 {
        let x = self.from_canonical(y);
        let lhs = &self.l * model.diffusion.eval(x.as_slice()) * self.l.transpose();
        linalg::max_abs(&(lhs - self.block(y)))
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "L": matrix_to_rows(&self.l),
            "ell": self.ell.as_slice(),
            "m": self.m,
            "n": self.n,
            "M": self.m_facets,
            "N": self.n_facets,
            "facet_scales": self.facet_scales,
            "Psi": {
                "A0": matrix_to_rows(&self.psi.a0),
                "A": self.psi.a.iter().map(matrix_to_rows).collect::<Vec<_>>(),
            },
            "B": matrix_to_rows(&self.b_rows),
            "x0": self.x0.as_slice(),
            "block_residual": self.block_residual,
            "transformed_model": self.canonical_model.to_json_value(),
        })
    }
}

pub fn canonical_transform(model: &ModelSpec) -> Result<CanonicalTransform> {
    canonical_transform_with(model, &Tolerances::default())
}

pub fn canonical_transform_with(model: &ModelSpec, tol: &Tolerances) -> Result<CanonicalTransform> {
    let p = model.dimension;
    let mut poly = minimal_polyhedron(model)?;
    let q = poly.nfacets();
    let x0 = convex_oracle::interior_point(&poly).ok_or(Error::InteriorEmpty)?;
    let th0 = model.diffusion.eval(x0.as_slice());
    let u0 = poly.u(x0.as_slice());
    let theta_scale = 1.0 + linalg::sym_norm(&th0);
    let coeff_scale = 1.0 + model.diffusion.coeff_scale();

    let mut b = DMatrix::zeros(q, p);
    for i in 0..q {
        let row = poly.gamma.row(i) * &th0 / u0[i];
        b.set_row(i, &row);
    }

    // gamma_i theta(x) = B_i u_i(x) identically.
    for i in 0..q {
        let g = poly.gamma.row(i);
        let gscale = 1.0 + g.amax();
        let mut resid = (g * &model.diffusion.a0 - b.row(i) * poly.delta[i]).amax();
        for k in 0..p {
            let r = (g * &model.diffusion.a[k] - b.row(i) * poly.gamma[(i, k)]).amax();
            resid = resid.max(r);
        }
        if resid > tol.identity * coeff_scale * gscale {
            return Err(Error::NotAdmissible(format!(
                "gamma_{i} theta does not vanish on facet {i} (coefficient residual {resid:.3e})"
            )));
        }
    }

    let m_facets: Vec<usize> = (0..q)
        .filter(|&i| b.row(i).norm() > 1e-9 * theta_scale)
        .collect();
    let mut facet_scales = vec![1.0; q];
    for &i in &m_facets {
        let c = b.row(i).dot(&poly.gamma.row(i));
        if c <= 1e-12 * theta_scale {
            return Err(Error::NotAdmissible(format!(
                "theta(x0) is not positive semidefinite along facet {i} (c = {c:.3e})"
            )));
        }
        facet_scales[i] = c;
        let row = poly.gamma.row(i) / c;
        poly.gamma.set_row(i, &row);
        poly.delta[i] /= c;
    }
    let m = m_facets.len();
    for (a, &i) in m_facets.iter().enumerate() {
        for (c, &j) in m_facets.iter().enumerate() {
            let v = b.row(i).dot(&poly.gamma.row(j));
            let want = if a == c { 1.0 } else { 0.0 };
            if (v - want).abs() > 1e-8 * theta_scale {
                return Err(Error::RankDeficiency(format!(
                    "B_{i} gamma_{j}^T = {v:.3e}, expected {want}"
                )));
            }
        }
    }

    let rank_gamma = linalg::numeric_rank(&poly.gamma, 1e-10);
    let mut rows: Vec<DVector<f64>> = m_facets.iter().map(|&i| poly.gamma.row(i).transpose()).collect();
    if linalg::numeric_rank(&linalg::rows_to_matrix(&rows, p), 1e-10) < m {
        return Err(Error::RankDeficiency("facet normals of M are linearly dependent".into()));
    }
    let mut n_facets = Vec::new();
    let mut rank = m;
    for j in 0..q {
        if rank >= rank_gamma {
            break;
        }
        if m_facets.contains(&j) {
            continue;
        }
        rows.push(poly.gamma.row(j).transpose());
        let r = linalg::numeric_rank(&linalg::rows_to_matrix(&rows, p), 1e-10);
        if r > rank {
            rank = r;
            n_facets.push(j);
        } else {
            rows.pop();
        }
    }
    let n = n_facets.len();
    let k = m + n;

    let mut span: Vec<DVector<f64>> = m_facets.iter().map(|&i| b.row(i).transpose()).collect();
    span.extend(n_facets.iter().map(|&j| poly.gamma.row(j).transpose()));
    let eta = complement_rows(&span, p)?;

    let mut l = DMatrix::zeros(p, p);
    let mut ell = DVector::zeros(p);
    for (r, &i) in m_facets.iter().chain(&n_facets).enumerate() {
        l.set_row(r, &poly.gamma.row(i));
        ell[r] = poly.delta[i];
    }
    for (r, e) in eta.iter().enumerate() {
        l.set_row(k + r, &e.transpose());
    }
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::RankDeficiency("assembled L is singular".into()))?;

    let mut rescaled = model.clone();
    poly.minimal = true;
    rescaled.state_space = StateSpace::Polyhedral(poly.clone());
    let mut canonical_model = rescaled.transformed(&l, &ell)?;
    if let StateSpace::Polyhedral(tp) = &mut canonical_model.state_space {
        for (r, &i) in m_facets.iter().chain(&n_facets).enumerate() {
            let mut e = DVector::zeros(p);
            e[r] = 1.0;
            tp.gamma.set_row(i, &e.transpose());
            tp.delta[i] = 0.0;
        }
    }

    // Block pattern of the transformed coefficients.
    let th = &canonical_model.diffusion;
    let mut pattern = 0.0_f64;
    let upper_left = |mat: &DMatrix<f64>, j: Option<usize>| {
        let mut d = 0.0_f64;
        for r in 0..k {
            for c in 0..k {
                let want = if Some(r) == j && c == r && r < m { 1.0 } else { 0.0 };
                d = d.max((mat[(r, c)] - want).abs());
            }
            for c in k..p {
                d = d.max(mat[(r, c)].abs());
            }
        }
        d
    };
    pattern = pattern.max(upper_left(&th.a0, None));
    for j in 0..p {
        if j < k {
            pattern = pattern.max(upper_left(&th.a[j], Some(j)));
        } else {
            pattern = pattern.max(linalg::max_abs(&th.a[j]));
        }
    }
    let tscale = 1.0 + th.coeff_scale();
    if pattern > tol.identity * tscale {
        return Err(Error::NotAdmissible(format!(
            "transformed diffusion does not have the canonical block form (residual {pattern:.3e})"
        )));
    }
    let r = p - k;
    let psi = AffineMatrixField {
        a0: linalg::sym_part(&th.a0.view((k, k), (r, r)).into_owned()),
        a: (0..k)
            .map(|j| linalg::sym_part(&th.a[j].view((k, k), (r, r)).into_owned()))
            .collect(),
    };
    let mut ct = CanonicalTransform {
        l,
        l_inv,
        ell,
        m,
        n,
        m_facets,
        n_facets,
        facet_scales,
        psi,
        b_rows: b,
        x0,
        polyhedron: poly,
        canonical_model,
        block_residual: 0.0,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst = 0.0_f64;
    let mut worst_rel = 0.0_f64;
    for _ in 0..BLOCK_SAMPLES {
        let y: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let res = ct.block_residual_at(model, &y);
        worst = worst.max(res);
        worst_rel = worst_rel.max(res / (1.0 + linalg::max_abs(&ct.block(&y))));
    }
    ct.block_residual = worst;
    if worst_rel > tol.residual {
        return Err(Error::NotAdmissible(format!(
            "block identity fails at sampled points (residual {worst:.3e})"
        )));
    }
    Ok(ct)
}

/// Unit vectors completed against `span` by pivoted Gram-Schmidt: at each
/// step the `e_k` with the largest residual is taken, smallest `k` on ties.
fn complement_rows(span: &[DVector<f64>], p: usize) -> Result<Vec<DVector<f64>>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let orth = |v: &DVector<f64>, basis: &[DVector<f64>]| {
        let mut w = v.clone();
        for _ in 0..2 {
            for b in basis {
                let c = b.dot(&w);
                w -= b * c;
            }
        }
        w
    };
    for v in span {
        let w = orth(v, &basis);
        let nrm = w.norm();
        if nrm <= 1e-10 * (1.0 + v.norm()) {
            return Err(Error::RankDeficiency("rows of B_M and gamma_N are dependent".into()));
        }
        basis.push(w / nrm);
    }
    let mut out = Vec::new();
    while basis.len() < p {
        let mut best: Option<(usize, f64, DVector<f64>)> = None;
        for kk in 0..p {
            let mut e = DVector::zeros(p);
            e[kk] = 1.0;
            let w = orth(&e, &basis);
            let nrm = w.norm();
            if best.as_ref().is_none_or(|(_, bn, _)| nrm > bn + 1e-12) {
                best = Some((kk, nrm, w));
            }
        }
        let (_, nrm, w) = best.expect("p > 0");
        if nrm < 1e-8 {
            return Err(Error::RankDeficiency("no unit vector completes the basis".into()));
        }
        let w = w / nrm;
        basis.push(w.clone());
        // Snap exact unit results so canonical inputs give a permutation.
        out.push(w.map(|v| if v.abs() < 1e-15 { 0.0 } else { v }));
    }
    Ok(out)
}

/// `sigma(x) = L^{-1} sigma_y(L x + ell)` with
/// `sigma_y(y) = diag(sqrt|y_M|, 0_N) (+) |Psi(y_{M u N})|^{1/2}`.
#[derive(Debug, Clone)]
pub struct PolyhedralRoot {
    pub l: DMatrix<f64>,
    pub l_inv: DMatrix<f64>,
    pub ell: DVector<f64>,
    pub m: usize,
    pub n: usize,
    pub psi: AffineMatrixField,
}

pub fn build_square_root(ct: &CanonicalTransform) -> PolyhedralRoot {
    PolyhedralRoot {
        l: ct.l.clone(),
        l_inv: ct.l_inv.clone(),
        ell: ct.ell.clone(),
        m: ct.m,
        n: ct.n,
        psi: ct.psi.clone(),
    }
}

impl PolyhedralRoot {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Root in canonical coordinates.
    pub fn sigma_canonical(&self, y: &[f64]) -> DMatrix<f64> {
        let p = self.dim();
        let k = self.m + self.n;
        let mut out = DMatrix::zeros(p, p);
        for i in 0..self.m {
            out[(i, i)] = y[i].abs().sqrt();
        }
        if p > k {
            let block = linalg::psd_sqrt(&self.psi.eval(&y[..k]));
            out.view_mut((k, k), (p - k, p - k)).copy_from(&block);
        }
        out
    }

    /// Root in the original coordinates.
    pub fn sigma_x(&self, x: &[f64]) -> DMatrix<f64> {
        let y = &self.l * DVector::from_row_slice(x) + &self.ell;
        &self.l_inv * self.sigma_canonical(y.as_slice())
    }

    /// Clamps the canonical coordinates `y_{M u N}` at zero.
    pub fn project_x(&self, x: &mut [f64]) {
        let k = self.m + self.n;
        let mut y = &self.l * DVector::from_row_slice(x) + &self.ell;
        if (0..k).all(|i| y[i] >= 0.0) {
            return;
        }
        for i in 0..k {
            y[i] = y[i].max(0.0);
        }
        let back = &self.l_inv * (y - &self.ell);
        x.copy_from_slice(back.as_slice());
    }
}
