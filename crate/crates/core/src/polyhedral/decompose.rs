use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;

use super::require_polyhedron;
use crate::affine_core::{matrix_to_rows, AffineMatrixField, ModelSpec, Polyhedron, Tolerances};
use crate::convex_oracle;
use crate::error::{Error, Result};
use crate::linalg;

const MAX_ITER: usize = 10_000;
const POLISH_EVERY: usize = 25;
const STALL_WINDOW: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecompositionRoute {
    /// The facet normals are linearly independent.
    FullRowRank,
    /// `(delta gamma)` has full row rank and the triangle condition holds.
    Triangle,
    /// The coefficient system has a unique solution.
    Unique,
    /// Semidefinite feasibility search.
    Search,
}

/// `theta(x) = B0 + sum_i B^i u_i(x)` with every `B` positive semidefinite.
#[derive(Debug, Clone)]
pub struct PsdFacetDecomposition {
    pub b0: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
    pub route: DecompositionRoute,
    pub polyhedron: Polyhedron,
    /// Max coefficient error of the reconstruction.
    pub residual: f64,
    pub min_eigenvalue: f64,
}

impl PsdFacetDecomposition {
    /// `B0 + sum_i B^i u_i` as an affine matrix field.
    pub fn reconstruct(&self) -> AffineMatrixField {
        reconstruct(&self.b0, &self.b, &self.polyhedron)
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "route": self.route,
            "B0": matrix_to_rows(&self.b0),
            "B": self.b.iter().map(matrix_to_rows).collect::<Vec<_>>(),
            "residual": self.residual,
            "min_eigenvalue": self.min_eigenvalue,
        })
    }
}

fn reconstruct(b0: &DMatrix<f64>, b: &[DMatrix<f64>], poly: &Polyhedron) -> AffineMatrixField {
    let p = poly.dim();
    let mut a0 = b0.clone();
    let mut a = vec![DMatrix::zeros(b0.nrows(), b0.ncols()); p];
    for (i, bi) in b.iter().enumerate() {
        a0 += bi * poly.delta[i];
        for (k, ak) in a.iter_mut().enumerate() {
            *ak += bi * poly.gamma[(i, k)];
        }
    }
    AffineMatrixField { a0, a }
}

pub fn psd_decompose(model: &ModelSpec) -> Result<PsdFacetDecomposition> {
    psd_decompose_with(model, &Tolerances::default())
}

pub fn psd_decompose_with(model: &ModelSpec, tol: &Tolerances) -> Result<PsdFacetDecomposition> {
    let poly = require_polyhedron(model)?.clone();
    let p = model.dimension;
    let q = poly.nfacets();
    let x0 = convex_oracle::interior_point(&poly).ok_or(Error::InteriorEmpty)?;
    let cscale = 1.0 + model.diffusion.coeff_scale();

    // Columns (1; 0) and (delta_i; gamma_i^T).
    let mut g = DMatrix::zeros(p + 1, q + 1);
    g[(0, 0)] = 1.0;
    for i in 0..q {
        g[(0, i + 1)] = poly.delta[i];
        for k in 0..p {
            g[(k + 1, i + 1)] = poly.gamma[(i, k)];
        }
    }
    let gp = linalg::pinv(&g);
    let null = linalg::null_space(&g, 1e-10);
    let mut part = vec![DMatrix::zeros(p, p); q + 1];
    let mut inconsistency = 0.0_f64;
    for r in 0..p {
        for s in r..p {
            let mut a = DVector::zeros(p + 1);
            a[0] = model.diffusion.a0[(r, s)];
            for k in 0..p {
                a[k + 1] = model.diffusion.a[k][(r, s)];
            }
            let bv = &gp * &a;
            inconsistency = inconsistency.max((&g * &bv - &a).amax());
            for j in 0..=q {
                part[j][(r, s)] = bv[j];
                part[j][(s, r)] = bv[j];
            }
        }
    }
    if inconsistency > tol.identity * cscale {
        return Err(Error::NotRepresentable(format!(
            "theta is not an affine combination of 1 and the facet functionals (residual {inconsistency:.3e})"
        )));
    }
    let finish = |parts: Vec<DMatrix<f64>>, route| finalize(model, &poly, parts, route, tol);

    if null.ncols() == 0 {
        let worst = parts_min_eig(&part);
        if !parts_psd(&part, tol.psd) {
            return Err(Error::NotRepresentable(format!(
                "the representation is unique and has eigenvalue {worst:.3e}"
            )));
        }
        return finish(part, DecompositionRoute::Unique);
    }

    let full_row = linalg::numeric_rank(&poly.gamma, 1e-10) == q;
    if full_row || check_triangle_condition(&poly) {
        if let Some(parts) = gamma_inverse_route(model, &poly, &x0, tol) {
            let route = if full_row {
                DecompositionRoute::FullRowRank
            } else {
                DecompositionRoute::Triangle
            };
            if let Ok(dec) = finish(parts, route) {
                return Ok(dec);
            }
        }
    }

    match search(&part, &null, tol) {
        SearchOutcome::Feasible(parts) => finish(parts, DecompositionRoute::Search),
        SearchOutcome::Infeasible { c0, r_norm, radius } => Err(Error::NotRepresentable(format!(
            "separating certificate: sum <Y_j, B_j> = {c0:.3e} < 0 with adjoint residual {r_norm:.3e}; \
             a PSD representation would need |Z| >= {radius:.3e}"
        ))),
        SearchOutcome::Inconclusive(msg) => Err(Error::NumericalFailure(msg)),
    }
}

fn parts_min_eig(parts: &[DMatrix<f64>]) -> f64 {
    parts.iter().map(linalg::min_eigenvalue).fold(f64::INFINITY, f64::min)
}

fn parts_psd(parts: &[DMatrix<f64>], tol: f64) -> bool {
    parts.iter().all(|b| linalg::is_psd(b, tol))
}

fn finalize(
    model: &ModelSpec,
    poly: &Polyhedron,
    parts: Vec<DMatrix<f64>>,
    route: DecompositionRoute,
    tol: &Tolerances,
) -> Result<PsdFacetDecomposition> {
    let min_eig = parts_min_eig(&parts);
    if !parts_psd(&parts, tol.psd) {
        return Err(Error::NumericalFailure(format!("candidate has eigenvalue {min_eig:.3e}")));
    }
    let mut parts = parts.into_iter();
    let b0 = parts.next().expect("B0 present");
    let b: Vec<DMatrix<f64>> = parts.collect();
    let rec = reconstruct(&b0, &b, poly);
    let residual = rec.coeff_distance(&model.diffusion);
    if residual > tol.identity * (1.0 + model.diffusion.coeff_scale()) {
        return Err(Error::ReconstructionMismatch(residual));
    }
    Ok(PsdFacetDecomposition {
        b0,
        b,
        route,
        polyhedron: poly.clone(),
        residual,
        min_eigenvalue: min_eig,
    })
}

enum Extra {
    Constant,
    Unit,
}

/// Inverts `Gamma` made of the translated facet rows `(u_i(x0), gamma_i)`
/// completed by `e_0` and unit rows. Returns `None` when the completion does
/// not lead to a valid representation.
fn gamma_inverse_route(
    model: &ModelSpec,
    poly: &Polyhedron,
    x0: &DVector<f64>,
    tol: &Tolerances,
) -> Option<Vec<DMatrix<f64>>> {
    let p = poly.dim();
    let q = poly.nfacets();
    let dt = poly.u(x0.as_slice());
    let mut rows: Vec<DVector<f64>> = (0..q)
        .map(|i| {
            let mut r = DVector::zeros(p + 1);
            r[0] = dt[i];
            for k in 0..p {
                r[k + 1] = poly.gamma[(i, k)];
            }
            r
        })
        .collect();
    if linalg::numeric_rank(&linalg::rows_to_matrix(&rows, p + 1), 1e-10) < q {
        return None;
    }
    let mut extras = Vec::new();
    for c in 0..=p {
        if rows.len() == p + 1 {
            break;
        }
        let mut e = DVector::zeros(p + 1);
        e[c] = 1.0;
        rows.push(e);
        if linalg::numeric_rank(&linalg::rows_to_matrix(&rows, p + 1), 1e-10) == rows.len() {
            extras.push(if c == 0 { Extra::Constant } else { Extra::Unit });
        } else {
            rows.pop();
        }
    }
    let gamma = linalg::rows_to_matrix(&rows, p + 1);
    let n = gamma.try_inverse()?;
    let theta0 = model.diffusion.eval(x0.as_slice());
    let coef = |k: usize| if k == 0 { &theta0 } else { &model.diffusion.a[k - 1] };
    let lambda: Vec<DMatrix<f64>> = (0..=p)
        .map(|j| {
            let mut s = DMatrix::zeros(p, p);
            for k in 0..=p {
                s += coef(k) * n[(k, j)];
            }
            linalg::sym_part(&s)
        })
        .collect();
    let scale = 1.0 + model.diffusion.coeff_scale().max(linalg::max_abs(&theta0));
    let mut b0 = DMatrix::zeros(p, p);
    for (e, lam) in extras.iter().zip(&lambda[q..]) {
        match e {
            Extra::Constant => b0 = lam.clone(),
            Extra::Unit => {
                if linalg::max_abs(lam) > tol.identity * scale {
                    return None;
                }
            }
        }
    }
    let mut parts = vec![b0];
    parts.extend(lambda[..q].iter().cloned());
    Some(parts)
}

enum SearchOutcome {
    Feasible(Vec<DMatrix<f64>>),
    Infeasible { c0: f64, r_norm: f64, radius: f64 },
    Inconclusive(String),
}

/// PSD feasibility over `B^j(Z) = P_j + sum_l N_{jl} Z_l`.
fn search(part: &[DMatrix<f64>], null: &DMatrix<f64>, tol: &Tolerances) -> SearchOutcome {
    let p = part[0].nrows();
    let nz = null.ncols();
    let eval = |z: &[DMatrix<f64>]| -> Vec<DMatrix<f64>> {
        part.iter()
            .enumerate()
            .map(|(j, pj)| {
                let mut b = pj.clone();
                for (l, zl) in z.iter().enumerate() {
                    b += zl * null[(j, l)];
                }
                b
            })
            .collect()
    };
    let scale = 1.0 + part.iter().map(linalg::sym_norm).fold(0.0, f64::max);
    let mut z = vec![DMatrix::zeros(p, p); nz];
    let mut history: Vec<f64> = Vec::new();
    let mut last_neg: Vec<DMatrix<f64>> = Vec::new();
    for it in 0..MAX_ITER {
        let bs = eval(&z);
        let (pos, neg): (Vec<_>, Vec<_>) = bs.iter().map(linalg::psd_project).unzip();
        let viol = neg.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
        if viol <= 1e-14 * scale {
            return SearchOutcome::Feasible(bs);
        }
        if it % POLISH_EVERY == POLISH_EVERY - 1 {
            if let Some(parts) = polish(&z, &eval, null, scale, tol) {
                return SearchOutcome::Feasible(parts);
            }
        }
        history.push(viol);
        last_neg = neg;
        if it >= STALL_WINDOW {
            let old = history[it - STALL_WINDOW];
            if old - viol <= 1e-9 * old {
                break;
            }
        }
        z = (0..nz)
            .map(|l| {
                let mut s = DMatrix::zeros(p, p);
                for (j, pj) in pos.iter().enumerate() {
                    s += (pj - &part[j]) * null[(j, l)];
                }
                s
            })
            .collect();
    }
    if let Some(parts) = polish(&z, &eval, null, scale, tol) {
        return SearchOutcome::Feasible(parts);
    }
    certificate(part, null, &last_neg, scale)
}

/// Newton steps on `B^j(Z) v = 0` for the near-null eigenvectors `v`,
/// trying progressively smaller thresholds for "near-null".
fn polish<F>(z: &[DMatrix<f64>], eval: &F, null: &DMatrix<f64>, scale: f64, tol: &Tolerances) -> Option<Vec<DMatrix<f64>>>
where
    F: Fn(&[DMatrix<f64>]) -> Vec<DMatrix<f64>>,
{
    let p = z.first().map_or(0, |m| m.nrows());
    let nz = z.len();
    let npar = p * (p + 1) / 2;
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|r| (r..p).map(move |s| (r, s))).collect();
    let accept = |bs: &[DMatrix<f64>]| parts_psd(bs, tol.psd.min(1e-12));
    let initial = eval(z);
    for exp in 1..=8 {
        let tau = 10f64.powi(-exp) * scale;
        let counts: Vec<usize> = initial
            .iter()
            .map(|b| linalg::sym_eigen_sorted(b).0.iter().filter(|&&v| v < tau).count())
            .collect();
        if counts.iter().all(|&c| c == 0) {
            continue;
        }
        let mut zc: Vec<DMatrix<f64>> = z.to_vec();
        for _ in 0..10 {
            let bs = eval(&zc);
            if accept(&bs) {
                return Some(bs);
            }
            let mut rows: Vec<Vec<f64>> = Vec::new();
            let mut rhs: Vec<f64> = Vec::new();
            for (j, b) in bs.iter().enumerate() {
                let (_, vecs) = linalg::sym_eigen_sorted(b);
                for c in 0..counts[j] {
                    let v = vecs.column(p - 1 - c);
                    let bv = b * v;
                    for a in 0..p {
                        let mut row = vec![0.0; nz * npar];
                        for l in 0..nz {
                            let w = null[(j, l)];
                            if w == 0.0 {
                                continue;
                            }
                            for (t, &(r, s)) in pairs.iter().enumerate() {
                                let mut e = 0.0;
                                if a == r {
                                    e += v[s];
                                }
                                if a == s && r != s {
                                    e += v[r];
                                }
                                row[l * npar + t] = w * e;
                            }
                        }
                        rows.push(row);
                        rhs.push(-bv[a]);
                    }
                }
            }
            let m = DMatrix::from_fn(rows.len(), nz * npar, |i, c| rows[i][c]);
            let step = linalg::lstsq(&m, &DVector::from_vec(rhs));
            if !step.iter().all(|v| v.is_finite()) {
                break;
            }
            for (l, zl) in zc.iter_mut().enumerate() {
                for (t, &(r, s)) in pairs.iter().enumerate() {
                    zl[(r, s)] += step[l * npar + t];
                    if r != s {
                        zl[(s, r)] += step[l * npar + t];
                    }
                }
            }
            if step.amax() <= 1e-16 * scale {
                break;
            }
        }
        let bs = eval(&zc);
        if accept(&bs) {
            return Some(bs);
        }
    }
    None
}

/// Dual certificate from the negative parts at the last iterate. With
/// `Y_j` PSD, `sum_j <Y_j, B^j(Z)> = c0 + <R, Z>`, so any feasible `Z`
/// satisfies `|Z| >= -c0 / |R|`.
fn certificate(part: &[DMatrix<f64>], null: &DMatrix<f64>, neg: &[DMatrix<f64>], scale: f64) -> SearchOutcome {
    if neg.is_empty() {
        return SearchOutcome::Inconclusive("search produced no iterate".into());
    }
    let nz = null.ncols();
    let mut y: Vec<DMatrix<f64>> = neg.iter().map(|m| -m).collect();
    for l in 0..nz {
        let mut s = DMatrix::zeros(y[0].nrows(), y[0].ncols());
        for (j, yj) in y.iter().enumerate() {
            s += yj * null[(j, l)];
        }
        for (j, yj) in y.iter_mut().enumerate() {
            *yj -= &s * null[(j, l)];
        }
    }
    let y: Vec<DMatrix<f64>> = y.iter().map(|m| linalg::psd_project(m).0).collect();
    let ynorm = y.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
    if ynorm == 0.0 {
        return SearchOutcome::Inconclusive("search stalled without a separating direction".into());
    }
    let c0: f64 = y.iter().zip(part).map(|(a, b)| a.dot(b)).sum::<f64>() / ynorm;
    let r_norm = (0..nz)
        .map(|l| {
            let mut s = DMatrix::zeros(y[0].nrows(), y[0].ncols());
            for (j, yj) in y.iter().enumerate() {
                s += yj * null[(j, l)];
            }
            s.norm_squared()
        })
        .sum::<f64>()
        .sqrt()
        / ynorm;
    if c0 >= 0.0 {
        return SearchOutcome::Inconclusive(format!(
            "alternating projections stalled (certificate value {c0:.3e} is not negative)"
        ));
    }
    let radius = if r_norm > 0.0 { -c0 / r_norm } else { f64::INFINITY };
    if radius > 1e6 * scale {
        SearchOutcome::Infeasible { c0, r_norm, radius }
    } else {
        SearchOutcome::Inconclusive(format!(
            "alternating projections stalled; the separating direction only excludes |Z| < {radius:.3e}"
        ))
    }
}

/// `u_j(x) = 0 for all j != i` implies `u_i(x) >= 0`, for every `i`, together
/// with full row rank of `(delta gamma)`. A single facet counts as satisfied.
pub fn check_triangle_condition(poly: &Polyhedron) -> bool {
    let p = poly.dim();
    let q = poly.nfacets();
    let mut dg = DMatrix::zeros(q, p + 1);
    for i in 0..q {
        dg[(i, 0)] = poly.delta[i];
        for k in 0..p {
            dg[(i, k + 1)] = poly.gamma[(i, k)];
        }
    }
    if linalg::numeric_rank(&dg, 1e-10) < q {
        return false;
    }
    if q <= 1 {
        return true;
    }
    (0..q).all(|i| {
        let others: Vec<usize> = (0..q).filter(|&j| j != i).collect();
        let g = DMatrix::from_fn(others.len(), p, |r, c| poly.gamma[(others[r], c)]);
        let d = DVector::from_iterator(others.len(), others.iter().map(|&j| -poly.delta[j]));
        let x = linalg::lstsq(&g, &d);
        let scale = 1.0 + d.amax() + g.amax();
        if (&g * &x - &d).amax() > 1e-9 * scale {
            return true;
        }
        let gi = poly.gamma.row(i).transpose();
        let nul = linalg::null_space(&g, 1e-10);
        let slope = (nul.transpose() * &gi).amax();
        slope <= 1e-9 * (1.0 + gi.amax()) && gi.dot(&x) + poly.delta[i] >= -1e-9
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_models::*;
    use super::*;
    use crate::affine_core::{AffineVectorField, StateSpace};

    fn worked_witness() -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let b0 = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let b = vec![
            DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 1.0]) / 9.0,
            DMatrix::from_row_slice(2, 2, &[2.0, 4.0, 4.0, 8.0]) / 9.0,
            DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0]) / 9.0,
        ];
        (b0, b)
    }

    #[test]
    fn witness_reconstructs_theta() {
        let model = hyperbola_example();
        let (b0, b) = worked_witness();
        let rec = reconstruct(&b0, &b, model.polyhedron().unwrap());
        assert!(rec.coeff_distance(&model.diffusion) < 1e-12);
    }

    #[test]
    fn hyperbola_decomposes() {
        let model = hyperbola_example();
        let dec = psd_decompose(&model).unwrap();
        assert!(dec.residual < 1e-12, "{}", dec.residual);
        assert!(dec.min_eigenvalue >= -1e-9);
        assert_eq!(dec.b.len(), 3);
    }

    #[test]
    fn triangle_not_representable() {
        let err = psd_decompose(&triangle_example()).unwrap_err();
        assert!(matches!(err, Error::NotRepresentable(_)), "{err:?}");
    }

    #[test]
    fn constant_theta() {
        let th = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        let model = ModelSpec::new(
            AffineVectorField::zero(2),
            AffineMatrixField::constant(th.clone(), 2).unwrap(),
            StateSpace::Polyhedral(Polyhedron::canonical(2, 2)),
        )
        .unwrap();
        let dec = psd_decompose(&model).unwrap();
        assert!(linalg::max_abs(&(&dec.b0 - th)) < 1e-12);
        assert!(dec.b.iter().all(|b| linalg::max_abs(b) < 1e-12));
        assert_eq!(dec.route, DecompositionRoute::Unique);
    }

    #[test]
    fn cir_full_row_rank() {
        let dec = psd_decompose(&cir(-1.0, 1.0)).unwrap();
        assert!((dec.b[0][(0, 0)] - 1.0).abs() < 1e-12);
        assert!(dec.b0[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn redundant_facet_goes_through_gamma_inverse() {
        // theta = diag(x1, 0) on the unit triangle.
        let gamma = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, -1.0]);
        let delta = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let model = ModelSpec::new(
            AffineVectorField::zero(2),
            AffineMatrixField::new(
                DMatrix::zeros(2, 2),
                vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), DMatrix::zeros(2, 2)],
            )
            .unwrap(),
            StateSpace::Polyhedral(Polyhedron::new(gamma, delta).unwrap()),
        )
        .unwrap();
        let dec = psd_decompose(&model).unwrap();
        assert_eq!(dec.route, DecompositionRoute::Triangle);
        assert!(dec.residual < 1e-10);
    }

    #[test]
    fn triangle_condition_examples() {
        let tri = Polyhedron::new(
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, -1.0]),
            DVector::from_vec(vec![0.0, 0.0, 1.0]),
        )
        .unwrap();
        assert!(check_triangle_condition(&tri));
        let square = Polyhedron::new(
            DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]),
            DVector::from_vec(vec![0.0, 1.0, 0.0, 1.0]),
        )
        .unwrap();
        assert!(!check_triangle_condition(&square));
        assert!(check_triangle_condition(&Polyhedron::canonical(1, 2)));
        // Strip with a floor, a triangle with vertices at infinity.
        let strip = Polyhedron::new(
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0]),
            DVector::from_vec(vec![0.0, 1.0, 0.0]),
        )
        .unwrap();
        assert!(check_triangle_condition(&strip));
        // Outward third facet: u_3 < 0 at the vertex of the other two.
        let bad = triangle_example();
        let poly = bad.polyhedron().unwrap();
        let sub = convex_oracle::sub_polyhedron(poly, &[0, 1, 2]);
        let sub = Polyhedron::new(sub.gamma.columns(0, 2).into_owned(), sub.delta).unwrap();
        assert!(!check_triangle_condition(&sub));
    }
}
