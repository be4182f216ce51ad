//! LP-backed convex analysis on polyhedra: Farkas-type certificates,
//! facet nonemptiness, facet-multiple detection, Chebyshev centers and
//! redundancy removal.
//!
//! Every certificate returned here is re-verified by substitution, so the
//! simplex backend only has to be approximately right.

use microlp::{ComparisonOp, OptimizationDirection, Problem, Variable};
use nalgebra::DVector;
use serde::Serialize;

use crate::affine_core::{AffineScalar, Polyhedron};
use crate::error::{Error, Result};

/// Box on multipliers and state variables that keeps the LPs bounded.
pub const LP_BOX: f64 = 1e6;
/// Reconstruction tolerance for certificates.
pub const CERT_TOL: f64 = 1e-8;
/// Negative multipliers down to this size are clamped to zero.
const CLAMP_TOL: f64 = 1e-10;

/// `d = lambda u + c` as affine functionals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FarkasCertificate {
    pub lambda: Vec<f64>,
    pub c: f64,
    /// Facet whose multiplier is sign-free, if any.
    pub free_index: Option<usize>,
    /// Set when a box bound on the multipliers is active.
    pub tolerance_warning: bool,
}

impl FarkasCertificate {
    /// Coefficient residual of `lambda u + c - d`.
    pub fn residual(&self, d: &AffineScalar, poly: &Polyhedron) -> f64 {
        let lam = DVector::from_row_slice(&self.lambda);
        let g = poly.gamma.transpose() * &lam - &d.gamma;
        let off = lam.dot(&poly.delta) + self.c - d.delta;
        g.iter().fold(off.abs(), |m, v| m.max(v.abs()))
    }
}

// ---------------------------------------------------------------------------
// LP plumbing

struct Lp {
    problem: Problem,
    vars: Vec<Variable>,
}

enum LpOutcome {
    Optimal(Vec<f64>),
    Infeasible,
}

impl Lp {
    fn new(direction: OptimizationDirection) -> Self {
        Self {
            problem: Problem::new(direction),
            vars: Vec::new(),
        }
    }

    fn var(&mut self, obj: f64, lo: f64, hi: f64) -> usize {
        self.vars.push(self.problem.add_var(obj, (lo, hi)));
        self.vars.len() - 1
    }

    fn constraint(&mut self, terms: &[(usize, f64)], op: ComparisonOp, rhs: f64) {
        let expr: Vec<(Variable, f64)> = terms
            .iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|&(i, c)| (self.vars[i], c))
            .collect();
        // microlp rejects empty expressions; 0 op rhs is checked by the caller.
        if expr.is_empty() {
            return;
        }
        self.problem.add_constraint(expr.as_slice(), op, rhs);
    }

    fn solve(&self) -> Result<LpOutcome> {
        match self.problem.solve() {
            Ok(outcome) => match outcome.into_solution() {
                Ok(sol) => {
                    let vals = self.vars.iter().map(|v| sol.var_value(*v)).collect();
                    Ok(LpOutcome::Optimal(vals))
                }
                Err(e) => Err(Error::Lp(format!("{e:?}"))),
            },
            Err(microlp::Error::Infeasible) => Ok(LpOutcome::Infeasible),
            Err(e) => Err(Error::Lp(e.to_string())),
        }
    }
}

fn coeff_scale(d: &AffineScalar) -> f64 {
    d.gamma.iter().fold(d.delta.abs(), |m, v| m.max(v.abs()))
}

/// Minimizes `d` over the polyhedron (optionally restricted to facet `i`)
/// intersected with the box `|x|_inf <= LP_BOX`.
pub fn minimize_over(d: &AffineScalar, poly: &Polyhedron, facet: Option<usize>) -> Result<Option<(Vec<f64>, f64)>> {
    let p = poly.dim();
    let mut lp = Lp::new(OptimizationDirection::Minimize);
    for k in 0..p {
        lp.var(d.gamma[k], -LP_BOX, LP_BOX);
    }
    for j in 0..poly.nfacets() {
        let terms: Vec<(usize, f64)> = (0..p).map(|k| (k, poly.gamma[(j, k)])).collect();
        let op = if Some(j) == facet { ComparisonOp::Eq } else { ComparisonOp::Ge };
        if terms.iter().all(|t| t.1 == 0.0) {
            let ok = match op {
                ComparisonOp::Eq => poly.delta[j] == 0.0,
                _ => poly.delta[j] >= 0.0,
            };
            if !ok {
                return Ok(None);
            }
            continue;
        }
        lp.constraint(&terms, op, -poly.delta[j]);
    }
    match lp.solve()? {
        LpOutcome::Optimal(x) => {
            let v = d.eval(&x);
            Ok(Some((x, v)))
        }
        LpOutcome::Infeasible => Ok(None),
    }
}

fn farkas_impl(d: &AffineScalar, poly: &Polyhedron, free: Option<usize>) -> Result<FarkasCertificate> {
    let (q, p) = (poly.nfacets(), poly.dim());
    if d.dim() != p {
        return Err(Error::DimensionMismatch(format!(
            "functional has dimension {}, polyhedron {p}",
            d.dim()
        )));
    }
    let mut lp = Lp::new(OptimizationDirection::Minimize);
    for j in 0..q {
        if Some(j) == free {
            lp.var(0.0, -LP_BOX, LP_BOX);
        } else {
            lp.var(1.0, 0.0, LP_BOX);
        }
    }
    let c_var = lp.var(1.0, 0.0, LP_BOX);
    let mut degenerate_rows_ok = true;
    for k in 0..p {
        let terms: Vec<(usize, f64)> = (0..q).map(|j| (j, poly.gamma[(j, k)])).collect();
        if terms.iter().all(|t| t.1 == 0.0) {
            degenerate_rows_ok &= d.gamma[k].abs() <= CERT_TOL * (1.0 + coeff_scale(d));
            continue;
        }
        lp.constraint(&terms, ComparisonOp::Eq, d.gamma[k]);
    }
    let mut terms: Vec<(usize, f64)> = (0..q).map(|j| (j, poly.delta[j])).collect();
    terms.push((c_var, 1.0));
    lp.constraint(&terms, ComparisonOp::Eq, d.delta);

    let outcome = if degenerate_rows_ok { lp.solve()? } else { LpOutcome::Infeasible };
    if let LpOutcome::Optimal(vals) = outcome {
        let mut lambda = vals[..q].to_vec();
        let mut c = vals[q];
        for (j, l) in lambda.iter_mut().enumerate() {
            if Some(j) != free && *l < 0.0 && *l >= -CLAMP_TOL {
                *l = 0.0;
            }
        }
        if (-CLAMP_TOL..0.0).contains(&c) {
            c = 0.0;
        }
        let warn = lambda.iter().any(|l| l.abs() >= LP_BOX * (1.0 - 1e-9)) || c >= LP_BOX * (1.0 - 1e-9);
        let cert = FarkasCertificate {
            lambda,
            c,
            free_index: free,
            tolerance_warning: warn,
        };
        let signs_ok = cert.c >= 0.0
            && cert
                .lambda
                .iter()
                .enumerate()
                .all(|(j, l)| Some(j) == free || *l >= 0.0);
        if signs_ok && cert.residual(d, poly) <= CERT_TOL * (1.0 + coeff_scale(d)) {
            return Ok(cert);
        }
    }
    // No certificate: produce a witness where d < 0.
    match minimize_over(d, poly, free)? {
        Some((witness, value)) => match free {
            Some(i) => Err(Error::NotNonnegativeOnFacet {
                facet: i,
                witness,
                value,
            }),
            None => Err(Error::NotNonnegative { witness, value }),
        },
        None => Err(Error::Empty),
    }
}

/// Certificate `d = lambda u + c` with `lambda >= 0`, `c >= 0`, or a witness
/// point where `d < 0`.
pub fn farkas_decompose(d: &AffineScalar, poly: &Polyhedron) -> Result<FarkasCertificate> {
    farkas_impl(d, poly, None)
}

/// Certificate with `lambda_j >= 0` for `j != i` and `lambda_i` free, which
/// proves `d >= 0` on the facet segment `poly ∩ {u_i = 0}`.
pub fn facet_relative_decompose(d: &AffineScalar, poly: &Polyhedron, i: usize) -> Result<FarkasCertificate> {
    if i >= poly.nfacets() {
        return Err(Error::DimensionMismatch(format!("facet index {i} out of range")));
    }
    farkas_impl(d, poly, Some(i))
}

/// A point of the facet segment `poly ∩ {u_i = 0}`, or `None` if it is empty.
pub fn facet_nonempty(poly: &Polyhedron, i: usize) -> Option<Vec<f64>> {
    let zero = AffineScalar::new(DVector::zeros(poly.dim()), 0.0);
    let (x, _) = minimize_over(&zero, poly, Some(i)).ok()??;
    let u = poly.u(&x);
    let ok = u[i].abs() <= 1e-8 * (1.0 + poly.gamma.row(i).norm()) && u.iter().all(|v| *v >= -1e-8);
    ok.then_some(x)
}

/// Returns `lambda_i` with `v = lambda_i u_i` when `v` vanishes on facet `i`.
pub fn detect_facet_multiple(v: &AffineScalar, poly: &Polyhedron, i: usize) -> Result<f64> {
    if i >= poly.nfacets() {
        return Err(Error::DimensionMismatch(format!("facet index {i} out of range")));
    }
    if interior_point(poly).is_none() {
        return Err(Error::InteriorEmpty);
    }
    let u = poly.facet(i).coeffs();
    let vc = v.coeffs();
    let lambda = vc.dot(&u) / u.norm_squared();
    let resid = (&vc - &u * lambda).amax();
    let tol = CERT_TOL * (1.0 + vc.amax());
    if resid <= tol {
        return Ok(lambda);
    }
    let plus = facet_relative_decompose(v, poly, i);
    let minus = facet_relative_decompose(&v.scaled(-1.0), poly, i);
    match (plus, minus) {
        (Ok(_), Ok(_)) => Err(Error::DegenerateFacet(i)),
        (Err(Error::NotNonnegativeOnFacet { .. }), _) | (_, Err(Error::NotNonnegativeOnFacet { .. })) => {
            Err(Error::NotMultiple(i))
        }
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

/// Chebyshev center: maximizes `min_i u_i(x) / |gamma_i|`. Unbounded inradius
/// is handled by capping the slack; ties are broken by minimal `|x|_1`.
pub fn interior_point(poly: &Polyhedron) -> Option<DVector<f64>> {
    let p = poly.dim();
    for cap in [1e4, 1.0] {
        let (t, x) = chebyshev_lp(poly, cap, None)?;
        if t <= 1e-9 {
            return None;
        }
        if t >= cap * (1.0 - 1e-9) && cap > 1.0 {
            continue;
        }
        let (_, x2) = chebyshev_lp(poly, cap, Some(t - 1e-12 * (1.0 + t))).unwrap_or((t, x));
        return Some(DVector::from_vec(x2[..p].to_vec()));
    }
    None
}

fn chebyshev_lp(poly: &Polyhedron, cap: f64, fix_t: Option<f64>) -> Option<(f64, Vec<f64>)> {
    let p = poly.dim();
    if poly.nfacets() == 0 {
        return Some((cap, vec![0.0; p]));
    }
    let direction = if fix_t.is_some() {
        OptimizationDirection::Minimize
    } else {
        OptimizationDirection::Maximize
    };
    let mut lp = Lp::new(direction);
    for _ in 0..p {
        lp.var(0.0, -LP_BOX, LP_BOX);
    }
    let t = match fix_t {
        Some(t0) => lp.var(0.0, t0, cap),
        None => lp.var(1.0, 0.0, cap),
    };
    for j in 0..poly.nfacets() {
        let norm = poly.gamma.row(j).norm();
        if norm == 0.0 {
            if poly.delta[j] < 0.0 {
                return None;
            }
            continue;
        }
        let mut terms: Vec<(usize, f64)> = (0..p).map(|k| (k, poly.gamma[(j, k)])).collect();
        terms.push((t, -norm));
        lp.constraint(&terms, ComparisonOp::Ge, -poly.delta[j]);
    }
    if fix_t.is_some() {
        // |x|_1 via s_k >= +-x_k.
        for k in 0..p {
            let s = lp.var(1.0, 0.0, LP_BOX);
            lp.constraint(&[(s, 1.0), (k, -1.0)], ComparisonOp::Ge, 0.0);
            lp.constraint(&[(s, 1.0), (k, 1.0)], ComparisonOp::Ge, 0.0);
        }
    }
    match lp.solve().ok()? {
        LpOutcome::Optimal(vals) => Some((vals[p], vals)),
        LpOutcome::Infeasible => None,
    }
}

/// Removes rows whose deletion leaves the set unchanged. Rows are tested in
/// index order against the rows still kept.
pub fn minimalize(poly: &Polyhedron) -> Polyhedron {
    let q = poly.nfacets();
    let mut keep: Vec<bool> = vec![true; q];
    for i in 0..q {
        let others: Vec<usize> = (0..q).filter(|&j| j != i && keep[j]).collect();
        let sub = sub_polyhedron(poly, &others);
        let ui = poly.facet(i);
        let tol = 1e-9 * (1.0 + coeff_scale(&ui));
        let redundant = match minimize_over(&ui, &sub, None) {
            Ok(Some((_, v))) => v >= -tol,
            Ok(None) => true,
            Err(_) => false,
        };
        if redundant {
            keep[i] = false;
        }
    }
    let rows: Vec<usize> = (0..q).filter(|&j| keep[j]).collect();
    let mut out = sub_polyhedron(poly, &rows);
    out.minimal = true;
    out
}

pub fn sub_polyhedron(poly: &Polyhedron, rows: &[usize]) -> Polyhedron {
    let p = poly.dim();
    let mut g = nalgebra::DMatrix::zeros(rows.len(), p);
    let mut d = DVector::zeros(rows.len());
    for (r, &j) in rows.iter().enumerate() {
        g.set_row(r, &poly.gamma.row(j));
        d[r] = poly.delta[j];
    }
    Polyhedron {
        gamma: g,
        delta: d,
        minimal: false,
    }
}
