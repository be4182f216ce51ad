use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::affine_core::{matrix_to_rows, AffineScalar, ModelSpec, QuadraticForm, QuadraticSpace, Side, StateSpace};
use crate::error::{Error, Result};
use crate::linalg;

const ZERO_EIG: f64 = 1e-9;

/// Normal form of a quadric after an affine change of coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum QuadricKind {
    /// `y_0 - sum_{i<q} y_i^2`.
    Parabolic { q: usize },
    /// `y_0^2 - sum_{0<i<q} y_i^2 + d`.
    ConeType { q: usize, d: f64 },
    /// `sum_{i<q} y_i^2 + d`.
    EllipsoidType { q: usize, d: f64 },
    /// Any other signature: `[y_0 +] sum_pos y^2 - sum_neg y^2 [+ d]`.
    Indefinite {
        positive: usize,
        negative: usize,
        linear: bool,
        d: f64,
    },
}

/// Which quadrics can bound the state space of an affine diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadricSubtype {
    Parabolic,
    Cone,
    /// Only `theta = 0` is compatible with the boundary.
    Excluded,
}

#[derive(Debug, Clone)]
pub struct QuadricClassification {
    pub kind: QuadricKind,
    pub subtype: QuadricSubtype,
    /// `y = t x + shift` gives canonical coordinates.
    pub t: DMatrix<f64>,
    pub shift: DVector<f64>,
    /// `Phi(x) = scale * canonical(t x + shift)`.
    pub scale: f64,
    pub residual: f64,
}

impl QuadricKind {
    /// The canonical polynomial at `y`.
    pub fn canonical_value(&self, y: &[f64]) -> f64 {
        let sq = |r: std::ops::Range<usize>| -> f64 { y[r].iter().map(|v| v * v).sum() };
        match *self {
            QuadricKind::Parabolic { q } => y[0] - sq(1..q),
            QuadricKind::ConeType { q, d } => y[0] * y[0] - sq(1..q) + d,
            QuadricKind::EllipsoidType { q, d } => sq(0..q) + d,
            QuadricKind::Indefinite {
                positive,
                negative,
                linear,
                d,
            } => {
                let o = usize::from(linear);
                let lin = if linear { y[0] } else { 0.0 };
                lin + sq(o..o + positive) - sq(o + positive..o + positive + negative) + d
            }
        }
    }

    /// The canonical polynomial as a quadratic form in `p` variables.
    pub fn canonical_form(&self, p: usize) -> QuadraticForm {
        let mut a = DMatrix::zeros(p, p);
        let mut b = DVector::zeros(p);
        let mut c = 0.0;
        match *self {
            QuadricKind::Parabolic { q } => {
                b[0] = 1.0;
                for i in 1..q {
                    a[(i, i)] = -1.0;
                }
            }
            QuadricKind::ConeType { q, d } => {
                a[(0, 0)] = 1.0;
                for i in 1..q {
                    a[(i, i)] = -1.0;
                }
                c = d;
            }
            QuadricKind::EllipsoidType { q, d } => {
                for i in 0..q {
                    a[(i, i)] = 1.0;
                }
                c = d;
            }
            QuadricKind::Indefinite {
                positive,
                negative,
                linear,
                d,
            } => {
                let o = usize::from(linear);
                if linear {
                    b[0] = 1.0;
                }
                for i in o..o + positive {
                    a[(i, i)] = 1.0;
                }
                for i in o + positive..o + positive + negative {
                    a[(i, i)] = -1.0;
                }
                c = d;
            }
        }
        QuadraticForm { a, b, c }
    }
}

impl QuadricClassification {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "kind": self.kind,
            "subtype": self.subtype,
            "T": matrix_to_rows(&self.t),
            "t": self.shift.as_slice(),
            "scale": self.scale,
            "residual": self.residual,
        })
    }
}

/// Eigen-decomposition sorted descending with the first nonzero entry of
/// every eigenvector made positive.
fn oriented_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (vals, mut vecs) = linalg::sym_eigen_sorted(a);
    for k in 0..vecs.ncols() {
        if let Some(first) = vecs.column(k).iter().find(|v| v.abs() > 1e-12).copied() {
            if first < 0.0 {
                vecs.column_mut(k).neg_mut();
            }
        }
    }
    (vals, vecs)
}

/// Orthonormal completion of `lead` (if any) inside the span of `vs`.
fn completion(lead: Option<&DVector<f64>>, vs: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = lead.into_iter().map(|v| v.normalize()).collect();
    let skip = basis.len();
    for v in vs {
        let mut w = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w -= b * c;
            }
        }
        if w.norm() > 1e-8 {
            basis.push(w.normalize());
        }
    }
    basis.split_off(skip)
}

pub fn classify_quadric(phi: &QuadraticForm) -> Result<QuadricClassification> {
    let p = phi.dim();
    let (vals, vecs) = oriented_eigen(&phi.a);
    let lmax = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if lmax == 0.0 {
        return Err(Error::ZeroQuadraticPart);
    }
    let thr = ZERO_EIG * lmax;
    let bt = vecs.transpose() * &phi.b;
    let pos: Vec<usize> = (0..p).filter(|&k| vals[k] > thr).collect();
    let neg: Vec<usize> = (0..p).filter(|&k| vals[k] < -thr).collect();
    let zero: Vec<usize> = (0..p).filter(|&k| vals[k].abs() <= thr).collect();
    let mut cprime = phi.c;
    for &k in pos.iter().chain(&neg) {
        cprime -= bt[k] * bt[k] / (4.0 * vals[k]);
    }
    let square_row = |k: usize| -> (DVector<f64>, f64) {
        let s = vals[k].abs().sqrt();
        (vecs.column(k) * s, s * bt[k] / (2.0 * vals[k]))
    };
    let mut r = DVector::zeros(p);
    for &k in &zero {
        r += vecs.column(k) * bt[k];
    }
    let linear = r.norm() > 1e-9 * (1.0 + phi.b.amax());
    let zero_vecs: Vec<DVector<f64>> = zero.iter().map(|&k| vecs.column(k).into_owned()).collect();

    let mut rows: Vec<(DVector<f64>, f64)> = Vec::with_capacity(p);
    let mut scale = 1.0;
    let kind;
    if linear {
        let semidefinite = pos.is_empty() || neg.is_empty();
        let flip = semidefinite && !pos.is_empty();
        if flip {
            scale = -1.0;
        }
        let s = if flip { -1.0 } else { 1.0 };
        rows.push((&r * s, cprime * s));
        if semidefinite {
            rows.extend(pos.iter().chain(&neg).map(|&k| square_row(k)));
            kind = QuadricKind::Parabolic {
                q: 1 + pos.len() + neg.len(),
            };
        } else {
            rows.extend(pos.iter().chain(&neg).map(|&k| square_row(k)));
            kind = QuadricKind::Indefinite {
                positive: pos.len(),
                negative: neg.len(),
                linear: true,
                d: 0.0,
            };
        }
        rows.extend(completion(Some(&r), &zero_vecs).into_iter().map(|v| (v, 0.0)));
    } else {
        let (np, nn) = (pos.len(), neg.len());
        let (order, flip): (Vec<usize>, bool) = if nn == 0 {
            (pos.clone(), false)
        } else if np == 0 {
            (neg.clone(), true)
        } else if np == 1 {
            (pos.iter().chain(&neg).copied().collect(), false)
        } else if nn == 1 {
            (neg.iter().chain(&pos).copied().collect(), true)
        } else {
            (pos.iter().chain(&neg).copied().collect(), false)
        };
        let mut d = if flip { -cprime } else { cprime };
        if flip {
            scale = -1.0;
        }
        let dscale = 1e-9 * (1.0 + phi.c.abs() + phi.b.amax());
        let norm = if d.abs() > dscale { d.abs() } else { 1.0 };
        if d.abs() > dscale {
            scale *= norm;
            d = d.signum();
        } else {
            d = 0.0;
        }
        let inv = 1.0 / norm.sqrt();
        rows.extend(order.iter().map(|&k| {
            let (row, sh) = square_row(k);
            (row * inv, sh * inv)
        }));
        kind = if nn == 0 || np == 0 {
            QuadricKind::EllipsoidType { q: np + nn, d }
        } else if np == 1 || nn == 1 {
            QuadricKind::ConeType { q: np + nn, d }
        } else {
            QuadricKind::Indefinite {
                positive: np,
                negative: nn,
                linear: false,
                d,
            }
        };
        rows.extend(zero_vecs.into_iter().map(|v| (v, 0.0)));
    }
    let mut t = DMatrix::zeros(p, p);
    let mut shift = DVector::zeros(p);
    for (i, (row, sh)) in rows.into_iter().enumerate() {
        t.set_row(i, &row.transpose());
        shift[i] = sh;
    }
    let subtype = match kind {
        QuadricKind::Parabolic { .. } => QuadricSubtype::Parabolic,
        QuadricKind::ConeType { d: 0.0, .. } => QuadricSubtype::Cone,
        _ => QuadricSubtype::Excluded,
    };

    let t_inv = t
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure("quadric transform is singular".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a4d);
    let mut residual = 0.0_f64;
    for _ in 0..50 {
        let y: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = &t_inv * (DVector::from_row_slice(&y) - &shift);
        let lhs = phi.eval(x.as_slice());
        let rhs = scale * kind.canonical_value(&y);
        residual = residual.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
    }
    if residual > 1e-8 {
        return Err(Error::NumericalFailure(format!(
            "canonical form does not reproduce the quadric (residual {residual:.3e})"
        )));
    }
    Ok(QuadricClassification {
        kind,
        subtype,
        t,
        shift,
        scale,
        residual,
    })
}

/// The model in the canonical coordinates of its quadric, with `Phi`
/// replaced by the canonical polynomial and the side adjusted to match. For
/// cones the nappe selected by the halfspace (default `y_0 >= 0`) is mapped to
/// `y_0 >= 0`.
pub fn canonical_quadratic_model(model: &ModelSpec) -> Result<(QuadricClassification, ModelSpec)> {
    let qs = model
        .quadratic()
        .ok_or_else(|| Error::PreconditionFailed("state space is not quadratic".into()))?;
    let mut cls = classify_quadric(&qs.phi)?;
    let p = model.dimension;
    if let (QuadricKind::ConeType { .. }, Some(h)) = (cls.kind, &qs.halfspace) {
        let t_inv = cls.t.clone().try_inverse().expect("checked in classify_quadric");
        let mut y = vec![0.0; p];
        y[0] = 1.0;
        let x = &t_inv * (DVector::from_vec(y) - &cls.shift);
        if h.eval(x.as_slice()) < 0.0 {
            cls.t.row_mut(0).neg_mut();
            cls.shift[0] = -cls.shift[0];
        }
    }
    let mut out = model.transformed(&cls.t, &cls.shift)?;
    let positive = match qs.component {
        Side::Positive => cls.scale > 0.0,
        Side::Negative => cls.scale < 0.0,
    };
    let halfspace = match cls.kind {
        QuadricKind::ConeType { .. } => {
            let mut g = DVector::zeros(p);
            g[0] = 1.0;
            Some(AffineScalar::new(g, 0.0))
        }
        _ => None,
    };
    out.state_space = StateSpace::Quadratic(QuadraticSpace {
        phi: cls.kind.canonical_form(p),
        component: if positive { Side::Positive } else { Side::Negative },
        closed: qs.closed,
        halfspace,
    });
    Ok((cls, out))
}
