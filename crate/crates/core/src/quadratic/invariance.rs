//! Sufficient conditions for invariance of the open state space
//! `{Phi > 0}` (one component of it).

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::conical::{check_cone_admissibility, conical_theta_decompose};
use super::parabolic::{check_parabolic_drift, parabolic_theta_decompose};
use super::poly::Poly;
use crate::affine_core::{AffineScalar, ModelSpec, QuadraticForm};
use crate::error::{Error, Result};
use crate::polyhedral::check_open_orthant_invariance;

/// Boundary functional: a quadric, or a product of affine functions such as
/// `det diag(x) = x_1 ... x_p`.
#[derive(Debug, Clone)]
pub enum BoundaryFunctional {
    Quadric(QuadraticForm),
    ProductOfAffine(Vec<AffineScalar>),
}

impl BoundaryFunctional {
    pub fn dim(&self) -> usize {
        match self {
            BoundaryFunctional::Quadric(q) => q.dim(),
            BoundaryFunctional::ProductOfAffine(fs) => fs.first().map_or(0, AffineScalar::dim),
        }
    }

    pub fn to_poly(&self) -> Poly {
        match self {
            BoundaryFunctional::Quadric(q) => Poly::from_quadratic(q),
            BoundaryFunctional::ProductOfAffine(fs) => fs
                .iter()
                .fold(Poly::constant(self.dim(), 1.0), |acc, f| &acc * &Poly::from_affine(f)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftCheckMethod {
    ParabolicClosedForm,
    ConeClosedForm,
    OrthantClosedForm,
    Sampled,
}

#[derive(Debug, Clone, Serialize)]
pub struct OpenInvarianceReport {
    /// Constant `v` with `grad Phi theta = Phi v^T`.
    pub v: Vec<f64>,
    pub phiv_residual: f64,
    pub method: DriftCheckMethod,
    pub passed: bool,
    /// Minimum of `grad Phi (mu - h/2)` over the sample points in the state space.
    pub sampled_min: f64,
    pub sampled_points: usize,
    pub witness: Option<Vec<f64>>,
    pub sampled_only: bool,
}

/// Radical inverse of `i` in base `b`.
fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let inv = 1.0 / b as f64;
    let (mut f, mut r) = (inv, 0.0);
    while i > 0 {
        r += f * (i % b) as f64;
        i /= b;
        f *= inv;
    }
    r
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// `n` Halton points in `[-r, r]^p`, skipping the origin.
pub fn halton_points(p: usize, n: usize, r: f64) -> Vec<Vec<f64>> {
    assert!(p <= PRIMES.len(), "Halton sampling supports up to 16 dimensions");
    (1..=n as u64)
        .map(|i| (0..p).map(|k| (2.0 * radical_inverse(i, PRIMES[k]) - 1.0) * r).collect())
        .collect()
}

pub const SAMPLE_COUNT: usize = 10_000;
pub const SAMPLE_RADIUS: f64 = 10.0;
pub const SAMPLE_TOL: f64 = -1e-7;

fn is_canonical_parabola(phi: &QuadraticForm) -> Option<usize> {
    let p = phi.dim();
    if phi.c != 0.0 || phi.b[0] != 1.0 || phi.b.iter().skip(1).any(|&v| v != 0.0) {
        return None;
    }
    let q = 1 + (1..p).take_while(|&i| phi.a[(i, i)] == -1.0).count();
    let ok = (0..p).all(|i| {
        (0..p).all(|j| {
            let want = if i == j && i >= 1 && i < q { -1.0 } else { 0.0 };
            phi.a[(i, j)] == want
        })
    });
    (ok && q >= 2).then_some(q)
}

fn is_canonical_cone(phi: &QuadraticForm) -> bool {
    let p = phi.dim();
    phi.c == 0.0
        && phi.b.iter().all(|&v| v == 0.0)
        && (0..p).all(|i| {
            (0..p).all(|j| {
                let want = match (i == j, i) {
                    (true, 0) => 1.0,
                    (true, _) => -1.0,
                    _ => 0.0,
                };
                phi.a[(i, j)] == want
            })
        })
}

fn is_canonical_orthant(fs: &[AffineScalar], model: &ModelSpec) -> bool {
    let p = model.dimension;
    if fs.len() != p {
        return false;
    }
    let units = fs
        .iter()
        .enumerate()
        .all(|(i, f)| f.delta == 0.0 && (0..p).all(|k| f.gamma[k] == if k == i { 1.0 } else { 0.0 }));
    let th = &model.diffusion;
    let diag = th.a0.iter().all(|&v| v == 0.0)
        && (0..p).all(|k| (0..p).all(|i| (0..p).all(|j| th.a[k][(i, j)] == if i == j && i == k { 1.0 } else { 0.0 })));
    units && diag
}

pub fn check_open_invariance_general(phi: &BoundaryFunctional, model: &ModelSpec) -> Result<OpenInvarianceReport> {
    let p = model.dimension;
    if phi.dim() != p {
        return Err(Error::DimensionMismatch(format!("functional has dimension {}, model {p}", phi.dim())));
    }
    let f = phi.to_poly();
    let grad: Vec<Poly> = (0..p).map(|i| f.derivative(i)).collect();
    let th = &model.diffusion;
    let entry = |i: usize, j: usize| {
        let mut s = Poly::constant(p, th.a0[(i, j)]);
        for k in 0..p {
            s = &s + &(Poly::var(p, k) * th.a[k][(i, j)]);
        }
        s
    };
    let monos = Poly::monomials_up_to(p, f.degree() + 1);
    let fc = f.coefficients(&monos);
    let fn2 = fc.norm_squared();
    if fn2 == 0.0 {
        return Err(Error::PreconditionFailed("boundary functional is zero".into()));
    }
    let mut v = vec![0.0; p];
    let mut residual = 0.0_f64;
    let mut scale = 1.0_f64;
    for j in 0..p {
        let mut cj = Poly::zero(p);
        for (i, g) in grad.iter().enumerate() {
            cj = &cj + &(g * &entry(i, j));
        }
        let cc = cj.coefficients(&monos);
        v[j] = cc.dot(&fc) / fn2;
        residual = residual.max((&cc - &fc * v[j]).amax());
        scale = scale.max(cc.amax());
    }
    if residual > 1e-9 * scale {
        return Err(Error::PhiVMismatch(residual));
    }

    // g(x) = grad Phi(x) (a x + b - h / 2), h_r = sum_i (A^i)_{r i}
    let h = DVector::from_iterator(p, (0..p).map(|r| (0..p).map(|i| th.a[i][(r, i)]).sum::<f64>()));
    let mut g = Poly::zero(p);
    for (r, gr) in grad.iter().enumerate() {
        let mut mu = Poly::constant(p, model.drift.b[r] - 0.5 * h[r]);
        for k in 0..p {
            mu = &mu + &(Poly::var(p, k) * model.drift.a[(r, k)]);
        }
        g = &g + &(gr * &mu);
    }

    let points: Vec<Vec<f64>> = halton_points(p, SAMPLE_COUNT, SAMPLE_RADIUS)
        .into_iter()
        .filter(|x| model.state_space.contains(x, 0.0) && f.eval(x) != 0.0)
        .collect();
    let (sampled_min, witness) = points
        .par_iter()
        .enumerate()
        .map(|(k, x)| (g.eval(x), k))
        .reduce(|| (f64::INFINITY, usize::MAX), |a, b| if a.0 < b.0 || (a.0 == b.0 && a.1 < b.1) { a } else { b });
    let sampled_ok = sampled_min >= SAMPLE_TOL;

    let closed = match phi {
        BoundaryFunctional::Quadric(q) => {
            if let Some(qq) = is_canonical_parabola(q) {
                parabolic_theta_decompose(th, qq)
                    .ok()
                    .filter(|d| d.is_normalized())
                    .map(|_| check_parabolic_drift(&model.drift, qq).map(|r| (DriftCheckMethod::ParabolicClosedForm, r.open_invariant())))
            } else if is_canonical_cone(q) && p >= 2 {
                conical_theta_decompose(th, p)
                    .ok()
                    .filter(|d| d.is_pure_zeta())
                    .map(|_| check_cone_admissibility(&model.drift, p, p).map(|r| (DriftCheckMethod::ConeClosedForm, r.admissible())))
            } else {
                None
            }
        }
        BoundaryFunctional::ProductOfAffine(fs) => is_canonical_orthant(fs, model)
            .then(|| Ok((DriftCheckMethod::OrthantClosedForm, check_open_orthant_invariance(&model.drift).iter().all(|&b| b)))),
    }
    .transpose()?;
    let (method, passed) = closed.unwrap_or((DriftCheckMethod::Sampled, sampled_ok));
    Ok(OpenInvarianceReport {
        v,
        phiv_residual: residual,
        method,
        passed,
        sampled_min,
        sampled_points: points.len(),
        witness: (sampled_min < SAMPLE_TOL).then(|| points[witness].clone()),
        sampled_only: method == DriftCheckMethod::Sampled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine_core::{AffineMatrixField, AffineVectorField, Polyhedron, QuadraticSpace, Side, StateSpace};
    use crate::quadratic::conical::cone_zeta;
    use nalgebra::DMatrix;

    fn cone_model(b: &[f64]) -> ModelSpec {
        let phi = QuadraticForm::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0, -1.0])), DVector::zeros(3), 0.0).unwrap();
        ModelSpec::new(
            AffineVectorField::new(DMatrix::zeros(3, 3), DVector::from_row_slice(b)).unwrap(),
            cone_zeta(3),
            StateSpace::Quadratic(QuadraticSpace {
                phi,
                component: Side::Positive,
                closed: false,
                halfspace: Some(AffineScalar::from_slice(&[1.0, 0.0, 0.0], 0.0)),
            }),
        )
        .unwrap()
    }

    #[test]
    fn halton_is_deterministic_and_spread() {
        let a = halton_points(2, 1000, 1.0);
        assert_eq!(a, halton_points(2, 1000, 1.0));
        let q1 = a.iter().filter(|x| x[0] > 0.0 && x[1] > 0.0).count();
        assert!((200..300).contains(&q1));
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
    }

    #[test]
    fn orthant_product_has_unit_v() {
        let p = 3;
        let mut th = AffineMatrixField::zero(p, p);
        for k in 0..p {
            th.a[k][(k, k)] = 1.0;
        }
        let model = ModelSpec::new(
            AffineVectorField::new(-DMatrix::identity(p, p), DVector::from_element(p, 1.0)).unwrap(),
            th,
            StateSpace::Polyhedral(Polyhedron::canonical(p, p)),
        )
        .unwrap();
        let fs: Vec<AffineScalar> = (0..p)
            .map(|i| {
                let mut g = DVector::zeros(p);
                g[i] = 1.0;
                AffineScalar::new(g, 0.0)
            })
            .collect();
        let r = check_open_invariance_general(&BoundaryFunctional::ProductOfAffine(fs), &model).unwrap();
        for v in &r.v {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert_eq!(r.method, DriftCheckMethod::OrthantClosedForm);
        assert!(r.passed);
    }

    #[test]
    fn cone_v_and_closed_form() {
        let model = cone_model(&[2.0, 0.0, 0.0]);
        let phi = BoundaryFunctional::Quadric(model.quadratic().unwrap().phi.clone());
        let r = check_open_invariance_general(&phi, &model).unwrap();
        assert!((r.v[0] - 2.0).abs() < 1e-12 && r.v[1].abs() < 1e-12 && r.v[2].abs() < 1e-12);
        assert_eq!(r.method, DriftCheckMethod::ConeClosedForm);
        assert!(r.passed);
        // closed form is sufficient: the sampled minimum must agree
        assert!(r.sampled_min >= SAMPLE_TOL);
        let r = check_open_invariance_general(&phi, &cone_model(&[1.0, 0.0, 0.0])).unwrap();
        assert!(!r.passed);
        assert!(r.sampled_min < 0.0);
    }

    #[test]
    fn constant_theta_has_no_v() {
        let phi = QuadraticForm::new(DMatrix::identity(2, 2), DVector::zeros(2), -1.0).unwrap();
        let model = ModelSpec::new(
            AffineVectorField::zero(2),
            AffineMatrixField::constant(DMatrix::identity(2, 2), 2).unwrap(),
            StateSpace::Quadratic(QuadraticSpace {
                phi: phi.clone(),
                component: Side::Positive,
                closed: false,
                halfspace: None,
            }),
        )
        .unwrap();
        assert!(matches!(
            check_open_invariance_general(&BoundaryFunctional::Quadric(phi), &model),
            Err(Error::PhiVMismatch(_))
        ));
    }
}
