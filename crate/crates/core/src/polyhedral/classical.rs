use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::require_polyhedron;
use crate::affine_core::{AffineScalar, AffineVectorField, ModelSpec};
use crate::convex_oracle;
use crate::error::{Error, Result};
use crate::linalg;

/// `theta(x) = Sigma diag(beta x + alpha) Sigma^T`.
#[derive(Debug, Clone)]
pub struct ClassicalModel {
    pub sigma: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub alpha: DVector<f64>,
}

impl ClassicalModel {
    pub fn v(&self, x: &[f64]) -> DVector<f64> {
        &self.beta * DVector::from_row_slice(x) + &self.alpha
    }

    pub fn v_component(&self, j: usize) -> AffineScalar {
        AffineScalar::new(self.beta.row(j).transpose(), self.alpha[j])
    }

    /// `Sigma diag(sqrt|v(x)|)`.
    pub fn sigma_at(&self, x: &[f64]) -> DMatrix<f64> {
        let v = self.v(x).map(|t| t.abs().sqrt());
        &self.sigma * DMatrix::from_diagonal(&v)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassicalReport {
    pub reconstruction_residual: f64,
    /// Index of the component of `v` positively proportional to each facet.
    pub facet_v: Vec<Option<usize>>,
    /// Per facet: `beta_i Sigma^j = 0` or `v_j` a positive multiple of `v_i`, for all `j`.
    pub w1: Vec<bool>,
    /// Per facet: `beta_i (a x + b) >= 0` on the facet.
    pub w2: Vec<bool>,
    /// Per facet: `beta_i (a x + b) >= beta_i Sigma Sigma^T beta_i^T / 2` on the facet.
    pub feller: Vec<bool>,
    /// Largest smallest eigenvalue of theta over sampled interior points.
    pub max_min_eigenvalue: f64,
    pub theta_positive_somewhere: bool,
}

impl ClassicalReport {
    pub fn admissible(&self) -> bool {
        self.facet_v.iter().all(Option::is_some) && self.w1.iter().all(|&b| b) && self.w2.iter().all(|&b| b)
    }

    pub fn open_interior_invariant(&self) -> bool {
        self.admissible() && self.feller.iter().all(|&b| b)
    }
}

/// Positive `c` with `a = c b`, if any.
fn positive_multiple(a: &AffineScalar, b: &AffineScalar) -> Option<f64> {
    let (ac, bc) = (a.coeffs(), b.coeffs());
    let bn = bc.norm_squared();
    if bn == 0.0 {
        return None;
    }
    let c = ac.dot(&bc) / bn;
    let res = (&ac - &bc * c).amax();
    (c > 0.0 && res <= 1e-10 * (1.0 + ac.amax())).then_some(c)
}

pub fn check_classical(model: &ModelSpec, cm: &ClassicalModel) -> Result<ClassicalReport> {
    let poly = require_polyhedron(model)?;
    let p = model.dimension;
    if cm.sigma.shape() != (p, p) || cm.beta.shape() != (p, p) || cm.alpha.len() != p {
        return Err(Error::DimensionMismatch("classical model must be p x p, p x p, p".into()));
    }
    let st = cm.sigma.transpose();
    let mut residual = linalg::max_abs(&(&cm.sigma * DMatrix::from_diagonal(&cm.alpha) * &st - &model.diffusion.a0));
    for k in 0..p {
        let col = cm.beta.column(k).into_owned();
        let ak = &cm.sigma * DMatrix::from_diagonal(&col) * &st;
        residual = residual.max(linalg::max_abs(&(ak - &model.diffusion.a[k])));
    }
    if residual > 1e-10 * (1.0 + model.diffusion.coeff_scale()) {
        return Err(Error::ReconstructionMismatch(residual));
    }
    let x0 = convex_oracle::interior_point(poly).ok_or(Error::InteriorEmpty)?;

    let q = poly.nfacets();
    let comps: Vec<AffineScalar> = (0..p).map(|j| cm.v_component(j)).collect();
    let sst = &cm.sigma * &st;
    let mut facet_v = Vec::with_capacity(q);
    let (mut w1, mut w2, mut feller) = (Vec::new(), Vec::new(), Vec::new());
    for f in 0..q {
        let uf = poly.facet(f);
        let Some(i) = (0..p).find(|&j| positive_multiple(&comps[j], &uf).is_some()) else {
            facet_v.push(None);
            w1.push(false);
            w2.push(false);
            feller.push(false);
            continue;
        };
        facet_v.push(Some(i));
        let bi = cm.beta.row(i).transpose();
        let scale = 1.0 + bi.amax() * (1.0 + cm.sigma.amax());
        w1.push((0..p).all(|j| {
            bi.dot(&cm.sigma.column(j)).abs() <= 1e-10 * scale || positive_multiple(&comps[j], &comps[i]).is_some()
        }));
        let drift = AffineScalar::new(model.drift.a.transpose() * &bi, bi.dot(&model.drift.b));
        w2.push(convex_oracle::facet_relative_decompose(&drift, poly, f).is_ok());
        let half = 0.5 * bi.dot(&(&sst * &bi));
        let strong = AffineScalar::new(drift.gamma.clone(), drift.delta - half);
        feller.push(convex_oracle::facet_relative_decompose(&strong, poly, f).is_ok());
    }

    // Interior samples: the center and random points pulled toward it.
    let mut rng = ChaCha8Rng::seed_from_u64(0xc1a5);
    let mut best = linalg::min_eigenvalue(&model.diffusion.eval(x0.as_slice()));
    for _ in 0..200 {
        let dir: DVector<f64> = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        let mut t = 10.0;
        let mut x = &x0 + &dir * t;
        while !poly.contains(x.as_slice(), 0.0) && t > 1e-6 {
            t *= 0.5;
            x = &x0 + &dir * t;
        }
        if poly.contains(x.as_slice(), 0.0) {
            best = best.max(linalg::min_eigenvalue(&model.diffusion.eval(x.as_slice())));
        }
    }
    Ok(ClassicalReport {
        reconstruction_residual: residual,
        facet_v,
        w1,
        w2,
        feller,
        max_min_eigenvalue: best,
        theta_positive_somewhere: best > 1e-12,
    })
}

/// For the canonical orthant model `theta = diag(x)`: coordinate `i` passes
/// when `a_ij >= 0` for `j != i` and `b_i >= 1/2`.
pub fn check_open_orthant_invariance(drift: &AffineVectorField) -> Vec<bool> {
    let p = drift.dim();
    (0..p)
        .map(|i| (0..p).all(|j| j == i || drift.a[(i, j)] >= 0.0) && drift.b[i] >= 0.5)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::test_models::cir;
    use super::*;
    use crate::affine_core::{AffineMatrixField, Polyhedron, StateSpace};

    fn scalar_cm() -> ClassicalModel {
        ClassicalModel {
            sigma: DMatrix::from_element(1, 1, 1.0),
            beta: DMatrix::from_element(1, 1, 1.0),
            alpha: DVector::zeros(1),
        }
    }

    #[test]
    fn cir_feller_threshold() {
        let r = check_classical(&cir(-1.0, 1.0), &scalar_cm()).unwrap();
        assert_eq!(r.facet_v, vec![Some(0)]);
        assert!(r.w1[0] && r.w2[0] && r.feller[0]);
        assert!(r.theta_positive_somewhere);
        let r = check_classical(&cir(-1.0, 0.25), &scalar_cm()).unwrap();
        assert!(r.w2[0] && !r.feller[0]);
    }

    #[test]
    fn mismatched_classical_model() {
        let mut cm = scalar_cm();
        cm.sigma[(0, 0)] = 2.0;
        assert!(matches!(check_classical(&cir(-1.0, 1.0), &cm), Err(Error::ReconstructionMismatch(_))));
    }

    #[test]
    fn orthant_identity_sigma() {
        // Sigma = I, v = x on R^2_+ with coupled drift.
        let drift = AffineVectorField::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, -0.2, -1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        let model = ModelSpec::new(
            drift,
            AffineMatrixField::new(
                DMatrix::zeros(2, 2),
                vec![
                    DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
                    DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
                ],
            )
            .unwrap(),
            StateSpace::Polyhedral(Polyhedron::canonical(2, 2)),
        )
        .unwrap();
        let cm = ClassicalModel {
            sigma: DMatrix::identity(2, 2),
            beta: DMatrix::identity(2, 2),
            alpha: DVector::zeros(2),
        };
        let r = check_classical(&model, &cm).unwrap();
        assert!(r.w1.iter().all(|&b| b));
        // a_21 < 0 breaks the drift condition on the second facet.
        assert_eq!(r.w2, vec![true, false]);
        assert_eq!(check_open_orthant_invariance(&model.drift), vec![true, false]);
    }

    #[test]
    fn orthant_examples() {
        let f = |a: &[f64], b: &[f64]| {
            check_open_orthant_invariance(
                &AffineVectorField::new(DMatrix::from_row_slice(2, 2, a), DVector::from_row_slice(b)).unwrap(),
            )
        };
        assert_eq!(f(&[-1.0, 0.0, 0.0, -1.0], &[1.0, 1.0]), vec![true, true]);
        assert_eq!(f(&[-1.0, 0.0, 0.0, -1.0], &[0.5, 0.4]), vec![true, false]);
        assert_eq!(f(&[-1.0, -0.1, 0.0, -1.0], &[1.0, 1.0]), vec![false, true]);
    }
}
