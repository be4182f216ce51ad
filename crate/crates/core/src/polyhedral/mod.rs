//! Polyhedral state spaces: boundary admissibility, the canonical block
//! transform and its square root, PSD facet decompositions, diagonalization
//! by dimension extension and classical (diagonal-factor) models.

mod canonical;
mod classical;
mod decompose;
mod extend;

pub use canonical::{build_square_root, canonical_transform, canonical_transform_with, CanonicalTransform, PolyhedralRoot};
pub use classical::{check_classical, check_open_orthant_invariance, ClassicalModel, ClassicalReport};
pub use decompose::{
    check_triangle_condition, psd_decompose, psd_decompose_with, DecompositionRoute, PsdFacetDecomposition,
};
pub use extend::{diagonalize_extended, ExtendedModel};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::affine_core::{AffineScalar, ModelSpec, Polyhedron, Tolerances};
use crate::convex_oracle::{self, FarkasCertificate};
use crate::error::{Error, Result};

pub(crate) fn require_polyhedron(model: &ModelSpec) -> Result<&Polyhedron> {
    model
        .polyhedron()
        .ok_or_else(|| Error::PreconditionFailed("state space is not polyhedral".into()))
}

/// Minimal version of the model's polyhedron.
pub(crate) fn minimal_polyhedron(model: &ModelSpec) -> Result<Polyhedron> {
    let poly = require_polyhedron(model)?;
    Ok(if poly.minimal {
        poly.clone()
    } else {
        convex_oracle::minimalize(poly)
    })
}

/// Outcome of the boundary checks on one facet.
#[derive(Debug, Clone, Serialize)]
pub struct FacetCheck {
    pub facet: usize,
    /// `gamma_i theta gamma_i^T = lambda u_i` with `lambda >= 0` and the whole
    /// row `gamma_i theta` vanishing on the facet.
    pub diffusion_ok: bool,
    pub diffusion_multiple: Option<f64>,
    pub diffusion_detail: Option<String>,
    pub diffusion_witness: Option<Vec<f64>>,
    pub diffusion_margin: Option<f64>,
    /// `gamma_i mu >= 0` on the facet.
    pub drift_ok: bool,
    pub drift_certificate: Option<FarkasCertificate>,
    pub drift_witness: Option<Vec<f64>>,
    pub drift_margin: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilityReport {
    /// Facets of the input before redundancy removal.
    pub input_facets: usize,
    /// Indices (into the input) of the facets kept by redundancy removal.
    pub kept_facets: Vec<usize>,
    pub interior_point: Vec<f64>,
    pub facets: Vec<FacetCheck>,
}

impl AdmissibilityReport {
    pub fn diffusion_admissible(&self) -> bool {
        self.facets.iter().all(|f| f.diffusion_ok)
    }

    pub fn drift_admissible(&self) -> bool {
        self.facets.iter().all(|f| f.drift_ok)
    }

    pub fn admissible(&self) -> bool {
        self.diffusion_admissible() && self.drift_admissible()
    }
}

/// Maps the rows of a minimalized polyhedron back to input indices.
fn kept_indices(input: &Polyhedron, minimal: &Polyhedron) -> Vec<usize> {
    let mut used = vec![false; input.nfacets()];
    (0..minimal.nfacets())
        .map(|i| {
            let j = (0..input.nfacets())
                .find(|&j| !used[j] && input.gamma.row(j) == minimal.gamma.row(i) && input.delta[j] == minimal.delta[i])
                .unwrap_or(i);
            used[j] = true;
            j
        })
        .collect()
}

/// Boundary conditions on each facet: the diffusion row `gamma_i theta`
/// vanishes on the facet and `gamma_i mu >= 0` there.
pub fn check_polyhedral_admissibility(model: &ModelSpec) -> Result<AdmissibilityReport> {
    check_polyhedral_admissibility_with(model, &Tolerances::default())
}

pub fn check_polyhedral_admissibility_with(model: &ModelSpec, tol: &Tolerances) -> Result<AdmissibilityReport> {
    let input = require_polyhedron(model)?;
    let poly = minimal_polyhedron(model)?;
    let x0 = convex_oracle::interior_point(&poly).ok_or(Error::InteriorEmpty)?;
    let p = model.dimension;
    let mut facets = Vec::with_capacity(poly.nfacets());
    for i in 0..poly.nfacets() {
        let g = poly.gamma.row(i).transpose();
        let mut check = FacetCheck {
            facet: i,
            diffusion_ok: true,
            diffusion_multiple: None,
            diffusion_detail: None,
            diffusion_witness: None,
            diffusion_margin: None,
            drift_ok: false,
            drift_certificate: None,
            drift_witness: None,
            drift_margin: None,
        };
        let quad = model.diffusion.bilinear(&g, &g);
        match convex_oracle::detect_facet_multiple(&quad, &poly, i) {
            Ok(lam) if lam >= -tol.membership => check.diffusion_multiple = Some(lam.max(0.0)),
            Ok(lam) => {
                check.diffusion_ok = false;
                check.diffusion_multiple = Some(lam);
                check.diffusion_margin = Some(lam);
                check.diffusion_detail = Some("gamma theta gamma^T is a negative multiple of u_i".into());
            }
            Err(e) => fail_diffusion(&mut check, &quad, &poly, i, e),
        }
        if check.diffusion_ok {
            for l in 0..p {
                let mut e = DVector::zeros(p);
                e[l] = 1.0;
                let comp = model.diffusion.bilinear(&g, &e);
                if let Err(err) = convex_oracle::detect_facet_multiple(&comp, &poly, i) {
                    fail_diffusion(&mut check, &comp, &poly, i, err);
                    check.diffusion_detail = Some(format!(
                        "component {l} of gamma_i theta does not vanish on the facet: {}",
                        check.diffusion_detail.take().unwrap_or_default()
                    ));
                    break;
                }
            }
        }
        let d = model.drift.project(&g);
        match convex_oracle::facet_relative_decompose(&d, &poly, i) {
            Ok(cert) => {
                check.drift_ok = true;
                check.drift_certificate = Some(cert);
            }
            Err(Error::NotNonnegativeOnFacet { witness, value, .. }) => {
                check.drift_witness = Some(witness);
                check.drift_margin = Some(value);
            }
            Err(e) => return Err(e),
        }
        facets.push(check);
    }
    Ok(AdmissibilityReport {
        input_facets: input.nfacets(),
        kept_facets: kept_indices(input, &poly),
        interior_point: x0.iter().copied().collect(),
        facets,
    })
}

fn fail_diffusion(check: &mut FacetCheck, f: &AffineScalar, poly: &Polyhedron, i: usize, err: Error) {
    check.diffusion_ok = false;
    check.diffusion_detail = Some(err.to_string());
    // A point on the facet where the functional is nonzero.
    for s in [1.0, -1.0] {
        if let Ok(Some((x, v))) = convex_oracle::minimize_over(&f.scaled(s), poly, Some(i)) {
            if v < 0.0 {
                check.diffusion_witness = Some(x);
                check.diffusion_margin = Some(s * v);
                return;
            }
        }
    }
}

/// `gamma mu(x) = a_bar u(x) + b_bar` with nonnegative off-diagonal
/// `a_bar` and nonnegative `b_bar`, assembled from facet certificates.
pub fn lift_drift(model: &ModelSpec) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let poly = require_polyhedron(model)?;
    let q = poly.nfacets();
    let mut a_bar = DMatrix::zeros(q, q);
    let mut b_bar = DVector::zeros(q);
    for i in 0..q {
        let d = model.drift.project(&poly.gamma.row(i).transpose());
        let cert = convex_oracle::facet_relative_decompose(&d, poly, i).map_err(|e| match e {
            Error::NotNonnegativeOnFacet { facet, value, .. } => {
                Error::NotAdmissible(format!("drift points outward on facet {facet} (margin {value:.3e})"))
            }
            other => other,
        })?;
        for j in 0..q {
            a_bar[(i, j)] = cert.lambda[j];
        }
        b_bar[i] = cert.c;
    }
    let lhs_a = &poly.gamma * &model.drift.a;
    let lhs_b = &poly.gamma * &model.drift.b;
    let res = (lhs_a - &a_bar * &poly.gamma)
        .amax()
        .max((lhs_b - &a_bar * &poly.delta - &b_bar).amax());
    let scale = 1.0 + model.drift.a.amax().max(model.drift.b.amax()) * (1.0 + poly.gamma.amax());
    if res > convex_oracle::CERT_TOL * scale {
        return Err(Error::ReconstructionMismatch(res));
    }
    Ok((a_bar, b_bar))
}


#[cfg(test)]
mod tests {
    use super::test_models::*;
    use super::*;
    use crate::affine_core::{AffineMatrixField, AffineVectorField, StateSpace};

    #[test]
    fn cir_is_admissible() {
        let r = check_polyhedral_admissibility(&cir(-1.0, 1.0)).unwrap();
        assert!(r.admissible());
        assert!(r.facets[0].drift_certificate.is_some());
    }

    #[test]
    fn cir_with_outward_drift() {
        let r = check_polyhedral_admissibility(&cir(-1.0, -1.0)).unwrap();
        assert!(r.diffusion_admissible());
        assert!(!r.drift_admissible());
        let w = r.facets[0].drift_witness.as_ref().unwrap();
        assert!(w[0].abs() < 1e-9);
        assert!((r.facets[0].drift_margin.unwrap() + 1.0).abs() < 1e-9);
    }

    #[test]
    fn triangle_example_is_admissible() {
        let r = check_polyhedral_admissibility(&triangle_example()).unwrap();
        assert!(r.admissible(), "{r:#?}");
    }

    #[test]
    fn hyperbola_example_fails_diffusion_condition() {
        // theta is positive definite on the whole polyhedron, so the facets
        // cannot be boundaries of an affine diffusion.
        let r = check_polyhedral_admissibility(&hyperbola_example()).unwrap();
        assert!(!r.diffusion_admissible());
        assert!(r.facets.iter().all(|f| f.diffusion_witness.is_some()));
    }

    #[test]
    fn lift_cir() {
        let (a, b) = lift_drift(&cir(-1.0, 1.0)).unwrap();
        assert!((a[(0, 0)] + 1.0).abs() < 1e-10 && (b[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn lift_orthant_swap() {
        let m = ModelSpec::new(
            AffineVectorField::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), DVector::zeros(2)).unwrap(),
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
        let (a, b) = lift_drift(&m).unwrap();
        assert!((a - DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).amax() < 1e-10);
        assert!(b.amax() < 1e-10);
    }

    #[test]
    fn lift_triangle_signs() {
        let m = triangle_example();
        let (a, b) = lift_drift(&m).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(a[(i, j)] >= 0.0);
                }
            }
            assert!(b[i] >= 0.0);
        }
    }
}
