//! Shared inputs for the criterion benches.

use affinv_core::quadratic::cone_zeta;
use affinv_core::{
    AffineMatrixField, AffineScalar, AffineVectorField, ModelSpec, Polyhedron, QuadraticForm, QuadraticSpace, Side,
    StateSpace,
};
use nalgebra::{DMatrix, DVector};

pub fn cir(a: f64, b: f64) -> ModelSpec {
    ModelSpec::new(
        AffineVectorField::new(DMatrix::from_element(1, 1, a), DVector::from_element(1, b)).unwrap(),
        AffineMatrixField::new(DMatrix::zeros(1, 1), vec![DMatrix::from_element(1, 1, 1.0)]).unwrap(),
        StateSpace::Polyhedral(Polyhedron::canonical(1, 1)),
    )
    .unwrap()
}

/// theta(x) = [[x1, 1], [1, x2]] on a three-facet polyhedron.
pub fn hyperbola() -> ModelSpec {
    let gamma = DMatrix::from_row_slice(3, 2, &[2.0, -1.0, -0.5, 1.0, 1.0, 1.0]);
    let delta = DVector::from_vec(vec![0.0, 0.0, -2.25]);
    ModelSpec::new(
        AffineVectorField::new(DMatrix::identity(2, 2) * -1.0, DVector::from_vec(vec![2.0, 2.0])).unwrap(),
        AffineMatrixField::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            vec![
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
                DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
            ],
        )
        .unwrap(),
        StateSpace::Polyhedral(Polyhedron::new(gamma, delta).unwrap()),
    )
    .unwrap()
}

/// Canonical model with `m = 1`, `n = 1` and a 1x1 block, pushed through a
/// fixed affine map.
pub fn pushed_forward() -> ModelSpec {
    let mut coeffs = vec![DMatrix::zeros(3, 3); 3];
    coeffs[0][(0, 0)] = 1.0;
    coeffs[0][(2, 2)] = 0.5;
    coeffs[1][(2, 2)] = 2.0;
    let mut a0 = DMatrix::zeros(3, 3);
    a0[(2, 2)] = 1.0;
    let canon = ModelSpec::new(
        AffineVectorField::zero(3),
        AffineMatrixField::new(a0, coeffs).unwrap(),
        StateSpace::Polyhedral(Polyhedron::canonical(2, 3)),
    )
    .unwrap();
    let g = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, -0.3, 0.2, 1.2, 0.1, -0.4, 0.3, 0.9]);
    let h = DVector::from_vec(vec![0.3, -0.7, 1.1]);
    canon.transformed(&g, &h).unwrap()
}

/// Lorentz cone model with theta = zeta and drift b = (b1, 0, ..., 0).
pub fn cone(q: usize, b1: f64) -> ModelSpec {
    let mut diag = vec![-1.0; q];
    diag[0] = 1.0;
    let mut b = DVector::zeros(q);
    b[0] = b1;
    let mut h = vec![0.0; q];
    h[0] = 1.0;
    ModelSpec::new(
        AffineVectorField::new(DMatrix::zeros(q, q), b).unwrap(),
        cone_zeta(q),
        StateSpace::Quadratic(QuadraticSpace {
            phi: QuadraticForm::new(DMatrix::from_diagonal(&DVector::from_vec(diag)), DVector::zeros(q), 0.0).unwrap(),
            component: Side::Positive,
            closed: false,
            halfspace: Some(AffineScalar::from_slice(&h, 0.0)),
        }),
    )
    .unwrap()
}
