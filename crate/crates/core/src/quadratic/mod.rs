//! Quadratic state spaces: classification, parabolic and conical
//! decompositions, square roots and drift conditions.

pub mod classify;
pub mod conical;
pub mod invariance;
pub mod lemma;
pub mod parabolic;
pub mod poly;

pub use classify::{canonical_quadratic_model, classify_quadric, QuadricClassification, QuadricKind, QuadricSubtype};
pub use conical::{
    check_cone_admissibility, conical_basis, conical_space_dimension, conical_theta_decompose, cone_rho, cone_zeta,
    ConeAdmissibilityReport, ConeRoot, ConicalDecomposition,
};
pub use invariance::{check_open_invariance_general, BoundaryFunctional, DriftCheckMethod, OpenInvarianceReport};
pub use lemma::{theta_zero_nullity, verify_theta_zero_lemma};
pub use parabolic::{
    check_parabolic_drift, check_parabolic_psd_condition, normalize_parabolic, parabolic_basis, parabolic_kernel_dimension,
    parabolic_sample_points, parabolic_square_root, parabolic_theta_decompose, ParabolicDecomposition, ParabolicDriftReport,
    ParabolicRoot, PsdConditionReport,
};

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::affine_core::{matrix_to_rows, ModelSpec, QuadraticForm, Side};
use crate::error::{Error, Result};

/// Change of coordinates `Y = l X + ell`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub l: DMatrix<f64>,
    pub l_inv: DMatrix<f64>,
    pub ell: DVector<f64>,
}

impl AffineMap {
    pub fn new(l: DMatrix<f64>, ell: DVector<f64>) -> Result<Self> {
        let l_inv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::RankDeficiency("coordinate map is singular".into()))?;
        Ok(Self { l, l_inv, ell })
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &AffineMap) -> Self {
        Self {
            l: &self.l * &first.l,
            l_inv: &first.l_inv * &self.l_inv,
            ell: &self.l * &first.ell + &self.ell,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (&self.l * DVector::from_row_slice(x) + &self.ell).as_slice().to_vec()
    }

    pub fn backward(&self, y: &[f64]) -> Vec<f64> {
        (&self.l_inv * (DVector::from_row_slice(y) - &self.ell)).as_slice().to_vec()
    }

    /// Square root in `X`-coordinates from one in `Y`-coordinates.
    pub fn pull_sigma(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        &self.l_inv * s
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({"L": matrix_to_rows(&self.l), "ell": self.ell.as_slice()})
    }
}

#[derive(Debug, Clone)]
pub enum QuadraticDecomposition {
    Parabolic(ParabolicDecomposition),
    Conical(ConicalDecomposition),
}

impl QuadraticDecomposition {
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            QuadraticDecomposition::Parabolic(d) => d.to_json(),
            QuadraticDecomposition::Conical(d) => d.to_json(),
        }
    }
}

/// Result of the admissibility suite for a quadratic state space.
#[derive(Debug, Clone)]
pub struct QuadraticValidation {
    pub classification: QuadricClassification,
    /// Original coordinates to the coordinates of `normalized_model`.
    pub map: AffineMap,
    pub normalized_model: ModelSpec,
    pub decomposition: std::result::Result<QuadraticDecomposition, Error>,
    pub psd: Option<PsdConditionReport>,
    pub parabolic_drift: Option<ParabolicDriftReport>,
    pub cone: Option<ConeAdmissibilityReport>,
    pub open_invariance: Option<std::result::Result<OpenInvarianceReport, Error>>,
    /// For excluded quadrics: whether theta vanishes identically.
    pub theta_is_zero: Option<bool>,
    pub notes: Vec<String>,
}

impl QuadraticValidation {
    fn side_positive(&self) -> bool {
        self.normalized_model.quadratic().is_some_and(|q| q.component == Side::Positive)
    }

    fn is_closed(&self) -> bool {
        self.normalized_model.quadratic().is_some_and(|q| q.closed)
    }

    pub fn admissible(&self) -> bool {
        match self.classification.subtype {
            QuadricSubtype::Parabolic => {
                let drift_ok = self.parabolic_drift.as_ref().is_some_and(|r| {
                    if self.is_closed() {
                        r.closed_admissible()
                    } else {
                        r.open_invariant()
                    }
                });
                self.side_positive() && self.decomposition.is_ok() && self.psd.as_ref().is_some_and(|r| r.passed) && drift_ok
            }
            QuadricSubtype::Cone => {
                !self.is_closed() && self.side_positive() && self.cone.as_ref().is_some_and(ConeAdmissibilityReport::admissible)
            }
            QuadricSubtype::Excluded => self.theta_is_zero == Some(true),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "classification": self.classification.to_json(),
            "map": self.map.to_json(),
            "decomposition": match &self.decomposition {
                Ok(d) => d.to_json(),
                Err(e) => json!({"error": e.to_string()}),
            },
            "psd_condition": self.psd,
            "parabolic_drift": self.parabolic_drift,
            "cone_admissibility": self.cone,
            "open_invariance": match &self.open_invariance {
                None => serde_json::Value::Null,
                Some(Ok(r)) => serde_json::to_value(r).expect("report serializes"),
                Some(Err(e)) => json!({"error": e.to_string()}),
            },
            "theta_is_zero": self.theta_is_zero,
            "admissible": self.admissible(),
            "notes": self.notes,
        })
    }
}

fn max_field(model: &ModelSpec) -> f64 {
    model.diffusion.coeff_scale()
}

/// Classify, move to canonical coordinates, normalize and run the checks
/// that apply to the quadric's subtype.
pub fn validate_quadratic(model: &ModelSpec) -> Result<QuadraticValidation> {
    let (cls, canon) = canonical_quadratic_model(model)?;
    let p = model.dimension;
    let base = AffineMap::new(cls.t.clone(), cls.shift.clone())?;
    let mut notes = Vec::new();
    let mut out = QuadraticValidation {
        classification: cls.clone(),
        map: base.clone(),
        normalized_model: canon.clone(),
        decomposition: Err(Error::PreconditionFailed("no decomposition for this quadric".into())),
        psd: None,
        parabolic_drift: None,
        cone: None,
        open_invariance: None,
        theta_is_zero: None,
        notes: Vec::new(),
    };
    if canon.quadratic().is_some_and(|q| q.component == Side::Negative) && cls.subtype != QuadricSubtype::Excluded {
        notes.push("state space is the non-convex side of the quadric".to_string());
    }
    match (cls.subtype, cls.kind) {
        (QuadricSubtype::Parabolic, QuadricKind::Parabolic { q }) => {
            match parabolic_theta_decompose(&canon.diffusion, q) {
                Err(e) => out.decomposition = Err(e),
                Ok(dec) if dec.c <= 1e-10 => {
                    notes.push("parabolic block is zero; normalization skipped".to_string());
                    out.decomposition = Ok(QuadraticDecomposition::Parabolic(dec));
                }
                Ok(dec) => {
                    let (k, nm, nd) = normalize_parabolic(&canon, &dec)?;
                    let kmap = AffineMap::new(k, DVector::zeros(p))?;
                    out.map = kmap.compose(&base);
                    let pts = parabolic_sample_points(p, q, 200, 0x5eed);
                    out.psd = Some(check_parabolic_psd_condition(&nd, &pts)?);
                    out.parabolic_drift = Some(check_parabolic_drift(&nm.drift, q)?);
                    if !nm.quadratic().is_some_and(|s| s.closed) {
                        out.open_invariance = Some(check_open_invariance_general(
                            &BoundaryFunctional::Quadric(cls.kind.canonical_form(p)),
                            &nm,
                        ));
                    }
                    out.normalized_model = nm;
                    out.decomposition = Ok(QuadraticDecomposition::Parabolic(nd));
                }
            }
        }
        (QuadricSubtype::Cone, QuadricKind::ConeType { q, .. }) => {
            if q != p {
                notes.push(format!("conical models need p = q (p = {p}, q = {q})"));
            }
            match conical_theta_decompose(&canon.diffusion, q) {
                Err(e) => out.decomposition = Err(e),
                Ok(dec) => {
                    let mut nm = canon.clone();
                    let mut ndec = dec.clone();
                    if dec.coeff_rho.iter().all(|c| c.abs() <= 1e-9) && dec.coeff_zeta > 1e-10 && (dec.coeff_zeta - 1.0).abs() > 1e-12 {
                        // theta = c zeta: Y = X / c gives theta = zeta.
                        let s = DMatrix::identity(p, p) / dec.coeff_zeta;
                        let smap = AffineMap::new(s.clone(), DVector::zeros(p))?;
                        nm = canon.transformed(&s, &DVector::zeros(p))?;
                        if let (Some(new), Some(old)) = (nm_quadratic_mut(&mut nm), canon.quadratic()) {
                            new.phi = old.phi.clone();
                            new.halfspace = old.halfspace.clone();
                        }
                        out.map = smap.compose(&base);
                        ndec = conical_theta_decompose(&nm.diffusion, q)?;
                    }
                    if ndec.is_pure_zeta() {
                        out.cone = Some(check_cone_admissibility(&nm.drift, p, q)?);
                        out.open_invariance = Some(check_open_invariance_general(
                            &BoundaryFunctional::Quadric(cls.kind.canonical_form(p)),
                            &nm,
                        ));
                    } else {
                        notes.push("theta is not a multiple of zeta; only open cones with theta = zeta are checked".to_string());
                    }
                    if nm.quadratic().is_some_and(|s| s.closed) {
                        notes.push("closed conical state spaces are not supported".to_string());
                    }
                    out.normalized_model = nm;
                    out.decomposition = Ok(QuadraticDecomposition::Conical(ndec));
                }
            }
        }
        _ => {
            let zero = max_field(model) <= 1e-12;
            out.theta_is_zero = Some(zero);
            notes.push("for this quadric only theta = 0 is compatible with invariance; the drift flow is not checked".to_string());
        }
    }
    out.notes = notes;
    Ok(out)
}

fn nm_quadratic_mut(m: &mut ModelSpec) -> Option<&mut crate::affine_core::QuadraticSpace> {
    match &mut m.state_space {
        crate::affine_core::StateSpace::Quadratic(q) => Some(q),
        _ => None,
    }
}

/// Square root for a quadratic model, in its original coordinates.
#[derive(Debug, Clone)]
pub enum QuadraticRoot {
    Parabolic(ParabolicRoot),
    Cone(ConeRoot),
}

pub fn quadratic_root(model: &ModelSpec) -> Result<QuadraticRoot> {
    let v = validate_quadratic(model)?;
    let p = model.dimension;
    let identity = v.map.l == DMatrix::identity(p, p) && v.map.ell.iter().all(|&e| e == 0.0);
    let outer = (!identity).then_some(v.map);
    match v.decomposition {
        Ok(QuadraticDecomposition::Parabolic(dec)) => {
            let pts = parabolic_sample_points(model.dimension, dec.q, 200, 0x5eed);
            let mut root = parabolic_square_root(&dec, &pts)?;
            root.outer = outer;
            Ok(QuadraticRoot::Parabolic(root))
        }
        Ok(QuadraticDecomposition::Conical(dec)) if dec.is_pure_zeta() => Ok(QuadraticRoot::Cone(ConeRoot {
            q: dec.q,
            outer,
        })),
        Ok(QuadraticDecomposition::Conical(_)) => Err(Error::PreconditionFailed(
            "square roots are available only for theta = zeta on cones".into(),
        )),
        Err(e) => Err(e),
    }
}

/// Canonical parabola `x_1 - sum_{0<i<q} x_i^2` in `p` variables.
pub fn canonical_parabola(p: usize, q: usize) -> QuadraticForm {
    QuadricKind::Parabolic { q }.canonical_form(p)
}

/// Canonical cone `x_1^2 - sum_{i>0} x_i^2` in `p` variables.
pub fn canonical_cone(p: usize) -> QuadraticForm {
    QuadricKind::ConeType { q: p, d: 0.0 }.canonical_form(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine_core::{AffineMatrixField, AffineScalar, AffineVectorField, QuadraticSpace, StateSpace};
    use crate::linalg;

    fn parabola_model(b: &[f64], closed: bool) -> ModelSpec {
        // p = q = 2, theta = zeta, Phi = x1 - x2^2
        let mut th = AffineMatrixField::zero(2, 2);
        th.a0[(1, 1)] = 1.0;
        th.a[0][(0, 0)] = 4.0;
        th.a[1][(0, 1)] = 2.0;
        th.a[1][(1, 0)] = 2.0;
        ModelSpec::new(
            AffineVectorField::new(DMatrix::zeros(2, 2), DVector::from_row_slice(b)).unwrap(),
            th,
            StateSpace::Quadratic(QuadraticSpace {
                phi: canonical_parabola(2, 2),
                component: Side::Positive,
                closed,
                halfspace: None,
            }),
        )
        .unwrap()
    }

    #[test]
    fn affine_map_round_trip() {
        let m = AffineMap::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]), DVector::from_vec(vec![1.0, -1.0])).unwrap();
        let x = [0.3, -0.7];
        let back = m.backward(&m.forward(&x));
        assert!((back[0] - x[0]).abs() < 1e-15 && (back[1] - x[1]).abs() < 1e-15);
        let c = m.compose(&m);
        let direct = m.forward(&m.forward(&x));
        let comp = c.forward(&x);
        assert!((direct[0] - comp[0]).abs() < 1e-14 && (direct[1] - comp[1]).abs() < 1e-14);
    }

    #[test]
    fn parabola_validation() {
        let v = validate_quadratic(&parabola_model(&[1.0, 0.0], true)).unwrap();
        assert!(v.admissible());
        let v = validate_quadratic(&parabola_model(&[1.0, 0.0], false)).unwrap();
        assert!(!v.admissible());
        let v = validate_quadratic(&parabola_model(&[3.0, 0.0], false)).unwrap();
        assert!(v.admissible());
        let oi = v.open_invariance.unwrap().unwrap();
        assert_eq!(oi.method, DriftCheckMethod::ParabolicClosedForm);
    }

    #[test]
    fn shifted_parabola_root_reproduces_theta() {
        // Pull the canonical model back through an affine map and recover it.
        let base = parabola_model(&[1.0, 0.0], true);
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.25, 2.0]);
        let ell = DVector::from_vec(vec![0.3, -0.2]);
        let m = AffineMap::new(l, ell).unwrap();
        let model = base.transformed(&m.l_inv, &(-(&m.l_inv * &m.ell))).unwrap();
        let v = validate_quadratic(&model).unwrap();
        assert!(v.admissible(), "{:?}", v.notes);
        let QuadraticRoot::Parabolic(root) = quadratic_root(&model).unwrap() else {
            panic!("expected a parabolic root");
        };
        let qs = model.quadratic().unwrap();
        for x in [[1.0, 0.2], [2.0, -0.5], [0.1, 3.0]] {
            if !qs.contains(&x, 0.0) {
                continue;
            }
            let s = root.sigma_x(&x);
            assert!(linalg::max_abs(&(&s * s.transpose() - model.diffusion.eval(&x))) < 1e-9);
        }
    }

    #[test]
    fn scaled_cone_is_normalized() {
        let mut th = cone_zeta(3);
        th.a0 *= 2.0;
        for a in &mut th.a {
            *a *= 2.0;
        }
        let model = ModelSpec::new(
            AffineVectorField::new(DMatrix::zeros(3, 3), DVector::from_vec(vec![4.0, 0.0, 0.0])).unwrap(),
            th,
            StateSpace::Quadratic(QuadraticSpace {
                phi: canonical_cone(3),
                component: Side::Positive,
                closed: false,
                halfspace: Some(AffineScalar::from_slice(&[1.0, 0.0, 0.0], 0.0)),
            }),
        )
        .unwrap();
        let v = validate_quadratic(&model).unwrap();
        assert!(v.cone.is_some());
        assert!(v.admissible());
        let QuadraticRoot::Cone(root) = quadratic_root(&model).unwrap() else {
            panic!("expected a cone root");
        };
        let x = [2.0, 0.5, -0.3];
        let s = root.sigma_x(&x);
        assert!(linalg::max_abs(&(&s * s.transpose() - model.diffusion.eval(&x))) < 1e-9);
    }

    #[test]
    fn sphere_is_excluded() {
        let phi = QuadraticForm::new(DMatrix::identity(2, 2) * -1.0, DVector::zeros(2), 1.0).unwrap();
        let model = ModelSpec::new(
            AffineVectorField::zero(2),
            AffineMatrixField::zero(2, 2),
            StateSpace::Quadratic(QuadraticSpace {
                phi,
                component: Side::Positive,
                closed: true,
                halfspace: None,
            }),
        )
        .unwrap();
        let v = validate_quadratic(&model).unwrap();
        assert_eq!(v.classification.subtype, QuadricSubtype::Excluded);
        assert_eq!(v.theta_is_zero, Some(true));
    }
}
