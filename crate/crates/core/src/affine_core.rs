//! Value types shared by every module: affine functionals and fields,
//! state-space descriptors and the model description with its JSON form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative asymmetry absorbed by symmetrization on input.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Numeric thresholds used by the checks. The CLI `--tol` flag replaces them
/// uniformly through [`Tolerances::uniform`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Coefficient-level identity checks (certificates, fits).
    pub identity: f64,
    /// Relative PSD threshold: `min eig >= -psd (1 + |S|)`.
    pub psd: f64,
    /// Pointwise residual checks such as the block identity.
    pub residual: f64,
    /// Membership slack for `u(x) >= -membership`.
    pub membership: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            identity: 1e-8,
            psd: 1e-9,
            residual: 1e-9,
            membership: 1e-10,
        }
    }
}

impl Tolerances {
    pub fn uniform(tol: f64) -> Self {
        Self {
            identity: tol,
            psd: tol,
            residual: tol,
            membership: tol,
        }
    }
}

/// Affine functional `x -> gamma x + delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineScalar {
    pub gamma: DVector<f64>,
    pub delta: f64,
}

impl AffineScalar {
    pub fn new(gamma: DVector<f64>, delta: f64) -> Self {
        Self { gamma, delta }
    }

    pub fn from_slice(gamma: &[f64], delta: f64) -> Self {
        Self::new(DVector::from_row_slice(gamma), delta)
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.gamma.iter().zip(x).map(|(g, v)| g * v).sum::<f64>() + self.delta
    }

    /// Coefficient vector `(delta, gamma)`.
    pub fn coeffs(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim() + 1);
        v[0] = self.delta;
        v.rows_mut(1, self.dim()).copy_from(&self.gamma);
        v
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(&self.gamma * s, self.delta * s)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::new(&self.gamma - &other.gamma, self.delta - other.delta)
    }
}

/// Drift `mu(x) = a x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineVectorField {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl AffineVectorField {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "drift a is {}x{}, b has length {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn zero(p: usize) -> Self {
        Self {
            a: DMatrix::zeros(p, p),
            b: DVector::zeros(p),
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        let mut out = self.b.clone();
        for j in 0..self.dim() {
            out.axpy(x[j], &self.a.column(j), 1.0);
        }
        out
    }

    /// Writes `a x + b` into `out` without allocating.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let p = self.dim();
        for i in 0..p {
            let mut s = self.b[i];
            for j in 0..p {
                s += self.a[(i, j)] * x[j];
            }
            out[i] = s;
        }
    }

    /// Component `row . mu(x)` as an affine functional.
    pub fn project(&self, row: &DVector<f64>) -> AffineScalar {
        AffineScalar::new(self.a.transpose() * row, row.dot(&self.b))
    }
}

/// Diffusion matrix `theta(x) = A0 + sum_i A^i x_i` with symmetric coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrixField {
    pub a0: DMatrix<f64>,
    pub a: Vec<DMatrix<f64>>,
}

impl AffineMatrixField {
    /// Validates shapes and symmetry; near-symmetric inputs are symmetrized.
    pub fn new(a0: DMatrix<f64>, a: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = a0.nrows();
        let a0 = linalg::symmetrize_checked(&a0, SYMMETRY_TOL)?;
        let mut out = Vec::with_capacity(a.len());
        for (i, m) in a.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "A^{} is {}x{}, expected {n}x{n}",
                    i + 1,
                    m.nrows(),
                    m.ncols()
                )));
            }
            out.push(linalg::symmetrize_checked(m, SYMMETRY_TOL)?);
        }
        Ok(Self { a0, a: out })
    }

    pub fn zero(size: usize, nvars: usize) -> Self {
        Self {
            a0: DMatrix::zeros(size, size),
            a: vec![DMatrix::zeros(size, size); nvars],
        }
    }

    pub fn constant(m: DMatrix<f64>, nvars: usize) -> Result<Self> {
        let n = m.nrows();
        Self::new(m, vec![DMatrix::zeros(n, n); nvars])
    }

    /// Matrix size.
    pub fn size(&self) -> usize {
        self.a0.nrows()
    }

    /// Number of state variables.
    pub fn nvars(&self) -> usize {
        self.a.len()
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = self.a0.clone();
        for (ai, xi) in self.a.iter().zip(x) {
            out += ai * *xi;
        }
        out
    }

    /// Max-abs distance between coefficients.
    pub fn coeff_distance(&self, other: &Self) -> f64 {
        let mut d = linalg::max_abs(&(&self.a0 - &other.a0));
        for (x, y) in self.a.iter().zip(&other.a) {
            d = d.max(linalg::max_abs(&(x - y)));
        }
        d
    }

    pub fn coeff_scale(&self) -> f64 {
        self.a
            .iter()
            .fold(linalg::max_abs(&self.a0), |m, a| m.max(linalg::max_abs(a)))
    }

    /// Field of `Y = L X + ell`: `L theta(L^{-1}(y - ell)) L^T`.
    pub fn transformed(&self, l: &DMatrix<f64>, l_inv: &DMatrix<f64>, ell: &DVector<f64>) -> Self {
        let p = self.nvars();
        let h = -(l_inv * ell);
        let mut a0 = self.a0.clone();
        for j in 0..p {
            a0 += &self.a[j] * h[j];
        }
        let a0 = l * a0 * l.transpose();
        let a = (0..p)
            .map(|k| {
                let mut s = DMatrix::zeros(self.size(), self.size());
                for j in 0..p {
                    s += &self.a[j] * l_inv[(j, k)];
                }
                linalg::sym_part(&(l * s * l.transpose()))
            })
            .collect();
        Self {
            a0: linalg::sym_part(&a0),
            a,
        }
    }

    /// Scalar functional `x -> row theta(x) col`.
    pub fn bilinear(&self, row: &DVector<f64>, col: &DVector<f64>) -> AffineScalar {
        let gamma = DVector::from_iterator(self.nvars(), self.a.iter().map(|a| row.dot(&(a * col))));
        AffineScalar::new(gamma, row.dot(&(&self.a0 * col)))
    }
}

/// Polyhedron `{x : gamma x + delta >= 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    pub gamma: DMatrix<f64>,
    pub delta: DVector<f64>,
    pub minimal: bool,
}

impl Polyhedron {
    pub fn new(gamma: DMatrix<f64>, delta: DVector<f64>) -> Result<Self> {
        if gamma.nrows() != delta.len() {
            return Err(Error::DimensionMismatch(format!(
                "gamma has {} rows, delta has length {}",
                gamma.nrows(),
                delta.len()
            )));
        }
        Ok(Self {
            gamma,
            delta,
            minimal: false,
        })
    }

    /// `R^m_{>=0} x R^{p-m}`.
    pub fn canonical(m: usize, p: usize) -> Self {
        let mut gamma = DMatrix::zeros(m, p);
        for i in 0..m {
            gamma[(i, i)] = 1.0;
        }
        Self {
            gamma,
            delta: DVector::zeros(m),
            minimal: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn nfacets(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn facet(&self, i: usize) -> AffineScalar {
        AffineScalar::new(self.gamma.row(i).transpose(), self.delta[i])
    }

    pub fn u(&self, x: &[f64]) -> DVector<f64> {
        let xv = DVector::from_row_slice(x);
        &self.gamma * xv + &self.delta
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        (0..self.nfacets()).all(|i| self.facet(i).eval(x) >= -tol)
    }

    /// Image under `x -> L x + ell`: rows `gamma L^{-1}`, offsets
    /// `delta - gamma L^{-1} ell`.
    pub fn transformed(&self, l_inv: &DMatrix<f64>, ell: &DVector<f64>) -> Self {
        let g = &self.gamma * l_inv;
        let d = &self.delta - &g * ell;
        Self {
            gamma: g,
            delta: d,
            minimal: self.minimal,
        }
    }
}

/// Quadratic form `Phi(x) = x^T A x + b^T x + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

impl QuadraticForm {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() != b.len() {
            return Err(Error::DimensionMismatch(
                "quadratic form: A must be p x p and b of length p".into(),
            ));
        }
        let a = linalg::symmetrize_checked(&a, SYMMETRY_TOL)?;
        if linalg::max_abs(&a) == 0.0 {
            return Err(Error::ZeroQuadraticPart);
        }
        Ok(Self { a, b, c })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let p = self.dim();
        let mut s = self.c;
        for i in 0..p {
            let mut r = self.b[i];
            for j in 0..p {
                r += self.a[(i, j)] * x[j];
            }
            s += r * x[i];
        }
        s
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let xv = DVector::from_row_slice(x);
        &self.a * xv * 2.0 + &self.b
    }

    /// `y -> Phi(L^{-1}(y - ell))`.
    pub fn transformed(&self, l_inv: &DMatrix<f64>, ell: &DVector<f64>) -> Self {
        let h = -(l_inv * ell);
        let a = l_inv.transpose() * &self.a * l_inv;
        let b = l_inv.transpose() * (&self.a * &h * 2.0 + &self.b);
        let c = h.dot(&(&self.a * &h)) + self.b.dot(&h) + self.c;
        Self {
            a: linalg::sym_part(&a),
            b,
            c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Positive,
    Negative,
}

/// Region `{Phi > 0}` or `{Phi < 0}` (or its closure), optionally cut by a
/// halfspace that selects one connected component.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSpace {
    pub phi: QuadraticForm,
    pub component: Side,
    pub closed: bool,
    pub halfspace: Option<AffineScalar>,
}

impl QuadraticSpace {
    /// Signed value that is nonnegative on the selected side.
    pub fn signed_phi(&self, x: &[f64]) -> f64 {
        match self.component {
            Side::Positive => self.phi.eval(x),
            Side::Negative => -self.phi.eval(x),
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        let v = self.signed_phi(x);
        let side_ok = if self.closed { v >= -tol } else { v > 0.0 };
        let half_ok = self.halfspace.as_ref().is_none_or(|h| h.eval(x) >= -tol);
        side_ok && half_ok
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StateSpace {
    Polyhedral(Polyhedron),
    Quadratic(QuadraticSpace),
}

impl StateSpace {
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self {
            StateSpace::Polyhedral(p) => p.contains(x, tol),
            StateSpace::Quadratic(q) => q.contains(x, tol),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            StateSpace::Polyhedral(p) => p.dim(),
            StateSpace::Quadratic(q) => q.phi.dim(),
        }
    }
}

/// Full model: dimension, drift, diffusion matrix and state space.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub dimension: usize,
    pub drift: AffineVectorField,
    pub diffusion: AffineMatrixField,
    pub state_space: StateSpace,
}

impl ModelSpec {
    pub fn new(
        drift: AffineVectorField,
        diffusion: AffineMatrixField,
        state_space: StateSpace,
    ) -> Result<Self> {
        let p = drift.dim();
        if diffusion.size() != p || diffusion.nvars() != p || state_space.dim() != p {
            return Err(Error::DimensionMismatch(format!(
                "drift dimension {p}, diffusion {}x{} with {} coefficients, state space dimension {}",
                diffusion.size(),
                diffusion.size(),
                diffusion.nvars(),
                state_space.dim()
            )));
        }
        Ok(Self {
            dimension: p,
            drift,
            diffusion,
            state_space,
        })
    }

    pub fn polyhedron(&self) -> Option<&Polyhedron> {
        match &self.state_space {
            StateSpace::Polyhedral(p) => Some(p),
            _ => None,
        }
    }

    pub fn quadratic(&self) -> Option<&QuadraticSpace> {
        match &self.state_space {
            StateSpace::Quadratic(q) => Some(q),
            _ => None,
        }
    }

    /// Smallest eigenvalue of theta over the given points, or `None` if some
    /// point fails the PSD test at tolerance `tol`.
    pub fn psd_spot_check(&self, points: &[Vec<f64>], tol: f64) -> std::result::Result<f64, Vec<f64>> {
        let mut worst = f64::INFINITY;
        for x in points {
            let th = self.diffusion.eval(x);
            if !linalg::is_psd(&th, tol) {
                return Err(x.clone());
            }
            worst = worst.min(linalg::min_eigenvalue(&th));
        }
        Ok(worst)
    }

    /// Model of `Y = L X + ell`.
    pub fn transformed(&self, l: &DMatrix<f64>, ell: &DVector<f64>) -> Result<Self> {
        let p = self.dimension;
        let l_inv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::RankDeficiency("transform matrix is singular".into()))?;
        let a = l * &self.drift.a * &l_inv;
        let b = l * &self.drift.b - &a * ell;
        let drift = AffineVectorField::new(a, b)?;
        let diffusion = self.diffusion.transformed(l, &l_inv, ell);
        let state_space = match &self.state_space {
            StateSpace::Polyhedral(poly) => StateSpace::Polyhedral(poly.transformed(&l_inv, ell)),
            StateSpace::Quadratic(qs) => StateSpace::Quadratic(QuadraticSpace {
                phi: qs.phi.transformed(&l_inv, ell),
                component: qs.component,
                closed: qs.closed,
                halfspace: qs.halfspace.as_ref().map(|h| {
                    let g = l_inv.transpose() * &h.gamma;
                    AffineScalar::new(g.clone(), h.delta - g.dot(ell))
                }),
            }),
        };
        Ok(Self {
            dimension: p,
            drift,
            diffusion,
            state_space,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        file.into_model()
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(ModelFile::from_model(self)).expect("model serializes")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from_model(self)).expect("model serializes")
    }
}

/// θ(x) at `x`; errors on a dimension mismatch.
pub fn evaluate_theta(theta: &AffineMatrixField, x: &[f64]) -> Result<DMatrix<f64>> {
    if x.len() != theta.nvars() {
        return Err(Error::DimensionMismatch(format!(
            "point has length {}, field has {} variables",
            x.len(),
            theta.nvars()
        )));
    }
    Ok(theta.eval(x))
}

/// `|S|^{1/2}` for symmetric `S`.
pub fn psd_square_root(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = linalg::symmetrize_checked(s, SYMMETRY_TOL)?;
    Ok(linalg::psd_sqrt(&s))
}

// ---------------------------------------------------------------------------
// JSON mirror types (row-major nested arrays)

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(rows.len(), ncols);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::DimensionMismatch(format!(
                "{what}: row {i} has length {}, expected {ncols}",
                r.len()
            )));
        }
        for (j, v) in r.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftFile {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffusionFile {
    #[serde(rename = "A0")]
    pub a0: Vec<Vec<f64>>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HalfspaceFile {
    pub gamma: Vec<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StateSpaceFile {
    Polyhedral {
        gamma: Vec<Vec<f64>>,
        delta: Vec<f64>,
    },
    Quadratic {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        c: f64,
        component: Side,
        closed: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        halfspace: Option<HalfspaceFile>,
    },
}

/// On-disk model format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub dimension: usize,
    pub drift: DriftFile,
    pub diffusion: DiffusionFile,
    pub state_space: StateSpaceFile,
}

impl ModelFile {
    pub fn into_model(self) -> Result<ModelSpec> {
        let p = self.dimension;
        let a = rows_to_matrix(&self.drift.a, p, "drift.a")?;
        if a.nrows() != p || self.drift.b.len() != p {
            return Err(Error::DimensionMismatch("drift does not match dimension".into()));
        }
        let drift = AffineVectorField::new(a, DVector::from_vec(self.drift.b))?;
        let a0 = rows_to_matrix(&self.diffusion.a0, p, "diffusion.A0")?;
        if a0.nrows() != p || self.diffusion.a.len() != p {
            return Err(Error::DimensionMismatch(
                "diffusion needs a p x p A0 and p coefficient matrices".into(),
            ));
        }
        let mut coeffs = Vec::with_capacity(p);
        for (i, m) in self.diffusion.a.iter().enumerate() {
            let m = rows_to_matrix(m, p, &format!("diffusion.A[{i}]"))?;
            if m.nrows() != p {
                return Err(Error::DimensionMismatch(format!("diffusion.A[{i}] must be p x p")));
            }
            coeffs.push(m);
        }
        let diffusion = AffineMatrixField::new(a0, coeffs)?;
        let state_space = match self.state_space {
            StateSpaceFile::Polyhedral { gamma, delta } => {
                let g = rows_to_matrix(&gamma, p, "state_space.gamma")?;
                StateSpace::Polyhedral(Polyhedron::new(g, DVector::from_vec(delta))?)
            }
            StateSpaceFile::Quadratic {
                a,
                b,
                c,
                component,
                closed,
                halfspace,
            } => {
                let am = rows_to_matrix(&a, p, "state_space.A")?;
                if am.nrows() != p || b.len() != p {
                    return Err(Error::DimensionMismatch("quadratic form does not match dimension".into()));
                }
                let phi = QuadraticForm::new(am, DVector::from_vec(b), c)?;
                let halfspace = match halfspace {
                    Some(h) if h.gamma.len() == p => Some(AffineScalar::from_slice(&h.gamma, h.delta)),
                    Some(_) => {
                        return Err(Error::DimensionMismatch("halfspace does not match dimension".into()))
                    }
                    None => None,
                };
                StateSpace::Quadratic(QuadraticSpace {
                    phi,
                    component,
                    closed,
                    halfspace,
                })
            }
        };
        ModelSpec::new(drift, diffusion, state_space)
    }

    pub fn from_model(m: &ModelSpec) -> Self {
        let state_space = match &m.state_space {
            StateSpace::Polyhedral(p) => StateSpaceFile::Polyhedral {
                gamma: matrix_to_rows(&p.gamma),
                delta: p.delta.iter().copied().collect(),
            },
            StateSpace::Quadratic(q) => StateSpaceFile::Quadratic {
                a: matrix_to_rows(&q.phi.a),
                b: q.phi.b.iter().copied().collect(),
                c: q.phi.c,
                component: q.component,
                closed: q.closed,
                halfspace: q.halfspace.as_ref().map(|h| HalfspaceFile {
                    gamma: h.gamma.iter().copied().collect(),
                    delta: h.delta,
                }),
            },
        };
        Self {
            dimension: m.dimension,
            drift: DriftFile {
                a: matrix_to_rows(&m.drift.a),
                b: m.drift.b.iter().copied().collect(),
            },
            diffusion: DiffusionFile {
                a0: matrix_to_rows(&m.diffusion.a0),
                a: m.diffusion.a.iter().map(matrix_to_rows).collect(),
            },
            state_space,
        }
    }
}
