use nalgebra::DMatrix;

use crate::affine_core::{ModelSpec, StateSpace};
use crate::error::Result;
use crate::linalg;
use crate::polyhedral::{build_square_root, canonical_transform, PolyhedralRoot};
use crate::quadratic::{quadratic_root, ConeRoot, ParabolicRoot, QuadraticRoot};

/// Square root `sigma(x)` of the diffusion matrix together with a projection
/// onto the state space.
pub trait DiffusionRoot: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `sigma(x)` row-major into `out` (length `p * p`).
    fn sigma_into(&self, x: &[f64], out: &mut [f64]);

    /// Moves `x` into the state space; identity inside it.
    fn project(&self, x: &mut [f64]);

    fn sigma(&self, x: &[f64]) -> DMatrix<f64> {
        let p = self.dim();
        let mut buf = vec![0.0; p * p];
        self.sigma_into(x, &mut buf);
        DMatrix::from_row_slice(p, p, &buf)
    }
}

fn copy_row_major(m: &DMatrix<f64>, out: &mut [f64]) {
    let p = m.ncols();
    for i in 0..m.nrows() {
        for j in 0..p {
            out[i * p + j] = m[(i, j)];
        }
    }
}

impl DiffusionRoot for PolyhedralRoot {
    fn dim(&self) -> usize {
        PolyhedralRoot::dim(self)
    }

    fn sigma_into(&self, x: &[f64], out: &mut [f64]) {
        let p = self.dim();
        if self.m + self.n < p {
            copy_row_major(&self.sigma_x(x), out);
            return;
        }
        // sigma = L^{-1} diag(sqrt|y_M|, 0_N) with y = L x + ell.
        for c in 0..p {
            let s = if c < self.m {
                let mut y = self.ell[c];
                for j in 0..p {
                    y += self.l[(c, j)] * x[j];
                }
                y.abs().sqrt()
            } else {
                0.0
            };
            for r in 0..p {
                out[r * p + c] = self.l_inv[(r, c)] * s;
            }
        }
    }

    fn project(&self, x: &mut [f64]) {
        self.project_x(x);
    }
}

impl DiffusionRoot for ParabolicRoot {
    fn dim(&self) -> usize {
        ParabolicRoot::dim(self)
    }

    fn sigma_into(&self, x: &[f64], out: &mut [f64]) {
        copy_row_major(&self.sigma_x(x), out);
    }

    fn project(&self, x: &mut [f64]) {
        self.project_x(x);
    }
}

impl DiffusionRoot for ConeRoot {
    fn dim(&self) -> usize {
        self.q
    }

    fn sigma_into(&self, x: &[f64], out: &mut [f64]) {
        if self.outer.is_some() {
            copy_row_major(&self.sigma_x(x), out);
            return;
        }
        // s0 I + (s+ - s0) v+ v+^T + (s- - s0) v- v-^T, entrywise.
        let q = self.q;
        let r = x[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
        let sp = (x[0] + r).max(0.0).sqrt();
        let sm = (x[0] - r).max(0.0).sqrt();
        let s0 = x[0].max(0.0).sqrt();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let u = |i: usize| -> f64 {
            if i == 0 {
                0.0
            } else if r > 0.0 {
                x[i] / r
            } else if i == 1 {
                1.0
            } else {
                0.0
            }
        };
        for i in 0..q {
            let e_i = if i == 0 { 1.0 } else { 0.0 };
            let (vpi, vmi) = (h * (e_i + u(i)), h * (e_i - u(i)));
            for j in 0..q {
                let e_j = if j == 0 { 1.0 } else { 0.0 };
                let (vpj, vmj) = (h * (e_j + u(j)), h * (e_j - u(j)));
                let d = if i == j { s0 } else { 0.0 };
                out[i * q + j] = d + (sp - s0) * vpi * vpj + (sm - s0) * vmi * vmj;
            }
        }
    }

    fn project(&self, x: &mut [f64]) {
        self.project_x(x);
    }
}

impl DiffusionRoot for QuadraticRoot {
    fn dim(&self) -> usize {
        match self {
            QuadraticRoot::Parabolic(r) => DiffusionRoot::dim(r),
            QuadraticRoot::Cone(r) => DiffusionRoot::dim(r),
        }
    }

    fn sigma_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            QuadraticRoot::Parabolic(r) => r.sigma_into(x, out),
            QuadraticRoot::Cone(r) => r.sigma_into(x, out),
        }
    }

    fn project(&self, x: &mut [f64]) {
        match self {
            QuadraticRoot::Parabolic(r) => DiffusionRoot::project(r, x),
            QuadraticRoot::Cone(r) => DiffusionRoot::project(r, x),
        }
    }
}

/// `theta(x)^{1/2}` from an eigen-decomposition with negative eigenvalues
/// clipped; no projection.
#[derive(Debug, Clone)]
pub struct GenericRoot {
    pub theta: crate::affine_core::AffineMatrixField,
}

impl DiffusionRoot for GenericRoot {
    fn dim(&self) -> usize {
        self.theta.size()
    }

    fn sigma_into(&self, x: &[f64], out: &mut [f64]) {
        copy_row_major(&linalg::psd_sqrt(&linalg::sym_part(&self.theta.eval(x))), out);
    }

    fn project(&self, _x: &mut [f64]) {}
}

/// The square root this crate constructs for the model's state space.
pub fn build_root(model: &ModelSpec) -> Result<Box<dyn DiffusionRoot>> {
    match &model.state_space {
        StateSpace::Polyhedral(_) => {
            let ct = canonical_transform(model)?;
            Ok(Box::new(build_square_root(&ct)))
        }
        StateSpace::Quadratic(_) => Ok(Box::new(quadratic_root(model)?)),
    }
}
