use nalgebra::DVector;

use crate::affine_core::AffineVectorField;

#[derive(Debug, Clone, PartialEq)]
pub struct MeanTrajectory {
    pub times: Vec<f64>,
    pub means: Vec<DVector<f64>>,
}

/// Solves `m' = a m + b`, `m(0) = x0` on `[0, horizon]` with classical RK4
/// and step `horizon / 1e4`. For affine drift this is the exact mean.
pub fn mean_ode(drift: &AffineVectorField, x0: &[f64], horizon: f64) -> MeanTrajectory {
    let steps = 10_000usize;
    let h = horizon / steps as f64;
    let f = |m: &DVector<f64>| &drift.a * m + &drift.b;
    let mut m = DVector::from_row_slice(x0);
    let mut times = Vec::with_capacity(steps + 1);
    let mut means = Vec::with_capacity(steps + 1);
    times.push(0.0);
    means.push(m.clone());
    for k in 1..=steps {
        let k1 = f(&m);
        let k2 = f(&(&m + &k1 * (h / 2.0)));
        let k3 = f(&(&m + &k2 * (h / 2.0)));
        let k4 = f(&(&m + &k3 * h));
        m += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        times.push(k as f64 * h);
        means.push(m.clone());
    }
    MeanTrajectory { times, means }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn scalar_matches_closed_form() {
        let d = AffineVectorField::new(DMatrix::from_element(1, 1, -1.0), DVector::from_element(1, 1.0)).unwrap();
        let tr = mean_ode(&d, &[0.1], 1.0);
        let want = 1.0 - 0.9 * (-1.0f64).exp();
        assert!((tr.means.last().unwrap()[0] - want).abs() < 1e-12);
        assert_eq!(tr.times.len(), 10_001);
    }

    #[test]
    fn zero_drift_is_constant() {
        let tr = mean_ode(&AffineVectorField::zero(2), &[0.3, -1.0], 2.0);
        assert_eq!(tr.means.last().unwrap().as_slice(), &[0.3, -1.0]);
    }

    #[test]
    fn matrix_case_matches_exponential() {
        // m(T) = e^{aT} x0 + int_0^T e^{as} ds b, via the augmented generator
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.2, -0.3]);
        let b = DVector::from_vec(vec![0.4, 1.0]);
        let x0 = [1.0, 2.0];
        let t = 1.5;
        let mut g = DMatrix::zeros(3, 3);
        g.view_mut((0, 0), (2, 2)).copy_from(&(&a * t));
        g.view_mut((0, 2), (2, 1)).copy_from(&(&b * t));
        let e = g.exp();
        let want = e.view((0, 0), (2, 2)) * DVector::from_row_slice(&x0) + e.view((0, 2), (2, 1));
        let d = AffineVectorField::new(a, b).unwrap();
        let got = mean_ode(&d, &x0, t);
        assert!((got.means.last().unwrap() - want).amax() < 1e-10);
    }
}
