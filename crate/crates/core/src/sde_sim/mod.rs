//! Euler simulation of affine SDEs `dX = mu(X) dt + sigma(X) dW`.

mod moments;
mod roots;
mod stats;

pub use moments::{mean_ode, MeanTrajectory};
pub use roots::{build_root, DiffusionRoot, GenericRoot};
pub use stats::{
    boundary_attainment, invariance_monte_carlo, mean_and_se, ExitStats, Monitor, PathObserver, PathSummary,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affine_core::ModelSpec;
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Project onto the state space after every step.
    FullTruncationEuler,
    PlainEuler,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
}

impl SimConfig {
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..=self.steps).map(|k| k as f64 * dt).collect()
    }
}

/// Stored paths: `states` is `n_paths x (steps + 1) x p`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub times: Vec<f64>,
    pub dim: usize,
    pub n_paths: usize,
    pub states: Vec<f64>,
    /// First grid index with the state outside the state space (tolerance 1e-8).
    pub exit_flags: Vec<Option<usize>>,
    /// Paths that produced a non-finite state; later states are NaN.
    pub nonfinite: Vec<bool>,
}

impl PathEnsemble {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn state(&self, path: usize, k: usize) -> &[f64] {
        let n = self.times.len();
        let off = (path * n + k) * self.dim;
        &self.states[off..off + self.dim]
    }

    pub fn path(&self, path: usize) -> impl Iterator<Item = &[f64]> {
        (0..self.times.len()).map(move |k| self.state(path, k))
    }

    pub fn final_state(&self, path: usize) -> &[f64] {
        self.state(path, self.steps())
    }

    /// CSV with header `t,path,x1,...,xp`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let head: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        writeln!(w, "t,path,{}", head.join(","))?;
        for path in 0..self.n_paths {
            for (k, t) in self.times.iter().enumerate() {
                let xs: Vec<String> = self.state(path, k).iter().map(|v| v.to_string()).collect();
                writeln!(w, "{t},{path},{}", xs.join(","))?;
            }
        }
        Ok(())
    }
}

pub const EXIT_TOL: f64 = 1e-8;

fn check_inputs(model: &ModelSpec, root: &dyn DiffusionRoot, cfg: &SimConfig) -> Result<()> {
    let p = model.dimension;
    if cfg.x0.len() != p || root.dim() != p {
        return Err(Error::DimensionMismatch(format!(
            "x0 has length {}, root dimension {}, model dimension {p}",
            cfg.x0.len(),
            root.dim()
        )));
    }
    if cfg.steps == 0 || cfg.horizon <= 0.0 || !cfg.horizon.is_finite() {
        return Err(Error::PreconditionFailed("need steps >= 1 and a positive finite horizon".into()));
    }
    if !model.state_space.contains(&cfg.x0, 1e-10) {
        return Err(Error::PreconditionFailed(format!("x0 = {:?} is outside the state space", cfg.x0)));
    }
    let s = root.sigma(&cfg.x0);
    let th = model.diffusion.eval(&cfg.x0);
    let res = linalg::max_abs(&(&s * s.transpose() - &th));
    if res > 1e-8 * (1.0 + linalg::max_abs(&th)) {
        return Err(Error::SigmaMismatch(res));
    }
    Ok(())
}

/// Runs one path, calling `visit(k, x)` at every grid index including 0.
/// Returns false if the path became non-finite.
fn run_path(model: &ModelSpec, root: &dyn DiffusionRoot, cfg: &SimConfig, path: usize, mut visit: impl FnMut(usize, &[f64])) -> bool {
    let p = model.dimension;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(path as u64);
    let dt = cfg.dt();
    let sq = dt.sqrt();
    let mut x = cfg.x0.clone();
    let mut mu = vec![0.0; p];
    let mut sig = vec![0.0; p * p];
    let mut z = vec![0.0; p];
    let mut next = vec![0.0; p];
    visit(0, &x);
    for k in 1..=cfg.steps {
        model.drift.eval_into(&x, &mut mu);
        root.sigma_into(&x, &mut sig);
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        for i in 0..p {
            let mut s = 0.0;
            for j in 0..p {
                s += sig[i * p + j] * z[j];
            }
            next[i] = x[i] + mu[i] * dt + sq * s;
        }
        if cfg.scheme == Scheme::FullTruncationEuler {
            root.project(&mut next);
        }
        if next.iter().any(|v| !v.is_finite()) {
            let nan = vec![f64::NAN; p];
            for kk in k..=cfg.steps {
                visit(kk, &nan);
            }
            return false;
        }
        std::mem::swap(&mut x, &mut next);
        visit(k, &x);
    }
    true
}

pub fn simulate_paths(model: &ModelSpec, root: &dyn DiffusionRoot, cfg: &SimConfig) -> Result<PathEnsemble> {
    check_inputs(model, root, cfg)?;
    let p = model.dimension;
    let n = cfg.steps + 1;
    let per: Vec<(Vec<f64>, Option<usize>, bool)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut states = Vec::with_capacity(n * p);
            let mut exit = None;
            let ok = run_path(model, root, cfg, path, |k, x| {
                states.extend_from_slice(x);
                if exit.is_none() && x.iter().all(|v| v.is_finite()) && !model.state_space.contains(x, EXIT_TOL) {
                    exit = Some(k);
                }
            });
            (states, exit, !ok)
        })
        .collect();
    let mut out = PathEnsemble {
        times: cfg.times(),
        dim: p,
        n_paths: cfg.n_paths,
        states: Vec::with_capacity(cfg.n_paths * n * p),
        exit_flags: Vec::with_capacity(cfg.n_paths),
        nonfinite: Vec::with_capacity(cfg.n_paths),
    };
    for (s, e, bad) in per {
        out.states.extend(s);
        out.exit_flags.push(e);
        out.nonfinite.push(bad);
    }
    Ok(out)
}

/// Like [`simulate_paths`] but keeps only per-path summaries, so large
/// ensembles run in constant memory per path.
pub fn simulate_summary(
    model: &ModelSpec,
    root: &dyn DiffusionRoot,
    cfg: &SimConfig,
    monitor: Option<&Monitor>,
    eps: f64,
) -> Result<Vec<PathSummary>> {
    check_inputs(model, root, cfg)?;
    Ok((0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut obs = PathObserver::new(&model.state_space, monitor, eps, EXIT_TOL);
            let ok = run_path(model, root, cfg, path, |k, x| obs.visit(k, x));
            obs.finish(!ok)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine_core::{AffineMatrixField, AffineScalar, AffineVectorField, Polyhedron, StateSpace};
    use crate::polyhedral::test_models::cir;
    use crate::polyhedral::{build_square_root, canonical_transform};

    fn cir_root(model: &ModelSpec) -> Box<dyn DiffusionRoot> {
        Box::new(build_square_root(&canonical_transform(model).unwrap()))
    }

    fn cfg(x0: f64, paths: usize, steps: usize, scheme: Scheme) -> SimConfig {
        SimConfig {
            x0: vec![x0],
            horizon: 1.0,
            steps,
            n_paths: paths,
            seed: 42,
            scheme,
        }
    }

    #[test]
    fn zero_dynamics_are_constant() {
        let model = ModelSpec::new(
            AffineVectorField::zero(2),
            AffineMatrixField::zero(2, 2),
            StateSpace::Polyhedral(Polyhedron::canonical(1, 2)),
        )
        .unwrap();
        let root = GenericRoot {
            theta: model.diffusion.clone(),
        };
        let c = SimConfig {
            x0: vec![0.5, -1.0],
            horizon: 1.0,
            steps: 10,
            n_paths: 3,
            seed: 1,
            scheme: Scheme::PlainEuler,
        };
        let ens = simulate_paths(&model, &root, &c).unwrap();
        for path in 0..3 {
            for x in ens.path(path) {
                assert_eq!(x, &[0.5, -1.0]);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let model = cir(-1.0, 1.0);
        let root = cir_root(&model);
        let a = simulate_paths(&model, root.as_ref(), &cfg(0.5, 20, 50, Scheme::FullTruncationEuler)).unwrap();
        let b = simulate_paths(&model, root.as_ref(), &cfg(0.5, 20, 50, Scheme::FullTruncationEuler)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.state(3, 0), &[0.5]);
        let mut c2 = cfg(0.5, 20, 50, Scheme::FullTruncationEuler);
        c2.seed = 43;
        assert_ne!(simulate_paths(&model, root.as_ref(), &c2).unwrap(), a);
    }

    #[test]
    fn full_truncation_stays_inside() {
        let model = cir(-1.0, 0.1);
        let root = cir_root(&model);
        let ens = simulate_paths(&model, root.as_ref(), &cfg(0.05, 200, 200, Scheme::FullTruncationEuler)).unwrap();
        assert!(ens.states.iter().all(|&v| v >= -1e-8));
        assert_eq!(invariance_monte_carlo(&ens, &model.state_space, 1e-8).exit_fraction, 0.0);
    }

    #[test]
    fn plain_euler_with_outward_drift_exits() {
        let model = cir(0.0, -1.0);
        let root = cir_root(&model);
        let ens = simulate_paths(&model, root.as_ref(), &cfg(0.1, 400, 1000, Scheme::PlainEuler)).unwrap();
        let st = invariance_monte_carlo(&ens, &model.state_space, 1e-8);
        assert!(st.exit_fraction > 0.5, "exit fraction {}", st.exit_fraction);
    }

    #[test]
    fn summary_matches_ensemble() {
        let model = cir(-1.0, 0.25);
        let root = cir_root(&model);
        let c = cfg(0.1, 50, 100, Scheme::FullTruncationEuler);
        let mon = Monitor::Affine(AffineScalar::from_slice(&[1.0], 0.0));
        let ens = simulate_paths(&model, root.as_ref(), &c).unwrap();
        let sum = simulate_summary(&model, root.as_ref(), &c, Some(&mon), 1e-3).unwrap();
        for (i, s) in sum.iter().enumerate() {
            assert_eq!(s.final_state.as_slice(), ens.final_state(i));
        }
        assert_eq!(ExitStats::from_summaries(&sum, 100), invariance_monte_carlo(&ens, &model.state_space, EXIT_TOL));
        let hits = sum.iter().filter(|s| s.first_hit.is_some()).count() as f64 / 50.0;
        assert_eq!(hits, boundary_attainment(&ens, &mon, 1e-3));
    }

    #[test]
    fn sigma_mismatch_is_rejected() {
        let model = cir(-1.0, 1.0);
        let wrong = GenericRoot {
            theta: AffineMatrixField::constant(nalgebra::DMatrix::identity(1, 1) * 4.0, 1).unwrap(),
        };
        assert!(matches!(
            simulate_paths(&model, &wrong, &cfg(1.0, 1, 1, Scheme::PlainEuler)),
            Err(Error::SigmaMismatch(_))
        ));
        assert!(simulate_paths(&model, cir_root(&model).as_ref(), &cfg(-1.0, 1, 1, Scheme::PlainEuler)).is_err());
    }

    #[test]
    fn csv_layout() {
        let model = cir(-1.0, 1.0);
        let ens = simulate_paths(&model, cir_root(&model).as_ref(), &cfg(1.0, 2, 3, Scheme::PlainEuler)).unwrap();
        let mut buf = Vec::new();
        ens.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,path,x1");
        assert_eq!(lines.len(), 1 + 2 * 4);
        assert!(lines[1].starts_with("0,0,1"));
    }
}
