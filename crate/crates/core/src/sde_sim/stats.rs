use serde::Serialize;

use super::PathEnsemble;
use crate::affine_core::{AffineScalar, QuadraticForm, StateSpace};

/// Scalar functional watched along paths, e.g. a facet or the quadric.
#[derive(Debug, Clone, PartialEq)]
pub enum Monitor {
    Affine(AffineScalar),
    Quadric(QuadraticForm),
}

impl Monitor {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Monitor::Affine(a) => a.eval(x),
            Monitor::Quadric(q) => q.eval(x),
        }
    }
}

/// Constraint values whose minimum is negative outside the state space:
/// facet values, or the signed quadric and the optional halfspace.
fn constraint_values(space: &StateSpace, x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    match space {
        StateSpace::Polyhedral(p) => out.extend((0..p.nfacets()).map(|i| p.facet(i).eval(x))),
        StateSpace::Quadratic(q) => {
            out.push(q.signed_phi(x));
            if let Some(h) = &q.halfspace {
                out.push(h.eval(x));
            }
        }
    }
}

fn constraint_count(space: &StateSpace) -> usize {
    match space {
        StateSpace::Polyhedral(p) => p.nfacets(),
        StateSpace::Quadratic(q) => 1 + usize::from(q.halfspace.is_some()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSummary {
    pub final_state: Vec<f64>,
    pub first_exit: Option<usize>,
    /// Per-constraint minimum over the path.
    pub worst_violation: Vec<f64>,
    pub min_monitor: f64,
    /// First grid index with the monitor at or below `eps`.
    pub first_hit: Option<usize>,
    pub nonfinite: bool,
}

/// Streaming per-path accumulator used by `simulate_summary`.
pub struct PathObserver<'a> {
    space: &'a StateSpace,
    monitor: Option<&'a Monitor>,
    eps: f64,
    exit_tol: f64,
    buf: Vec<f64>,
    sum: PathSummary,
}

impl<'a> PathObserver<'a> {
    pub fn new(space: &'a StateSpace, monitor: Option<&'a Monitor>, eps: f64, exit_tol: f64) -> Self {
        Self {
            space,
            monitor,
            eps,
            exit_tol,
            buf: Vec::with_capacity(constraint_count(space)),
            sum: PathSummary {
                final_state: Vec::new(),
                first_exit: None,
                worst_violation: vec![f64::INFINITY; constraint_count(space)],
                min_monitor: f64::INFINITY,
                first_hit: None,
                nonfinite: false,
            },
        }
    }

    pub fn visit(&mut self, k: usize, x: &[f64]) {
        if x.iter().any(|v| !v.is_finite()) {
            self.sum.final_state.clear();
            self.sum.final_state.extend_from_slice(x);
            return;
        }
        constraint_values(self.space, x, &mut self.buf);
        for (w, v) in self.sum.worst_violation.iter_mut().zip(&self.buf) {
            *w = w.min(*v);
        }
        if self.sum.first_exit.is_none() && !self.space.contains(x, self.exit_tol) {
            self.sum.first_exit = Some(k);
        }
        if let Some(m) = self.monitor {
            let v = m.value(x);
            self.sum.min_monitor = self.sum.min_monitor.min(v);
            if self.sum.first_hit.is_none() && v <= self.eps {
                self.sum.first_hit = Some(k);
            }
        }
        self.sum.final_state.clear();
        self.sum.final_state.extend_from_slice(x);
    }

    pub fn finish(mut self, nonfinite: bool) -> PathSummary {
        self.sum.nonfinite = nonfinite;
        self.sum
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitStats {
    pub n_paths: usize,
    pub exit_fraction: f64,
    /// Minimum over all paths and times of each constraint value.
    pub worst_violation: Vec<f64>,
    /// Number of paths whose first exit is at each grid index.
    pub first_exit_histogram: Vec<usize>,
    pub nonfinite_paths: usize,
}

impl ExitStats {
    /// Aggregates streamed summaries from a run with `steps` steps.
    pub fn from_summaries(sums: &[PathSummary], steps: usize) -> Self {
        let nc = sums.first().map_or(0, |s| s.worst_violation.len());
        let mut st = ExitStats {
            n_paths: sums.len(),
            exit_fraction: 0.0,
            worst_violation: vec![if sums.is_empty() { 0.0 } else { f64::INFINITY }; nc],
            first_exit_histogram: vec![0; steps + 1],
            nonfinite_paths: sums.iter().filter(|s| s.nonfinite).count(),
        };
        for s in sums {
            for (w, v) in st.worst_violation.iter_mut().zip(&s.worst_violation) {
                *w = w.min(*v);
            }
            if let Some(k) = s.first_exit {
                st.first_exit_histogram[k] += 1;
            }
        }
        if !sums.is_empty() {
            st.exit_fraction = sums.iter().filter(|s| s.first_exit.is_some()).count() as f64 / sums.len() as f64;
        }
        st
    }
}

pub fn invariance_monte_carlo(ens: &PathEnsemble, space: &StateSpace, tol: f64) -> ExitStats {
    let nc = constraint_count(space);
    let mut st = ExitStats {
        n_paths: ens.n_paths,
        exit_fraction: 0.0,
        worst_violation: vec![f64::INFINITY; nc],
        first_exit_histogram: vec![0; ens.times.len()],
        nonfinite_paths: ens.nonfinite.iter().filter(|&&b| b).count(),
    };
    if ens.n_paths == 0 {
        st.worst_violation = vec![0.0; nc];
        return st;
    }
    let mut buf = Vec::with_capacity(nc);
    let mut exits = 0usize;
    for path in 0..ens.n_paths {
        let mut exited = false;
        for (k, x) in ens.path(path).enumerate() {
            if x.iter().any(|v| !v.is_finite()) {
                break;
            }
            constraint_values(space, x, &mut buf);
            for (w, v) in st.worst_violation.iter_mut().zip(&buf) {
                *w = w.min(*v);
            }
            if !exited && !space.contains(x, tol) {
                exited = true;
                st.first_exit_histogram[k] += 1;
            }
        }
        exits += usize::from(exited);
    }
    st.exit_fraction = exits as f64 / ens.n_paths as f64;
    st
}

/// Fraction of paths with `f(X_t) <= eps` at some grid time, including `t = 0`.
pub fn boundary_attainment(ens: &PathEnsemble, f: &Monitor, eps: f64) -> f64 {
    if ens.n_paths == 0 {
        return 0.0;
    }
    let hits = (0..ens.n_paths)
        .filter(|&path| ens.path(path).any(|x| x.iter().all(|v| v.is_finite()) && f.value(x) <= eps))
        .count();
    hits as f64 / ens.n_paths as f64
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
