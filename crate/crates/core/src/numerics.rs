//! Dense linear-algebra helpers and a deterministic fixed-step RK4 integrator.
//!
//! All matrices are column-major `DMatrix<f64>`, so `vec` is a plain copy of
//! the storage and the Kronecker identity `vec(ABC) = (Cᵀ ⊗ A) vec(B)` holds
//! verbatim.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Column-major vectorization.
pub fn vec(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`]: reshape a length `rows * cols` vector column by column.
pub fn mat(v: &[f64], rows: usize, cols: usize) -> Result<Matrix> {
    if v.len() != rows * cols {
        return Err(Error::dim("mat", format!("{rows}x{cols} = {}", rows * cols), v.len()));
    }
    Ok(Matrix::from_column_slice(rows, cols, v))
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Smallest and largest singular values.
pub fn singular_extremes(m: &Matrix) -> (f64, f64) {
    if m.is_empty() {
        return (0.0, 0.0);
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    // The thin SVD yields min(rows, cols) values, so for wide or tall inputs
    // this is the smallest nontrivial singular value.
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    (min.max(0.0), max)
}

pub fn spectral_norm(m: &Matrix) -> f64 {
    singular_extremes(m).1
}

pub fn trace(m: &Matrix) -> f64 {
    m.trace()
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Symmetrize a square matrix stored column-major in `buf`, in place.
pub fn symmetrize_slice(buf: &mut [f64], n: usize) {
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (buf[i + j * n] + buf[j + i * n]);
            buf[i + j * n] = avg;
            buf[j + i * n] = avg;
        }
    }
}

/// Sorted (ascending) eigenvalues of the symmetric part of `m`.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().cloned().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_sym_eigenvalue(m: &Matrix) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn max_sym_eigenvalue(m: &Matrix) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Largest real part over the eigenvalues of a square matrix.
pub fn spectral_abscissa(m: &Matrix) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `f(S)` for symmetric `S = V diag(λ) Vᵀ`, applied eigenvalue-wise.
pub fn sym_function(m: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let eig = symmetrize(m).symmetric_eigen();
    let mapped = eig.eigenvalues.map(f);
    &eig.eigenvectors * Matrix::from_diagonal(&mapped) * eig.eigenvectors.transpose()
}

/// Fails unless `m` is symmetric positive definite (min eigenvalue above `tol`).
pub fn require_pd(m: &Matrix, what: &'static str, tol: f64) -> Result<()> {
    let min_eig = min_sym_eigenvalue(m);
    if min_eig > tol {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite { what, min_eig })
    }
}

pub fn require_square(m: &Matrix, context: &'static str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(context, "square matrix", format!("{}x{}", m.nrows(), m.ncols())));
    }
    Ok(m.nrows())
}

// ---------------------------------------------------------------------------
// ODE integration
// ---------------------------------------------------------------------------

/// A first-order system `ẋ = f(t, x)` on a fixed horizon.
pub struct OdeProblem<F>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    pub rhs: F,
    pub initial: Vec<f64>,
    pub step: f64,
    pub horizon: f64,
}

impl<F> OdeProblem<F>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    pub fn new(rhs: F, initial: Vec<f64>, step: f64, horizon: f64) -> Self {
        Self {
            rhs,
            initial,
            step,
            horizon,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::arg("step", format!("must be positive, got {}", self.step)));
        }
        if !(self.horizon >= self.step) || !self.horizon.is_finite() {
            return Err(Error::arg(
                "horizon",
                format!("must be at least the step ({}), got {}", self.step, self.horizon),
            ));
        }
        if self.initial.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step: 0, t: 0.0 });
        }
        Ok(())
    }
}

/// Which steps end up in the returned [`Trajectory`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Record {
    All,
    /// Every k-th step, plus the initial and final states.
    Stride(usize),
    /// Initial and final states only.
    Endpoints,
}

impl Record {
    /// Stride keeping at most `max_points` samples of a run with `steps` steps.
    pub fn at_most(steps: usize, max_points: usize) -> Record {
        let max_points = max_points.max(2);
        if steps < max_points {
            Record::All
        } else {
            Record::Stride(steps.div_ceil(max_points - 1))
        }
    }

    pub fn keeps(self, index: usize) -> bool {
        match self {
            Record::All => true,
            Record::Stride(k) => k <= 1 || index.is_multiple_of(k),
            Record::Endpoints => index == 0,
        }
    }
}

/// Returned by an observer to continue or halt the integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

/// State handed to the per-step observer after each accepted step. The state
/// is mutable so observers can apply projections (e.g. symmetrization).
pub struct StepView<'a> {
    pub index: usize,
    pub t: f64,
    pub state: &'a mut [f64],
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub observables: BTreeMap<String, Vec<f64>>,
    /// Number of integration steps actually taken.
    pub steps: usize,
    pub stopped_early: bool,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

type Observer<'a> = Box<dyn FnMut(StepView<'_>) -> Flow + 'a>;
type StepRule<'a> = Box<dyn FnMut(&[f64]) -> f64 + 'a>;

/// Classical RK4 driver. The step is fixed unless a step rule is installed,
/// in which case it is re-evaluated every `refresh` steps (still bounded by
/// the problem's step).
pub struct Integrator<'a> {
    record: Record,
    observer: Option<Observer<'a>>,
    step_rule: Option<(usize, StepRule<'a>)>,
    escape_norm: f64,
}

impl Default for Integrator<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Integrator<'a> {
    pub fn new() -> Self {
        Self {
            record: Record::All,
            observer: None,
            step_rule: None,
            escape_norm: f64::INFINITY,
        }
    }

    pub fn record(mut self, record: Record) -> Self {
        self.record = record;
        self
    }

    pub fn observer(mut self, f: impl FnMut(StepView<'_>) -> Flow + 'a) -> Self {
        self.observer = Some(Box::new(f));
        self
    }

    pub fn step_rule(mut self, refresh: usize, f: impl FnMut(&[f64]) -> f64 + 'a) -> Self {
        self.step_rule = Some((refresh.max(1), Box::new(f)));
        self
    }

    /// Abort when the max-abs entry of the state exceeds `norm`.
    pub fn escape_norm(mut self, norm: f64) -> Self {
        self.escape_norm = norm;
        self
    }

    pub fn run<F>(mut self, mut problem: OdeProblem<F>) -> Result<Trajectory>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        problem.validate()?;
        let dim = problem.initial.len();
        let mut x = problem.initial.clone();
        let mut k1 = vec![0.0; dim];
        let mut k2 = vec![0.0; dim];
        let mut k3 = vec![0.0; dim];
        let mut k4 = vec![0.0; dim];
        let mut tmp = vec![0.0; dim];

        let mut traj = Trajectory::default();
        traj.times.push(0.0);
        traj.states.push(x.clone());

        let horizon = problem.horizon;
        let cap = problem.step;
        let mut h = cap;
        // Segment bookkeeping keeps time points free of accumulated drift.
        let mut seg_start = 0.0;
        let mut seg_steps = 0usize;
        let mut t = 0.0;
        let mut index = 0usize;

        while t < horizon {
            if let Some((refresh, rule)) = self.step_rule.as_mut() {
                if index.is_multiple_of(*refresh) {
                    let proposed = rule(&x);
                    let next = if proposed.is_finite() && proposed > 0.0 {
                        proposed.min(cap)
                    } else {
                        cap
                    };
                    if next != h {
                        seg_start = t;
                        seg_steps = 0;
                        h = next;
                    }
                }
            }
            let mut t_next = seg_start + (seg_steps + 1) as f64 * h;
            // Final step is shortened to land on the horizon; a sliver below
            // 1e-9 h is merged into the previous step instead.
            if t_next > horizon || horizon - t_next < 1e-9 * h {
                t_next = horizon;
            }
            let dt = t_next - t;

            let rhs = &mut problem.rhs;
            rhs(t, &x, &mut k1);
            for i in 0..dim {
                tmp[i] = x[i] + 0.5 * dt * k1[i];
            }
            rhs(t + 0.5 * dt, &tmp, &mut k2);
            for i in 0..dim {
                tmp[i] = x[i] + 0.5 * dt * k2[i];
            }
            rhs(t + 0.5 * dt, &tmp, &mut k3);
            for i in 0..dim {
                tmp[i] = x[i] + dt * k3[i];
            }
            rhs(t + dt, &tmp, &mut k4);
            for i in 0..dim {
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }

            index += 1;
            seg_steps += 1;
            t = t_next;

            let mut max_abs = 0.0_f64;
            for v in &x {
                if !v.is_finite() {
                    return Err(Error::NonFinite { step: index, t });
                }
                max_abs = max_abs.max(v.abs());
            }
            if max_abs > self.escape_norm {
                return Err(Error::Escape {
                    step: index,
                    t,
                    norm: max_abs,
                });
            }

            let mut flow = Flow::Continue;
            if let Some(obs) = self.observer.as_mut() {
                flow = obs(StepView {
                    index,
                    t,
                    state: &mut x,
                });
            }
            let last = t >= horizon || flow == Flow::Stop;
            if last || self.record.keeps(index) {
                traj.times.push(t);
                traj.states.push(x.clone());
            }
            if flow == Flow::Stop {
                traj.stopped_early = t < horizon;
                break;
            }
        }
        traj.steps = index;
        Ok(traj)
    }
}

/// Integrate `problem` with classical RK4, recording every step and calling
/// `observer` (if any) after each step.
pub fn integrate<F>(
    problem: OdeProblem<F>,
    observer: Option<&mut dyn FnMut(StepView<'_>) -> Flow>,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut integ = Integrator::new();
    if let Some(obs) = observer {
        integ = integ.observer(obs);
    }
    integ.run(problem)
}

/// Number of steps a fixed-step run over `horizon` takes.
pub fn step_count(step: f64, horizon: f64) -> usize {
    let raw = horizon / step;
    let n = raw.floor() as usize;
    if raw - n as f64 > 1e-9 {
        n + 1
    } else {
        n.max(1)
    }
}
