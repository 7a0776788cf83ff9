//! Distributed computation of per-agent vectors `w(i)` with
//! `Σᵢ v(i) w(i)ᵀ = M`, and the rank-one shares `Aᵢ = r̂ᵢ yᵢᵀ` summing to `A`.
//!
//! Each agent holds only `v(i)`, its own primal `w(i)`, and one multiplier
//! pair `(λ_{jk,i}, μ_{jk,i})` per scalar constraint. The only coupling is
//! through Laplacian products with neighbors.

use crate::error::{Error, Result};
use crate::graph::{laplacian, spectral_split, CommGraph};
use crate::model::FragmentedDataset;
use crate::numerics::{Flow, Integrator, Matrix, OdeProblem, Record, StepView, Vector};

pub const DEFAULT_KW: f64 = 1.0;
pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_HORIZON: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct AllocationProblem {
    /// `v(i)`, all of length `n₁`.
    pub v: Vec<Vector>,
    /// `n₁ × n₂` target known to every agent.
    pub target: Matrix,
    pub graph: CommGraph,
    pub k_w: f64,
    pub tolerance: f64,
    pub max_horizon: f64,
    /// Upper bound on the integration step.
    pub step: f64,
}

impl AllocationProblem {
    pub fn new(v: Vec<Vector>, target: Matrix, graph: CommGraph) -> Self {
        Self {
            v,
            target,
            graph,
            k_w: DEFAULT_KW,
            tolerance: DEFAULT_TOLERANCE,
            max_horizon: DEFAULT_MAX_HORIZON,
            step: 0.5,
        }
    }

    fn validate(&self) -> Result<()> {
        let agents = self.graph.agents();
        if self.v.len() != agents {
            return Err(Error::dim("AllocationProblem::v", agents, self.v.len()));
        }
        let n1 = self.target.nrows();
        if let Some(bad) = self.v.iter().find(|v| v.len() != n1) {
            return Err(Error::dim("AllocationProblem::v(i)", n1, bad.len()));
        }
        if !(self.k_w > 0.0) {
            return Err(Error::arg("k_w", "must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::arg("tolerance", "must be positive"));
        }
        Ok(())
    }
}

/// Flow variables at one instant. Multipliers are indexed by the scalar
/// constraint `c = j + k·n₁` (column-major over `M`), then by agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationState {
    pub w: Vec<Vector>,
    pub lambda: Vec<Vector>,
    pub mu: Vec<Vector>,
}

#[derive(Debug, Clone)]
pub struct AllocationResult {
    pub state: AllocationState,
    pub residual: f64,
    pub time: f64,
    pub steps: usize,
    /// `(t, residual)` samples, at most ~2000 of them.
    pub residual_history: Vec<(f64, f64)>,
    /// Recorded flow states (same time grid as `residual_history`).
    pub states: Vec<(f64, AllocationState)>,
}

impl AllocationResult {
    pub fn w(&self) -> &[Vector] {
        &self.state.w
    }

    /// Largest spread `max_c (max_i λ_{c,i} − min_i λ_{c,i})`.
    pub fn lambda_disagreement(&self) -> f64 {
        multiplier_spread(&self.state.lambda)
    }
}

fn multiplier_spread(lambda: &[Vector]) -> f64 {
    lambda
        .iter()
        .map(|l| l.max() - l.min())
        .fold(0.0, f64::max)
}

struct Layout {
    agents: usize,
    n1: usize,
    n2: usize,
}

impl Layout {
    fn constraints(&self) -> usize {
        self.n1 * self.n2
    }
    fn w(&self, i: usize, k: usize) -> usize {
        i * self.n2 + k
    }
    fn lambda(&self, c: usize, i: usize) -> usize {
        self.agents * self.n2 + c * self.agents + i
    }
    fn mu(&self, c: usize, i: usize) -> usize {
        self.agents * self.n2 + (self.constraints() + c) * self.agents + i
    }
    fn dim(&self) -> usize {
        self.agents * self.n2 + 2 * self.constraints() * self.agents
    }

    fn unpack(&self, x: &[f64]) -> AllocationState {
        let w = (0..self.agents)
            .map(|i| Vector::from_fn(self.n2, |k, _| x[self.w(i, k)]))
            .collect();
        let lambda = (0..self.constraints())
            .map(|c| Vector::from_fn(self.agents, |i, _| x[self.lambda(c, i)]))
            .collect();
        let mu = (0..self.constraints())
            .map(|c| Vector::from_fn(self.agents, |i, _| x[self.mu(c, i)]))
            .collect();
        AllocationState { w, lambda, mu }
    }
}

/// `‖Σᵢ v(i) w(i)ᵀ − M‖_F`. Harness-side check; no agent evaluates it.
pub fn constraint_residual(v: &[Vector], w: &[Vector], target: &Matrix) -> f64 {
    let mut sum = -target.clone();
    for (vi, wi) in v.iter().zip(w) {
        sum += vi * wi.transpose();
    }
    sum.norm()
}

const MAX_RECORDS: usize = 2000;

/// Integrates the regularized primal-dual flow from zero until the constraint
/// residual drops below the tolerance.
pub fn allocate(p: &AllocationProblem) -> Result<AllocationResult> {
    p.validate()?;
    let lay = Layout {
        agents: p.graph.agents(),
        n1: p.target.nrows(),
        n2: p.target.ncols(),
    };
    let n_agents = lay.agents as f64;
    let lmax = spectral_split(&laplacian(&p.graph))?.lambda_max();
    let vmax = p.v.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let step = p.step.min(2.0 / (p.k_w + lmax + vmax));

    let graph = &p.graph;
    let v = &p.v;
    let target = &p.target;
    let k_w = p.k_w;
    let rhs = |_t: f64, x: &[f64], dx: &mut [f64]| {
        for i in 0..lay.agents {
            for k in 0..lay.n2 {
                let mut acc = -k_w * x[lay.w(i, k)];
                for j in 0..lay.n1 {
                    acc += v[i][j] * x[lay.lambda(j + k * lay.n1, i)];
                }
                dx[lay.w(i, k)] = acc;
            }
        }
        for k in 0..lay.n2 {
            for j in 0..lay.n1 {
                let c = j + k * lay.n1;
                let m_share = target[(j, k)] / n_agents;
                for i in 0..lay.agents {
                    let (mut l_lambda, mut l_mu) = (0.0, 0.0);
                    for &nb in graph.neighbors(i) {
                        l_lambda += x[lay.lambda(c, i)] - x[lay.lambda(c, nb)];
                        l_mu += x[lay.mu(c, i)] - x[lay.mu(c, nb)];
                    }
                    dx[lay.mu(c, i)] = -l_lambda;
                    dx[lay.lambda(c, i)] = l_mu - v[i][j] * x[lay.w(i, k)] + m_share;
                }
            }
        }
    };

    let residual_of = |x: &[f64]| -> f64 {
        let mut sq = 0.0;
        for k in 0..lay.n2 {
            for j in 0..lay.n1 {
                let mut s = -target[(j, k)];
                for i in 0..lay.agents {
                    s += v[i][j] * x[lay.w(i, k)];
                }
                sq += s * s;
            }
        }
        sq.sqrt()
    };

    let max_steps = crate::numerics::step_count(step, p.max_horizon);
    let stride = max_steps.div_ceil(MAX_RECORDS).max(1);
    let mut best = f64::INFINITY;
    let mut history = vec![(0.0, target.norm())];
    let tol = p.tolerance;
    let traj = Integrator::new()
        .record(Record::Stride(stride))
        .observer(|view: StepView<'_>| {
            let r = residual_of(view.state);
            best = best.min(r);
            if view.index.is_multiple_of(stride) {
                history.push((view.t, r));
            }
            if r <= tol {
                Flow::Stop
            } else {
                Flow::Continue
            }
        })
        .run(OdeProblem::new(rhs, vec![0.0; lay.dim()], step, p.max_horizon))?;

    let final_state = traj.final_state();
    let residual = residual_of(final_state);
    if history.last().map(|h| h.0) != Some(traj.final_time()) {
        history.push((traj.final_time(), residual));
    }
    if residual > tol {
        return Err(Error::NotConverged {
            what: "allocation flow",
            residual: best,
            tolerance: tol,
            history,
        });
    }
    let states = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(t, s)| (*t, lay.unpack(s)))
        .collect();
    Ok(AllocationResult {
        state: lay.unpack(final_state),
        residual,
        time: traj.final_time(),
        steps: traj.steps,
        residual_history: history,
        states,
    })
}

/// Rank-one share held by one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Share {
    pub agent: usize,
    pub y: Vector,
    pub a: Matrix,
}

/// How the derivative samples are corrected before forming shares.
#[derive(Debug, Clone, Copy)]
pub enum ShareMode<'a> {
    /// `r̂ᵢ = rᵢ − B uᵢ` with a known input matrix.
    KnownInput(&'a Matrix),
    /// `Aᵢ = rᵢ yᵢᵀ`; requires `Σ uᵢ yᵢᵀ = 0` from [`extended_allocation`].
    Extended,
}

pub fn build_shares(ds: &FragmentedDataset, y: &[Vector], mode: ShareMode<'_>) -> Result<Vec<Share>> {
    if y.len() != ds.agents() {
        return Err(Error::dim("build_shares::y", ds.agents(), y.len()));
    }
    if let ShareMode::KnownInput(b) = mode {
        if b.shape() != (ds.n, ds.m) {
            return Err(Error::dim("build_shares::b", format!("{}x{}", ds.n, ds.m), format!("{}x{}", b.nrows(), b.ncols())));
        }
    }
    ds.samples
        .iter()
        .zip(y)
        .enumerate()
        .map(|(i, (s, yi))| {
            if yi.len() != ds.n {
                return Err(Error::dim("build_shares::y(i)", ds.n, yi.len()));
            }
            let r_hat = match mode {
                ShareMode::KnownInput(b) if ds.m > 0 => &s.r - b * &s.u,
                _ => s.r.clone(),
            };
            Ok(Share {
                agent: i,
                y: yi.clone(),
                a: &r_hat * yi.transpose(),
            })
        })
        .collect()
}

/// Σᵢ Aᵢ. Diagnostic only: no agent forms this sum.
pub fn share_sum(shares: &[Share]) -> Matrix {
    let n = shares.first().map(|s| s.a.nrows()).unwrap_or(0);
    shares.iter().fold(Matrix::zeros(n, n), |acc, s| acc + &s.a)
}

/// Settings shared by the splitting entry points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSettings {
    pub k_w: f64,
    pub tolerance: f64,
    pub max_horizon: f64,
    pub step: f64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self {
            k_w: DEFAULT_KW,
            tolerance: DEFAULT_TOLERANCE,
            max_horizon: DEFAULT_MAX_HORIZON,
            step: 0.5,
        }
    }
}

impl SplitSettings {
    fn problem(&self, v: Vec<Vector>, target: Matrix, graph: &CommGraph) -> AllocationProblem {
        AllocationProblem {
            k_w: self.k_w,
            tolerance: self.tolerance,
            max_horizon: self.max_horizon,
            step: self.step,
            ..AllocationProblem::new(v, target, graph.clone())
        }
    }
}

/// `v(i) = x(tᵢ)`, `M = Iₙ`.
pub fn state_allocation(ds: &FragmentedDataset, graph: &CommGraph, settings: &SplitSettings) -> Result<AllocationResult> {
    let v = ds.samples.iter().map(|s| s.x.clone()).collect();
    allocate(&settings.problem(v, Matrix::identity(ds.n, ds.n), graph))
}

/// `v(i) = [x(tᵢ); u(tᵢ)]`, `M = [Iₙ; 0]`, so that in addition to
/// `Σ xᵢyᵢᵀ = I` the shares satisfy `Σ uᵢyᵢᵀ = 0` and `Σ rᵢyᵢᵀ = A`
/// regardless of `B`.
pub fn extended_allocation(ds: &FragmentedDataset, graph: &CommGraph, settings: &SplitSettings) -> Result<AllocationResult> {
    let (n, m) = (ds.n, ds.m);
    let v = ds
        .samples
        .iter()
        .map(|s| Vector::from_iterator(n + m, s.x.iter().chain(s.u.iter()).cloned()))
        .collect();
    let mut target = Matrix::zeros(n + m, n);
    target.view_mut((0, 0), (n, n)).fill_with_identity();
    allocate(&settings.problem(v, target, graph))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_graph, GraphKind};
    use crate::model::DataSample;

    fn vecs(rows: &[&[f64]]) -> Vec<Vector> {
        rows.iter().map(|r| Vector::from_column_slice(r)).collect()
    }

    #[test]
    fn two_agent_scalar_split_is_even() {
        let g = make_graph(GraphKind::Path, 2).unwrap();
        let p = AllocationProblem::new(vecs(&[&[1.0], &[1.0]]), Matrix::identity(1, 1), g);
        let res = allocate(&p).unwrap();
        for w in res.w() {
            assert!((w[0] - 0.5).abs() < 1e-7, "w = {}", w[0]);
        }
        assert!(res.residual <= 1e-8);
    }

    #[test]
    fn orthogonal_samples_give_basis_vectors() {
        let g = make_graph(GraphKind::Ring, 3).unwrap();
        let v = vecs(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let res = allocate(&AllocationProblem::new(v, Matrix::identity(3, 3), g)).unwrap();
        for (i, w) in res.w().iter().enumerate() {
            let e = Vector::from_fn(3, |k, _| if k == i { 1.0 } else { 0.0 });
            assert!((w - e).norm() < 1e-7);
        }
    }

    #[test]
    fn unreachable_target_reports_best_residual() {
        // Collinear v's cannot reach M = I₂.
        let g = make_graph(GraphKind::Path, 2).unwrap();
        let p = AllocationProblem {
            max_horizon: 20.0,
            ..AllocationProblem::new(vecs(&[&[1.0, 0.0], &[2.0, 0.0]]), Matrix::identity(2, 2), g)
        };
        match allocate(&p) {
            Err(Error::NotConverged { residual, .. }) => assert!(residual >= 0.99),
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn scalar_shares_sum_to_a() {
        let ds = FragmentedDataset {
            samples: (0..2)
                .map(|i| DataSample {
                    index: i,
                    x: Vector::from_element(1, 1.0),
                    r: Vector::from_element(1, -1.0),
                    u: Vector::zeros(0),
                    d: None,
                })
                .collect(),
            n: 1,
            m: 0,
        };
        let y = vecs(&[&[0.5], &[0.5]]);
        let shares = build_shares(&ds, &y, ShareMode::Extended).unwrap();
        assert_eq!(shares[0].a[(0, 0)], -0.5);
        assert_eq!(shares[1].a[(0, 0)], -0.5);
        assert_eq!(share_sum(&shares)[(0, 0)], -1.0);
    }

    #[test]
    fn share_dimension_mismatch() {
        let ds = FragmentedDataset {
            samples: vec![DataSample {
                index: 0,
                x: Vector::from_element(1, 1.0),
                r: Vector::from_element(1, 1.0),
                u: Vector::zeros(0),
                d: None,
            }],
            n: 1,
            m: 0,
        };
        assert!(build_shares(&ds, &vecs(&[&[1.0], &[1.0]]), ShareMode::Extended).is_err());
        assert!(build_shares(&ds, &vecs(&[&[1.0, 2.0]]), ShareMode::Extended).is_err());
    }
}
