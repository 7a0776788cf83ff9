//! Engine shared by the distributed Lyapunov and Riccati flows.
//!
//! Agent `i` integrates
//!
//! ```text
//! Ṗᵢ = N(AᵢᵀPᵢ + PᵢAᵢ) + Q − PᵢDPᵢ + γ Σⱼ (Pⱼ − Pᵢ) [+ γ Σⱼ (Yⱼ − Yᵢ)]
//! Ẏᵢ = −γ Σⱼ (Pⱼ − Pᵢ)
//! ```
//!
//! over its neighbors `j`, where `D = 0` for the Lyapunov flows and the
//! bracketed integral term is present only with PI coupling. Neighbor sums
//! are accumulated in ascending index order so runs are bit-reproducible.

use nalgebra::{DMatrixView, DMatrixViewMut};

use crate::error::{Error, Result};
use crate::graph::{laplacian, spectral_split, CommGraph};
use crate::numerics::{self, Flow, Integrator, Matrix, OdeProblem, Record, StepView};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// Diffusive coupling only; practical convergence.
    Proportional,
    /// Diffusive coupling plus integral consensus states `Yᵢ`.
    ProportionalIntegral,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSettings {
    pub gamma: f64,
    /// Upper bound on the RK4 step; the stiffness rule may shrink it.
    pub step: f64,
    pub horizon: f64,
    /// Frobenius residual required of the consensus solution.
    pub tolerance: f64,
    /// Cap on the number of recorded time points.
    pub max_records: usize,
}

impl FlowSettings {
    pub fn new(gamma: f64, horizon: f64) -> Self {
        Self {
            gamma,
            step: 0.01,
            horizon,
            tolerance: 1e-6,
            max_records: 2000,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::arg("gamma", format!("must be positive, got {}", self.gamma)));
        }
        if !(self.step > 0.0) {
            return Err(Error::arg("step", format!("must be positive, got {}", self.step)));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::arg("horizon", format!("must be positive, got {}", self.horizon)));
        }
        Ok(())
    }
}

/// Everything an agent network needs to run one of the coupled flows.
#[derive(Debug, Clone)]
pub(crate) struct NetworkFlow<'a> {
    pub shares: &'a [Matrix],
    pub q: &'a Matrix,
    /// Quadratic weight `D = BR⁻¹Bᵀ`; `None` for the Lyapunov flows.
    pub d: Option<&'a Matrix>,
    pub graph: &'a CommGraph,
    pub coupling: Coupling,
    pub settings: FlowSettings,
}

/// Recorded output of a coupled flow.
#[derive(Debug, Clone)]
pub struct FlowRun {
    pub trajectory: numerics::Trajectory,
    pub n: usize,
    pub agents: usize,
    pub coupling: Coupling,
    /// Step chosen by the stiffness rule at t = 0.
    pub initial_step: f64,
}

impl FlowRun {
    fn block(&self, k: usize, offset: usize) -> Matrix {
        let nn = self.n * self.n;
        Matrix::from_column_slice(self.n, self.n, &self.trajectory.states[k][offset..offset + nn])
    }

    pub fn times(&self) -> &[f64] {
        &self.trajectory.times
    }

    pub fn len(&self) -> usize {
        self.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory.is_empty()
    }

    pub fn last(&self) -> usize {
        self.len() - 1
    }

    /// `Pᵢ` at recorded point `k`.
    pub fn p(&self, k: usize, agent: usize) -> Matrix {
        self.block(k, agent * self.n * self.n)
    }

    /// `Yᵢ` at recorded point `k` (zero without integral coupling).
    pub fn y(&self, k: usize, agent: usize) -> Matrix {
        match self.coupling {
            Coupling::Proportional => Matrix::zeros(self.n, self.n),
            Coupling::ProportionalIntegral => self.block(k, (self.agents + agent) * self.n * self.n),
        }
    }

    pub fn ps(&self, k: usize) -> Vec<Matrix> {
        (0..self.agents).map(|i| self.p(k, i)).collect()
    }

    pub fn ys(&self, k: usize) -> Vec<Matrix> {
        (0..self.agents).map(|i| self.y(k, i)).collect()
    }

    pub fn average_p(&self, k: usize) -> Matrix {
        let sum = self.ps(k).into_iter().fold(Matrix::zeros(self.n, self.n), |acc, p| acc + p);
        sum / self.agents as f64
    }

    pub fn sum_y(&self, k: usize) -> Matrix {
        self.ys(k).into_iter().fold(Matrix::zeros(self.n, self.n), |acc, y| acc + y)
    }

    /// `max_{i,j} ‖Pᵢ − Pⱼ‖_F` at recorded point `k`.
    pub fn disagreement(&self, k: usize) -> f64 {
        let ps = self.ps(k);
        let mut worst = 0.0_f64;
        for i in 0..ps.len() {
            for j in (i + 1)..ps.len() {
                worst = worst.max((&ps[i] - &ps[j]).norm());
            }
        }
        worst
    }

    /// `‖Pᵢ − P*‖_F / ‖P*‖_F` for each agent at recorded point `k`.
    pub fn relative_errors(&self, k: usize, p_star: &Matrix) -> Vec<f64> {
        let scale = p_star.norm();
        self.ps(k).iter().map(|p| (p - p_star).norm() / scale).collect()
    }

    pub fn final_relative_errors(&self, p_star: &Matrix) -> Vec<f64> {
        self.relative_errors(self.last(), p_star)
    }
}

impl NetworkFlow<'_> {
    fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        self.settings.validate()?;
        let n = numerics::require_square(self.q, "flow::q")?;
        if self.shares.len() != self.graph.agents() {
            return Err(Error::dim("flow::shares", self.graph.agents(), self.shares.len()));
        }
        if let Some(a) = self.shares.iter().find(|a| a.shape() != (n, n)) {
            return Err(Error::dim("flow::share", format!("{n}x{n}"), format!("{}x{}", a.nrows(), a.ncols())));
        }
        if let Some(d) = self.d {
            if d.shape() != (n, n) {
                return Err(Error::dim("flow::d", format!("{n}x{n}"), format!("{}x{}", d.nrows(), d.ncols())));
            }
        }
        Ok(())
    }

    /// `0.5 / (N·maxᵢ‖Aᵢ‖ + γ·λ_max(L) [+ ‖D‖·maxᵢ‖Pᵢ‖])`.
    fn stiffness_base(&self) -> Result<(f64, f64)> {
        let agents = self.graph.agents() as f64;
        let share_norm = self
            .shares
            .iter()
            .map(numerics::spectral_norm)
            .fold(0.0, f64::max);
        let lmax = if self.graph.agents() < 2 {
            0.0
        } else {
            spectral_split(&laplacian(self.graph))?.lambda_max()
        };
        let d_norm = self.d.map(numerics::spectral_norm).unwrap_or(0.0);
        Ok((agents * share_norm + self.settings.gamma * lmax, d_norm))
    }

    pub fn run(&self, p0: &[Matrix], y0: &[Matrix], psd_guard: bool) -> Result<FlowRun> {
        self.validate()?;
        let n = self.n();
        let nn = n * n;
        let agents = self.graph.agents();
        if p0.len() != agents || p0.iter().any(|p| p.shape() != (n, n)) {
            return Err(Error::dim("flow::p0", format!("{agents} matrices of {n}x{n}"), p0.len()));
        }
        let integral = self.coupling == Coupling::ProportionalIntegral;
        if integral && (y0.len() != agents || y0.iter().any(|y| y.shape() != (n, n))) {
            return Err(Error::dim("flow::y0", format!("{agents} matrices of {n}x{n}"), y0.len()));
        }

        let mut x0 = Vec::with_capacity(if integral { 2 * agents * nn } else { agents * nn });
        for p in p0 {
            x0.extend_from_slice(p.as_slice());
        }
        if integral {
            for y in y0 {
                x0.extend_from_slice(y.as_slice());
            }
        }

        let (base, d_norm) = self.stiffness_base()?;
        let max_p = |x: &[f64]| -> f64 {
            (0..agents)
                .map(|i| numerics::spectral_norm(&Matrix::from_column_slice(n, n, &x[i * nn..(i + 1) * nn])))
                .fold(0.0, f64::max)
        };
        let rule = |x: &[f64]| 0.5 / (base + d_norm * max_p(x));
        let initial_step = self.settings.step.min(rule(&x0));
        let est_steps = numerics::step_count(initial_step, self.settings.horizon);
        let record = Record::at_most(est_steps, self.settings.max_records);

        let gamma = self.settings.gamma;
        let scale = agents as f64;
        let shares = self.shares;
        let q = self.q;
        let d = self.d;
        let graph = self.graph;
        let mut scratch = Matrix::zeros(n, n);
        let rhs = move |_t: f64, x: &[f64], dx: &mut [f64]| {
            for i in 0..agents {
                let p_i = DMatrixView::from_slice(&x[i * nn..(i + 1) * nn], n, n);
                {
                    let mut dp = DMatrixViewMut::from_slice(&mut dx[i * nn..(i + 1) * nn], n, n);
                    dp.copy_from(q);
                    dp.gemm_tr(scale, &shares[i], &p_i, 1.0);
                    dp.gemm(scale, &p_i, &shares[i], 1.0);
                    if let Some(d) = d {
                        scratch.gemm(1.0, &p_i, d, 0.0);
                        dp.gemm(-1.0, &scratch, &p_i, 1.0);
                    }
                }
                let base_i = i * nn;
                for &j in graph.neighbors(i) {
                    let base_j = j * nn;
                    for e in 0..nn {
                        dx[base_i + e] += gamma * (x[base_j + e] - x[base_i + e]);
                    }
                }
                if integral {
                    let yoff = agents * nn;
                    for e in 0..nn {
                        dx[yoff + base_i + e] = 0.0;
                    }
                    for &j in graph.neighbors(i) {
                        let base_j = j * nn;
                        for e in 0..nn {
                            dx[base_i + e] += gamma * (x[yoff + base_j + e] - x[yoff + base_i + e]);
                            dx[yoff + base_i + e] -= gamma * (x[base_j + e] - x[base_i + e]);
                        }
                    }
                }
            }
        };

        let mut guard_error: Option<Error> = None;
        let mut integ = Integrator::new()
            .record(record)
            .escape_norm(1e12)
            .observer(|view: StepView<'_>| {
                for i in 0..agents {
                    numerics::symmetrize_slice(&mut view.state[i * nn..(i + 1) * nn], n);
                }
                if psd_guard && record.keeps(view.index) {
                    for i in 0..agents {
                        let p = Matrix::from_column_slice(n, n, &view.state[i * nn..(i + 1) * nn]);
                        let min_eig = numerics::min_sym_eigenvalue(&p);
                        if min_eig < -1e-8 * p.norm().max(1.0) {
                            guard_error = Some(Error::Indefinite {
                                what: "P(t)",
                                min_eig,
                                t: view.t,
                            });
                            return Flow::Stop;
                        }
                    }
                }
                Flow::Continue
            });
        if d.is_some() {
            let cap = self.settings.step;
            integ = integ.step_rule(100, move |x| cap.min(rule(x)));
        } else {
            integ = integ.step_rule(usize::MAX, move |_| initial_step);
        }
        let trajectory = integ.run(OdeProblem::new(rhs, x0, self.settings.step, self.settings.horizon))?;
        if let Some(e) = guard_error {
            return Err(e);
        }
        Ok(FlowRun {
            trajectory,
            n,
            agents,
            coupling: self.coupling,
            initial_step,
        })
    }
}

/// One CSV-ready record per (recorded time, agent).
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRecord {
    pub t: f64,
    pub agent: usize,
    pub rel_error: Option<f64>,
    pub disagreement: Option<f64>,
    pub residual: Option<f64>,
    pub lyap_v: Option<f64>,
    pub lyap_bound: Option<f64>,
}
