//! Distributed computation of the Lyapunov certificate `P*` solving
//! `(ΣAᵢ)ᵀP + P(ΣAᵢ) + Q = 0`, where agent `i` only knows its share `Aᵢ`.

use crate::coords::{CompactBlocks, CoordinateMap, StructuredCoords};
use crate::error::{Error, Result};
use crate::flow::{Coupling, FlowRun, FlowSettings, NetworkFlow};
use crate::graph::{CommGraph, SpectralSplit};
use crate::numerics::{self, Integrator, Matrix, OdeProblem, Record, Trajectory};
use crate::oracles;

#[derive(Debug, Clone)]
pub struct LyapunovProblem {
    pub shares: Vec<Matrix>,
    pub q: Matrix,
    pub graph: CommGraph,
    pub settings: FlowSettings,
}

impl LyapunovProblem {
    pub fn new(shares: Vec<Matrix>, q: Matrix, graph: CommGraph, settings: FlowSettings) -> Result<Self> {
        let p = Self {
            shares,
            q,
            graph,
            settings,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        numerics::require_square(&self.q, "LyapunovProblem::q")?;
        if (&self.q - self.q.transpose()).norm() > 1e-12 * self.q.norm().max(1.0) {
            return Err(Error::arg("q", "must be symmetric"));
        }
        numerics::require_pd(&self.q, "Q", 0.0)?;
        self.network(Coupling::Proportional).validate()
    }

    pub fn agents(&self) -> usize {
        self.shares.len()
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    /// `Σ Aᵢ`; diagnostics and oracles only.
    pub fn reconstructed_a(&self) -> Matrix {
        self.shares
            .iter()
            .fold(Matrix::zeros(self.n(), self.n()), |acc, a| acc + a)
    }

    fn network(&self, coupling: Coupling) -> NetworkFlow<'_> {
        NetworkFlow {
            shares: &self.shares,
            q: &self.q,
            d: None,
            graph: &self.graph,
            coupling,
            settings: self.settings,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LyapunovCertificate {
    pub p: Matrix,
    /// `‖AᵀP + PA + Q‖_F` with `A = ΣAᵢ`.
    pub residual: f64,
    /// `‖Pᵢ − P‖_F / ‖P‖_F` per agent at the horizon.
    pub agent_errors: Vec<f64>,
}

/// Centralized `Ṗ = AᵀP + PA + Q`, states are `vec(P)`.
pub fn dle_centralized(a: &Matrix, q: &Matrix, p0: &Matrix, step: f64, horizon: f64) -> Result<Trajectory> {
    let n = numerics::require_square(a, "dle_centralized::a")?;
    if q.shape() != (n, n) || p0.shape() != (n, n) {
        return Err(Error::dim("dle_centralized", format!("{n}x{n}"), "Q or P0 of another shape"));
    }
    let at = a.transpose();
    let rhs = |_t: f64, x: &[f64], dx: &mut [f64]| {
        let p = nalgebra::DMatrixView::from_slice(x, n, n);
        let mut dp = nalgebra::DMatrixViewMut::from_slice(dx, n, n);
        dp.copy_from(q);
        dp.gemm(1.0, &at, &p, 1.0);
        dp.gemm(1.0, &p, a, 1.0);
    };
    let steps = numerics::step_count(step, horizon);
    Integrator::new()
        .record(Record::at_most(steps, 20_001))
        .escape_norm(1e12)
        .run(OdeProblem::new(rhs, p0.as_slice().to_vec(), step, horizon))
}

/// Diffusively coupled flow; converges only to a neighborhood of `P*`.
pub fn dist_dle_coupled(p: &LyapunovProblem, p0: &[Matrix]) -> Result<FlowRun> {
    p.network(Coupling::Proportional).run(p0, &[], false)
}

/// PI-coupled flow. Returns the run together with a certificate built from
/// the agent average at the horizon; fails if its residual exceeds the
/// configured tolerance.
pub fn dist_dle_pi(p: &LyapunovProblem, p0: &[Matrix], y0: &[Matrix]) -> Result<(FlowRun, LyapunovCertificate)> {
    let run = p.network(Coupling::ProportionalIntegral).run(p0, y0, false)?;
    let a = p.reconstructed_a();
    let last = run.last();
    let consensus = numerics::symmetrize(&run.average_p(last));
    let residual = oracles::lyapunov_residual(&a, &consensus, &p.q);
    if !(residual <= p.settings.tolerance) {
        let history = (0..run.len())
            .map(|k| (run.times()[k], oracles::lyapunov_residual(&a, &run.average_p(k), &p.q)))
            .collect();
        return Err(Error::NotConverged {
            what: "PI Lyapunov flow",
            residual,
            tolerance: p.settings.tolerance,
            history,
        });
    }
    numerics::require_pd(&consensus, "P* (Lyapunov consensus)", 0.0)?;
    let scale = consensus.norm();
    let agent_errors = run.ps(last).iter().map(|pi| (pi - &consensus).norm() / scale).collect();
    Ok((
        run,
        LyapunovCertificate {
            p: consensus,
            residual,
            agent_errors,
        },
    ))
}

/// `V(P) = tr(P*^{-1/2} P̃ P*^{-1} P̃ P*^{-1/2})`, `P̃ = P − P*`.
pub fn lyapunov_v(p: &Matrix, p_star: &Matrix) -> Result<f64> {
    numerics::require_pd(p_star, "P*", 0.0)?;
    if p.shape() != p_star.shape() {
        return Err(Error::dim("lyapunov_v", format!("{:?}", p_star.shape()), format!("{:?}", p.shape())));
    }
    let inv_sqrt = numerics::sym_function(p_star, |l| 1.0 / l.sqrt());
    let inv = &inv_sqrt * &inv_sqrt;
    let tilde = p - p_star;
    Ok((&inv_sqrt * &tilde * inv * &tilde * &inv_sqrt).trace())
}

/// Structured coordinates `(ξ₁, ξ₂, ξ₃, ξ₄)` of a PI Lyapunov state.
pub fn structured_coords_dle(
    ps: &[Matrix],
    ys: &[Matrix],
    shares: &[Matrix],
    split: &SpectralSplit,
    p_star: &Matrix,
    gamma: f64,
) -> Result<StructuredCoords> {
    CoordinateMap::new(shares, split, p_star, gamma)?.forward(ps, ys)
}

/// Smallest `γ` for which
/// `2γA₂₃ ≻ A₂₂ + A₂₂ᵀ + (A₁₂ᵀP̄ + A₂₁) Q̄⁻¹ (P̄A₁₂ + A₂₁ᵀ)`, with
/// `P̄ = P*⁻¹ ⊗ P*⁻¹` and `Q̄ = 2 P*⁻¹ ⊗ P*⁻¹QP*⁻¹`. Clamped at zero when
/// every positive gain works. Needs the oracle `P*`, so it is a diagnostic.
pub fn gamma_bound_dle(shares: &[Matrix], split: &SpectralSplit, q: &Matrix, p_star: &Matrix) -> Result<f64> {
    numerics::require_pd(p_star, "P*", 0.0)?;
    let blocks = CompactBlocks::new(shares, split)?;
    let p_inv = numerics::sym_function(p_star, |l| 1.0 / l);
    let p_bar = numerics::kron(&p_inv, &p_inv);
    let q_bar = numerics::kron(&p_inv, &(&p_inv * q * &p_inv)) * 2.0;
    let q_bar_inv = numerics::sym_function(&q_bar, |l| 1.0 / l);
    let cross = &p_bar * &blocks.a12 + blocks.a21.transpose();
    let rhs = &blocks.a22 + blocks.a22.transpose() + cross.transpose() * q_bar_inv * &cross;
    let scale = blocks.a23.diagonal().map(|g| 1.0 / g.sqrt());
    let scaled = Matrix::from_fn(rhs.nrows(), rhs.ncols(), |i, j| scale[i] * rhs[(i, j)] * scale[j]);
    Ok((numerics::max_sym_eigenvalue(&scaled) / 2.0).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_graph, GraphKind};

    fn s(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_dle_closed_form() {
        let traj = dle_centralized(&s(-1.0), &s(2.0), &s(0.0), 0.001, 3.0).unwrap();
        for (t, x) in traj.times.iter().zip(&traj.states) {
            assert!((x[0] - (1.0 - (-2.0 * t).exp())).abs() < 1e-10);
        }
    }

    #[test]
    fn identity_dle_limit() {
        let traj = dle_centralized(&-Matrix::identity(2, 2), &Matrix::identity(2, 2), &Matrix::zeros(2, 2), 0.01, 20.0).unwrap();
        let p = Matrix::from_column_slice(2, 2, traj.final_state());
        assert!((p - Matrix::identity(2, 2) * 0.5).norm() < 1e-8);
    }

    #[test]
    fn v_examples() {
        assert_eq!(lyapunov_v(&s(1.0), &s(1.0)).unwrap(), 0.0);
        assert!((lyapunov_v(&s(2.0), &s(1.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!(lyapunov_v(&s(2.0), &s(-1.0)).is_err());
    }

    #[test]
    fn single_agent_flow_is_centralized() {
        // With one agent there are no neighbor terms and N·A₁ = A.
        let g = CommGraph::new(1, []).unwrap();
        let a = Matrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]);
        let q = Matrix::identity(2, 2);
        let settings = FlowSettings {
            step: 0.01,
            ..FlowSettings::new(1.0, 2.0)
        };
        let prob = LyapunovProblem::new(vec![a.clone()], q.clone(), g, settings).unwrap();
        let p0 = Matrix::zeros(2, 2);
        let dist = dist_dle_coupled(&prob, std::slice::from_ref(&p0)).unwrap();
        let central = dle_centralized(&a, &q, &p0, dist.initial_step, 2.0).unwrap();
        assert_eq!(dist.trajectory.final_state(), central.final_state());
    }

    #[test]
    fn non_pd_q_rejected() {
        let g = make_graph(GraphKind::Path, 2).unwrap();
        let res = LyapunovProblem::new(vec![s(-0.5), s(-0.5)], s(-1.0), g, FlowSettings::new(10.0, 1.0));
        assert!(res.is_err());
    }
}
