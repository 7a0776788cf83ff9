//! Distributed computation of the stabilizing solution of
//! `AᵀP + PA + Q − PDP = 0`, `D = BR⁻¹Bᵀ`, and of the LQR gain `K* = −R⁻¹BᵀP*`.
//!
//! Both distributed flows start from `Pᵢ = Yᵢ = 0`; other initial points are
//! outside the region where convergence is guaranteed and are not offered.

use crate::coords::{CoordinateMap, StructuredCoords};
use crate::error::{Error, Result};
use crate::flow::{Coupling, FlowRun, FlowSettings, NetworkFlow};
use crate::graph::{CommGraph, SpectralSplit};
use crate::lyapunov::lyapunov_v;
use crate::numerics::{self, Flow, Integrator, Matrix, OdeProblem, Record, StepView, Trajectory};
use crate::oracles;

pub use crate::coords::{phi_l, phi_r};

#[derive(Debug, Clone)]
pub struct RiccatiProblem {
    pub shares: Vec<Matrix>,
    pub b: Matrix,
    pub q: Matrix,
    pub r: Matrix,
    pub graph: CommGraph,
    pub settings: FlowSettings,
    d: Matrix,
}

impl RiccatiProblem {
    pub fn new(shares: Vec<Matrix>, b: Matrix, q: Matrix, r: Matrix, graph: CommGraph, settings: FlowSettings) -> Result<Self> {
        let n = numerics::require_square(&q, "RiccatiProblem::q")?;
        if b.nrows() != n {
            return Err(Error::dim("RiccatiProblem::b", format!("{n} rows"), b.nrows()));
        }
        if r.shape() != (b.ncols(), b.ncols()) {
            return Err(Error::dim("RiccatiProblem::r", format!("{0}x{0}", b.ncols()), format!("{:?}", r.shape())));
        }
        for (m, name) in [(&q, "q"), (&r, "r")] {
            if (m - m.transpose()).norm() > 1e-12 * m.norm().max(1.0) {
                return Err(Error::arg(name, "must be symmetric"));
            }
        }
        numerics::require_pd(&q, "Q", 0.0)?;
        numerics::require_pd(&r, "R", 0.0)?;
        let d = oracles::input_weight(&b, &r)?;
        let p = Self {
            shares,
            b,
            q,
            r,
            graph,
            settings,
            d,
        };
        p.network(Coupling::Proportional).validate()?;
        Ok(p)
    }

    pub fn agents(&self) -> usize {
        self.shares.len()
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    /// `D = BR⁻¹Bᵀ`.
    pub fn d(&self) -> &Matrix {
        &self.d
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
            d: Some(&self.d),
            graph: &self.graph,
            coupling,
            settings: self.settings,
        }
    }

    fn zeros(&self) -> Vec<Matrix> {
        vec![Matrix::zeros(self.n(), self.n()); self.agents()]
    }
}

#[derive(Debug, Clone)]
pub struct RiccatiCertificate {
    pub p: Matrix,
    pub k: Matrix,
    pub are_residual: f64,
    /// `‖P*^{1/2} Q⁻¹ P*^{1/2}‖`.
    pub rho: f64,
    /// Spectral abscissa of `ΣAᵢ + BK*`.
    pub closed_loop_abscissa: f64,
    pub agent_errors: Vec<f64>,
}

/// Centralized `Ṗ = AᵀP + PA + Q − PDP` from a PSD `P0`.
pub fn dre_centralized(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p0: &Matrix, step: f64, horizon: f64) -> Result<Trajectory> {
    let n = numerics::require_square(a, "dre_centralized::a")?;
    if q.shape() != (n, n) || p0.shape() != (n, n) || b.nrows() != n {
        return Err(Error::dim("dre_centralized", format!("{n}x{n}"), "Q, P0 or B of another shape"));
    }
    let d = oracles::input_weight(b, r)?;
    if (p0 - p0.transpose()).norm() > 1e-12 * p0.norm().max(1.0) {
        return Err(Error::arg("p0", "must be symmetric"));
    }
    let min_eig = numerics::min_sym_eigenvalue(p0);
    if min_eig < -1e-12 * p0.norm().max(1.0) {
        return Err(Error::Indefinite {
            what: "P0",
            min_eig,
            t: 0.0,
        });
    }
    let at = a.transpose();
    let mut scratch = Matrix::zeros(n, n);
    let rhs = move |_t: f64, x: &[f64], dx: &mut [f64]| {
        let p = nalgebra::DMatrixView::from_slice(x, n, n);
        let mut dp = nalgebra::DMatrixViewMut::from_slice(dx, n, n);
        dp.copy_from(q);
        dp.gemm(1.0, &at, &p, 1.0);
        dp.gemm(1.0, &p, a, 1.0);
        scratch.gemm(1.0, &p, &d, 0.0);
        dp.gemm(-1.0, &scratch, &p, 1.0);
    };
    let steps = numerics::step_count(step, horizon);
    let mut indefinite = None;
    let traj = Integrator::new()
        .record(Record::at_most(steps, 20_001))
        .escape_norm(1e12)
        .observer(|view: StepView<'_>| {
            numerics::symmetrize_slice(view.state, n);
            let p = Matrix::from_column_slice(n, n, view.state);
            let min_eig = numerics::min_sym_eigenvalue(&p);
            if min_eig < -1e-8 * p.norm().max(1.0) {
                indefinite = Some(Error::Indefinite {
                    what: "P(t)",
                    min_eig,
                    t: view.t,
                });
                return Flow::Stop;
            }
            Flow::Continue
        })
        .run(OdeProblem::new(rhs, p0.as_slice().to_vec(), step, horizon))?;
    match indefinite {
        Some(e) => Err(e),
        None => Ok(traj),
    }
}

/// Diffusively coupled Riccati flow from `Pᵢ(0) = 0`.
pub fn dist_dre_coupled(p: &RiccatiProblem) -> Result<FlowRun> {
    p.network(Coupling::Proportional).run(&p.zeros(), &[], true)
}

/// PI-coupled Riccati flow from `Pᵢ(0) = Yᵢ(0) = 0`, with the certificate
/// extracted from the agent average at the horizon.
pub fn dist_dre_pi(p: &RiccatiProblem) -> Result<(FlowRun, RiccatiCertificate)> {
    let run = p.network(Coupling::ProportionalIntegral).run(&p.zeros(), &p.zeros(), true)?;
    let a = p.reconstructed_a();
    let last = run.last();
    let consensus = numerics::symmetrize(&run.average_p(last));
    let are_residual = oracles::are_residual(&a, &p.d, &p.q, &consensus);
    if !(are_residual <= p.settings.tolerance) {
        let history = (0..run.len())
            .map(|k| (run.times()[k], oracles::are_residual(&a, &p.d, &p.q, &run.average_p(k))))
            .collect();
        return Err(Error::NotConverged {
            what: "PI Riccati flow",
            residual: are_residual,
            tolerance: p.settings.tolerance,
            history,
        });
    }
    numerics::require_pd(&consensus, "P* (Riccati consensus)", 0.0)?;
    let k = oracles::lqr_gain(&p.b, &p.r, &consensus)?;
    let closed_loop_abscissa = numerics::spectral_abscissa(&(&a + &p.b * &k));
    if closed_loop_abscissa >= 0.0 {
        return Err(Error::NotHurwitz {
            what: "distributed closed loop A + BK*",
            abscissa: closed_loop_abscissa,
        });
    }
    let rho = decay_constant(&consensus, &p.q)?;
    let scale = consensus.norm();
    let agent_errors = run.ps(last).iter().map(|pi| (pi - &consensus).norm() / scale).collect();
    Ok((
        run,
        RiccatiCertificate {
            p: consensus,
            k,
            are_residual,
            rho,
            closed_loop_abscissa,
            agent_errors,
        },
    ))
}

/// `ρ = ‖P*^{1/2} Q⁻¹ P*^{1/2}‖₂`.
pub fn decay_constant(p_star: &Matrix, q: &Matrix) -> Result<f64> {
    numerics::require_pd(p_star, "P*", 0.0)?;
    let q_inv = q.clone().try_inverse().ok_or(Error::Singular { context: "state weight Q" })?;
    let half = numerics::sym_function(p_star, f64::sqrt);
    Ok(numerics::max_sym_eigenvalue(&numerics::symmetrize(&(&half * q_inv * &half))))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiDecay {
    pub v: f64,
    pub rho: f64,
}

impl RiccatiDecay {
    /// `V(0)·exp(−2t/ρ)`, the bound `V(t)` must stay under.
    pub fn bound(&self, t: f64) -> f64 {
        self.v * (-2.0 * t / self.rho).exp()
    }
}

/// `V(P)` as in [`lyapunov_v`] together with the decay constant `ρ`.
pub fn riccati_v(p: &Matrix, p_star: &Matrix, q: &Matrix) -> Result<RiccatiDecay> {
    Ok(RiccatiDecay {
        v: lyapunov_v(p, p_star)?,
        rho: decay_constant(p_star, q)?,
    })
}

/// Structured coordinates of a PI Riccati state. The equilibrium shift of
/// the integral states has the same form as in the Lyapunov case because
/// the constant terms `Q − P*DP*` are identical across agents.
pub fn structured_coords_dre(
    ps: &[Matrix],
    ys: &[Matrix],
    shares: &[Matrix],
    split: &SpectralSplit,
    p_star: &Matrix,
    gamma: f64,
) -> Result<StructuredCoords> {
    CoordinateMap::new(shares, split, p_star, gamma)?.forward(ps, ys)
}
