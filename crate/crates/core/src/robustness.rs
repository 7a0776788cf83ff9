//! Certainty-equivalent LQR designs and their suboptimality certificates
//! under input-matrix uncertainty and noisy derivative data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::flow::FlowSettings;
use crate::graph::CommGraph;
use crate::numerics::{self, Matrix};
use crate::oracles;
use crate::riccati::{dist_dre_pi, RiccatiCertificate, RiccatiProblem};

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyModel {
    pub b0: Matrix,
    /// Radius the certificate is issued for.
    pub epsilon: f64,
    /// Realized `‖Δ_B‖₂`.
    pub kappa: f64,
    pub seed: u64,
}

impl UncertaintyModel {
    pub fn new(b0: Matrix, epsilon: f64, kappa: f64, seed: u64) -> Result<Self> {
        if !(epsilon >= 0.0) || !(kappa >= 0.0) {
            return Err(Error::arg("epsilon/kappa", "must be non-negative"));
        }
        if kappa > epsilon {
            return Err(Error::arg("kappa", format!("{kappa} exceeds the uncertainty radius {epsilon}")));
        }
        Ok(Self { b0, epsilon, kappa, seed })
    }

    /// `count` perturbations `κ G/‖G‖₂`, `G` standard Gaussian.
    pub fn draws(&self, count: usize) -> Vec<Matrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (n, m) = self.b0.shape();
        (0..count)
            .map(|_| {
                let g = Matrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
                let norm = numerics::spectral_norm(&g);
                if self.kappa == 0.0 || norm == 0.0 {
                    Matrix::zeros(n, m)
                } else {
                    g * (self.kappa / norm)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateKind {
    UncertainB,
    NoisyData,
}

impl CertificateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CertificateKind::UncertainB => "uncertain-b",
            CertificateKind::NoisyData => "noisy-data",
        }
    }
}

/// Outcome of a robustness check. `factor` and `cost_bound` are `None` when
/// the sufficient condition fails; that is a result, not an error.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessCertificate {
    pub kind: CertificateKind,
    pub p0: Matrix,
    pub k0: Matrix,
    /// Largest ε (or τ) for which the condition holds.
    pub threshold: f64,
    /// The ε or τ that was checked.
    pub level: f64,
    /// η ∈ (0, 1] or ζ ≥ 1.
    pub factor: Option<f64>,
    pub cost_bound: Option<f64>,
    pub realized_cost: Option<f64>,
}

impl RobustnessCertificate {
    pub fn certified(&self) -> bool {
        self.factor.is_some()
    }

    /// Cost of `K0` on the true system; `None` if it does not stabilize it.
    pub fn evaluate(&self, a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<Option<f64>> {
        match oracles::lqr_cost(a, b, &self.k0, q, r) {
            Ok(j) => Ok(Some(j)),
            Err(Error::NotHurwitz { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn with_realized_cost(mut self, cost: Option<f64>) -> Self {
        self.realized_cost = cost;
        self
    }
}

/// How the nominal ARE is solved.
#[derive(Debug, Clone)]
pub enum DesignMode<'a> {
    /// Newton–Kleinman on `Σ Aᵢ`. Used for Monte-Carlo sweeps.
    Centralized,
    /// The PI Riccati flow over the agent network.
    Distributed { graph: &'a CommGraph, settings: FlowSettings },
}

#[derive(Debug, Clone)]
pub struct NominalDesign {
    pub p0: Matrix,
    pub k0: Matrix,
    pub are_residual: f64,
    /// Present for distributed designs.
    pub flow: Option<RiccatiCertificate>,
    /// `‖P_flow − P_newton‖_F / ‖P_newton‖_F` for distributed designs.
    pub oracle_gap: Option<f64>,
}

fn nominal_design(shares: &[Matrix], b: &Matrix, q: &Matrix, r: &Matrix, mode: DesignMode<'_>) -> Result<NominalDesign> {
    let n = numerics::require_square(q, "nominal_design::q")?;
    let a0 = shares.iter().fold(Matrix::zeros(n, n), |acc, a| acc + a);
    let newton = oracles::solve_are_newton(&a0, b, q, r, None)?;
    match mode {
        DesignMode::Centralized => Ok(NominalDesign {
            p0: newton.p,
            k0: newton.k,
            are_residual: newton.residual,
            flow: None,
            oracle_gap: None,
        }),
        DesignMode::Distributed { graph, settings } => {
            let problem = RiccatiProblem::new(shares.to_vec(), b.clone(), q.clone(), r.clone(), graph.clone(), settings)?;
            let (_, cert) = dist_dre_pi(&problem)?;
            let gap = (&cert.p - &newton.p).norm() / newton.p.norm();
            Ok(NominalDesign {
                p0: cert.p.clone(),
                k0: cert.k.clone(),
                are_residual: cert.are_residual,
                flow: Some(cert),
                oracle_gap: Some(gap),
            })
        }
    }
}

/// Nominal design with `B0` from shares that do not depend on `B`
/// (built with [`crate::splitting::extended_allocation`]).
pub fn nominal_design_uncertain_b(shares: &[Matrix], b0: &Matrix, q: &Matrix, r: &Matrix, mode: DesignMode<'_>) -> Result<NominalDesign> {
    nominal_design(shares, b0, q, r, mode)
}

/// Nominal design from shares built on noisy derivative samples.
pub fn nominal_design_noisy(shares: &[Matrix], b: &Matrix, q: &Matrix, r: &Matrix, mode: DesignMode<'_>) -> Result<NominalDesign> {
    nominal_design(shares, b, q, r, mode)
}

fn sigma_min_sym(m: &Matrix) -> f64 {
    numerics::min_sym_eigenvalue(m)
}

/// Certificate for `‖Δ_B‖₂ ≤ ε`: requires `ε < √(σQ σR) / (2 tr P0)`, then
/// `η = 1 − 2ε tr P0 / √(σQ σR)` and the cost is at most `tr P0 / η`.
pub fn certify_uncertain_b(p0: &Matrix, k0: &Matrix, q: &Matrix, r: &Matrix, epsilon: f64) -> Result<RobustnessCertificate> {
    numerics::require_pd(p0, "P0", 0.0)?;
    if !(epsilon >= 0.0) {
        return Err(Error::arg("epsilon", "must be non-negative"));
    }
    let root = (sigma_min_sym(q) * sigma_min_sym(r)).sqrt();
    let tr = p0.trace();
    let threshold = root / (2.0 * tr);
    let (factor, cost_bound) = if epsilon < threshold {
        let eta = 1.0 - 2.0 * epsilon * tr / root;
        (Some(eta), Some(tr / eta))
    } else {
        (None, None)
    };
    Ok(RobustnessCertificate {
        kind: CertificateKind::UncertainB,
        p0: p0.clone(),
        k0: k0.clone(),
        threshold,
        level: epsilon,
        factor,
        cost_bound,
        realized_cost: None,
    })
}

/// Certificate for derivative noise with `‖Δ_d‖₂ ≤ τ`: requires
/// `τ < σQ σX0 / (2 tr P̄0)`, then `ζ = σQ σX0 / (σQ σX0 − 2τ tr P̄0)` and the
/// cost is at most `ζ tr P̄0`.
pub fn certify_noisy(p0: &Matrix, k0: &Matrix, q: &Matrix, x0: &Matrix, tau: f64) -> Result<RobustnessCertificate> {
    numerics::require_pd(p0, "P̄0", 0.0)?;
    if !(tau >= 0.0) {
        return Err(Error::arg("tau", "must be non-negative"));
    }
    if x0.ncols() < x0.nrows() {
        return Err(Error::RankDeficient {
            matrix: "X0",
            sigma_min: 0.0,
        });
    }
    let (sigma_x, _) = numerics::singular_extremes(x0);
    if sigma_x <= 0.0 {
        return Err(Error::RankDeficient {
            matrix: "X0",
            sigma_min: sigma_x,
        });
    }
    let num = sigma_min_sym(q) * sigma_x;
    let tr = p0.trace();
    let threshold = num / (2.0 * tr);
    let (factor, cost_bound) = if tau < threshold {
        let zeta = num / (num - 2.0 * tau * tr);
        (Some(zeta), Some(zeta * tr))
    } else {
        (None, None)
    };
    Ok(RobustnessCertificate {
        kind: CertificateKind::NoisyData,
        p0: p0.clone(),
        k0: k0.clone(),
        threshold,
        level: tau,
        factor,
        cost_bound,
        realized_cost: None,
    })
}
