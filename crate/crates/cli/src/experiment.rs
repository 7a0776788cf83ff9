//! Experiment pipelines: data → shares → flow(s) → oracle checks → certificates.

use std::path::{Path, PathBuf};
use std::time::Instant;

use fragctl::graph::{make_graph, CommGraph, GraphKind};
use fragctl::lyapunov::{self, LyapunovProblem};
use fragctl::model::{self, FragmentedDataset, LtiSystem, RankCondition, SamplingConfig};
use fragctl::numerics::{self, Matrix, Vector};
use fragctl::riccati::{self, RiccatiProblem};
use fragctl::robustness::{self, DesignMode, UncertaintyModel};
use fragctl::splitting::{self, ShareMode, SplitSettings};
use fragctl::{oracles, AgentRecord, FlowRun, FlowSettings};
use serde_json::{json, Value};

use crate::config::{Design, ExperimentConfig, ExperimentKind, Overrides, Rows, SweepProblem};
use crate::emit;
use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Result of one `run`. Wall time is kept out of the JSON so that repeated
/// runs produce identical files.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub results: Value,
    pub terminal_rel_errors: Vec<f64>,
    pub files: Vec<String>,
    pub out_dir: PathBuf,
    pub wall_time: f64,
}

impl RunSummary {
    pub fn to_json(&self) -> Value {
        json!({
            "schema_version": SCHEMA_VERSION,
            "experiment": self.config.experiment.as_str(),
            "seed": self.config.seed,
            "config": self.config,
            "results": self.results,
            "terminal_rel_errors": self.terminal_rel_errors,
            "files": self.files,
        })
    }
}

struct Outcome {
    records: Vec<AgentRecord>,
    results: Value,
    terminal: Vec<f64>,
    sweep: Option<(Vec<&'static str>, Vec<Vec<String>>)>,
}

pub fn run_path(path: &Path, overrides: &Overrides) -> Result<RunSummary, CliError> {
    let cfg = ExperimentConfig::load(path, overrides)?;
    run(&cfg)
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    let out_dir = PathBuf::from(&cfg.output.dir);
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(out_dir.display().to_string(), e))?;
    let setup = Setup::new(cfg)?;
    let outcome = match cfg.experiment {
        ExperimentKind::Split => run_split(&setup)?,
        ExperimentKind::Lyapunov | ExperimentKind::LyapunovPi => run_lyapunov(cfg, &setup)?,
        ExperimentKind::Riccati | ExperimentKind::RiccatiPi => run_riccati(cfg, &setup)?,
        ExperimentKind::GammaSweep => run_gamma_sweep(cfg, &setup)?,
        ExperimentKind::RobustB => run_robust_b(cfg, &setup)?,
        ExperimentKind::RobustNoise => run_robust_noise(cfg, &setup)?,
    };

    let mut files = vec!["trajectory.csv".to_string(), "summary.json".to_string(), "plot.svg".to_string()];
    emit::emit_csv(&out_dir.join("trajectory.csv"), &outcome.records)?;
    let title = format!("{}: relative error per agent", cfg.experiment.as_str());
    emit::emit_plot(&out_dir.join("plot.svg"), &title, &outcome.records)?;
    if let Some((header, rows)) = &outcome.sweep {
        emit::emit_table(&out_dir.join("sweep.csv"), header, rows)?;
        files.push("sweep.csv".into());
    }
    let summary = RunSummary {
        config: cfg.clone(),
        results: outcome.results,
        terminal_rel_errors: outcome.terminal,
        files,
        out_dir: out_dir.clone(),
        wall_time: start.elapsed().as_secs_f64(),
    };
    emit::emit_summary(&out_dir.join("summary.json"), &summary.to_json())?;
    Ok(summary)
}

struct Setup {
    sys: LtiSystem,
    q: Matrix,
    r: Matrix,
    graph: CommGraph,
    ds: FragmentedDataset,
    split: SplitSettings,
}

fn matrix(rows: &Rows, what: &str) -> Result<Matrix, CliError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Config(format!("{what}: ragged rows")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Config(format!("{what}: non-finite entry")));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn random_system(n: usize, m: usize, seed: u64, stable: bool) -> Result<LtiSystem, CliError> {
    if n == 0 {
        return Err(CliError::Config("system.random.n must be positive".into()));
    }
    let mut a = model::gaussian_matrices(n, n, 1, seed).remove(0) / (n as f64).sqrt();
    let b = model::gaussian_matrices(n, m, 1, seed.wrapping_add(1)).remove(0);
    if stable {
        let abscissa = numerics::spectral_abscissa(&a);
        if abscissa > -0.2 {
            a -= Matrix::identity(n, n) * (abscissa + 0.5);
        }
    }
    Ok(LtiSystem::new(a, b)?)
}

fn graph_kind(cfg: &ExperimentConfig) -> Result<GraphKind, CliError> {
    Ok(match cfg.graph.kind.as_str() {
        "ring" => GraphKind::Ring,
        "path" => GraphKind::Path,
        "complete" => GraphKind::Complete,
        "star" => GraphKind::Star,
        "random" => GraphKind::Random {
            p: cfg.graph.p.ok_or_else(|| CliError::Config("graph.p is required for random graphs".into()))?,
            seed: cfg.graph.seed.unwrap_or(cfg.seed),
        },
        other => return Err(CliError::Config(format!("unknown graph kind `{other}`"))),
    })
}

impl Setup {
    fn new(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let sys = match (&cfg.system.a, &cfg.system.random) {
            (Some(a), None) => {
                let a = matrix(a, "system.a")?;
                let b = match &cfg.system.b {
                    Some(b) => matrix(b, "system.b")?,
                    None => Matrix::zeros(a.nrows(), 0),
                };
                LtiSystem::new(a, b)?
            }
            (None, Some(r)) => random_system(r.n, r.m, r.seed, r.stable)?,
            _ => return Err(CliError::Config("exactly one system source is required".into())),
        };
        let (n, m) = (sys.n(), sys.m());
        let q = match &cfg.system.q {
            Some(q) => matrix(q, "system.q")?,
            None => Matrix::identity(n, n),
        };
        let r = match &cfg.system.r {
            Some(r) => matrix(r, "system.r")?,
            None => Matrix::identity(m, m),
        };
        if q.shape() != (n, n) || r.shape() != (m, m) {
            return Err(CliError::Config(format!("Q must be {n}x{n} and R {m}x{m}")));
        }
        let graph = make_graph(graph_kind(cfg)?, cfg.data.agents)?;
        let rank = if cfg.experiment == ExperimentKind::RobustB {
            RankCondition::StatesAndInputs
        } else {
            RankCondition::States
        };
        let ds = model::sample_algebraic(
            &sys,
            &SamplingConfig {
                agents: cfg.data.agents,
                seed: cfg.data_seed(),
                input_scale: cfg.data.input_scale,
                noise_energy: 0.0,
                rank,
            },
        )?;
        let split = SplitSettings {
            k_w: cfg.split.k_w,
            tolerance: cfg.split.tolerance,
            max_horizon: cfg.split.max_horizon,
            step: cfg.split.step,
        };
        Ok(Self { sys, q, r, graph, ds, split })
    }

    fn a(&self) -> &Matrix {
        &self.sys.a
    }

    fn b(&self) -> &Matrix {
        &self.sys.b
    }

    fn n(&self) -> usize {
        self.sys.n()
    }

    /// State allocation and known-input shares.
    fn shares(&self) -> Result<(splitting::AllocationResult, Vec<Matrix>), CliError> {
        let alloc = splitting::state_allocation(&self.ds, &self.graph, &self.split)?;
        let shares = splitting::build_shares(&self.ds, alloc.w(), ShareMode::KnownInput(self.b()))?
            .into_iter()
            .map(|s| s.a)
            .collect();
        Ok((alloc, shares))
    }

    fn require_inputs(&self) -> Result<(), CliError> {
        if self.sys.m() == 0 {
            return Err(CliError::Config("this experiment needs an input matrix B with at least one column".into()));
        }
        Ok(())
    }
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

fn sum(ms: &[Matrix], n: usize) -> Matrix {
    ms.iter().fold(Matrix::zeros(n, n), |acc, a| acc + a)
}

fn allocation_json(alloc: &splitting::AllocationResult, shares: &[Matrix], a: &Matrix) -> Value {
    json!({
        "residual": alloc.residual,
        "time": alloc.time,
        "steps": alloc.steps,
        "share_sum_error": (sum(shares, a.nrows()) - a).norm(),
    })
}

/// Minimum-norm `W` (rows `w(i)ᵀ`) with `V W = M`, `V = [v(1) … v(N)]`.
fn min_norm_oracle(v: &[Vector], target: &Matrix) -> Result<Vec<Vector>, CliError> {
    let vm = Matrix::from_columns(v);
    let gram = &vm * vm.transpose();
    let sol = gram
        .lu()
        .solve(target)
        .ok_or(CliError::Numerical(fragctl::Error::Singular { context: "data Gram matrix" }))?;
    let w = vm.transpose() * sol;
    Ok((0..w.nrows()).map(|i| w.row(i).transpose()).collect())
}

fn run_split(s: &Setup) -> Result<Outcome, CliError> {
    let (alloc, shares) = s.shares()?;
    let v: Vec<Vector> = s.ds.samples.iter().map(|x| x.x.clone()).collect();
    let target = Matrix::identity(s.n(), s.n());
    let oracle = min_norm_oracle(&v, &target)?;
    let mut records = Vec::new();
    for (t, state) in &alloc.states {
        let residual = splitting::constraint_residual(&v, &state.w, &target);
        for (i, (w, w_star)) in state.w.iter().zip(&oracle).enumerate() {
            let scale = w_star.norm().max(f64::MIN_POSITIVE);
            let spread = state
                .lambda
                .iter()
                .map(|l| (l[i] - l.mean()).abs())
                .fold(0.0, f64::max);
            records.push(AgentRecord {
                t: *t,
                agent: i,
                rel_error: Some((w - w_star).norm() / scale),
                disagreement: Some(spread),
                residual: Some(residual),
                lyap_v: None,
                lyap_bound: None,
            });
        }
    }
    let terminal: Vec<f64> = alloc
        .w()
        .iter()
        .zip(&oracle)
        .map(|(w, o)| (w - o).norm() / o.norm().max(f64::MIN_POSITIVE))
        .collect();
    let oracle_gap = alloc.w().iter().zip(&oracle).map(|(w, o)| (w - o).norm()).fold(0.0, f64::max);
    let results = json!({
        "allocation": allocation_json(&alloc, &shares, s.a()),
        "oracle_gap": oracle_gap,
        "lambda_disagreement": alloc.lambda_disagreement(),
        "max_share_rank": shares.iter().map(|a| a.rank(1e-12)).max().unwrap_or(0),
    });
    Ok(Outcome {
        records,
        results,
        terminal,
        sweep: None,
    })
}

struct RecordSpec<'a> {
    a: &'a Matrix,
    q: &'a Matrix,
    d: Option<&'a Matrix>,
    p_star: &'a Matrix,
    rho: Option<f64>,
}

fn flow_records(run: &FlowRun, spec: &RecordSpec<'_>) -> Result<Vec<AgentRecord>, CliError> {
    let scale = spec.p_star.norm();
    let mut v0 = vec![0.0; run.agents];
    let mut out = Vec::with_capacity(run.len() * run.agents);
    for k in 0..run.len() {
        let t = run.times()[k];
        let ps = run.ps(k);
        let avg = run.average_p(k);
        for (i, p) in ps.iter().enumerate() {
            let residual = match spec.d {
                Some(d) => oracles::are_residual(spec.a, d, spec.q, p),
                None => oracles::lyapunov_residual(spec.a, p, spec.q),
            };
            let v = lyapunov::lyapunov_v(p, spec.p_star)?;
            if k == 0 {
                v0[i] = v;
            }
            out.push(AgentRecord {
                t,
                agent: i,
                rel_error: Some((p - spec.p_star).norm() / scale),
                disagreement: Some((p - &avg).norm()),
                residual: Some(residual),
                lyap_v: Some(v),
                lyap_bound: spec.rho.map(|rho| v0[i] * (-2.0 * t / rho).exp()),
            });
        }
    }
    Ok(out)
}

fn flow_settings(cfg: &ExperimentConfig, gamma: f64) -> Result<FlowSettings, CliError> {
    let f = cfg.flow()?;
    Ok(FlowSettings {
        gamma,
        step: f.step,
        horizon: f.horizon,
        tolerance: f.tolerance,
        max_records: 2000,
    })
}

fn run_json(run: &FlowRun) -> Value {
    json!({
        "initial_step": run.initial_step,
        "steps": run.trajectory.steps,
        "final_time": run.trajectory.final_time(),
        "terminal_disagreement": run.disagreement(run.last()),
    })
}

fn run_lyapunov(cfg: &ExperimentConfig, s: &Setup) -> Result<Outcome, CliError> {
    let (alloc, shares) = s.shares()?;
    let n = s.n();
    let a_rec = sum(&shares, n);
    let p_star = oracles::solve_lyapunov_direct(s.a(), &s.q)?;
    numerics::require_pd(&p_star, "P* (Lyapunov oracle)", 0.0)?;
    let gamma = cfg.gamma()?;
    let problem = LyapunovProblem::new(shares.clone(), s.q.clone(), s.graph.clone(), flow_settings(cfg, gamma)?)?;
    let zeros = vec![Matrix::zeros(n, n); s.graph.agents()];
    let (run, cert) = if cfg.experiment == ExperimentKind::LyapunovPi {
        let (run, cert) = lyapunov::dist_dle_pi(&problem, &zeros, &zeros)?;
        (run, Some(cert))
    } else {
        (lyapunov::dist_dle_coupled(&problem, &zeros)?, None)
    };
    let records = flow_records(
        &run,
        &RecordSpec {
            a: &a_rec,
            q: &s.q,
            d: None,
            p_star: &p_star,
            rho: None,
        },
    )?;
    let terminal = run.final_relative_errors(&p_star);
    let mut results = json!({
        "gamma": gamma,
        "allocation": allocation_json(&alloc, &shares, s.a()),
        "oracle": { "p_star": rows(&p_star), "residual": oracles::lyapunov_residual(s.a(), &p_star, &s.q) },
        "flow": run_json(&run),
        "max_terminal_rel_error": terminal.iter().cloned().fold(0.0, f64::max),
    });
    if let Some(cert) = cert {
        results["certificate"] = json!({
            "p": rows(&cert.p),
            "residual": cert.residual,
            "agent_errors": cert.agent_errors,
            "rel_error_vs_oracle": (&cert.p - &p_star).norm() / p_star.norm(),
        });
        let agents = s.graph.agents();
        if agents >= 2 && n * n * (agents - 1) <= 400 {
            let split = fragctl::spectral_split(&fragctl::laplacian(&s.graph))?;
            results["gamma_lower_bound"] = json!(lyapunov::gamma_bound_dle(&shares, &split, &s.q, &p_star)?);
        }
    }
    Ok(Outcome {
        records,
        results,
        terminal,
        sweep: None,
    })
}

fn run_riccati(cfg: &ExperimentConfig, s: &Setup) -> Result<Outcome, CliError> {
    s.require_inputs()?;
    let (alloc, shares) = s.shares()?;
    let a_rec = sum(&shares, s.n());
    let newton = oracles::solve_are_newton(s.a(), s.b(), &s.q, &s.r, None)?;
    let gamma = cfg.gamma()?;
    let problem = RiccatiProblem::new(shares.clone(), s.b().clone(), s.q.clone(), s.r.clone(), s.graph.clone(), flow_settings(cfg, gamma)?)?;
    let (run, cert) = if cfg.experiment == ExperimentKind::RiccatiPi {
        let (run, cert) = riccati::dist_dre_pi(&problem)?;
        (run, Some(cert))
    } else {
        (riccati::dist_dre_coupled(&problem)?, None)
    };
    let rho = riccati::decay_constant(&newton.p, &s.q)?;
    let records = flow_records(
        &run,
        &RecordSpec {
            a: &a_rec,
            q: &s.q,
            d: Some(problem.d()),
            p_star: &newton.p,
            rho: Some(rho),
        },
    )?;
    let terminal = run.final_relative_errors(&newton.p);
    let mut results = json!({
        "gamma": gamma,
        "allocation": allocation_json(&alloc, &shares, s.a()),
        "oracle": {
            "p_star": rows(&newton.p),
            "k_star": rows(&newton.k),
            "residual": newton.residual,
            "iterations": newton.iterations,
            "rho": rho,
        },
        "flow": run_json(&run),
        "max_terminal_rel_error": terminal.iter().cloned().fold(0.0, f64::max),
    });
    if let Some(cert) = cert {
        let true_abscissa = numerics::spectral_abscissa(&(s.a() + s.b() * &cert.k));
        results["certificate"] = json!({
            "p": rows(&cert.p),
            "k": rows(&cert.k),
            "are_residual": cert.are_residual,
            "rho": cert.rho,
            "closed_loop_abscissa": cert.closed_loop_abscissa,
            "true_closed_loop_abscissa": true_abscissa,
            "agent_errors": cert.agent_errors,
            "rel_error_vs_oracle": (&cert.p - &newton.p).norm() / newton.p.norm(),
        });
    }
    Ok(Outcome {
        records,
        results,
        terminal,
        sweep: None,
    })
}

fn run_gamma_sweep(cfg: &ExperimentConfig, s: &Setup) -> Result<Outcome, CliError> {
    let flow = cfg.flow()?;
    let problem_kind = flow.sweep;
    if problem_kind == SweepProblem::Riccati {
        s.require_inputs()?;
    }
    let (alloc, shares) = s.shares()?;
    let n = s.n();
    let a_rec = sum(&shares, n);
    let (p_star, d) = match problem_kind {
        SweepProblem::Lyapunov => (oracles::solve_lyapunov_direct(s.a(), &s.q)?, None),
        SweepProblem::Riccati => (
            oracles::solve_are_newton(s.a(), s.b(), &s.q, &s.r, None)?.p,
            Some(oracles::input_weight(s.b(), &s.r)?),
        ),
    };
    let mut gammas = flow.gammas.clone().unwrap_or_default();
    gammas.sort_by(f64::total_cmp);
    let mut rows_out = Vec::new();
    let mut errors = Vec::new();
    let mut last = None;
    for &gamma in &gammas {
        let settings = flow_settings(cfg, gamma)?;
        let run = match problem_kind {
            SweepProblem::Lyapunov => {
                let p = LyapunovProblem::new(shares.clone(), s.q.clone(), s.graph.clone(), settings)?;
                lyapunov::dist_dle_coupled(&p, &vec![Matrix::zeros(n, n); s.graph.agents()])?
            }
            SweepProblem::Riccati => {
                let p = RiccatiProblem::new(shares.clone(), s.b().clone(), s.q.clone(), s.r.clone(), s.graph.clone(), settings)?;
                riccati::dist_dre_coupled(&p)?
            }
        };
        let terminal = run.final_relative_errors(&p_star);
        let max = terminal.iter().cloned().fold(0.0, f64::max);
        let mean = terminal.iter().sum::<f64>() / terminal.len() as f64;
        rows_out.push(vec![
            emit::fmt_f64(gamma),
            emit::fmt_f64(max),
            emit::fmt_f64(mean),
            emit::fmt_f64(run.disagreement(run.last())),
            run.trajectory.steps.to_string(),
        ]);
        errors.push(max);
        last = Some((run, terminal));
    }
    let (run, terminal) = last.ok_or_else(|| CliError::Config("gamma-sweep needs at least one gain".into()))?;
    let rho = match problem_kind {
        SweepProblem::Riccati => Some(riccati::decay_constant(&p_star, &s.q)?),
        SweepProblem::Lyapunov => None,
    };
    let records = flow_records(
        &run,
        &RecordSpec {
            a: &a_rec,
            q: &s.q,
            d: d.as_ref(),
            p_star: &p_star,
            rho,
        },
    )?;
    let strictly_decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    let results = json!({
        "problem": match problem_kind { SweepProblem::Lyapunov => "lyapunov", SweepProblem::Riccati => "riccati" },
        "gammas": gammas,
        "terminal_max_rel_errors": errors,
        "strictly_decreasing": strictly_decreasing,
        "allocation": allocation_json(&alloc, &shares, s.a()),
        "trajectory_gamma": gammas.last(),
    });
    Ok(Outcome {
        records,
        results,
        terminal,
        sweep: Some((vec!["gamma", "max_terminal_rel_error", "mean_terminal_rel_error", "terminal_disagreement", "steps"], rows_out)),
    })
}

struct Nominal {
    p0: Matrix,
    k0: Matrix,
    records: Vec<AgentRecord>,
    flow: Value,
}

/// Nominal ARE design from shares, through the PI flow or Newton–Kleinman.
fn nominal(cfg: &ExperimentConfig, s: &Setup, shares: &[Matrix], b0: &Matrix) -> Result<Nominal, CliError> {
    let design = match cfg.robust.design {
        Design::Centralized => robustness::nominal_design_uncertain_b(shares, b0, &s.q, &s.r, DesignMode::Centralized)?,
        Design::Distributed => {
            let settings = flow_settings(cfg, cfg.gamma()?)?;
            robustness::nominal_design_uncertain_b(shares, b0, &s.q, &s.r, DesignMode::Distributed { graph: &s.graph, settings })?
        }
    };
    let (records, flow) = match (&design.flow, cfg.robust.design) {
        (Some(_), Design::Distributed) => {
            // Re-run for the trajectory; the design call only keeps the certificate.
            let settings = flow_settings(cfg, cfg.gamma()?)?;
            let problem = RiccatiProblem::new(shares.to_vec(), b0.clone(), s.q.clone(), s.r.clone(), s.graph.clone(), settings)?;
            let (run, _) = riccati::dist_dre_pi(&problem)?;
            let a0 = sum(shares, s.n());
            let rho = riccati::decay_constant(&design.p0, &s.q)?;
            let records = flow_records(
                &run,
                &RecordSpec {
                    a: &a0,
                    q: &s.q,
                    d: Some(problem.d()),
                    p_star: &design.p0,
                    rho: Some(rho),
                },
            )?;
            (records, json!({ "design": "distributed", "oracle_gap": design.oracle_gap, "are_residual": design.are_residual, "run": run_json(&run) }))
        }
        _ => (Vec::new(), json!({ "design": "centralized", "are_residual": design.are_residual })),
    };
    Ok(Nominal {
        p0: design.p0,
        k0: design.k0,
        records,
        flow,
    })
}

fn cost_stats(costs: &[Option<f64>]) -> (usize, f64, f64) {
    let stable: Vec<f64> = costs.iter().flatten().cloned().collect();
    let max = stable.iter().cloned().fold(0.0, f64::max);
    let mean = if stable.is_empty() { f64::NAN } else { stable.iter().sum::<f64>() / stable.len() as f64 };
    (stable.len(), max, mean)
}

const ROBUST_HEADER: [&str; 10] = [
    "fraction",
    "level",
    "draws",
    "certified",
    "stable",
    "realized_cost_max",
    "realized_cost_mean",
    "bound",
    "violations",
    "factor",
];

fn opt(v: Option<f64>) -> String {
    v.map(emit::fmt_f64).unwrap_or_default()
}

fn run_robust_b(cfg: &ExperimentConfig, s: &Setup) -> Result<Outcome, CliError> {
    s.require_inputs()?;
    let alloc = splitting::extended_allocation(&s.ds, &s.graph, &s.split)?;
    let shares: Vec<Matrix> = splitting::build_shares(&s.ds, alloc.w(), ShareMode::Extended)?
        .into_iter()
        .map(|x| x.a)
        .collect();
    let b0 = s.b().clone();
    let nominal = nominal(cfg, s, &shares, &b0)?;
    let base = robustness::certify_uncertain_b(&nominal.p0, &nominal.k0, &s.q, &s.r, 0.0)?;
    let threshold = base.threshold;
    let mut table = Vec::new();
    let mut levels = Vec::new();
    for (idx, &fraction) in cfg.robust.fractions.iter().enumerate() {
        let eps = fraction * threshold;
        let cert = robustness::certify_uncertain_b(&nominal.p0, &nominal.k0, &s.q, &s.r, eps)?;
        let model = UncertaintyModel::new(b0.clone(), eps, eps, cfg.robust_seed().wrapping_add(idx as u64))?;
        let costs = model
            .draws(cfg.robust.draws)
            .iter()
            .map(|delta| cert.evaluate(s.a(), &(&b0 + delta), &s.q, &s.r))
            .collect::<Result<Vec<_>, _>>()?;
        let (stable, max, mean) = cost_stats(&costs);
        let violations = match cert.cost_bound {
            Some(bound) => costs.iter().filter(|c| c.is_none_or(|j| j > bound)).count(),
            None => 0,
        };
        let certified = if cert.certified() { cfg.robust.draws } else { 0 };
        table.push(vec![
            emit::fmt_f64(fraction),
            emit::fmt_f64(eps),
            cfg.robust.draws.to_string(),
            certified.to_string(),
            stable.to_string(),
            emit::fmt_f64(max),
            emit::fmt_f64(mean),
            opt(cert.cost_bound),
            violations.to_string(),
            opt(cert.factor),
        ]);
        levels.push(json!({
            "fraction": fraction, "epsilon": eps, "certified": cert.certified(), "eta": cert.factor,
            "cost_bound": cert.cost_bound, "stable": stable, "realized_cost_max": max, "violations": violations,
        }));
    }
    let true_cost = oracles::lqr_cost(s.a(), &b0, &nominal.k0, &s.q, &s.r).ok();
    let results = json!({
        "threshold": threshold,
        "trace_p0": nominal.p0.trace(),
        "p0": rows(&nominal.p0),
        "k0": rows(&nominal.k0),
        "nominal_cost": true_cost,
        "allocation": allocation_json(&alloc, &shares, s.a()),
        "input_constraint_residual": input_residual(&s.ds, alloc.w()),
        "nominal": nominal.flow,
        "levels": levels,
    });
    let terminal = terminal_from(&nominal.records);
    Ok(Outcome {
        records: nominal.records,
        results,
        terminal,
        sweep: Some((ROBUST_HEADER.to_vec(), table)),
    })
}

fn input_residual(ds: &FragmentedDataset, y: &[Vector]) -> f64 {
    let mut acc = Matrix::zeros(ds.m, ds.n);
    for (s, yi) in ds.samples.iter().zip(y) {
        acc += &s.u * yi.transpose();
    }
    acc.norm()
}

fn terminal_from(records: &[AgentRecord]) -> Vec<f64> {
    let Some(t_end) = records.last().map(|r| r.t) else {
        return Vec::new();
    };
    records
        .iter()
        .filter(|r| r.t == t_end)
        .map(|r| r.rel_error.unwrap_or(f64::NAN))
        .collect()
}

/// Noise directions, one per draw, normalized to unit spectral norm.
pub fn noise_directions(n: usize, agents: usize, draws: usize, seed: u64) -> Vec<Matrix> {
    model::gaussian_matrices(n, agents, draws, seed)
        .into_iter()
        .map(|g| {
            let norm = numerics::spectral_norm(&g);
            g / norm
        })
        .collect()
}

struct NoisyDraw {
    p0: Option<Matrix>,
    k0: Option<Matrix>,
}

fn noisy_design(s: &Setup, y: &[Vector], direction: &Matrix, tau: f64) -> Result<(Vec<Matrix>, NoisyDraw), CliError> {
    let ds = if tau == 0.0 {
        s.ds.clone()
    } else {
        model::with_noise_direction(&s.ds, direction, tau)?
    };
    let shares: Vec<Matrix> = splitting::build_shares(&ds, y, ShareMode::KnownInput(s.b()))?
        .into_iter()
        .map(|x| x.a)
        .collect();
    let draw = match robustness::nominal_design_noisy(&shares, s.b(), &s.q, &s.r, DesignMode::Centralized) {
        Ok(d) => NoisyDraw {
            p0: Some(d.p0),
            k0: Some(d.k0),
        },
        Err(e) if e.is_numerical() => NoisyDraw { p0: None, k0: None },
        Err(e) => return Err(e.into()),
    };
    Ok((shares, draw))
}

/// Largest τ with every draw certified, by fixed-point iteration on
/// `τ = σQ σX0 / (2 maxᵈ tr P̄0ᵈ(τ))`.
fn noise_threshold(s: &Setup, y: &[Vector], directions: &[Matrix], x0_sigma: f64) -> Result<f64, CliError> {
    let num = numerics::min_sym_eigenvalue(&s.q) * x0_sigma;
    let (_, clean) = noisy_design(s, y, &directions[0], 0.0)?;
    let p_clean = clean
        .p0
        .ok_or(CliError::Numerical(fragctl::Error::NoStabilizingGain))?;
    let mut tau = num / (2.0 * p_clean.trace());
    for _ in 0..8 {
        let mut worst: f64 = 0.0;
        for g in directions {
            let (_, d) = noisy_design(s, y, g, tau)?;
            worst = worst.max(d.p0.map_or(f64::INFINITY, |p| p.trace()));
        }
        let next = num / (2.0 * worst);
        if (next - tau).abs() <= 1e-9 * tau {
            tau = next;
            break;
        }
        tau = next;
    }
    Ok(tau)
}

fn run_robust_noise(cfg: &ExperimentConfig, s: &Setup) -> Result<Outcome, CliError> {
    s.require_inputs()?;
    let alloc = splitting::state_allocation(&s.ds, &s.graph, &s.split)?;
    let y = alloc.w().to_vec();
    let x0 = s.ds.states();
    let (sigma_x, _) = numerics::singular_extremes(&x0);
    let directions = noise_directions(s.n(), s.graph.agents(), cfg.robust.draws, cfg.robust_seed());
    let threshold = noise_threshold(s, &y, &directions, sigma_x)?;

    let mut table = Vec::new();
    let mut levels = Vec::new();
    let mut nominal_out: Option<Nominal> = None;
    for &fraction in &cfg.robust.fractions {
        let tau = fraction * threshold;
        let mut costs = Vec::with_capacity(directions.len());
        let (mut certified, mut violations) = (0, 0);
        let mut bound_max: Option<f64> = None;
        let mut factor_max: Option<f64> = None;
        for (d, g) in directions.iter().enumerate() {
            let (shares, draw) = noisy_design(s, &y, g, tau)?;
            if nominal_out.is_none() && d == 0 && cfg.robust.design == Design::Distributed {
                nominal_out = Some(nominal(cfg, s, &shares, s.b())?);
            }
            let (Some(p0), Some(k0)) = (draw.p0, draw.k0) else {
                costs.push(None);
                continue;
            };
            let cert = robustness::certify_noisy(&p0, &k0, &s.q, &x0, tau)?;
            let cost = cert.evaluate(s.a(), s.b(), &s.q, &s.r)?;
            costs.push(cost);
            if let (Some(bound), Some(factor)) = (cert.cost_bound, cert.factor) {
                certified += 1;
                bound_max = Some(bound_max.map_or(bound, |b: f64| b.max(bound)));
                factor_max = Some(factor_max.map_or(factor, |z: f64| z.max(factor)));
                if cost.is_none_or(|j| j > bound) {
                    violations += 1;
                }
            }
        }
        let (stable, max, mean) = cost_stats(&costs);
        table.push(vec![
            emit::fmt_f64(fraction),
            emit::fmt_f64(tau),
            directions.len().to_string(),
            certified.to_string(),
            stable.to_string(),
            emit::fmt_f64(max),
            emit::fmt_f64(mean),
            opt(bound_max),
            violations.to_string(),
            opt(factor_max),
        ]);
        levels.push(json!({
            "fraction": fraction, "tau": tau, "certified": certified, "stable": stable,
            "realized_cost_max": max, "cost_bound_max": bound_max, "zeta_max": factor_max, "violations": violations,
        }));
    }
    let clean_shares: Vec<Matrix> = splitting::build_shares(&s.ds, &y, ShareMode::KnownInput(s.b()))?
        .into_iter()
        .map(|x| x.a)
        .collect();
    let nominal = match nominal_out {
        Some(n) => n,
        None => nominal(cfg, s, &clean_shares, s.b())?,
    };
    let results = json!({
        "threshold": threshold,
        "sigma_min_x0": sigma_x,
        "allocation": allocation_json(&alloc, &clean_shares, s.a()),
        "nominal": nominal.flow,
        "levels": levels,
    });
    let terminal = terminal_from(&nominal.records);
    Ok(Outcome {
        records: nominal.records,
        results,
        terminal,
        sweep: Some((ROBUST_HEADER.to_vec(), table)),
    })
}
