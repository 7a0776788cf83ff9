use fragctl::graph::{make_graph, CommGraph, GraphKind};
use fragctl::lyapunov::{self, LyapunovProblem};
use fragctl::model::{sample_algebraic, LtiSystem, SamplingConfig};
use fragctl::numerics::Matrix;
use fragctl::oracles::{solve_are_newton, solve_lyapunov_direct};
use fragctl::riccati::{self, RiccatiProblem};
use fragctl::splitting::{build_shares, state_allocation, ShareMode, SplitSettings};
use fragctl::FlowSettings;

fn m(rows: &[&[f64]]) -> Matrix {
    Matrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

fn a_stable() -> Matrix {
    m(&[&[-1.0, 0.5, 0.0], &[0.2, -0.8, 0.3], &[0.0, -0.4, -1.2]])
}

fn b() -> Matrix {
    m(&[&[1.0], &[0.0], &[0.5]])
}

fn shares(a: &Matrix, agents: usize, graph: &CommGraph) -> Vec<Matrix> {
    let sys = LtiSystem::new(a.clone(), b()).unwrap();
    let ds = sample_algebraic(&sys, &SamplingConfig::clean(agents, 3)).unwrap();
    let alloc = state_allocation(&ds, graph, &SplitSettings::default()).unwrap();
    build_shares(&ds, alloc.w(), ShareMode::KnownInput(&b()))
        .unwrap()
        .into_iter()
        .map(|s| s.a)
        .collect()
}

fn zeros(n: usize, agents: usize) -> Vec<Matrix> {
    vec![Matrix::zeros(n, n); agents]
}

#[test]
fn lyapunov_pi_reaches_oracle_and_conserves_sum_y() {
    let a = a_stable();
    let g = make_graph(GraphKind::Ring, 5).unwrap();
    let sh = shares(&a, 5, &g);
    let q = Matrix::identity(3, 3);
    let prob = LyapunovProblem::new(sh, q.clone(), g, FlowSettings::new(200.0, 30.0)).unwrap();
    let (run, cert) = lyapunov::dist_dle_pi(&prob, &zeros(3, 5), &zeros(3, 5)).unwrap();
    let p_star = solve_lyapunov_direct(&a, &q).unwrap();
    assert!((&cert.p - &p_star).norm() / p_star.norm() < 1e-6);
    for k in 0..run.len() {
        assert!(run.sum_y(k).norm() < 1e-9, "ΣY drifted at record {k}");
    }
}

#[test]
fn consensus_value_does_not_depend_on_topology() {
    let a = a_stable();
    let q = Matrix::identity(3, 3);
    let ring = make_graph(GraphKind::Ring, 4).unwrap();
    let sh = shares(&a, 4, &ring);
    let mut finals = Vec::new();
    for kind in [GraphKind::Ring, GraphKind::Path, GraphKind::Complete, GraphKind::Star] {
        let g = make_graph(kind, 4).unwrap();
        let prob = LyapunovProblem::new(sh.clone(), q.clone(), g, FlowSettings::new(200.0, 30.0)).unwrap();
        finals.push(lyapunov::dist_dle_pi(&prob, &zeros(3, 4), &zeros(3, 4)).unwrap().1.p);
    }
    for p in &finals[1..] {
        assert!((p - &finals[0]).norm() < 1e-7);
    }
}

#[test]
fn coupled_error_shrinks_with_gain() {
    let a = a_stable();
    let g = make_graph(GraphKind::Ring, 4).unwrap();
    let sh = shares(&a, 4, &g);
    let q = Matrix::identity(3, 3);
    let p_star = solve_lyapunov_direct(&a, &q).unwrap();
    let errs: Vec<f64> = [10.0, 100.0, 1000.0]
        .iter()
        .map(|&gamma| {
            let prob = LyapunovProblem::new(sh.clone(), q.clone(), g.clone(), FlowSettings::new(gamma, 20.0)).unwrap();
            let run = lyapunov::dist_dle_coupled(&prob, &zeros(3, 4)).unwrap();
            run.final_relative_errors(&p_star).into_iter().fold(0.0, f64::max)
        })
        .collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn riccati_pi_on_unstable_plant() {
    let a = m(&[&[0.2, 1.0, 0.0], &[0.0, 0.1, 1.0], &[-0.3, 0.0, -0.5]]);
    let g = make_graph(GraphKind::Complete, 4).unwrap();
    let sh = shares(&a, 4, &g);
    let (q, r) = (Matrix::identity(3, 3), Matrix::identity(1, 1));
    let prob = RiccatiProblem::new(sh, b(), q.clone(), r.clone(), g, FlowSettings::new(100.0, 60.0)).unwrap();
    let (run, cert) = riccati::dist_dre_pi(&prob).unwrap();
    let oracle = solve_are_newton(&a, &b(), &q, &r, None).unwrap();
    assert!((&cert.p - &oracle.p).norm() < 1e-5);
    assert!(cert.closed_loop_abscissa < 0.0);
    for k in 0..run.len() {
        assert!(run.sum_y(k).norm() < 1e-8);
    }
}

#[test]
fn mismatched_initial_conditions_rejected() {
    let g = make_graph(GraphKind::Ring, 4).unwrap();
    let sh = shares(&a_stable(), 4, &g);
    let prob = LyapunovProblem::new(sh, Matrix::identity(3, 3), g, FlowSettings::new(10.0, 1.0)).unwrap();
    assert!(lyapunov::dist_dle_coupled(&prob, &zeros(3, 3)).is_err());
    assert!(lyapunov::dist_dle_coupled(&prob, &zeros(2, 4)).is_err());
}
