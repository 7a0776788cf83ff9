//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Run with `cargo test -p fragctl-cli --test acceptance`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use fragctl::coords::{CompactBlocks, CoordinateMap};
use fragctl::graph::{laplacian, make_graph, spectral_split, GraphKind};
use fragctl::lyapunov::{self, LyapunovProblem};
use fragctl::model::{gaussian_matrices, sample_algebraic, LtiSystem, SamplingConfig};
use fragctl::numerics::{self, Integrator, Matrix, OdeProblem, Record};
use fragctl::oracles::{lqr_cost, solve_are_newton, solve_lyapunov_direct};
use fragctl::riccati::{self, RiccatiProblem};
use fragctl::splitting::{build_shares, state_allocation, ShareMode, SplitSettings};
use fragctl::{FlowSettings, Vector};
use fragctl_cli::{run_path, Overrides, RunSummary};
use serde_json::Value;

type Check = Result<String, String>;
type Criterion = (u32, &'static str, fn(&Path) -> Check);

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_config(name: &str, out: &Path, set: &[&str]) -> Result<RunSummary, String> {
    let ov = Overrides {
        out: Some(out.join(name).display().to_string()),
        set: set.iter().map(|s| s.to_string()).collect(),
        ..Overrides::default()
    };
    run_path(&configs().join(format!("{name}.toml")), &ov).map_err(|e| e.to_string())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn f(v: &Value, path: &[&str]) -> f64 {
    let mut cur = v;
    for k in path {
        cur = &cur[*k];
    }
    cur.as_f64().unwrap_or(f64::NAN)
}

fn json_matrix(v: &Value) -> Matrix {
    let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone()).expect("matrix rows");
    Matrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

fn max(v: &[f64]) -> f64 {
    v.iter().cloned().fold(0.0, f64::max)
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn read_table(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .expect("table")
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn c1_share_exactness(out: &Path) -> Check {
    let t = Instant::now();
    let s = run_config("split_random", out, &[])?;
    let secs = t.elapsed().as_secs_f64();
    let r = &s.results;
    let residual = f(r, &["allocation", "residual"]);
    let sum_err = f(r, &["allocation", "share_sum_error"]);
    let gap = f(r, &["oracle_gap"]);
    ensure(residual <= 1e-8, || format!("constraint residual {residual:e}"))?;
    ensure(sum_err <= 1e-6, || format!("‖ΣAᵢ − A‖ = {sum_err:e}"))?;
    ensure(gap <= 1e-5, || format!("min-norm oracle gap {gap:e}"))?;
    ensure(secs < 5.0, || format!("runtime {secs:.2} s"))?;
    Ok(format!("residual {residual:.2e}, ‖ΣAᵢ−A‖ {sum_err:.2e}, oracle gap {gap:.2e}, {secs:.2} s"))
}

fn c2_lyapunov_exactness(out: &Path) -> Check {
    let t = Instant::now();
    let s = run_config("tank4_lyapunov_pi", out, &[])?;
    let secs = t.elapsed().as_secs_f64();
    let oracle_res = f(&s.results, &["oracle", "residual"]);
    let worst = max(&s.terminal_rel_errors);
    ensure(s.config.flow.as_ref().and_then(|f| f.gamma) == Some(1000.0), || "γ is not 10³".into())?;
    ensure(oracle_res <= 1e-10, || format!("oracle residual {oracle_res:e}"))?;
    ensure(worst < 1e-4, || format!("worst agent error {worst:e}"))?;
    ensure(secs < 30.0, || format!("runtime {secs:.2} s"))?;
    Ok(format!("worst agent error {worst:.2e}, oracle residual {oracle_res:.1e}, {secs:.2} s"))
}

fn c3_practical_gap(out: &Path) -> Check {
    let pi = run_config("tank4_lyapunov_pi", out, &[])?;
    let pi_err = max(&pi.terminal_rel_errors);
    let sweep = run_config("tank4_gamma_sweep", out, &[])?;
    let errs: Vec<f64> = serde_json::from_value(sweep.results["terminal_max_rel_errors"].clone()).map_err(|e| e.to_string())?;
    let gammas: Vec<f64> = serde_json::from_value(sweep.results["gammas"].clone()).map_err(|e| e.to_string())?;
    ensure(gammas == [100.0, 1000.0, 10000.0], || format!("gains {gammas:?}"))?;
    ensure(strictly_decreasing(&errs), || format!("coupled errors not decreasing: {errs:?}"))?;
    ensure(errs.iter().all(|&e| e > pi_err), || format!("coupled {errs:?} vs PI {pi_err:e}"))?;
    Ok(format!("coupled {:.2e} > {:.2e} > {:.2e} > PI {pi_err:.2e}", errs[0], errs[1], errs[2]))
}

fn c4_riccati_exactness(out: &Path) -> Check {
    let t = Instant::now();
    let s = run_config("heli8_riccati_pi", out, &[])?;
    let secs = t.elapsed().as_secs_f64();
    let cert = &s.results["certificate"];
    let residual = f(cert, &["are_residual"]);
    let abscissa = f(cert, &["true_closed_loop_abscissa"]);
    let gap = (json_matrix(&cert["p"]) - json_matrix(&s.results["oracle"]["p_star"])).norm();
    ensure(s.config.data.agents == 16 && s.config.gamma().ok() == Some(500.0), || "not the N=16, γ=500 configuration".into())?;
    ensure(residual <= 1e-6, || format!("ARE residual {residual:e}"))?;
    ensure(abscissa < 0.0, || format!("A+BK* abscissa {abscissa}"))?;
    ensure(gap <= 1e-5, || format!("‖P − P_newton‖ = {gap:e}"))?;
    ensure(secs < 120.0, || format!("runtime {secs:.1} s"))?;
    Ok(format!("ARE residual {residual:.2e}, Newton gap {gap:.2e}, abscissa {abscissa:.3}, {secs:.1} s"))
}

fn c5_riccati_monotone(out: &Path) -> Check {
    let s = run_config("heli8_gamma_sweep", out, &[])?;
    let errs: Vec<f64> = serde_json::from_value(s.results["terminal_max_rel_errors"].clone()).map_err(|e| e.to_string())?;
    let gammas: Vec<f64> = serde_json::from_value(s.results["gammas"].clone()).map_err(|e| e.to_string())?;
    ensure(gammas == [50.0, 500.0, 5000.0], || format!("gains {gammas:?}"))?;
    ensure(strictly_decreasing(&errs), || format!("errors {errs:?}"))?;
    Ok(format!("γ = 50/500/5000 → {:.2e} > {:.2e} > {:.2e}", errs[0], errs[1], errs[2]))
}

struct Instance {
    a: Matrix,
    b: Matrix,
    p0: Matrix,
}

fn instance(k: u64, stable: bool) -> Instance {
    let n = 2 + (k as usize % 4);
    let m = 1 + (k as usize % 2);
    let mut draws = gaussian_matrices(n, n, 2, 1000 + k).into_iter();
    let mut a = draws.next().unwrap() / (n as f64).sqrt();
    let c = draws.next().unwrap();
    if stable {
        let abscissa = numerics::spectral_abscissa(&a);
        a -= Matrix::identity(n, n) * (abscissa + 0.3).max(0.0);
    }
    let b = gaussian_matrices(n, m, 1, 2000 + k).remove(0);
    Instance { a, b, p0: &c * c.transpose() }
}

fn c6_decay_certificates(_: &Path) -> Check {
    let mut worst_slack = f64::NEG_INFINITY;
    for k in 0..20 {
        let inst = instance(k, true);
        let n = inst.a.nrows();
        let q = Matrix::identity(n, n);
        let p_star = solve_lyapunov_direct(&inst.a, &q).map_err(|e| e.to_string())?;
        let traj = lyapunov::dle_centralized(&inst.a, &q, &inst.p0, 0.001, 10.0).map_err(|e| e.to_string())?;
        let vs: Vec<f64> = traj
            .states
            .iter()
            .map(|x| lyapunov::lyapunov_v(&Matrix::from_column_slice(n, n, x), &p_star).unwrap())
            .collect();
        for (j, w) in vs.windows(2).enumerate() {
            ensure(w[1] < w[0] || w[0] < 1e-12, || format!("DLE instance {k}: V rose at sample {j}: {} → {}", w[0], w[1]))?;
        }
    }
    for k in 0..20 {
        let inst = instance(k, false);
        let n = inst.a.nrows();
        let (q, r) = (Matrix::identity(n, n), Matrix::identity(inst.b.ncols(), inst.b.ncols()));
        let p_star = solve_are_newton(&inst.a, &inst.b, &q, &r, None).map_err(|e| format!("instance {k}: {e}"))?.p;
        let rho = riccati::decay_constant(&p_star, &q).map_err(|e| e.to_string())?;
        let traj = riccati::dre_centralized(&inst.a, &inst.b, &q, &r, &inst.p0, 0.001, 10.0).map_err(|e| e.to_string())?;
        let v0 = lyapunov::lyapunov_v(&inst.p0, &p_star).unwrap();
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let v = lyapunov::lyapunov_v(&Matrix::from_column_slice(n, n, x), &p_star).unwrap();
            let bound = v0 * (-2.0 * t / rho).exp() + 1e-6;
            worst_slack = worst_slack.max(v - bound);
            ensure(v <= bound, || format!("DRE instance {k}: V({t}) = {v:e} above bound {bound:e}"))?;
        }
    }
    Ok(format!("20 DLE + 20 DRE instances, max V − bound {worst_slack:.2e}"))
}

fn small_network(a: &Matrix, b: &Matrix, agents: usize) -> (Vec<Matrix>, fragctl::CommGraph) {
    let g = make_graph(GraphKind::Ring, agents).unwrap();
    let ds = sample_algebraic(&LtiSystem::new(a.clone(), b.clone()).unwrap(), &SamplingConfig::clean(agents, 5)).unwrap();
    let alloc = state_allocation(&ds, &g, &SplitSettings::default()).unwrap();
    let shares = build_shares(&ds, alloc.w(), ShareMode::KnownInput(b)).unwrap().into_iter().map(|s| s.a).collect();
    (shares, g)
}

fn c7_structured_coordinates(_: &Path) -> Check {
    let a = Matrix::from_row_slice(3, 3, &[-1.0, 0.5, 0.0, 0.2, -0.8, 0.3, 0.1, -0.4, -1.2]);
    let b = Matrix::from_row_slice(3, 1, &[1.0, 0.0, 0.5]);
    let (shares, g) = small_network(&a, &b, 4);
    let split = spectral_split(&laplacian(&g)).map_err(|e| e.to_string())?;
    let q = Matrix::identity(3, 3);
    let gamma = 50.0;
    let settings = FlowSettings {
        gamma,
        step: 0.01,
        horizon: 1.0,
        tolerance: f64::INFINITY,
        max_records: usize::MAX,
    };

    // DLE: ξ₄ invariant and the structured dynamics.
    let prob = LyapunovProblem::new(shares.clone(), q.clone(), g.clone(), settings).map_err(|e| e.to_string())?;
    let zeros = vec![Matrix::zeros(3, 3); 4];
    let p0: Vec<Matrix> = (0..4).map(|i| Matrix::identity(3, 3) * (0.5 + i as f64 * 0.25)).collect();
    let (run, _) = lyapunov::dist_dle_pi(&prob, &p0, &zeros).map_err(|e| e.to_string())?;
    let p_star = solve_lyapunov_direct(&prob.reconstructed_a(), &q).map_err(|e| e.to_string())?;
    let map = CoordinateMap::new(&shares, &split, &p_star, gamma).map_err(|e| e.to_string())?;
    let xis: Vec<_> = (0..run.len()).map(|k| map.forward(&run.ps(k), &run.ys(k)).unwrap()).collect();
    let drift4 = xis.iter().map(|x| (&x.xi4 - &xis[0].xi4).amax()).fold(0.0, f64::max);
    ensure(drift4 <= 1e-9, || format!("DLE ξ₄ drift {drift4:e}"))?;

    let s = CompactBlocks::new(&shares, &split).map_err(|e| e.to_string())?.system_matrix(gamma);
    let rhs = |_t: f64, x: &[f64], dx: &mut [f64]| {
        let out = &s * Vector::from_column_slice(x);
        dx.copy_from_slice(out.as_slice());
    };
    let h = run.initial_step;
    let structured = Integrator::new()
        .record(Record::All)
        .run(OdeProblem::new(rhs, xis[0].stacked().as_slice().to_vec(), h, 1.0))
        .map_err(|e| e.to_string())?;
    ensure(structured.len() == run.len(), || format!("{} vs {} samples", structured.len(), run.len()))?;
    let mut worst = 0.0f64;
    for (k, x) in structured.states.iter().enumerate() {
        ensure((structured.times[k] - run.times()[k]).abs() < 1e-12, || "sample times differ".into())?;
        worst = worst.max((Vector::from_column_slice(x) - xis[k].stacked()).amax());
    }
    ensure(worst <= 1e-8, || format!("structured vs transformed trajectory {worst:e}"))?;

    // DRE: zero start maps to ξ₁(0) = −vec(P*), ξ₄ invariant.
    let r = Matrix::identity(1, 1);
    let rprob = RiccatiProblem::new(shares.clone(), b.clone(), q.clone(), r.clone(), g, settings).map_err(|e| e.to_string())?;
    let (rrun, _) = riccati::dist_dre_pi(&rprob).map_err(|e| e.to_string())?;
    let are = solve_are_newton(&rprob.reconstructed_a(), &b, &q, &r, None).map_err(|e| e.to_string())?;
    let rxis: Vec<_> = (0..rrun.len())
        .map(|k| riccati::structured_coords_dre(&rrun.ps(k), &rrun.ys(k), &shares, &split, &are.p, gamma).unwrap())
        .collect();
    let xi1_err = (&rxis[0].xi1 + numerics::vec(&are.p)).amax();
    ensure(xi1_err <= 1e-10, || format!("ξ₁(0) + vec(P*) = {xi1_err:e}"))?;
    let rdrift4 = rxis.iter().map(|x| (&x.xi4 - &rxis[0].xi4).amax()).fold(0.0, f64::max);
    ensure(rdrift4 <= 1e-9, || format!("DRE ξ₄ drift {rdrift4:e}"))?;
    Ok(format!(
        "ξ₄ drift {:.1e}/{rdrift4:.1e}, structured gap {worst:.1e}, ξ₁(0) gap {xi1_err:.1e}",
        drift4
    ))
}

fn c8_uncertain_b(out: &Path) -> Check {
    let s = run_config("tank4_robust_b", out, &[])?;
    ensure(s.config.system.preset.as_deref() == Some("tank4"), || "not the (4,2) instance".into())?;
    let rows = read_table(&s.out_dir.join("sweep.csv"));
    let row = |frac: f64| rows.iter().find(|r| r[0].parse::<f64>().ok() == Some(frac)).cloned();
    let at90 = row(0.9).ok_or("no 90% row")?;
    let draws: usize = at90[2].parse().unwrap();
    ensure(draws == 100, || format!("{draws} draws"))?;
    ensure(at90[3] == at90[2], || format!("only {} of {draws} certified at 90%", at90[3]))?;
    ensure(at90[4] == at90[2], || format!("only {} of {draws} stable at 90%", at90[4]))?;
    ensure(at90[8] == "0", || format!("{} cost-bound violations at 90%", at90[8]))?;
    let neg = row(10.0).ok_or("no 10× row")?;
    let no_cert = neg[3] == "0";
    let violated = neg[8].parse::<usize>().unwrap() > 0;
    ensure(no_cert || violated, || "negative control at 10× passed the bound".into())?;
    Ok(format!(
        "90%: {draws}/{draws} stable within bound (max J {:.4} ≤ {:.4}); 10×: {}",
        at90[5].parse::<f64>().unwrap(),
        at90[7].parse::<f64>().unwrap(),
        if no_cert { "no certificate" } else { "bound violated" }
    ))
}

fn c9_noisy_data(out: &Path) -> Check {
    let s = run_config("tank4_robust_noise", out, &[])?;
    let rows = read_table(&s.out_dir.join("sweep.csv"));
    let at90 = rows.iter().find(|r| r[0].parse::<f64>().ok() == Some(0.9)).ok_or("no 90% row")?;
    ensure(at90[2] == "100", || format!("{} draws", at90[2]))?;
    ensure(at90[3] == at90[2] && at90[4] == at90[2], || format!("certified {} stable {} of {}", at90[3], at90[4], at90[2]))?;
    ensure(at90[8] == "0", || format!("{} violations", at90[8]))?;
    let bounds: Vec<f64> = rows.iter().map(|r| r[7].parse::<f64>().unwrap_or(f64::NAN)).collect();
    let levels: Vec<f64> = rows.iter().map(|r| r[1].parse::<f64>().unwrap()).collect();
    ensure(levels.windows(2).all(|w| w[1] > w[0]), || "τ levels not increasing".into())?;
    ensure(bounds.windows(2).all(|w| w[1] > w[0]), || format!("bounds not monotone: {bounds:?}"))?;
    Ok(format!("90%: 100/100 stable within ζ·tr(P̄0); bound {:.3} → {:.3} over the τ sweep", bounds[0], bounds[bounds.len() - 1]))
}

fn c10_oracle_concordance(_: &Path) -> Check {
    let (mut worst_p, mut worst_j) = (0.0f64, 0.0f64);
    for k in 0..20 {
        let inst = instance(k, false);
        let n = inst.a.nrows();
        let (q, r) = (Matrix::identity(n, n), Matrix::identity(inst.b.ncols(), inst.b.ncols()));
        let sol = solve_are_newton(&inst.a, &inst.b, &q, &r, None).map_err(|e| format!("instance {k}: {e}"))?;
        let rate = -numerics::spectral_abscissa(&(&inst.a + &inst.b * &sol.k));
        let horizon = (15.0 / rate).clamp(20.0, 2000.0);
        let traj = riccati::dre_centralized(&inst.a, &inst.b, &q, &r, &Matrix::zeros(n, n), 0.01, horizon).map_err(|e| e.to_string())?;
        let p_end = Matrix::from_column_slice(n, n, traj.final_state());
        let gap = (&p_end - &sol.p).norm();
        let j = lqr_cost(&inst.a, &inst.b, &sol.k, &q, &r).map_err(|e| e.to_string())?;
        let jgap = (j - sol.p.trace()).abs();
        worst_p = worst_p.max(gap);
        worst_j = worst_j.max(jgap);
        ensure(gap <= 1e-6, || format!("instance {k}: ‖P_dre − P_newton‖ = {gap:e}"))?;
        ensure(jgap <= 1e-8, || format!("instance {k}: |J(K*) − tr P*| = {jgap:e}"))?;
    }
    Ok(format!("20 instances, max ‖P_dre − P_newton‖ {worst_p:.1e}, max |J − tr P*| {worst_j:.1e}"))
}

fn run_binary(config: &str, out: &Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_fragctl"))
        .arg("run")
        .arg(configs().join(format!("{config}.toml")))
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.success(), || format!("{config}: {}", String::from_utf8_lossy(&status.stderr)))?;
    let read = |f: &str| std::fs::read(out.join(f)).map_err(|e| e.to_string());
    Ok((read("trajectory.csv")?, read("summary.json")?))
}

fn c11_determinism(out: &Path) -> Check {
    let names = ["split_random", "tank4_lyapunov_pi", "tank4_robust_b", "tank4_robust_noise"];
    for name in names {
        let dir = out.join(format!("det_{name}"));
        let first = run_binary(name, &dir)?;
        let second = run_binary(name, &dir)?;
        ensure(first.0 == second.0, || format!("{name}: trajectory.csv differs"))?;
        ensure(first.1 == second.1, || format!("{name}: summary.json differs"))?;
    }
    Ok(format!("{} configs byte-identical across two binary runs", names.len()))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let criteria: [Criterion; 11] = [
        (1, "share exactness", c1_share_exactness),
        (2, "Lyapunov PI exactness", c2_lyapunov_exactness),
        (3, "practical vs exact gap", c3_practical_gap),
        (4, "Riccati PI exactness", c4_riccati_exactness),
        (5, "Riccati coupled monotonicity", c5_riccati_monotone),
        (6, "decay certificates", c6_decay_certificates),
        (7, "structured coordinates", c7_structured_coordinates),
        (8, "uncertain-B robustness", c8_uncertain_b),
        (9, "noisy-data robustness", c9_noisy_data),
        (10, "oracle concordance", c10_oracle_concordance),
        (11, "determinism", c11_determinism),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(|| check(tmp.path())).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} [{secs:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {why} [{secs:.1} s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
