//! Ground-truth LTI systems and the per-agent data they generate.
//!
//! The true `(A, B)` only ever feeds data generation and oracle checks;
//! agents see nothing but their own [`DataSample`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, Vector};

/// Threshold on σ_min for the data rank conditions.
pub const RANK_TOL: f64 = 1e-10;

const MAX_RESAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: Matrix,
    /// `n × m`; `m = 0` for autonomous systems.
    pub b: Matrix,
}

impl LtiSystem {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        let n = numerics::require_square(&a, "LtiSystem::a")?;
        if b.nrows() != n {
            return Err(Error::dim("LtiSystem::b", format!("{n} rows"), b.nrows()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::arg("system", "entries must be finite"));
        }
        Ok(Self { a, b })
    }

    pub fn autonomous(a: Matrix) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, Matrix::zeros(n, 0))
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSample {
    pub index: usize,
    pub x: Vector,
    /// Measured state derivative.
    pub r: Vector,
    pub u: Vector,
    /// Injected derivative noise, kept for bookkeeping only.
    pub d: Option<Vector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FragmentedDataset {
    pub samples: Vec<DataSample>,
    pub n: usize,
    pub m: usize,
}

impl FragmentedDataset {
    pub fn agents(&self) -> usize {
        self.samples.len()
    }

    /// `X₀ = [x(t₁) … x(t_N)]`.
    pub fn states(&self) -> Matrix {
        Matrix::from_columns(&self.samples.iter().map(|s| s.x.clone()).collect::<Vec<_>>())
    }

    pub fn inputs(&self) -> Matrix {
        if self.m == 0 {
            return Matrix::zeros(0, self.agents());
        }
        Matrix::from_columns(&self.samples.iter().map(|s| s.u.clone()).collect::<Vec<_>>())
    }

    pub fn derivatives(&self) -> Matrix {
        Matrix::from_columns(&self.samples.iter().map(|s| s.r.clone()).collect::<Vec<_>>())
    }

    /// `[X₀; U₀]`.
    pub fn stacked(&self) -> Matrix {
        let x = self.states();
        let u = self.inputs();
        let mut out = Matrix::zeros(self.n + self.m, self.agents());
        out.view_mut((0, 0), (self.n, self.agents())).copy_from(&x);
        if self.m > 0 {
            out.view_mut((self.n, 0), (self.m, self.agents())).copy_from(&u);
        }
        out
    }

    /// `Δ_d = [d(t₁) … d(t_N)]`, zero for clean samples.
    pub fn noise(&self) -> Matrix {
        let mut out = Matrix::zeros(self.n, self.agents());
        for (i, s) in self.samples.iter().enumerate() {
            if let Some(d) = &s.d {
                out.set_column(i, d);
            }
        }
        out
    }
}

/// Which data rank assumption a dataset must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankCondition {
    /// rank X₀ = n.
    States,
    /// rank [X₀; U₀] = n + m.
    StatesAndInputs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    pub agents: usize,
    pub seed: u64,
    pub input_scale: f64,
    /// Exact spectral norm of the injected noise matrix Δ_d.
    pub noise_energy: f64,
    pub rank: RankCondition,
}

impl SamplingConfig {
    pub fn clean(agents: usize, seed: u64) -> Self {
        Self {
            agents,
            seed,
            input_scale: 1.0,
            noise_energy: 0.0,
            rank: RankCondition::States,
        }
    }
}

/// Draws one independent `(x, u)` point per agent, uniform on `[−1, 1]`
/// (inputs scaled by `input_scale`), computes `r = Ax + Bu` pointwise and adds
/// noise of spectral norm exactly `noise_energy`.
pub fn sample_algebraic(sys: &LtiSystem, cfg: &SamplingConfig) -> Result<FragmentedDataset> {
    let (n, m) = (sys.n(), sys.m());
    let needed = match cfg.rank {
        RankCondition::States => n,
        RankCondition::StatesAndInputs => n + m,
    };
    if cfg.agents < needed {
        return Err(Error::arg(
            "agents",
            format!("{} agents cannot satisfy a rank-{needed} data condition", cfg.agents),
        ));
    }
    if !(cfg.noise_energy >= 0.0) {
        return Err(Error::arg("noise_energy", "must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut last_sigma = 0.0;
    for _ in 0..MAX_RESAMPLES {
        let mut samples = Vec::with_capacity(cfg.agents);
        for i in 0..cfg.agents {
            let x = Vector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
            let u = Vector::from_fn(m, |_, _| cfg.input_scale * rng.random_range(-1.0..=1.0));
            let r = &sys.a * &x + &sys.b * &u;
            samples.push(DataSample {
                index: i,
                x,
                r,
                u,
                d: None,
            });
        }
        let ds = FragmentedDataset { samples, n, m };
        let (ok, sigma) = check_rank(&ds, cfg.rank == RankCondition::StatesAndInputs);
        last_sigma = sigma;
        if ok {
            return add_noise(ds, cfg.noise_energy, &mut rng);
        }
    }
    Err(Error::RankDeficient {
        matrix: match cfg.rank {
            RankCondition::States => "X0",
            RankCondition::StatesAndInputs => "[X0; U0]",
        },
        sigma_min: last_sigma,
    })
}

/// Replaces the noise on a dataset with a fresh draw of spectral norm `tau`.
pub fn with_noise(ds: &FragmentedDataset, tau: f64, seed: u64) -> Result<FragmentedDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clean = ds.clone();
    for s in &mut clean.samples {
        if let Some(d) = s.d.take() {
            s.r -= d;
        }
    }
    add_noise(clean, tau, &mut rng)
}

/// Adds `tau · G / ‖G‖₂` for a fixed direction `G` (`n × N`).
pub fn with_noise_direction(ds: &FragmentedDataset, direction: &Matrix, tau: f64) -> Result<FragmentedDataset> {
    if direction.nrows() != ds.n || direction.ncols() != ds.agents() {
        return Err(Error::dim(
            "with_noise_direction",
            format!("{}x{}", ds.n, ds.agents()),
            format!("{}x{}", direction.nrows(), direction.ncols()),
        ));
    }
    let norm = numerics::spectral_norm(direction);
    if norm == 0.0 {
        return Err(Error::arg("direction", "zero noise direction"));
    }
    let mut out = ds.clone();
    for (i, s) in out.samples.iter_mut().enumerate() {
        if let Some(d) = s.d.take() {
            s.r -= d;
        }
        let d: Vector = direction.column(i) * (tau / norm);
        s.r += &d;
        s.d = Some(d);
    }
    Ok(out)
}

fn add_noise(ds: FragmentedDataset, tau: f64, rng: &mut ChaCha8Rng) -> Result<FragmentedDataset> {
    if tau == 0.0 {
        return Ok(ds);
    }
    let g = Matrix::from_fn(ds.n, ds.agents(), |_, _| rng.sample::<f64, _>(StandardNormal));
    with_noise_direction(&ds, &g, tau)
}

/// `count` standard Gaussian `rows × cols` matrices from one seeded stream.
pub fn gaussian_matrices(rows: usize, cols: usize, count: usize, seed: u64) -> Vec<Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

/// Reports whether `X₀` (or `[X₀; U₀]`) has full row rank, and its σ_min.
pub fn check_rank(ds: &FragmentedDataset, with_inputs: bool) -> (bool, f64) {
    let data = if with_inputs { ds.stacked() } else { ds.states() };
    if data.ncols() < data.nrows() {
        return (false, 0.0);
    }
    let (sigma_min, _) = numerics::singular_extremes(&data);
    (sigma_min > RANK_TOL, sigma_min)
}

pub fn hurwitz(a: &Matrix) -> bool {
    a.is_square() && numerics::spectral_abscissa(a) < -1e-10
}
