//! Consensus/disagreement coordinates for the PI flows.
//!
//! With `pᵢ = vec(Pᵢ)`, `yᵢ = vec(Yᵢ)`, `𝐩 = col(p₁ … p_N)`, `ω = 𝟙 ⊗ I`,
//! `𝒰 = U ⊗ I` and `Λ = Γ ⊗ I` (from `L = UΓUᵀ`):
//!
//! ```text
//! ξ₁ = (1/N) ωᵀ𝐩 − p̄*      ξ₂ = 𝒰ᵀ𝐩
//! ξ₃ = 𝒰ᵀ𝐲 − ỹ*            ξ₄ = (1/N) ωᵀ𝐲
//! ỹ* = (1/γ) Λ⁻¹ 𝒰ᵀ 𝒜 ω p̄*,   𝒜 = N·blkdiag(I ⊗ Aᵢᵀ + Aᵢᵀ ⊗ I)
//! ```
//!
//! `p̄*` is `vec(P*)` for the Lyapunov solution or the stabilizing Riccati
//! solution. The transforms below work on `n² × N` stacks instead of forming
//! the Kronecker products: `𝒰ᵀ𝐩 = vec(Pstack · U)`.

use crate::error::{Error, Result};
use crate::graph::SpectralSplit;
use crate::numerics::{self, Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredCoords {
    pub xi1: Vector,
    pub xi2: Vector,
    pub xi3: Vector,
    pub xi4: Vector,
}

impl StructuredCoords {
    /// `col(ξ₁, ξ₂, ξ₃, ξ₄)`.
    pub fn stacked(&self) -> Vector {
        Vector::from_iterator(
            self.xi1.len() + self.xi2.len() + self.xi3.len() + self.xi4.len(),
            self.xi1
                .iter()
                .chain(self.xi2.iter())
                .chain(self.xi3.iter())
                .chain(self.xi4.iter())
                .cloned(),
        )
    }
}

/// `I ⊗ Aᵀ + Aᵀ ⊗ I`, the vectorized map `P ↦ AᵀP + PA`.
pub fn lyapunov_operator(a: &Matrix) -> Matrix {
    let n = a.nrows();
    let at = a.transpose();
    let eye = Matrix::identity(n, n);
    numerics::kron(&eye, &at) + numerics::kron(&at, &eye)
}

#[derive(Debug, Clone)]
pub struct CoordinateMap {
    n: usize,
    agents: usize,
    split: SpectralSplit,
    p_star: Vector,
    y_tilde_star: Matrix,
}

impl CoordinateMap {
    pub fn new(shares: &[Matrix], split: &SpectralSplit, p_star: &Matrix, gamma: f64) -> Result<Self> {
        let agents = shares.len();
        if split.u.nrows() != agents || split.u.ncols() + 1 != agents {
            return Err(Error::dim(
                "CoordinateMap::split",
                format!("{agents}x{}", agents.saturating_sub(1)),
                format!("{}x{}", split.u.nrows(), split.u.ncols()),
            ));
        }
        let n = numerics::require_square(p_star, "CoordinateMap::p_star")?;
        if !(gamma > 0.0) {
            return Err(Error::arg("gamma", "must be positive"));
        }
        let nn = n * n;
        // 𝒜ω p̄* as an n² × N stack: column i is N·vec(AᵢᵀP* + P*Aᵢ).
        let scale = agents as f64;
        let mut stack = Matrix::zeros(nn, agents);
        for (i, a) in shares.iter().enumerate() {
            let block = (a.transpose() * p_star + p_star * a) * scale;
            stack.column_mut(i).copy_from_slice(block.as_slice());
        }
        let mut y_tilde_star = stack * &split.u;
        for (k, g) in split.gamma.iter().enumerate() {
            y_tilde_star.column_mut(k).scale_mut(1.0 / (gamma * g));
        }
        Ok(Self {
            n,
            agents,
            split: split.clone(),
            p_star: numerics::vec(p_star),
            y_tilde_star,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `ỹ*` as a vector of length `n²(N−1)`.
    pub fn y_tilde_star(&self) -> Vector {
        Vector::from_column_slice(self.y_tilde_star.as_slice())
    }

    fn stack(&self, ms: &[Matrix], what: &'static str) -> Result<Matrix> {
        let nn = self.n * self.n;
        if ms.len() != self.agents {
            return Err(Error::dim(what, self.agents, ms.len()));
        }
        let mut out = Matrix::zeros(nn, self.agents);
        for (i, m) in ms.iter().enumerate() {
            if m.shape() != (self.n, self.n) {
                return Err(Error::dim(what, format!("{0}x{0}", self.n), format!("{}x{}", m.nrows(), m.ncols())));
            }
            out.column_mut(i).copy_from_slice(m.as_slice());
        }
        Ok(out)
    }

    pub fn forward(&self, ps: &[Matrix], ys: &[Matrix]) -> Result<StructuredCoords> {
        let p = self.stack(ps, "CoordinateMap::forward::p")?;
        let y = self.stack(ys, "CoordinateMap::forward::y")?;
        let inv_n = 1.0 / self.agents as f64;
        let p_bar: Vector = p.column_sum() * inv_n;
        let y_bar: Vector = y.column_sum() * inv_n;
        let p_tilde = &p * &self.split.u;
        let y_tilde = &y * &self.split.u - &self.y_tilde_star;
        Ok(StructuredCoords {
            xi1: p_bar - &self.p_star,
            xi2: Vector::from_column_slice(p_tilde.as_slice()),
            xi3: Vector::from_column_slice(y_tilde.as_slice()),
            xi4: y_bar,
        })
    }

    /// Recovers `(Pᵢ, Yᵢ)` from the structured coordinates.
    pub fn inverse(&self, xi: &StructuredCoords) -> Result<(Vec<Matrix>, Vec<Matrix>)> {
        let nn = self.n * self.n;
        let m = self.agents - 1;
        if xi.xi1.len() != nn || xi.xi4.len() != nn || xi.xi2.len() != nn * m || xi.xi3.len() != nn * m {
            return Err(Error::dim("CoordinateMap::inverse", format!("n² = {nn}, n²(N−1) = {}", nn * m), "mismatched ξ"));
        }
        let p_bar = &xi.xi1 + &self.p_star;
        let p_tilde = Matrix::from_column_slice(nn, m, xi.xi2.as_slice());
        let y_tilde = Matrix::from_column_slice(nn, m, xi.xi3.as_slice()) + &self.y_tilde_star;
        let ones = Matrix::from_element(1, self.agents, 1.0);
        let ut = self.split.u.transpose();
        let p = &p_bar * &ones + p_tilde * &ut;
        let y = &xi.xi4 * &ones + y_tilde * &ut;
        let unstack = |s: &Matrix| -> Vec<Matrix> {
            (0..self.agents)
                .map(|i| Matrix::from_column_slice(self.n, self.n, s.column(i).as_slice()))
                .collect()
        };
        Ok((unstack(&p), unstack(&y)))
    }
}

/// Blocks of the linear structured dynamics of the PI Lyapunov flow:
///
/// ```text
/// ξ̇₁ = Ā ξ₁ + A₁₂ ξ₂
/// ξ̇₂ = A₂₁ ξ₁ + (A₂₂ − γA₂₃) ξ₂ − γA₂₃ ξ₃
/// ξ̇₃ = γA₂₃ ξ₂,     ξ̇₄ = 0
/// ```
///
/// with `A₁₂ = (1/N)ωᵀ𝒜𝒰`, `A₂₁ = 𝒰ᵀ𝒜ω`, `A₂₂ = 𝒰ᵀ𝒜𝒰`, `A₂₃ = Λ`.
/// Dense; intended for small networks (`n²N` in the low hundreds).
#[derive(Debug, Clone)]
pub struct CompactBlocks {
    pub abar: Matrix,
    pub a12: Matrix,
    pub a21: Matrix,
    pub a22: Matrix,
    pub a23: Matrix,
}

impl CompactBlocks {
    pub fn new(shares: &[Matrix], split: &SpectralSplit) -> Result<Self> {
        let agents = shares.len();
        if split.u.nrows() != agents {
            return Err(Error::dim("CompactBlocks::split", agents, split.u.nrows()));
        }
        let n = shares.first().map(|a| a.nrows()).unwrap_or(0);
        let nn = n * n;
        let m = agents - 1;
        let scale = agents as f64;
        let ops: Vec<Matrix> = shares.iter().map(|a| lyapunov_operator(a) * scale).collect();
        let u = &split.u;

        let abar = ops.iter().fold(Matrix::zeros(nn, nn), |acc, op| acc + op) / scale;
        let mut a12 = Matrix::zeros(nn, nn * m);
        let mut a21 = Matrix::zeros(nn * m, nn);
        let mut a22 = Matrix::zeros(nn * m, nn * m);
        for k in 0..m {
            let mut col_block = Matrix::zeros(nn, nn);
            for (i, op) in ops.iter().enumerate() {
                col_block += op * u[(i, k)];
            }
            a12.view_mut((0, k * nn), (nn, nn)).copy_from(&(&col_block / scale));
            a21.view_mut((k * nn, 0), (nn, nn)).copy_from(&col_block);
            for l in 0..m {
                let mut block = Matrix::zeros(nn, nn);
                for (i, op) in ops.iter().enumerate() {
                    block += op * (u[(i, k)] * u[(i, l)]);
                }
                a22.view_mut((k * nn, l * nn), (nn, nn)).copy_from(&block);
            }
        }
        let a23 = numerics::kron(&split.gamma_matrix(), &Matrix::identity(nn, nn));
        Ok(Self {
            abar,
            a12,
            a21,
            a22,
            a23,
        })
    }

    /// Full system matrix acting on `col(ξ₁, ξ₂, ξ₃, ξ₄)`.
    pub fn system_matrix(&self, gamma: f64) -> Matrix {
        let nn = self.abar.nrows();
        let dm = self.a22.nrows();
        let dim = 2 * nn + 2 * dm;
        let mut s = Matrix::zeros(dim, dim);
        s.view_mut((0, 0), (nn, nn)).copy_from(&self.abar);
        s.view_mut((0, nn), (nn, dm)).copy_from(&self.a12);
        s.view_mut((nn, 0), (dm, nn)).copy_from(&self.a21);
        s.view_mut((nn, nn), (dm, dm)).copy_from(&(&self.a22 - &self.a23 * gamma));
        s.view_mut((nn, nn + dm), (dm, dm)).copy_from(&(&self.a23 * -gamma));
        s.view_mut((nn + dm, nn), (dm, dm)).copy_from(&(&self.a23 * gamma));
        s
    }
}

/// `φʳ_D(v) = Iₙ ⊗ (mat(v) D)`.
pub fn phi_r(v: &[f64], d: &Matrix) -> Result<Matrix> {
    let n = d.nrows();
    let m = numerics::mat(v, n, n)?;
    Ok(numerics::kron(&Matrix::identity(n, n), &(m * d)))
}

/// `φˡ_D(v) = (D mat(v))ᵀ ⊗ Iₙ`.
pub fn phi_l(v: &[f64], d: &Matrix) -> Result<Matrix> {
    let n = d.nrows();
    let m = numerics::mat(v, n, n)?;
    Ok(numerics::kron(&(d * m).transpose(), &Matrix::identity(n, n)))
}

/// `Φᵏ(𝐯) = blkdiag(φᵏ(v₁), …, φᵏ(v_N))` for a stacked `𝐯`.
pub fn phi_stacked(v: &[f64], d: &Matrix, left: bool) -> Result<Matrix> {
    let nn = d.nrows() * d.nrows();
    if nn == 0 || !v.len().is_multiple_of(nn) {
        return Err(Error::dim("phi_stacked", format!("multiple of {nn}"), v.len()));
    }
    let blocks = v.len() / nn;
    let mut out = Matrix::zeros(v.len(), v.len());
    for b in 0..blocks {
        let chunk = &v[b * nn..(b + 1) * nn];
        let block = if left { phi_l(chunk, d)? } else { phi_r(chunk, d)? };
        out.view_mut((b * nn, b * nn), (nn, nn)).copy_from(&block);
    }
    Ok(out)
}
