//! Complete Black-Scholes market: money market account plus `n` geometric
//! Brownian motions driven by an `n`-dimensional Brownian motion `Z`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("market needs at least one risky asset")]
    NoAssets,
    #[error("volatility matrix must be {n}x{n}")]
    Shape { n: usize },
    #[error("non-finite market parameter")]
    NonFinite,
    #[error("volatility matrix is singular (sigma sigma^T not positive definite)")]
    Singular,
}

/// Riskless rate `r`, drift vector `mu` and volatility matrix `sigma`, with the
/// market price of risk `κ = (σᵀ)⁻¹(μ - r·1)` cached at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketParams {
    r: f64,
    mu: Vec<f64>,
    sigma: DMatrix<f64>,
    kappa: Vec<f64>,
}

impl MarketParams {
    /// `sigma` is given row by row: `sigma[i][j]` loads asset `i` on `Z_j`.
    pub fn new(r: f64, mu: Vec<f64>, sigma: Vec<Vec<f64>>) -> Result<Self, MarketError> {
        let n = mu.len();
        if n == 0 {
            return Err(MarketError::NoAssets);
        }
        if sigma.len() != n || sigma.iter().any(|row| row.len() != n) {
            return Err(MarketError::Shape { n });
        }
        if !r.is_finite()
            || mu.iter().any(|v| !v.is_finite())
            || sigma.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(MarketError::NonFinite);
        }
        let sigma = DMatrix::from_fn(n, n, |i, j| sigma[i][j]);
        if (&sigma * sigma.transpose()).cholesky().is_none() {
            return Err(MarketError::Singular);
        }
        let excess = DVector::from_iterator(n, mu.iter().map(|m| m - r));
        let kappa = sigma
            .transpose()
            .lu()
            .solve(&excess)
            .ok_or(MarketError::Singular)?;
        if kappa.iter().any(|k| !k.is_finite()) {
            return Err(MarketError::Singular);
        }
        Ok(Self {
            r,
            mu,
            sigma,
            kappa: kappa.iter().copied().collect(),
        })
    }

    pub fn single_asset(r: f64, mu: f64, sigma: f64) -> Result<Self, MarketError> {
        Self::new(r, vec![mu], vec![vec![sigma]])
    }

    pub fn rate(&self) -> f64 {
        self.r
    }

    pub fn n_assets(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self, i: usize, j: usize) -> f64 {
        self.sigma[(i, j)]
    }

    /// `κ = (σᵀ)⁻¹(μ - r·1)`.
    pub fn market_price_of_risk(&self) -> &[f64] {
        &self.kappa
    }

    pub fn kappa_norm_sq(&self) -> f64 {
        self.kappa.iter().map(|k| k * k).sum()
    }

    /// State-price deflator at time `t` given `κᵀZ(t)`:
    /// `ξ(t) = exp(-(r + ½‖κ‖²) t - κᵀZ(t))`.
    pub fn deflator_at(&self, t: f64, kappa_dot_z: f64) -> f64 {
        (-(self.r + 0.5 * self.kappa_norm_sq()) * t - kappa_dot_z).exp()
    }

    /// Exact deflator along a sampled Brownian path, one value per grid time.
    pub fn deflator_path(&self, path: &BrownianPath) -> Vec<f64> {
        assert_eq!(path.dim(), self.n_assets(), "Brownian dimension must match asset count");
        let mut kz = 0.0;
        let mut out = Vec::with_capacity(path.steps() + 1);
        out.push(self.deflator_at(0.0, 0.0));
        for k in 0..path.steps() {
            kz += dot(&self.kappa, path.increment(k));
            out.push(self.deflator_at((k + 1) as f64 * path.dt(), kz));
        }
        out
    }

    /// Exact GBM prices `S_i(t_k)` along a Brownian path, for illustration.
    pub fn asset_path(&self, s0: &[f64], path: &BrownianPath) -> Vec<Vec<f64>> {
        let n = self.n_assets();
        assert_eq!(s0.len(), n);
        assert_eq!(path.dim(), n);
        let half_var: Vec<f64> = (0..n)
            .map(|i| 0.5 * (0..n).map(|j| self.sigma[(i, j)].powi(2)).sum::<f64>())
            .collect();
        let mut z = vec![0.0; n];
        let mut out = vec![s0.to_vec()];
        for k in 0..path.steps() {
            for (zj, dz) in z.iter_mut().zip(path.increment(k)) {
                *zj += dz;
            }
            let t = (k + 1) as f64 * path.dt();
            out.push(
                (0..n)
                    .map(|i| {
                        let sz: f64 = (0..n).map(|j| self.sigma[(i, j)] * z[j]).sum();
                        s0[i] * ((self.mu[i] - half_var[i]) * t + sz).exp()
                    })
                    .collect(),
            );
        }
        out
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Increments of an `n`-dimensional Brownian motion on a uniform grid, with
/// `Z(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    dt: f64,
    dim: usize,
    increments: Vec<f64>,
}

impl BrownianPath {
    /// `increments` is step-major: step `k` occupies `[k*dim, (k+1)*dim)`.
    pub fn from_increments(dt: f64, dim: usize, increments: Vec<f64>) -> Self {
        assert!(dim > 0 && increments.len().is_multiple_of(dim));
        Self { dt, dim, increments }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.increments.len() / self.dim
    }

    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }
}
