//! Delayed labor-income model and its analytic objects.
//!
//! Under the physical measure income follows
//!
//! ```text
//! dX(t) = [μ₀ X(t) + ∫ X(t+τ) φ(dτ)] dt + Σᵢ [σ₀ᵢ X(t) + ∫ X(t+τ) φᵢ(dτ)] dZᵢ(t)
//! ```
//!
//! with all delay integrals over `τ ∈ [-d, 0]`. Pricing only sees the
//! risk-adjusted measure `Φ = φ - Σᵢ κᵢ φᵢ` and the risk-adjusted drift
//! `μ₀ - σ₀ᵀκ`, through the characteristic function
//!
//! ```text
//! K(λ) = λ - (μ₀ - σ₀ᵀκ) - ∫ e^{λτ} Φ(dτ)
//! ```
//!
//! whose unique real root is the spectral bound `λ₀` when `Φ ≥ 0`.

use std::fmt;

use crate::market::{dot, MarketParams};
use crate::measure::{combine_risk_adjusted, same_window, DelayMeasure, MeasureError};
use thiserror::Error;

/// `|K(λ)|` below this is treated as a point of the spectrum.
pub const RESOLVENT_POLE_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("income drift mu0 must be finite and non-negative, got {0}")]
    InvalidDrift(f64),
    #[error("non-finite volatility loading")]
    NonFiniteLoading,
    #[error("{what} has length {got}, market has {n} assets")]
    AssetCount { what: &'static str, got: usize, n: usize },
    #[error("delay measures must share the window {expected}, found {found}")]
    WindowMismatch { expected: f64, found: f64 },
    #[error("risk-adjusted delay measure is signed; K is not guaranteed monotone")]
    SignedDelayMeasure,
    #[error("K({lambda}) = {k:e} vanishes: lambda is in the spectrum")]
    ResolventPole { lambda: f64, k: f64 },
}

/// Raw income coefficients, before they are tied to a market.
#[derive(Debug, Clone, PartialEq)]
pub struct IncomeParams {
    pub mu0: f64,
    pub sigma0: Vec<f64>,
    /// Drift delay measure `φ`.
    pub phi: DelayMeasure,
    /// Volatility delay measures `φᵢ`, one per Brownian component.
    pub phi_vec: Vec<DelayMeasure>,
}

impl IncomeParams {
    /// No delay at all: `φ = φᵢ = 0` on `[-window, 0]`.
    pub fn without_delay(mu0: f64, sigma0: Vec<f64>, window: f64) -> Result<Self, MeasureError> {
        let zero = DelayMeasure::zero(window)?;
        Ok(Self {
            mu0,
            phi_vec: vec![zero.clone(); sigma0.len()],
            sigma0,
            phi: zero,
        })
    }
}

/// Outcome of the positivity gate: `Φ ≥ 0` and `K > 0` at the discount rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisReport {
    pub phi_nonnegative: bool,
    pub k_positive: bool,
    pub k: f64,
    pub discount_rate: f64,
}

impl HypothesisReport {
    pub fn holds(&self) -> bool {
        self.phi_nonnegative && self.k_positive
    }
}

impl fmt::Display for HypothesisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "risk-adjusted delay measure non-negative: {}; K = {:.6e} at rate {} (positive: {})",
            self.phi_nonnegative, self.k, self.discount_rate, self.k_positive
        )
    }
}

/// Income model bound to a market, with `Φ` and `σ₀ᵀκ` precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct IncomeModel {
    params: IncomeParams,
    market: MarketParams,
    risk_adjusted: DelayMeasure,
    sigma0_dot_kappa: f64,
}

impl IncomeModel {
    pub fn new(params: IncomeParams, market: &MarketParams) -> Result<Self, ModelError> {
        let n = market.n_assets();
        if !(params.mu0.is_finite() && params.mu0 >= 0.0) {
            return Err(ModelError::InvalidDrift(params.mu0));
        }
        if params.sigma0.len() != n {
            return Err(ModelError::AssetCount {
                what: "sigma0",
                got: params.sigma0.len(),
                n,
            });
        }
        if params.phi_vec.len() != n {
            return Err(ModelError::AssetCount {
                what: "phi_vec",
                got: params.phi_vec.len(),
                n,
            });
        }
        if params.sigma0.iter().any(|s| !s.is_finite()) {
            return Err(ModelError::NonFiniteLoading);
        }
        let d = params.phi.window();
        if let Some(m) = params.phi_vec.iter().find(|m| !same_window(m.window(), d)) {
            return Err(ModelError::WindowMismatch {
                expected: d,
                found: m.window(),
            });
        }
        let kappa = market.market_price_of_risk();
        let risk_adjusted = combine_risk_adjusted(&params.phi, &params.phi_vec, kappa)?;
        let sigma0_dot_kappa = dot(&params.sigma0, kappa);
        Ok(Self {
            params,
            market: market.clone(),
            risk_adjusted,
            sigma0_dot_kappa,
        })
    }

    pub fn params(&self) -> &IncomeParams {
        &self.params
    }

    pub fn market(&self) -> &MarketParams {
        &self.market
    }

    /// Delay window `d`.
    pub fn window(&self) -> f64 {
        self.params.phi.window()
    }

    pub fn mu0(&self) -> f64 {
        self.params.mu0
    }

    pub fn sigma0(&self) -> &[f64] {
        &self.params.sigma0
    }

    pub fn sigma0_dot_kappa(&self) -> f64 {
        self.sigma0_dot_kappa
    }

    /// `μ₀ - σ₀ᵀκ`, the instantaneous drift coefficient under the
    /// risk-neutral measure.
    pub fn risk_neutral_drift(&self) -> f64 {
        self.params.mu0 - self.sigma0_dot_kappa
    }

    /// `Φ = φ - Σᵢ κᵢ φᵢ`.
    pub fn risk_adjusted_measure(&self) -> &DelayMeasure {
        &self.risk_adjusted
    }

    /// `K(λ) = λ - (μ₀ - σ₀ᵀκ) - ∫ e^{λτ} Φ(dτ)`.
    pub fn char_function(&self, lambda: f64) -> f64 {
        lambda - self.risk_neutral_drift() - self.risk_adjusted.partial_exp_integral(lambda, 0.0)
    }

    /// `K'(λ) = 1 + ∫ |τ| e^{λτ} Φ(dτ)`.
    pub fn char_derivative(&self, lambda: f64) -> f64 {
        1.0 - self.risk_adjusted.exp_moment(lambda)
    }

    /// `K = K(r)`, the inverse annuity factor.
    pub fn constant_k(&self) -> f64 {
        self.char_function(self.market.rate())
    }

    pub fn check_hypothesis(&self) -> HypothesisReport {
        self.check_hypothesis_at(self.market.rate())
    }

    /// Positivity gate with discounting at `rate` instead of `r`.
    pub fn check_hypothesis_at(&self, rate: f64) -> HypothesisReport {
        let k = self.char_function(rate);
        HypothesisReport {
            phi_nonnegative: self.risk_adjusted.is_nonnegative(),
            k_positive: k > 0.0,
            k,
            discount_rate: rate,
        }
    }

    /// Unique real root `λ₀` of `K`.
    ///
    /// Requires `Φ ≥ 0`, which makes `K` strictly increasing with
    /// `K(±∞) = ±∞`. The root is bracketed by geometric expansion around
    /// `μ₀ - σ₀ᵀκ ± mass(Φ)` and then bisected down to adjacent floats.
    pub fn spectral_bound(&self) -> Result<f64, ModelError> {
        if !self.risk_adjusted.is_nonnegative() {
            return Err(ModelError::SignedDelayMeasure);
        }
        let a = self.risk_neutral_drift();
        let mass = self.risk_adjusted.total_mass();
        let k = |x: f64| self.char_function(x);

        let mut step = mass.max(1e-3);
        let mut lo = a - mass;
        while k(lo) > 0.0 {
            lo -= step;
            step *= 2.0;
        }
        let mut step = mass.max(1e-3);
        let mut hi = a + mass;
        while k(hi) < 0.0 {
            hi += step;
            step *= 2.0;
        }
        if k(lo) == 0.0 {
            return Ok(lo);
        }
        if k(hi) == 0.0 {
            return Ok(hi);
        }
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let km = k(mid);
            if km == 0.0 {
                return Ok(mid);
            }
            if km < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(if k(lo).abs() <= k(hi).abs() { lo } else { hi })
    }

    /// `G(s) = ∫_{[-d, s]} e^{-r(s-τ)} Φ(dτ)`.
    pub fn kernel_g(&self, s: f64) -> f64 {
        self.kernel_g_at(self.market.rate(), s)
    }

    pub fn kernel_g_at(&self, rate: f64, s: f64) -> f64 {
        self.risk_adjusted.partial_exp_integral(rate, s)
    }

    /// The pair `(f(λ), g(λ, ·)) = (1/K(λ), ∫_{[-d,s]} e^{-λ(s-τ)}Φ(dτ) / K(λ))`
    /// representing the resolvent of the delay generator.
    pub fn resolvent_pair(&self, lambda: f64) -> Result<Resolvent<'_>, ModelError> {
        let k = self.char_function(lambda);
        if !(k.abs() >= RESOLVENT_POLE_TOL) {
            return Err(ModelError::ResolventPole { lambda, k });
        }
        Ok(Resolvent {
            lambda,
            k,
            measure: &self.risk_adjusted,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Resolvent<'a> {
    lambda: f64,
    k: f64,
    measure: &'a DelayMeasure,
}

impl Resolvent<'_> {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn f(&self) -> f64 {
        1.0 / self.k
    }

    pub fn g(&self, s: f64) -> f64 {
        self.measure.partial_exp_integral(self.lambda, s) / self.k
    }

    /// Left limit `g(λ, s⁻)`.
    pub fn g_left(&self, s: f64) -> f64 {
        self.measure.partial_exp_integral_open(self.lambda, s) / self.k
    }
}
