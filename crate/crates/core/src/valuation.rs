//! Closed-form human capital, the deterministic conditional-mean path and the
//! Laplace-transform consistency check that ties the two together.
//!
//! With `K = K(r)` and `G` the discounted partial mass of `Φ`, the market value
//! at `t₀` of the whole future income stream is
//!
//! ```text
//! H(t₀) = (1/K) · ( X₀(t₀) + ∫_{-d}^0 G(s) X₀(t₀+s) ds )
//! ```
//!
//! The second term inside the bracket is the market value of the past.
//! All computations are re-anchored so that `t₀` maps to zero.

use crate::history::{HistoryError, HistoryRing, HistorySegment, LagStencil};
use crate::measure::Atom;
use crate::model::{HypothesisReport, IncomeModel, ModelError};
use crate::stats::Neumaier;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValuationError {
    #[error("hypothesis fails: {0}")]
    Hypothesis(HypothesisReport),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("exit intensity must be finite and non-negative, got {0}")]
    InvalidExitRate(f64),
    #[error("Laplace transform diverges: lambda = {lambda} <= lambda0 = {lambda0}")]
    DivergentTransform { lambda: f64, lambda0: f64 },
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValuationResult {
    /// Rate used for discounting: `r`, or `r + δ` with Poisson exit.
    pub discount_rate: f64,
    pub k: f64,
    pub lambda0: f64,
    /// `1/K`.
    pub annuity_factor: f64,
    /// `X₀(t₀)`.
    pub present_term: f64,
    /// `∫ G(s) X₀(t₀+s) ds`.
    pub past_term: f64,
    pub total: f64,
}

/// Human capital at `hist.t0()`.
///
/// The past term uses the trapezoid rule on the history grid. On each cell the
/// left node takes `G` closed at the node and the right node takes its left
/// limit, so an atom of `Φ` sitting on a grid node does not spoil the `O(Δt²)`
/// accuracy.
pub fn human_capital(model: &IncomeModel, hist: &HistorySegment) -> Result<ValuationResult, ValuationError> {
    value_at_rate(model, hist, model.market().rate())
}

/// Human capital when income stops at an independent exponential time with
/// intensity `delta`: same formula with `r` replaced by `r + δ`.
pub fn human_capital_poisson(
    model: &IncomeModel,
    hist: &HistorySegment,
    delta: f64,
) -> Result<ValuationResult, ValuationError> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(ValuationError::InvalidExitRate(delta));
    }
    value_at_rate(model, hist, model.market().rate() + delta)
}

fn value_at_rate(model: &IncomeModel, hist: &HistorySegment, rate: f64) -> Result<ValuationResult, ValuationError> {
    let report = model.check_hypothesis_at(rate);
    if !report.holds() {
        return Err(ValuationError::Hypothesis(report));
    }
    let hist = hist.trailing(model.window())?;
    let phi = model.risk_adjusted_measure();
    let past_term = if phi.is_zero() {
        0.0
    } else {
        history_integral(
            &hist,
            phi.atoms(),
            |s| phi.partial_exp_integral(rate, s),
            |s| phi.partial_exp_integral_open(rate, s),
        )
    };
    let k = report.k;
    let annuity_factor = 1.0 / k;
    let present_term = hist.current();
    Ok(ValuationResult {
        discount_rate: rate,
        k,
        lambda0: model.spectral_bound()?,
        annuity_factor,
        present_term,
        past_term,
        total: (present_term + past_term) * annuity_factor,
    })
}

/// One-sided trapezoid of `w(s) x(s)` over the history grid, with `closed`
/// at the left end of each segment and `open` (the left limit) at the right
/// end. Cells holding an atom of `Φ` strictly inside are split there, with
/// `x` interpolated linearly, so jumps of `w` never fall inside a segment.
fn history_integral<C, O>(hist: &HistorySegment, atoms: &[Atom], closed: C, open: O) -> f64
where
    C: Fn(f64) -> f64,
    O: Fn(f64) -> f64,
{
    let v = hist.values();
    let dt = hist.dt();
    let mut acc = Neumaier::default();
    let mut next = atoms.iter().map(|a| a.loc).peekable();
    for j in 0..hist.steps() {
        let (lo, hi) = (hist.offset(j), hist.offset(j + 1));
        let (mut s, mut x) = (lo, v[j]);
        while let Some(&loc) = next.peek() {
            if loc >= hi {
                break;
            }
            next.next();
            if loc <= s {
                continue;
            }
            let xl = v[j] + (v[j + 1] - v[j]) * (loc - lo) / dt;
            acc.add(0.5 * (loc - s) * (closed(s) * x + open(loc) * xl));
            (s, x) = (loc, xl);
        }
        acc.add(0.5 * (hi - s) * (closed(s) * x + open(hi) * v[j + 1]));
    }
    acc.value()
}

/// Explicit Euler for `dM/dt = (μ₀ - σ₀ᵀκ) M + ∫ M(t+τ) Φ(dτ)` on the
/// history grid. The delay integral reads the ring buffer through a
/// [`LagStencil`] built from `Φ`.
pub(crate) struct MeanStepper {
    ring: HistoryRing,
    stencil: LagStencil,
    a: f64,
    dt: f64,
}

impl MeanStepper {
    /// `hist` must already span exactly the delay window.
    pub fn new(model: &IncomeModel, hist: &HistorySegment) -> Self {
        Self {
            ring: HistoryRing::new(hist.values()),
            stencil: LagStencil::new(model.risk_adjusted_measure(), hist.dt(), hist.steps()),
            a: model.risk_neutral_drift(),
            dt: hist.dt(),
        }
    }

    pub fn current(&self) -> f64 {
        self.ring.newest()
    }

    pub fn step(&mut self) -> f64 {
        let m = self.ring.newest();
        let next = m + self.dt * (self.a * m + self.stencil.apply(&self.ring));
        self.ring.push(next);
        next
    }
}

/// Deterministic mean `M₀(t) = Ẽ[X₀(t) | F_{t₀}]` on `[t₀, t₀ + horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanPath {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl MeanPath {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |k| self.t0 + k as f64 * self.dt)
    }
}

/// Number of grid steps covering `horizon`, rounding up.
pub(crate) fn steps_for(horizon: f64, dt: f64) -> Result<usize, ValuationError> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(ValuationError::InvalidHorizon(horizon));
    }
    Ok(((horizon / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize)
}

/// Euler solution of the mean delay equation for `horizon` years past `t₀`,
/// on the grid of `hist`. Converges at `O(Δt)`.
pub fn mean_path(model: &IncomeModel, hist: &HistorySegment, horizon: f64) -> Result<MeanPath, ValuationError> {
    let hist = hist.trailing(model.window())?;
    let n = steps_for(horizon, hist.dt())?;
    let mut stepper = MeanStepper::new(model, &hist);
    let mut values = Vec::with_capacity(n + 1);
    values.push(stepper.current());
    for _ in 0..n {
        values.push(stepper.step());
    }
    Ok(MeanPath {
        t0: hist.t0(),
        dt: hist.dt(),
        values,
    })
}

/// `C` such that `|M₀(t₀+t)| ≤ C e^{λ₀ t}` for all `t ≥ 0`.
///
/// For `Φ ≥ 0` the delay equation is order preserving and `C e^{λ₀ t}` solves
/// it exactly, so it dominates any solution whose history it dominates.
pub fn growth_envelope(hist: &HistorySegment, lambda0: f64) -> f64 {
    let v = hist.values();
    (0..hist.steps())
        .map(|j| {
            let x = v[j].abs().max(v[j + 1].abs());
            let e = (-lambda0 * hist.offset(j)).exp().max((-lambda0 * hist.offset(j + 1)).exp());
            x * e
        })
        .fold(0.0, f64::max)
}

/// Bound on `∫_{T}^{∞} e^{-ρ t} |M₀(t₀+t)| dt` from the growth envelope.
pub fn tail_bound(envelope: f64, lambda0: f64, rho: f64, horizon: f64) -> f64 {
    let gap = rho - lambda0;
    envelope * (-gap * horizon).exp() / gap
}

/// Smallest horizon with `tail_bound <= tol`, at least `min`.
pub fn horizon_for_tail(envelope: f64, lambda0: f64, rho: f64, tol: f64, min: f64) -> f64 {
    let gap = rho - lambda0;
    if envelope <= 0.0 {
        return min;
    }
    ((envelope / (gap * tol)).ln() / gap).max(min)
}

/// Trapezoid of `e^{-ρ t} M₀(t₀+t)` over `[0, steps·Δt]`, with `M₀` the Euler
/// mean path on the grid of `hist`. This is what a Monte Carlo estimator on
/// the same grid converges to, so its distance from the closed form is the
/// discretisation bias of that estimator.
pub fn euler_discounted_value(
    model: &IncomeModel,
    hist: &HistorySegment,
    rho: f64,
    horizon: f64,
) -> Result<f64, ValuationError> {
    let hist = hist.trailing(model.window())?;
    let n = steps_for(horizon, hist.dt())?;
    Ok(discounted_integral(model, &hist, rho, n))
}

fn discounted_integral(model: &IncomeModel, hist: &HistorySegment, rho: f64, n: usize) -> f64 {
    let dt = hist.dt();
    let mut stepper = MeanStepper::new(model, hist);
    let mut acc = Neumaier::default();
    acc.add(0.5 * stepper.current());
    for k in 1..=n {
        let m = stepper.step();
        let w = if k == n { 0.5 } else { 1.0 };
        acc.add(w * (-rho * k as f64 * dt).exp() * m);
    }
    dt * acc.value()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceOptions {
    /// Absolute end time of the quadrature; chosen from `tail_tol` when unset.
    pub t_max: Option<f64>,
    pub tail_tol: f64,
    /// Repeat the check at `2Δt` to estimate the Euler error.
    pub richardson: bool,
}

impl Default for LaplaceOptions {
    fn default() -> Self {
        Self {
            t_max: None,
            tail_tol: 1e-9,
            richardson: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceCheck {
    pub lambda: f64,
    pub lambda0: f64,
    /// Trapezoid of `e^{-λt} M₀(t)` on `[t₀, t_max]`.
    pub lhs: f64,
    /// `e^{-λt₀} (f(λ) m₀ + ∫ g(λ, s) m₁(s) ds)`.
    pub rhs: f64,
    pub gap: f64,
    pub t_max: f64,
    pub dt: f64,
    pub tail_bound: f64,
    /// `|gap(Δt) - gap(2Δt)|`, when the history grid allows it.
    pub euler_error_estimate: Option<f64>,
}

/// Compares the numerical Laplace transform of the Euler mean path with the
/// resolvent formula at `λ > λ₀`.
pub fn laplace_check(
    model: &IncomeModel,
    hist: &HistorySegment,
    lambda: f64,
    opts: LaplaceOptions,
) -> Result<LaplaceCheck, ValuationError> {
    let lambda0 = model.spectral_bound()?;
    if !(lambda > lambda0) {
        return Err(ValuationError::DivergentTransform { lambda, lambda0 });
    }
    let hist = hist.trailing(model.window())?;
    let t0 = hist.t0();
    let dt = hist.dt();
    let anchor = (-lambda * t0).exp();
    let envelope = anchor * growth_envelope(&hist, lambda0);
    let horizon = match opts.t_max {
        Some(t) => t - t0,
        None => horizon_for_tail(envelope, lambda0, lambda, opts.tail_tol, dt),
    };
    // a multiple of 2Δt, so the coarse Richardson run ends at the same time
    let n = 2 * steps_for(horizon, 2.0 * dt)?;
    let horizon = n as f64 * dt;

    let gap_at = |h: &HistorySegment, n: usize| -> Result<(f64, f64), ValuationError> {
        let lhs = anchor * discounted_integral(model, h, lambda, n);
        let res = model.resolvent_pair(lambda)?;
        let past = history_integral(h, model.risk_adjusted_measure().atoms(), |s| res.g(s), |s| res.g_left(s));
        let rhs = anchor * (res.f() * h.current() + past);
        Ok((lhs, rhs))
    };
    let (lhs, rhs) = gap_at(&hist, n)?;

    let euler_error_estimate = if opts.richardson && hist.steps() % 2 == 0 {
        let coarse: Vec<f64> = hist.values().iter().step_by(2).copied().collect();
        let coarse = HistorySegment::new(t0, 2.0 * dt, coarse)?;
        let (l2, r2) = gap_at(&coarse, n / 2)?;
        Some(((lhs - rhs) - (l2 - r2)).abs())
    } else {
        None
    };

    Ok(LaplaceCheck {
        lambda,
        lambda0,
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
        t_max: t0 + horizon,
        dt,
        tail_bound: tail_bound(envelope, lambda0, lambda, horizon),
        euler_error_estimate,
    })
}
