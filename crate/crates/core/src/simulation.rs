//! Euler–Maruyama simulation of the delayed income equation and the Monte
//! Carlo estimators of human capital.
//!
//! Each path owns a ring buffer over the last `d/Δt` grid values. Delay
//! integrals are evaluated with the same lag stencils as the deterministic
//! mean path, so the Euler scheme and the closed form see the same
//! quadrature of the delay measures.
//!
//! Normals are keyed by `(seed, stream, path, step)`; results are bitwise
//! reproducible whatever the number of worker threads.

use rayon::prelude::*;
use thiserror::Error;

use crate::history::{HistoryError, HistoryRing, HistorySegment, LagStencil, LaneRing, Lanes, LANES};
use crate::market::BrownianPath;
use crate::model::IncomeModel;
use crate::rng::{PathRng, Stream, Ziggurat};
use crate::stats::mean_and_se;
use crate::valuation::{
    growth_envelope, horizon_for_tail, human_capital_poisson, steps_for, tail_bound, ValuationError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Valuation(#[from] ValuationError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error("need at least two paths, got {0}")]
    TooFewPaths(usize),
    #[error("antithetic sampling needs an even path count, got {0}")]
    OddAntithetic(usize),
    #[error("this run needs an explicit horizon")]
    MissingHorizon,
}

/// Probability measure under which paths are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    /// Original drift `μ₀X + ∫X φ`; values are deflated with `ξ`.
    Physical,
    /// Drift `(μ₀ - σ₀ᵀκ)X + ∫X Φ`; values are discounted at `r`.
    RiskNeutral,
}

impl Measure {
    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Physical => "physical",
            Measure::RiskNeutral => "risk_neutral",
        }
    }

    fn stream(self) -> Stream {
        match self {
            Measure::Physical => Stream::Physical,
            Measure::RiskNeutral => Stream::RiskNeutral,
        }
    }

    fn pilot_stream(self) -> Stream {
        match self {
            Measure::Physical => Stream::PilotPhysical,
            Measure::RiskNeutral => Stream::PilotRiskNeutral,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Euler step; must divide the delay window.
    pub dt: f64,
    pub n_paths: usize,
    /// Years after `t₀`. For valuation runs `None` picks it from the tail bound.
    pub horizon: Option<f64>,
    pub seed: u64,
    pub measure: Measure,
    /// Pair each path with its mirror image `-ΔZ`. Each pair counts as one
    /// sample in standard errors.
    pub antithetic: bool,
}

impl SimConfig {
    pub fn new(dt: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            dt,
            n_paths,
            horizon: None,
            seed,
            measure: Measure::RiskNeutral,
            antithetic: false,
        }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = Some(horizon);
        self
    }

    pub fn with_measure(mut self, measure: Measure) -> Self {
        self.measure = measure;
        self
    }

    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(HistoryError::InvalidStep(self.dt).into());
        }
        if self.n_paths < 2 {
            return Err(SimError::TooFewPaths(self.n_paths));
        }
        if self.antithetic && !self.n_paths.is_multiple_of(2) {
            return Err(SimError::OddAntithetic(self.n_paths));
        }
        Ok(())
    }

    fn samples(&self) -> usize {
        if self.antithetic {
            self.n_paths / 2
        } else {
            self.n_paths
        }
    }
}

/// Monte Carlo estimate of human capital.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
    /// Truncation horizon, years after `t₀`.
    pub horizon: f64,
    /// Bound on the neglected `∫_T^∞` part of the expected payoff.
    pub truncation_tail_bound: f64,
}

/// Everything a time step needs, fixed for the whole run.
struct Dynamics {
    dt: f64,
    sqrt_dt: f64,
    a: f64,
    drift: LagStencil,
    sigma0: Vec<f64>,
    vol: Vec<LagStencil>,
    kappa: Vec<f64>,
    /// History on the simulation grid, oldest first.
    init: Vec<f64>,
}

impl Dynamics {
    fn new(model: &IncomeModel, hist: &HistorySegment, measure: Measure) -> Self {
        let lags = hist.steps();
        let dt = hist.dt();
        let params = model.params();
        let (a, drift) = match measure {
            Measure::Physical => (model.mu0(), LagStencil::new(&params.phi, dt, lags)),
            Measure::RiskNeutral => (
                model.risk_neutral_drift(),
                LagStencil::new(model.risk_adjusted_measure(), dt, lags),
            ),
        };
        Self {
            dt,
            sqrt_dt: dt.sqrt(),
            a,
            drift,
            sigma0: params.sigma0.clone(),
            vol: params.phi_vec.iter().map(|m| LagStencil::new(m, dt, lags)).collect(),
            kappa: model.market().market_price_of_risk().to_vec(),
            init: hist.values().to_vec(),
        }
    }

    fn needs_sums(&self) -> bool {
        self.drift.has_blocks() || self.vol.iter().any(LagStencil::has_blocks)
    }

    fn dim(&self) -> usize {
        self.sigma0.len()
    }

    #[inline]
    fn draw(&self, rng: &mut PathRng, step: usize, dz: &mut [f64]) {
        rng.at_step(step as u64);
        let zig = Ziggurat::get();
        for z in dz.iter_mut() {
            *z = rng.normal(zig) * self.sqrt_dt;
        }
    }

    /// One Euler step with increments `sign · dz`. Returns the new value and
    /// the stochastic term `volᵀ ΔZ`.
    #[inline]
    fn advance(&self, ring: &mut HistoryRing, dz: &[f64], sign: f64) -> (f64, f64) {
        let x = ring.newest();
        let drift = self.a * x + self.drift.apply(ring);
        let mut noise = 0.0;
        for ((s0, st), z) in self.sigma0.iter().zip(&self.vol).zip(dz) {
            noise += (s0 * x + st.apply(ring)) * z;
        }
        noise *= sign;
        let next = x + drift * self.dt + noise;
        ring.push(next);
        (next, noise)
    }
}

/// Re-expresses `hist` on the simulation grid over exactly one delay window.
fn sim_history(model: &IncomeModel, hist: &HistorySegment, dt: f64) -> Result<HistorySegment, SimError> {
    Ok(hist.trailing(model.window())?.resample(dt)?)
}

/// Simulated paths, stored in full. Meant for dumps and small runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPaths {
    pub measure: Measure,
    /// Initial history on the simulation grid.
    pub history: HistorySegment,
    /// `x[p][k] = X₀(t₀ + kΔt)` on path `p`; `x[p][0]` is the current level.
    pub x: Vec<Vec<f64>>,
    /// Deflator `ξ(t₀ + kΔt)/ξ(t₀)` under the physical measure, discount factor
    /// `e^{-r kΔt}` under the risk-neutral one.
    pub xi: Vec<Vec<f64>>,
}

impl SimulatedPaths {
    pub fn dt(&self) -> f64 {
        self.history.dt()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        let len = self.x.first().map_or(0, Vec::len);
        (0..len).map(move |k| self.history.t0() + k as f64 * self.dt())
    }

    /// The delay window of path `p` ending at step `k`, anchored at its time.
    pub fn history_at(&self, p: usize, k: usize) -> HistorySegment {
        let lags = self.history.steps();
        let init = self.history.values();
        let path = &self.x[p];
        let values: Vec<f64> = (k..=k + lags)
            .map(|j| if j < lags { init[j] } else { path[j - lags] })
            .collect();
        HistorySegment::new(self.history.t0() + k as f64 * self.dt(), self.dt(), values)
            .expect("simulated values are finite")
    }
}

/// Path `p`'s generator and antithetic sign.
fn path_rng(cfg: &SimConfig, stream: Stream, p: usize) -> (PathRng, f64) {
    if cfg.antithetic {
        let sign = if p.is_multiple_of(2) { 1.0 } else { -1.0 };
        (PathRng::new(cfg.seed, stream, (p / 2) as u64), sign)
    } else {
        (PathRng::new(cfg.seed, stream, p as u64), 1.0)
    }
}

/// Runs `cfg.n_paths` Euler paths to `cfg.horizon` and keeps them.
pub fn simulate_income(model: &IncomeModel, hist: &HistorySegment, cfg: &SimConfig) -> Result<SimulatedPaths, SimError> {
    if !(cfg.dt.is_finite() && cfg.dt > 0.0) {
        return Err(HistoryError::InvalidStep(cfg.dt).into());
    }
    if cfg.antithetic && !cfg.n_paths.is_multiple_of(2) {
        return Err(SimError::OddAntithetic(cfg.n_paths));
    }
    let horizon = cfg.horizon.ok_or(SimError::MissingHorizon)?;
    let hist = sim_history(model, hist, cfg.dt)?;
    let n = steps_for(horizon, cfg.dt)?;
    let dynamics = Dynamics::new(model, &hist, cfg.measure);
    let market = model.market();
    let dim = dynamics.dim();

    let runs: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let (mut rng, sign) = path_rng(cfg, cfg.measure.stream(), p);
            let mut ring = HistoryRing::new(&dynamics.init);
            let mut dz = vec![0.0; dim];
            let mut incr = Vec::with_capacity(n * dim);
            let mut x = Vec::with_capacity(n + 1);
            x.push(ring.newest());
            for k in 0..n {
                dynamics.draw(&mut rng, k, &mut dz);
                x.push(dynamics.advance(&mut ring, &dz, sign).0);
                incr.extend(dz.iter().map(|z| sign * z));
            }
            let xi = match cfg.measure {
                Measure::Physical => {
                    market.deflator_path(&BrownianPath::from_increments(cfg.dt, dim, incr))
                }
                Measure::RiskNeutral => (0..=n)
                    .map(|k| (-market.rate() * k as f64 * cfg.dt).exp())
                    .collect(),
            };
            (x, xi)
        })
        .collect();
    let (x, xi) = runs.into_iter().unzip();
    Ok(SimulatedPaths {
        measure: cfg.measure,
        history: hist,
        x,
        xi,
    })
}

/// Cross sections of simulated paths at fixed times, without storing paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMarginals {
    /// Years after `t₀`, snapped to the grid.
    pub times: Vec<f64>,
    /// `values[i][p]`: path `p` at `times[i]`.
    pub values: Vec<Vec<f64>>,
    /// Smallest value each path takes on the whole grid up to the horizon.
    pub path_min: Vec<f64>,
}

/// Simulates to `cfg.horizon` (or the last requested time) and records each
/// path at `times` (years after `t₀`).
pub fn simulate_marginals(
    model: &IncomeModel,
    hist: &HistorySegment,
    cfg: &SimConfig,
    times: &[f64],
) -> Result<PathMarginals, SimError> {
    if !(cfg.dt.is_finite() && cfg.dt > 0.0) {
        return Err(HistoryError::InvalidStep(cfg.dt).into());
    }
    if cfg.antithetic && !cfg.n_paths.is_multiple_of(2) {
        return Err(SimError::OddAntithetic(cfg.n_paths));
    }
    let hist = sim_history(model, hist, cfg.dt)?;
    let steps: Vec<usize> = times
        .iter()
        .map(|&t| if t == 0.0 { Ok(0) } else { steps_for(t, cfg.dt) })
        .collect::<Result<_, _>>()?;
    let last = steps.iter().copied().max().unwrap_or(0);
    let n = match cfg.horizon {
        Some(h) => steps_for(h, cfg.dt)?.max(last),
        None => last,
    };
    let dynamics = Dynamics::new(model, &hist, cfg.measure);
    let dim = dynamics.dim();

    let runs: Vec<(Vec<f64>, f64)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let (mut rng, sign) = path_rng(cfg, cfg.measure.stream(), p);
            let mut ring = HistoryRing::new(&dynamics.init);
            let mut dz = vec![0.0; dim];
            let mut at = vec![0.0; steps.len()];
            let mut min = ring.newest();
            for (slot, &s) in at.iter_mut().zip(&steps) {
                if s == 0 {
                    *slot = min;
                }
            }
            for k in 0..n {
                dynamics.draw(&mut rng, k, &mut dz);
                let x = dynamics.advance(&mut ring, &dz, sign).0;
                min = min.min(x);
                for (slot, &s) in at.iter_mut().zip(&steps) {
                    if s == k + 1 {
                        *slot = x;
                    }
                }
            }
            (at, min)
        })
        .collect();

    let mut values = vec![Vec::with_capacity(cfg.n_paths); steps.len()];
    let mut path_min = Vec::with_capacity(cfg.n_paths);
    for (at, min) in runs {
        for (col, v) in values.iter_mut().zip(at) {
            col.push(v);
        }
        path_min.push(min);
    }
    Ok(PathMarginals {
        times: steps.iter().map(|&s| s as f64 * cfg.dt).collect(),
        values,
        path_min,
    })
}

/// Largest `|x|` handled by the series in [`exp_lanes`].
const SERIES_MAX: f64 = 0.125;

/// `e^x` lane by lane.
///
/// For `|x| <= 1/8` the even and odd parts of the Taylor series are summed
/// to degree 11 (next term below `3e-20`) in Estrin form; otherwise it falls
/// back to `f64::exp`.
#[inline]
fn exp_lanes(x: &Lanes) -> Lanes {
    if x.iter().any(|v| v.abs() > SERIES_MAX) {
        return x.map(f64::exp);
    }
    std::array::from_fn(|l| {
        let (even, odd) = exp_series(x[l]);
        even + x[l] * odd
    })
}

/// [`exp_lanes`] for antithetic layouts, where lane `i + LANES/2` holds `-x[i]`.
/// The series is evaluated once per pair since `e^{±x} = even ± x·odd`.
#[inline]
fn exp_pairs(x: &Lanes) -> Lanes {
    const HALF: usize = LANES / 2;
    if x[..HALF].iter().any(|v| v.abs() > SERIES_MAX) {
        return x.map(f64::exp);
    }
    let mut out = [0.0; LANES];
    for i in 0..HALF {
        let v = x[i];
        let (even, odd) = exp_series(v);
        out[i] = even + v * odd;
        out[i + HALF] = even - v * odd;
    }
    out
}

/// Even and odd parts of the Taylor series of `e^x`, as functions of `x²`.
#[inline(always)]
fn exp_series(x: f64) -> (f64, f64) {
    let y = x * x;
    let y2 = y * y;
    let y4 = y2 * y2;
    let even = (1.0 + 0.5 * y)
        + y2 * (1.0 / 24.0 + y * (1.0 / 720.0))
        + y4 * (1.0 / 40_320.0 + y * (1.0 / 3_628_800.0));
    let odd = (1.0 + y * (1.0 / 6.0))
        + y2 * (1.0 / 120.0 + y * (1.0 / 5_040.0))
        + y4 * (1.0 / 362_880.0 + y * (1.0 / 39_916_800.0));
    (even, odd)
}

/// Discounted payoff `∫₀^T D(t) X₀(t₀+t) dt` per sample (trapezoid), averaged
/// over the antithetic pair when enabled.
///
/// Paths run in batches of [`LANES`] through one interleaved ring buffer. The
/// deflator `ξ(t_k) = D_k e^{-κᵀZ(t_k)}` is carried as a running product of
/// the exact one-step factors `e^{-κᵀΔZ}`.
struct PayoffRun<'a> {
    dynamics: &'a Dynamics,
    physical: bool,
    antithetic: bool,
    seed: u64,
    stream: Stream,
    /// `e^{-ρ t_k}` under Q, `e^{-(ρ + ½‖κ‖²) t_k}` under P, trapezoid
    /// end weights folded in.
    weights: Vec<f64>,
}

impl<'a> PayoffRun<'a> {
    fn new(
        dynamics: &'a Dynamics,
        model: &IncomeModel,
        cfg: &SimConfig,
        stream: Stream,
        delta: f64,
        n: usize,
    ) -> Self {
        let r = model.market().rate();
        let rate = match cfg.measure {
            Measure::RiskNeutral => r + delta,
            Measure::Physical => r + delta + 0.5 * model.market().kappa_norm_sq(),
        };
        let mut weights: Vec<f64> = (0..=n).map(|k| (-rate * k as f64 * dynamics.dt).exp()).collect();
        weights[0] *= 0.5;
        weights[n] *= 0.5;
        Self {
            dynamics,
            physical: cfg.measure == Measure::Physical,
            antithetic: cfg.antithetic,
            seed: cfg.seed,
            stream,
            weights,
        }
    }

    fn per_batch(&self) -> usize {
        if self.antithetic {
            LANES / 2
        } else {
            LANES
        }
    }

    /// Samples `first..first + count` (`count <= per_batch`).
    fn batch(&self, first: usize, count: usize, s: &mut BatchScratch, out: &mut Vec<f64>) {
        let d = self.dynamics;
        let n = self.weights.len() - 1;
        let mut rngs = [PathRng::new(self.seed, self.stream, 0); LANES];
        for (i, rng) in rngs[..count].iter_mut().enumerate() {
            *rng = PathRng::new(self.seed, self.stream, (first + i) as u64);
            rng.at_step(0);
        }
        // fixed-size slices keep the draw loops unrolled; lanes beyond
        // `count` draw throwaway noise and are discarded
        let rngs = if self.antithetic { &mut rngs[..LANES / 2] } else { &mut rngs[..] };
        let zig = Ziggurat::get();
        s.ring.reset(&d.init);
        let mut acc: Lanes = s.ring.newest().map(|x| self.weights[0] * x);
        let mut defl: Lanes = [1.0; LANES];

        for k in 1..=n {
            if k > 1 {
                for rng in rngs.iter_mut() {
                    rng.next_step();
                }
            }
            // dimension outermost: each path still draws its normals in order
            for zi in s.z.iter_mut() {
                if self.antithetic {
                    let rngs: &mut [PathRng; LANES / 2] = rngs.try_into().unwrap();
                    for (slot, rng) in rngs.iter_mut().enumerate() {
                        let g = rng.normal(zig) * d.sqrt_dt;
                        zi[slot] = g;
                        zi[slot + LANES / 2] = -g;
                    }
                } else {
                    let rngs: &mut [PathRng; LANES] = rngs.try_into().unwrap();
                    for (slot, rng) in rngs.iter_mut().enumerate() {
                        zi[slot] = rng.normal(zig) * d.sqrt_dt;
                    }
                }
            }
            let x = s.ring.newest();
            let mut drift: Lanes = x.map(|v| d.a * v);
            d.drift.apply_lanes(&s.ring, &mut drift);
            let mut next: Lanes = std::array::from_fn(|l| x[l] + d.dt * drift[l]);
            for (i, zi) in s.z.iter().enumerate() {
                let mut vol: Lanes = x.map(|v| d.sigma0[i] * v);
                d.vol[i].apply_lanes(&s.ring, &mut vol);
                for l in 0..LANES {
                    next[l] += vol[l] * zi[l];
                }
            }
            s.ring.push(next);

            let w = self.weights[k];
            if self.physical {
                let mut kz = [0.0; LANES];
                for (zi, &ki) in s.z.iter().zip(&d.kappa) {
                    for l in 0..LANES {
                        kz[l] -= ki * zi[l];
                    }
                }
                let factor = if self.antithetic { exp_pairs(&kz) } else { exp_lanes(&kz) };
                for l in 0..LANES {
                    defl[l] *= factor[l];
                    acc[l] += w * defl[l] * next[l];
                }
            } else {
                for l in 0..LANES {
                    acc[l] += w * next[l];
                }
            }
        }

        for slot in 0..count {
            out.push(if self.antithetic {
                0.5 * d.dt * (acc[slot] + acc[slot + LANES / 2])
            } else {
                d.dt * acc[slot]
            });
        }
    }

    fn run(&self, samples: usize) -> (f64, f64) {
        let d = self.dynamics;
        let per = self.per_batch();
        let batches = samples.div_ceil(per);
        let values: Vec<f64> = (0..batches)
            .into_par_iter()
            .map_init(
                || BatchScratch {
                    ring: LaneRing::new(&d.init, d.needs_sums()),
                    z: vec![[0.0; LANES]; d.dim()],
                },
                |s, b| {
                    let first = b * per;
                    let mut out = Vec::with_capacity(per);
                    self.batch(first, per.min(samples - first), s, &mut out);
                    out
                },
            )
            .flatten_iter()
            .collect();
        mean_and_se(&values)
    }
}

struct BatchScratch {
    ring: LaneRing,
    /// Brownian increments of every lane, one array per dimension.
    z: Vec<Lanes>,
}

struct Scratch {
    a: HistoryRing,
    dz: Vec<f64>,
}

impl Scratch {
    fn new(d: &Dynamics) -> Self {
        Self {
            a: HistoryRing::new(&d.init),
            dz: vec![0.0; d.dim()],
        }
    }
}

/// Pilot size used to predict the standard error before choosing `T`.
const PILOT_SAMPLES: usize = 4000;
/// The tail bound must end up below this fraction of the standard error.
const TAIL_TO_SE: f64 = 0.1;
/// Target fraction used when picking `T`, leaving room for pilot noise.
const TAIL_TARGET: f64 = 0.07;

/// Monte Carlo estimate of `ξ(t₀)⁻¹ E[∫_{t₀}^∞ ξ(t) X₀(t) dt | F_{t₀}]`.
pub fn mc_human_capital(model: &IncomeModel, hist: &HistorySegment, cfg: &SimConfig) -> Result<McEstimate, SimError> {
    mc_human_capital_poisson(model, hist, cfg, 0.0)
}

/// As [`mc_human_capital`] with income stopping at an independent exponential
/// time of intensity `delta`. The killing is integrated out exactly: each
/// path is weighted by the survival probability `e^{-δt}`.
pub fn mc_human_capital_poisson(
    model: &IncomeModel,
    hist: &HistorySegment,
    cfg: &SimConfig,
    delta: f64,
) -> Result<McEstimate, SimError> {
    cfg.validate()?;
    let closed = human_capital_poisson(model, hist, delta)?;
    let hist = sim_history(model, hist, cfg.dt)?;
    let dynamics = Dynamics::new(model, &hist, cfg.measure);
    let rho = closed.discount_rate;
    let lambda0 = closed.lambda0;
    let envelope = growth_envelope(&hist, lambda0);
    let samples = cfg.samples();
    let grid = |t: f64| -> Result<usize, SimError> { Ok(steps_for(t, cfg.dt)?) };

    let estimate = |n: usize| {
        let (value, se) = PayoffRun::new(&dynamics, model, cfg, cfg.measure.stream(), delta, n).run(samples);
        let horizon = n as f64 * cfg.dt;
        McEstimate {
            value,
            std_error: se,
            n_paths: cfg.n_paths,
            horizon,
            truncation_tail_bound: tail_bound(envelope, lambda0, rho, horizon),
        }
    };

    if let Some(h) = cfg.horizon {
        return Ok(estimate(grid(h)?));
    }

    // pilot at a horizon that captures all but 0.1% of the value
    let floor = 1e-10 * closed.total.abs().max(f64::MIN_POSITIVE);
    let pilot_n = grid(horizon_for_tail(envelope, lambda0, rho, 1e-3 * closed.total.abs(), cfg.dt))?;
    let pilot_samples = samples.min(PILOT_SAMPLES);
    let (_, pilot_se) = PayoffRun::new(&dynamics, model, cfg, cfg.measure.pilot_stream(), delta, pilot_n)
        .run(pilot_samples);
    let mut se = pilot_se * (pilot_samples as f64 / samples as f64).sqrt();
    let mut last_n = 0;
    let mut est = None;
    for _ in 0..3 {
        let tol = (TAIL_TARGET * se).max(floor);
        let n = grid(horizon_for_tail(envelope, lambda0, rho, tol, cfg.dt))?;
        if n == last_n {
            break;
        }
        let e = estimate(n);
        last_n = n;
        se = e.std_error;
        let done = e.truncation_tail_bound <= (TAIL_TO_SE * e.std_error).max(floor);
        est = Some(e);
        if done {
            break;
        }
    }
    Ok(est.expect("at least one main run"))
}

/// Zero-mean check of the stochastic integral `∫ volᵀ dZ̃` under the
/// risk-neutral measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleCheck {
    pub mean: f64,
    pub std_error: f64,
    /// `mean / std_error`; zero when the integral vanishes identically.
    pub z: f64,
    pub n_paths: usize,
    pub horizon: f64,
}

/// Accumulates `Σ_k vol(t_k)ᵀ ΔZ̃_k` over `[t₀, t₀ + horizon]` on each path
/// and tests its mean against zero. Always simulates under the risk-neutral
/// measure, where `Z̃` is a Brownian motion.
pub fn martingale_check(model: &IncomeModel, hist: &HistorySegment, cfg: &SimConfig) -> Result<MartingaleCheck, SimError> {
    cfg.validate()?;
    let horizon = cfg.horizon.ok_or(SimError::MissingHorizon)?;
    let hist = sim_history(model, hist, cfg.dt)?;
    let n = steps_for(horizon, cfg.dt)?;
    let dynamics = Dynamics::new(model, &hist, Measure::RiskNeutral);
    let paths_per_sample = if cfg.antithetic { 2 } else { 1 };
    let d = &dynamics;

    let values: Vec<f64> = (0..cfg.samples())
        .into_par_iter()
        .map_init(
            || Scratch::new(d),
            |s, i| {
                let rng = PathRng::new(cfg.seed, Stream::Martingale, i as u64);
                let mut total = 0.0;
                for leg in 0..paths_per_sample {
                    let sign = if leg == 0 { 1.0 } else { -1.0 };
                    let mut rng = rng;
                    s.a.reset(&d.init);
                    for k in 0..n {
                        d.draw(&mut rng, k, &mut s.dz);
                        total += d.advance(&mut s.a, &s.dz, sign).1;
                    }
                }
                total / paths_per_sample as f64
            },
        )
        .collect();
    let (mean, std_error) = mean_and_se(&values);
    let z = if std_error > 0.0 { mean / std_error } else { 0.0 };
    Ok(MartingaleCheck {
        mean,
        std_error,
        z,
        n_paths: cfg.n_paths,
        horizon: n as f64 * cfg.dt,
    })
}
