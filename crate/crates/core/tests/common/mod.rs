#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use sfde_pricing::history::HistorySegment;
use sfde_pricing::market::MarketParams;
use sfde_pricing::measure::{Atom, DelayMeasure};
use sfde_pricing::model::{IncomeModel, IncomeParams};

pub const DENSITY_CELLS: usize = 32;

/// r = 0.03, μ = 0.07, σ = 0.2, so κ = 0.2.
pub fn market() -> MarketParams {
    MarketParams::single_asset(0.03, 0.07, 0.2).unwrap()
}

/// μ₀ = 0.01, σ₀ = 0.1, Φ = 0.02 δ₋₁ on the market above.
pub fn single_atom_model() -> IncomeModel {
    let params = IncomeParams {
        mu0: 0.01,
        sigma0: vec![0.1],
        phi: DelayMeasure::dirac(1.0, -1.0, 0.02).unwrap(),
        phi_vec: vec![DelayMeasure::zero(1.0).unwrap()],
    };
    IncomeModel::new(params, &market()).unwrap()
}

pub fn flat_history(dt: f64) -> HistorySegment {
    HistorySegment::constant(0.0, 1.0, dt, 1.0).unwrap()
}

/// A random model together with the smooth history it is priced on.
#[derive(Debug, Clone)]
pub struct Case {
    pub model: IncomeModel,
    pub history: Box<dyn HistoryFn>,
}

pub trait HistoryFn: std::fmt::Debug {
    fn at(&self, s: f64) -> f64;
    fn boxed(&self) -> Box<dyn HistoryFn>;
}

impl Clone for Box<dyn HistoryFn> {
    fn clone(&self) -> Self {
        self.boxed()
    }
}

/// `level + amp·sin(freq·s + phase)`.
#[derive(Debug, Clone, Copy)]
pub struct Wave {
    pub level: f64,
    pub amp: f64,
    pub freq: f64,
    pub phase: f64,
}

impl HistoryFn for Wave {
    fn at(&self, s: f64) -> f64 {
        self.level + self.amp * (self.freq * s + self.phase).sin()
    }

    fn boxed(&self) -> Box<dyn HistoryFn> {
        Box::new(*self)
    }
}

impl Case {
    pub fn window(&self) -> f64 {
        self.model.window()
    }

    /// History sampled on `[-d, 0]` with step `dt`.
    pub fn sampled(&self, dt: f64) -> HistorySegment {
        let h = self.history.clone();
        HistorySegment::from_fn(0.0, self.window(), dt, move |s| h.at(s)).unwrap()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CaseOptions {
    /// Keep only models with `r - λ₀` at least this large (the gate then
    /// holds). `None` accepts any model with `Φ ≥ 0`.
    pub min_rate_gap: Option<f64>,
    pub max_assets: usize,
}

impl Default for CaseOptions {
    fn default() -> Self {
        Self {
            min_rate_gap: Some(0.02),
            max_assets: 2,
        }
    }
}

/// Random model with `Φ ≥ 0`, signed `φᵢ` and a positive history. Windows
/// are 0.5, 1 or 2 years so that common grid steps divide them.
pub fn random_case(seed: u64, opts: CaseOptions) -> Case {
    let mut rng = StdRng::seed_from_u64(seed);
    loop {
        if let Some(case) = try_case(&mut rng, opts) {
            return case;
        }
    }
}

fn try_case(rng: &mut StdRng, opts: CaseOptions) -> Option<Case> {
    let n = rng.random_range(1..=opts.max_assets);
    let r = rng.random_range(0.02..0.07);
    let mu: Vec<f64> = (0..n).map(|_| r + rng.random_range(-0.02..0.08)).collect();
    let sigma: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| match i.cmp(&j) {
                    std::cmp::Ordering::Equal => rng.random_range(0.1..0.35),
                    std::cmp::Ordering::Greater => rng.random_range(-0.05..0.05),
                    std::cmp::Ordering::Less => 0.0,
                })
                .collect()
        })
        .collect();
    let market = MarketParams::new(r, mu, sigma).ok()?;
    let kappa = market.market_price_of_risk().to_vec();

    let d = [0.5, 1.0, 2.0][rng.random_range(0..3)];
    let mut target_atoms = Vec::new();
    for _ in 0..rng.random_range(0..=2) {
        target_atoms.push(Atom::new(random_loc(rng, d), rng.random_range(0.001..0.03)));
    }
    let target_density = if rng.random_bool(0.5) {
        (0..DENSITY_CELLS).map(|_| rng.random_range(0.001..0.02) / d).collect()
    } else {
        Vec::new()
    };
    let target = DelayMeasure::new(d, target_atoms, target_density).ok()?;

    let phi_vec: Vec<DelayMeasure> = (0..n)
        .map(|_| {
            let atoms = if rng.random_bool(0.5) {
                vec![Atom::new(random_loc(rng, d), rng.random_range(-0.02..0.02))]
            } else {
                Vec::new()
            };
            DelayMeasure::new(d, atoms, Vec::new()).unwrap()
        })
        .collect();
    // φ = Φ + Σ κᵢ φᵢ, so the model recovers Φ
    let phi = phi_vec
        .iter()
        .zip(&kappa)
        .try_fold(target, |acc, (m, &k)| acc.checked_add(&m.scaled(k)))
        .ok()?;

    let params = IncomeParams {
        mu0: rng.random_range(0.0..0.03),
        sigma0: (0..n).map(|_| rng.random_range(-0.2..0.2)).collect(),
        phi,
        phi_vec,
    };
    let model = IncomeModel::new(params, &market).ok()?;
    if !model.risk_adjusted_measure().is_nonnegative() {
        return None;
    }
    if let Some(gap) = opts.min_rate_gap {
        let lambda0 = model.spectral_bound().ok()?;
        if r - lambda0 < gap {
            return None;
        }
    }
    let history = Wave {
        level: 1.0,
        amp: rng.random_range(0.0..0.5),
        freq: rng.random_range(0.5..6.0),
        phase: rng.random_range(0.0..std::f64::consts::TAU),
    };
    Some(Case {
        model,
        history: Box::new(history),
    })
}

/// Half the atoms sit on the window edge or on a coarse grid node.
fn random_loc(rng: &mut StdRng, d: f64) -> f64 {
    match rng.random_range(0..4) {
        0 => -d,
        1 => -0.5 * d,
        _ => -rng.random_range(0.0..d),
    }
}
