//! Run configuration: JSON schema, loading and conversion to model types.
//!
//! Parsing and validation errors carry a JSON pointer to the offending field.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::history::HistorySegment;
use crate::market::MarketParams;
use crate::measure::{Atom, DelayMeasure, DEFAULT_DENSITY_CELLS};
use crate::model::{IncomeModel, IncomeParams, ModelError};
use crate::simulation::Measure;

pub const SCHEMA_VERSION: u32 = 1;

/// A config that failed to parse or validate. `pointer` is a JSON pointer
/// (`""` for the document root).
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub pointer: String,
    pub message: String,
}

impl SchemaError {
    fn at(pointer: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            pointer: pointer.into(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "schema error at {at}: {}", self.message)
    }
}

impl std::error::Error for SchemaError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub market: MarketSpec,
    pub income: IncomeSpec,
    pub history: HistorySpec,
    #[serde(default)]
    pub options: Options,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub r: f64,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncomeSpec {
    pub mu0: f64,
    pub sigma0: Vec<f64>,
    pub d: f64,
    #[serde(default)]
    pub phi: MeasureSpec,
    /// One measure per Brownian component; omitted means all zero.
    #[serde(default)]
    pub phi_vec: Option<Vec<MeasureSpec>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    #[serde(default)]
    pub atoms: Vec<AtomSpec>,
    #[serde(default)]
    pub density: Option<DensitySpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub loc: f64,
    pub mass: f64,
}

/// Either `values` (one per cell) or a constant `value` on `cells` cells.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    #[serde(default)]
    pub cells: Option<usize>,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub value: Option<f64>,
}

/// Income on `[t0 - d, t0]`, given on a uniform grid of step `dt`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistorySpec {
    #[serde(default)]
    pub t0: f64,
    /// Grid step. Required for `values` and `constant`; inferred from `csv`.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Oldest first, ending at `t0`.
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub constant: Option<f64>,
    /// Two columns `t,x` with a header row; relative to the config file.
    #[serde(default)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub delta: Option<f64>,
    pub measure: Option<MeasureName>,
    pub antithetic: Option<bool>,
    pub lambda: Option<Vec<f64>>,
    pub lambda_grid: Option<LambdaGrid>,
    pub dump_paths: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureName {
    Physical,
    RiskNeutral,
}

impl From<MeasureName> for Measure {
    fn from(m: MeasureName) -> Self {
        match m {
            MeasureName::Physical => Measure::Physical,
            MeasureName::RiskNeutral => Measure::RiskNeutral,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaGrid {
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

impl LambdaGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.from];
        }
        let h = (self.to - self.from) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.from + i as f64 * h).collect()
    }
}

/// Market, model and history built from a validated config.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub market: MarketParams,
    pub model: IncomeModel,
    pub history: HistorySegment,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = json_pointer(e.path());
            SchemaError::at(pointer, e.inner())
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(SchemaError::at(
                "/schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", cfg.schema_version),
            ));
        }
        Ok(cfg)
    }

    /// Validates the config and builds the model objects. `base` resolves a
    /// relative history CSV path.
    pub fn build(self, base: &Path) -> Result<Loaded, SchemaError> {
        let m = &self.market;
        let market = MarketParams::new(m.r, m.mu.clone(), m.sigma.clone()).map_err(|e| SchemaError::at("/market", e))?;

        let inc = &self.income;
        let phi = inc.phi.build(inc.d, "/income/phi")?;
        let phi_vec = match &inc.phi_vec {
            Some(v) => v
                .iter()
                .enumerate()
                .map(|(i, s)| s.build(inc.d, &format!("/income/phi_vec/{i}")))
                .collect::<Result<Vec<_>, _>>()?,
            None => (0..market.n_assets())
                .map(|_| DelayMeasure::zero(inc.d).map_err(|e| SchemaError::at("/income/d", e)))
                .collect::<Result<Vec<_>, _>>()?,
        };
        let params = IncomeParams {
            mu0: inc.mu0,
            sigma0: inc.sigma0.clone(),
            phi,
            phi_vec,
        };
        let model = IncomeModel::new(params, &market).map_err(|e| {
            let pointer = match &e {
                ModelError::InvalidDrift(_) => "/income/mu0",
                ModelError::NonFiniteLoading => "/income/sigma0",
                ModelError::AssetCount { what: "phi_vec", .. } => "/income/phi_vec",
                ModelError::AssetCount { .. } => "/income/sigma0",
                _ => "/income",
            };
            SchemaError::at(pointer, e)
        })?;

        let history = self.history.build(base, inc.d)?;
        self.check_options()?;
        Ok(Loaded {
            config: self,
            market,
            model,
            history,
        })
    }

    fn check_options(&self) -> Result<(), SchemaError> {
        let o = &self.options;
        let positive = |v: Option<f64>, name: &str| match v {
            Some(x) if !(x.is_finite() && x > 0.0) => {
                Err(SchemaError::at(format!("/options/{name}"), "must be positive and finite"))
            }
            _ => Ok(()),
        };
        positive(o.dt, "dt")?;
        positive(o.horizon, "horizon")?;
        if let Some(x) = o.delta {
            if !(x.is_finite() && x >= 0.0) {
                return Err(SchemaError::at("/options/delta", "must be finite and non-negative"));
            }
        }
        if let Some(g) = o.lambda_grid {
            if g.points == 0 || !g.from.is_finite() || !g.to.is_finite() {
                return Err(SchemaError::at("/options/lambda_grid", "needs finite bounds and points >= 1"));
            }
        }
        if let Some(l) = &o.lambda {
            if let Some(i) = l.iter().position(|x| !x.is_finite()) {
                return Err(SchemaError::at(format!("/options/lambda/{i}"), "must be finite"));
            }
        }
        Ok(())
    }
}

impl MeasureSpec {
    fn build(&self, window: f64, pointer: &str) -> Result<DelayMeasure, SchemaError> {
        let atoms = self.atoms.iter().map(|a| Atom::new(a.loc, a.mass)).collect();
        let density = match &self.density {
            None => Vec::new(),
            Some(d) => d.values(&format!("{pointer}/density"))?,
        };
        DelayMeasure::new(window, atoms, density).map_err(|e| SchemaError::at(pointer, e))
    }
}

impl DensitySpec {
    fn values(&self, pointer: &str) -> Result<Vec<f64>, SchemaError> {
        match (&self.values, self.value) {
            (Some(v), None) => {
                if let Some(c) = self.cells {
                    if c != v.len() {
                        return Err(SchemaError::at(
                            format!("{pointer}/values"),
                            format!("has {} entries but cells = {c}", v.len()),
                        ));
                    }
                }
                if v.is_empty() {
                    return Err(SchemaError::at(format!("{pointer}/values"), "must not be empty"));
                }
                Ok(v.clone())
            }
            (None, Some(c)) => {
                let n = self.cells.unwrap_or(DEFAULT_DENSITY_CELLS);
                if n == 0 {
                    return Err(SchemaError::at(format!("{pointer}/cells"), "must be at least 1"));
                }
                Ok(vec![c; n])
            }
            _ => Err(SchemaError::at(pointer, "give exactly one of `values` or `value`")),
        }
    }
}

impl HistorySpec {
    fn build(&self, base: &Path, window: f64) -> Result<HistorySegment, SchemaError> {
        let given = [self.values.is_some(), self.constant.is_some(), self.csv.is_some()];
        if given.iter().filter(|&&g| g).count() != 1 {
            return Err(SchemaError::at("/history", "give exactly one of `values`, `constant` or `csv`"));
        }
        let need_dt = || self.dt.ok_or_else(|| SchemaError::at("/history/dt", "missing grid step"));
        let hist = if let Some(v) = &self.values {
            HistorySegment::new(self.t0, need_dt()?, v.clone())
        } else if let Some(c) = self.constant {
            HistorySegment::constant(self.t0, window, need_dt()?, c)
        } else {
            let path = base.join(self.csv.as_ref().expect("checked above"));
            let (t0, dt, values) = read_history_csv(&path)?;
            if let Some(step) = self.dt {
                if (step - dt).abs() > 1e-9 * dt {
                    return Err(SchemaError::at("/history/dt", format!("CSV grid step is {dt}")));
                }
            }
            HistorySegment::new(t0, dt, values)
        };
        let hist = hist.map_err(|e| SchemaError::at("/history", e))?;
        hist.trailing(window).map_err(|e| SchemaError::at("/history", e))?;
        Ok(hist)
    }
}

/// Reads `t,x` rows. Returns the last time, the grid step and the values.
fn read_history_csv(path: &Path) -> Result<(f64, f64, Vec<f64>), SchemaError> {
    let ptr = "/history/csv";
    let mut rdr = csv::Reader::from_path(path).map_err(|e| SchemaError::at(ptr, format!("{}: {e}", path.display())))?;
    let mut ts = Vec::new();
    let mut xs = Vec::new();
    for (i, row) in rdr.deserialize::<(f64, f64)>().enumerate() {
        let (t, x) = row.map_err(|e| SchemaError::at(ptr, format!("row {}: {e}", i + 1)))?;
        ts.push(t);
        xs.push(x);
    }
    if ts.len() < 2 {
        return Err(SchemaError::at(ptr, "needs at least two rows"));
    }
    let n = ts.len() - 1;
    let dt = (ts[n] - ts[0]) / n as f64;
    let uniform = ts
        .iter()
        .enumerate()
        .all(|(i, &t)| (t - (ts[0] + i as f64 * dt)).abs() <= 1e-9 * dt.abs().max(1.0));
    if !(dt > 0.0) || !uniform {
        return Err(SchemaError::at(ptr, "times must be increasing on a uniform grid"));
    }
    Ok((ts[n], dt, xs))
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    out
}
