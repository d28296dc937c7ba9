//! Sampled income trajectories on a delay window, and the ring buffer and lag
//! stencils used to evaluate delay integrals while stepping forward in time.

use crate::measure::DelayMeasure;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HistoryError {
    #[error("history grid step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("history needs at least two samples")]
    TooShort,
    #[error("non-finite history value at node {0}")]
    NonFinite(usize),
    #[error("grid step {dt} does not divide the window {window}")]
    StepDoesNotDivide { dt: f64, window: f64 },
    #[error("history covers {have} but the delay window is {need}")]
    Coverage { have: f64, need: f64 },
}

/// Number of grid steps of size `dt` in `window`, if `dt` divides it.
pub fn steps_in(window: f64, dt: f64) -> Option<usize> {
    if !(dt > 0.0 && window > 0.0) {
        return None;
    }
    let n = (window / dt).round();
    (n >= 1.0 && (n * dt - window).abs() <= 1e-9 * window).then_some(n as usize)
}

/// Income path `X₀(t₀ + s)` on the uniform grid `s_j = -window + j·dt`.
///
/// `values[0]` is the oldest sample and the last value is the current level
/// `X₀(t₀)`. Between nodes the path is read by linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct HistorySegment {
    t0: f64,
    dt: f64,
    values: Vec<f64>,
}

impl HistorySegment {
    pub fn new(t0: f64, dt: f64, values: Vec<f64>) -> Result<Self, HistoryError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(HistoryError::InvalidStep(dt));
        }
        if values.len() < 2 {
            return Err(HistoryError::TooShort);
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(HistoryError::NonFinite(j));
        }
        Ok(Self { t0, dt, values })
    }

    /// Samples `f(s)` at every node `s ∈ [-window, 0]`.
    pub fn from_fn<F: Fn(f64) -> f64>(t0: f64, window: f64, dt: f64, f: F) -> Result<Self, HistoryError> {
        let n = steps_in(window, dt).ok_or(HistoryError::StepDoesNotDivide { dt, window })?;
        let values = (0..=n).map(|j| f(-((n - j) as f64) * dt)).collect();
        Self::new(t0, dt, values)
    }

    pub fn constant(t0: f64, window: f64, dt: f64, level: f64) -> Result<Self, HistoryError> {
        Self::from_fn(t0, window, dt, |_| level)
    }

    /// Past values `x₁` on `[-window, 0)` from `f`, and current level `x0`.
    pub fn from_parts<F: Fn(f64) -> f64>(
        t0: f64,
        window: f64,
        dt: f64,
        past: F,
        x0: f64,
    ) -> Result<Self, HistoryError> {
        let mut h = Self::from_fn(t0, window, dt, past)?;
        *h.values.last_mut().unwrap() = x0;
        Ok(h)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn window(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    pub fn current(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Offset `s_j` of node `j` relative to `t₀`.
    pub fn offset(&self, j: usize) -> f64 {
        -((self.steps() - j) as f64) * self.dt
    }

    /// Linear interpolation at offset `s`, clamped to the covered range.
    pub fn value_at(&self, s: f64) -> f64 {
        let pos = (s + self.window()) / self.dt;
        if pos <= 0.0 {
            return self.values[0];
        }
        let n = self.steps();
        if pos >= n as f64 {
            return self.values[n];
        }
        let j = pos.floor() as usize;
        let theta = pos - j as f64;
        (1.0 - theta) * self.values[j] + theta * self.values[j + 1]
    }

    /// The most recent `window` of this history on the same grid.
    pub fn trailing(&self, window: f64) -> Result<Self, HistoryError> {
        let need = steps_in(window, self.dt).ok_or(HistoryError::StepDoesNotDivide {
            dt: self.dt,
            window,
        })?;
        if need > self.steps() {
            return Err(HistoryError::Coverage {
                have: self.window(),
                need: window,
            });
        }
        Ok(Self {
            t0: self.t0,
            dt: self.dt,
            values: self.values[self.steps() - need..].to_vec(),
        })
    }

    /// Re-samples the linear interpolant on a grid of step `dt`.
    pub fn resample(&self, dt: f64) -> Result<Self, HistoryError> {
        if dt == self.dt {
            return Ok(self.clone());
        }
        let window = self.window();
        Self::from_fn(self.t0, window, dt, |s| self.value_at(s))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            t0: self.t0,
            dt: self.dt,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// Same samples anchored at another time.
    pub fn with_t0(mut self, t0: f64) -> Self {
        self.t0 = t0;
        self
    }
}

/// Fixed-capacity circular buffer over the last `lags + 1` grid values.
///
/// Every value is stored twice, `cap` slots apart, so a read at any lag is a
/// single index computation without a modulo. A parallel ring keeps running
/// sums, so a block of consecutive lags sums in two reads.
#[derive(Debug, Clone)]
pub(crate) struct HistoryRing {
    data: Vec<f64>,
    cum: Vec<f64>,
    cap: usize,
    head: usize,
}

impl HistoryRing {
    /// Loads `values` (oldest first); the last one becomes lag 0.
    pub fn new(values: &[f64]) -> Self {
        let cap = values.len();
        let mut ring = Self {
            data: vec![0.0; 2 * cap],
            cum: vec![0.0; 2 * cap],
            cap,
            head: 0,
        };
        ring.reset(values);
        ring
    }

    pub fn reset(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.cap);
        let mut c = 0.0;
        for (i, &v) in values.iter().enumerate() {
            c += v;
            self.data[i] = v;
            self.data[i + self.cap] = v;
            self.cum[i] = c;
            self.cum[i + self.cap] = c;
        }
        self.head = self.cap - 1;
    }

    /// Sum of lags `first..=last`; needs `last < cap - 1`.
    #[inline]
    pub fn block_sum(&self, first: usize, last: usize) -> f64 {
        self.cum[self.head + self.cap - first] - self.cum[self.head + self.cap - last - 1]
    }

    #[inline]
    pub fn lag(&self, j: usize) -> f64 {
        self.data[self.head + self.cap - j]
    }

    #[inline]
    pub fn newest(&self) -> f64 {
        self.data[self.head + self.cap]
    }

    #[inline]
    pub fn push(&mut self, v: f64) {
        let c = self.cum[self.head + self.cap] + v;
        self.head += 1;
        if self.head == self.cap {
            self.head = 0;
        }
        self.data[self.head] = v;
        self.data[self.head + self.cap] = v;
        self.cum[self.head] = c;
        self.cum[self.head + self.cap] = c;
    }

    /// Oldest-first copy of the buffered window.
    #[cfg(test)]
    pub fn window(&self) -> Vec<f64> {
        (0..self.cap).rev().map(|j| self.lag(j)).collect()
    }
}

/// A delay integral `∫ x(t+τ) m(dτ)` turned into fixed weights on grid lags.
///
/// The path between grid nodes is taken to be linear: atoms read the buffer
/// by linear interpolation between their two neighbouring nodes, and each
/// density cell is integrated exactly against the interpolant. The stencil
/// applied to a linear path therefore gives the exact integral.
///
/// Long stretches of equal weight, as inside a density cell, are stored as
/// blocks and summed through the ring's running sums.
#[derive(Debug, Clone, Default)]
pub(crate) struct LagStencil {
    taps: Vec<(usize, f64)>,
    /// `(first, last, w)`: weight `w` on every lag in `first..=last`.
    blocks: Vec<(usize, usize, f64)>,
}

/// Shortest run of equal weights worth a block.
const MIN_BLOCK: usize = 16;

/// `τ / -dt`, snapped to the nearest node when within rounding of it.
fn lag_position(loc: f64, dt: f64) -> f64 {
    let pos = -loc / dt;
    let nearest = pos.round();
    if (pos - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        pos
    }
}

impl LagStencil {
    pub fn has_blocks(&self) -> bool {
        !self.blocks.is_empty()
    }

    pub fn new(measure: &DelayMeasure, dt: f64, max_lag: usize) -> Self {
        let mut dense = vec![0.0; max_lag + 2];
        for a in measure.atoms() {
            if a.mass == 0.0 {
                continue;
            }
            let pos = lag_position(a.loc, dt);
            let j = (pos.floor() as usize).min(max_lag);
            let theta = (pos - j as f64).clamp(0.0, 1.0);
            dense[j] += (1.0 - theta) * a.mass;
            dense[j + 1] += theta * a.mass;
        }
        for (lo, hi, v) in measure.density_cells() {
            if v == 0.0 {
                continue;
            }
            // in lag units the cell is [a, b]; hat functions on unit intervals
            let (a, b) = (lag_position(hi, dt), lag_position(lo, dt).min(max_lag as f64));
            let mut k = a.floor() as usize;
            while (k as f64) < b {
                let u = a.max(k as f64);
                let w = b.min(k as f64 + 1.0);
                if w > u {
                    let c = 0.5 * (u + w) - k as f64;
                    dense[k] += v * dt * (w - u) * (1.0 - c);
                    dense[k + 1] += v * dt * (w - u) * c;
                }
                k += 1;
            }
        }
        // mass past the oldest lag can only come from rounding at the window edge
        let spill = dense.pop().unwrap_or(0.0);
        dense[max_lag] += spill;

        let mut out = Self::default();
        let mut j = 0;
        while j <= max_lag {
            let w = dense[j];
            if w == 0.0 {
                j += 1;
                continue;
            }
            // a block never reaches the oldest lag, whose running sum has no predecessor
            let mut end = j;
            while end + 1 < max_lag && dense[end + 1] == w {
                end += 1;
            }
            if end + 1 - j >= MIN_BLOCK {
                out.blocks.push((j, end, w));
                j = end + 1;
            } else {
                out.taps.push((j, w));
                j += 1;
            }
        }
        out
    }

    #[inline]
    pub fn apply(&self, ring: &HistoryRing) -> f64 {
        let taps: f64 = self.taps.iter().map(|&(j, w)| w * ring.lag(j)).sum();
        self.blocks
            .iter()
            .fold(taps, |acc, &(a, b, w)| acc + w * ring.block_sum(a, b))
    }

    /// Adds the stencil applied to every lane of `ring` into `out`.
    #[inline(always)]
    pub fn apply_lanes(&self, ring: &LaneRing, out: &mut Lanes) {
        for &(j, w) in &self.taps {
            let v = ring.lag(j);
            for l in 0..LANES {
                out[l] += w * v[l];
            }
        }
        debug_assert!(self.blocks.is_empty() || ring.has_sums());
        for &(a, b, w) in &self.blocks {
            let (hi, lo) = (ring.cum_lag(a), ring.cum_lag(b + 1));
            for l in 0..LANES {
                out[l] += w * (hi[l] - lo[l]);
            }
        }
    }
}

/// Number of paths advanced together by the batched Monte Carlo kernel.
pub(crate) const LANES: usize = 8;
pub(crate) type Lanes = [f64; LANES];

/// [`HistoryRing`] holding `LANES` paths side by side.
#[derive(Debug, Clone)]
pub(crate) struct LaneRing {
    data: Vec<Lanes>,
    cum: Vec<Lanes>,
    cap: usize,
    head: usize,
}

impl LaneRing {
    /// Every lane starts from the same history. Running sums are kept only
    /// `with_sums`, as needed by stencils with blocks.
    pub fn new(values: &[f64], with_sums: bool) -> Self {
        let cap = values.len();
        let mut ring = Self {
            data: vec![[0.0; LANES]; 2 * cap],
            cum: if with_sums { vec![[0.0; LANES]; 2 * cap] } else { Vec::new() },
            cap,
            head: 0,
        };
        ring.reset(values);
        ring
    }

    pub fn reset(&mut self, values: &[f64]) {
        let mut c = 0.0;
        for (i, &v) in values.iter().enumerate() {
            self.data[i] = [v; LANES];
            self.data[i + self.cap] = [v; LANES];
            if !self.cum.is_empty() {
                c += v;
                self.cum[i] = [c; LANES];
                self.cum[i + self.cap] = [c; LANES];
            }
        }
        self.head = self.cap - 1;
    }

    pub fn has_sums(&self) -> bool {
        !self.cum.is_empty()
    }

    /// Running sums at lag `j`.
    #[inline]
    pub fn cum_lag(&self, j: usize) -> &Lanes {
        &self.cum[self.head + self.cap - j]
    }

    #[inline]
    pub fn lag(&self, j: usize) -> &Lanes {
        &self.data[self.head + self.cap - j]
    }

    #[inline]
    pub fn newest(&self) -> Lanes {
        self.data[self.head + self.cap]
    }

    #[inline]
    pub fn push(&mut self, v: Lanes) {
        let last = self.head + self.cap;
        self.head += 1;
        if self.head == self.cap {
            self.head = 0;
        }
        self.data[self.head] = v;
        self.data[self.head + self.cap] = v;
        if !self.cum.is_empty() {
            let prev = self.cum[last];
            let c: Lanes = std::array::from_fn(|l| prev[l] + v[l]);
            self.cum[self.head] = c;
            self.cum[self.head + self.cap] = c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::Atom;

    #[test]
    fn grid_divisibility() {
        assert_eq!(steps_in(1.0, 0.01), Some(100));
        assert_eq!(steps_in(1.0, 1e-3), Some(1000));
        assert_eq!(steps_in(1.0, 0.3), None);
        assert_eq!(steps_in(0.5, 1.0), None);
    }

    #[test]
    fn segment_layout() {
        let h = HistorySegment::from_parts(2.0, 1.0, 0.25, |s| -s, 7.0).unwrap();
        assert_eq!(h.values(), &[1.0, 0.75, 0.5, 0.25, 7.0]);
        assert_eq!(h.window(), 1.0);
        assert_eq!(h.current(), 7.0);
        assert_eq!(h.offset(1), -0.75);
        assert!((h.value_at(-0.875) - 0.875).abs() < 1e-15);
        assert_eq!(h.value_at(-2.0), 1.0);
    }

    #[test]
    fn trailing_and_coverage() {
        let h = HistorySegment::from_fn(0.0, 2.0, 0.5, |s| s).unwrap();
        let t = h.trailing(1.0).unwrap();
        assert_eq!(t.values(), &[-1.0, -0.5, 0.0]);
        assert!(matches!(h.trailing(3.0), Err(HistoryError::Coverage { .. })));
        assert!(matches!(h.trailing(0.7), Err(HistoryError::StepDoesNotDivide { .. })));
    }

    #[test]
    fn resample_is_exact_on_linear_paths() {
        let h = HistorySegment::from_fn(0.0, 1.0, 0.1, |s| 2.0 + 3.0 * s).unwrap();
        let r = h.resample(0.025).unwrap();
        assert_eq!(r.steps(), 40);
        for j in 0..=40 {
            assert!((r.values()[j] - (2.0 + 3.0 * r.offset(j))).abs() < 1e-13);
        }
    }

    #[test]
    fn ring_reads_lags_across_wraparound() {
        let mut ring = HistoryRing::new(&[1.0, 2.0, 3.0]);
        assert_eq!((ring.lag(0), ring.lag(1), ring.lag(2)), (3.0, 2.0, 1.0));
        for v in 4..20 {
            ring.push(v as f64);
            assert_eq!(ring.newest(), v as f64);
            assert_eq!(ring.lag(1), (v - 1) as f64);
            assert_eq!(ring.lag(2), (v - 2) as f64);
        }
        assert_eq!(ring.window(), vec![17.0, 18.0, 19.0]);
    }

    #[test]
    fn lane_ring_matches_scalar_ring() {
        let init = [0.5, 1.5, 2.5, 3.5];
        let mut scalar = HistoryRing::new(&init);
        let mut lanes = LaneRing::new(&init, true);
        let m = DelayMeasure::new(1.0, vec![Atom::new(-0.6, 0.4)], vec![0.2; 3]).unwrap();
        let st = LagStencil::new(&m, 1.0 / 3.0, 3);
        for v in 0..10 {
            let mut out = [0.0; LANES];
            st.apply_lanes(&lanes, &mut out);
            assert!(out.iter().all(|&o| o == st.apply(&scalar)));
            scalar.push(v as f64);
            lanes.push([v as f64; LANES]);
            assert_eq!(lanes.newest()[3], scalar.newest());
        }
    }

    #[test]
    fn blocks_match_tap_by_tap_sum() {
        let m = DelayMeasure::new(1.0, vec![Atom::new(-0.305, 0.3)], vec![0.4, -0.1, 0.25, 0.7]).unwrap();
        let (dt, n) = (0.01, 100);
        let st = LagStencil::new(&m, dt, n);
        assert_eq!(st.blocks.len(), 4);
        let mut dense = vec![0.0; n + 1];
        for &(j, w) in &st.taps {
            dense[j] += w;
        }
        for &(a, b, w) in &st.blocks {
            dense[a..=b].iter_mut().for_each(|d| *d += w);
        }
        let init: Vec<f64> = (0..=n).map(|k| (0.37 * k as f64).sin() + 2.0).collect();
        let mut scalar = HistoryRing::new(&init);
        let mut lanes = LaneRing::new(&init, true);
        for k in 0..450 {
            let direct: f64 = (0..=n).map(|j| dense[j] * scalar.lag(j)).sum();
            let got = st.apply(&scalar);
            assert!((got - direct).abs() < 1e-12, "step {k}: {got} vs {direct}");
            let mut out = [0.0; LANES];
            st.apply_lanes(&lanes, &mut out);
            assert!(out.iter().all(|&o| o == got));
            let v = 1.0 + (1.3 * k as f64).cos();
            scalar.push(v);
            lanes.push([v; LANES]);
        }
    }

    #[test]
    fn stencil_integrates_density_exactly_on_linear_paths() {
        // cells of width 0.3 do not line up with the 0.07 grid
        let d = 2.1;
        let dt = 0.07;
        let m = DelayMeasure::new(d, vec![], vec![0.4, -0.1, 0.9, 0.2, 0.0, 0.3, 0.5]).unwrap();
        let n = steps_in(d, dt).unwrap();
        let stencil = LagStencil::new(&m, dt, n);
        let path = |s: f64| 0.7 + 1.3 * s;
        let vals: Vec<f64> = (0..=n).map(|j| path(-d + j as f64 * dt)).collect();
        let ring = HistoryRing::new(&vals);
        let exact: f64 = m
            .density_cells()
            .map(|(lo, hi, v)| v * (hi - lo) * path(0.5 * (lo + hi)))
            .sum();
        assert!((stencil.apply(&ring) - exact).abs() < 1e-13);
        // constant path: weights sum to the total mass
        let ones = HistoryRing::new(&vec![1.0; n + 1]);
        assert!((stencil.apply(&ones) - m.total_mass()).abs() < 1e-14);
    }

    #[test]
    fn stencil_reproduces_integrate_on_linear_paths() {
        let d = 1.0;
        let dt = 0.01;
        let m = DelayMeasure::new(
            d,
            vec![Atom::new(-1.0, 0.3), Atom::new(-0.333, -0.2), Atom::new(0.0, 0.1)],
            vec![0.5; 7],
        )
        .unwrap();
        let n = steps_in(d, dt).unwrap();
        let stencil = LagStencil::new(&m, dt, n);
        let path = |s: f64| 1.5 - 2.0 * s;
        let vals: Vec<f64> = (0..=n).map(|j| path(-d + j as f64 * dt)).collect();
        let ring = HistoryRing::new(&vals);
        let expect = m.integrate(path);
        assert!((stencil.apply(&ring) - expect).abs() < 1e-13);
    }
}
