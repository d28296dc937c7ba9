//! Signed measures of bounded variation on a delay window `[-d, 0]`.
//!
//! A [`DelayMeasure`] is a finite list of atoms plus an optional
//! piecewise-constant density on a uniform grid. Both parts are closed under
//! addition and scaling, which is all the income model needs to form the
//! risk-adjusted measure `Φ = φ - Σ κᵢ φᵢ`.
//!
//! General integrals against the density use the midpoint rule on the
//! density grid, with `O(h²)` error in the cell width `h`. Exponentials, which
//! is all the characteristic function and the resolvent need, are integrated
//! exactly cell by cell.

use thiserror::Error;

/// Density grid size used when a configuration does not specify one.
pub const DEFAULT_DENSITY_CELLS: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("delay window must be positive and finite, got {0}")]
    InvalidWindow(f64),
    #[error("atom at {loc} lies outside the window [-{window}, 0]")]
    AtomOutOfWindow { loc: f64, window: f64 },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("delay windows differ: {left} vs {right}")]
    WindowMismatch { left: f64, right: f64 },
    #[error("density grids differ: {left} vs {right} cells")]
    GridMismatch { left: usize, right: usize },
    #[error("expected {expected} risk weights, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// A point mass at `loc ∈ [-d, 0]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub loc: f64,
    pub mass: f64,
}

impl Atom {
    pub fn new(loc: f64, mass: f64) -> Self {
        Self { loc, mass }
    }
}

/// Signed measure on `[-window, 0]`: atoms plus a piecewise-constant density.
///
/// Atoms are kept sorted by location with distinct locations. The density is
/// either empty or holds one value (mass per unit time) per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayMeasure {
    window: f64,
    atoms: Vec<Atom>,
    density: Vec<f64>,
}

pub(crate) fn same_window(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

impl DelayMeasure {
    pub fn new(window: f64, atoms: Vec<Atom>, density: Vec<f64>) -> Result<Self, MeasureError> {
        if !(window.is_finite() && window > 0.0) {
            return Err(MeasureError::InvalidWindow(window));
        }
        for a in &atoms {
            if !a.loc.is_finite() {
                return Err(MeasureError::NonFinite("atom location"));
            }
            if !a.mass.is_finite() {
                return Err(MeasureError::NonFinite("atom mass"));
            }
            if a.loc < -window || a.loc > 0.0 {
                return Err(MeasureError::AtomOutOfWindow { loc: a.loc, window });
            }
        }
        if density.iter().any(|v| !v.is_finite()) {
            return Err(MeasureError::NonFinite("density value"));
        }
        Ok(Self {
            window,
            atoms: merge_atoms(atoms),
            density,
        })
    }

    pub fn zero(window: f64) -> Result<Self, MeasureError> {
        Self::new(window, Vec::new(), Vec::new())
    }

    /// `mass · δ_loc`.
    pub fn dirac(window: f64, loc: f64, mass: f64) -> Result<Self, MeasureError> {
        Self::new(window, vec![Atom::new(loc, mass)], Vec::new())
    }

    /// Constant density `value` on `cells` uniform cells.
    pub fn uniform(window: f64, cells: usize, value: f64) -> Result<Self, MeasureError> {
        Self::new(window, Vec::new(), vec![value; cells])
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn cells(&self) -> usize {
        self.density.len()
    }

    /// Left edge of cell `i`; `edge(cells) == 0` and `edge(0) == -window` exactly.
    fn edge(&self, i: usize) -> f64 {
        let n = self.density.len();
        -(self.window * (n - i) as f64 / n as f64)
    }

    /// Density cells as `(left, right, value)`.
    pub fn density_cells(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.density
            .iter()
            .enumerate()
            .map(move |(i, &v)| (self.edge(i), self.edge(i + 1), v))
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.iter().all(|a| a.mass == 0.0) && self.density.iter().all(|&v| v == 0.0)
    }

    /// True iff every atom mass and every density cell is `>= 0`.
    pub fn is_nonnegative(&self) -> bool {
        self.atoms.iter().all(|a| a.mass >= 0.0) && self.density.iter().all(|&v| v >= 0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.integrate(|_| 1.0)
    }

    pub fn total_variation(&self) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.mass.abs()).sum();
        let dens: f64 = self.density_cells().map(|(lo, hi, v)| v.abs() * (hi - lo)).sum();
        atoms + dens
    }

    /// Mass of the atom sitting exactly at `loc`, or zero.
    pub fn atom_mass_at(&self, loc: f64) -> f64 {
        self.atoms
            .iter()
            .find(|a| a.loc == loc)
            .map_or(0.0, |a| a.mass)
    }

    /// `∫ f(τ) m(dτ)`: exact on atoms, midpoint rule on the density.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let mut acc = 0.0;
        for a in &self.atoms {
            acc += a.mass * f(a.loc);
        }
        for (lo, hi, v) in self.density_cells() {
            acc += v * (hi - lo) * f(0.5 * (lo + hi));
        }
        acc
    }

    /// `∫_{[-d, s]} e^{-rate (s - τ)} m(dτ)`, closed at `s`: an atom located
    /// exactly at `s` is included. Exact, including a density cell cut by `s`.
    pub fn partial_exp_integral(&self, rate: f64, s: f64) -> f64 {
        self.partial_exp(rate, s, true)
    }

    /// Left limit of [`partial_exp_integral`](Self::partial_exp_integral) at
    /// `s`: atoms located exactly at `s` are excluded.
    pub fn partial_exp_integral_open(&self, rate: f64, s: f64) -> f64 {
        self.partial_exp(rate, s, false)
    }

    /// `∫ τ e^{rate τ} m(dτ)`, exact.
    pub fn exp_moment(&self, rate: f64) -> f64 {
        let mut acc = 0.0;
        for a in &self.atoms {
            acc += a.mass * a.loc * (rate * a.loc).exp();
        }
        for (lo, hi, v) in self.density_cells() {
            let h = hi - lo;
            let mid = 0.5 * (lo + hi);
            let x = 0.5 * rate * h;
            acc += v * h * (rate * mid).exp() * (mid * sinhc(x) + 0.5 * h * sinhc_prime(x));
        }
        acc
    }

    fn partial_exp(&self, rate: f64, s: f64, closed: bool) -> f64 {
        debug_assert!(s >= -self.window * (1.0 + 1e-12) && s <= 0.0, "s = {s} outside window");
        let mut acc = 0.0;
        for a in &self.atoms {
            let inside = if closed { a.loc <= s } else { a.loc < s };
            if !inside {
                break;
            }
            acc += a.mass * (-rate * (s - a.loc)).exp();
        }
        for (lo, hi, v) in self.density_cells() {
            if lo >= s {
                break;
            }
            let hi = hi.min(s);
            let h = hi - lo;
            let mid = 0.5 * (lo + hi);
            // ∫_lo^hi e^{-rate(s-τ)} dτ = h e^{-rate(s-mid)} sinh(x)/x, x = rate h/2
            acc += v * h * (-rate * (s - mid)).exp() * sinhc(0.5 * rate * h);
        }
        acc
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            window: self.window,
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom::new(a.loc, c * a.mass))
                .collect(),
            density: self.density.iter().map(|v| c * v).collect(),
        }
    }

    /// Pointwise sum. Both measures must share the window and, when both carry
    /// a density, the density grid.
    pub fn checked_add(&self, other: &Self) -> Result<Self, MeasureError> {
        if !same_window(self.window, other.window) {
            return Err(MeasureError::WindowMismatch {
                left: self.window,
                right: other.window,
            });
        }
        let density = match (self.density.is_empty(), other.density.is_empty()) {
            (true, _) => other.density.clone(),
            (_, true) => self.density.clone(),
            _ if self.density.len() != other.density.len() => {
                return Err(MeasureError::GridMismatch {
                    left: self.density.len(),
                    right: other.density.len(),
                })
            }
            _ => self
                .density
                .iter()
                .zip(&other.density)
                .map(|(a, b)| a + b)
                .collect(),
        };
        let mut atoms = self.atoms.clone();
        atoms.extend_from_slice(&other.atoms);
        Ok(Self {
            window: self.window,
            atoms: merge_atoms(atoms),
            density,
        })
    }
}

fn merge_atoms(mut atoms: Vec<Atom>) -> Vec<Atom> {
    atoms.sort_by(|a, b| a.loc.total_cmp(&b.loc));
    let mut out: Vec<Atom> = Vec::with_capacity(atoms.len());
    for a in atoms {
        // -0.0 and 0.0 are the same location
        match out.last_mut() {
            Some(last) if last.loc == a.loc => last.mass += a.mass,
            _ => out.push(Atom::new(if a.loc == 0.0 { 0.0 } else { a.loc }, a.mass)),
        }
    }
    out
}

/// `sinh(x)/x`.
fn sinhc(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        let x2 = x * x;
        1.0 + x2 / 6.0 * (1.0 + x2 / 20.0)
    } else {
        x.sinh() / x
    }
}

/// Derivative of [`sinhc`].
fn sinhc_prime(x: f64) -> f64 {
    if x.abs() < 0.5 {
        // Σ 2k x^{2k-1}/(2k+1)!, term ratio x²/(2k(2k+3))
        let x2 = x * x;
        let mut acc = 1.0;
        for k in (1..=8).rev() {
            acc = 1.0 + acc * x2 / (2 * k * (2 * k + 3)) as f64;
        }
        x / 3.0 * acc
    } else {
        (x * x.cosh() - x.sinh()) / (x * x)
    }
}

/// Risk-adjusted delay measure `Φ = φ - Σᵢ κᵢ φᵢ`.
pub fn combine_risk_adjusted(
    phi: &DelayMeasure,
    phi_vec: &[DelayMeasure],
    kappa: &[f64],
) -> Result<DelayMeasure, MeasureError> {
    if phi_vec.len() != kappa.len() {
        return Err(MeasureError::LengthMismatch {
            expected: phi_vec.len(),
            got: kappa.len(),
        });
    }
    phi_vec
        .iter()
        .zip(kappa)
        .try_fold(phi.clone(), |acc, (m, &k)| acc.checked_add(&m.scaled(-k)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn integrate_unit_atom_at_left_edge() {
        let m = DelayMeasure::dirac(1.0, -1.0, 1.0).unwrap();
        assert_eq!(m.integrate(|t| t.exp()), (-1.0f64).exp());
    }

    #[test]
    fn integrate_uniform_density_against_exponential() {
        let m = DelayMeasure::uniform(1.0, DEFAULT_DENSITY_CELLS, 1.0).unwrap();
        let exact = 1.0 - (-1.0f64).exp();
        // midpoint rule: |err| <= h² /24 · max|f''| · d
        let h = 1.0 / DEFAULT_DENSITY_CELLS as f64;
        assert!((m.integrate(f64::exp) - exact).abs() <= h * h / 24.0);
    }

    #[test]
    fn integrate_constant_gives_total_mass() {
        let m = DelayMeasure::dirac(1.0, -1.0, 0.02).unwrap();
        assert_eq!(m.integrate(|_| 1.0), 0.02);
        assert_eq!(m.total_mass(), 0.02);
    }

    #[test]
    fn exponential_integrals_are_exact_on_density() {
        let m = DelayMeasure::uniform(1.0, 4, 1.0).unwrap();
        for rate in [-2.0f64, -1e-9, 0.0, 1e-7, 0.03, 1.5] {
            let exact = if rate == 0.0 { 1.0 } else { -(-rate).exp_m1() / rate };
            assert!(close(m.partial_exp_integral(rate, 0.0), exact, 1e-15), "rate {rate}");
            // cut inside the third cell
            let s = -0.4;
            let cut = if rate == 0.0 { 0.6 } else { -(-rate * 0.6).exp_m1() / rate };
            assert!(close(m.partial_exp_integral(rate, s), cut, 1e-15), "rate {rate}");
        }
        // ∫_{-1}^0 τ dτ and ∫_{-1}^0 τ e^τ dτ
        assert!(close(m.exp_moment(0.0), -0.5, 1e-15));
        assert!(close(m.exp_moment(1.0), 2.0 * (-1.0f64).exp() - 1.0, 1e-15));
    }

    #[test]
    fn sinhc_prime_on_both_branches() {
        // mpmath, 40 digits
        for (x, want) in [
            (1e-3, 3.333_333_666_666_678_4e-4),
            (0.1, 3.336_667_857_363_341e-2),
            (0.4999999999999, 0.170_870_708_437_736_25),
            (0.5000000000001, 0.170_870_708_437_808),
            (2.0, 0.974_382_743_580_061),
        ] {
            assert!((sinhc_prime(x) - want).abs() <= 1e-14 * want, "x = {x}");
        }
        assert!(close(sinhc(0.1), 0.1f64.sinh() / 0.1, 1e-16));
    }

    #[test]
    fn partial_single_atom() {
        let (c, r, d) = (0.3, 0.03, 2.0);
        let m = DelayMeasure::dirac(d, -d, c).unwrap();
        for s in [-2.0, -1.5, -0.25, 0.0] {
            assert!(close(m.partial_exp_integral(r, s), c * (-r * (s + d)).exp(), 1e-15));
        }
    }

    #[test]
    fn partial_zero_measure() {
        let m = DelayMeasure::zero(1.0).unwrap();
        assert_eq!(m.partial_exp_integral(0.7, -0.3), 0.0);
    }

    #[test]
    fn partial_uniform_lebesgue_half() {
        let m = DelayMeasure::uniform(1.0, DEFAULT_DENSITY_CELLS, 1.0).unwrap();
        assert!(close(m.partial_exp_integral(0.0, -0.5), 0.5, 1e-14));
        // cut inside a cell
        assert!(close(m.partial_exp_integral(0.0, -0.3001), 0.6999, 1e-13));
    }

    #[test]
    fn atom_at_upper_endpoint_is_included_only_when_closed() {
        let m = DelayMeasure::dirac(1.0, -0.4, 2.0).unwrap();
        assert_eq!(m.partial_exp_integral(0.1, -0.4), 2.0);
        assert_eq!(m.partial_exp_integral_open(0.1, -0.4), 0.0);
    }

    #[test]
    fn combine_example_from_atoms() {
        let phi = DelayMeasure::dirac(1.0, -1.0, 0.05).unwrap();
        let phi1 = DelayMeasure::dirac(1.0, -1.0, 0.15).unwrap();
        let big = combine_risk_adjusted(&phi, &[phi1], &[0.2]).unwrap();
        assert_eq!(big.atoms().len(), 1);
        assert!(close(big.atoms()[0].mass, 0.02, 1e-15));
        assert!(big.is_nonnegative());
    }

    #[test]
    fn combine_with_zero_vol_measures_is_identity() {
        let phi = DelayMeasure::new(
            1.0,
            vec![Atom::new(-0.5, 0.1), Atom::new(-1.0, 0.2)],
            vec![0.3; 8],
        )
        .unwrap();
        let zero = DelayMeasure::zero(1.0).unwrap();
        let big = combine_risk_adjusted(&phi, &[zero.clone(), zero], &[0.4, -1.3]).unwrap();
        assert_eq!(big, phi);
    }

    #[test]
    fn combine_sign_case_is_negative() {
        let phi = DelayMeasure::zero(1.5).unwrap();
        let phi1 = DelayMeasure::dirac(1.5, -1.5, 1.0).unwrap();
        let big = combine_risk_adjusted(&phi, &[phi1], &[1.0]).unwrap();
        assert_eq!(big.atoms(), &[Atom::new(-1.5, -1.0)]);
        assert!(!big.is_nonnegative());
    }

    #[test]
    fn combine_rejects_window_mismatch() {
        let phi = DelayMeasure::zero(1.0).unwrap();
        let phi1 = DelayMeasure::dirac(2.0, -1.0, 1.0).unwrap();
        assert!(matches!(
            combine_risk_adjusted(&phi, &[phi1], &[0.5]),
            Err(MeasureError::WindowMismatch { .. })
        ));
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            DelayMeasure::dirac(1.0, -1.5, 1.0),
            Err(MeasureError::AtomOutOfWindow { .. })
        ));
        assert!(matches!(
            DelayMeasure::dirac(1.0, 0.1, 1.0),
            Err(MeasureError::AtomOutOfWindow { .. })
        ));
        assert!(matches!(DelayMeasure::zero(0.0), Err(MeasureError::InvalidWindow(_))));
        assert!(matches!(
            DelayMeasure::new(1.0, vec![], vec![f64::NAN]),
            Err(MeasureError::NonFinite(_))
        ));
        let a = DelayMeasure::uniform(1.0, 4, 1.0).unwrap();
        let b = DelayMeasure::uniform(1.0, 8, 1.0).unwrap();
        assert!(matches!(a.checked_add(&b), Err(MeasureError::GridMismatch { .. })));
    }

    #[test]
    fn atoms_merge_by_location() {
        let m = DelayMeasure::new(
            1.0,
            vec![Atom::new(-0.5, 1.0), Atom::new(0.0, 2.0), Atom::new(-0.5, -0.25), Atom::new(-0.0, 1.0)],
            vec![],
        )
        .unwrap();
        assert_eq!(m.atoms(), &[Atom::new(-0.5, 0.75), Atom::new(0.0, 3.0)]);
        assert_eq!(m.total_variation(), 3.75);
    }

    fn arb_measure(window: f64, cells: usize) -> impl Strategy<Value = DelayMeasure> {
        (
            prop::collection::vec((0.0..=1.0f64, -2.0..2.0f64), 0..5),
            prop::collection::vec(-1.0..1.0f64, cells),
        )
            .prop_map(move |(atoms, density)| {
                let atoms = atoms
                    .into_iter()
                    .map(|(u, m)| Atom::new(-window * u, m))
                    .collect();
                DelayMeasure::new(window, atoms, density).unwrap()
            })
    }

    fn arb_nonneg_measure(window: f64, cells: usize) -> impl Strategy<Value = DelayMeasure> {
        arb_measure(window, cells).prop_map(|m| {
            let atoms = m.atoms().iter().map(|a| Atom::new(a.loc, a.mass.abs())).collect();
            let dens = m.density().iter().map(|v| v.abs()).collect();
            DelayMeasure::new(m.window(), atoms, dens).unwrap()
        })
    }

    proptest! {
        #[test]
        fn integrate_is_linear_in_measure(
            a in arb_measure(1.5, 16),
            b in arb_measure(1.5, 16),
            c in -3.0..3.0f64,
        ) {
            let f = |t: f64| (0.7 * t).sin() + t * t;
            let lhs = a.checked_add(&b.scaled(c)).unwrap().integrate(f);
            let rhs = a.integrate(f) + c * b.integrate(f);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + a.total_variation() + c.abs() * b.total_variation()));
        }

        #[test]
        fn integrate_is_linear_in_function(m in arb_measure(2.0, 8), c in -3.0..3.0f64) {
            let f = |t: f64| t.exp();
            let g = |t: f64| t.cos();
            let lhs = m.integrate(|t| f(t) + c * g(t));
            let rhs = m.integrate(f) + c * m.integrate(g);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + m.total_variation()));
        }

        #[test]
        fn partial_at_zero_is_close_to_midpoint_integral(m in arb_measure(1.0, 32), rate in -1.0..1.0f64) {
            // midpoint error per cell is h³/24 · rate² e^{|rate|}
            let h = 1.0 / 32.0;
            let tol = m.total_variation() * h * h / 24.0 * rate * rate * rate.abs().exp() + 1e-15;
            prop_assert!((m.partial_exp_integral(rate, 0.0) - m.integrate(|t| (rate * t).exp())).abs() <= tol);
        }

        #[test]
        fn exp_moment_is_rate_derivative(m in arb_measure(1.5, 16), rate in -2.0..2.0f64) {
            let h = 1e-5;
            let fd = (m.partial_exp_integral(rate + h, 0.0) - m.partial_exp_integral(rate - h, 0.0)) / (2.0 * h);
            prop_assert!((fd - m.exp_moment(rate)).abs() <= 1e-8 * (1.0 + m.total_variation()));
        }

        #[test]
        fn partial_monotone_for_nonpositive_rates(
            m in arb_nonneg_measure(1.0, 16),
            rate in -1.0..=0.0f64,
            mut ss in prop::collection::vec(-1.0..=0.0f64, 2..20),
        ) {
            ss.sort_by(f64::total_cmp);
            let vals: Vec<f64> = ss.iter().map(|&s| m.partial_exp_integral(rate, s)).collect();
            for w in vals.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-14);
            }
        }

        #[test]
        fn undiscounted_partial_monotone_for_positive_rates(
            m in arb_nonneg_measure(1.0, 16),
            rate in 0.0..1.0f64,
            mut ss in prop::collection::vec(-1.0..=0.0f64, 2..20),
        ) {
            ss.sort_by(f64::total_cmp);
            let vals: Vec<f64> = ss.iter().map(|&s| (rate * s).exp() * m.partial_exp_integral(rate, s)).collect();
            for w in vals.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-13);
            }
        }

        #[test]
        fn combine_with_zero_kappa_is_exact(phi in arb_measure(1.0, 8), other in arb_measure(1.0, 8)) {
            let big = combine_risk_adjusted(&phi, &[other], &[0.0]).unwrap();
            prop_assert_eq!(big.integrate(|t| t.exp()), phi.integrate(|t| t.exp()));
        }
    }
}
