//! Counter-based random numbers keyed by `(seed, stream, path, step)`.
//!
//! Every draw is a pure function of its coordinates, so results do not depend
//! on how paths are scheduled across threads. The mixing function is the
//! SplitMix64 finaliser. Normals come from a 256-layer ziggurat.

use std::sync::LazyLock;

use rand::rand_core::{impls, RngCore};

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
pub(crate) fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent streams used by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub(crate) enum Stream {
    RiskNeutral = 1,
    Physical = 2,
    PilotRiskNeutral = 3,
    PilotPhysical = 4,
    Martingale = 5,
}

/// Bits reserved for the draw counter within a step.
const CTR_BITS: u32 = 20;
const STEP_STRIDE: u64 = (1u64 << CTR_BITS).wrapping_mul(GAMMA);

/// Generator for one path. Call [`PathRng::at_step`] before drawing the
/// normals of a time step.
///
/// Draw `c` of step `k` is `mix(path_key + (k·2²⁰ + c)·γ)`. Since `γ` is odd
/// the map from `(k, c)` to the mixer input is injective.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PathRng {
    path_key: u64,
    step_base: u64,
    ctr: u64,
}

impl PathRng {
    pub fn new(seed: u64, stream: Stream, path: u64) -> Self {
        let s = mix(seed.wrapping_add(GAMMA.wrapping_mul(stream as u64)));
        let path_key = mix(s ^ mix(path.wrapping_mul(GAMMA).wrapping_add(0x632b_e59b_d9b4_e019)));
        Self {
            path_key,
            step_base: path_key,
            ctr: 0,
        }
    }

    #[inline]
    pub fn at_step(&mut self, step: u64) {
        self.step_base = self.path_key.wrapping_add((step << CTR_BITS).wrapping_mul(GAMMA));
        self.ctr = 0;
    }

    /// Same as `at_step(k + 1)` after `at_step(k)`.
    #[inline]
    pub fn next_step(&mut self) {
        self.step_base = self.step_base.wrapping_add(STEP_STRIDE);
        self.ctr = 0;
    }

    /// Standard normal draw by the Marsaglia-Tsang ziggurat. Usually consumes
    /// one `u64`.
    #[inline(always)]
    pub fn normal(&mut self, zig: &Ziggurat) -> f64 {
        loop {
            let bits = self.next_u64();
            let i = (bits & 0xff) as usize;
            let u = signed_unit(bits);
            let x = u * zig.x[i];
            if x.abs() < zig.x[i + 1] {
                return x;
            }
            if let Some(x) = self.normal_cold(zig, i, u, x) {
                return x;
            }
        }
    }

    #[cold]
    fn normal_cold(&mut self, zig: &Ziggurat, i: usize, u: f64, x: f64) -> Option<f64> {
        if i == 0 {
            let t = loop {
                let t = open_unit(self.next_u64()).ln() / ZIG_R;
                let y = open_unit(self.next_u64()).ln();
                if -2.0 * y >= t * t {
                    break t;
                }
            };
            return Some(if u < 0.0 { t - ZIG_R } else { ZIG_R - t });
        }
        let v = zig.f[i + 1] + (zig.f[i] - zig.f[i + 1]) * open_unit(self.next_u64());
        (v < (-0.5 * x * x).exp()).then_some(x)
    }
}

const ZIG_R: f64 = 3.654_152_885_361_009;
/// Common layer area, `R·f(R)` plus the tail mass beyond `R`.
const ZIG_V: f64 = 4.928673233974658e-3;

/// Layer edges `x` and densities `f = exp(-x²/2)` of the normal ziggurat.
#[derive(Debug)]
pub(crate) struct Ziggurat {
    x: [f64; 257],
    f: [f64; 257],
}

static ZIGGURAT: LazyLock<Ziggurat> = LazyLock::new(|| {
    let pdf = |x: f64| (-0.5 * x * x).exp();
    let v = ZIG_V;
    let mut x = [0.0; 257];
    x[0] = v / pdf(ZIG_R);
    x[1] = ZIG_R;
    for i in 1..255 {
        x[i + 1] = (-2.0 * (v / x[i] + pdf(x[i])).ln()).sqrt();
    }
    Ziggurat { x, f: x.map(pdf) }
});

impl Ziggurat {
    pub fn get() -> &'static Ziggurat {
        &ZIGGURAT
    }
}

/// Uniform on [-1, 1) from the top 52 bits.
#[inline(always)]
fn signed_unit(bits: u64) -> f64 {
    f64::from_bits(0x4000_0000_0000_0000 | (bits >> 12)) - 3.0
}

/// Uniform on (0, 1) from the top 52 bits.
#[inline]
fn open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * f64::EPSILON
}

impl RngCore for PathRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.ctr += 1;
        mix(self.step_base.wrapping_add(self.ctr.wrapping_mul(GAMMA)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}
