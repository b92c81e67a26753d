//! Counter-based Gaussian generator.
//!
//! Philox4x32-10 keyed by the seed; the counter encodes `(step, pair, stream)`
//! so any increment can be regenerated without replaying a sequence.

use crate::math::{cos, ln, sin, sqrt, PI};

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with ten rounds.
pub fn philox4x32_10(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = ctr;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(W0);
            k[1] = k[1].wrapping_add(W1);
        }
        let (hi0, lo0) = mulhilo(M0, c[0]);
        let (hi1, lo1) = mulhilo(M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CounterRng {
    pub seed: u64,
    pub stream: u32,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u32) -> Self {
        CounterRng { seed, stream }
    }

    fn block(&self, step: u64, pair: u32) -> [u32; 4] {
        let key = [self.seed as u32, (self.seed >> 32) as u32];
        philox4x32_10([step as u32, (step >> 32) as u32, pair, self.stream], key)
    }

    /// Two independent standard normals for `(step, pair)`.
    pub fn normal_pair(&self, step: u64, pair: u32) -> [f64; 2] {
        let b = self.block(step, pair);
        let x = ((b[0] as u64) << 32) | b[1] as u64;
        let y = ((b[2] as u64) << 32) | b[3] as u64;
        let scale = 1.0 / (1u64 << 53) as f64;
        let u1 = ((x >> 11) as f64 + 0.5) * scale;
        let u2 = (y >> 11) as f64 * scale;
        let r = sqrt(-2.0 * ln(u1));
        let th = 2.0 * PI * u2;
        [r * cos(th), r * sin(th)]
    }

    /// Standard normal number `index` of `step`.
    pub fn normal(&self, step: u64, index: u32) -> f64 {
        self.normal_pair(step, index / 2)[(index % 2) as usize]
    }
}
