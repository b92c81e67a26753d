//! Analytic divergence-free fields built from stream functions.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fields::{inner_l2, leray_project, norm_l2, Grid, VectorField};
use crate::math::{sin, PI};
use crate::rng::CounterRng;

/// Velocity of the stream function `ψ = (sin(mπy1) sin(nπy2))²`, which
/// vanishes together with its gradient on the boundary.
pub fn stream_mode(m: u32, n: u32, y: [f64; 2]) -> [f64; 2] {
    let (a, b) = (m as f64 * PI, n as f64 * PI);
    let (s1, s2) = (sin(a * y[0]), sin(b * y[1]));
    let dpsi1 = a * sin(2.0 * a * y[0]) * s2 * s2;
    let dpsi2 = b * s1 * s1 * sin(2.0 * b * y[1]);
    [dpsi2, -dpsi1]
}

/// Velocity of the compactly supported stream function
/// `ψ(x) = (ρ² - |x - c|²)⁸` inside the disc of radius `ρ` about `c`.
pub fn bump_velocity(center: [f64; 2], radius: f64, x: [f64; 2]) -> [f64; 2] {
    let d = [x[0] - center[0], x[1] - center[1]];
    let q = radius * radius - d[0] * d[0] - d[1] * d[1];
    if q <= 0.0 {
        return [0.0, 0.0];
    }
    // ∇ψ = -16 q⁷ (x - c)
    let f = -16.0 * q.powi(7);
    [f * d[1], -f * d[0]]
}

/// The first `count` wave-number pairs ordered by `m² + n²`, then `m`.
pub fn mode_pairs(count: usize) -> Vec<(u32, u32)> {
    let mut pairs = Vec::new();
    let mut radius = 1;
    while pairs.len() < count {
        radius += 1;
        pairs.clear();
        for m in 1..=radius {
            for n in 1..=radius {
                pairs.push((m, n));
            }
        }
    }
    pairs.sort_by_key(|&(m, n)| (m * m + n * n, m));
    pairs.truncate(count);
    pairs
}

/// `count` discretely solenoidal mode shapes, orthonormal in L2.
pub fn mode_shapes(grid: Grid, count: usize) -> Result<Vec<VectorField>> {
    let mut out: Vec<VectorField> = Vec::with_capacity(count);
    for (m, n) in mode_pairs(count) {
        let mut v = leray_project(&VectorField::from_fn_no_slip(grid, |y| stream_mode(m, n, y)))?;
        for e in &out {
            let c = inner_l2(&v, e);
            v.axpy(-c, e);
        }
        let norm = norm_l2(&v);
        if !(norm > 1e-8) {
            return Err(Error::UnderResolved("mode shapes are not independent on this grid"));
        }
        v.scale(1.0 / norm);
        out.push(v);
    }
    Ok(out)
}

/// Named initial velocity fields.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum InitialCondition {
    Zero,
    /// Single cell vortex, `ψ = a (sin πy1 sin πy2)²`.
    Vortex { amplitude: f64 },
    /// Two counter-rotating cells, `ψ = a (sin 2πy1 sin πy2)²`.
    Dipole { amplitude: f64 },
    /// Gaussian combination of the first `modes` stream modes.
    Random { amplitude: f64, modes: usize, seed: u64 },
}

/// Sample and project an initial condition.
pub fn initial_field(ic: &InitialCondition, grid: Grid) -> Result<VectorField> {
    let raw = match ic {
        InitialCondition::Zero => return Ok(VectorField::zeros(grid)),
        InitialCondition::Vortex { amplitude } => {
            VectorField::from_fn_no_slip(grid, |y| scale2(stream_mode(1, 1, y), *amplitude))
        }
        InitialCondition::Dipole { amplitude } => {
            VectorField::from_fn_no_slip(grid, |y| scale2(stream_mode(2, 1, y), *amplitude))
        }
        InitialCondition::Random { amplitude, modes, seed } => {
            let rng = CounterRng::new(*seed, u32::MAX);
            let pairs = mode_pairs(*modes);
            let coef: Vec<f64> = (0..pairs.len())
                .map(|i| rng.normal(0, i as u32) / (1.0 + i as f64))
                .collect();
            VectorField::from_fn_no_slip(grid, |y| {
                let mut acc = [0.0; 2];
                for (c, &(m, n)) in coef.iter().zip(&pairs) {
                    let u = stream_mode(m, n, y);
                    acc[0] += c * u[0];
                    acc[1] += c * u[1];
                }
                scale2(acc, *amplitude)
            })
        }
    };
    if !raw.is_finite() {
        return Err(Error::NonFinite("initial condition"));
    }
    leray_project(&raw)
}

fn scale2(v: [f64; 2], s: f64) -> [f64; 2] {
    [v[0] * s, v[1] * s]
}
