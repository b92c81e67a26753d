//! Direct solver for the cell Poisson problem `D Dᵀ φ = f` of the projection.
//!
//! `D Dᵀ` has bandwidth `n + 1` in the cell numbering and a two-dimensional
//! null space (constants and the checkerboard). One cell of each parity is
//! pinned, which leaves a banded positive definite matrix that is factored
//! once per grid size.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fields::Grid;
use crate::math::sqrt;

const PINNED: [usize; 2] = [0, 1];

#[derive(Debug)]
pub(crate) struct PoissonFactor {
    n: usize,
    band: usize,
    /// `low[c * (band + 1) + d]` holds `L[c][c - d]`.
    low: Vec<f64>,
}

impl PoissonFactor {
    pub(crate) fn new(grid: Grid) -> Result<Self> {
        let n = grid.n();
        let cells = grid.cell_count();
        let band = n + 1;
        let w = band + 1;
        let mut a = vec![0.0; cells * w];
        let s = 0.5 / grid.spacing();
        let mut add = |r: usize, c: usize, v: f64| {
            if r >= c {
                a[r * w + (r - c)] += v;
            }
        };
        for b in 1..n {
            for aa in 1..n {
                let cx = [
                    (grid.cell(aa - 1, b - 1), s),
                    (grid.cell(aa - 1, b), s),
                    (grid.cell(aa, b - 1), -s),
                    (grid.cell(aa, b), -s),
                ];
                let cy = [
                    (grid.cell(aa - 1, b - 1), s),
                    (grid.cell(aa, b - 1), s),
                    (grid.cell(aa - 1, b), -s),
                    (grid.cell(aa, b), -s),
                ];
                for col in [cx, cy] {
                    for &(r, vr) in &col {
                        for &(c, vc) in &col {
                            add(r, c, vr * vc);
                        }
                    }
                }
            }
        }
        for &p in &PINNED {
            for d in 0..=band {
                if p >= d {
                    a[p * w + d] = 0.0;
                }
                if p + d < cells {
                    a[(p + d) * w + d] = 0.0;
                }
            }
            a[p * w] = 1.0;
        }
        for i in 0..cells {
            let lo = i.saturating_sub(band);
            for k in lo..=i {
                let mut sum = a[i * w + (i - k)];
                let start = lo.max(k.saturating_sub(band));
                for m in start..k {
                    sum -= a[i * w + (i - m)] * a[k * w + (k - m)];
                }
                if k == i {
                    if !(sum > 0.0) {
                        return Err(Error::SolverDiverged {
                            solver: "poisson-factor",
                            iterations: i,
                            residual: sum,
                        });
                    }
                    a[i * w] = sqrt(sum);
                } else {
                    a[i * w + (i - k)] = sum / a[k * w];
                }
            }
        }
        Ok(PoissonFactor { n, band, low: a })
    }

    pub(crate) fn n(&self) -> usize {
        self.n
    }

    /// Overwrite `f` with the solution that vanishes at the pinned cells.
    pub(crate) fn solve(&self, f: &mut [f64]) {
        let w = self.band + 1;
        let cells = f.len();
        for &p in &PINNED {
            f[p] = 0.0;
        }
        for i in 0..cells {
            let lo = i.saturating_sub(self.band);
            let mut s = f[i];
            for m in lo..i {
                s -= self.low[i * w + (i - m)] * f[m];
            }
            f[i] = s / self.low[i * w];
        }
        for i in (0..cells).rev() {
            let hi = (i + self.band).min(cells - 1);
            let mut s = f[i];
            for m in i + 1..=hi {
                s -= self.low[m * w + (m - i)] * f[m];
            }
            f[i] = s / self.low[i * w];
        }
    }
}

#[cfg(feature = "std")]
pub(crate) fn factor(grid: Grid) -> Result<std::sync::Arc<PoissonFactor>> {
    use std::sync::{Arc, Mutex};
    static CACHE: Mutex<Vec<Arc<PoissonFactor>>> = Mutex::new(Vec::new());
    let mut cache = CACHE.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(f) = cache.iter().find(|f| f.n() == grid.n()) {
        return Ok(f.clone());
    }
    let f = Arc::new(PoissonFactor::new(grid)?);
    cache.push(f.clone());
    Ok(f)
}

#[cfg(not(feature = "std"))]
pub(crate) fn factor(grid: Grid) -> Result<alloc::sync::Arc<PoissonFactor>> {
    Ok(alloc::sync::Arc::new(PoissonFactor::new(grid)?))
}
