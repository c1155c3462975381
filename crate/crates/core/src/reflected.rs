//! The γ-reflected process W_γ(t) = Y(t) − γ·inf_{s≤t} Y(s) and its
//! first/last passage times above a level.
//!
//! The running infimum is taken over grid points, and passage times are the
//! first/last grid times with W strictly above the level.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::fbm::{Grid, SamplePath};

/// First and last passage of a path above `level`. Absent times mean no
/// exceedance within the simulated horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassageRecord {
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub ruined: bool,
    pub level: f64,
}

/// Grid indices of the first and last strict exceedance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LevelHit {
    pub first: Option<usize>,
    pub last: Option<usize>,
}

impl LevelHit {
    pub fn record(&self, grid: &Grid, level: f64) -> PassageRecord {
        PassageRecord {
            tau1: self.first.map(|i| grid.time(i)),
            tau2: self.last.map(|i| grid.time(i)),
            ruined: self.first.is_some(),
            level,
        }
    }
}

/// Prefix minimum: `out[i] = min(values[0..=i])`.
pub fn running_infimum(path: &SamplePath) -> SamplePath {
    let mut m = f64::INFINITY;
    let values = path
        .values
        .iter()
        .map(|&v| {
            m = m.min(v);
            m
        })
        .collect();
    SamplePath {
        grid: path.grid,
        values,
        hurst: path.hurst,
    }
}

/// W_γ on the grid of `input`.
pub fn reflect(input: &SamplePath, gamma: f64) -> Result<SamplePath> {
    ensure((0.0..=1.0).contains(&gamma), "gamma", gamma, "must lie in [0, 1]")?;
    let mut m = f64::INFINITY;
    let values = input
        .values
        .iter()
        .map(|&y| {
            m = m.min(y);
            y - gamma * m
        })
        .collect();
    Ok(SamplePath {
        grid: input.grid,
        values,
        hurst: input.hurst,
    })
}

/// τ₁ = first grid time with w > u, τ₂ = last such time.
pub fn passage_times(w: &SamplePath, level: f64) -> Result<PassageRecord> {
    ensure(level > 0.0, "level", level, "must be positive")?;
    let first = w.values.iter().position(|&v| v > level);
    let last = w.values.iter().rposition(|&v| v > level);
    Ok(LevelHit { first, last }.record(&w.grid, level))
}

/// Reflects `y` on the fly and records exceedances of every level in one
/// pass, without materializing W.
pub fn scan_levels(y: &[f64], gamma: f64, levels: &[f64], hits: &mut [LevelHit]) {
    debug_assert_eq!(levels.len(), hits.len());
    hits.iter_mut().for_each(|h| *h = LevelHit::default());
    let mut m = f64::INFINITY;
    for (i, &v) in y.iter().enumerate() {
        m = m.min(v);
        let w = v - gamma * m;
        for (hit, &u) in hits.iter_mut().zip(levels) {
            if w > u {
                if hit.first.is_none() {
                    hit.first = Some(i);
                }
                hit.last = Some(i);
            }
        }
    }
}
