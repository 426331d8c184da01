//! Geometric read-back of a candidate eigenfunction via its superlevel sets.
//!
//! The coarea picture says a minimizer's superlevel sets are themselves
//! near-optimal for the perimeter/area quotient, so sweeping thresholds
//! across the range of u and measuring each indicator is an independent,
//! derivative-free consistency check on a solve: the best quotient should
//! land near the domain's optimal value.
//!
//! One systematic bias is inherited from the discretization rather than the
//! solver: the discrete TV of a *sharp* indicator overweights boundary
//! segments that run diagonally to the grid (the forward-difference stencil
//! bills staircase corners at up to the full ℓ¹ rate), so measured
//! perimeters of curved or tilted boundaries sit above the Euclidean value
//! by an orientation-dependent factor that does not vanish with h — about
//! 16% averaged over a full circle of directions. Sweep quotients are
//! therefore reliable as a *lower*-bound check against the geometric value
//! and as an order-of-magnitude upper check, not as an unbiased estimator.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::grid::ScalarField;
use crate::{Error, Result};

/// Results of a threshold sweep. Only nonempty superlevel sets are
/// recorded; the four vectors run in parallel over ascending levels.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetSweep {
    pub levels: Vec<f64>,
    /// Cell-count area h²·#{u > t}.
    pub areas: Vec<f64>,
    /// Discrete TV of the sharp indicator.
    pub perimeters: Vec<f64>,
    /// perimeter/area quotient per level.
    pub ratios: Vec<f64>,
    /// Level achieving the smallest quotient (ties go to the smallest
    /// level).
    pub best_level: f64,
    pub best_ratio: f64,
}

/// Sharp indicator of `{u > t}` restricted to the mask, as a field on the
/// same grid (so that its TV is the discrete perimeter).
pub fn superlevel_mask(u: &ScalarField, t: f64) -> ScalarField {
    let dom = u.domain();
    let mut ind = ScalarField::zeros(dom);
    {
        let vals = ind.values_mut();
        for c in 0..vals.len() {
            if dom.mask()[c] && u.values()[c] > t {
                vals[c] = 1.0;
            }
        }
    }
    ind
}

/// Sweep `k` equispaced thresholds `t_i = i·‖u‖∞/(k+1)`, i = 1..k — strictly
/// between 0 and the sup — and measure each nonempty superlevel set.
///
/// Errors with [`Error::EmptySweep`] when every superlevel set is empty
/// (the zero field) and rejects `k = 0`.
pub fn ratio_sweep(u: &ScalarField, k: usize) -> Result<LevelSetSweep> {
    if k == 0 {
        return Err(Error::InvalidParameter {
            name: "k",
            value: 0.0,
            requirement: "at least one sweep level",
        });
    }
    let dom = u.domain();
    let h2 = dom.h() * dom.h();
    let sup = u.max_abs();
    let mut levels = Vec::new();
    let mut areas = Vec::new();
    let mut perimeters = Vec::new();
    let mut ratios = Vec::new();
    let mut best: Option<(f64, f64)> = None; // (ratio, level)
    for i in 1..=k {
        let t = i as f64 * sup / (k + 1) as f64;
        let ind = superlevel_mask(u, t);
        let count = ind.values().iter().filter(|&&v| v > 0.0).count();
        if count == 0 {
            continue;
        }
        let area = h2 * count as f64;
        let perimeter = ind.total_variation();
        let ratio = perimeter / area;
        levels.push(t);
        areas.push(area);
        perimeters.push(perimeter);
        ratios.push(ratio);
        // Strict comparison: ties keep the earlier (smaller) level.
        if best.map_or(true, |(r, _)| ratio < r) {
            best = Some((ratio, t));
        }
    }
    match best {
        Some((best_ratio, best_level)) => Ok(LevelSetSweep {
            levels,
            areas,
            perimeters,
            ratios,
            best_level,
            best_ratio,
        }),
        None => Err(Error::EmptySweep),
    }
}
