//! The δ-smoothed penalized functional and its first variation.
//!
//! The continuum functional being minimized is
//!
//! ```text
//! I(u) = ∫ |∇u|^{1+ε}  +  n (∫ u^{1+ε} − 1)²,     u ≥ 0,
//! ```
//!
//! whose first term degenerates as ε → 0: the weight `|∇u|^{ε−1}` in its
//! Euler–Lagrange operator `−div(|∇u|^{ε−1}∇u) + 2n(∫u^{1+ε}−1) u^ε` is
//! singular wherever `∇u = 0`. The discrete functional therefore smooths the
//! gradient norm with a parameter δ:
//!
//! ```text
//! energy(u) = h² Σ [ (|∇u|² + δ²)^{(1+ε)/2} − δ^{1+ε} ]
//!           + n (h² Σ u^{1+ε} − 1)²,
//! ```
//!
//! where the `−δ^{1+ε}` offset keeps `energy(0) = n` exact. The first
//! variation of that expression divided by `(1+ε)` is what
//! [`energy_gradient`] returns:
//!
//! ```text
//! g(u) = −div( (|∇u|²+δ²)^{(ε−1)/2} ∇u ) + 2n (h²Σu^{1+ε} − 1) (u+δᵤ)^ε,
//! ```
//!
//! with a fixed floor `δᵤ = 10⁻¹²` so the penalty direction needs no special
//! case at `u = 0`. The weighted gradient is exactly the dual candidate
//! `σ = |∇u|^{ε−1}∇u` the certificate inspects, exposed as [`sigma_field`].


#[allow(unused_imports)]
use num_traits::Float;

use crate::grid::{ScalarField, VectorField};
use crate::{Error, Result};

/// Floor added to `u` before raising to the power ε in the penalty
/// derivative; keeps the descent direction finite at `u = 0`.
pub const DELTA_U: f64 = 1e-12;

/// Parameters of one continuation stage: regularization exponent ε, penalty
/// weight n, smoothing scale δ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyParams {
    eps: f64,
    n: f64,
    delta: f64,
}

impl PenaltyParams {
    /// Validate ranges: ε ∈ [0, 1], n > 0, δ ≥ 0.
    ///
    /// δ = 0 is accepted here because the energy *value* is well-defined
    /// without smoothing; [`energy_gradient`] and [`sigma_field`] reject the
    /// combination δ = 0, ε < 1 where the weight is singular.
    pub fn new(eps: f64, n: f64, delta: f64) -> Result<PenaltyParams> {
        if !(0.0..=1.0).contains(&eps) || !eps.is_finite() {
            return Err(Error::InvalidParameter {
                name: "eps",
                value: eps,
                requirement: "0 <= eps <= 1",
            });
        }
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidParameter { name: "n", value: n, requirement: "n > 0" });
        }
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter {
                name: "delta",
                value: delta,
                requirement: "delta >= 0",
            });
        }
        Ok(PenaltyParams { eps, n, delta })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    fn require_smooth_weight(&self) -> Result<()> {
        if self.eps < 1.0 && self.delta <= 0.0 {
            return Err(Error::SingularWeight { eps: self.eps, delta: self.delta });
        }
        Ok(())
    }
}

fn require_nonnegative(u: &ScalarField) -> Result<()> {
    let min = u.values().iter().fold(0.0_f64, |m, &v| m.min(v));
    if min < 0.0 {
        return Err(Error::NegativeField { min });
    }
    Ok(())
}

/// `x^{(1+ε)/2}` of the squared-magnitude argument, with fast paths for every
/// exponent the default continuation schedule actually visits. The branch is
/// perfectly predicted (same arm every call at a fixed ε); the win is
/// replacing `powf` by `sqrt` chains — ε ∈ {0, ¼, ½, 1} are all dyadic, and a
/// two-to-three-`sqrt` chain is roughly an order of magnitude cheaper per cell
/// than `powf`, which otherwise dominates the ε > 0 stages.
#[inline(always)]
fn mag_pow(sq: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        sq.sqrt()
    } else if eps == 1.0 {
        sq
    } else if eps == 0.5 {
        // sq^¾ = √sq · ⁴√sq
        let r = sq.sqrt();
        r * r.sqrt()
    } else if eps == 0.25 {
        // sq^⅝ = √sq · ⁸√sq
        let r = sq.sqrt();
        r * r.sqrt().sqrt()
    } else {
        sq.powf(0.5 * (1.0 + eps))
    }
}

/// `u^{1+ε}` for `u ≥ 0`.
#[inline(always)]
fn u_pow(u: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        u
    } else if eps == 1.0 {
        u * u
    } else if eps == 0.5 {
        u * u.sqrt()
    } else if eps == 0.25 {
        u * u.sqrt().sqrt()
    } else {
        u.powf(1.0 + eps)
    }
}

/// `(u + δᵤ)^ε`.
#[inline(always)]
fn u_pow_eps(u: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        1.0
    } else if eps == 1.0 {
        u + DELTA_U
    } else if eps == 0.5 {
        (u + DELTA_U).sqrt()
    } else if eps == 0.25 {
        (u + DELTA_U).sqrt().sqrt()
    } else {
        (u + DELTA_U).powf(eps)
    }
}

/// Weight `(sq + δ²)^{(ε−1)/2}` applied to the gradient.
#[inline(always)]
fn weight(sq: f64, eps: f64, delta: f64) -> f64 {
    let t = sq + delta * delta;
    if eps == 0.0 {
        1.0 / t.sqrt()
    } else if eps == 1.0 {
        1.0
    } else if eps == 0.5 {
        // t^{−¼}
        1.0 / t.sqrt().sqrt()
    } else if eps == 0.25 {
        // t^{−⅜} = 1 / (⁴√t · ⁸√t)
        let r = t.sqrt().sqrt();
        1.0 / (r * r.sqrt())
    } else {
        t.powf(0.5 * (eps - 1.0))
    }
}

/// The four per-cell powers of one ε, as a monomorphization handle.
///
/// The sweeps dispatch once per call into a body instantiated per exponent
/// family, so the hot loops contain no `powf` call even in dead branches —
/// a reachable libm call anywhere in a loop keeps LLVM from vectorizing it,
/// and the branchy helpers above cost exactly that when ε is only known at
/// run time. Arm bodies match the helpers expression for expression; results
/// are bit-identical to the dispatching versions.
trait PowFamily: Copy {
    fn mag(self, sq: f64) -> f64;
    fn upow(self, u: f64) -> f64;
    fn upeps(self, u: f64) -> f64;
    fn weight(self, sq: f64, delta: f64) -> f64;
}

/// ε = 0: plain TV with a smoothed norm.
#[derive(Clone, Copy)]
struct PowZero;

impl PowFamily for PowZero {
    #[inline(always)]
    fn mag(self, sq: f64) -> f64 {
        sq.sqrt()
    }
    #[inline(always)]
    fn upow(self, u: f64) -> f64 {
        u
    }
    #[inline(always)]
    fn upeps(self, _u: f64) -> f64 {
        1.0
    }
    #[inline(always)]
    fn weight(self, sq: f64, delta: f64) -> f64 {
        let t = sq + delta * delta;
        1.0 / t.sqrt()
    }
}

/// ε = ½: all powers are 2-step √ chains.
#[derive(Clone, Copy)]
struct PowHalf;

impl PowFamily for PowHalf {
    #[inline(always)]
    fn mag(self, sq: f64) -> f64 {
        let r = sq.sqrt();
        r * r.sqrt()
    }
    #[inline(always)]
    fn upow(self, u: f64) -> f64 {
        u * u.sqrt()
    }
    #[inline(always)]
    fn upeps(self, u: f64) -> f64 {
        (u + DELTA_U).sqrt()
    }
    #[inline(always)]
    fn weight(self, sq: f64, delta: f64) -> f64 {
        let t = sq + delta * delta;
        1.0 / t.sqrt().sqrt()
    }
}

/// ε = ¼: 3-step √ chains.
#[derive(Clone, Copy)]
struct PowQuarter;

impl PowFamily for PowQuarter {
    #[inline(always)]
    fn mag(self, sq: f64) -> f64 {
        let r = sq.sqrt();
        r * r.sqrt().sqrt()
    }
    #[inline(always)]
    fn upow(self, u: f64) -> f64 {
        u * u.sqrt().sqrt()
    }
    #[inline(always)]
    fn upeps(self, u: f64) -> f64 {
        (u + DELTA_U).sqrt().sqrt()
    }
    #[inline(always)]
    fn weight(self, sq: f64, delta: f64) -> f64 {
        let r = (sq + delta * delta).sqrt().sqrt();
        1.0 / (r * r.sqrt())
    }
}

/// Any other ε (including 1): the dispatching helpers, `powf` and all.
#[derive(Clone, Copy)]
struct PowGen {
    eps: f64,
}

impl PowFamily for PowGen {
    #[inline(always)]
    fn mag(self, sq: f64) -> f64 {
        mag_pow(sq, self.eps)
    }
    #[inline(always)]
    fn upow(self, u: f64) -> f64 {
        u_pow(u, self.eps)
    }
    #[inline(always)]
    fn upeps(self, u: f64) -> f64 {
        u_pow_eps(u, self.eps)
    }
    #[inline(always)]
    fn weight(self, sq: f64, delta: f64) -> f64 {
        weight(sq, self.eps, delta)
    }
}

/// Evaluate the penalized energy. Errors on negative entries in `u`.
pub fn energy(u: &ScalarField, p: &PenaltyParams) -> Result<f64> {
    require_nonnegative(u)?;
    Ok(energy_unchecked(u, p))
}

/// Reduction lane count. Every accumulating sweep splits its sums into this
/// many parallel lanes folded in a fixed pairwise order — the serial-add data
/// dependence otherwise forces the whole loop scalar (f64 addition does not
/// reassociate), and with lanes the bulk loops vectorize. The order is fixed,
/// so results stay deterministic run to run.
const LANES: usize = 4;

/// Fold lane accumulators pairwise (fixed order, part of the deterministic
/// reduction contract).
#[inline(always)]
fn fold(a: [f64; LANES]) -> f64 {
    (a[0] + a[1]) + (a[2] + a[3])
}

/// Energy without the nonnegativity scan — the solver's iterates are
/// projected, so it re-checks nothing per line-search probe.
pub(crate) fn energy_unchecked(u: &ScalarField, p: &PenaltyParams) -> f64 {
    if p.eps == 0.0 {
        energy_impl(u, p, PowZero)
    } else if p.eps == 0.5 {
        energy_impl(u, p, PowHalf)
    } else if p.eps == 0.25 {
        energy_impl(u, p, PowQuarter)
    } else {
        energy_impl(u, p, PowGen { eps: p.eps })
    }
}

/// The sweep is row-sliced (bulk columns in lane-chunked runs, then the
/// zero-padded right edge, then the zero-padded top row) so every index is
/// provably in bounds and the per-cell arithmetic vectorizes.
fn energy_impl<P: PowFamily>(u: &ScalarField, p: &PenaltyParams, pw: P) -> f64 {
    let dom = u.domain();
    let (nx, ny, h) = (dom.nx(), dom.ny(), dom.h());
    let v = u.values();
    let d2 = p.delta * p.delta;
    let offset = pw.mag(d2);
    let inv_h = 1.0 / h;
    let mut tv_lanes = [0.0; LANES];
    let mut mass_lanes = [0.0; LANES];
    let mut tv_edge = 0.0;
    let mut mass_edge = 0.0;
    let bulk = (nx - 1) / LANES * LANES;
    for j in 0..ny - 1 {
        let base = j * nx;
        let row = &v[base..base + nx];
        let up = &v[base + nx..base + 2 * nx];
        for o in (0..bulk).step_by(LANES) {
            let c = &row[o..o + LANES];
            let r = &row[o + 1..o + 1 + LANES];
            let t = &up[o..o + LANES];
            for l in 0..LANES {
                let uc = c[l];
                let gx = (r[l] - uc) * inv_h;
                let gy = (t[l] - uc) * inv_h;
                tv_lanes[l] += pw.mag(gx * gx + gy * gy + d2) - offset;
                mass_lanes[l] += pw.upow(uc);
            }
        }
        for i in bulk..nx - 1 {
            let uc = row[i];
            let gx = (row[i + 1] - uc) * inv_h;
            let gy = (up[i] - uc) * inv_h;
            tv_edge += pw.mag(gx * gx + gy * gy + d2) - offset;
            mass_edge += pw.upow(uc);
        }
        let uc = row[nx - 1];
        let gx = -uc * inv_h;
        let gy = (up[nx - 1] - uc) * inv_h;
        tv_edge += pw.mag(gx * gx + gy * gy + d2) - offset;
        mass_edge += pw.upow(uc);
    }
    let base = (ny - 1) * nx;
    let row = &v[base..base + nx];
    for i in 0..nx - 1 {
        let uc = row[i];
        let gx = (row[i + 1] - uc) * inv_h;
        let gy = -uc * inv_h;
        tv_edge += pw.mag(gx * gx + gy * gy + d2) - offset;
        mass_edge += pw.upow(uc);
    }
    let uc = row[nx - 1];
    let g = -uc * inv_h;
    tv_edge += pw.mag(2.0 * g * g + d2) - offset;
    mass_edge += pw.upow(uc);
    let h2 = h * h;
    let m = h2 * (fold(mass_lanes) + mass_edge);
    h2 * (fold(tv_lanes) + tv_edge) + p.n * (m - 1.0) * (m - 1.0)
}

/// `h² Σ u^{1+ε}` — the penalized mass. Coincides with
/// [`ScalarField::integrate`] at ε = 0 on nonnegative fields.
pub fn penalized_mass(u: &ScalarField, eps: f64) -> f64 {
    let h2 = u.domain().h() * u.domain().h();
    let mut sum = 0.0;
    for &uc in u.values() {
        sum += u_pow(uc, eps);
    }
    h2 * sum
}

/// The dual candidate `σ = (|∇u|² + δ²)^{(ε−1)/2} ∇u`.
///
/// Its magnitude is bounded by `max(‖∇u‖∞, δ)^ε` — in particular, at ε = 0
/// every cell has `|σ| = |∇u|/√(|∇u|²+δ²) < 1` strictly.
pub fn sigma_field(u: &ScalarField, p: &PenaltyParams) -> Result<VectorField> {
    p.require_smooth_weight()?;
    let mut sigma = VectorField::zeros(u.domain());
    sigma_into(u, p, &mut sigma);
    Ok(sigma)
}

/// Allocation-free [`sigma_field`] used by the solver's inner loop.
pub(crate) fn sigma_into(u: &ScalarField, p: &PenaltyParams, sigma: &mut VectorField) {
    sigma_mass_into(u, p, sigma);
}

/// One fused sweep: fill σ and return the penalized mass `h²Σu^{1+ε}` —
/// both read every cell of u once.
fn sigma_mass_into(u: &ScalarField, p: &PenaltyParams, sigma: &mut VectorField) -> f64 {
    if p.eps == 0.0 {
        sigma_mass_impl(u, p, sigma, PowZero)
    } else if p.eps == 0.5 {
        sigma_mass_impl(u, p, sigma, PowHalf)
    } else if p.eps == 0.25 {
        sigma_mass_impl(u, p, sigma, PowQuarter)
    } else {
        sigma_mass_impl(u, p, sigma, PowGen { eps: p.eps })
    }
}

/// Bulk columns run in lane chunks; the σ writes are element-wise, so only
/// the mass reduction needs lanes.
fn sigma_mass_impl<P: PowFamily>(
    u: &ScalarField,
    p: &PenaltyParams,
    sigma: &mut VectorField,
    pw: P,
) -> f64 {
    let dom = u.domain();
    let (nx, ny, h) = (dom.nx(), dom.ny(), dom.h());
    let inv_h = 1.0 / h;
    let v = u.values();
    let delta = p.delta;
    let (sx, sy) = sigma.components_mut();
    let mut mass_lanes = [0.0; LANES];
    let mut mass_edge = 0.0;
    let bulk = (nx - 1) / LANES * LANES;
    for j in 0..ny - 1 {
        let base = j * nx;
        let row = &v[base..base + nx];
        let up = &v[base + nx..base + 2 * nx];
        let sx_row = &mut sx[base..base + nx];
        let sy_row = &mut sy[base..base + nx];
        for o in (0..bulk).step_by(LANES) {
            let c = &row[o..o + LANES];
            let r = &row[o + 1..o + 1 + LANES];
            let t = &up[o..o + LANES];
            let sxc = &mut sx_row[o..o + LANES];
            let syc = &mut sy_row[o..o + LANES];
            for l in 0..LANES {
                let uc = c[l];
                let gx = (r[l] - uc) * inv_h;
                let gy = (t[l] - uc) * inv_h;
                let w = pw.weight(gx * gx + gy * gy, delta);
                sxc[l] = w * gx;
                syc[l] = w * gy;
                mass_lanes[l] += pw.upow(uc);
            }
        }
        for i in bulk..nx - 1 {
            let uc = row[i];
            let gx = (row[i + 1] - uc) * inv_h;
            let gy = (up[i] - uc) * inv_h;
            let w = pw.weight(gx * gx + gy * gy, delta);
            sx_row[i] = w * gx;
            sy_row[i] = w * gy;
            mass_edge += pw.upow(uc);
        }
        let uc = row[nx - 1];
        let gx = -uc * inv_h;
        let gy = (up[nx - 1] - uc) * inv_h;
        let w = pw.weight(gx * gx + gy * gy, delta);
        sx_row[nx - 1] = w * gx;
        sy_row[nx - 1] = w * gy;
        mass_edge += pw.upow(uc);
    }
    let base = (ny - 1) * nx;
    let row = &v[base..base + nx];
    let sx_row = &mut sx[base..base + nx];
    let sy_row = &mut sy[base..base + nx];
    for i in 0..nx - 1 {
        let uc = row[i];
        let gx = (row[i + 1] - uc) * inv_h;
        let gy = -uc * inv_h;
        let w = pw.weight(gx * gx + gy * gy, delta);
        sx_row[i] = w * gx;
        sy_row[i] = w * gy;
        mass_edge += pw.upow(uc);
    }
    let uc = row[nx - 1];
    let g = -uc * inv_h;
    let w = pw.weight(2.0 * g * g, delta);
    sx_row[nx - 1] = w * g;
    sy_row[nx - 1] = w * g;
    mass_edge += pw.upow(uc);
    h * h * (fold(mass_lanes) + mass_edge)
}

/// First variation of [`energy`] divided by `(1+ε)`:
/// `−div(σ) + 2n(h²Σu^{1+ε} − 1)(u+δᵤ)^ε`, zero off the mask.
///
/// Central finite differences of [`energy`] recover `(1+ε)·h²` times these
/// entries (the `h²` from the weighted pairing, the `(1+ε)` from the overall
/// factor this op divides out).
pub fn energy_gradient(u: &ScalarField, p: &PenaltyParams) -> Result<ScalarField> {
    require_nonnegative(u)?;
    p.require_smooth_weight()?;
    let mut sigma = VectorField::zeros(u.domain());
    let mut out = ScalarField::zeros(u.domain());
    energy_gradient_into(u, p, &mut sigma, &mut out);
    Ok(out)
}

/// Allocation-free [`energy_gradient`]: fills `sigma` with the dual field and
/// `out` with the variation; returns the penalized mass `h²Σu^{1+ε}`.
pub(crate) fn energy_gradient_into(
    u: &ScalarField,
    p: &PenaltyParams,
    sigma: &mut VectorField,
    out: &mut ScalarField,
) -> f64 {
    let dom = u.domain().clone();
    let (nx, ny, h) = (dom.nx(), dom.ny(), dom.h());
    let inv_h = 1.0 / h;
    let eps = p.eps;

    let m = sigma_mass_into(u, p, sigma);

    let pull = 2.0 * p.n * (m - 1.0);
    let mask = dom.mask();
    let v = u.values();
    // Borrow juggling: read σ components while writing out's values.
    let (sx, sy) = (sigma.vx(), sigma.vy());
    let ov = out.values_mut();
    // Backward differences row-sliced like the forward sweep; the j = 0 row
    // and i = 0 column read the zero padding below/left of the grid. On a
    // valid domain those cells are outside the mask anyway, so the first
    // row's body never runs its masked branch — it exists for shape safety.
    for j in 0..ny {
        let base = j * nx;
        let row_mask = &mask[base..base + nx];
        let vrow = &v[base..base + nx];
        let sx_row = &sx[base..base + nx];
        let sy_row = &sy[base..base + nx];
        let ov_row = &mut ov[base..base + nx];
        if j == 0 {
            ov_row[0] = if row_mask[0] {
                -(sx_row[0] + sy_row[0]) * inv_h + pull * u_pow_eps(vrow[0], eps)
            } else {
                0.0
            };
            for i in 1..nx {
                ov_row[i] = if row_mask[i] {
                    -(sx_row[i] - sx_row[i - 1] + sy_row[i]) * inv_h
                        + pull * u_pow_eps(vrow[i], eps)
                } else {
                    0.0
                };
            }
        } else {
            let below = &sy[base - nx..base];
            ov_row[0] = if row_mask[0] {
                -(sx_row[0] + sy_row[0] - below[0]) * inv_h + pull * u_pow_eps(vrow[0], eps)
            } else {
                0.0
            };
            for i in 1..nx {
                ov_row[i] = if row_mask[i] {
                    -(sx_row[i] - sx_row[i - 1] + sy_row[i] - below[i]) * inv_h
                        + pull * u_pow_eps(vrow[i], eps)
                } else {
                    0.0
                };
            }
        }
    }
    m
}

/// Per-iteration reductions the descent loop consumes, produced by
/// [`gradient_stats_into`] inside the divergence sweep so the solver never
/// pays a separate pass for them.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct GradStats {
    /// Projected-gradient norm `h·√Σ pg²` of the (scaled) gradient.
    pub pg_norm: f64,
    /// Plain mass `h²Σu`.
    pub mass: f64,
    /// Barzilai–Borwein dots against the previous iterate/gradient:
    /// `Σs²`, `Σs·y`, `Σy²` with `s = u − u_prev`, `y = g − g_prev`.
    pub ss: f64,
    pub sy: f64,
    pub yy: f64,
}

/// [`energy_gradient_into`] with the descent loop's bookkeeping fused in:
/// the written gradient is pre-multiplied by `scale` (the solver passes
/// `1+ε` to undo the public operator's normalization), and the projected
/// gradient norm, plain mass, and BB dots against `(u_prev, g_prev)` are
/// accumulated in the same sweep. Cell visit order matches the plain
/// variant, so the gradient field is bit-identical to scaling it after.
pub(crate) fn gradient_stats_into(
    u: &ScalarField,
    p: &PenaltyParams,
    scale: f64,
    u_prev: &ScalarField,
    g_prev: &ScalarField,
    sigma: &mut VectorField,
    out: &mut ScalarField,
) -> GradStats {
    if p.eps == 0.0 {
        gradient_stats_impl(u, p, scale, u_prev, g_prev, sigma, out, PowZero)
    } else if p.eps == 0.5 {
        gradient_stats_impl(u, p, scale, u_prev, g_prev, sigma, out, PowHalf)
    } else if p.eps == 0.25 {
        gradient_stats_impl(u, p, scale, u_prev, g_prev, sigma, out, PowQuarter)
    } else {
        gradient_stats_impl(u, p, scale, u_prev, g_prev, sigma, out, PowGen { eps: p.eps })
    }
}

#[allow(clippy::too_many_arguments)] // private monomorphization target of the fn above
fn gradient_stats_impl<P: PowFamily>(
    u: &ScalarField,
    p: &PenaltyParams,
    scale: f64,
    u_prev: &ScalarField,
    g_prev: &ScalarField,
    sigma: &mut VectorField,
    out: &mut ScalarField,
    pw: P,
) -> GradStats {
    let dom = u.domain().clone();
    let (nx, ny, h) = (dom.nx(), dom.ny(), dom.h());
    let inv_h = 1.0 / h;

    let m = sigma_mass_into(u, p, sigma);

    let pull = 2.0 * p.n * (m - 1.0);
    let mask = dom.mask();
    let v = u.values();
    let up_v = u_prev.values();
    let gp_v = g_prev.values();
    let (sx, sy) = (sigma.vx(), sigma.vy());
    let ov = out.values_mut();
    let mut pg2_l = [0.0; LANES];
    let mut mass_l = [0.0; LANES];
    let mut ss_l = [0.0; LANES];
    let mut sy_l = [0.0; LANES];
    let mut yy_l = [0.0; LANES];
    let (mut pg2_e, mut mass_e, mut ss_e, mut sy_e, mut yy_e) = (0.0, 0.0, 0.0, 0.0, 0.0);
    // Bulk runs cover i ∈ [1, 1 + bulk); the i = 0 column and the j = 0 row
    // (margin cells reading the zero padding left/below) stay scalar.
    let bulk = (nx - 1) / LANES * LANES;
    for j in 0..ny {
        let base = j * nx;
        let row_mask = &mask[base..base + nx];
        let vrow = &v[base..base + nx];
        let up_row = &up_v[base..base + nx];
        let gp_row = &gp_v[base..base + nx];
        let sx_row = &sx[base..base + nx];
        let sy_row = &sy[base..base + nx];
        let ov_row = &mut ov[base..base + nx];
        // Margin cells are off-mask, so their zero gradients and zero field
        // values pass through the accumulators unchanged.
        let mut cell = |i: usize, div: f64, ov_row: &mut [f64]| {
            let uc = vrow[i];
            let gc = if row_mask[i] {
                scale * (div * inv_h + pull * pw.upeps(uc))
            } else {
                0.0
            };
            ov_row[i] = gc;
            let pg = if uc > 0.0 { gc } else { gc.min(0.0) };
            pg2_e += pg * pg;
            mass_e += uc;
            let s = uc - up_row[i];
            let y = gc - gp_row[i];
            ss_e += s * s;
            sy_e += s * y;
            yy_e += y * y;
        };
        if j == 0 {
            cell(0, -(sx_row[0] + sy_row[0]), ov_row);
            for i in 1..nx {
                cell(i, -(sx_row[i] - sx_row[i - 1] + sy_row[i]), ov_row);
            }
            continue;
        }
        let below = &sy[base - nx..base];
        cell(0, -(sx_row[0] + sy_row[0] - below[0]), ov_row);
        for o in (1..1 + bulk).step_by(LANES) {
            let uc_c = &vrow[o..o + LANES];
            let up_c = &up_row[o..o + LANES];
            let gp_c = &gp_row[o..o + LANES];
            let m_c = &row_mask[o..o + LANES];
            let sx_c = &sx_row[o..o + LANES];
            let sxp_c = &sx_row[o - 1..o - 1 + LANES];
            let sy_c = &sy_row[o..o + LANES];
            let bl_c = &below[o..o + LANES];
            let ov_c = &mut ov_row[o..o + LANES];
            for l in 0..LANES {
                let uc = uc_c[l];
                let div = -(sx_c[l] - sxp_c[l] + sy_c[l] - bl_c[l]);
                let x = scale * (div * inv_h + pull * pw.upeps(uc));
                let gc = if m_c[l] { x } else { 0.0 };
                ov_c[l] = gc;
                let pg = if uc > 0.0 { gc } else { gc.min(0.0) };
                pg2_l[l] += pg * pg;
                mass_l[l] += uc;
                let s = uc - up_c[l];
                let y = gc - gp_c[l];
                ss_l[l] += s * s;
                sy_l[l] += s * y;
                yy_l[l] += y * y;
            }
        }
        for i in 1 + bulk..nx {
            cell(i, -(sx_row[i] - sx_row[i - 1] + sy_row[i] - below[i]), ov_row);
        }
    }
    let h2 = h * h;
    GradStats {
        pg_norm: (h2 * (fold(pg2_l) + pg2_e)).sqrt(),
        mass: h2 * (fold(mass_l) + mass_e),
        ss: fold(ss_l) + ss_e,
        sy: fold(sy_l) + sy_e,
        yy: fold(yy_l) + yy_e,
    }
}

// TEMP bench exports — remove before release.
#[doc(hidden)]
pub fn bench_gradient_stats(
    u: &ScalarField,
    p: &PenaltyParams,
    scale: f64,
    u_prev: &ScalarField,
    g_prev: &ScalarField,
    sigma: &mut VectorField,
    out: &mut ScalarField,
) -> (f64, f64, f64, f64, f64) {
    let st = gradient_stats_into(u, p, scale, u_prev, g_prev, sigma, out);
    (st.pg_norm, st.mass, st.ss, st.sy, st.yy)
}

#[doc(hidden)]
pub fn bench_probe(
    u: &ScalarField,
    g: &ScalarField,
    a: f64,
    p: &PenaltyParams,
    v: &mut ScalarField,
) -> (f64, f64) {
    probe_energy_into(u, g, a, p, v)
}

#[doc(hidden)]
pub fn bench_sigma_mass(u: &ScalarField, p: &PenaltyParams, sigma: &mut VectorField) -> f64 {
    sigma_mass_into(u, p, sigma)
}

/// Probe the projected step `v = max(u − a·g, 0)` and evaluate its energy;
/// returns `(energy(v), h²·⟨g, v − u⟩)`.
///
/// Two sub-passes: a flat lane-chunked clamp that also takes the directional
/// pairing (no neighbor reads, so it vectorizes fully), then the standard
/// energy sweep over the clamped field. The split costs a second pass over
/// `v` but keeps both loops free of carried dependences.
pub(crate) fn probe_energy_into(
    u: &ScalarField,
    g: &ScalarField,
    a: f64,
    p: &PenaltyParams,
    v: &mut ScalarField,
) -> (f64, f64) {
    let h = u.domain().h();
    let uv = u.values();
    let gv = g.values();
    let vv = v.values_mut();
    let len = vv.len();
    let mut dgd_lanes = [0.0; LANES];
    let mut dgd_edge = 0.0;
    let bulk = len / LANES * LANES;
    for o in (0..bulk).step_by(LANES) {
        let uc_c = &uv[o..o + LANES];
        let g_c = &gv[o..o + LANES];
        let v_c = &mut vv[o..o + LANES];
        for l in 0..LANES {
            let uc = uc_c[l];
            let t = (uc - a * g_c[l]).max(0.0);
            v_c[l] = t;
            dgd_lanes[l] += g_c[l] * (t - uc);
        }
    }
    for o in bulk..len {
        let uc = uv[o];
        let t = (uc - a * gv[o]).max(0.0);
        vv[o] = t;
        dgd_edge += gv[o] * (t - uc);
    }
    let energy = energy_unchecked(v, p);
    (energy, h * h * (fold(dgd_lanes) + dgd_edge))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridDomain, ShapeSpec};
    use alloc::sync::Arc;
    use alloc::vec::Vec;
    use rand_core::{RngCore, SeedableRng};

    fn full_square(n: usize, h: f64) -> Arc<GridDomain> {
        let (nx, ny) = (n + 2, n + 2);
        let mut mask = vec![false; nx * ny];
        for j in 1..=n {
            for i in 1..=n {
                mask[j * nx + i] = true;
            }
        }
        GridDomain::from_mask(nx, ny, h, (0.0, 0.0), mask).unwrap()
    }

    fn uniform(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn random_positive_field(
        dom: &Arc<GridDomain>,
        rng: &mut rand_chacha::ChaCha8Rng,
        lo: f64,
        hi: f64,
    ) -> ScalarField {
        let mut u = ScalarField::zeros(dom);
        for j in 0..dom.ny() {
            for i in 0..dom.nx() {
                if dom.is_interior(i, j) {
                    u.set(i, j, lo + (hi - lo) * uniform(rng));
                }
            }
        }
        u
    }

    #[test]
    fn zero_field_energy_is_n() {
        let dom = full_square(4, 0.5);
        let u = ScalarField::zeros(&dom);
        for &(eps, delta) in &[(0.0, 0.0), (0.5, 1e-2), (1.0, 0.3), (0.25, 1e-4)] {
            let p = PenaltyParams::new(eps, 100.0, delta).unwrap();
            let e = energy(&u, &p).unwrap();
            assert!((e - 100.0).abs() < 1e-12, "eps={eps} delta={delta}: {e}");
        }
    }

    #[test]
    fn eps0_delta0_energy_is_tv_plus_penalty() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let dom = full_square(7, 0.3);
        let u = random_positive_field(&dom, &mut rng, 0.0, 2.0);
        let n = 17.0;
        let p = PenaltyParams::new(0.0, n, 0.0).unwrap();
        let m = u.integrate();
        let expect = u.total_variation() + n * (m - 1.0) * (m - 1.0);
        let got = energy(&u, &p).unwrap();
        assert!((got - expect).abs() <= 1e-12 * expect.max(1.0));
    }

    #[test]
    fn normalized_constant_on_unit_square() {
        // c with c·|Ω| = 1 on the unit square: energy at ε = δ = 0 reduces to
        // the pure boundary TV term (the penalty vanishes).
        let dom =
            GridDomain::rasterize(&ShapeSpec::Rectangle { width: 1.0, height: 1.0 }, 16).unwrap();
        let mut u = ScalarField::zeros(&dom);
        for j in 0..dom.ny() {
            for i in 0..dom.nx() {
                if dom.is_interior(i, j) {
                    u.set(i, j, 1.0);
                }
            }
        }
        let p = PenaltyParams::new(0.0, 50.0, 0.0).unwrap();
        let got = energy(&u, &p).unwrap();
        assert!((got - u.total_variation()).abs() < 1e-10);
        assert!((got - 4.0).abs() < 0.05); // nominal perimeter of the square
    }

    #[test]
    fn negative_field_is_rejected() {
        let dom = full_square(3, 1.0);
        let mut u = ScalarField::zeros(&dom);
        u.set(1, 1, -0.5);
        let p = PenaltyParams::new(0.5, 1.0, 1e-3).unwrap();
        assert!(matches!(energy(&u, &p), Err(Error::NegativeField { .. })));
        assert!(matches!(energy_gradient(&u, &p), Err(Error::NegativeField { .. })));
    }

    #[test]
    fn singular_weight_is_rejected() {
        let dom = full_square(3, 1.0);
        let u = ScalarField::zeros(&dom);
        let p = PenaltyParams::new(0.5, 1.0, 0.0).unwrap();
        assert!(matches!(energy_gradient(&u, &p), Err(Error::SingularWeight { .. })));
        assert!(matches!(sigma_field(&u, &p), Err(Error::SingularWeight { .. })));
        // δ = 0 is fine at ε = 1 (the weight is constant).
        let p1 = PenaltyParams::new(1.0, 1.0, 0.0).unwrap();
        assert!(energy_gradient(&u, &p1).is_ok());
    }

    #[test]
    fn parameter_ranges_enforced() {
        assert!(PenaltyParams::new(-0.1, 1.0, 0.1).is_err());
        assert!(PenaltyParams::new(1.5, 1.0, 0.1).is_err());
        assert!(PenaltyParams::new(0.5, 0.0, 0.1).is_err());
        assert!(PenaltyParams::new(0.5, -3.0, 0.1).is_err());
        assert!(PenaltyParams::new(0.5, 1.0, -0.1).is_err());
        assert!(PenaltyParams::new(0.5, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn zero_field_gradient_is_pure_penalty_pull() {
        let dom = full_square(4, 1.0);
        let u = ScalarField::zeros(&dom);
        let (eps, n) = (0.5, 7.0);
        let p = PenaltyParams::new(eps, n, 1e-2).unwrap();
        let g = energy_gradient(&u, &p).unwrap();
        let expect = 2.0 * n * (0.0 - 1.0) * DELTA_U.powf(eps);
        for j in 0..dom.ny() {
            for i in 0..dom.nx() {
                let got = g.get(i, j);
                if dom.is_interior(i, j) {
                    assert!((got - expect).abs() <= 1e-18, "({i},{j}): {got} vs {expect}");
                    assert!(got < 0.0);
                } else {
                    assert_eq!(got, 0.0);
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // The spec'd module example (ε=0.5, n=10, δ=1e−3) plus 100 random
        // draws over the full parameter box. Central differences of the
        // energy recover (1+ε)·h²·gradient entries.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut worst = 0.0_f64;
        for trial in 0..101 {
            let dom = full_square(8, 0.125);
            let u = random_positive_field(&dom, &mut rng, 0.05, 1.05);
            let (eps, n, delta) = if trial == 0 {
                (0.5, 10.0, 1e-3)
            } else {
                // Hit the fast-path exponents now and then.
                let eps = match trial % 5 {
                    0 => 0.0,
                    1 => 1.0,
                    _ => uniform(&mut rng),
                };
                (eps, 0.5 + 30.0 * uniform(&mut rng), 1e-3 + 0.1 * uniform(&mut rng))
            };
            let p = PenaltyParams::new(eps, n, delta).unwrap();
            let g = energy_gradient(&u, &p).unwrap();
            let h2 = dom.h() * dom.h();
            let step = 1e-6;
            for j in 1..=8 {
                for i in 1..=8 {
                    let mut up = u.clone();
                    up.set(i, j, u.get(i, j) + step);
                    let mut dn = u.clone();
                    dn.set(i, j, u.get(i, j) - step);
                    let fd = (energy(&up, &p).unwrap() - energy(&dn, &p).unwrap())
                        / (2.0 * step * h2 * (1.0 + eps));
                    let ana = g.get(i, j);
                    let rel = (ana - fd).abs() / fd.abs().max(1.0);
                    worst = worst.max(rel);
                    assert!(
                        rel <= 1e-5,
                        "trial {trial} cell ({i},{j}): ana {ana} vs fd {fd} (rel {rel:.2e})"
                    );
                }
            }
        }
        // Sanity: the comparison is genuinely tight, not trivially slack.
        assert!(worst > 0.0 && worst < 1e-5, "worst rel err {worst:.2e}");
    }

    #[test]
    fn eps1_sigma_is_gradient() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let dom = full_square(6, 0.5);
        let u = random_positive_field(&dom, &mut rng, 0.0, 1.0);
        let p = PenaltyParams::new(1.0, 2.0, 0.0).unwrap();
        let sigma = sigma_field(&u, &p).unwrap();
        let grad = u.gradient();
        for c in 0..sigma.vx().len() {
            assert_eq!(sigma.vx()[c], grad.vx()[c]);
            assert_eq!(sigma.vy()[c], grad.vy()[c]);
        }
    }

    #[test]
    fn sigma_magnitude_bound() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let dom = full_square(6, 0.25);
            let u = random_positive_field(&dom, &mut rng, 0.0, 3.0);
            let eps = uniform(&mut rng);
            let delta = 1e-4 + 0.5 * uniform(&mut rng);
            let p = PenaltyParams::new(eps, 1.0, delta).unwrap();
            let sigma = sigma_field(&u, &p).unwrap();
            let bound = u.gradient().max_magnitude().max(delta).powf(eps);
            assert!(
                sigma.max_magnitude() <= bound * (1.0 + 1e-12),
                "‖σ‖∞ = {} vs bound {bound}",
                sigma.max_magnitude()
            );
        }
    }

    #[test]
    fn penalty_monotone_in_n() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let dom = full_square(5, 0.4);
        let u = random_positive_field(&dom, &mut rng, 0.1, 0.9);
        let eps = 0.3;
        let es: Vec<f64> = [1.0, 5.0, 25.0, 125.0]
            .iter()
            .map(|&n| energy(&u, &PenaltyParams::new(eps, n, 1e-3).unwrap()).unwrap())
            .collect();
        assert!(es.windows(2).all(|w| w[1] > w[0]), "{es:?}");

        // Normalize the penalized mass to 1: energy becomes n-independent.
        let m = penalized_mass(&u, eps);
        let scale = (1.0 / m).powf(1.0 / (1.0 + eps));
        let mut v = u.clone();
        for j in 0..dom.ny() {
            for i in 0..dom.nx() {
                v.set(i, j, v.get(i, j) * scale);
            }
        }
        let e1 = energy(&v, &PenaltyParams::new(eps, 1.0, 1e-3).unwrap()).unwrap();
        let e2 = energy(&v, &PenaltyParams::new(eps, 1e6, 1e-3).unwrap()).unwrap();
        assert!((e1 - e2).abs() <= 1e-9 * e1, "{e1} vs {e2}");
    }

    #[test]
    fn smoothing_bound_and_direction() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let dom = full_square(6, 0.2);
        let u = random_positive_field(&dom, &mut rng, 0.0, 1.5);
        let cells = (dom.nx() * dom.ny()) as f64;
        let h2 = dom.h() * dom.h();
        let e0 = energy(&u, &PenaltyParams::new(0.0, 3.0, 0.0).unwrap()).unwrap();
        let mut prev = e0;
        // (x²+δ²)^½ − δ ≤ |x|: the smoothed energy sits *below* the sharp one
        // and decreases as δ grows; the gap is at most δ per unit area.
        for &delta in &[1e-4, 1e-3, 1e-2, 1e-1] {
            let ed = energy(&u, &PenaltyParams::new(0.0, 3.0, delta).unwrap()).unwrap();
            assert!(ed <= e0 + 1e-14);
            assert!(ed <= prev + 1e-14, "not monotone at delta={delta}");
            assert!((ed - e0).abs() <= delta * h2 * cells);
            prev = ed;
        }
    }

    #[test]
    fn gradient_into_returns_penalized_mass() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let dom = full_square(5, 0.5);
        let u = random_positive_field(&dom, &mut rng, 0.2, 1.0);
        let p = PenaltyParams::new(0.25, 4.0, 1e-3).unwrap();
        let mut sigma = VectorField::zeros(&dom);
        let mut g = ScalarField::zeros(&dom);
        let m = energy_gradient_into(&u, &p, &mut sigma, &mut g);
        assert!((m - penalized_mass(&u, 0.25)).abs() <= 1e-15);
        let g_pub = energy_gradient(&u, &p).unwrap();
        assert_eq!(g.values(), g_pub.values());
    }

    #[test]
    fn fused_gradient_sweep_matches_the_plain_operator() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        let dom = full_square(9, 0.2);
        for &(eps, delta) in &[(0.0, 1e-3), (0.5, 1e-2), (1.0, 0.0)] {
            let p = PenaltyParams::new(eps, 32.0, delta).unwrap();
            let scale = 1.0 + eps;
            let u = random_positive_field(&dom, &mut rng, 0.0, 1.2);
            let u_prev = random_positive_field(&dom, &mut rng, 0.0, 1.2);
            let g_prev = random_positive_field(&dom, &mut rng, 0.0, 0.3);
            let mut sig_a = VectorField::zeros(&dom);
            let mut g_a = ScalarField::zeros(&dom);
            energy_gradient_into(&u, &p, &mut sig_a, &mut g_a);
            let mut sig_b = VectorField::zeros(&dom);
            let mut g_b = ScalarField::zeros(&dom);
            let st =
                gradient_stats_into(&u, &p, scale, &u_prev, &g_prev, &mut sig_b, &mut g_b);
            assert_eq!(sig_a.vx(), sig_b.vx());
            assert_eq!(sig_a.vy(), sig_b.vy());
            // Scaling inside the sweep is the same arithmetic as scaling after.
            for (a, b) in g_a.values().iter().zip(g_b.values()) {
                assert_eq!((a * scale).to_bits(), b.to_bits(), "eps={eps}");
            }
            // The fused reductions reproduce a straight pass over the arrays
            // up to summation order (the sweep accumulates in lanes).
            let h2 = dom.h() * dom.h();
            let (mut pg2, mut mass) = (0.0, 0.0);
            let (mut ss, mut sy, mut yy, mut sy_abs) = (0.0, 0.0, 0.0, 0.0);
            for (((&uc, &gc), &upc), &gpc) in u
                .values()
                .iter()
                .zip(g_b.values())
                .zip(u_prev.values())
                .zip(g_prev.values())
            {
                let pg = if uc > 0.0 { gc } else { gc.min(0.0) };
                pg2 += pg * pg;
                mass += uc;
                let s = uc - upc;
                let y = gc - gpc;
                ss += s * s;
                sy += s * y;
                yy += y * y;
                sy_abs += (s * y).abs();
            }
            let rel = |got: f64, want: f64, scale: f64| {
                assert!(
                    (got - want).abs() <= 1e-12 * scale.max(1e-30),
                    "eps={eps}: {got} vs {want}"
                );
            };
            rel(st.pg_norm, (h2 * pg2).sqrt(), (h2 * pg2).sqrt());
            rel(st.mass, h2 * mass, h2 * mass);
            rel(st.ss, ss, ss);
            rel(st.sy, sy, sy_abs);
            rel(st.yy, yy, yy);
        }
    }

    #[test]
    fn fused_probe_matches_clamp_then_energy() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let dom = full_square(8, 0.25);
        for &(eps, delta) in &[(0.0, 1e-3), (0.5, 1e-2)] {
            let p = PenaltyParams::new(eps, 16.0, delta).unwrap();
            let u = random_positive_field(&dom, &mut rng, 0.0, 1.0);
            // A gradient-shaped direction with both signs.
            let mut g = ScalarField::zeros(&dom);
            for j in 0..dom.ny() {
                for i in 0..dom.nx() {
                    if dom.is_interior(i, j) {
                        g.set(i, j, uniform(&mut rng) - 0.5);
                    }
                }
            }
            for &a in &[0.0, 0.3, 5.0] {
                let mut v = ScalarField::zeros(&dom);
                let (ev, dgd) = probe_energy_into(&u, &g, a, &p, &mut v);
                let mut v_ref = ScalarField::zeros(&dom);
                let mut dgd_ref = 0.0;
                for (k, (&uc, &gc)) in u.values().iter().zip(g.values()).enumerate() {
                    let t = (uc - a * gc).max(0.0);
                    v_ref.values_mut()[k] = t;
                    dgd_ref += gc * (t - uc);
                }
                dgd_ref *= dom.h() * dom.h();
                assert_eq!(v.values(), v_ref.values());
                let ev_ref = energy_unchecked(&v_ref, &p);
                // The pairing accumulates in lanes, so agreement is to
                // rounding, not to the bit.
                assert!(
                    (ev - ev_ref).abs() <= 1e-12 * ev_ref.abs().max(1.0),
                    "eps={eps} a={a}: {ev} vs {ev_ref}"
                );
                assert!(
                    (dgd - dgd_ref).abs() <= 1e-12 * dgd_ref.abs().max(1.0),
                    "eps={eps} a={a}: {dgd} vs {dgd_ref}"
                );
            }
        }
    }
}
