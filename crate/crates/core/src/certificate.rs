//! A-posteriori certification of a candidate optimizer via the optimality
//! system of the limit problem.
//!
//! A minimizer of the limit functional comes with a dual vector field σ
//! (the subgradient of the total variation) and a scalar multiplier. Three
//! scalars certify a candidate pair (u, σ):
//!
//! * **dual feasibility** — `sup |σ| ≤ 1` up to discretization slack; the
//!   solver's σ satisfies the bound exactly by construction, so a large
//!   excess means the field was corrupted, not merely unconverged;
//! * **extremality** — `⟨σ, ∇u⟩ = TV(u)` at an exact solution; the relative
//!   gap measures how far σ is from being a genuine TV subgradient at u;
//! * **PDE residual** — the Euler–Lagrange equation `−div σ = λ̂` holds on
//!   the support of u; the discrete residual is measured in the h-weighted
//!   L² norm over `{u > τ}` and normalized by `max(1, |λ̂|)`.
//!
//! The support threshold τ exists because the penalized iterates are only
//! asymptotically bang-bang: cells deep in the tail of the interface carry
//! no information about the limit equation. The default is a fixed fraction
//! (10⁻³) of the sup norm.
//!
//! No re-solving happens here: the certificate evaluates exactly the fields
//! the caller passes in.

use crate::grid::{gradient_into, ScalarField, VectorField};
use crate::{Error, Result};

#[allow(unused_imports)]
use num_traits::Float;

/// Fraction of ‖u‖∞ used as the default support threshold.
pub const DEFAULT_TAU_FRACTION: f64 = 1e-3;

/// The three certificate scalars plus the quantities they were computed
/// against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    /// max |σ| over the grid.
    pub sup_sigma: f64,
    /// |⟨σ, ∇u⟩ − TV(u)| / TV(u).
    pub extremality_gap: f64,
    /// Normalized Euler–Lagrange residual on the support.
    pub pde_residual: f64,
    /// Plain mass ∫u.
    pub mass: f64,
    /// Multiplier estimate λ̂ = −2n(∫u − 1).
    pub multiplier: f64,
    /// Rayleigh quotient TV(u)/∫|u|.
    pub rayleigh: f64,
}

impl Certificate {
    /// True when all three scalars sit inside the given bounds.
    pub fn within(&self, sup_bound: f64, gap_bound: f64, residual_bound: f64) -> bool {
        self.sup_sigma <= sup_bound
            && self.extremality_gap <= gap_bound
            && self.pde_residual <= residual_bound
    }
}

fn check_shapes(u: &ScalarField, sigma: &VectorField) -> Result<()> {
    let d = u.domain();
    let s = sigma.domain();
    if d.nx() != s.nx() || d.ny() != s.ny() {
        return Err(Error::ShapeMismatch {
            expected: (d.nx(), d.ny()),
            got: (s.nx(), s.ny()),
        });
    }
    Ok(())
}

/// max |σ|: the dual-feasibility check value.
pub fn sup_sigma(sigma: &VectorField) -> f64 {
    sigma.max_magnitude()
}

/// Relative extremality gap `|⟨σ, ∇u⟩ − TV(u)| / TV(u)`.
///
/// Errors with [`Error::DegenerateField`] when TV(u) = 0 — a flat field
/// pairs with every feasible σ, so the gap certifies nothing.
pub fn extremality_gap(sigma: &VectorField, u: &ScalarField) -> Result<f64> {
    check_shapes(u, sigma)?;
    let tv = u.total_variation();
    if tv == 0.0 {
        return Err(Error::DegenerateField { detail: "extremality gap undefined at TV(u) = 0" });
    }
    let mut grad = VectorField::zeros(u.domain());
    gradient_into(u, &mut grad);
    let pairing = sigma.dot(&grad);
    Ok((pairing - tv).abs() / tv)
}

/// Normalized Euler–Lagrange residual
/// `‖(−div σ + 2n(∫u − 1))·1_{u>τ}‖ / max(1, |λ̂|)` in the h-weighted L²
/// norm, with λ̂ the multiplier estimate of u.
pub fn pde_residual(u: &ScalarField, sigma: &VectorField, n: f64, tau: f64) -> Result<f64> {
    check_shapes(u, sigma)?;
    let dom = u.domain();
    let h2 = dom.h() * dom.h();
    let div = sigma.divergence();
    let pull = 2.0 * n * (u.integrate() - 1.0); // = −λ̂
    let mut sq = 0.0;
    for c in 0..u.values().len() {
        if u.values()[c] > tau {
            let r = -div.values()[c] + pull;
            sq += r * r;
        }
    }
    let norm = (h2 * sq).sqrt();
    Ok(norm / (-pull).abs().max(1.0))
}

/// Rayleigh quotient `TV(u) / ∫|u|`.
///
/// Errors with [`Error::DegenerateField`] on zero mass.
pub fn rayleigh_quotient(u: &ScalarField) -> Result<f64> {
    let h2 = u.domain().h() * u.domain().h();
    let mass_abs: f64 = u.values().iter().map(|v| v.abs()).sum::<f64>() * h2;
    if mass_abs == 0.0 {
        return Err(Error::DegenerateField { detail: "Rayleigh quotient undefined at ∫|u| = 0" });
    }
    Ok(u.total_variation() / mass_abs)
}

/// Assemble the full certificate for (u, σ) at penalty weight n.
///
/// `tau = None` selects the default threshold `10⁻³·‖u‖∞`. Degenerate
/// candidates (zero mass or zero TV) are rejected rather than certified.
pub fn build_certificate(
    u: &ScalarField,
    sigma: &VectorField,
    n: f64,
    tau: Option<f64>,
) -> Result<Certificate> {
    check_shapes(u, sigma)?;
    let tau = tau.unwrap_or(DEFAULT_TAU_FRACTION * u.max_abs());
    let rayleigh = rayleigh_quotient(u)?;
    let gap = extremality_gap(sigma, u)?;
    let residual = pde_residual(u, sigma, n, tau)?;
    Ok(Certificate {
        sup_sigma: sup_sigma(sigma),
        extremality_gap: gap,
        pde_residual: residual,
        mass: u.integrate(),
        multiplier: crate::solve::multiplier_estimate(u, n),
        rayleigh,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{sigma_field, PenaltyParams};
    use crate::grid::{GridDomain, ScalarField, ShapeSpec};
    use crate::solve::initial_bump;
    use alloc::sync::Arc;

    fn square(res: u32) -> Arc<GridDomain> {
        GridDomain::rasterize(&ShapeSpec::Rectangle { width: 1.0, height: 1.0 }, res).unwrap()
    }

    fn uniform(dom: &Arc<GridDomain>, value: f64) -> ScalarField {
        let mut u = ScalarField::zeros(dom);
        for j in 0..dom.ny() {
            for i in 0..dom.nx() {
                if dom.is_interior(i, j) {
                    u.set(i, j, value);
                }
            }
        }
        u
    }

    #[test]
    fn sup_sigma_is_max_magnitude() {
        let dom = square(8);
        let mut s = VectorField::zeros(&dom);
        s.set(3, 3, (0.6, -0.8));
        s.set(4, 4, (0.1, 0.0));
        assert!((sup_sigma(&s) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn near_unit_sigma_closes_the_gap() {
        // σ built from u itself at ε = 0 with tiny δ is |∇u|/√(|∇u|²+δ²)
        // aligned with ∇u: the pairing differs from TV by O(δ) only.
        let dom = GridDomain::rasterize(&ShapeSpec::Disk { radius: 1.0 }, 24).unwrap();
        let u = initial_bump(&dom, 7);
        let p = PenaltyParams::new(0.0, 8.0, 1e-9).unwrap();
        let s = sigma_field(&u, &p).unwrap();
        let gap = extremality_gap(&s, &u).unwrap();
        assert!(gap <= 1e-6, "gap {gap}");
        assert!(sup_sigma(&s) <= 1.0 + 1e-12);
    }

    #[test]
    fn zero_tv_gap_is_rejected() {
        let dom = square(8);
        let u = ScalarField::zeros(&dom);
        let s = VectorField::zeros(&dom);
        assert!(matches!(extremality_gap(&s, &u), Err(Error::DegenerateField { .. })));
    }

    #[test]
    fn residual_of_uniform_field_with_zero_sigma() {
        // σ = 0, u ≡ 0.5 on the unit square: residual field is the constant
        // 2n(m−1) = −n on every support cell; h-weighted L² norm over the
        // unit of area is n, and λ̂ = n normalizes it to exactly 1.
        let dom = square(16);
        let u = uniform(&dom, 0.5);
        let s = VectorField::zeros(&dom);
        let n = 4.0;
        let r = pde_residual(&u, &s, n, 1e-3).unwrap();
        assert!((r - 1.0).abs() < 1e-12, "residual {r}");
    }

    #[test]
    fn tau_masks_the_tail() {
        // Left half at 1, right half at 10⁻⁶: with τ = 10⁻³ only the left
        // half contributes; with τ = 0 both halves do. σ = 0 makes the
        // residual field constant, so the norms differ by exactly √2.
        let dom = square(16);
        let mut u = ScalarField::zeros(&dom);
        let mid = dom.nx() / 2;
        for j in 0..dom.ny() {
            for i in 0..dom.nx() {
                if dom.is_interior(i, j) {
                    u.set(i, j, if i < mid { 1.0 } else { 1e-6 });
                }
            }
        }
        let s = VectorField::zeros(&dom);
        let masked = pde_residual(&u, &s, 4.0, 1e-3).unwrap();
        let full = pde_residual(&u, &s, 4.0, 0.0).unwrap();
        assert!((full / masked - core::f64::consts::SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn rayleigh_is_scale_invariant() {
        let dom = square(16);
        let u = uniform(&dom, 1.0);
        let mut u3 = u.clone();
        for v in u3.values_mut() {
            *v *= 3.0;
        }
        let r1 = rayleigh_quotient(&u).unwrap();
        let r3 = rayleigh_quotient(&u3).unwrap();
        assert!((r1 - r3).abs() <= 1e-12 * r1);
        // Indicator of the full mask: boundary-only TV over unit mass.
        let expected = 4.0 - (2.0 - core::f64::consts::SQRT_2) * dom.h();
        assert!((r1 - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_mass_rayleigh_is_rejected() {
        let dom = square(8);
        let u = ScalarField::zeros(&dom);
        assert!(matches!(rayleigh_quotient(&u), Err(Error::DegenerateField { .. })));
    }

    #[test]
    fn build_certificate_populates_consistently() {
        let dom = GridDomain::rasterize(&ShapeSpec::Disk { radius: 1.0 }, 24).unwrap();
        let u = initial_bump(&dom, 11);
        let p = PenaltyParams::new(0.0, 32.0, 1e-4).unwrap();
        let s = sigma_field(&u, &p).unwrap();
        let cert = build_certificate(&u, &s, 32.0, None).unwrap();
        assert_eq!(cert.sup_sigma, sup_sigma(&s));
        assert_eq!(cert.extremality_gap, extremality_gap(&s, &u).unwrap());
        let tau = DEFAULT_TAU_FRACTION * u.max_abs();
        assert_eq!(cert.pde_residual, pde_residual(&u, &s, 32.0, tau).unwrap());
        assert_eq!(cert.rayleigh, rayleigh_quotient(&u).unwrap());
        assert!((cert.mass - u.integrate()).abs() < 1e-15);
        assert!(
            (cert.multiplier - crate::solve::multiplier_estimate(&u, 32.0)).abs() < 1e-15
        );
        assert!(cert.within(1.0 + 1e-9, 1.0, f64::INFINITY));
        assert!(!cert.within(0.0, 1.0, f64::INFINITY));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dom8 = square(8);
        let dom16 = square(16);
        let u = uniform(&dom16, 1.0);
        let s = VectorField::zeros(&dom8);
        assert!(matches!(extremality_gap(&s, &u), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(pde_residual(&u, &s, 4.0, 0.0), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(
            build_certificate(&u, &s, 4.0, None),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
