//! First eigenvalue and eigenfunctions of the 1-Laplacian on 2D domains.
//!
//! The eigenvalue problem `λ₁ = inf { ∫|∇u| : u ∈ W₀^{1,1}(Ω), ‖u‖₁ = 1 }`
//! coincides with the Cheeger problem: λ₁ equals the Cheeger constant
//! `h(Ω) = min_E perimeter(E)/area(E)`, and the minimizing sets ("eigensets")
//! carry characteristic-function eigenfunctions. This crate computes
//! approximate eigenpairs by minimizing the penalized, (1+ε)-regularized
//! functional
//!
//! ```text
//! I(u) = ∫ |∇u|^{1+ε}  +  n (∫ u^{1+ε} − 1)²
//! ```
//!
//! over nonnegative grid fields, with a continuation schedule driving ε → 0
//! and n → ∞, and then certifies the result a posteriori through the
//! optimality system: a dual field σ with ‖σ‖∞ ≤ 1 and σ·∇u = |∇u|, a
//! multiplier estimate λ̂ = −2n(∫u − 1), and an independent geometric oracle
//! for convex domains (inner-parallel-body characterization).
//!
//! Module map:
//!
//! * [`grid`] — rasterized domains and the discrete BV calculus (forward
//!   differences, exact-adjoint divergence, isotropic total variation with
//!   the relaxed boundary term realized by zero extension).
//! * [`energy`] — the δ-smoothed penalized functional and its first variation.
//! * [`solve`] — projected Barzilai–Borwein descent with warm-started
//!   continuation over (ε, n, δ).
//! * [`certificate`] — a-posteriori optimality diagnostics (dual feasibility,
//!   extremality gap, PDE residual, Rayleigh quotient).
//! * [`cheeger`] — exact Cheeger constants of convex domains by bisection on
//!   the inner-parallel-body area identity.
//! * [`levelset`] — superlevel-set sweeps extracting approximate eigensets
//!   from computed eigenfunctions.
//!
//! The crate is `no_std`-compatible (`alloc` required): disable default
//! features and enable `libm` to build without the standard library.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(not(any(feature = "std", feature = "libm")))]
compile_error!("one-lap-core needs a float-math backend: enable feature \"std\" or \"libm\"");

pub mod certificate;
pub mod cheeger;
pub mod energy;
pub mod grid;
pub mod levelset;
pub mod solve;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
