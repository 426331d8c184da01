//! Geometric Cheeger-constant oracle for convex planar domains.
//!
//! For a convex domain Ω ⊂ ℝ², the Cheeger constant `h(Ω) = min_E P(E)/|E|`
//! has an exact characterization with no PDE content: the optimal radius
//! `r = 1/h` is the unique root of
//!
//! ```text
//! F(r) = |Ω_r| − π r²,     Ω_r = { x ∈ Ω : dist(x, ∂Ω) > r },
//! ```
//!
//! and the Cheeger set itself is the Minkowski sum `Ω_r ⊕ B_r` — the inner
//! parallel body rounded back out by the same radius. On convex polygons the
//! inner parallel body is exactly the intersection of the inward-offset edge
//! half-planes, so `F` is computable in closed form up to a polygon clip and
//! a shoelace sum, and a bisection pins the root to near machine precision.
//!
//! This module is the solver's independent ground truth: nothing here touches
//! grids, energies, or descent.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::{Error, Result};

/// Relative tolerance on `F(r)` at which the bisection stops.
const ROOT_TOL: f64 = 1e-12;

/// A strictly convex polygon, vertices in counter-clockwise order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<(f64, f64)>,
}

impl ConvexPolygon {
    /// Validate and build. Requires ≥ 3 finite vertices, a strict left turn
    /// at every corner (no collinear triples, counter-clockwise order), and
    /// total turning of exactly one revolution (rules out star traversals,
    /// which also turn left everywhere).
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<ConvexPolygon> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::InvalidPolygon { detail: format!("{n} vertices, need >= 3") });
        }
        if vertices.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::InvalidPolygon { detail: "non-finite vertex".into() });
        }
        let scale = vertices
            .iter()
            .map(|&(x, y)| x.abs().max(y.abs()))
            .fold(0.0_f64, f64::max)
            .max(1e-300);
        let mut turning = 0.0;
        for k in 0..n {
            let a = vertices[k];
            let b = vertices[(k + 1) % n];
            let c = vertices[(k + 2) % n];
            let e1 = (b.0 - a.0, b.1 - a.1);
            let e2 = (c.0 - b.0, c.1 - b.1);
            let len1 = (e1.0 * e1.0 + e1.1 * e1.1).sqrt();
            if len1 <= 1e-12 * scale {
                return Err(Error::InvalidPolygon {
                    detail: format!("repeated or near-repeated vertex at index {k}"),
                });
            }
            let cross = e1.0 * e2.1 - e1.1 * e2.0;
            if cross <= 1e-12 * scale * scale {
                return Err(Error::InvalidPolygon {
                    detail: format!(
                        "no strict left turn at vertex {} (collinear, reflex, or clockwise)",
                        (k + 1) % n
                    ),
                });
            }
            turning += e2.1.atan2(e2.0) - e1.1.atan2(e1.0) + signed_wrap(e1, e2);
        }
        // All-left-turn traversals of star polygons wind more than once.
        if (turning - core::f64::consts::TAU).abs() > 1e-6 {
            return Err(Error::InvalidPolygon {
                detail: format!("total turning {turning:.6} rad, expected 2π (self-intersecting?)"),
            });
        }
        Ok(ConvexPolygon { vertices })
    }

    /// Regular n-gon of circumradius `radius`, centered at the origin.
    /// Convenient polygonal disk approximation.
    pub fn regular(n: usize, radius: f64) -> Result<ConvexPolygon> {
        if n < 3 || !(radius > 0.0) {
            return Err(Error::InvalidPolygon {
                detail: format!("regular({n}, {radius}): need n >= 3 and radius > 0"),
            });
        }
        let verts = (0..n)
            .map(|k| {
                let t = core::f64::consts::TAU * k as f64 / n as f64;
                (radius * t.cos(), radius * t.sin())
            })
            .collect();
        ConvexPolygon::new(verts)
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    /// Scaled copy (about the origin), `s > 0`.
    pub fn scaled(&self, s: f64) -> ConvexPolygon {
        ConvexPolygon { vertices: self.vertices.iter().map(|&(x, y)| (s * x, s * y)).collect() }
    }

    /// Axis-aligned bounding box `(xmin, ymin, xmax, ymax)`.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &self.vertices {
            b.0 = b.0.min(x);
            b.1 = b.1.min(y);
            b.2 = b.2.max(x);
            b.3 = b.3.max(y);
        }
        b
    }

    /// Strict interior test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let n = self.vertices.len();
        for k in 0..n {
            let a = self.vertices[k];
            let b = self.vertices[(k + 1) % n];
            // Left-of-edge test; on-edge counts as outside (strict).
            if (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0) <= 0.0 {
                return false;
            }
        }
        true
    }

    /// Polygon area by the shoelace formula (positive: vertices are CCW).
    pub fn area(&self) -> f64 {
        shoelace(&self.vertices)
    }

    /// Total edge length.
    pub fn perimeter(&self) -> f64 {
        poly_perimeter(&self.vertices)
    }
}

/// atan2 differences live in (−π, π] only up to wrapping; left turns of a
/// convex traversal are in (0, π), so wrap once when the raw difference
/// leaves that band.
fn signed_wrap(e1: (f64, f64), e2: (f64, f64)) -> f64 {
    let raw = e2.1.atan2(e2.0) - e1.1.atan2(e1.0);
    if raw <= 0.0 {
        core::f64::consts::TAU
    } else if raw > core::f64::consts::TAU {
        -core::f64::consts::TAU
    } else {
        0.0
    }
}

fn shoelace(verts: &[(f64, f64)]) -> f64 {
    let n = verts.len();
    if n < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for k in 0..n {
        let (x0, y0) = verts[k];
        let (x1, y1) = verts[(k + 1) % n];
        twice += x0 * y1 - x1 * y0;
    }
    0.5 * twice
}

fn poly_perimeter(verts: &[(f64, f64)]) -> f64 {
    let n = verts.len();
    let mut p = 0.0;
    for k in 0..n {
        let (x0, y0) = verts[k];
        let (x1, y1) = verts[(k + 1) % n];
        p += ((x1 - x0) * (x1 - x0) + (y1 - y0) * (y1 - y0)).sqrt();
    }
    p
}

/// Clip `poly` by the inward offsets of its own edges: the vertex list of
/// `{x : dist(x, ∂poly) ≥ r}`. Possibly empty or degenerate.
fn clip_inner(poly: &ConvexPolygon, r: f64) -> Vec<(f64, f64)> {
    let mut current = poly.vertices.clone();
    let n = poly.vertices.len();
    for k in 0..n {
        if current.len() < 3 {
            return Vec::new();
        }
        let a = poly.vertices[k];
        let b = poly.vertices[(k + 1) % n];
        let (tx, ty) = (b.0 - a.0, b.1 - a.1);
        let len = (tx * tx + ty * ty).sqrt();
        // Inward normal of a CCW edge is its left normal.
        let (nx, ny) = (-ty / len, tx / len);
        // Keep the side { (x−a)·n ≥ r }.
        let side = |p: (f64, f64)| (p.0 - a.0) * nx + (p.1 - a.1) * ny - r;
        let mut out = Vec::with_capacity(current.len() + 1);
        for i in 0..current.len() {
            let p = current[i];
            let q = current[(i + 1) % current.len()];
            let (sp, sq) = (side(p), side(q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp > 0.0 && sq < 0.0) || (sp < 0.0 && sq > 0.0) {
                let t = sp / (sp - sq);
                out.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
            }
        }
        current = out;
    }
    current
}

/// Area of the inner parallel body `{x ∈ poly : dist(x, ∂poly) > r}`.
///
/// Exact on convex polygons (intersection of inward-offset half-planes plus
/// the shoelace formula). Returns `0` once `r` reaches the inradius and the
/// body vanishes.
pub fn inner_parallel_area(poly: &ConvexPolygon, r: f64) -> Result<f64> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidParameter {
            name: "r",
            value: r,
            requirement: "finite and >= 0",
        });
    }
    if r == 0.0 {
        return Ok(poly.area());
    }
    let inner = clip_inner(poly, r);
    Ok(shoelace(&inner).max(0.0))
}

/// The Cheeger constant of a convex polygon together with the geometry of
/// its Cheeger set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheegerResult {
    /// The Cheeger constant `h = min_E P(E)/|E|`.
    pub h: f64,
    /// Rounding radius of the Cheeger set, `r = 1/h`.
    pub r: f64,
    /// Area of the rounded Cheeger set `Ω_r ⊕ B_r`.
    pub area: f64,
    /// Perimeter of the rounded Cheeger set.
    pub perimeter: f64,
}

/// Cheeger constant of a convex polygon by bisection on
/// `F(r) = inner_parallel_area(r) − πr²`.
///
/// `F(0) = area > 0` and `F(√(area/π)) < 0` (the inner body is strictly
/// smaller than the polygon), so the bracket is always valid; `F` is strictly
/// decreasing, so the root is unique. The rounded Cheeger set's area and
/// perimeter come from the Steiner formula for the Minkowski sum with a disk:
/// `A = A_in + r·P_in + πr²`, `P = P_in + 2πr`.
pub fn cheeger_constant(poly: &ConvexPolygon) -> Result<CheegerResult> {
    let area = poly.area();
    let mut lo = 0.0_f64;
    let mut hi = (area / core::f64::consts::PI).sqrt();
    let f = |r: f64| -> Result<f64> {
        Ok(inner_parallel_area(poly, r)? - core::f64::consts::PI * r * r)
    };
    if !(f(lo)? > 0.0 && f(hi)? < 0.0) {
        return Err(Error::InvalidPolygon {
            detail: "bisection bracket failure (degenerate geometry?)".into(),
        });
    }
    let mut r = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fr = f(r)?;
        if fr.abs() <= ROOT_TOL * area {
            break;
        }
        if fr > 0.0 {
            lo = r;
        } else {
            hi = r;
        }
        r = 0.5 * (lo + hi);
    }
    let inner = clip_inner(poly, r);
    let (a_in, p_in) = (shoelace(&inner).max(0.0), poly_perimeter(&inner));
    let rounded_area = a_in + r * p_in + core::f64::consts::PI * r * r;
    let rounded_perimeter = p_in + core::f64::consts::TAU * r;
    Ok(CheegerResult { h: 1.0 / r, r, area: rounded_area, perimeter: rounded_perimeter })
}

/// Cheeger constant of the disk of radius `R`: exactly `2/R`
/// (by symmetry the area identity `π(R−r)·…` forces `r = R/2`).
pub fn cheeger_constant_disk(radius: f64) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter {
            name: "radius",
            value: radius,
            requirement: "radius > 0",
        });
    }
    Ok(2.0 / radius)
}
