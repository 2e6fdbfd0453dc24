//! The homogeneous Galilean group on `ℝ × ℝ^d × ℝ^d`.
//!
//! Elements are `z = (t, x, v)` with the law
//!
//! ```text
//! (t1, x1, v1) ∘ (t2, x2, v2) = (t1 + t2, x1 + x2 + t2 v1, v1 + v2)
//! ```
//!
//! identity `(0, 0, 0)` and inverse `(t, x, v)^{-1} = (-t, t v - x, -v)`. The
//! dilations `D_λ (t, x, v) = (λ^ϑ t, λ^{ϑ+1} x, λ v)` are group automorphisms and
//! the homogeneous norm `|t|^{1/ϑ} + |x|^{1/(ϑ+1)} + |v|` is 1-homogeneous
//! with respect to them.

use nalgebra::DVector;
use serde::ser::{Serialize, SerializeStruct, Serializer};

use crate::error::{invalid, Error, Result};

/// A group element `(t, x, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub t: f64,
    pub x: DVector<f64>,
    pub v: DVector<f64>,
}

impl Point {
    /// Builds a point, checking that `x` and `v` have the same length and every
    /// component is finite.
    pub fn new(t: f64, x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if x.len() != v.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: v.len(),
            });
        }
        if x.is_empty() {
            return Err(invalid("d", "spatial dimension must be at least 1"));
        }
        let p = Point {
            t,
            x: DVector::from_vec(x),
            v: DVector::from_vec(v),
        };
        if !p.is_finite() {
            return Err(Error::NonFinite("point components".into()));
        }
        Ok(p)
    }

    /// Convenience constructor for `d = 1`.
    pub fn scalar(t: f64, x: f64, v: f64) -> Self {
        Point {
            t,
            x: DVector::from_element(1, x),
            v: DVector::from_element(1, v),
        }
    }

    pub fn from_parts(t: f64, x: DVector<f64>, v: DVector<f64>) -> Self {
        debug_assert_eq!(x.len(), v.len());
        Point { t, x, v }
    }

    pub fn identity(d: usize) -> Self {
        Point {
            t: 0.0,
            x: DVector::zeros(d),
            v: DVector::zeros(d),
        }
    }

    /// Flat coordinates `(t, x_1..x_d, v_1..v_d)`.
    pub fn from_coords(coords: &[f64]) -> Result<Self> {
        if coords.len() < 3 || coords.len().is_multiple_of(2) {
            return Err(invalid(
                "coords",
                format!("expected 1 + 2d entries, found {}", coords.len()),
            ));
        }
        let d = (coords.len() - 1) / 2;
        Point::new(coords[0], coords[1..=d].to_vec(), coords[d + 1..].to_vec())
    }

    pub fn coords(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(1 + 2 * self.dim());
        out.push(self.t);
        out.extend(self.x.iter());
        out.extend(self.v.iter());
        out
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.iter().all(|c| c.is_finite()) && self.v.iter().all(|c| c.is_finite())
    }

    /// Largest absolute componentwise difference.
    pub fn max_abs_diff(&self, other: &Point) -> f64 {
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.coords().iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Fails unless the point has dimension `d`.
    pub fn check_dim(&self, d: usize) -> Result<()> {
        if self.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: self.dim(),
            });
        }
        Ok(())
    }
}

impl Serialize for Point {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("Point", 3)?;
        s.serialize_field("t", &self.t)?;
        s.serialize_field("x", self.x.as_slice())?;
        s.serialize_field("v", self.v.as_slice())?;
        s.end()
    }
}

/// Serializes a vector as a plain sequence.
pub fn serialize_vector<S: Serializer>(v: &DVector<f64>, serializer: S) -> std::result::Result<S::Ok, S::Error> {
    v.as_slice().serialize(serializer)
}

/// Structural parameters: the spatial dimension `d` and the formal degree `ϑ`
/// of the drift field.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Anisotropy {
    pub d: usize,
    pub theta: f64,
}

impl Anisotropy {
    pub fn new(d: usize, theta: f64) -> Result<Self> {
        if d == 0 {
            return Err(invalid("d", "must be at least 1"));
        }
        if !(theta.is_finite() && theta > 0.0) {
            return Err(invalid("theta", format!("must be positive and finite, got {theta}")));
        }
        Ok(Anisotropy { d, theta })
    }

    /// Anisotropy of the fractional prototype, `ϑ = 2s`.
    pub fn fractional(d: usize, s: f64) -> Result<Self> {
        Anisotropy::new(d, 2.0 * s)
    }
}

pub fn compose(z1: &Point, z2: &Point) -> Result<Point> {
    z2.check_dim(z1.dim())?;
    Ok(Point {
        t: z1.t + z2.t,
        x: &z1.x + &z2.x + &z1.v * z2.t,
        v: &z1.v + &z2.v,
    })
}

pub fn inverse(z: &Point) -> Point {
    Point {
        t: -z.t,
        x: &z.v * z.t - &z.x,
        v: -&z.v,
    }
}

pub fn dilate(lambda: f64, z: &Point, a: &Anisotropy) -> Result<Point> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(invalid("lambda", format!("dilation factor must be positive, got {lambda}")));
    }
    Ok(Point {
        t: lambda.powf(a.theta) * z.t,
        x: &z.x * lambda.powf(a.theta + 1.0),
        v: &z.v * lambda,
    })
}

/// Homogeneous norm `|t|^{1/ϑ} + |x|^{1/(ϑ+1)} + |v|` (Euclidean `|·|` on the
/// vector components).
pub fn hnorm(z: &Point, a: &Anisotropy) -> f64 {
    z.t.abs().powf(1.0 / a.theta) + z.x.norm().powf(1.0 / (a.theta + 1.0)) + z.v.norm()
}

/// Quasi-distance `d(z1, z2) = ‖z2^{-1} ∘ z1‖`.
pub fn qdist(z1: &Point, z2: &Point, a: &Anisotropy) -> Result<f64> {
    Ok(hnorm(&compose(&inverse(z2), z1)?, a))
}

/// Evaluates the max-type objective of the equivalent distance at a given `w`.
pub fn minmax_objective(z1: &Point, z2: &Point, w: &DVector<f64>, a: &Anisotropy) -> f64 {
    let dt = z1.t - z2.t;
    let transport = (&z1.x - &z2.x - w * dt).norm().powf(1.0 / (1.0 + a.theta));
    dt.abs()
        .powf(1.0 / a.theta)
        .max(transport)
        .max((&z1.v - w).norm())
        .max((&z2.v - w).norm())
}

const GOLDEN_TOL: f64 = 1e-13;

fn golden_section(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let scale = 1.0 + lo.abs().max(hi.abs());
    while (b - a) > GOLDEN_TOL * scale {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    // endpoints matter when the minimum sits on the boundary of the bracket
    [(lo, f(lo)), (hi, f(hi)), (c, fc), (d, fd)]
        .into_iter()
        .fold((lo, f64::INFINITY), |best, cand| if cand.1 < best.1 { cand } else { best })
}

/// The equivalent min-max distance
///
/// ```text
/// min_w max(|t1-t2|^{1/ϑ}, |x1-x2-w(t1-t2)|^{1/(1+ϑ)}, |v1-w|, |v2-w|).
/// ```
///
/// The objective is quasiconvex in `w`, so a minimizer lies in the convex hull
/// of the three "centres" `v1`, `v2` and `(x1-x2)/(t1-t2)`; the search runs over
/// that triangle by nested golden-section searches.
pub fn minmax_dist(z1: &Point, z2: &Point, a: &Anisotropy) -> Result<f64> {
    z1.check_dim(z2.dim())?;
    let dt = z1.t - z2.t;
    let mut centres = vec![z1.v.clone(), z2.v.clone()];
    if dt != 0.0 {
        centres.push((&z1.x - &z2.x) / dt);
    }
    let obj = |w: &DVector<f64>| minmax_objective(z1, z2, w, a);

    if z1.dim() == 1 {
        let lo = centres.iter().map(|c| c[0]).fold(f64::INFINITY, f64::min);
        let hi = centres.iter().map(|c| c[0]).fold(f64::NEG_INFINITY, f64::max);
        let (_, best) = golden_section(lo, hi, |w| obj(&DVector::from_element(1, w)));
        return Ok(best);
    }

    // w = c0 + p (c1 - c0) + q (c2 - c0) over the simplex p, q >= 0, p + q <= 1
    let c0 = centres[0].clone();
    let e1 = &centres[1] - &c0;
    let e2 = if centres.len() == 3 {
        &centres[2] - &c0
    } else {
        DVector::zeros(c0.len())
    };
    let point = |p: f64, q: f64| &c0 + &e1 * p + &e2 * q;
    let inner = |p: f64| golden_section(0.0, 1.0 - p, |q| obj(&point(p, q))).1;
    let (_, best) = golden_section(0.0, 1.0, inner);
    Ok(best)
}

/// Empirical lower bound for the quasi-triangle constant.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KappaEstimate {
    pub kappa: f64,
    pub used: usize,
    pub skipped: usize,
}

/// Denominators `d(z1,z2) + d(z2,z3)` below this are treated as degenerate.
pub const KAPPA_DEGENERATE: f64 = 1e-14;

pub fn estimate_kappa(samples: &[(Point, Point, Point)], a: &Anisotropy) -> Result<KappaEstimate> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("triple samples"));
    }
    let mut kappa: f64 = 0.0;
    let mut used = 0;
    let mut skipped = 0;
    for (z1, z2, z3) in samples {
        let denom = qdist(z1, z2, a)? + qdist(z2, z3, a)?;
        if denom < KAPPA_DEGENERATE {
            skipped += 1;
            continue;
        }
        kappa = kappa.max(qdist(z1, z3, a)? / denom);
        used += 1;
    }
    if used == 0 {
        return Err(Error::EmptyInput("non-degenerate triples"));
    }
    Ok(KappaEstimate { kappa, used, skipped })
}
