//! Radial and angular quadrature rules for singular integrals over `ℝ^d`, and
//! compensated summation.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use nalgebra::DVector;

use crate::error::{invalid, Result};

/// Widest panel used in the uniform part of a radial rule.
pub const UNIFORM_WIDTH: f64 = 0.5;

/// Neumaier's compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = NeumaierSum::default();
    for x in values {
        acc.add(x);
    }
    acc.value()
}

/// Gauss–Legendre nodes and weights on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Result<Vec<(f64, f64)>> {
    let degree = NonZeroUsize::new(n).ok_or_else(|| invalid("n", "need at least one node"))?;
    let rule = GaussLegendre::new(degree);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut out: Vec<(f64, f64)> = rule.iter().map(|&(x, w)| (mid + half * x, half * w)).collect();
    out.sort_by(|p, q| p.0.total_cmp(&q.0));
    Ok(out)
}

/// Nodes `ρ_j` and weights for `∫_{ρ_min}^{R} f(ρ) dρ`.
///
/// Below `near` the panels are dyadic, `[near 2^{-j-1}, near 2^{-j}]`, so that
/// integrands behaving like a power of `ρ` are resolved uniformly. Between
/// `near` and 1 the panels double in length; beyond that they have width at
/// most [`UNIFORM_WIDTH`]. `R/2` is always a breakpoint.
#[derive(Debug, Clone)]
pub struct RadialRule {
    pub rho_min: f64,
    pub far: f64,
    pub nodes: Vec<(f64, f64)>,
}

impl RadialRule {
    pub fn new(near: f64, far: f64, per_panel: usize, near_levels: u32) -> Result<Self> {
        if !(near > 0.0 && far.is_finite() && 2.0 * near < far) {
            return Err(invalid("near_radius", format!("need 0 < 2 near < far, got near={near}, far={far}")));
        }
        let mut breaks = Vec::new();
        let rho_min = near * 0.5f64.powi(near_levels as i32);
        for j in (0..=near_levels).rev() {
            breaks.push(near * 0.5f64.powi(j as i32));
        }
        let half = 0.5 * far;
        let mut r = near;
        while 2.0 * r <= 1.0_f64.min(half) {
            r *= 2.0;
            breaks.push(r);
        }
        uniform_breaks(&mut breaks, half);
        uniform_breaks(&mut breaks, far);

        let mut nodes = Vec::with_capacity(breaks.len() * per_panel);
        for w in breaks.windows(2) {
            nodes.extend(gauss_legendre(per_panel, w[0], w[1])?);
        }
        Ok(RadialRule { rho_min, far, nodes })
    }
}

fn uniform_breaks(breaks: &mut Vec<f64>, to: f64) {
    let from = *breaks.last().expect("non-empty breakpoints");
    if to <= from {
        return;
    }
    let n = ((to - from) / UNIFORM_WIDTH).ceil().max(1.0) as usize;
    for i in 1..=n {
        breaks.push(if i == n { to } else { from + (to - from) * i as f64 / n as f64 });
    }
}

/// One representative `θ` of an antipodal pair `{θ, −θ}` on the unit sphere,
/// with the surface weight of the pair.
#[derive(Debug, Clone)]
pub struct Direction {
    pub theta: DVector<f64>,
    pub weight: f64,
}

/// Surface area of the unit sphere in `ℝ^d`.
pub fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => {
            // |S^{d-1}| = 2π/(d−2) |S^{d-3}|
            2.0 * PI / (d as f64 - 2.0) * sphere_area(d - 2)
        }
    }
}

/// Antipodal pair representatives for `d ∈ {1, 2, 3}`; the weights sum to the
/// sphere area. In the plane, `n_angular` equispaced angles; in space, a
/// product of Gauss–Legendre nodes in `cos φ` (`n_angular/4`, rounded up to
/// an even count) and `n_angular/2` equispaced azimuths.
pub fn antipodal_directions(d: usize, n_angular: usize) -> Result<Vec<Direction>> {
    match d {
        1 => Ok(vec![Direction {
            theta: DVector::from_element(1, 1.0),
            weight: 2.0,
        }]),
        2 => {
            if n_angular < 2 || !n_angular.is_multiple_of(2) {
                return Err(invalid("n_angular", format!("need an even count >= 2, got {n_angular}")));
            }
            let h = 2.0 * PI / n_angular as f64;
            Ok((0..n_angular / 2)
                .map(|k| {
                    let a = h * k as f64;
                    Direction {
                        theta: DVector::from_vec(vec![a.cos(), a.sin()]),
                        weight: 2.0 * h,
                    }
                })
                .collect())
        }
        3 => {
            if n_angular < 4 || !n_angular.is_multiple_of(2) {
                return Err(invalid("n_angular", format!("need an even count >= 4, got {n_angular}")));
            }
            let m = 2 * n_angular.div_ceil(8);
            let n_phi = n_angular / 2;
            let h = 2.0 * PI / n_phi as f64;
            let mut out = Vec::with_capacity(m / 2 * n_phi);
            for (mu, w) in gauss_legendre(m, -1.0, 1.0)?.into_iter().filter(|p| p.0 > 0.0) {
                let r = (1.0 - mu * mu).sqrt();
                for k in 0..n_phi {
                    let a = h * k as f64;
                    out.push(Direction {
                        theta: DVector::from_vec(vec![r * a.cos(), r * a.sin(), mu]),
                        weight: 2.0 * w * h,
                    });
                }
            }
            Ok(out)
        }
        _ => Err(invalid("d", format!("velocity quadrature is available for d <= 3, got {d}"))),
    }
}
