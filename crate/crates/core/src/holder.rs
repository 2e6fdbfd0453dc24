//! Discretized intrinsic Hölder seminorms.
//!
//! Suprema over `z` and `τ` are replaced by maxima over a [`SampleGrid`], so
//! every value returned here is a lower bound of the true seminorm.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::field::{DiffOp, FunctionHandle};
use crate::flows::{exp_y, exp_y_drift};
use crate::group::{self, Anisotropy, Point};

const ALPHA_TOL: f64 = 1e-12;

/// Sample points and nonzero flow times.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    pub points: Vec<Point>,
    pub taus: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub n_points: usize,
    pub n_taus: usize,
    pub tau_min: f64,
    pub tau_max: f64,
}

fn radical_inverse(mut n: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while n > 0 {
        out += (n % base) as f64 * inv;
        n /= base;
        inv /= base as f64;
    }
    out
}

const PRIMES: [u64; 15] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47];

impl SampleGrid {
    pub fn new(points: Vec<Point>, taus: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("grid points"));
        }
        if taus.is_empty() {
            return Err(Error::EmptyInput("grid taus"));
        }
        if let Some(t) = taus.iter().find(|t| !(t.is_finite() && **t != 0.0)) {
            return Err(invalid("taus", format!("flow times must be finite and nonzero, got {t}")));
        }
        let d = points[0].dim();
        for p in &points {
            p.check_dim(d)?;
        }
        Ok(SampleGrid { points, taus })
    }

    /// `n` magnitudes log-spaced in `[lo, hi]`, each with both signs.
    pub fn symmetric_taus(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        let n = n.max(2);
        let step = (hi / lo).ln() / (n - 1) as f64;
        let mut out = Vec::with_capacity(2 * n);
        for i in 0..n {
            let m = lo * (step * i as f64).exp();
            out.push(m);
            out.push(-m);
        }
        out
    }

    /// Halton points of the unit homogeneous-norm ball (rejection from the
    /// cube `[−1, 1]^{1+2d}`), paired with [`SampleGrid::symmetric_taus`].
    pub fn halton_ball(a: &Anisotropy, n_points: usize, n_taus: usize, tau_range: (f64, f64)) -> Self {
        let dims = 1 + 2 * a.d;
        assert!(dims <= PRIMES.len(), "dimension too large for the Halton bases");
        let mut points = Vec::with_capacity(n_points);
        let mut index = 1u64;
        let budget = 500 * n_points as u64 + 1000;
        let draw = |i: u64| -> Point {
            let c: Vec<f64> = (0..dims).map(|k| 2.0 * radical_inverse(i, PRIMES[k]) - 1.0).collect();
            Point::from_coords(&c).expect("finite coordinates")
        };
        while points.len() < n_points && index < budget {
            let p = draw(index);
            index += 1;
            if group::hnorm(&p, a) <= 1.0 {
                points.push(p);
            }
        }
        // in high dimension the ball is a thin part of the cube; fill up with
        // radially rescaled draws
        let missing = n_points - points.len();
        for k in 0..missing {
            let p = draw(index);
            index += 1;
            let r = group::hnorm(&p, a).max(f64::MIN_POSITIVE);
            let target = (k as f64 + 0.5) / missing as f64;
            points.push(group::dilate(target / r, &p, a).expect("positive factor"));
        }
        SampleGrid {
            points,
            taus: SampleGrid::symmetric_taus(tau_range.0, tau_range.1, n_taus),
        }
    }

    /// 2000 points of the unit ball and 40 magnitudes in `[1e-4, 1]`.
    pub fn default_for(a: &Anisotropy) -> Self {
        SampleGrid::halton_ball(a, 2000, 40, (1e-4, 1.0))
    }

    pub fn min_abs_tau(&self) -> f64 {
        self.taus.iter().fold(f64::INFINITY, |m, t| m.min(t.abs()))
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            n_points: self.points.len(),
            n_taus: self.taus.len(),
            tau_min: self.min_abs_tau(),
            tau_max: self.taus.iter().fold(0.0, |m: f64, t| m.max(t.abs())),
        }
    }

    /// Keeps only the flow times with `|τ| < delta`.
    pub fn restricted(&self, delta: f64) -> Result<SampleGrid> {
        let taus: Vec<f64> = self.taus.iter().copied().filter(|t| t.abs() < delta).collect();
        SampleGrid::new(self.points.clone(), taus)
    }

    /// Finite-difference derivatives with step `min |τ| / 10` and depth 2.
    pub fn differentiable(&self, u: &FunctionHandle) -> FunctionHandle {
        u.with_finite_differences(self.min_abs_tau() / 10.0, 2)
    }
}

/// `max |u(flow(τ, z)) − u(z)| / |τ|^p` over the grid.
fn flow_ratio_max(u: &FunctionHandle, grid: &SampleGrid, power: f64, flow: impl Fn(f64, &Point) -> Point + Sync) -> Result<f64> {
    grid.points
        .par_iter()
        .map(|z| {
            let base = u.try_eval(z)?;
            let mut best: f64 = 0.0;
            for &tau in &grid.taus {
                let moved = u.try_eval(&flow(tau, z))?;
                best = best.max((moved - base).abs() / tau.abs().powf(power));
            }
            Ok(best)
        })
        .try_reduce(|| 0.0, |p, q| Ok(p.max(q)))
}

fn clamp_alpha(alpha: f64, upper: f64, name: &'static str) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= upper + ALPHA_TOL) {
        return Err(invalid(name, format!("must lie in ]0, {upper}], got {alpha}")));
    }
    Ok(alpha.min(upper))
}

/// `max |u(e^{τZ_i} z) − u(z)| / |τ|^α` for `α ∈ ]0, 1]`.
pub fn seminorm_z(u: &FunctionHandle, i: usize, alpha: f64, grid: &SampleGrid) -> Result<f64> {
    let alpha = clamp_alpha(alpha, 1.0, "alpha")?;
    if i >= u.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            found: i + 1,
        });
    }
    flow_ratio_max(u, grid, alpha, |tau, z| {
        let mut out = z.clone();
        out.v[i] += tau;
        out
    })
}

/// `max |u(e^{τY} z) − u(z)| / |τ|^{α/ϑ}` for `α ∈ ]0, ϑ]`.
pub fn seminorm_y(u: &FunctionHandle, alpha: f64, grid: &SampleGrid, a: &Anisotropy) -> Result<f64> {
    let alpha = clamp_alpha(alpha, a.theta, "alpha")?;
    flow_ratio_max(u, grid, alpha / a.theta, exp_y)
}

/// Value of the recursive seminorm and the branches taken to compute it.
#[derive(Debug, Clone, Serialize)]
pub struct SeminormReport {
    pub alpha: f64,
    pub theta: f64,
    pub value: f64,
    /// One entry per recursion node, depth first.
    pub case_path: Vec<String>,
    pub grid_spec: GridSpec,
    /// Grid maxima never exceed the true supremum.
    pub lower_bound: bool,
    /// `δ_{Ω₀}` when the flow times were restricted to a subdomain.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

fn recurse(u: &FunctionHandle, alpha: f64, grid: &SampleGrid, a: &Anisotropy, path: &mut Vec<String>) -> Result<f64> {
    let theta = a.theta;
    let lo = theta.min(1.0);
    let hi = theta.max(1.0);
    let name = u.label();
    let d = a.d;
    let sum_z = || (0..d).map(|i| seminorm_z(u, i, alpha, grid)).sum::<Result<f64>>();
    if alpha <= lo + ALPHA_TOL {
        path.push(format!("{name} @ {alpha:.6}: i"));
        return Ok(seminorm_y(u, alpha, grid, a)? + sum_z()?);
    }
    if alpha <= hi + ALPHA_TOL && theta < 1.0 {
        path.push(format!("{name} @ {alpha:.6}: ii (theta < 1)"));
        let yu = u.derivative(&DiffOp::Y)?;
        return Ok(recurse(&yu, alpha - theta, grid, a, path)? + sum_z()?);
    }
    if alpha <= hi + ALPHA_TOL && theta > 1.0 {
        path.push(format!("{name} @ {alpha:.6}: ii (theta > 1)"));
        let mut total = seminorm_y(u, alpha, grid, a)?;
        for i in 0..d {
            let zu = u.derivative(&DiffOp::V(i))?;
            total += recurse(&zu, alpha - 1.0, grid, a, path)?;
        }
        return Ok(total);
    }
    path.push(format!("{name} @ {alpha:.6}: iii"));
    let yu = u.derivative(&DiffOp::Y)?;
    let mut total = recurse(&yu, alpha - theta, grid, a, path)?;
    for i in 0..d {
        let zu = u.derivative(&DiffOp::V(i))?;
        total += recurse(&zu, alpha - 1.0, grid, a, path)?;
    }
    Ok(total)
}

/// The recursive `C^α` seminorm: case i for `α ≤ min(1, ϑ)`, case ii between
/// `min(1, ϑ)` and `max(1, ϑ)` (empty when `ϑ = 1`), case iii above.
pub fn seminorm_c_alpha(u: &FunctionHandle, alpha: f64, grid: &SampleGrid, a: &Anisotropy) -> Result<SeminormReport> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid("alpha", format!("must be positive, got {alpha}")));
    }
    if u.dim() != a.d {
        return Err(Error::DimensionMismatch {
            expected: a.d,
            found: u.dim(),
        });
    }
    let mut case_path = Vec::new();
    let value = recurse(u, alpha, grid, a, &mut case_path)?;
    Ok(SeminormReport {
        alpha,
        theta: a.theta,
        value,
        case_path,
        grid_spec: grid.spec(),
        lower_bound: true,
        delta: None,
    })
}

/// An open box `Π (lower_j, upper_j)` in `(t, x, v)` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxDomain {
    pub lower: Point,
    pub upper: Point,
}

impl BoxDomain {
    pub fn new(lower: Point, upper: Point) -> Result<Self> {
        upper.check_dim(lower.dim())?;
        if lower.coords().iter().zip(upper.coords()).any(|(l, u)| !(*l < u)) {
            return Err(invalid("box", "lower bounds must be below upper bounds"));
        }
        Ok(BoxDomain { lower, upper })
    }

    /// `(−r, r)^{1+2d}`
    pub fn cube(d: usize, r: f64) -> Result<Self> {
        let lo = Point::from_coords(&vec![-r; 1 + 2 * d])?;
        let hi = Point::from_coords(&vec![r; 1 + 2 * d])?;
        BoxDomain::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lower.dim()
    }

    pub fn contains(&self, z: &Point) -> bool {
        let (lo, hi) = (self.lower.coords(), self.upper.coords());
        z.dim() == self.dim() && z.coords().iter().enumerate().all(|(k, c)| lo[k] < *c && *c < hi[k])
    }

    pub fn contains_closed(&self, z: &Point) -> bool {
        let (lo, hi) = (self.lower.coords(), self.upper.coords());
        z.dim() == self.dim() && z.coords().iter().enumerate().all(|(k, c)| lo[k] <= *c && *c <= hi[k])
    }

    /// `true` when the closure of `self` lies inside the open box `outer`.
    pub fn compactly_inside(&self, outer: &BoxDomain) -> bool {
        outer.contains(&self.lower) && outer.contains(&self.upper)
    }
}

/// The flows entering `δ_z`: `Y` of the Galilean group or `Y_B` of a drift.
#[derive(Debug, Clone, Copy)]
pub enum Flows<'a> {
    Homogeneous,
    Drift(&'a DMatrix<f64>),
}

const MARCH_STEP: f64 = 1.0 / 256.0;
const BISECT_TOL: f64 = 1e-10;

/// First `δ ∈ ]0, 1]` at which `flow(±δ)` leaves the box, capped at 1.
fn exit_time(inside: impl Fn(f64) -> bool) -> f64 {
    let mut best: f64 = 1.0;
    for sign in [1.0, -1.0] {
        let mut prev = 0.0;
        let mut k = 1;
        while (k as f64) * MARCH_STEP <= 1.0 + 1e-15 {
            let delta = k as f64 * MARCH_STEP;
            if !inside(sign * delta) {
                let (mut lo, mut hi) = (prev, delta);
                while hi - lo > BISECT_TOL {
                    let mid = 0.5 * (lo + hi);
                    if inside(sign * mid) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                best = best.min(lo);
                break;
            }
            prev = delta;
            k += 1;
        }
    }
    best
}

/// `δ_z`: the largest `δ̄ ≤ 1` such that every `e^{δZ_i}z` and `e^{δY}z`,
/// `|δ| ≤ δ̄`, stays in `Ω`. Closed form for the Galilean flows, marching and
/// bisection (resolution `1e-10`) for a drift.
pub fn delta_z(z: &Point, omega: &BoxDomain, flows: Flows<'_>) -> Result<f64> {
    if !omega.contains(z) {
        return Err(Error::NotInDomain(format!("{:?}", z.coords())));
    }
    let d = z.dim();
    let (lo, hi) = (&omega.lower, &omega.upper);
    let mut best: f64 = 1.0;
    for i in 0..d {
        best = best.min(z.v[i] - lo.v[i]).min(hi.v[i] - z.v[i]);
    }
    match flows {
        Flows::Homogeneous => {
            best = best.min(z.t - lo.t).min(hi.t - z.t);
            for j in 0..d {
                let speed = z.v[j].abs();
                if speed > 0.0 {
                    best = best.min((z.x[j] - lo.x[j]).min(hi.x[j] - z.x[j]) / speed);
                }
            }
        }
        Flows::Drift(b) => {
            if b.nrows() != 2 * d {
                return Err(Error::DimensionMismatch {
                    expected: 2 * d,
                    found: b.nrows(),
                });
            }
            best = best.min(exit_time(|s| omega.contains(&exp_y_drift(s, z, b))));
        }
    }
    Ok(best.min(1.0))
}

/// `δ_{Ω₀} = min δ_z` over the closure of `Ω₀`, sampled on 20 Chebyshev nodes
/// per axis (endpoints included). When the full tensor exceeds `10^5` points
/// the corners plus `10^5` seeded draws from the tensor are used instead.
pub fn delta_omega0(omega: &BoxDomain, omega0: &BoxDomain, flows: Flows<'_>) -> Result<f64> {
    if !omega0.compactly_inside(omega) {
        return Err(invalid("omega0", "the closure of the subdomain must lie inside the domain"));
    }
    let lo = omega0.lower.coords();
    let hi = omega0.upper.coords();
    let dims = lo.len();
    const NODES: usize = 20;
    let axis: Vec<Vec<f64>> = (0..dims)
        .map(|k| {
            let (m, r) = (0.5 * (lo[k] + hi[k]), 0.5 * (hi[k] - lo[k]));
            (0..NODES)
                .map(|j| {
                    if j == 0 {
                        hi[k]
                    } else if j == NODES - 1 {
                        lo[k]
                    } else {
                        m + r * (std::f64::consts::PI * j as f64 / (NODES - 1) as f64).cos()
                    }
                })
                .collect()
        })
        .collect();
    let total = (NODES as f64).powi(dims as i32);
    let samples: Vec<Vec<usize>> = if total <= 1e5 {
        (0..total as usize)
            .map(|mut n| {
                (0..dims)
                    .map(|_| {
                        let j = n % NODES;
                        n /= NODES;
                        j
                    })
                    .collect()
            })
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let corners = (0..1usize << dims).map(|mask| (0..dims).map(|k| if mask >> k & 1 == 1 { NODES - 1 } else { 0 }).collect());
        let draws: Vec<Vec<usize>> = (0..100_000).map(|_| (0..dims).map(|_| rng.random_range(0..NODES)).collect()).collect();
        corners.chain(draws).collect()
    };
    samples
        .par_iter()
        .map(|idx| {
            let c: Vec<f64> = idx.iter().enumerate().map(|(k, &j)| axis[k][j]).collect();
            delta_z(&Point::from_coords(&c)?, omega, flows)
        })
        .try_reduce(|| 1.0, |p, q| Ok(p.min(q)))
}

/// The recursive seminorm over `Ω₀`: grid points outside `Ω₀` are dropped
/// and flow times restricted to `|τ| < δ_{Ω₀}`.
pub fn seminorm_local(
    u: &FunctionHandle,
    alpha: f64,
    omega: &BoxDomain,
    omega0: &BoxDomain,
    grid: &SampleGrid,
    a: &Anisotropy,
) -> Result<SeminormReport> {
    let delta = delta_omega0(omega, omega0, Flows::Homogeneous)?;
    let points: Vec<Point> = grid.points.iter().filter(|p| omega0.contains(p)).cloned().collect();
    let local = SampleGrid::new(points, grid.taus.clone())?.restricted(delta)?;
    let mut report = seminorm_c_alpha(u, alpha, &local, a)?;
    report.delta = Some(delta);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ExpPolyField, PolynomialField};
    use proptest::prelude::*;
    use rand::Rng;

    fn a1(theta: f64) -> Anisotropy {
        Anisotropy::new(1, theta).unwrap()
    }

    fn small_grid(a: &Anisotropy) -> SampleGrid {
        SampleGrid::halton_ball(a, 200, 12, (1e-3, 1.0))
    }

    fn poly(coef: f64, t: u32, x: u32, v: u32) -> FunctionHandle {
        PolynomialField::monomial(coef, t, &[x], &[v]).into_handle(format!("{coef} t^{t} x^{x} v^{v}"))
    }

    #[test]
    fn halton_points_lie_in_the_ball() {
        for d in [1, 2] {
            let a = Anisotropy::new(d, 4.0 / 3.0).unwrap();
            let g = SampleGrid::halton_ball(&a, 300, 10, (1e-4, 1.0));
            assert_eq!(g.points.len(), 300);
            assert!(g.points.iter().all(|p| group::hnorm(p, &a) <= 1.0 + 1e-12));
            assert_eq!(g.taus.len(), 20);
            assert!((g.min_abs_tau() - 1e-4).abs() < 1e-18);
        }
    }

    #[test]
    fn field_seminorm_examples() {
        let a = a1(2.0);
        let g = small_grid(&a);
        assert_eq!(seminorm_z(&poly(3.0, 0, 0, 0), 0, 0.5, &g).unwrap(), 0.0);
        assert!((seminorm_z(&poly(1.0, 0, 0, 1), 0, 1.0, &g).unwrap() - 1.0).abs() < 1e-12);
        assert!((seminorm_y(&poly(1.0, 1, 0, 0), 2.0, &g, &a).unwrap() - 1.0).abs() < 1e-12);
        let vmax = g.points.iter().fold(0.0f64, |m, p| m.max(p.v[0].abs()));
        assert!((seminorm_y(&poly(1.0, 0, 1, 0), 2.0, &g, &a).unwrap() - vmax).abs() < 1e-12);
        assert!(seminorm_z(&poly(1.0, 0, 0, 1), 0, 1.5, &g).is_err());
        assert!(seminorm_y(&poly(1.0, 0, 0, 1), 2.5, &g, &a).is_err());
    }

    #[test]
    fn kink_seminorm_is_one() {
        let u = FunctionHandle::from_fn("sqrt|v|", 1, |p: &Point| p.v[0].abs().sqrt());
        let g = SampleGrid::new(vec![Point::scalar(0.0, 0.0, 0.0), Point::scalar(0.0, 0.0, 0.3)], vec![0.1, -0.01]).unwrap();
        assert!((seminorm_z(&u, 0, 0.5, &g).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recursive_seminorm_examples() {
        let a = a1(2.0);
        let g = small_grid(&a);
        let r = seminorm_c_alpha(&poly(1.0, 0, 0, 1), 1.5, &g, &a).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.case_path[0].ends_with("ii (theta > 1)"));
        let a3 = a1(1.0 / 3.0);
        let r = seminorm_c_alpha(&poly(1.0, 1, 0, 0), 0.5, &small_grid(&a3), &a3).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.case_path[0].ends_with("ii (theta < 1)"));
        let a1_ = a1(1.0);
        let r = seminorm_c_alpha(&poly(1.0, 0, 0, 2), 1.5, &small_grid(&a1_), &a1_).unwrap();
        assert!(r.case_path[0].ends_with("iii"));
        assert!(r.case_path.iter().all(|c| !c.contains("ii (")));
        for alpha in [0.3, 1.7, 3.1] {
            assert_eq!(seminorm_c_alpha(&poly(2.0, 0, 0, 0), alpha, &g, &a).unwrap().value, 0.0);
        }
    }

    #[test]
    fn missing_derivatives_surface_and_differences_help() {
        let a = a1(2.0);
        let g = small_grid(&a);
        let u = FunctionHandle::from_fn("v^2", 1, |p: &Point| p.v[0] * p.v[0]);
        let err = seminorm_c_alpha(&u, 1.5, &g, &a).unwrap_err();
        assert!(matches!(err, Error::MissingDerivative(ref m) if m.contains("v^2")));
        let fd = g.differentiable(&u);
        let exact = seminorm_c_alpha(&poly(1.0, 0, 0, 2), 1.5, &g, &a).unwrap().value;
        let approx = seminorm_c_alpha(&fd, 1.5, &g, &a).unwrap().value;
        assert!((exact - approx).abs() < 1e-6 * exact.max(1.0));
    }

    #[test]
    fn homogeneity_and_refinement() {
        let a = a1(4.0 / 3.0);
        let u = ExpPolyField::sin(&[0.7, 1.3, 0.9]).into_handle("s");
        let g = small_grid(&a);
        let base = seminorm_c_alpha(&u, 2.6, &g, &a).unwrap().value;
        let scaled = seminorm_c_alpha(&u.scaled(-2.5), 2.6, &g, &a).unwrap().value;
        assert!((scaled - 2.5 * base).abs() <= 1e-12 * base);
        let mut bigger = g.clone();
        bigger.points.push(Point::scalar(0.1, 0.2, -0.3));
        bigger.taus.push(0.37);
        assert!(seminorm_c_alpha(&u, 2.6, &bigger, &a).unwrap().value >= base);
    }

    #[test]
    fn delta_examples() {
        let a_box = BoxDomain::cube(1, 1.0).unwrap();
        let huge = BoxDomain::cube(1, 100.0).unwrap();
        assert_eq!(delta_z(&Point::scalar(0.0, 0.0, 0.0), &huge, Flows::Homogeneous).unwrap(), 1.0);
        assert_eq!(delta_z(&Point::scalar(0.0, 0.0, 0.0), &a_box, Flows::Homogeneous).unwrap(), 1.0);
        let d = delta_z(&Point::scalar(0.9, 0.0, 0.0), &a_box, Flows::Homogeneous).unwrap();
        assert!((d - 0.1).abs() < 1e-15);
        let d = delta_z(&Point::scalar(0.0, 0.5, 0.8), &a_box, Flows::Homogeneous).unwrap();
        assert!((d - 0.2).abs() < 1e-15);
        assert!(delta_z(&Point::scalar(1.5, 0.0, 0.0), &a_box, Flows::Homogeneous).is_err());
    }

    #[test]
    fn drift_delta_matches_closed_form_for_kinetic_drift() {
        let omega = BoxDomain::cube(1, 1.0).unwrap();
        let mut b = DMatrix::zeros(2, 2);
        b[(0, 1)] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let z = Point::scalar(rng.random_range(-0.95..0.95), rng.random_range(-0.95..0.95), rng.random_range(-0.95..0.95));
            let closed = delta_z(&z, &omega, Flows::Homogeneous).unwrap();
            let marched = delta_z(&z, &omega, Flows::Drift(&b)).unwrap();
            assert!((closed - marched).abs() < 2e-10, "{closed} vs {marched}");
        }
    }

    #[test]
    fn delta_omega0_and_local_seminorm() {
        let omega = BoxDomain::cube(1, 1.0).unwrap();
        let omega0 = BoxDomain::cube(1, 0.5).unwrap();
        let delta = delta_omega0(&omega, &omega0, Flows::Homogeneous).unwrap();
        // worst point: x at 0.5, |v| = 0.5 gives 0.5 / 0.5 = 1; t and v give 0.5
        assert!((delta - 0.5).abs() < 1e-12);
        assert!(delta_omega0(&omega0, &omega, Flows::Homogeneous).is_err());

        let a = a1(2.0);
        let g = small_grid(&a);
        let u = ExpPolyField::sin(&[0.5, 1.0, 2.0]).into_handle("s");
        let global = seminorm_c_alpha(&u, 1.5, &g, &a).unwrap().value;
        let local = seminorm_local(&u, 1.5, &omega, &omega0, &g, &a).unwrap();
        assert!(local.value <= global);
        assert_eq!(local.delta, Some(delta));

        let abs = FunctionHandle::from_fn("|v|", 1, |p: &Point| p.v[0].abs());
        let pos = BoxDomain::new(Point::scalar(-0.5, -0.5, 0.1), Point::scalar(0.5, 0.5, 0.9)).unwrap();
        let outer = BoxDomain::new(Point::scalar(-1.0, -1.0, 0.05), Point::scalar(1.0, 1.0, 2.0)).unwrap();
        let dl = delta_omega0(&outer, &pos, Flows::Homogeneous).unwrap();
        let pts: Vec<Point> = (0..20).map(|k| Point::scalar(0.0, 0.0, 0.15 + 0.035 * k as f64)).collect();
        let lg = SampleGrid::new(pts, SampleGrid::symmetric_taus(1e-3, 1.0, 10)).unwrap().restricted(dl).unwrap();
        assert!((seminorm_z(&abs, 0, 1.0, &lg).unwrap() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn delta_is_lipschitz_along_coordinates(t in -0.9f64..0.9, x in -0.9f64..0.9, v in -0.9f64..0.9, k in 0usize..3, h in -0.05f64..0.05) {
            let omega = BoxDomain::cube(1, 1.0).unwrap();
            let z = Point::scalar(t, x, v);
            let mut c = z.coords();
            c[k] += h;
            let z2 = Point::from_coords(&c).unwrap();
            prop_assume!(omega.contains(&z2));
            let d1 = delta_z(&z, &omega, Flows::Homogeneous).unwrap();
            let d2 = delta_z(&z2, &omega, Flows::Homogeneous).unwrap();
            // 1-Lipschitz in t; in x and v the transport exit time dist/|v| brings in 1/|v|
            let slow = 1.0 / v.abs().min(z2.v[0].abs());
            let lip = match k {
                0 => 1.0,
                1 => slow,
                _ => slow.max(1.0),
            };
            prop_assert!((d1 - d2).abs() <= lip * h.abs() + 1e-12);
        }
    }
}
