//! Commutator paths that move a point purely in `x`, the group attached to a
//! general drift matrix `B`, the correction map `g_{w,τ}` and the solver that
//! steers `(t, x, v)` to `(t, x + h, v)` with it.
//!
//! Flow times along `Y` are `σ = |τ|^ϑ`, so for negative `τ` the commutator
//! path moves `x` by `τ|τ|^ϑ w`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::field::FunctionHandle;
use crate::flows::{exp_y, exp_y_drift, exp_z};
use crate::group::{self, Anisotropy, Point};
use crate::taylor::{fit_loglog, SlopeFit};

pub const SERIES_TOL: f64 = 1e-16;
pub const SERIES_MAX_TERMS: usize = 60;
pub const MAX_ITERATIONS: usize = 200;
const UNIT_TOL: f64 = 1e-10;
const RANK_TOL: f64 = 1e-10;

/// The `2d × 2d` drift `B = [[B11, B12], [B21, B22]]`, acting on `(x, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftMatrix {
    b: DMatrix<f64>,
    d: usize,
}

impl DriftMatrix {
    /// Validates shape, finiteness and `rank B12 = d`.
    pub fn new(b: DMatrix<f64>) -> Result<Self> {
        if b.nrows() != b.ncols() || !b.nrows().is_multiple_of(2) || b.nrows() == 0 {
            return Err(invalid("B", format!("expected a square matrix of even size, got {}x{}", b.nrows(), b.ncols())));
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("drift matrix".into()));
        }
        let d = b.nrows() / 2;
        let sv = b.view((0, d), (d, d)).into_owned().singular_values();
        let largest = sv.max();
        let smallest = sv.min();
        if !(largest > 0.0) || smallest <= RANK_TOL * largest {
            return Err(Error::RankDeficient { smallest });
        }
        Ok(DriftMatrix { b, d })
    }

    /// `B12 = I`, all other blocks zero: the drift of `Y = ⟨v, ∇_x⟩ + ∂_t`.
    pub fn kinetic(d: usize) -> Self {
        let mut b = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            b[(i, d + i)] = 1.0;
        }
        DriftMatrix { b, d }
    }

    /// Whitespace-separated rows, one per line; blank lines and `#` comments skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.split(|c: char| c.is_whitespace() || c == ',' || c == ';')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<f64>().map_err(|e| invalid("B", format!("bad entry `{s}`: {e}"))))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(invalid("B", "rows must form a square matrix"));
        }
        DriftMatrix::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    /// A seeded matrix with spectral norm at most `1` and `cond(B12) ≤ 4`.
    pub fn random_well_conditioned(d: usize, rng: &mut impl Rng) -> Self {
        let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let q1 = gauss(d, d).qr().q();
        let q2 = gauss(d, d).qr().q();
        let sigmas = DVector::from_fn(d, |i, _| if i == 0 { 1.0 } else { 0.25 + 0.75 * ((i * 7919) % 97) as f64 / 97.0 });
        let b12 = &q1 * DMatrix::from_diagonal(&sigmas) * q2.transpose();
        let mut b = gauss(2 * d, 2 * d) * 0.5;
        b.view_mut((0, d), (d, d)).copy_from(&b12);
        let norm = b.clone().singular_values().max();
        b /= norm.max(1.0);
        DriftMatrix::new(b).expect("well-conditioned by construction")
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn block(&self, row: usize, col: usize) -> DMatrix<f64> {
        let d = self.d;
        self.b.view(((row - 1) * d, (col - 1) * d), (d, d)).into_owned()
    }

    /// Spectral norm of `B`.
    pub fn norm(&self) -> f64 {
        self.b.clone().singular_values().max()
    }

    /// Spectral norm of `B12`.
    pub fn b12_norm(&self) -> f64 {
        self.block(1, 2).singular_values().max()
    }
}

fn check_drift(z: &Point, b: &DMatrix<f64>) -> Result<()> {
    if b.nrows() != 2 * z.dim() || b.ncols() != 2 * z.dim() {
        return Err(Error::DimensionMismatch {
            expected: 2 * z.dim(),
            found: b.nrows(),
        });
    }
    Ok(())
}

fn stack(z: &Point) -> DVector<f64> {
    let d = z.dim();
    let mut p = DVector::zeros(2 * d);
    p.rows_mut(0, d).copy_from(&z.x);
    p.rows_mut(d, d).copy_from(&z.v);
    p
}

fn unstack(t: f64, p: &DVector<f64>) -> Point {
    let d = p.len() / 2;
    Point::from_parts(t, p.rows(0, d).into_owned(), p.rows(d, d).into_owned())
}

/// `(t1 + t2, (x2, v2) + e^{t2 B}(x1, v1))`.
pub fn compose_nh(z1: &Point, z2: &Point, b: &DMatrix<f64>) -> Result<Point> {
    z1.check_dim(z2.dim())?;
    check_drift(z1, b)?;
    let p = stack(z2) + (b * z2.t).exp() * stack(z1);
    Ok(unstack(z1.t + z2.t, &p))
}

/// `(−t, −e^{−tB}(x, v))`.
pub fn inverse_nh(z: &Point, b: &DMatrix<f64>) -> Result<Point> {
    check_drift(z, b)?;
    let p = -((b * -z.t).exp() * stack(z));
    Ok(unstack(-z.t, &p))
}

/// `(t + τ, e^{τB}(x, v))`.
pub fn exp_y_nh(tau: f64, z: &Point, b: &DMatrix<f64>) -> Result<Point> {
    check_drift(z, b)?;
    Ok(exp_y_drift(tau, z, b))
}

/// `‖z2^{-1} ∘ z1‖` in the group of `B`.
pub fn qdist_nh(z1: &Point, z2: &Point, b: &DMatrix<f64>, a: &Anisotropy) -> Result<f64> {
    Ok(group::hnorm(&compose_nh(&inverse_nh(z2, b)?, z1, b)?, a))
}

/// Waypoints of a steering path with the achieved and intended endpoints.
#[derive(Debug, Clone, Serialize)]
pub struct PathReport {
    pub waypoints: Vec<Point>,
    pub endpoint: Point,
    pub target: Point,
    /// Largest componentwise deviation of `endpoint` from `target`.
    pub endpoint_error: f64,
    /// `‖target^{-1} ∘ endpoint‖`. Rounding of size `ε` shows up here as
    /// `ε^{1/(ϑ+1)}`, so this is reported but not used as a gate.
    pub hnorm_error: f64,
}

impl PathReport {
    fn new(waypoints: Vec<Point>, target: Point, a: &Anisotropy) -> Result<Self> {
        let endpoint = waypoints.last().cloned().expect("paths have at least one waypoint");
        let endpoint_error = endpoint.max_abs_diff(&target);
        let hnorm_error = group::qdist(&endpoint, &target, a)?;
        Ok(PathReport {
            waypoints,
            endpoint,
            target,
            endpoint_error,
            hnorm_error,
        })
    }
}

fn unit(w: &DVector<f64>) -> Result<()> {
    let n = w.norm();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(invalid("w", format!("must be a unit vector, |w| = {n}")));
    }
    Ok(())
}

/// `σ = |τ|^ϑ`
fn y_time(tau: f64, a: &Anisotropy) -> f64 {
    tau.abs().powf(a.theta)
}

/// `z, e^{τZ_w}z, e^{σY}(·), e^{−τZ_w}(·), e^{−σY}(·)` with `σ = |τ|^ϑ`; the
/// endpoint is `(t, x + τσ w, v)`.
pub fn commutator_path(z: &Point, w: &DVector<f64>, tau: f64, a: &Anisotropy) -> Result<PathReport> {
    z.check_dim(a.d)?;
    z.check_dim(w.len())?;
    unit(w)?;
    let sigma = y_time(tau, a);
    let z2 = exp_z(tau, w, z)?;
    let z3 = exp_y(sigma, &z2);
    let z4 = exp_z(-tau, w, &z3)?;
    let z5 = exp_y(-sigma, &z4);
    let target = Point::from_parts(z.t, &z.x + w * (tau * sigma), z.v.clone());
    PathReport::new(vec![z.clone(), z2, z3, z4, z5], target, a)
}

/// The commutator path with `w = h/|h|` and `τ = |h|^{1/(ϑ+1)}`, reaching `(t, x + h, v)`.
pub fn steer_x(z: &Point, h: &DVector<f64>, a: &Anisotropy) -> Result<PathReport> {
    let n = h.norm();
    if !(n > 0.0) {
        return Err(invalid("h", "the increment must be nonzero"));
    }
    let w = h / n;
    let tau = n.powf(1.0 / (a.theta + 1.0));
    let mut report = commutator_path(z, &w, tau, a)?;
    report.target = Point::from_parts(z.t, &z.x + h, z.v.clone());
    report.endpoint_error = report.endpoint.max_abs_diff(&report.target);
    report.hnorm_error = group::qdist(&report.endpoint, &report.target, a)?;
    Ok(report)
}

/// `Σ_{n≥0} (−1)^n σ^n B^{n+shift} / (n+shift)!`, truncated once a term has
/// norm below `1e-16` or after 60 terms.
fn alternating_series(b: &DMatrix<f64>, sigma: f64, shift: u32) -> DMatrix<f64> {
    let n = b.nrows();
    let mut power = DMatrix::identity(n, n);
    let mut fact = 1.0;
    for m in 1..=shift {
        power = &power * b;
        fact *= f64::from(m);
    }
    let mut term = power / fact;
    let mut sum = term.clone();
    for k in 1..SERIES_MAX_TERMS {
        term = &term * b * (-sigma / f64::from(k as u32 + shift));
        sum += &term;
        if term.norm() < SERIES_TOL {
            break;
        }
    }
    sum
}

/// `w' = Σ_{n≥0} (−1)^n σ^n / (n+2)! (B^{n+2})_{22} w` with `σ = |τ|^ϑ`.
pub fn velocity_correction(w: &DVector<f64>, tau: f64, b: &DriftMatrix, a: &Anisotropy) -> Result<DVector<f64>> {
    let sigma = y_time(tau, a);
    let rate = sigma * b.block(2, 2).norm();
    if rate >= 1.0 {
        return Err(Error::SeriesDivergent { rate });
    }
    let d = b.dim();
    let s = alternating_series(b.matrix(), sigma, 2);
    Ok(s.view((d, d), (d, d)) * w)
}

/// Waypoints `z, z2, …, z6, g_{w,τ}(z)` of the corrected commutator path.
pub fn g_path(z: &Point, w: &DVector<f64>, tau: f64, b: &DriftMatrix, a: &Anisotropy) -> Result<Vec<Point>> {
    z.check_dim(b.dim())?;
    z.check_dim(w.len())?;
    unit(w)?;
    let wp = velocity_correction(w, tau, b, a)?;
    let sigma = y_time(tau, a);
    let m = b.matrix();
    let z2 = exp_z(tau, w, z)?;
    let z3 = exp_y_drift(sigma, &z2, m);
    let z4 = exp_z(-tau, w, &z3)?;
    let z5 = exp_y_drift(-sigma, &z4, m);
    let z6 = exp_z(-tau * sigma, &(b.block(2, 2) * w), &z5)?;
    let g = exp_z(tau * sigma * sigma, &wp, &z6)?;
    Ok(vec![z.clone(), z2, z3, z4, z5, z6, g])
}

/// `g_{w,τ}(z) = e^{τ^{2ϑ+1} Z_{w'}}(z6)`.
pub fn g_correction(z: &Point, w: &DVector<f64>, tau: f64, b: &DriftMatrix, a: &Anisotropy) -> Result<Point> {
    Ok(g_path(z, w, tau, b, a)?.pop().expect("nonempty path"))
}

/// The `x`-displacement of `g_{w,τ}` is `τσ M(σ) w` with
/// `M(σ) = Σ (−1)^n σ^n (B^{n+1})_{12} / (n+1)!`.
pub fn displacement_matrix(b: &DriftMatrix, sigma: f64) -> DMatrix<f64> {
    let d = b.dim();
    alternating_series(b.matrix(), sigma, 1).view((0, d), (d, d)).into_owned()
}

/// Outcome of [`connect`].
#[derive(Debug, Clone, Serialize)]
pub struct Connection {
    #[serde(serialize_with = "crate::group::serialize_vector")]
    pub w: DVector<f64>,
    pub tau: f64,
    /// `2/‖B12‖ · |h|^{1/(ϑ+1)}`
    pub tau_bound: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub method: &'static str,
    pub report: PathReport,
}

/// `τ ↦ |M(τ^ϑ)^{-1} h|`, or `None` when `M` is singular.
fn target_length(b: &DriftMatrix, h: &DVector<f64>, tau: f64, a: &Anisotropy) -> Option<(f64, DVector<f64>)> {
    let m = displacement_matrix(b, y_time(tau, a));
    let q = m.lu().solve(h)?;
    let n = q.norm();
    n.is_finite().then_some((n, q))
}

struct Solve {
    tau: f64,
    q: DVector<f64>,
    iterations: usize,
    method: &'static str,
    worst_ratio: f64,
}

/// Solves `τ^{ϑ+1} = |M(τ^ϑ)^{-1} h|` by fixed-point iteration, falling back
/// to bisection when the iteration stalls.
fn solve_tau(b: &DriftMatrix, h: &DVector<f64>, a: &Anisotropy) -> Result<Solve> {
    let p = 1.0 / (a.theta + 1.0);
    let singular = || Error::NoConvergence {
        iterations: 0,
        residual: f64::INFINITY,
    };
    let (n0, _) = target_length(b, h, 0.0, a).ok_or_else(singular)?;
    let mut tau = n0.powf(p);
    let mut prev_step = f64::NAN;
    let mut worst_ratio: f64 = 0.0;
    for it in 1..=MAX_ITERATIONS {
        let Some((n, qn)) = target_length(b, h, tau, a) else { break };
        let next = n.powf(p);
        let step = (next - tau).abs();
        if prev_step.is_finite() && prev_step > 1e-15 * tau {
            worst_ratio = worst_ratio.max(step / prev_step);
        }
        tau = next;
        if step <= 1e-15 * tau.max(1e-300) {
            return Ok(Solve {
                tau,
                q: qn,
                iterations: it,
                method: "fixed_point",
                worst_ratio,
            });
        }
        prev_step = step;
    }

    // f(τ) = τ^{ϑ+1} − |M^{-1}h| is negative at 0; grow the bracket until it is not
    let f = |tau: f64| target_length(b, h, tau, a).map(|(n, q)| (tau.powf(a.theta + 1.0) - n, q));
    let mut lo = 0.0;
    let mut hi = n0.powf(p).max(f64::MIN_POSITIVE);
    let mut grown = 0;
    while f(hi).is_some_and(|(v, _)| v < 0.0) {
        lo = hi;
        hi *= 2.0;
        grown += 1;
        if grown > 60 {
            return Err(Error::NoConvergence {
                iterations: MAX_ITERATIONS,
                residual: f(hi).map_or(f64::INFINITY, |(v, _)| v.abs()),
            });
        }
    }
    let mut iterations = MAX_ITERATIONS;
    for _ in 0..MAX_ITERATIONS {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        match f(mid) {
            Some((v, _)) if v < 0.0 => lo = mid,
            Some(_) => hi = mid,
            None => return Err(singular()),
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    let tau = 0.5 * (lo + hi);
    let (_, q) = f(tau).ok_or_else(singular)?;
    Ok(Solve {
        tau,
        q,
        iterations,
        method: "bisection",
        worst_ratio,
    })
}

/// Radius below which [`connect`] is offered: the smallest of `1`,
/// `(2‖B‖)^{−(ϑ+1)}`, and the largest sampled radius at which the fixed-point
/// map contracts for every probe direction.
pub fn connect_radius(b: &DriftMatrix, a: &Anisotropy) -> f64 {
    let cap = 1f64.min((2.0 * b.norm()).powf(-(a.theta + 1.0)));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d = b.dim();
    let probes: Vec<DVector<f64>> = (0..16)
        .map(|_| {
            let v = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let n = v.norm();
            if n > 1e-6 {
                v / n
            } else {
                DVector::from_fn(d, |i, _| if i == 0 { 1.0 } else { 0.0 })
            }
        })
        .collect();
    let mut r = cap;
    for _ in 0..40 {
        let contracts = probes.iter().all(|e| {
            solve_tau(b, &(e * r), a).is_ok_and(|s| s.method == "fixed_point" && s.worst_ratio < 0.9)
        });
        if contracts {
            return r;
        }
        r *= 0.5;
    }
    r
}

/// Finds `|w| = 1`, `τ ≥ 0` with `g_{w,τ}(z) = (t, x + h, v)`.
///
/// `h = 0` yields `τ = 0`, `w = e_1`.
pub fn connect(z: &Point, h: &DVector<f64>, b: &DriftMatrix, a: &Anisotropy) -> Result<Connection> {
    z.check_dim(b.dim())?;
    z.check_dim(h.len())?;
    z.check_dim(a.d)?;
    let epsilon = connect_radius(b, a);
    let norm = h.norm();
    if norm > epsilon {
        return Err(Error::OutOfRadius { norm, epsilon });
    }
    let tau_bound = 2.0 / b.b12_norm() * norm.powf(1.0 / (a.theta + 1.0));
    let target = Point::from_parts(z.t, &z.x + h, z.v.clone());
    let (w, tau, iterations, method) = if norm == 0.0 {
        let mut e = DVector::zeros(b.dim());
        e[0] = 1.0;
        (e, 0.0, 0, "trivial")
    } else {
        let s = solve_tau(b, h, a)?;
        let qn = s.q.norm();
        (s.q / qn, s.tau, s.iterations, s.method)
    };
    let path = g_path(z, &w, tau, b, a)?;
    let report = PathReport::new(path, target, a)?;
    Ok(Connection {
        w,
        tau,
        tau_bound,
        epsilon,
        iterations,
        method,
        report,
    })
}

/// Slope of `log|u(t, x + h e, v) − u(z)|` against `log|h|`, where each
/// displaced point is the endpoint of the commutator path [`steer_x`].
pub fn x_increment_slope(u: &FunctionHandle, z: &Point, e: &DVector<f64>, hs: &[f64], a: &Anisotropy) -> Result<SlopeFit> {
    let base = u.try_eval(z)?;
    let mut xs = Vec::with_capacity(hs.len());
    let mut ys = Vec::with_capacity(hs.len());
    for &h in hs {
        let path = steer_x(z, &(e * h), a)?;
        xs.push(h.abs());
        ys.push((u.try_eval(&path.endpoint)? - base).abs());
    }
    fit_loglog(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a1(theta: f64) -> Anisotropy {
        Anisotropy::new(1, theta).unwrap()
    }

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    /// `e^{A}` by a plain Taylor series, independent of the Padé backend.
    fn exp_series(m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows();
        let mut term = DMatrix::identity(n, n);
        let mut sum = term.clone();
        for k in 1..80 {
            term = &term * m / k as f64;
            sum += &term;
        }
        sum
    }

    fn random_point(rng: &mut ChaCha8Rng, d: usize) -> Point {
        let mut r = || rng.random_range(-1.0..1.0);
        let t = r();
        let x: Vec<f64> = (0..d).map(|_| r()).collect();
        let v: Vec<f64> = (0..d).map(|_| r()).collect();
        Point::new(t, x, v).unwrap()
    }

    #[test]
    fn commutator_path_by_hand() {
        let a = a1(2.0);
        let r = commutator_path(&Point::scalar(0.0, 0.0, 0.0), &dv(&[1.0]), 1.0, &a).unwrap();
        let want = [(0.0, 0.0, 1.0), (1.0, 1.0, 1.0), (1.0, 1.0, 0.0), (0.0, 1.0, 0.0)];
        for (p, w) in r.waypoints[1..].iter().zip(want) {
            assert_eq!(*p, Point::scalar(w.0, w.1, w.2));
        }
        let z = Point::scalar(5.0, 3.0, 2.0);
        for theta in [0.5, 4.0 / 3.0, 2.0] {
            let r = commutator_path(&z, &dv(&[1.0]), 0.1, &a1(theta)).unwrap();
            assert!(r.endpoint.max_abs_diff(&Point::scalar(5.0, 3.0 + 0.1f64.powf(theta + 1.0), 2.0)) <= 1e-14);
        }
        let r = commutator_path(&z, &dv(&[1.0]), 0.0, &a).unwrap();
        assert!(r.waypoints.iter().all(|p| *p == z));
        assert!(commutator_path(&z, &dv(&[1.1]), 0.1, &a).is_err());
    }

    #[test]
    fn steer_x_examples() {
        let a = Anisotropy::new(2, 0.5).unwrap();
        let z = Point::identity(2);
        let r = steer_x(&z, &dv(&[3.0, 4.0]), &a).unwrap();
        assert!(r.endpoint_error <= 1e-12, "{}", r.endpoint_error);
        let shifted = Point::new(7.0, vec![0.0, 0.0], vec![9.0, 0.0]).unwrap();
        let r2 = steer_x(&shifted, &dv(&[3.0, 4.0]), &a).unwrap();
        assert!(r2.endpoint.max_abs_diff(&Point::new(7.0, vec![3.0, 4.0], vec![9.0, 0.0]).unwrap()) <= 1e-12);
        assert!(steer_x(&z, &dv(&[0.0, 0.0]), &a).is_err());
    }

    #[test]
    fn drift_matrix_validation() {
        assert!(DriftMatrix::new(DMatrix::zeros(2, 2)).is_err());
        assert!(DriftMatrix::new(DMatrix::zeros(3, 3)).is_err());
        let b = DriftMatrix::parse("0 1\n0.5 -0.2\n").unwrap();
        assert_eq!(b.block(1, 2)[(0, 0)], 1.0);
        assert_eq!(b.block(2, 2)[(0, 0)], -0.2);
        assert!(DriftMatrix::parse("1 2\n3").is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let b = DriftMatrix::random_well_conditioned(2, &mut rng);
            assert!(b.norm() <= 1.0 + 1e-12);
            let sv = b.block(1, 2).singular_values();
            assert!(sv.max() / sv.min() <= 4.0 + 1e-9);
        }
    }

    #[test]
    fn nh_group_reduces_to_galilean_for_kinetic_drift() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = DriftMatrix::kinetic(1);
        for _ in 0..100 {
            let z1 = random_point(&mut rng, 1);
            let z2 = random_point(&mut rng, 1);
            let lhs = compose_nh(&z1, &z2, b.matrix()).unwrap();
            let rhs = group::compose(&z1, &z2).unwrap();
            assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
            let tau = rng.random_range(-1.0..1.0);
            assert!(exp_y_nh(tau, &z1, b.matrix()).unwrap().max_abs_diff(&exp_y(tau, &z1)) <= 1e-12);
        }
    }

    #[test]
    fn nh_group_axioms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let zero = DMatrix::zeros(4, 4);
        let z = random_point(&mut rng, 2);
        let id = Point::identity(2);
        assert_eq!(compose_nh(&z, &id, &zero).unwrap(), z);
        let abel = inverse_nh(&z, &zero).unwrap();
        assert!(abel.max_abs_diff(&Point::from_parts(-z.t, -&z.x, -&z.v)) == 0.0);
        for _ in 0..200 {
            let b = DriftMatrix::random_well_conditioned(2, &mut rng);
            let m = b.matrix();
            let (z1, z2, z3) = (random_point(&mut rng, 2), random_point(&mut rng, 2), random_point(&mut rng, 2));
            let l = compose_nh(&compose_nh(&z1, &z2, m).unwrap(), &z3, m).unwrap();
            let r = compose_nh(&z1, &compose_nh(&z2, &z3, m).unwrap(), m).unwrap();
            assert!(l.max_abs_diff(&r) <= 1e-11);
            let round = compose_nh(&z1, &inverse_nh(&z1, m).unwrap(), m).unwrap();
            assert!(round.max_abs() <= 1e-11);
            // (t0,x0,v0)^{-1} ∘ z = (t − t0, (x,v) − e^{(t−t0)B}(x0,v0))
            let incr = compose_nh(&inverse_nh(&z1, m).unwrap(), &z2, m).unwrap();
            let p = stack(&z2) - exp_series(&(m * (z2.t - z1.t))) * stack(&z1);
            assert!(incr.max_abs_diff(&unstack(z2.t - z1.t, &p)) <= 1e-11);
            let lhs = qdist_nh(&compose_nh(&z3, &z1, m).unwrap(), &compose_nh(&z3, &z2, m).unwrap(), m, &Anisotropy::new(2, 2.0).unwrap()).unwrap();
            let rhs = qdist_nh(&z1, &z2, m, &Anisotropy::new(2, 2.0).unwrap()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1.0));
        }
    }

    #[test]
    fn matrix_exponential_matches_series_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let m = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-2.0..2.0));
            let err = (m.clone().exp() - exp_series(&m)).abs().max();
            assert!(err <= 1e-12 * exp_series(&m).abs().max().max(1.0), "{err}");
        }
    }

    #[test]
    fn g_correction_homogeneous_and_trivial() {
        let a = a1(2.0);
        let b = DriftMatrix::kinetic(1);
        let z = Point::scalar(0.3, -0.4, 0.8);
        let g = g_correction(&z, &dv(&[1.0]), 0.2, &b, &a).unwrap();
        assert!(g.max_abs_diff(&Point::scalar(0.3, -0.4 + 0.2f64.powi(3), 0.8)) <= 1e-15);
        let g0 = g_correction(&z, &dv(&[1.0]), 0.0, &b, &a).unwrap();
        assert_eq!(g0, z);
    }

    #[test]
    fn g_correction_fixes_velocity_and_matches_displacement_formula() {
        let a = a1(2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let b = DriftMatrix::random_well_conditioned(1, &mut rng);
            let z = random_point(&mut rng, 1);
            let tau = 0.1;
            let w = dv(&[if rng.random_bool(0.5) { 1.0 } else { -1.0 }]);
            let g = g_correction(&z, &w, tau, &b, &a).unwrap();
            assert!((g.v[0] - z.v[0]).abs() <= 1e-12);
            assert!((g.t - z.t).abs() <= 1e-15);
            let lead = z.x[0] + tau.powi(3) * b.block(1, 2)[(0, 0)] * w[0];
            assert!((g.x[0] - lead).abs() <= 2.0 * tau.powi(5));
            let exact = z.x[0] + tau.powi(3) * (displacement_matrix(&b, tau * tau) * &w)[0];
            assert!((g.x[0] - exact).abs() <= 1e-14);
        }
    }

    #[test]
    fn series_guard() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = 1.0;
        m[(1, 1)] = 2.0;
        let b = DriftMatrix::new(m).unwrap();
        let err = velocity_correction(&dv(&[1.0]), 1.0, &b, &a1(2.0)).unwrap_err();
        assert!(matches!(err, Error::SeriesDivergent { .. }));
    }

    #[test]
    fn connect_homogeneous_is_analytic() {
        let a = Anisotropy::new(2, 2.0).unwrap();
        let b = DriftMatrix::kinetic(2);
        let h = dv(&[3e-4, -4e-4]);
        let c = connect(&Point::identity(2), &h, &b, &a).unwrap();
        assert!((c.w.clone() - dv(&[0.6, -0.8])).abs().max() <= 1e-12);
        assert!((c.tau - 5e-4f64.powf(1.0 / 3.0)).abs() <= 1e-12);
        assert!(c.report.endpoint_error <= 1e-15);
        let zero = connect(&Point::identity(2), &dv(&[0.0, 0.0]), &b, &a).unwrap();
        assert_eq!(zero.tau, 0.0);
        assert_eq!(zero.w, dv(&[1.0, 0.0]));
    }

    #[test]
    fn connect_random_drifts() {
        let a = Anisotropy::new(2, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let b = DriftMatrix::random_well_conditioned(2, &mut rng);
            let z = random_point(&mut rng, 2);
            let dir = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)).normalize();
            let c = connect(&z, &(dir * 1e-3), &b, &a).unwrap();
            assert!(c.report.endpoint_error <= 1e-10, "{}", c.report.endpoint_error);
            assert!(c.tau <= c.tau_bound);
            assert!((c.w.norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn connect_refuses_large_increments() {
        let a = a1(2.0);
        let b = DriftMatrix::kinetic(1);
        let err = connect(&Point::identity(1), &dv(&[10.0]), &b, &a).unwrap_err();
        assert!(matches!(err, Error::OutOfRadius { .. }));
    }

    #[test]
    fn x_increment_slope_of_smooth_function() {
        let a = a1(2.0);
        let u = crate::field::ExpPolyField::sin(&[0.0, 1.0, 0.0]).into_handle("sin x");
        let hs = crate::taylor::geometric_grid(1e-1, 1e-4, 10);
        let fit = x_increment_slope(&u, &Point::scalar(0.1, 0.3, 0.2), &dv(&[1.0]), &hs, &a).unwrap();
        assert!((fit.slope - 1.0).abs() < 0.01);
    }
}
