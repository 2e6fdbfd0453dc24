//! Intrinsic Taylor polynomials `T_α u(z_0; ·)`, their remainders, and the
//! log-log slope of the remainder against the quasi-distance.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{DiffOp, FunctionHandle};
use crate::group::{self, Anisotropy, Point};
use crate::index::{enumerate_terms, TermIndex};
use crate::steering;

/// Remainders at or below this level carry no usable slope information.
pub const REMAINDER_FLOOR: f64 = 1e-13;
/// Below this everywhere, the polynomial reproduces `u` exactly.
pub const EXACT_LEVEL: f64 = 1e-14;
pub const MIN_FIT_POINTS: usize = 6;

/// `(s, h, y)^{(k, γ, β)} = s^k h^γ y^β`.
pub fn multi_power(incr: &Point, idx: &TermIndex) -> f64 {
    let mut m = incr.t.powi(idx.k as i32);
    for (h, &g) in incr.x.iter().zip(&idx.gamma) {
        m *= h.powi(g as i32);
    }
    for (y, &b) in incr.v.iter().zip(&idx.beta) {
        m *= y.powi(b as i32);
    }
    m
}

/// Coefficients `Y^k ∂_v^β ∂_x^γ u(z_0) / (k! γ! β!)` over `enumerate_terms(a, α)`.
#[derive(Debug, Clone, Serialize)]
pub struct TaylorPolynomial {
    pub alpha: f64,
    pub z0: Point,
    pub terms: Vec<(TermIndex, f64)>,
    #[serde(skip)]
    drift: Option<DMatrix<f64>>,
}

impl TaylorPolynomial {
    pub fn build(u: &FunctionHandle, alpha: f64, z0: &Point, a: &Anisotropy) -> Result<Self> {
        check_inputs(u, alpha, z0, a)?;
        let terms = enumerate_terms(a, alpha)
            .into_iter()
            .map(|idx| {
                let value = u.term_value(&idx, z0)?;
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("derivative {idx} of `{}`", u.label())));
                }
                let c = value / idx.factorial();
                Ok((idx, c))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TaylorPolynomial {
            alpha,
            z0: z0.clone(),
            terms,
            drift: None,
        })
    }

    /// The polynomial for the drift field `Y_B`: the terms use `Y_B^k` and the
    /// increments `(t − t_0, (x, v) − e^{(t−t_0)B}(x_0, v_0))`.
    pub fn build_nh(u: &FunctionHandle, alpha: f64, z0: &Point, a: &Anisotropy, b: &DMatrix<f64>) -> Result<Self> {
        check_inputs(u, alpha, z0, a)?;
        let d = a.d;
        if b.nrows() != 2 * d || b.ncols() != 2 * d {
            return Err(Error::DimensionMismatch {
                expected: 2 * d,
                found: b.nrows(),
            });
        }
        let op = DiffOp::YDrift(std::sync::Arc::new(b.clone()));
        let terms = enumerate_terms(a, alpha)
            .into_iter()
            .map(|idx| {
                let mut h = u.clone();
                for (i, &g) in idx.gamma.iter().enumerate() {
                    for _ in 0..g {
                        h = h.derivative(&DiffOp::X(i))?;
                    }
                }
                for (i, &bb) in idx.beta.iter().enumerate() {
                    for _ in 0..bb {
                        h = h.derivative(&DiffOp::V(i))?;
                    }
                }
                for _ in 0..idx.k {
                    h = h.derivative(&op)?;
                }
                let c = h.try_eval(z0)? / idx.factorial();
                Ok((idx, c))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TaylorPolynomial {
            alpha,
            z0: z0.clone(),
            terms,
            drift: Some(b.clone()),
        })
    }

    /// The increment `z_0^{-1} ∘ z` in the group the polynomial was built for.
    pub fn increment(&self, z: &Point) -> Result<Point> {
        let inv = match &self.drift {
            None => group::inverse(&self.z0),
            Some(b) => steering::inverse_nh(&self.z0, b)?,
        };
        match &self.drift {
            None => group::compose(&inv, z),
            Some(b) => steering::compose_nh(&inv, z, b),
        }
    }

    pub fn eval(&self, z: &Point) -> Result<f64> {
        z.check_dim(self.z0.dim())?;
        let incr = self.increment(z)?;
        Ok(self.terms.iter().map(|(idx, c)| c * multi_power(&incr, idx)).sum())
    }
}

fn check_inputs(u: &FunctionHandle, alpha: f64, z0: &Point, a: &Anisotropy) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(crate::error::invalid("alpha", format!("must be positive, got {alpha}")));
    }
    z0.check_dim(a.d)?;
    if u.dim() != a.d {
        return Err(Error::DimensionMismatch {
            expected: a.d,
            found: u.dim(),
        });
    }
    Ok(())
}

pub fn taylor_eval(u: &FunctionHandle, alpha: f64, z0: &Point, z: &Point, a: &Anisotropy) -> Result<f64> {
    TaylorPolynomial::build(u, alpha, z0, a)?.eval(z)
}

/// `|u(z) − T_α u(z_0; z)|`.
pub fn remainder(u: &FunctionHandle, alpha: f64, z0: &Point, z: &Point, a: &Anisotropy) -> Result<f64> {
    let p = TaylorPolynomial::build(u, alpha, z0, a)?;
    Ok((u.try_eval(z)? - p.eval(z)?).abs())
}

/// `|u(z) − T_α u(z_0; z)|` for the drift field `Y_B`.
pub fn remainder_nh(u: &FunctionHandle, alpha: f64, z0: &Point, z: &Point, a: &Anisotropy, b: &DMatrix<f64>) -> Result<f64> {
    let p = TaylorPolynomial::build_nh(u, alpha, z0, a, b)?;
    Ok((u.try_eval(z)? - p.eval(z)?).abs())
}

/// Least-squares line through log-log points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_points: usize,
}

pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > REMAINDER_FLOOR && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData {
            found: pts.len(),
            required: MIN_FIT_POINTS,
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(crate::error::invalid("distances", "all sample distances coincide"));
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(SlopeFit {
        slope,
        intercept: my - slope * mx,
        r2,
        n_points: pts.len(),
    })
}

/// Result of a remainder-scaling experiment along one direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SlopeOutcome {
    Fitted(SlopeFit),
    /// Every remainder was below `1e-14`: the polynomial reproduces `u`.
    PolynomialExact,
}

/// Remainders at `z = z_0 ∘ D_λ(w)` for each `λ`, paired with `d(z, z_0)`.
pub fn scaling_samples(
    poly: &TaylorPolynomial,
    u: &FunctionHandle,
    direction: &Point,
    lambdas: &[f64],
    a: &Anisotropy,
) -> Result<Vec<(f64, f64)>> {
    lambdas
        .iter()
        .map(|&lam| {
            let z = group::compose(&poly.z0, &group::dilate(lam, direction, a)?)?;
            let dist = group::qdist(&z, &poly.z0, a)?;
            let r = (u.try_eval(&z)? - poly.eval(&z)?).abs();
            Ok((dist, r))
        })
        .collect()
}

/// Fits `log remainder` against `log d(z, z_0)` along `z = z_0 ∘ D_λ(w)`.
pub fn scaling_slope(
    u: &FunctionHandle,
    alpha: f64,
    z0: &Point,
    a: &Anisotropy,
    direction: &Point,
    lambdas: &[f64],
) -> Result<SlopeOutcome> {
    check_lambdas(lambdas)?;
    let poly = TaylorPolynomial::build(u, alpha, z0, a)?;
    let samples = scaling_samples(&poly, u, direction, lambdas, a)?;
    if samples.iter().all(|(_, r)| *r < EXACT_LEVEL) {
        return Ok(SlopeOutcome::PolynomialExact);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
    fit_loglog(&xs, &ys).map(SlopeOutcome::Fitted)
}

fn check_lambdas(lambdas: &[f64]) -> Result<()> {
    if lambdas.len() < 2 {
        return Err(Error::InsufficientData {
            found: lambdas.len(),
            required: 2,
        });
    }
    if lambdas.iter().any(|l| !(*l > 0.0)) || lambdas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(crate::error::invalid("lambdas", "must be positive and strictly decreasing"));
    }
    if lambdas[0] / lambdas[lambdas.len() - 1] < 100.0 * (1.0 - 1e-12) {
        return Err(crate::error::invalid("lambdas", "must span at least two decades"));
    }
    Ok(())
}

/// `n` geometric values from `hi` down to `lo`.
pub fn geometric_grid(hi: f64, lo: f64, n: usize) -> Vec<f64> {
    let ratio = (lo / hi).ln() / (n.max(2) - 1) as f64;
    (0..n).map(|i| hi * (ratio * i as f64).exp()).collect()
}

/// The three axis directions `(1,0,0)`, `(0,e_1,0)`, `(0,0,e_1)` followed by
/// `n_random` seeded points normalised to unit homogeneous norm.
pub fn default_directions(a: &Anisotropy, n_random: usize, seed: u64) -> Vec<Point> {
    let d = a.d;
    let mut e = vec![0.0; d];
    e[0] = 1.0;
    let zero = vec![0.0; d];
    let mut out = vec![
        Point::new(1.0, zero.clone(), zero.clone()).expect("finite"),
        Point::new(0.0, e.clone(), zero.clone()).expect("finite"),
        Point::new(0.0, zero, e).expect("finite"),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < 3 + n_random {
        let coords: Vec<f64> = (0..1 + 2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = Point::from_coords(&coords).expect("finite");
        let n = group::hnorm(&p, a);
        if n > 1e-3 {
            out.push(group::dilate(1.0 / n, &p, a).expect("positive"));
        }
    }
    out
}

/// Slope record for one direction, as emitted in reports.
#[derive(Debug, Clone, Serialize)]
pub struct SlopeRecord {
    pub alpha: f64,
    pub theta: f64,
    pub direction: Point,
    pub outcome: SlopeOutcome,
}

/// `λ` range such that `d(z_0 ∘ D_λ w, z_0) = λ‖w‖` spans `[lo, hi]`.
pub fn lambdas_for_distances(direction: &Point, a: &Anisotropy, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let norm = group::hnorm(direction, a).max(f64::MIN_POSITIVE);
    geometric_grid(hi / norm, lo / norm, n)
}

/// Runs [`scaling_slope`] over every direction in parallel; output order
/// follows `directions`.
pub fn slope_survey(
    u: &FunctionHandle,
    alpha: f64,
    z0: &Point,
    a: &Anisotropy,
    directions: &[Point],
    dist_range: (f64, f64),
    n_lambdas: usize,
) -> Result<Vec<SlopeRecord>> {
    directions
        .par_iter()
        .map(|w| {
            let lambdas = lambdas_for_distances(w, a, dist_range.0, dist_range.1, n_lambdas);
            let outcome = scaling_slope(u, alpha, z0, a, w, &lambdas)?;
            Ok(SlopeRecord {
                alpha,
                theta: a.theta,
                direction: w.clone(),
                outcome,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ExpPolyField, PolynomialField};

    fn a1(theta: f64) -> Anisotropy {
        Anisotropy::new(1, theta).unwrap()
    }

    fn z(t: f64, x: f64, v: f64) -> Point {
        Point::scalar(t, x, v)
    }

    #[test]
    fn constant_term_only_for_small_alpha() {
        let u = ExpPolyField::sin(&[1.0, 2.0, 3.0]).into_handle("s");
        let z0 = z(0.1, 0.2, 0.3);
        for p in [z(1.0, -1.0, 2.0), z(0.0, 0.5, 0.0)] {
            let val = taylor_eval(&u, 0.5, &z0, &p, &a1(2.0)).unwrap();
            assert!((val - u.eval(&z0)).abs() < 1e-15);
        }
    }

    #[test]
    fn reconstructs_v_squared_and_x() {
        let a = a1(4.0 / 3.0);
        let v2 = PolynomialField::monomial(1.0, 0, &[0], &[2]).into_handle("v^2");
        let origin = z(0.0, 0.0, 0.0);
        for p in [z(0.3, -0.7, 1.9), z(-2.0, 1.0, -0.4)] {
            let val = taylor_eval(&v2, 2.5, &origin, &p, &a).unwrap();
            assert!((val - p.v[0] * p.v[0]).abs() < 1e-14);
        }
        let x = PolynomialField::monomial(1.0, 0, &[1], &[0]).into_handle("x");
        let z0 = z(0.0, 0.0, 1.0);
        for p in [z(0.3, -0.7, 1.9), z(-2.0, 1.0, -0.4)] {
            let val = taylor_eval(&x, 2.6, &z0, &p, &a).unwrap();
            assert!((val - p.x[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn remainder_of_sin_v() {
        let u = ExpPolyField::sin(&[0.0, 0.0, 1.0]).into_handle("sin v");
        let h = 0.01;
        let r = remainder(&u, 1.5, &z(0.0, 0.0, 0.0), &z(0.0, 0.0, h), &a1(2.0)).unwrap();
        assert!((r - (h - h.sin())).abs() < 1e-17);
        assert!((r / (h * h * h / 6.0) - 1.0).abs() < 1e-4);
        let z0 = z(0.3, 0.1, 0.2);
        assert_eq!(remainder(&u, 1.5, &z0, &z0, &a1(2.0)).unwrap(), 0.0);
    }

    #[test]
    fn missing_oracle_names_the_term() {
        let u = FunctionHandle::from_fn("opaque", 1, |p: &Point| p.v[0]);
        let err = taylor_eval(&u, 1.5, &z(0.0, 0.0, 0.0), &z(0.0, 0.0, 1.0), &a1(2.0)).unwrap_err();
        match err {
            Error::MissingDerivative(msg) => assert!(msg.contains("beta=[1]") && msg.contains("opaque"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn slope_examples() {
        let a = a1(2.0);
        let u = ExpPolyField::sin(&[0.0, 0.0, 1.0]).into_handle("sin v");
        let lambdas = geometric_grid(0.1, 1e-3, 12);
        let out = scaling_slope(&u, 0.9, &z(0.0, 0.0, 0.0), &a, &z(0.0, 0.0, 1.0), &lambdas).unwrap();
        match out {
            SlopeOutcome::Fitted(f) => assert!((f.slope - 1.0).abs() < 0.01 && f.r2 > 0.999),
            _ => panic!("expected a fit"),
        }
        let poly = PolynomialField::monomial(2.0, 1, &[0], &[0]).into_handle("2t");
        let out = scaling_slope(&poly, 2.5, &z(0.3, 0.2, 0.1), &a, &z(1.0, 0.0, 0.0), &lambdas).unwrap();
        assert_eq!(out, SlopeOutcome::PolynomialExact);
    }

    #[test]
    fn lambdas_are_validated() {
        let u = PolynomialField::constant(1, 1.0).into_handle("1");
        let a = a1(2.0);
        let o = z(0.0, 0.0, 0.0);
        assert!(scaling_slope(&u, 1.0, &o, &a, &o, &[0.1, 0.05]).is_err());
        assert!(scaling_slope(&u, 1.0, &o, &a, &o, &[0.001, 0.1]).is_err());
    }

    #[test]
    fn fit_recovers_power_law() {
        let xs: Vec<f64> = geometric_grid(1.0, 1e-3, 10);
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(2.5)).collect();
        let f = fit_loglog(&xs, &ys).unwrap();
        assert!((f.slope - 2.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert_eq!(f.n_points, 10);
    }

    #[test]
    fn default_directions_have_unit_norm() {
        let a = Anisotropy::new(2, 4.0 / 3.0).unwrap();
        let dirs = default_directions(&a, 5, 7);
        assert_eq!(dirs.len(), 8);
        for w in &dirs {
            assert!((group::hnorm(w, &a) - 1.0).abs() < 1e-12);
        }
        assert_eq!(dirs, default_directions(&a, 5, 7));
    }

    #[test]
    fn nh_polynomial_reduces_to_homogeneous_for_kinetic_drift() {
        let a = a1(2.0);
        let mut b = DMatrix::zeros(2, 2);
        b[(0, 1)] = 1.0;
        let u = ExpPolyField::sin(&[0.5, 1.0, 0.7]).into_handle("s");
        let z0 = z(0.2, -0.3, 0.4);
        let p = z(0.25, -0.28, 0.43);
        let h = remainder(&u, 2.5, &z0, &p, &a).unwrap();
        let nh = remainder_nh(&u, 2.5, &z0, &p, &a, &b).unwrap();
        assert!((h - nh).abs() < 1e-14);
    }
}
