//! Integral curves of `Z_h = ⟨h, ∇_v⟩` and `Y`, Lie derivatives by central
//! differences, and the commutator defect `|[Z_i, Y]u − ∂_{x_i} u|`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::field::FunctionHandle;
use crate::group::{Anisotropy, Point};

/// One of the two kinds of Hörmander fields.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldSpec {
    /// `Z_h = Σ h_i ∂_{v_i}`
    Z(DVector<f64>),
    Y,
}

impl FieldSpec {
    /// `Z_i` as `Z_{e_i}`.
    pub fn z_axis(d: usize, i: usize) -> Self {
        let mut h = DVector::zeros(d);
        h[i] = 1.0;
        FieldSpec::Z(h)
    }

    pub fn formal_degree(&self, a: &Anisotropy) -> f64 {
        match self {
            FieldSpec::Z(_) => 1.0,
            FieldSpec::Y => a.theta,
        }
    }

    pub fn flow(&self, tau: f64, z: &Point) -> Result<Point> {
        match self {
            FieldSpec::Z(h) => exp_z(tau, h, z),
            FieldSpec::Y => Ok(exp_y(tau, z)),
        }
    }
}

/// `e^{τ Z_h}(z) = (t, x, v + τ h)`.
pub fn exp_z(tau: f64, h: &DVector<f64>, z: &Point) -> Result<Point> {
    z.check_dim(h.len())?;
    Ok(Point::from_parts(z.t, z.x.clone(), &z.v + h * tau))
}

/// `e^{τ Y}(z) = (t + τ, x + τ v, v)`.
pub fn exp_y(tau: f64, z: &Point) -> Point {
    Point::from_parts(z.t + tau, &z.x + &z.v * tau, z.v.clone())
}

/// `(t + τ, e^{τB}(x, v))`, the flow of `⟨B(x,v), ∇_{(x,v)}⟩ + ∂_t`.
pub fn exp_y_drift(tau: f64, z: &Point, b: &DMatrix<f64>) -> Point {
    let d = z.dim();
    let mut p = DVector::zeros(2 * d);
    p.rows_mut(0, d).copy_from(&z.x);
    p.rows_mut(d, d).copy_from(&z.v);
    let q = (b * tau).exp() * p;
    Point::from_parts(z.t + tau, q.rows(0, d).into_owned(), q.rows(d, d).into_owned())
}

/// Step `1e-4 · max(1, |z_j|)` over all components of `z`.
pub fn default_step(z: &Point) -> f64 {
    1e-4 * z.max_abs().max(1.0)
}

fn checked(u: &FunctionHandle, z: &Point) -> Result<f64> {
    u.try_eval(z)
}

/// `(u(e^{hX} z) − u(e^{−hX} z)) / (2h)`.
pub fn lie_derivative(u: &FunctionHandle, field: &FieldSpec, z: &Point, step: f64) -> Result<f64> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(crate::error::invalid("step", format!("must be positive, got {step}")));
    }
    let fwd = checked(u, &field.flow(step, z)?)?;
    let bwd = checked(u, &field.flow(-step, z)?)?;
    Ok((fwd - bwd) / (2.0 * step))
}

/// The flow rectangle `e^{−σY} e^{−τ Z_i} e^{σY} e^{τ Z_i}(z)`, built from the
/// individual flows. Its net effect is the pure displacement `x_i + τσ`.
pub fn flow_rectangle(z: &Point, i: usize, tau: f64, sigma: f64) -> Result<Point> {
    let h = FieldSpec::z_axis(z.dim(), i);
    let z1 = h.flow(tau, z)?;
    let z2 = exp_y(sigma, &z1);
    let z3 = h.flow(-tau, &z2)?;
    Ok(exp_y(-sigma, &z3))
}

/// `|[Z_i, Y]u(z) − ∂_{x_i} u(z)|` with the bracket taken from a central pair
/// of flow rectangles and `∂_{x_i}` from a central difference of step `step`.
pub fn commutator_defect(u: &FunctionHandle, i: usize, z: &Point, step: f64) -> Result<f64> {
    if i >= z.dim() {
        return Err(Error::DimensionMismatch {
            expected: z.dim(),
            found: i + 1,
        });
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(crate::error::invalid("step", format!("must be positive, got {step}")));
    }
    let plus = checked(u, &flow_rectangle(z, i, step, step)?)?;
    let minus = checked(u, &flow_rectangle(z, i, step, -step)?)?;
    let bracket = (plus - minus) / (2.0 * step * step);

    let mut e = DVector::zeros(z.dim());
    e[i] = step;
    let xp = Point::from_parts(z.t, &z.x + &e, z.v.clone());
    let xm = Point::from_parts(z.t, &z.x - &e, z.v.clone());
    let dx = (checked(u, &xp)? - checked(u, &xm)?) / (2.0 * step);
    Ok((bracket - dx).abs())
}
