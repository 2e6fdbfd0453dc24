//! Pointwise evaluation of non-local kinetic operators
//! `𝓛u = ∫ K(z, v') (u(t,x,v) − u(t,x,v')) dv' + Yu`.
//!
//! All non-local parts use the sign of `(−Δ_v)^s`, so that the symbol on
//! `cos⟨ξ, v⟩` is `+|ξ|^{2s}`. The integral is written in polar coordinates
//! around `v` and paired over antipodal directions `v ± ρθ`, which cancels the
//! first-order part of the singularity.
//!
//! Radially, the integral is split in three pieces. Below `ρ_min` the paired
//! integrand is extrapolated as a power `ρ^q` and integrated in closed form.
//! Between `ρ_min` and the far radius `R` a panel Gauss–Legendre rule is used.
//! Beyond `R` the values `u(v ± ρθ)` are replaced by their mean over the ring
//! `[R/2, R]` and integrated analytically; inside the ring they are blended
//! into that mean with a smooth taper, which keeps oscillatory integrands
//! (such as the `cos` probes used for calibration) from leaving a truncation
//! error.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{ExpPolyField, FunctionHandle};
use crate::flows::{lie_derivative, FieldSpec};
use crate::group::Point;
use crate::quadrature::{antipodal_directions, Direction, NeumaierSum, RadialRule};

/// `K(z, v')` for `z = (t, x, v)`.
pub type Kernel = Arc<dyn Fn(&Point, &DVector<f64>) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum KernelKind {
    /// `C / |v − v'|^{d+2s}`
    Prototype { c: f64 },
    /// A kernel with `c⁻ ≤ K |v − v'|^{d+2s} ≤ c⁺`. `symmetric` asserts
    /// `K(z, v + y) = K(z, v − y)`.
    General {
        kernel: Kernel,
        c_minus: f64,
        c_plus: f64,
        symmetric: bool,
    },
    /// `C |u(v) − u(v')|^{p−2} (u(v) − u(v')) / |v − v'|^{d+ps}`
    PLaplacian { p: f64, c: f64 },
}

impl fmt::Debug for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelKind::Prototype { c } => f.debug_struct("Prototype").field("c", c).finish(),
            KernelKind::General {
                c_minus,
                c_plus,
                symmetric,
                ..
            } => f
                .debug_struct("General")
                .field("c_minus", c_minus)
                .field("c_plus", c_plus)
                .field("symmetric", symmetric)
                .finish_non_exhaustive(),
            KernelKind::PLaplacian { p, c } => f.debug_struct("PLaplacian").field("p", p).field("c", c).finish(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct KernelSpec {
    s: f64,
    kind: KernelKind,
}

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive and finite, got {value}")))
    }
}

impl KernelSpec {
    fn with_s(s: f64, kind: KernelKind) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(invalid("s", format!("must lie in ]0, 1[, got {s}")));
        }
        Ok(KernelSpec { s, kind })
    }

    pub fn prototype(s: f64, c: f64) -> Result<Self> {
        check_positive("c", c)?;
        KernelSpec::with_s(s, KernelKind::Prototype { c })
    }

    /// The prototype with `C` from [`calibrate_constant`] on the oscillatory
    /// quadrature.
    pub fn calibrated_prototype(d: usize, s: f64) -> Result<Self> {
        let c = calibrate_constant(d, s, &QuadratureSpec::oscillatory(d))?;
        KernelSpec::prototype(s, c)
    }

    pub fn general(s: f64, kernel: Kernel, c_minus: f64, c_plus: f64, symmetric: bool) -> Result<Self> {
        check_positive("c_minus", c_minus)?;
        check_positive("c_plus", c_plus)?;
        if c_minus > c_plus {
            return Err(invalid("c_minus", format!("{c_minus} exceeds c_plus = {c_plus}")));
        }
        KernelSpec::with_s(
            s,
            KernelKind::General {
                kernel,
                c_minus,
                c_plus,
                symmetric,
            },
        )
    }

    pub fn p_laplacian(s: f64, p: f64, c: f64) -> Result<Self> {
        check_positive("c", c)?;
        if !(p > 1.0 && p.is_finite()) {
            return Err(invalid("p", format!("must exceed 1, got {p}")));
        }
        KernelSpec::with_s(s, KernelKind::PLaplacian { p, c })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    /// Order of the singularity: `2s`, or `ps` for the p-Laplacian.
    pub fn order(&self) -> f64 {
        match self.kind {
            KernelKind::PLaplacian { p, .. } => p * self.s,
            _ => 2.0 * self.s,
        }
    }

    /// Short text identifying the operator, used in reports.
    pub fn describe(&self) -> String {
        match &self.kind {
            KernelKind::Prototype { c } => format!("prototype(s={}, C={c:.12e})", self.s),
            KernelKind::General {
                c_minus,
                c_plus,
                symmetric,
                ..
            } => format!("general(s={}, c-={c_minus}, c+={c_plus}, symmetric={symmetric})", self.s),
            KernelKind::PLaplacian { p, c } => format!("p-laplacian(s={}, p={p}, C={c:.12e})", self.s),
        }
    }
}

/// Discretization of the velocity integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    pub near_radius: f64,
    pub far_radius: f64,
    /// Gauss–Legendre nodes per radial panel.
    pub n_radial: usize,
    pub n_angular: usize,
    /// Integrate beyond `far_radius` against the ring mean; without it the
    /// integral is truncated at `far_radius`.
    pub analytic_tail: bool,
    /// Number of dyadic panels below `near_radius`.
    pub near_levels: u32,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            near_radius: 0.1,
            far_radius: 20.0,
            n_radial: 10,
            n_angular: 64,
            analytic_tail: true,
            near_levels: 12,
        }
    }
}

impl QuadratureSpec {
    /// Settings for integrands that oscillate instead of decaying, such as
    /// the calibration probes. In one dimension only a long far radius
    /// helps; in higher dimensions the angular average already decays, and
    /// the angular rule has to resolve the oscillation instead.
    pub fn oscillatory(d: usize) -> Self {
        if d == 1 {
            QuadratureSpec {
                far_radius: 400.0,
                ..QuadratureSpec::default()
            }
        } else {
            QuadratureSpec {
                far_radius: 50.0,
                n_angular: 128,
                ..QuadratureSpec::default()
            }
        }
    }

    /// Twice the radial and angular resolution.
    pub fn refined(&self) -> Self {
        QuadratureSpec {
            n_radial: 2 * self.n_radial,
            n_angular: 2 * self.n_angular,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("near_radius", self.near_radius)?;
        check_positive("far_radius", self.far_radius)?;
        if self.near_radius >= self.far_radius {
            return Err(invalid("near_radius", "must be below far_radius"));
        }
        if self.n_radial == 0 || self.n_angular == 0 {
            return Err(invalid("n_radial", "node counts must be positive"));
        }
        Ok(())
    }
}

/// How a pair of values `u(v ± ρθ)` enters the integrand, multiplied by
/// `ρ^{d + order}`.
enum PairRule<'a> {
    /// `C (φ(u − u₊) + φ(u − u₋)) / 2` with `φ(r) = |r|^{p−2} r`.
    Power { c: f64, p: f64 },
    Kernel {
        kernel: &'a Kernel,
        z: &'a Point,
        power: f64,
        lower: f64,
        upper: f64,
    },
}

impl PairRule<'_> {
    fn value(&self, rho: f64, theta: &DVector<f64>, u0: f64, up: f64, um: f64) -> Result<f64> {
        match *self {
            PairRule::Power { c, p } => {
                let phi = |r: f64| {
                    if p == 2.0 || r == 0.0 {
                        r
                    } else {
                        r.abs().powf(p - 2.0) * r
                    }
                };
                Ok(0.5 * c * (phi(u0 - up) + phi(u0 - um)))
            }
            PairRule::Kernel {
                kernel,
                z,
                power,
                lower,
                upper,
            } => {
                let scale = rho.powf(power);
                let kp = kernel(z, &(&z.v + theta * rho)) * scale;
                let km = kernel(z, &(&z.v - theta * rho)) * scale;
                for k in [kp, km] {
                    let slack = 1e-12 * upper;
                    if !(k >= lower - slack && k <= upper + slack) {
                        return Err(Error::KernelBound {
                            distance: rho,
                            value: k,
                            lower,
                            upper,
                        });
                    }
                }
                Ok(0.5 * (kp * (u0 - up) + km * (u0 - um)))
            }
        }
    }
}

/// `Φ(ρ)`: 1 below `R/2`, 0 at `R`, a `cos²` ramp in between.
fn taper(rho: f64, far: f64) -> f64 {
    let half = 0.5 * far;
    if rho <= half {
        1.0
    } else {
        (FRAC_PI_2 * (rho - half) / half).cos().powi(2)
    }
}

/// Weight of the ring mean, a `sin²` bump over `[R/2, R]`.
fn ring_bump(rho: f64, far: f64) -> f64 {
    let half = 0.5 * far;
    if rho <= half || rho >= far {
        0.0
    } else {
        (PI * (rho - half) / half).sin().powi(2)
    }
}

/// Rings `[R/8, R/4]`, `[R/4, R/2]`, `[R/2, R]` used to detect growth of the
/// increments.
fn ring_of(rho: f64, far: f64) -> Option<usize> {
    if rho < far / 8.0 {
        None
    } else if rho < far / 4.0 {
        Some(0)
    } else if rho < far / 2.0 {
        Some(1)
    } else {
        Some(2)
    }
}

struct DirectionSum {
    value: f64,
    ring_sum: [f64; 3],
    ring_weight: [f64; 3],
}

struct Integrand<'a> {
    u: &'a FunctionHandle,
    z: &'a Point,
    u0: f64,
    rule: PairRule<'a>,
    order: f64,
    /// Power of `ρ` the paired integrand is assumed to vanish with at 0.
    vanishing: f64,
    radial: &'a RadialRule,
    analytic_tail: bool,
}

impl Integrand<'_> {
    fn shifted(&self, theta: &DVector<f64>, rho: f64) -> Result<f64> {
        let mut w = self.z.clone();
        w.v.axpy(rho, theta, 1.0);
        self.u.try_eval(&w)
    }

    fn along(&self, dir: &Direction) -> Result<DirectionSum> {
        let far = self.radial.far;
        let e = self.order;
        let theta = &dir.theta;
        let mut samples = Vec::with_capacity(self.radial.nodes.len());
        for &(rho, w) in &self.radial.nodes {
            samples.push((rho, w, self.shifted(theta, rho)?, self.shifted(theta, -rho)?));
        }

        let (mut mean_p, mut mean_m) = (NeumaierSum::default(), NeumaierSum::default());
        let mut bump_total = NeumaierSum::default();
        for &(rho, w, up, um) in &samples {
            let b = w * ring_bump(rho, far);
            mean_p.add(b * (up - self.u0));
            mean_m.add(b * (um - self.u0));
            bump_total.add(b);
        }
        let cp = self.u0 + mean_p.value() / bump_total.value();
        let cm = self.u0 + mean_m.value() / bump_total.value();

        let mut acc = NeumaierSum::default();
        let mut ring_sum = [0.0; 3];
        let mut ring_weight = [0.0; 3];
        for &(rho, w, up, um) in &samples {
            let raw = self.rule.value(rho, theta, self.u0, up, um)?;
            let f = if self.analytic_tail && rho > 0.5 * far {
                let phi = taper(rho, far);
                let fp = up + (1.0 - phi) * (cp - up);
                let fm = um + (1.0 - phi) * (cm - um);
                self.rule.value(rho, theta, self.u0, fp, fm)?
            } else {
                raw
            };
            acc.add(w * f * rho.powf(-1.0 - e));
            if let Some(i) = ring_of(rho, far) {
                ring_sum[i] += w * raw.abs();
                ring_weight[i] += w;
            }
        }

        let rho_min = self.radial.rho_min;
        let up = self.shifted(theta, rho_min)?;
        let um = self.shifted(theta, -rho_min)?;
        let f_min = self.rule.value(rho_min, theta, self.u0, up, um)?;
        acc.add(f_min * rho_min.powf(-e) / (self.vanishing - e));

        if self.analytic_tail {
            let f_far = self.rule.value(far, theta, self.u0, cp, cm)?;
            acc.add(f_far * far.powf(-e) / e);
        }
        Ok(DirectionSum {
            value: dir.weight * acc.value(),
            ring_sum,
            ring_weight,
        })
    }

    fn integrate(&self, directions: &[Direction]) -> Result<f64> {
        let parts: Vec<DirectionSum> = directions
            .par_iter()
            .map(|dir| self.along(dir))
            .collect::<Result<Vec<_>>>()?;

        let far = self.radial.far;
        if far / 8.0 > self.radial.rho_min {
            let mut means = [0.0; 3];
            for (i, mean) in means.iter_mut().enumerate() {
                let num: f64 = parts.iter().zip(directions).map(|(p, q)| q.weight * p.ring_sum[i]).sum();
                let den: f64 = parts.iter().zip(directions).map(|(p, q)| q.weight * p.ring_weight[i]).sum();
                *mean = num / den;
            }
            let floor = 1e-12 * (1.0 + self.u0.abs());
            let threshold = (self.order - 0.05).max(0.2);
            let g1 = (means[1] / means[0]).log2();
            let g2 = (means[2] / means[1]).log2();
            if means.iter().all(|&m| m > floor) && g1 > threshold && g2 > threshold {
                return Err(Error::NonIntegrable(format!(
                    "paired increments grow like |v - v'|^{:.2} near |v - v'| = {far}, the kernel decays only like |v - v'|^-{}",
                    g1.min(g2),
                    self.order
                )));
            }
        }
        Ok(crate::quadrature::neumaier_sum(parts.iter().map(|p| p.value)))
    }
}

fn run(u: &FunctionHandle, z: &Point, rule: PairRule<'_>, order: f64, vanishing: f64, quad: &QuadratureSpec) -> Result<f64> {
    quad.validate()?;
    z.check_dim(u.dim())?;
    if order >= vanishing {
        return Err(Error::SingularExponent {
            exponent: order,
            limit: vanishing,
        });
    }
    let radial = RadialRule::new(quad.near_radius, quad.far_radius, quad.n_radial, quad.near_levels)?;
    let directions = antipodal_directions(u.dim(), quad.n_angular)?;
    let integrand = Integrand {
        u,
        z,
        u0: u.try_eval(z)?,
        rule,
        order,
        vanishing,
        radial: &radial,
        analytic_tail: quad.analytic_tail,
    };
    integrand.integrate(&directions)
}

/// `C ∫ (u(t,x,v) − u(t,x,v')) |v − v'|^{−d−2s} dv'`, i.e. `(−Δ_v)^s u` up to
/// the constant.
pub fn frac_laplacian(u: &FunctionHandle, z: &Point, spec: &KernelSpec, quad: &QuadratureSpec) -> Result<f64> {
    match spec.kind {
        KernelKind::Prototype { c } => run(u, z, PairRule::Power { c, p: 2.0 }, 2.0 * spec.s, 2.0, quad),
        _ => Err(invalid("spec", "frac_laplacian needs the prototype kernel")),
    }
}

/// `∫ K(z, v') (u(t,x,v) − u(t,x,v')) dv'`. Kernel values met by the
/// quadrature are checked against the bounds `c^±`. Without the symmetry
/// flag the paired integrand only vanishes to first order, which restricts
/// this to `s < 1/2`.
pub fn general_kernel_apply(u: &FunctionHandle, z: &Point, spec: &KernelSpec, quad: &QuadratureSpec) -> Result<f64> {
    let KernelKind::General {
        kernel,
        c_minus,
        c_plus,
        symmetric,
    } = &spec.kind
    else {
        return Err(invalid("spec", "general_kernel_apply needs a general kernel"));
    };
    if !symmetric && spec.s >= 0.5 {
        return Err(Error::NeedsSymmetrizedKernel { s: spec.s });
    }
    let rule = PairRule::Kernel {
        kernel,
        z,
        power: u.dim() as f64 + 2.0 * spec.s,
        lower: *c_minus,
        upper: *c_plus,
    };
    let vanishing = if *symmetric { 2.0 } else { 1.0 };
    run(u, z, rule, 2.0 * spec.s, vanishing, quad)
}

/// `C ∫ |u(v) − u(v')|^{p−2} (u(v) − u(v')) |v − v'|^{−d−ps} dv'`.
///
/// The paired increments vanish like `ρ^p` (or `ρ^{2(p−1)}` at critical
/// points), so the integral is refused unless `ps < min(p, 2(p−1))`.
pub fn p_laplacian_apply(u: &FunctionHandle, z: &Point, spec: &KernelSpec, quad: &QuadratureSpec) -> Result<f64> {
    match spec.kind {
        KernelKind::PLaplacian { p, c } => {
            let vanishing = p.min(2.0 * (p - 1.0));
            run(u, z, PairRule::Power { c, p }, p * spec.s, vanishing, quad)
        }
        _ => Err(invalid("spec", "p_laplacian_apply needs a p-Laplacian spec")),
    }
}

/// The non-local part of `𝓛` for any kernel kind.
pub fn nonlocal(u: &FunctionHandle, z: &Point, spec: &KernelSpec, quad: &QuadratureSpec) -> Result<f64> {
    match spec.kind {
        KernelKind::Prototype { .. } => frac_laplacian(u, z, spec, quad),
        KernelKind::General { .. } => general_kernel_apply(u, z, spec, quad),
        KernelKind::PLaplacian { .. } => p_laplacian_apply(u, z, spec, quad),
    }
}

/// Non-local part plus `Yu` by a central difference of step `step`.
pub fn apply_l(u: &FunctionHandle, z: &Point, spec: &KernelSpec, quad: &QuadratureSpec, step: f64) -> Result<f64> {
    Ok(nonlocal(u, z, spec, quad)? + lie_derivative(u, &FieldSpec::Y, z, step)?)
}

/// `v ↦ cos⟨ξ, v⟩` in dimension `d` with `ξ = |ξ| e_1`.
pub fn cos_probe(d: usize, xi: f64) -> FunctionHandle {
    let mut freq = vec![0.0; 1 + 2 * d];
    freq[1 + d] = xi;
    ExpPolyField::cos(&freq).into_handle(format!("cos({xi} v1)"))
}

/// `C` such that the prototype maps `cos⟨ξ, v⟩` to `|ξ|^{2s}` at `v = 0`,
/// for `|ξ| = xi`.
pub fn calibrate_constant_at(d: usize, s: f64, xi: f64, quad: &QuadratureSpec) -> Result<f64> {
    check_positive("xi", xi)?;
    let unit = KernelSpec::prototype(s, 1.0)?;
    let integral = frac_laplacian(&cos_probe(d, xi), &Point::identity(d), &unit, quad)?;
    if !(integral > 0.0 && integral.is_finite()) {
        return Err(Error::NonFinite(format!("calibration integral {integral}")));
    }
    Ok(xi.powf(2.0 * s) / integral)
}

/// [`calibrate_constant_at`] with the reference frequency `|ξ| = 1`.
pub fn calibrate_constant(d: usize, s: f64, quad: &QuadratureSpec) -> Result<f64> {
    calibrate_constant_at(d, s, 1.0, quad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::PolynomialField;
    use crate::group::{compose, dilate, Anisotropy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::function::gamma::gamma;

    /// `4^s Γ(d/2 + s) / (π^{d/2} |Γ(−s)|)`
    fn exact_constant(d: usize, s: f64) -> f64 {
        let h = d as f64 / 2.0;
        4f64.powf(s) * gamma(h + s) / (PI.powf(h) * gamma(-s).abs())
    }

    fn bump(d: usize) -> FunctionHandle {
        FunctionHandle::from_fn("bump", d, |z: &Point| {
            let r2 = z.v.norm_squared() + 0.3 * z.x.norm_squared() + 0.1 * z.t * z.t;
            (1.0 + 0.5 * z.v[0] + 0.3 * z.x[0] * z.v[0] + 0.2 * z.t) * (-r2).exp()
        })
    }

    fn quad() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn constants_give_zero() {
        let c = PolynomialField::constant(1, 3.0).into_handle("3");
        let z = Point::scalar(0.2, 0.1, -0.4);
        assert_eq!(frac_laplacian(&c, &z, &KernelSpec::prototype(0.5, 1.0).unwrap(), &quad()).unwrap(), 0.0);
        let pl = KernelSpec::p_laplacian(0.4, 1.8, 1.0).unwrap();
        assert_eq!(p_laplacian_apply(&c, &z, &pl, &quad()).unwrap(), 0.0);
        assert_eq!(apply_l(&c, &z, &pl, &quad(), 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn calibration_matches_the_fourier_constant() {
        for s in [0.25, 0.5, 0.75] {
            let c = calibrate_constant(1, s, &QuadratureSpec::oscillatory(1)).unwrap();
            let exact = exact_constant(1, s);
            assert!(((c - exact) / exact).abs() < 1e-5, "s={s}: {c} vs {exact}");
        }
        for d in [2, 3] {
            let c = calibrate_constant(d, 0.5, &QuadratureSpec::oscillatory(d)).unwrap();
            let exact = exact_constant(d, 0.5);
            assert!(((c - exact) / exact).abs() < 1e-3, "d={d}: {c} vs {exact}");
        }
    }

    #[test]
    fn calibration_is_self_consistent() {
        let q = QuadratureSpec::oscillatory(1);
        let c1 = calibrate_constant_at(1, 0.5, 1.0, &q).unwrap();
        let c2 = calibrate_constant_at(1, 0.5, 2.0, &q).unwrap();
        assert!(((c1 - c2) / c1).abs() < 1e-3);
        let fine = calibrate_constant(1, 0.5, &q.refined()).unwrap();
        assert!(((c1 - fine) / c1).abs() < 1e-4);
    }

    #[test]
    fn symbol_on_cos_probes() {
        let q = QuadratureSpec::oscillatory(1);
        for s in [0.25, 0.75] {
            let spec = KernelSpec::prototype(s, calibrate_constant(1, s, &q).unwrap()).unwrap();
            for xi in [0.5, 2.0] {
                let got = frac_laplacian(&cos_probe(1, xi), &Point::identity(1), &spec, &q).unwrap();
                let want = xi.powf(2.0 * s);
                assert!(((got - want) / want).abs() < 1e-3, "s={s} xi={xi}: {got}");
            }
        }
    }

    #[test]
    fn near_unit_order_acts_like_minus_second_derivative() {
        let u = FunctionHandle::from_fn("v^2 window", 1, |z: &Point| z.v[0].powi(2) * (-0.1 * z.v[0].powi(2)).exp());
        let spec = KernelSpec::prototype(0.9, exact_constant(1, 0.9)).unwrap();
        let value = frac_laplacian(&u, &Point::identity(1), &spec, &quad()).unwrap();
        assert!(value < 0.0);
    }

    #[test]
    fn linear_in_u() {
        let spec = KernelSpec::prototype(0.6, 1.3).unwrap();
        let u1 = bump(1);
        let u2 = cos_probe(1, 0.7);
        let combo = {
            let (a, b) = (u1.clone(), u2.clone());
            FunctionHandle::from_fn("combo", 1, move |z: &Point| 2.0 * a.eval(z) - 0.5 * b.eval(z))
        };
        let z = Point::scalar(0.1, 0.2, 0.3);
        let lhs = frac_laplacian(&combo, &z, &spec, &quad()).unwrap();
        let rhs = 2.0 * frac_laplacian(&u1, &z, &spec, &quad()).unwrap() - 0.5 * frac_laplacian(&u2, &z, &spec, &quad()).unwrap();
        assert!((lhs - rhs).abs() < 1e-9 * rhs.abs(), "{lhs} vs {rhs}");
    }

    fn prototype_kernel(d: usize, s: f64, c: f64, factor: fn(f64) -> f64) -> Kernel {
        Arc::new(move |z: &Point, w: &DVector<f64>| {
            let y = w - &z.v;
            c * factor(y[0]) / y.norm().powf(d as f64 + 2.0 * s)
        })
    }

    #[test]
    fn general_kernel_reduces_to_prototype() {
        let (s, c) = (0.7, 0.8);
        let u = bump(1);
        let z = Point::scalar(0.0, 0.3, -0.2);
        let proto = frac_laplacian(&u, &z, &KernelSpec::prototype(s, c).unwrap(), &quad()).unwrap();
        let same = KernelSpec::general(s, prototype_kernel(1, s, c, |_| 1.0), c * 0.5, c * 2.0, true).unwrap();
        let got = general_kernel_apply(&u, &z, &same, &quad()).unwrap();
        assert!((got - proto).abs() < 1e-10);
        let double = KernelSpec::general(s, prototype_kernel(1, s, c, |_| 2.0), c, c * 3.0, true).unwrap();
        let got2 = general_kernel_apply(&u, &z, &double, &quad()).unwrap();
        assert!((got2 - 2.0 * proto).abs() < 1e-10);
    }

    #[test]
    fn perturbed_kernels_stay_in_the_bracket() {
        // At v = 0 the increments u(0) − u(v') of a radially decreasing u are
        // one-signed, so the kernel bounds bracket the result.
        let u = FunctionHandle::from_fn("gauss", 1, |z: &Point| (-z.v[0] * z.v[0]).exp());
        let z = Point::identity(1);
        let c = 1.0;
        for (s, factor, symmetric) in [
            (0.7, (|y: f64| 1.0 + 0.1 * y.cos()) as fn(f64) -> f64, true),
            (0.3, (|y: f64| 1.0 + 0.1 * y.sin()) as fn(f64) -> f64, false),
        ] {
            let proto = frac_laplacian(&u, &z, &KernelSpec::prototype(s, c).unwrap(), &quad()).unwrap();
            let spec = KernelSpec::general(s, prototype_kernel(1, s, c, factor), 0.9 * c, 1.1 * c, symmetric).unwrap();
            let got = general_kernel_apply(&u, &z, &spec, &quad()).unwrap();
            assert!(proto > 0.0 && got >= 0.9 * proto && got <= 1.1 * proto, "s={s}: {got} vs {proto}");
        }
    }

    #[test]
    fn general_kernel_errors() {
        let u = bump(1);
        let z = Point::identity(1);
        let odd = KernelSpec::general(0.6, prototype_kernel(1, 0.6, 1.0, |y| 1.0 + 0.1 * y.sin()), 0.9, 1.1, false).unwrap();
        assert_eq!(general_kernel_apply(&u, &z, &odd, &quad()).unwrap_err(), Error::NeedsSymmetrizedKernel { s: 0.6 });
        let loose = KernelSpec::general(0.4, prototype_kernel(1, 0.4, 1.0, |_| 1.0), 1.5, 2.0, true).unwrap();
        assert!(matches!(general_kernel_apply(&u, &z, &loose, &quad()), Err(Error::KernelBound { .. })));
    }

    #[test]
    fn p_laplacian_cases() {
        let u = bump(1);
        let z = Point::scalar(0.1, -0.2, 0.4);
        for s in [0.25, 0.5, 0.75] {
            let proto = frac_laplacian(&u, &z, &KernelSpec::prototype(s, 1.7).unwrap(), &quad()).unwrap();
            let p2 = p_laplacian_apply(&u, &z, &KernelSpec::p_laplacian(s, 2.0, 1.7).unwrap(), &quad()).unwrap();
            assert!((p2 - proto).abs() < 1e-10);
        }
        let odd = FunctionHandle::from_fn("odd", 1, |z: &Point| z.v[0] * (-z.v[0] * z.v[0]).exp());
        let spec = KernelSpec::p_laplacian(0.4, 3.0, 1.0).unwrap();
        let value = p_laplacian_apply(&odd, &Point::scalar(0.3, 0.5, 0.0), &spec, &quad()).unwrap();
        assert!(value.abs() < 1e-12);
        let too_singular = KernelSpec::p_laplacian(0.9, 1.5, 1.0).unwrap();
        assert_eq!(
            p_laplacian_apply(&u, &z, &too_singular, &quad()).unwrap_err(),
            Error::SingularExponent { exponent: 1.35, limit: 1.0 }
        );
    }

    #[test]
    fn growing_increments_are_refused() {
        let u = FunctionHandle::from_fn("|v|", 1, |z: &Point| z.v[0].abs());
        let spec = KernelSpec::prototype(0.25, 1.0).unwrap();
        assert!(matches!(frac_laplacian(&u, &Point::identity(1), &spec, &quad()), Err(Error::NonIntegrable(_))));
        let spec = KernelSpec::prototype(0.75, 1.0).unwrap();
        assert!(frac_laplacian(&u, &Point::identity(1), &spec, &quad()).is_ok());
    }

    #[test]
    fn transport_part_on_x() {
        let u = PolynomialField::monomial(1.0, 0, &[1], &[0]).into_handle("x");
        let spec = KernelSpec::prototype(0.5, 1.0).unwrap();
        let value = apply_l(&u, &Point::scalar(0.0, 0.3, 1.7), &spec, &quad(), 1e-4).unwrap();
        assert!((value - 1.7).abs() < 1e-10);
    }

    #[test]
    fn galilean_invariance() {
        let spec = KernelSpec::prototype(0.6, 1.0).unwrap();
        let u = bump(1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let mut p = || Point::scalar(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let (z1, z2) = (p(), p());
            let lhs = apply_l(&u.left_translated(&z1), &z2, &spec, &quad(), 1e-4).unwrap();
            let rhs = apply_l(&u, &compose(&z1, &z2).unwrap(), &spec, &quad(), 1e-4).unwrap();
            assert!((lhs - rhs).abs() < 1e-6, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn dilation_homogeneity() {
        let s = 0.6;
        let a = Anisotropy::new(1, 2.0 * s).unwrap();
        let spec = KernelSpec::prototype(s, 1.0).unwrap();
        let u = bump(1);
        let z = Point::scalar(0.2, 0.4, -0.3);
        let step = 1e-5;
        for lambda in [0.5, 2.0] {
            let lhs = apply_l(&u.dilated(lambda, &a), &z, &spec, &quad(), step).unwrap();
            let dz = dilate(lambda, &z, &a).unwrap();
            let rhs = lambda.powf(2.0 * s) * apply_l(&u, &dz, &spec, &quad(), step * lambda.powf(2.0 * s)).unwrap();
            assert!(((lhs - rhs) / rhs).abs() < 1e-5, "lambda={lambda}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn bad_specs_are_rejected() {
        assert!(KernelSpec::prototype(1.0, 1.0).is_err());
        assert!(KernelSpec::prototype(0.5, -1.0).is_err());
        assert!(KernelSpec::p_laplacian(0.5, 1.0, 1.0).is_err());
        let q = QuadratureSpec {
            near_radius: 30.0,
            ..QuadratureSpec::default()
        };
        assert!(q.validate().is_err());
    }
}
