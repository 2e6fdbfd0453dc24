//! Scalar fields `u(t, x, v)` and their Lie derivatives.
//!
//! [`FunctionHandle`] is the currency passed to every numerical routine. It wraps
//! a [`ScalarField`], which can optionally hand out exact derivative fields along
//! `∂_t`, `∂_{x_i}`, `∂_{v_i}` and the drift `Y`. Two symbolic backends provide
//! such derivatives in closed form: [`PolynomialField`] (real polynomials in
//! `(t, x, v)`) and [`ExpPolyField`] (real parts of polynomial-times-exponential
//! sums, which covers `sin`, `cos` and their products).

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::flows;
use crate::group::{self, Anisotropy, Point};
use crate::index::TermIndex;

/// A first-order differential operator acting on scalar fields.
#[derive(Clone, Debug)]
pub enum DiffOp {
    T,
    /// `∂_{x_i}`
    X(usize),
    /// `Z_i = ∂_{v_i}`
    V(usize),
    /// `Y = ⟨v, ∇_x⟩ + ∂_t`
    Y,
    /// `Y = ⟨B (x, v), ∇_{(x,v)}⟩ + ∂_t` for a `2d × 2d` drift matrix `B`.
    YDrift(Arc<DMatrix<f64>>),
}

impl fmt::Display for DiffOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffOp::T => write!(f, "d/dt"),
            DiffOp::X(i) => write!(f, "d/dx{}", i + 1),
            DiffOp::V(i) => write!(f, "d/dv{}", i + 1),
            DiffOp::Y => write!(f, "Y"),
            DiffOp::YDrift(_) => write!(f, "Y_B"),
        }
    }
}

impl DiffOp {
    /// Moves `z` along the integral curve of the operator for time `tau`.
    pub fn flow(&self, tau: f64, z: &Point) -> Point {
        match self {
            DiffOp::T => Point::from_parts(z.t + tau, z.x.clone(), z.v.clone()),
            DiffOp::X(i) => {
                let mut out = z.clone();
                out.x[*i] += tau;
                out
            }
            DiffOp::V(i) => {
                let mut out = z.clone();
                out.v[*i] += tau;
                out
            }
            DiffOp::Y => flows::exp_y(tau, z),
            DiffOp::YDrift(b) => flows::exp_y_drift(tau, z, b),
        }
    }
}

/// Something that can be evaluated at a point and, optionally, differentiated.
pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, z: &Point) -> f64;

    /// Exact derivative along `op`, when the backend knows it.
    fn derivative(&self, _op: &DiffOp) -> Option<Arc<dyn ScalarField>> {
        None
    }

    /// Direct value of `Y^k ∂_v^β ∂_x^γ u (z)` for backends that store such
    /// values without being able to build derivative fields.
    fn term_value(&self, _k: u32, _gamma: &[u32], _beta: &[u32], _z: &Point) -> Option<f64> {
        None
    }
}

/// An evaluable scalar field with a label, the unit passed to every routine.
#[derive(Clone)]
pub struct FunctionHandle {
    label: String,
    field: Arc<dyn ScalarField>,
}

impl fmt::Debug for FunctionHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionHandle").field("label", &self.label).finish()
    }
}

struct ClosureField<F> {
    d: usize,
    f: F,
}

impl<F: Fn(&Point) -> f64 + Send + Sync> ScalarField for ClosureField<F> {
    fn dim(&self) -> usize {
        self.d
    }
    fn eval(&self, z: &Point) -> f64 {
        (self.f)(z)
    }
}

type TermOracle = dyn Fn(&TermIndex, &Point) -> f64 + Send + Sync;

struct OracleField<F> {
    d: usize,
    f: F,
    oracle: Arc<TermOracle>,
}

impl<F: Fn(&Point) -> f64 + Send + Sync> ScalarField for OracleField<F> {
    fn dim(&self) -> usize {
        self.d
    }
    fn eval(&self, z: &Point) -> f64 {
        (self.f)(z)
    }
    fn term_value(&self, k: u32, gamma: &[u32], beta: &[u32], z: &Point) -> Option<f64> {
        let idx = TermIndex::raw(k, gamma.to_vec(), beta.to_vec());
        Some((self.oracle)(&idx, z))
    }
}

impl FunctionHandle {
    pub fn new(label: impl Into<String>, field: Arc<dyn ScalarField>) -> Self {
        FunctionHandle {
            label: label.into(),
            field,
        }
    }

    /// A handle without any derivative information.
    pub fn from_fn<F>(label: impl Into<String>, d: usize, f: F) -> Self
    where
        F: Fn(&Point) -> f64 + Send + Sync + 'static,
    {
        FunctionHandle::new(label, Arc::new(ClosureField { d, f }))
    }

    /// A handle whose Taylor coefficients `Y^k ∂_v^β ∂_x^γ u(z)` come from a
    /// user supplied closure. The `weight` field of the index passed to the
    /// oracle is not meaningful.
    pub fn with_term_oracle<F, O>(label: impl Into<String>, d: usize, f: F, oracle: O) -> Self
    where
        F: Fn(&Point) -> f64 + Send + Sync + 'static,
        O: Fn(&TermIndex, &Point) -> f64 + Send + Sync + 'static,
    {
        FunctionHandle::new(
            label,
            Arc::new(OracleField {
                d,
                f,
                oracle: Arc::new(oracle),
            }),
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn field(&self) -> &Arc<dyn ScalarField> {
        &self.field
    }

    pub fn eval(&self, z: &Point) -> f64 {
        self.field.eval(z)
    }

    /// Evaluates and rejects NaN or infinite values.
    pub fn try_eval(&self, z: &Point) -> Result<f64> {
        let value = self.field.eval(z);
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite(format!("evaluation of `{}`", self.label)))
        }
    }

    pub fn derivative(&self, op: &DiffOp) -> Result<FunctionHandle> {
        self.field
            .derivative(op)
            .map(|field| FunctionHandle {
                label: format!("{} {}", op, self.label),
                field,
            })
            .ok_or_else(|| Error::MissingDerivative(format!("{} of `{}`", op, self.label)))
    }

    /// The field `Y^k ∂_v^β ∂_x^γ u`, innermost `∂_x^γ`, outermost `Y^k`.
    pub fn term_derivative(&self, k: u32, gamma: &[u32], beta: &[u32]) -> Result<FunctionHandle> {
        let mut out = self.clone();
        for (i, &g) in gamma.iter().enumerate() {
            for _ in 0..g {
                out = out.derivative(&DiffOp::X(i))?;
            }
        }
        for (i, &b) in beta.iter().enumerate() {
            for _ in 0..b {
                out = out.derivative(&DiffOp::V(i))?;
            }
        }
        for _ in 0..k {
            out = out.derivative(&DiffOp::Y)?;
        }
        Ok(out)
    }

    /// `Y^k ∂_v^β ∂_x^γ u (z)` from the exact oracle.
    pub fn term_value(&self, idx: &TermIndex, z: &Point) -> Result<f64> {
        if let Some(value) = self.field.term_value(idx.k, &idx.gamma, &idx.beta, z) {
            return Ok(value);
        }
        self.term_derivative(idx.k, &idx.gamma, &idx.beta)
            .map_err(|_| Error::MissingDerivative(format!("term {idx} of `{}`", self.label)))
            .map(|h| h.eval(z))
    }

    /// `c · u`.
    pub fn scaled(&self, c: f64) -> FunctionHandle {
        FunctionHandle::new(
            format!("{c}*{}", self.label),
            Arc::new(Scaled {
                base: self.clone(),
                c,
            }),
        )
    }

    /// `z ↦ u(z1 ∘ z)`. Derivatives along the left-invariant fields `Y`,
    /// `∂_{x_i}`, `∂_{v_i}` are inherited from `u`.
    pub fn left_translated(&self, z1: &Point) -> FunctionHandle {
        FunctionHandle::new(
            format!("{} o L", self.label),
            Arc::new(LeftTranslated {
                base: self.clone(),
                z1: z1.clone(),
            }),
        )
    }

    /// `z ↦ u(D_λ z)`.
    pub fn dilated(&self, lambda: f64, a: &Anisotropy) -> FunctionHandle {
        FunctionHandle::new(
            format!("{} o D{lambda}", self.label),
            Arc::new(Dilated {
                base: self.clone(),
                lambda,
                a: *a,
            }),
        )
    }

    /// Wraps the handle so that missing derivatives are synthesized by central
    /// differences of step `step`, nested at most `depth` times.
    pub fn with_finite_differences(&self, step: f64, depth: usize) -> FunctionHandle {
        FunctionHandle::new(
            self.label.clone(),
            Arc::new(FiniteDifference {
                base: self.clone(),
                step,
                depth,
            }),
        )
    }
}

struct Scaled {
    base: FunctionHandle,
    c: f64,
}

impl ScalarField for Scaled {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn eval(&self, z: &Point) -> f64 {
        self.c * self.base.eval(z)
    }
    fn derivative(&self, op: &DiffOp) -> Option<Arc<dyn ScalarField>> {
        let inner = self.base.derivative(op).ok()?;
        Some(Arc::new(Scaled { base: inner, c: self.c }))
    }
}

struct LeftTranslated {
    base: FunctionHandle,
    z1: Point,
}

impl ScalarField for LeftTranslated {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn eval(&self, z: &Point) -> f64 {
        match group::compose(&self.z1, z) {
            Ok(w) => self.base.eval(&w),
            Err(_) => f64::NAN,
        }
    }
    fn derivative(&self, op: &DiffOp) -> Option<Arc<dyn ScalarField>> {
        match op {
            DiffOp::Y | DiffOp::X(_) | DiffOp::V(_) => {
                let inner = self.base.derivative(op).ok()?;
                Some(Arc::new(LeftTranslated {
                    base: inner,
                    z1: self.z1.clone(),
                }))
            }
            _ => None,
        }
    }
}

struct Dilated {
    base: FunctionHandle,
    lambda: f64,
    a: Anisotropy,
}

impl ScalarField for Dilated {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn eval(&self, z: &Point) -> f64 {
        match group::dilate(self.lambda, z, &self.a) {
            Ok(w) => self.base.eval(&w),
            Err(_) => f64::NAN,
        }
    }
    fn derivative(&self, op: &DiffOp) -> Option<Arc<dyn ScalarField>> {
        let degree = match op {
            DiffOp::T | DiffOp::Y => self.a.theta,
            DiffOp::X(_) => self.a.theta + 1.0,
            DiffOp::V(_) => 1.0,
            DiffOp::YDrift(_) => return None,
        };
        let inner = self.base.derivative(op).ok()?;
        Some(Arc::new(Scaled {
            base: FunctionHandle::new(
                "",
                Arc::new(Dilated {
                    base: inner,
                    lambda: self.lambda,
                    a: self.a,
                }),
            ),
            c: self.lambda.powf(degree),
        }))
    }
}

struct FiniteDifference {
    base: FunctionHandle,
    step: f64,
    depth: usize,
}

struct CentralDifference {
    base: FunctionHandle,
    op: DiffOp,
    step: f64,
}

impl ScalarField for CentralDifference {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn eval(&self, z: &Point) -> f64 {
        let fwd = self.base.eval(&self.op.flow(self.step, z));
        let bwd = self.base.eval(&self.op.flow(-self.step, z));
        (fwd - bwd) / (2.0 * self.step)
    }
}

impl ScalarField for FiniteDifference {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn eval(&self, z: &Point) -> f64 {
        self.base.eval(z)
    }
    fn derivative(&self, op: &DiffOp) -> Option<Arc<dyn ScalarField>> {
        if let Ok(exact) = self.base.derivative(op) {
            return Some(Arc::new(FiniteDifference {
                base: exact,
                step: self.step,
                depth: self.depth,
            }));
        }
        if self.depth == 0 {
            return None;
        }
        let approx = FunctionHandle::new(
            format!("{op}~"),
            Arc::new(CentralDifference {
                base: self.base.clone(),
                op: op.clone(),
                step: self.step,
            }),
        );
        Some(Arc::new(FiniteDifference {
            base: approx,
            step: self.step,
            depth: self.depth - 1,
        }))
    }
}

/// Coefficient ring of the symbolic polynomials.
pub trait Coefficient:
    Copy + Send + Sync + fmt::Debug + PartialEq + Add<Output = Self> + Mul<Output = Self> + Mul<f64, Output = Self> + From<f64>
{
    fn is_zero(&self) -> bool {
        *self == Self::from(0.0)
    }
}

impl Coefficient for f64 {}
impl Coefficient for Complex64 {}

/// Sparse polynomial in the `1 + 2d` variables `(t, x_1..x_d, v_1..v_d)`,
/// keyed by exponent vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly<C> {
    d: usize,
    terms: BTreeMap<Vec<u32>, C>,
}

impl<C: Coefficient> Poly<C> {
    pub fn zero(d: usize) -> Self {
        Poly {
            d,
            terms: BTreeMap::new(),
        }
    }

    pub fn nvars(&self) -> usize {
        1 + 2 * self.d
    }

    pub fn add_term(&mut self, exps: Vec<u32>, c: C) {
        debug_assert_eq!(exps.len(), self.nvars());
        if c.is_zero() {
            return;
        }
        let slot = self.terms.entry(exps).or_insert(C::from(0.0));
        *slot = *slot + c;
        // exact cancellations are removed to keep the term list tight
        self.terms.retain(|_, c| !c.is_zero());
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &C)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn plus(&self, other: &Poly<C>) -> Poly<C> {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), *c);
        }
        out
    }

    pub fn scale(&self, c: C) -> Poly<C> {
        let mut out = Poly::zero(self.d);
        for (e, k) in &self.terms {
            out.add_term(e.clone(), *k * c);
        }
        out
    }

    pub fn times(&self, other: &Poly<C>) -> Poly<C> {
        let mut out = Poly::zero(self.d);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &other.terms {
                let e: Vec<u32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                out.add_term(e, *c1 * *c2);
            }
        }
        out
    }

    /// `∂/∂(variable var)`.
    pub fn partial(&self, var: usize) -> Poly<C> {
        let mut out = Poly::zero(self.d);
        for (e, c) in &self.terms {
            if e[var] > 0 {
                let mut e2 = e.clone();
                e2[var] -= 1;
                out.add_term(e2, *c * f64::from(e[var]));
            }
        }
        out
    }

    /// Multiplies by `c · (variable var)`.
    pub fn times_var(&self, var: usize, c: f64) -> Poly<C> {
        let mut out = Poly::zero(self.d);
        for (e, k) in &self.terms {
            let mut e2 = e.clone();
            e2[var] += 1;
            out.add_term(e2, *k * c);
        }
        out
    }

    /// Applies a first-order operator whose coefficients are polynomial.
    pub fn apply(&self, op: &DiffOp) -> Poly<C> {
        let d = self.d;
        match op {
            DiffOp::T => self.partial(0),
            DiffOp::X(i) => self.partial(1 + i),
            DiffOp::V(i) => self.partial(1 + d + i),
            DiffOp::Y => {
                let mut out = self.partial(0);
                for i in 0..d {
                    out = out.plus(&self.partial(1 + i).times_var(1 + d + i, 1.0));
                }
                out
            }
            DiffOp::YDrift(b) => {
                let mut out = self.partial(0);
                for r in 0..2 * d {
                    let dp = self.partial(1 + r);
                    if dp.is_zero() {
                        continue;
                    }
                    for c in 0..2 * d {
                        if b[(r, c)] != 0.0 {
                            out = out.plus(&dp.times_var(1 + c, b[(r, c)]));
                        }
                    }
                }
                out
            }
        }
    }

    pub fn eval_coords(&self, coords: &[f64]) -> C {
        let mut acc = C::from(0.0);
        for (e, c) in &self.terms {
            let mut m = 1.0;
            for (xi, &p) in coords.iter().zip(e) {
                if p > 0 {
                    m *= xi.powi(p as i32);
                }
            }
            acc = acc + *c * m;
        }
        acc
    }

    /// Largest weighted degree `ϑ a + (1+ϑ)|b| + |c|` among the terms.
    pub fn weighted_degree(&self, theta: f64) -> f64 {
        let d = self.d;
        self.terms
            .keys()
            .map(|e| {
                let x: u32 = e[1..=d].iter().sum();
                let v: u32 = e[1 + d..].iter().sum();
                theta * f64::from(e[0]) + (1.0 + theta) * f64::from(x) + f64::from(v)
            })
            .fold(0.0, f64::max)
    }
}

/// Real polynomial field `Σ c t^a x^b v^c`; closed under `∂_t`, `∂_x`, `∂_v`
/// and both drift fields.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialField {
    poly: Poly<f64>,
}

impl PolynomialField {
    pub fn zero(d: usize) -> Self {
        PolynomialField { poly: Poly::zero(d) }
    }

    pub fn constant(d: usize, c: f64) -> Self {
        let mut p = Poly::zero(d);
        p.add_term(vec![0; 1 + 2 * d], c);
        PolynomialField { poly: p }
    }

    /// `c t^a x^b v^c` with multi-indices `b` and `c` of length `d`.
    pub fn monomial(coef: f64, t_pow: u32, x_pow: &[u32], v_pow: &[u32]) -> Self {
        assert_eq!(x_pow.len(), v_pow.len(), "multi-index lengths differ");
        let d = x_pow.len();
        let mut exps = Vec::with_capacity(1 + 2 * d);
        exps.push(t_pow);
        exps.extend_from_slice(x_pow);
        exps.extend_from_slice(v_pow);
        let mut p = Poly::zero(d);
        p.add_term(exps, coef);
        PolynomialField { poly: p }
    }

    pub fn from_terms(d: usize, terms: &[(f64, u32, Vec<u32>, Vec<u32>)]) -> Self {
        terms.iter().fold(PolynomialField::zero(d), |acc, (c, a, b, v)| {
            acc.plus(&PolynomialField::monomial(*c, *a, b, v))
        })
    }

    pub fn plus(&self, other: &PolynomialField) -> PolynomialField {
        PolynomialField {
            poly: self.poly.plus(&other.poly),
        }
    }

    pub fn times(&self, other: &PolynomialField) -> PolynomialField {
        PolynomialField {
            poly: self.poly.times(&other.poly),
        }
    }

    pub fn apply(&self, op: &DiffOp) -> PolynomialField {
        PolynomialField { poly: self.poly.apply(op) }
    }

    pub fn poly(&self) -> &Poly<f64> {
        &self.poly
    }

    pub fn weighted_degree(&self, theta: f64) -> f64 {
        self.poly.weighted_degree(theta)
    }

    pub fn into_handle(self, label: impl Into<String>) -> FunctionHandle {
        FunctionHandle::new(label, Arc::new(self))
    }
}

impl ScalarField for PolynomialField {
    fn dim(&self) -> usize {
        self.poly.d
    }
    fn eval(&self, z: &Point) -> f64 {
        self.poly.eval_coords(&z.coords())
    }
    fn derivative(&self, op: &DiffOp) -> Option<Arc<dyn ScalarField>> {
        Some(Arc::new(self.apply(op)))
    }
}

/// One summand `P(z) exp(⟨κ, z⟩)` of an [`ExpPolyField`].
#[derive(Debug, Clone, PartialEq)]
struct ExpPart {
    freq: Vec<Complex64>,
    poly: Poly<Complex64>,
}

/// `Re Σ_j P_j(z) exp(⟨κ_j, z⟩)` with complex polynomial coefficients and
/// complex frequencies over the flat coordinates `(t, x, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpPolyField {
    d: usize,
    parts: Vec<ExpPart>,
}

impl ExpPolyField {
    pub fn zero(d: usize) -> Self {
        ExpPolyField { d, parts: Vec::new() }
    }

    fn single(d: usize, coef: Complex64, freq: Vec<Complex64>) -> Self {
        let mut poly = Poly::zero(d);
        poly.add_term(vec![0; 1 + 2 * d], coef);
        ExpPolyField {
            d,
            parts: vec![ExpPart { freq, poly }],
        }
    }

    /// `cos(⟨k, z⟩)` for a real frequency over the flat coordinates.
    pub fn cos(freq: &[f64]) -> Self {
        let d = (freq.len() - 1) / 2;
        ExpPolyField::single(d, Complex64::new(1.0, 0.0), freq.iter().map(|k| Complex64::new(0.0, *k)).collect())
    }

    /// `sin(⟨k, z⟩) = Re(-i e^{i⟨k, z⟩})`.
    pub fn sin(freq: &[f64]) -> Self {
        let d = (freq.len() - 1) / 2;
        ExpPolyField::single(d, Complex64::new(0.0, -1.0), freq.iter().map(|k| Complex64::new(0.0, *k)).collect())
    }

    /// `exp(⟨k, z⟩)` for a real frequency.
    pub fn exp(freq: &[f64]) -> Self {
        let d = (freq.len() - 1) / 2;
        ExpPolyField::single(d, Complex64::new(1.0, 0.0), freq.iter().map(|k| Complex64::new(*k, 0.0)).collect())
    }

    pub fn from_polynomial(p: &PolynomialField) -> Self {
        let d = p.poly.d;
        let mut poly = Poly::zero(d);
        for (e, c) in p.poly.terms() {
            poly.add_term(e.clone(), Complex64::new(*c, 0.0));
        }
        ExpPolyField {
            d,
            parts: vec![ExpPart {
                freq: vec![Complex64::new(0.0, 0.0); 1 + 2 * d],
                poly,
            }],
        }
    }

    fn push(&mut self, part: ExpPart) {
        if part.poly.is_zero() {
            return;
        }
        if let Some(existing) = self.parts.iter_mut().find(|p| p.freq == part.freq) {
            existing.poly = existing.poly.plus(&part.poly);
        } else {
            self.parts.push(part);
        }
        self.parts.retain(|p| !p.poly.is_zero());
    }

    pub fn plus(&self, other: &ExpPolyField) -> ExpPolyField {
        let mut out = self.clone();
        for p in &other.parts {
            out.push(p.clone());
        }
        out
    }

    pub fn scale(&self, c: f64) -> ExpPolyField {
        let mut out = ExpPolyField::zero(self.d);
        for p in &self.parts {
            out.push(ExpPart {
                freq: p.freq.clone(),
                poly: p.poly.scale(Complex64::new(c, 0.0)),
            });
        }
        out
    }

    /// Pointwise product of the real parts. Uses `Re a · Re b = (Re(ab) + Re(a b̄)) / 2`.
    pub fn times(&self, other: &ExpPolyField) -> ExpPolyField {
        let mut out = ExpPolyField::zero(self.d);
        for a in &self.parts {
            for b in &other.parts {
                let f1: Vec<_> = a.freq.iter().zip(&b.freq).map(|(p, q)| p + q).collect();
                out.push(ExpPart {
                    freq: f1,
                    poly: a.poly.times(&b.poly).scale(Complex64::new(0.5, 0.0)),
                });
                let f2: Vec<_> = a.freq.iter().zip(&b.freq).map(|(p, q)| p + q.conj()).collect();
                let mut conj = Poly::zero(self.d);
                for (e, c) in b.poly.terms() {
                    conj.add_term(e.clone(), c.conj());
                }
                out.push(ExpPart {
                    freq: f2,
                    poly: a.poly.times(&conj).scale(Complex64::new(0.5, 0.0)),
                });
            }
        }
        out
    }

    pub fn apply(&self, op: &DiffOp) -> ExpPolyField {
        let d = self.d;
        let mut out = ExpPolyField::zero(d);
        for part in &self.parts {
            // chain rule: op(P e^{κ·z}) = (op P + (op κ·z) P) e^{κ·z}
            let mut poly = part.poly.apply(op);
            match op {
                DiffOp::T => poly = poly.plus(&part.poly.scale(part.freq[0])),
                DiffOp::X(i) => poly = poly.plus(&part.poly.scale(part.freq[1 + i])),
                DiffOp::V(i) => poly = poly.plus(&part.poly.scale(part.freq[1 + d + i])),
                DiffOp::Y => {
                    poly = poly.plus(&part.poly.scale(part.freq[0]));
                    for i in 0..d {
                        let k = part.freq[1 + i];
                        if k != Complex64::new(0.0, 0.0) {
                            poly = poly.plus(&part.poly.times_var(1 + d + i, 1.0).scale(k));
                        }
                    }
                }
                DiffOp::YDrift(b) => {
                    poly = poly.plus(&part.poly.scale(part.freq[0]));
                    for r in 0..2 * d {
                        let k = part.freq[1 + r];
                        if k == Complex64::new(0.0, 0.0) {
                            continue;
                        }
                        for c in 0..2 * d {
                            if b[(r, c)] != 0.0 {
                                poly = poly.plus(&part.poly.times_var(1 + c, b[(r, c)]).scale(k));
                            }
                        }
                    }
                }
            }
            out.push(ExpPart {
                freq: part.freq.clone(),
                poly,
            });
        }
        out
    }

    pub fn into_handle(self, label: impl Into<String>) -> FunctionHandle {
        FunctionHandle::new(label, Arc::new(self))
    }
}

impl ScalarField for ExpPolyField {
    fn dim(&self) -> usize {
        self.d
    }
    fn eval(&self, z: &Point) -> f64 {
        let coords = z.coords();
        self.parts
            .iter()
            .map(|p| {
                let arg: Complex64 = p.freq.iter().zip(&coords).map(|(k, c)| k * c).sum();
                (p.poly.eval_coords(&coords) * arg.exp()).re
            })
            .sum()
    }
    fn derivative(&self, op: &DiffOp) -> Option<Arc<dyn ScalarField>> {
        Some(Arc::new(self.apply(op)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(t: f64, x: f64, v: f64) -> Point {
        Point::scalar(t, x, v)
    }

    #[test]
    fn polynomial_derivations() {
        // u = t x v^2
        let u = PolynomialField::monomial(1.0, 1, &[1], &[2]);
        let p = z(0.5, -1.5, 2.0);
        assert!((u.apply(&DiffOp::T).eval(&p) - (-1.5 * 4.0)).abs() < 1e-14);
        assert!((u.apply(&DiffOp::X(0)).eval(&p) - 0.5 * 4.0).abs() < 1e-14);
        assert!((u.apply(&DiffOp::V(0)).eval(&p) - 0.5 * -1.5 * 4.0).abs() < 1e-14);
        // Y u = x v^2 + v * t v^2
        let yu = u.apply(&DiffOp::Y).eval(&p);
        assert!((yu - (-1.5 * 4.0 + 2.0 * 0.5 * 4.0)).abs() < 1e-14);
    }

    #[test]
    fn commutator_of_z_and_y_is_dx_on_polynomials() {
        let u = PolynomialField::from_terms(
            1,
            &[(1.0, 2, vec![1], vec![1]), (-3.0, 0, vec![2], vec![3]), (0.5, 1, vec![0], vec![2])],
        );
        let zy = u.apply(&DiffOp::Y).apply(&DiffOp::V(0));
        let yz = u.apply(&DiffOp::V(0)).apply(&DiffOp::Y);
        let dx = u.apply(&DiffOp::X(0));
        assert_eq!(zy.plus(&yz.apply(&DiffOp::T).times(&PolynomialField::zero(1))).poly.terms().count(), zy.poly.terms().count());
        let diff = zy.plus(&PolynomialField { poly: yz.poly.scale(-1.0) });
        assert_eq!(diff, dx);
    }

    #[test]
    fn exp_poly_matches_trig_derivatives() {
        let s = ExpPolyField::sin(&[0.0, 1.0, 0.0]);
        let p = z(0.1, 0.7, -0.4);
        assert!((s.eval(&p) - 0.7f64.sin()).abs() < 1e-15);
        // Y sin(x) = v cos(x); Y^2 sin(x) = -v^2 sin(x)
        let y1 = s.apply(&DiffOp::Y);
        assert!((y1.eval(&p) - (-0.4 * 0.7f64.cos())).abs() < 1e-15);
        let y2 = y1.apply(&DiffOp::Y);
        assert!((y2.eval(&p) + 0.16 * 0.7f64.sin()).abs() < 1e-15);
        let c = ExpPolyField::cos(&[2.0, 0.0, 0.0]);
        assert!((c.apply(&DiffOp::T).eval(&p) + 2.0 * 0.2f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn exp_poly_products() {
        let a = ExpPolyField::sin(&[0.0, 1.0, 0.0]);
        let b = ExpPolyField::cos(&[0.0, 0.0, 2.0]);
        let prod = a.times(&b);
        let p = z(0.3, 0.4, 0.9);
        assert!((prod.eval(&p) - 0.4f64.sin() * 1.8f64.cos()).abs() < 1e-15);
        let poly = ExpPolyField::from_polynomial(&PolynomialField::monomial(2.0, 1, &[0], &[1]));
        let q = poly.times(&a);
        assert!((q.eval(&p) - 2.0 * 0.3 * 0.9 * 0.4f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn left_translation_inherits_left_invariant_derivatives() {
        let u = ExpPolyField::sin(&[0.3, 1.0, 0.5]).into_handle("s");
        let z1 = z(0.2, -0.1, 0.7);
        let ut = u.left_translated(&z1);
        let p = z(0.4, 0.3, -0.2);
        let w = group::compose(&z1, &p).unwrap();
        for op in [DiffOp::Y, DiffOp::X(0), DiffOp::V(0)] {
            let lhs = ut.derivative(&op).unwrap().eval(&p);
            let rhs = u.derivative(&op).unwrap().eval(&w);
            assert!((lhs - rhs).abs() < 1e-14, "{op}");
        }
        assert!(ut.derivative(&DiffOp::T).is_err());
    }

    #[test]
    fn dilation_scales_derivatives_by_formal_degree() {
        let a = Anisotropy::new(1, 1.5).unwrap();
        let u = ExpPolyField::sin(&[0.3, 1.0, 0.5]).into_handle("s");
        let lam = 0.7;
        let ud = u.dilated(lam, &a);
        let p = z(0.4, 0.3, -0.2);
        let dp = group::dilate(lam, &p, &a).unwrap();
        let lhs = ud.derivative(&DiffOp::Y).unwrap().eval(&p);
        let rhs = lam.powf(1.5) * u.derivative(&DiffOp::Y).unwrap().eval(&dp);
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn missing_derivatives_are_reported() {
        let u = FunctionHandle::from_fn("abs", 1, |z| z.v[0].abs());
        let err = u.derivative(&DiffOp::Y).unwrap_err();
        assert!(matches!(err, Error::MissingDerivative(ref s) if s.contains("abs")));
        let fd = u.with_finite_differences(1e-5, 1);
        let d = fd.derivative(&DiffOp::V(0)).unwrap();
        assert!((d.eval(&z(0.0, 0.0, 2.0)) - 1.0).abs() < 1e-9);
        assert!(d.derivative(&DiffOp::V(0)).is_err());
    }

    #[test]
    fn term_oracle_closure_is_used() {
        let u = FunctionHandle::with_term_oracle("x", 1, |z| z.x[0], |idx, z| match (idx.k, idx.gamma[0], idx.beta[0]) {
            (0, 0, 0) => z.x[0],
            (1, 0, 0) => z.v[0],
            (0, 1, 0) => 1.0,
            _ => 0.0,
        });
        let idx = TermIndex::raw(1, vec![0], vec![0]);
        assert_eq!(u.term_value(&idx, &z(0.0, 0.0, 3.0)).unwrap(), 3.0);
    }
}
