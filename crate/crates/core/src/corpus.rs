//! Closed-form test functions with known regularity.
//!
//! Entries built on the symbolic backends carry exact derivative oracles;
//! those are checked against central differences at seeded points when the
//! corpus is assembled. Kinks, `|x|^q` profiles and Gaussian windows are
//! evaluation-only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::field::{DiffOp, ExpPolyField, FunctionHandle, PolynomialField};
use crate::group::{Anisotropy, Point};
use crate::index::{multi_indices, weight_of};

/// Largest weight of the registered monomials.
pub const MONOMIAL_MAX_WEIGHT: f64 = 4.0;

const CHECK_POINTS: usize = 10;
const CHECK_STEP: f64 = 1e-5;
const CHECK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Regularity {
    /// A polynomial of the given anisotropic weight.
    Polynomial { weight: f64 },
    Smooth,
    /// Hölder continuous of the given intrinsic order and no better.
    Holder { order: f64 },
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub id: String,
    pub handle: FunctionHandle,
    pub regularity: Regularity,
    /// Derivatives along `∂_t`, `∂_x`, `∂_v` and `Y` are exact.
    pub exact_oracle: bool,
}

impl CorpusEntry {
    fn exact(id: String, handle: FunctionHandle, regularity: Regularity) -> Self {
        CorpusEntry {
            id,
            handle,
            regularity,
            exact_oracle: true,
        }
    }

    fn plain(id: String, handle: FunctionHandle, regularity: Regularity) -> Self {
        CorpusEntry {
            id,
            handle,
            regularity,
            exact_oracle: false,
        }
    }
}

/// `m_t{a}_x{b}_v{c}` with one digit per component of `b` and `c`.
pub fn monomial_id(t_pow: u32, x_pow: &[u32], v_pow: &[u32]) -> String {
    let digits = |m: &[u32]| m.iter().map(|k| k.to_string()).collect::<String>();
    format!("m_t{t_pow}_x{}_v{}", digits(x_pow), digits(v_pow))
}

/// Every monomial `t^a x^b v^c` of weight `ϑa + (1+ϑ)|b| + |c| ≤ max_weight`.
pub fn monomials(a: &Anisotropy, max_weight: f64) -> Vec<CorpusEntry> {
    let theta = a.theta;
    let tol = 1e-12 * max_weight.max(1.0);
    let xs = multi_indices(a.d, (max_weight / (1.0 + theta) + tol).floor() as u32);
    let vs = multi_indices(a.d, (max_weight + tol).floor() as u32);
    let mut out = Vec::new();
    for t_pow in 0..=((max_weight / theta + tol).floor() as u32) {
        for x_pow in &xs {
            for v_pow in &vs {
                let w = weight_of(t_pow, x_pow, v_pow, theta);
                if w <= max_weight + tol {
                    let id = monomial_id(t_pow, x_pow, v_pow);
                    let handle = PolynomialField::monomial(1.0, t_pow, x_pow, v_pow).into_handle(id.clone());
                    out.push(CorpusEntry::exact(id, handle, Regularity::Polynomial { weight: w }));
                }
            }
        }
    }
    out
}

fn coordinate_names(d: usize) -> Vec<String> {
    let mut names = vec!["t".to_string()];
    names.extend((1..=d).map(|i| format!("x{i}")));
    names.extend((1..=d).map(|i| format!("v{i}")));
    names
}

/// `sin` and `cos` of each coordinate, `sin_t`, `cos_x1`, ...
pub fn trig(d: usize) -> Vec<CorpusEntry> {
    let mut out = Vec::new();
    for (j, name) in coordinate_names(d).into_iter().enumerate() {
        let mut freq = vec![0.0; 1 + 2 * d];
        freq[j] = 1.0;
        for (kind, field) in [("sin", ExpPolyField::sin(&freq)), ("cos", ExpPolyField::cos(&freq))] {
            let id = format!("{kind}_{name}");
            out.push(CorpusEntry::exact(id.clone(), field.into_handle(id), Regularity::Smooth));
        }
    }
    out
}

/// `sin(0.7t + 1.1Σx − 0.8Σv) + 0.5 cos(0.4t − 0.6x₁ + 1.3v₁) sin(0.9v_d + 0.5x_d) + 0.3 x₁ v₁ cos t`
pub fn sin_mix(d: usize) -> ExpPolyField {
    let mut f1 = vec![0.7];
    f1.extend(std::iter::repeat_n(1.1, d));
    f1.extend(std::iter::repeat_n(-0.8, d));
    let mut f2 = vec![0.0; 1 + 2 * d];
    f2[0] = 0.4;
    f2[1] = -0.6;
    f2[1 + d] = 1.3;
    let mut f3 = vec![0.0; 1 + 2 * d];
    f3[2 * d] = 0.9;
    f3[d] = 0.5;
    let mut ft = vec![0.0; 1 + 2 * d];
    ft[0] = 1.0;
    let mut xv = vec![0; d];
    xv[0] = 1;
    let poly = PolynomialField::monomial(0.3, 0, &xv, &xv);
    ExpPolyField::sin(&f1)
        .plus(&ExpPolyField::cos(&f2).times(&ExpPolyField::sin(&f3)).scale(0.5))
        .plus(&ExpPolyField::from_polynomial(&poly).times(&ExpPolyField::cos(&ft)))
}

/// `|v₁|^a`, Hölder of order `a` along `v` and constant in `t, x`.
pub fn kink(d: usize, a: f64) -> Result<CorpusEntry> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(invalid("a", format!("kink exponent must lie in ]0, 1], got {a}")));
    }
    let id = format!("kink:{a}");
    let handle = FunctionHandle::from_fn(id.clone(), d, move |z: &Point| z.v[0].abs().powf(a));
    Ok(CorpusEntry::plain(id, handle, Regularity::Holder { order: a }))
}

fn window(z: &Point) -> f64 {
    (-(z.t * z.t + z.x.norm_squared() + z.v.norm_squared())).exp()
}

/// `|x₁|^q exp(−t² − |x|² − |v|²)`, of intrinsic order `q(1+ϑ)` at `x₁ = 0`.
pub fn x_power(a: &Anisotropy, q: f64) -> Result<CorpusEntry> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(invalid("q", format!("must be positive, got {q}")));
    }
    let id = format!("xpow:{q}");
    let handle = FunctionHandle::from_fn(id.clone(), a.d, move |z: &Point| z.x[0].abs().powf(q) * window(z));
    Ok(CorpusEntry::plain(id, handle, Regularity::Holder { order: q * (1.0 + a.theta) }))
}

/// Gaussian-windowed products, decaying in `v` as the non-local operators need.
pub fn gaussian_windowed(d: usize) -> Vec<CorpusEntry> {
    let poly = FunctionHandle::from_fn("gauss_poly", d, |z: &Point| {
        let r2 = z.v.norm_squared() + 0.3 * z.x.norm_squared() + 0.1 * z.t * z.t;
        (1.0 + 0.5 * z.v[0] + 0.3 * z.x[0] * z.v[0] + 0.2 * z.t) * (-r2).exp()
    });
    let cos = FunctionHandle::from_fn("gauss_cos", d, |z: &Point| {
        (z.v[0] + 0.5 * z.x[0] - 0.3 * z.t).cos() * (-0.5 * z.v.norm_squared() - 0.25 * z.x.norm_squared()).exp()
    });
    let radial = FunctionHandle::from_fn("gauss", d, |z: &Point| (-z.v.norm_squared()).exp());
    [poly, cos, radial]
        .into_iter()
        .map(|h| CorpusEntry::plain(h.label().to_string(), h, Regularity::Smooth))
        .collect()
}

/// Largest discrepancy between exact first derivatives (`∂_t`, `∂_{x_i}`,
/// `∂_{v_i}`, `Y`) and central differences, relative to `1 + |exact|`, over
/// seeded points in `[−1, 1]^{1+2d}`.
pub fn oracle_discrepancy(u: &FunctionHandle, seed: u64) -> Result<f64> {
    let d = u.dim();
    let mut ops = vec![DiffOp::T, DiffOp::Y];
    ops.extend((0..d).map(DiffOp::X));
    ops.extend((0..d).map(DiffOp::V));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..CHECK_POINTS {
        let coords: Vec<f64> = (0..1 + 2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = Point::from_coords(&coords)?;
        for op in &ops {
            let exact = u.derivative(op)?.try_eval(&z)?;
            let fwd = u.try_eval(&op.flow(CHECK_STEP, &z))?;
            let bwd = u.try_eval(&op.flow(-CHECK_STEP, &z))?;
            let approx = (fwd - bwd) / (2.0 * CHECK_STEP);
            worst = worst.max((exact - approx).abs() / (1.0 + exact.abs()));
        }
    }
    Ok(worst)
}

/// The registered test functions for one anisotropy.
#[derive(Debug, Clone)]
pub struct Corpus {
    a: Anisotropy,
    entries: Vec<CorpusEntry>,
}

impl Corpus {
    /// Monomials of weight at most [`MONOMIAL_MAX_WEIGHT`], `sin`/`cos` of each
    /// coordinate, `sin_mix`, kinks `|v₁|^{1/2}` and `|v₁|`, and Gaussian
    /// windows. Oracle entries are cross-checked against finite differences.
    pub fn standard(a: &Anisotropy, seed: u64) -> Result<Self> {
        let d = a.d;
        let mut entries = monomials(a, MONOMIAL_MAX_WEIGHT);
        entries.extend(trig(d));
        entries.push(CorpusEntry::exact(
            "sin_mix".to_string(),
            sin_mix(d).into_handle("sin_mix"),
            Regularity::Smooth,
        ));
        entries.push(kink(d, 0.5)?);
        entries.push(kink(d, 1.0)?);
        entries.extend(gaussian_windowed(d));
        for e in entries.iter().filter(|e| e.exact_oracle) {
            let gap = oracle_discrepancy(&e.handle, seed)?;
            if gap > CHECK_TOL {
                return Err(invalid("corpus", format!("oracle of `{}` disagrees with finite differences by {gap:.3e}", e.id)));
            }
        }
        Ok(Corpus { a: *a, entries })
    }

    pub fn anisotropy(&self) -> &Anisotropy {
        &self.a
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    /// A registered entry, or a parametrized one written `kink:<a>` or
    /// `xpow:<q>`.
    pub fn get(&self, id: &str) -> Result<CorpusEntry> {
        if let Some(e) = self.entries.iter().find(|e| e.id == id) {
            return Ok(e.clone());
        }
        let param = |text: &str| {
            text.parse::<f64>()
                .map_err(|_| invalid("function", format!("bad parameter in `{id}`")))
        };
        match id.split_once(':') {
            Some(("kink", a)) => kink(self.a.d, param(a)?),
            Some(("xpow", q)) => x_power(&self.a, param(q)?),
            _ => Err(Error::InvalidParameter {
                name: "function",
                reason: format!("unknown corpus id `{id}`"),
            }),
        }
    }

    /// Monomials of weight strictly below `alpha`.
    pub fn monomials_below(&self, alpha: f64) -> Vec<&CorpusEntry> {
        self.entries
            .iter()
            .filter(|e| matches!(e.regularity, Regularity::Polynomial { weight } if crate::index::strictly_below(weight, alpha)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ScalarField;
    use std::sync::Arc;

    #[test]
    fn monomial_counts_and_weights() {
        let a = Anisotropy::new(1, 2.0).unwrap();
        let m = monomials(&a, 4.0);
        let ids: Vec<&str> = m.iter().map(|e| e.id.as_str()).collect();
        // t^a x^b v^c with 2a + 3b + c <= 4
        assert_eq!(m.len(), 11);
        assert!(ids.contains(&"m_t2_x0_v0") && ids.contains(&"m_t0_x1_v1") && !ids.contains(&"m_t1_x1_v0"));
        for e in &m {
            let Regularity::Polynomial { weight } = e.regularity else { panic!() };
            assert!(weight <= 4.0);
        }
    }

    #[test]
    fn standard_corpus_registers_and_cross_checks() {
        for (d, theta) in [(1, 1.0 / 3.0), (1, 4.0 / 3.0), (2, 2.0)] {
            let a = Anisotropy::new(d, theta).unwrap();
            let c = Corpus::standard(&a, 7).unwrap();
            assert!(c.get("sin_mix").unwrap().exact_oracle);
            assert!(c.get(&format!("cos_v{d}")).is_ok());
            assert!(!c.get("kink:0.5").unwrap().exact_oracle);
            assert!(c.get("xpow:0.25").is_ok());
            assert!(c.get("nope").is_err());
            assert!(c.get("kink:2").is_err());
        }
    }

    struct Liar;

    impl ScalarField for Liar {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, z: &Point) -> f64 {
            z.v[0].powi(2)
        }
        fn derivative(&self, op: &DiffOp) -> Option<Arc<dyn ScalarField>> {
            Some(Arc::new(PolynomialField::monomial(1.0, 0, &[0], &[3]).apply(op)))
        }
    }

    #[test]
    fn wrong_oracles_are_caught() {
        let good = PolynomialField::monomial(1.0, 0, &[0], &[2]).into_handle("v^2");
        assert!(oracle_discrepancy(&good, 1).unwrap() < CHECK_TOL);
        let liar = FunctionHandle::new("liar", Arc::new(Liar));
        assert!(oracle_discrepancy(&liar, 1).unwrap() > 0.1);
        let plain = FunctionHandle::from_fn("no oracle", 1, |z: &Point| z.v[0].cos());
        assert!(matches!(oracle_discrepancy(&plain, 1), Err(Error::MissingDerivative(_))));
    }

    #[test]
    fn x_power_profile() {
        let e = x_power(&Anisotropy::new(1, 2.0).unwrap(), 0.5).unwrap();
        assert_eq!(e.regularity, Regularity::Holder { order: 1.5 });
        let z = Point::scalar(0.0, 0.25, 0.0);
        assert!((e.handle.eval(&z) - 0.5 * (-0.0625f64).exp()).abs() < 1e-15);
    }
}
