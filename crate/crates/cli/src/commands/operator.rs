//! Pointwise evaluations of the kinetic operator: symbol, constants,
//! Galilean invariance and the `p = 2` reduction.

use anyhow::Result;
use kh_core::corpus::Corpus;
use kh_core::group::compose;
use kh_core::kinetic::{apply_l, calibrate_constant, cos_probe, frac_laplacian, nonlocal, p_laplacian_apply, KernelSpec, QuadratureSpec};
use kh_core::{Anisotropy, FunctionHandle, Point, PolynomialField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::report::{Check, Report};

pub const SYMBOL_ORDERS: [f64; 3] = [0.25, 0.5, 0.75];
pub const FREQUENCIES: [f64; 3] = [0.5, 1.0, 2.0];
pub const SYMBOL_TOLERANCE: f64 = 1e-3;
pub const CONSTANT_TOLERANCE: f64 = 1e-14;
pub const DEFAULT_FUNC: &str = "gauss_cos";
pub const DEFAULT_S: f64 = 0.5;
pub const GALILEAN_PAIRS: usize = 20;
pub const GALILEAN_TOLERANCE: f64 = 1e-6;
pub const REDUCTION_POINTS: usize = 5;
pub const REDUCTION_TOLERANCE: f64 = 1e-10;
pub const LIE_STEP: f64 = 1e-4;

/// One CSV row.
#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub mode: &'static str,
    pub s: f64,
    pub p: f64,
    pub xi: Option<f64>,
    pub z: String,
    pub value: f64,
    pub reference: Option<f64>,
    pub error: Option<f64>,
    pub tolerance: Option<f64>,
    pub status: String,
    pub spec_digest: String,
}

/// First 16 hex digits of SHA-256 over the operator and quadrature description.
pub fn spec_digest(spec: &KernelSpec, quad: &QuadratureSpec) -> String {
    let mut h = Sha256::new();
    h.update(spec.describe().as_bytes());
    h.update(serde_json::to_vec(quad).expect("serializable quadrature"));
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn point_text(z: &Point) -> String {
    z.coords().iter().map(|c| format!("{c}")).collect::<Vec<_>>().join(";")
}

fn random_point(rng: &mut ChaCha8Rng, d: usize) -> Point {
    let c: Vec<f64> = (0..1 + 2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    Point::from_coords(&c).expect("finite")
}

struct Rows(Vec<Row>);

impl Rows {
    fn max_error(&self, mode: &str) -> f64 {
        self.0
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| r.error.unwrap_or(f64::NAN))
            .fold(0.0, |m, e| if !(e <= m) { e } else { m })
    }
}

/// A value with its reference and the error measure used for the verdict.
struct Measured {
    xi: Option<f64>,
    value: f64,
    reference: f64,
    error: f64,
    tolerance: f64,
}

/// Rows judged against a reference; all of them have `p = 2`.
fn checked_row(mode: &'static str, spec: &KernelSpec, z: &Point, digest: &str, m: Measured) -> Row {
    Row {
        mode,
        s: spec.s(),
        p: 2.0,
        xi: m.xi,
        z: point_text(z),
        value: m.value,
        reference: Some(m.reference),
        error: Some(m.error),
        tolerance: Some(m.tolerance),
        status: if m.error <= m.tolerance { "ok" } else { "fail" }.to_string(),
        spec_digest: digest.to_string(),
    }
}

pub fn operator(cfg: &ExperimentConfig) -> Result<Report> {
    let seed = cfg.seed();
    let d = cfg.dim_or(1)?;
    let func = cfg.func.clone().unwrap_or_else(|| DEFAULT_FUNC.to_string());
    let orders: Vec<f64> = cfg.s.map_or(SYMBOL_ORDERS.to_vec(), |s| vec![s]);
    let mut rows = Vec::new();

    // symbol on cos probes, d = 1
    let osc = QuadratureSpec::oscillatory(1);
    let origin = Point::identity(1);
    for &s in &orders {
        let spec = KernelSpec::prototype(s, calibrate_constant(1, s, &osc)?)?;
        let digest = spec_digest(&spec, &osc);
        for xi in FREQUENCIES {
            let value = frac_laplacian(&cos_probe(1, xi), &origin, &spec, &osc)?;
            let want = xi.powf(2.0 * s);
            let m = Measured {
                xi: Some(xi),
                value,
                reference: want,
                error: ((value - want) / want).abs(),
                tolerance: SYMBOL_TOLERANCE,
            };
            rows.push(checked_row("symbol", &spec, &origin, &digest, m));
        }
        let one = PolynomialField::constant(1, 1.0).into_handle("1");
        let value = frac_laplacian(&one, &origin, &spec, &osc)?;
        let m = Measured {
            xi: None,
            value,
            reference: 0.0,
            error: value.abs(),
            tolerance: CONSTANT_TOLERANCE,
        };
        rows.push(checked_row("constant", &spec, &origin, &digest, m));
    }

    // Galilean invariance and the p = 2 reduction on a windowed function
    let s = cfg.s.unwrap_or(DEFAULT_S);
    let a = Anisotropy::fractional(d, s)?;
    let u: FunctionHandle = Corpus::standard(&a, seed)?.get(&func)?.handle;
    let quad = QuadratureSpec::default();
    let c = calibrate_constant(d, s, &QuadratureSpec::oscillatory(d))?;
    let spec = KernelSpec::prototype(s, c)?;
    let digest = spec_digest(&spec, &quad);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(Point, Point)> = (0..GALILEAN_PAIRS).map(|_| (random_point(&mut rng, d), random_point(&mut rng, d))).collect();
    let galilean: Vec<Row> = pairs
        .par_iter()
        .map(|(z1, z2)| {
            let lhs = apply_l(&u.left_translated(z1), z2, &spec, &quad, LIE_STEP)?;
            let z = compose(z1, z2)?;
            let rhs = apply_l(&u, &z, &spec, &quad, LIE_STEP)?;
            let m = Measured {
                xi: None,
                value: lhs,
                reference: rhs,
                error: (lhs - rhs).abs(),
                tolerance: GALILEAN_TOLERANCE,
            };
            Ok(checked_row("galilean", &spec, &z, &digest, m))
        })
        .collect::<kh_core::Result<_>>()?;
    rows.extend(galilean);

    let p2 = KernelSpec::p_laplacian(s, 2.0, c)?;
    let points: Vec<Point> = (0..REDUCTION_POINTS).map(|_| random_point(&mut rng, d)).collect();
    for z in &points {
        let want = nonlocal(&u, z, &spec, &quad)?;
        let got = p_laplacian_apply(&u, z, &p2, &quad)?;
        let m = Measured {
            xi: None,
            value: got,
            reference: want,
            error: (got - want).abs(),
            tolerance: REDUCTION_TOLERANCE,
        };
        rows.push(checked_row("p2_reduction", &p2, z, &spec_digest(&p2, &quad), m));
    }

    // evaluations for a user-chosen p; reported, not judged
    if let Some(p) = cfg.p.filter(|p| *p != 2.0) {
        let row = |z: &Point, spec: &KernelSpec, value: kh_core::Result<f64>| {
            let (value, status) = match value {
                Ok(v) => (v, "ok".to_string()),
                Err(e) => (f64::NAN, format!("error: {e}")),
            };
            Row {
                mode: "p_laplacian",
                s,
                p,
                xi: None,
                z: point_text(z),
                value,
                reference: None,
                error: None,
                tolerance: None,
                status,
                spec_digest: spec_digest(spec, &quad),
            }
        };
        let spec_p = KernelSpec::p_laplacian(s, p, c)?;
        for z in &points {
            rows.push(row(z, &spec_p, p_laplacian_apply(&u, z, &spec_p, &quad)));
        }
    }

    let rows = Rows(rows);
    let mut report = Report::new("operator", Some(7));
    report.param("seed", seed);
    report.param("dim", d);
    report.param("func", &func);
    report.param("orders", &orders);
    report.param("s", s);
    report.param("quadrature", &quad);
    report.param("symbol_quadrature", &osc);
    report.check(Check::at_most("symbol", rows.max_error("symbol"), SYMBOL_TOLERANCE));
    report.check(Check::at_most("constant", rows.max_error("constant"), CONSTANT_TOLERANCE));
    report.check(Check::at_most("galilean", rows.max_error("galilean"), GALILEAN_TOLERANCE));
    report.check(Check::at_most("p2_reduction", rows.max_error("p2_reduction"), REDUCTION_TOLERANCE));
    report.table = Some(to_csv(&rows.0)?);
    Ok(report)
}

pub fn to_csv(rows: &[Row]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
