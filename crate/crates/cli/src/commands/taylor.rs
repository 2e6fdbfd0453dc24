//! Taylor exactness on monomials and remainder scaling on smooth functions.

use anyhow::Result;
use kh_core::corpus::Corpus;
use kh_core::holder::SampleGrid;
use kh_core::taylor::{default_directions, slope_survey, SlopeOutcome, TaylorPolynomial};
use kh_core::{Anisotropy, Point};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::report::{Check, Report};

/// The `(ϑ, α)` pairs exercised by default.
pub const CASES: [(f64, f64); 3] = [(1.0 / 3.0, 1.2), (4.0 / 3.0, 2.6), (2.0, 2.9)];

pub const EXACT_TOLERANCE: f64 = 1e-10;
pub const BALL_POINTS: usize = 64;
pub const CENTRES: usize = 4;

pub const DEFAULT_FUNC: &str = "sin_mix";
pub const RANDOM_DIRECTIONS: usize = 5;
pub const DISTANCES: (f64, f64) = (1e-3, 1e-1);
pub const N_DISTANCES: usize = 12;
pub const SLOPE_MARGIN: f64 = 0.1;
pub const MIN_R2: f64 = 0.99;

fn case_name(theta: f64, alpha: f64) -> String {
    format!("theta={theta:.4}/alpha={alpha}")
}

/// `z₀ = (0.3, −0.2·1, 0.4·1)`
pub fn scaling_centre(d: usize) -> Point {
    Point::new(0.3, vec![-0.2; d], vec![0.4; d]).expect("finite")
}

pub fn taylor_exact(cfg: &ExperimentConfig) -> Result<Report> {
    let d = cfg.dim_or(1)?;
    let seed = cfg.seed();
    let mut report = Report::new("taylor-exact", Some(3));
    report.param("dim", d);
    report.param("seed", seed);
    report.param("ball_points", BALL_POINTS);
    report.param("centres", CENTRES);
    for (theta, alpha) in cfg.cases_or(&CASES)? {
        let a = Anisotropy::new(d, theta)?;
        let corpus = Corpus::standard(&a, seed)?;
        let points = SampleGrid::halton_ball(&a, BALL_POINTS, 2, (0.5, 1.0)).points;
        let monomials = corpus.monomials_below(alpha);
        let worst: Vec<(f64, &str)> = monomials
            .par_iter()
            .map(|e| {
                let mut worst: f64 = 0.0;
                for z0 in &points[..CENTRES] {
                    let poly = TaylorPolynomial::build(&e.handle, alpha, z0, &a)?;
                    for z in &points {
                        let r = (e.handle.try_eval(z)? - poly.eval(z)?).abs();
                        worst = if r.is_nan() { f64::NAN } else { worst.max(r) };
                    }
                }
                Ok((worst, e.id.as_str()))
            })
            .collect::<kh_core::Result<_>>()?;
        let (value, id) = worst
            .iter()
            .copied()
            .fold((0.0, "none"), |acc, w| if !(w.0 <= acc.0) { w } else { acc });
        report.check(
            Check::at_most(format!("remainder/{}", case_name(theta, alpha)), value, EXACT_TOLERANCE)
                .with_detail(format!("{} monomials, worst {id}", monomials.len())),
        );
    }
    Ok(report)
}

pub fn taylor_scaling(cfg: &ExperimentConfig) -> Result<Report> {
    let d = cfg.dim_or(1)?;
    let seed = cfg.seed();
    let func = cfg.func.clone().unwrap_or_else(|| DEFAULT_FUNC.to_string());
    let mut report = Report::new("taylor-scaling", Some(4));
    report.param("dim", d);
    report.param("seed", seed);
    report.param("func", &func);
    report.param("distances", DISTANCES);
    report.param("n_distances", N_DISTANCES);
    let z0 = scaling_centre(d);
    report.param("z0", &z0);
    for (theta, alpha) in cfg.cases_or(&CASES)? {
        let a = Anisotropy::new(d, theta)?;
        let u = Corpus::standard(&a, seed)?.get(&func)?.handle;
        let dirs = default_directions(&a, RANDOM_DIRECTIONS, seed);
        let records = slope_survey(&u, alpha, &z0, &a, &dirs, DISTANCES, N_DISTANCES)?;
        let case = case_name(theta, alpha);
        for (i, rec) in records.iter().enumerate() {
            match rec.outcome {
                SlopeOutcome::Fitted(fit) => {
                    report.check(Check::at_least(format!("slope/{case}/dir{i}"), fit.slope, alpha - SLOPE_MARGIN));
                    report.check(Check::at_least(format!("r2/{case}/dir{i}"), fit.r2, MIN_R2));
                }
                SlopeOutcome::PolynomialExact => {
                    report.note(format!("{case}/dir{i}: polynomial-exact"));
                }
            }
            report.record(rec);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matching_polynomial_is_reported_as_exact() {
        let cfg = ExperimentConfig {
            theta: Some(2.0),
            alpha: Some(2.5),
            func: Some("m_t0_x0_v2".into()),
            ..Default::default()
        };
        let r = taylor_scaling(&cfg).unwrap();
        assert!(r.pass);
        assert!(r.checks.is_empty());
        assert_eq!(r.notes.len(), 3 + RANDOM_DIRECTIONS);
    }

    #[test]
    fn sin_v_below_one_has_unit_slope() {
        let cfg = ExperimentConfig {
            theta: Some(2.0),
            alpha: Some(0.9),
            func: Some("sin_v1".into()),
            ..Default::default()
        };
        let r = taylor_scaling(&cfg).unwrap();
        // the pure-t and pure-x directions leave v fixed, so sin(v) does not move there
        let fitted: Vec<f64> = r
            .records
            .iter()
            .filter_map(|rec| rec["outcome"]["slope"].as_f64())
            .collect();
        assert!(!fitted.is_empty());
        for s in fitted {
            assert!((s - 1.0).abs() < 0.05, "{s}");
        }
    }

    #[test]
    fn exactness_on_a_single_case() {
        let cfg = ExperimentConfig {
            theta: Some(1.0),
            alpha: Some(2.5),
            ..Default::default()
        };
        let r = taylor_exact(&cfg).unwrap();
        assert!(r.pass, "{}", r.to_json());
        assert_eq!(r.checks.len(), 1);
    }
}
