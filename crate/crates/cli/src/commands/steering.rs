//! Pure-x increments, commutator paths and the connection solver.

use anyhow::{Context, Result};
use kh_core::corpus::{sin_mix, x_power};
use kh_core::steering::{commutator_path, connect, x_increment_slope, DriftMatrix};
use kh_core::taylor::geometric_grid;
use kh_core::{Anisotropy, Error, Point};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::taylor::CASES;
use crate::config::ExperimentConfig;
use crate::report::{Check, Report};

pub const X_STEPS: (f64, f64) = (1e-2, 1e-6);
pub const N_X_STEPS: usize = 12;
pub const X_SLOPE_MARGIN: f64 = 0.05;

pub const DEFAULT_THETA: f64 = 1.0;
pub const DEFAULT_DIM: usize = 2;
pub const PATH_SAMPLES: usize = 1000;
pub const PATH_TOLERANCE: f64 = 1e-12;
pub const CONNECT_TRIALS: usize = 100;
pub const DEFAULT_H: f64 = 1e-3;
pub const CONNECT_TOLERANCE: f64 = 1e-10;
pub const MIN_CONVERGENCE: f64 = 0.95;

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    loop {
        let w = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let n = w.norm();
        if n > 1e-3 {
            return w / n;
        }
    }
}

fn random_point(rng: &mut ChaCha8Rng, d: usize) -> Point {
    let c: Vec<f64> = (0..1 + 2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    Point::from_coords(&c).expect("finite")
}

/// Slopes of `|u(t, x + h e₁, v) − u(z)|` in `|h|`: a smooth function at a
/// generic point, and `|x₁|^q` times a Gaussian at `x = 0`, with
/// `q = min(α, ϑ+1)/(ϑ+1)`.
pub fn holder_x(cfg: &ExperimentConfig) -> Result<Report> {
    let d = cfg.dim_or(1)?;
    let mut report = Report::new("holder-x", Some(5));
    report.param("dim", d);
    report.param("steps", X_STEPS);
    report.param("n_steps", N_X_STEPS);
    let hs = geometric_grid(X_STEPS.0, X_STEPS.1, N_X_STEPS);
    let mut e = DVector::zeros(d);
    e[0] = 1.0;
    let smooth = sin_mix(d).into_handle("sin_mix");
    let generic = Point::new(0.1, vec![0.3; d], vec![0.2; d])?;
    let on_axis = Point::new(0.1, vec![0.0; d], vec![0.2; d])?;
    for (theta, alpha) in cfg.cases_or(&CASES)? {
        let a = Anisotropy::new(d, theta)?;
        let q = alpha.min(theta + 1.0) / (theta + 1.0);
        let case = format!("theta={theta:.4}/alpha={alpha}");
        let kink = x_power(&a, q)?;
        for (label, u, z) in [("smooth", &smooth, &generic), ("xpow", &kink.handle, &on_axis)] {
            let fit = x_increment_slope(u, z, &e, &hs, &a)?;
            report.check(Check::at_least(format!("slope/{case}/{label}"), fit.slope, q - X_SLOPE_MARGIN).with_detail(format!("r2 {:.6}", fit.r2)));
            report.record(serde_json::json!({
                "theta": theta,
                "alpha": alpha,
                "function": if label == "xpow" { kink.id.as_str() } else { "sin_mix" },
                "point": z,
                "exponent": q,
                "fit": fit,
            }));
        }
    }
    Ok(report)
}

/// Endpoint identity of the four-flow commutator path on seeded `(z, w, τ)`.
pub fn steer(cfg: &ExperimentConfig) -> Result<Report> {
    let theta = cfg.theta.unwrap_or(DEFAULT_THETA);
    let d = cfg.dim_or(DEFAULT_DIM)?;
    let n = cfg.samples.unwrap_or(PATH_SAMPLES);
    let seed = cfg.seed();
    let a = Anisotropy::new(d, theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut worst_at = 0;
    for i in 0..n {
        let z = random_point(&mut rng, d);
        let w = unit_vector(&mut rng, d);
        let tau = rng.random_range(-1.0..1.0);
        let err = commutator_path(&z, &w, tau, &a)?.endpoint_error;
        if !(err <= worst) {
            worst = err;
            worst_at = i;
        }
    }
    let mut report = Report::new("steer", Some(6));
    report.param("theta", theta);
    report.param("dim", d);
    report.param("samples", n);
    report.param("seed", seed);
    report.check(Check::at_most("endpoint_error", worst, PATH_TOLERANCE).with_detail(format!("worst sample {worst_at}")));
    Ok(report)
}

#[derive(Debug, Serialize)]
struct Trial {
    trial: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    connection: Option<kh_core::steering::Connection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    residual: Option<f64>,
}

/// Connects `z` to `(t, x + h, v)` in the group of `B` for seeded or given `B`.
pub fn connect_trials(cfg: &ExperimentConfig) -> Result<Report> {
    let theta = cfg.theta.unwrap_or(DEFAULT_THETA);
    let d_default = cfg.dim_or(DEFAULT_DIM)?;
    let seed = cfg.seed();
    let h_norm = cfg.h.unwrap_or(DEFAULT_H);
    let trials = cfg.samples.unwrap_or(CONNECT_TRIALS);
    let fixed = match &cfg.matrix_file {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(DriftMatrix::parse(&text)?)
        }
        None => None,
    };
    let d = fixed.as_ref().map_or(d_default, DriftMatrix::dim);
    let a = Anisotropy::new(d, theta)?;

    // draw everything up front so the outcome does not depend on scheduling
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let setups: Vec<(DriftMatrix, Point, DVector<f64>)> = (0..trials)
        .map(|_| {
            let b = match &fixed {
                Some(b) => b.clone(),
                None => DriftMatrix::random_well_conditioned(d, &mut rng),
            };
            let z = random_point(&mut rng, d);
            let h = unit_vector(&mut rng, d) * h_norm;
            (b, z, h)
        })
        .collect();
    let outcomes: Vec<Trial> = setups
        .par_iter()
        .enumerate()
        .map(|(trial, (b, z, h))| match connect(z, h, b, &a) {
            Ok(c) => Trial {
                trial,
                connection: Some(c),
                failure: None,
                residual: None,
            },
            Err(err) => {
                let residual = match &err {
                    Error::NoConvergence { residual, .. } => Some(*residual),
                    _ => None,
                };
                Trial {
                    trial,
                    connection: None,
                    failure: Some(err.to_string()),
                    residual,
                }
            }
        })
        .collect();

    let mut report = Report::new("connect", Some(6));
    report.param("theta", theta);
    report.param("dim", d);
    report.param("trials", trials);
    report.param("seed", seed);
    report.param("h_norm", h_norm);
    report.param("matrix", if fixed.is_some() { "file" } else { "random_well_conditioned" });

    let ok: Vec<&kh_core::steering::Connection> = outcomes.iter().filter_map(|t| t.connection.as_ref()).collect();
    let rate = ok.len() as f64 / trials.max(1) as f64;
    let worst_err = ok.iter().map(|c| c.report.endpoint_error).fold(0.0, f64::max);
    let worst_ratio = ok.iter().map(|c| if c.tau_bound > 0.0 { c.tau / c.tau_bound } else { 0.0 }).fold(0.0, f64::max);
    report.check(Check::at_least("convergence_rate", rate, MIN_CONVERGENCE).with_detail(format!("{} of {trials}", ok.len())));
    report.check(Check::at_most("endpoint_error", worst_err, CONNECT_TOLERANCE));
    report.check(Check::at_most("tau_over_bound", worst_ratio, 1.0));
    for t in &outcomes {
        if let Some(f) = &t.failure {
            report.note(format!("trial {}: {f}", t.trial));
        }
    }
    for t in outcomes {
        report.record(t);
    }
    Ok(report)
}
