//! Seminorms of Taylor-term derivatives against the full `C^α` seminorm.

use anyhow::Result;
use kh_core::corpus::Corpus;
use kh_core::holder::{seminorm_c_alpha, SampleGrid};
use kh_core::index::enumerate_terms;
use kh_core::Anisotropy;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::report::{Check, Report};

pub const DEFAULT_THETA: f64 = 4.0 / 3.0;
pub const DEFAULT_ALPHA: f64 = 2.6;
pub const GRID_POINTS: usize = 400;
pub const GRID_TAUS: usize = 24;
pub const TAU_RANGE: (f64, f64) = (1e-3, 1.0);
pub const MAX_RATIO: f64 = 1.05;

#[derive(Debug, Serialize)]
struct TermRecord {
    func: String,
    term: String,
    order: f64,
    value: f64,
    full: f64,
}

struct EntryResult {
    id: String,
    worst: f64,
    /// Largest ratio among terms of positive weight, and the term.
    derived: (f64, String),
    records: Vec<TermRecord>,
}

/// `part / full`, with `0/0 = 0`.
fn ratio(part: f64, full: f64) -> f64 {
    if part == 0.0 {
        0.0
    } else if full == 0.0 {
        f64::INFINITY
    } else {
        part / full
    }
}

pub fn seminorm(cfg: &ExperimentConfig) -> Result<Report> {
    let theta = cfg.theta.unwrap_or(DEFAULT_THETA);
    let alpha = cfg.alpha.unwrap_or(DEFAULT_ALPHA);
    let d = cfg.dim_or(1)?;
    let seed = cfg.seed();
    let a = Anisotropy::new(d, theta)?;
    let corpus = Corpus::standard(&a, seed)?;
    let entries = match &cfg.func {
        Some(id) => vec![corpus.get(id)?],
        None => corpus.entries().iter().filter(|e| e.exact_oracle).cloned().collect(),
    };
    let grid = SampleGrid::halton_ball(&a, GRID_POINTS, GRID_TAUS, TAU_RANGE);
    let terms = enumerate_terms(&a, alpha);

    let results: Vec<EntryResult> = entries
        .par_iter()
        .map(|e| {
            let full = seminorm_c_alpha(&e.handle, alpha, &grid, &a)?.value;
            let mut records = Vec::with_capacity(terms.len());
            let mut worst: f64 = 0.0;
            let mut derived = (0.0, String::new());
            for t in &terms {
                let du = e.handle.term_derivative(t.k, &t.gamma, &t.beta)?;
                let order = alpha - t.weight;
                let value = seminorm_c_alpha(&du, order, &grid, &a)?.value;
                let r = ratio(value, full);
                worst = if r.is_nan() { f64::NAN } else { worst.max(r) };
                if t.weight > 0.0 && !(r <= derived.0) {
                    derived = (r, t.to_string());
                }
                records.push(TermRecord {
                    func: e.id.clone(),
                    term: t.to_string(),
                    order,
                    value,
                    full,
                });
            }
            Ok(EntryResult {
                id: e.id.clone(),
                worst,
                derived,
                records,
            })
        })
        .collect::<kh_core::Result<_>>()?;

    let mut report = Report::new("seminorm", Some(8));
    report.param("theta", theta);
    report.param("alpha", alpha);
    report.param("dim", d);
    report.param("seed", seed);
    report.param("grid", grid.spec());
    report.param("terms", terms.len());
    for EntryResult { id, worst, derived, records } in results {
        // the weight-0 term is u itself, so `worst` is at least 1 unless u has a zero seminorm
        let detail = if derived.1.is_empty() {
            "every derivative term vanishes on the grid".to_string()
        } else {
            format!("largest derivative-term ratio {:.6} at {}", derived.0, derived.1)
        };
        report.check(Check::at_most(format!("ratio/{id}"), worst, MAX_RATIO).with_detail(detail));
        for r in records {
            report.record(r);
        }
    }
    Ok(report)
}
