//! Term enumeration against reference lists for `d = 1`, `ϑ ∈ {4/3, 1/3}`.

use std::collections::BTreeSet;

use anyhow::Result;
use kh_core::index::enumerate_terms;
use kh_core::Anisotropy;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::report::{Check, Report};

/// `(k, γ, β, k!γ!β!)` for `d = 1`.
type Term = (u32, u32, u32, u32);

/// An interval `]lo, hi]` of `α` and the terms that first appear there.
struct Step {
    lo: f64,
    hi: f64,
    new_terms: &'static [Term],
}

/// `ϑ = 4/3`: `T_α u` gains `∂_v u (v−v₀)`, then `Yu (t−t₀)`, then
/// `½ ∂²_v u (v−v₀)²`, then `∂_x u (x−x₀−(t−t₀)v₀)` and `Y∂_v u (t−t₀)(v−v₀)`.
const FOUR_THIRDS: [Step; 5] = [
    Step { lo: 0.0, hi: 1.0, new_terms: &[(0, 0, 0, 1)] },
    Step { lo: 1.0, hi: 4.0 / 3.0, new_terms: &[(0, 0, 1, 1)] },
    Step { lo: 4.0 / 3.0, hi: 2.0, new_terms: &[(1, 0, 0, 1)] },
    Step { lo: 2.0, hi: 7.0 / 3.0, new_terms: &[(0, 0, 2, 2)] },
    Step { lo: 7.0 / 3.0, hi: 8.0 / 3.0, new_terms: &[(0, 1, 0, 1), (1, 0, 1, 1)] },
];

/// Sizes of `T_α` on the last four intervals above.
const FOUR_THIRDS_SIZES: [usize; 4] = [2, 3, 4, 6];

/// `ϑ = 1/3`: no derivatives, then `Y`, `Y²`, then `∂_v` and `Y³`, then `Y⁴`,
/// the mixed `Y∂_v` and the commutator `∂_x`.
const ONE_THIRD: [Step; 5] = [
    Step { lo: 0.0, hi: 1.0 / 3.0, new_terms: &[(0, 0, 0, 1)] },
    Step { lo: 1.0 / 3.0, hi: 2.0 / 3.0, new_terms: &[(1, 0, 0, 1)] },
    Step { lo: 2.0 / 3.0, hi: 1.0, new_terms: &[(2, 0, 0, 2)] },
    Step { lo: 1.0, hi: 4.0 / 3.0, new_terms: &[(0, 0, 1, 1), (3, 0, 0, 6)] },
    Step { lo: 4.0 / 3.0, hi: 5.0 / 3.0, new_terms: &[(4, 0, 0, 24), (1, 0, 1, 1), (0, 1, 0, 1)] },
];

#[derive(Debug, Serialize)]
struct Comparison {
    theta: f64,
    alpha: f64,
    expected: Vec<Term>,
    found: Vec<Term>,
}

fn terms_of(a: &Anisotropy, alpha: f64) -> BTreeSet<Term> {
    enumerate_terms(a, alpha)
        .into_iter()
        .map(|t| (t.k, t.gamma[0], t.beta[0], t.factorial().round() as u32))
        .collect()
}

/// Compares at the midpoint and the closed right end of every interval;
/// returns the number of mismatching terms and the sizes found at right ends.
fn compare(theta: f64, steps: &[Step], report: &mut Report) -> Result<(usize, Vec<usize>)> {
    let a = Anisotropy::new(1, theta)?;
    let mut expected = BTreeSet::new();
    let mut mismatches = 0;
    let mut sizes = Vec::new();
    for step in steps {
        expected.extend(step.new_terms.iter().copied());
        for alpha in [0.5 * (step.lo + step.hi), step.hi] {
            let found = terms_of(&a, alpha);
            let diff = found.symmetric_difference(&expected).count();
            mismatches += diff;
            if diff > 0 || alpha == step.hi {
                report.record(Comparison {
                    theta,
                    alpha,
                    expected: expected.iter().copied().collect(),
                    found: found.iter().copied().collect(),
                });
            }
            if alpha == step.hi {
                sizes.push(found.len());
            }
        }
    }
    Ok((mismatches, sizes))
}

/// `∂_x^n` is available exactly when `α > n(1+ϑ)`.
fn x_derivative_thresholds(theta: f64, orders: u32) -> Result<usize> {
    let a = Anisotropy::new(1, theta)?;
    let mut wrong = 0;
    for n in 1..=orders {
        let edge = f64::from(n) * (1.0 + theta);
        let has = |alpha: f64| enumerate_terms(&a, alpha).iter().any(|t| t.k == 0 && t.beta[0] == 0 && t.gamma[0] == n);
        wrong += usize::from(has(edge)) + usize::from(!has(edge + 1e-3));
    }
    Ok(wrong)
}

pub fn terms(cfg: &ExperimentConfig) -> Result<Report> {
    let mut report = Report::new("terms", Some(2));

    let (miss, sizes) = compare(4.0 / 3.0, &FOUR_THIRDS, &mut report)?;
    report.check(Check::at_most("four_thirds_term_lists", miss as f64, 0.0));
    let size_miss = sizes[1..].iter().zip(FOUR_THIRDS_SIZES).filter(|(f, e)| **f != *e).count();
    report.check(Check::at_most("four_thirds_sizes", size_miss as f64, 0.0).with_detail(format!("sizes {:?}", &sizes[1..])));

    let (miss, _) = compare(1.0 / 3.0, &ONE_THIRD, &mut report)?;
    report.check(Check::at_most("one_third_availability", miss as f64, 0.0));
    let wrong = x_derivative_thresholds(1.0 / 3.0, 3)?;
    report.check(Check::at_most("one_third_x_derivatives", wrong as f64, 0.0));

    if let (Some(theta), Some(alpha)) = (cfg.theta, cfg.alpha) {
        let d = cfg.dim_or(1)?;
        let a = Anisotropy::new(d, theta)?;
        report.param("theta", theta);
        report.param("alpha", alpha);
        report.param("dim", d);
        for t in enumerate_terms(&a, alpha) {
            report.record(t);
        }
    }
    Ok(report)
}
