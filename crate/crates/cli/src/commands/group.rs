//! Group-law checks on seeded samples.

use anyhow::Result;
use kh_core::group::{self, dilate, hnorm, inverse};
use kh_core::{Anisotropy, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::report::{Check, Report};

pub const DEFAULT_THETA: f64 = 2.0;
pub const DEFAULT_DIM: usize = 1;
pub const DEFAULT_SAMPLES: usize = 10_000;
pub const TOLERANCE: f64 = 1e-10;

/// Deliberate defects for exercising the harness itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    #[default]
    None,
    /// The group law without its transport term `t₂ v₁`.
    BrokenCompose,
}

type Compose = fn(&Point, &Point) -> kh_core::Result<Point>;

fn broken_compose(z1: &Point, z2: &Point) -> kh_core::Result<Point> {
    z2.check_dim(z1.dim())?;
    Ok(Point::from_parts(z1.t + z2.t, &z1.x + &z2.x, &z1.v + &z2.v))
}

fn random_point(rng: &mut ChaCha8Rng, d: usize) -> Point {
    let c: Vec<f64> = (0..1 + 2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    Point::from_coords(&c).expect("finite")
}

fn rel(diff: f64, scale: f64) -> f64 {
    diff / scale.max(f64::MIN_POSITIVE)
}

#[derive(Debug, Default, Clone, Copy)]
struct Worst {
    value: f64,
    sample: usize,
}

impl Worst {
    fn update(&mut self, value: f64, sample: usize) {
        // NaN counts as worst
        if !(value <= self.value) {
            self.value = value;
            self.sample = sample;
        }
    }
}

pub fn verify_group(cfg: &ExperimentConfig, fault: Fault) -> Result<Report> {
    let theta = cfg.theta.unwrap_or(DEFAULT_THETA);
    let d = cfg.dim_or(DEFAULT_DIM)?;
    let n = cfg.samples.unwrap_or(DEFAULT_SAMPLES);
    let seed = cfg.seed();
    let a = Anisotropy::new(d, theta)?;
    let compose: Compose = match fault {
        Fault::None => group::compose,
        Fault::BrokenCompose => broken_compose,
    };
    let dist = |z1: &Point, z2: &Point| -> Result<f64> { Ok(hnorm(&compose(&inverse(z2), z1)?, &a)) };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = Point::identity(d);
    let mut assoc = Worst::default();
    let mut ident = Worst::default();
    let mut inv = Worst::default();
    let mut left = Worst::default();
    let mut dil = Worst::default();
    for i in 0..n {
        let z1 = random_point(&mut rng, d);
        let z2 = random_point(&mut rng, d);
        let z3 = random_point(&mut rng, d);
        let lambda = 10f64.powf(rng.random_range(-2.0..2.0));

        let lhs = compose(&compose(&z1, &z2)?, &z3)?;
        let rhs = compose(&z1, &compose(&z2, &z3)?)?;
        assoc.update(rel(lhs.max_abs_diff(&rhs), lhs.max_abs().max(rhs.max_abs())), i);

        let scale = z1.max_abs();
        let id_err = compose(&z1, &e)?.max_abs_diff(&z1).max(compose(&e, &z1)?.max_abs_diff(&z1));
        ident.update(rel(id_err, scale), i);
        let zi = inverse(&z1);
        let inv_err = compose(&z1, &zi)?.max_abs_diff(&e).max(compose(&zi, &z1)?.max_abs_diff(&e));
        inv.update(rel(inv_err, scale), i);

        let base = dist(&z1, &z2)?;
        let moved = dist(&compose(&z3, &z1)?, &compose(&z3, &z2)?)?;
        left.update(rel((moved - base).abs(), base), i);

        let scaled = dist(&dilate(lambda, &z1, &a)?, &dilate(lambda, &z2, &a)?)?;
        dil.update(rel((scaled - lambda * base).abs(), lambda * base), i);
    }

    let mut report = Report::new("verify-group", Some(1));
    report.param("theta", theta);
    report.param("dim", d);
    report.param("samples", n);
    report.param("seed", seed);
    report.param("fault", fault);
    for (name, w) in [
        ("associativity", assoc),
        ("identity", ident),
        ("inverse", inv),
        ("left_invariance", left),
        ("dilation_homogeneity", dil),
    ] {
        report.check(Check::at_most(name, w.value, TOLERANCE).with_detail(format!("worst sample {}", w.sample)));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            samples: Some(500),
            seed: Some(seed),
            ..Default::default()
        }
    }

    #[test]
    fn default_group_passes() {
        let r = verify_group(&small(0), Fault::None).unwrap();
        assert!(r.pass, "{}", r.to_json());
        assert_eq!(r.checks.len(), 5);
    }

    #[test]
    fn broken_compose_is_named() {
        let r = verify_group(&small(0), Fault::BrokenCompose).unwrap();
        assert!(!r.pass);
        let failed = r.failed_checks();
        assert!(failed.contains(&"inverse"), "{failed:?}");
        assert!(failed.contains(&"left_invariance"), "{failed:?}");
    }

    #[test]
    fn verdicts_do_not_depend_on_the_seed() {
        for seed in [1, 2, 3] {
            let r = verify_group(&small(seed), Fault::None).unwrap();
            assert!(r.pass, "seed {seed}: {}", r.summary());
        }
    }
}
