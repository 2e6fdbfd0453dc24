//! Flow-exit radii `δ_z` and `δ_{Ω₀}` for nested cubes. Informational only.

use anyhow::{Context, Result};
use kh_core::holder::{delta_omega0, delta_z, BoxDomain, Flows, SampleGrid};
use kh_core::steering::DriftMatrix;
use kh_core::Anisotropy;

use crate::config::ExperimentConfig;
use crate::report::Report;

pub const OUTER: f64 = 1.0;
pub const INNER: f64 = 0.5;
pub const PROBES: usize = 16;

pub fn delta(cfg: &ExperimentConfig) -> Result<Report> {
    let drift = match &cfg.matrix_file {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(DriftMatrix::parse(&text)?)
        }
        None => None,
    };
    let d = drift.as_ref().map_or(cfg.dim_or(1)?, DriftMatrix::dim);
    let flows = match &drift {
        Some(b) => Flows::Drift(b.matrix()),
        None => Flows::Homogeneous,
    };
    let omega = BoxDomain::cube(d, OUTER)?;
    let omega0 = BoxDomain::cube(d, INNER)?;

    let mut report = Report::new("delta", None);
    report.param("dim", d);
    report.param("outer_half_width", OUTER);
    report.param("inner_half_width", INNER);
    report.param("flows", if drift.is_some() { "drift" } else { "homogeneous" });
    report.record(serde_json::json!({ "delta_omega0": delta_omega0(&omega, &omega0, flows)? }));

    // Halton probes of the unit ball that fall inside the outer cube
    let a = Anisotropy::new(d, cfg.theta.unwrap_or(1.0))?;
    let probes = SampleGrid::halton_ball(&a, 4 * PROBES, 2, (0.5, 1.0)).points;
    for z in probes.iter().filter(|z| omega.contains(z)).take(PROBES) {
        report.record(serde_json::json!({ "point": z, "delta_z": delta_z(z, &omega, flows)? }));
    }
    Ok(report)
}
