//! One function per subcommand; each returns a [`Report`].

pub mod delta;
pub mod group;
pub mod operator;
pub mod seminorm;
pub mod steering;
pub mod taylor;
pub mod terms;

use anyhow::Result;

use crate::config::ExperimentConfig;
use crate::report::{Check, Report};

pub use delta::delta;
pub use group::{verify_group, Fault};
pub use operator::operator;
pub use seminorm::seminorm;
pub use steering::{connect_trials, holder_x, steer};
pub use taylor::{taylor_exact, taylor_scaling};
pub use terms::terms;

/// Criteria 1–8 in order. Only the seed is shared; every other setting takes
/// its per-command default, so the suite does not drift with ad-hoc flags.
pub fn suite(seed: u64) -> Result<Vec<Report>> {
    let cfg = ExperimentConfig {
        seed: Some(seed),
        ..Default::default()
    };
    Ok(vec![
        verify_group(&cfg, Fault::None)?,
        terms(&cfg)?,
        taylor_exact(&cfg)?,
        taylor_scaling(&cfg)?,
        holder_x(&cfg)?,
        steer(&cfg)?,
        connect_trials(&cfg)?,
        operator(&cfg)?,
        seminorm(&cfg)?,
    ])
}

/// Every report of a suite run as bytes: JSON, plus CSV tables where present.
pub fn suite_bytes(reports: &[Report]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in reports {
        out.extend(r.to_json().into_bytes());
        if let Some(t) = &r.table {
            out.extend(t.as_bytes());
        }
    }
    out
}

/// Runs the suite twice, on one worker thread and on `threads` workers, and
/// compares the bytes of the two runs.
pub fn determinism(seed: u64, threads: usize) -> Result<(Report, Vec<Report>)> {
    let run = |n: usize| -> Result<Vec<Report>> {
        rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(|| suite(seed))
    };
    let first = run(1)?;
    let second = run(threads.max(1))?;
    let (a, b) = (suite_bytes(&first), suite_bytes(&second));
    let differing = a.iter().zip(&b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len());
    let mut report = Report::new("determinism", Some(9));
    report.param("seed", seed);
    report.param("threads", [1, threads.max(1)]);
    report.param("bytes", a.len());
    report.check(Check::at_most("differing_bytes", differing as f64, 0.0));
    Ok((report, second))
}
