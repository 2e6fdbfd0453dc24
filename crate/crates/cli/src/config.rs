//! Experiment settings: a flat TOML file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

/// Every knob a command may read. Unset values fall back to the per-command
/// defaults listed in `kh <command> --help`.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Formal degree ϑ of the drift field Y
    #[arg(long, global = true)]
    pub theta: Option<f64>,

    /// Regularity order α
    #[arg(long, global = true)]
    pub alpha: Option<f64>,

    /// Spatial dimension d
    #[arg(long = "dim", global = true)]
    pub dim: Option<usize>,

    /// Corpus function id, e.g. sin_mix, gauss_cos, m_t1_x0_v2, kink:0.5, xpow:0.9
    #[arg(long = "func", global = true)]
    pub func: Option<String>,

    /// Seed for every random draw [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output path (a directory for `suite`); stdout when absent
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Drift matrix B, whitespace-separated rows
    #[arg(long = "matrix-file", global = true)]
    pub matrix_file: Option<PathBuf>,

    /// Fractional order s of the kinetic operator
    #[arg(long, global = true)]
    pub s: Option<f64>,

    /// Exponent p of the nonlinear operator
    #[arg(long, global = true)]
    pub p: Option<f64>,

    /// Number of random samples or trials
    #[arg(long, global = true)]
    pub samples: Option<usize>,

    /// Norm of the target x-increment for `connect`
    #[arg(long = "h-norm", global = true)]
    pub h: Option<f64>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($field:ident),*) => {
        ExperimentConfig { $($field: $top.$field.or($base.$field)),* }
    };
}

impl ExperimentConfig {
    /// Values of `self` win over `base`.
    pub fn over(self, base: ExperimentConfig) -> ExperimentConfig {
        overlay!(base, self, theta, alpha, dim, func, seed, out, matrix_file, s, p, samples, h)
    }

    pub fn parse_toml(text: &str) -> Result<ExperimentConfig> {
        toml::from_str(text).context("invalid config file")
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        ExperimentConfig::parse_toml(&text)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn dim_or(&self, default: usize) -> Result<usize> {
        let d = self.dim.unwrap_or(default);
        if d == 0 {
            bail!("--dim must be at least 1");
        }
        Ok(d)
    }

    /// The single `(ϑ, α)` case given on the command line, or `cases`.
    pub fn cases_or(&self, cases: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
        match (self.theta, self.alpha) {
            (Some(t), Some(a)) => Ok(vec![(t, a)]),
            (None, None) => Ok(cases.to_vec()),
            _ => bail!("--theta and --alpha must be given together"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file = ExperimentConfig::parse_toml("theta = 2.0\nseed = 7\nfunc = \"sin_mix\"\n").unwrap();
        let flags = ExperimentConfig {
            seed: Some(3),
            alpha: Some(1.5),
            ..Default::default()
        };
        let merged = flags.over(file);
        assert_eq!(merged.theta, Some(2.0));
        assert_eq!(merged.seed(), 3);
        assert_eq!(merged.alpha, Some(1.5));
        assert_eq!(merged.func.as_deref(), Some("sin_mix"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse_toml("thta = 2.0").is_err());
    }

    #[test]
    fn cases_need_both_theta_and_alpha() {
        let c = ExperimentConfig {
            theta: Some(1.0),
            ..Default::default()
        };
        assert!(c.cases_or(&[(2.0, 2.9)]).is_err());
        assert_eq!(ExperimentConfig::default().cases_or(&[(2.0, 2.9)]).unwrap(), vec![(2.0, 2.9)]);
    }
}
