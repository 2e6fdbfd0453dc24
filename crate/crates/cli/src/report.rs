//! Versioned JSON verdicts. Reports carry no timings or host data, so equal
//! inputs give byte-identical output.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

pub const SCHEMA: &str = "kh-report/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `value ≤ tolerance`
    AtMost,
    /// `value ≥ tolerance`
    AtLeast,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub tolerance: f64,
    pub relation: Relation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            pass: value <= tolerance,
            value,
            tolerance,
            relation: Relation::AtMost,
            detail: None,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            pass: value >= tolerance,
            value,
            tolerance,
            relation: Relation::AtLeast,
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub command: String,
    /// Acceptance criterion the verdict belongs to; `None` for purely
    /// informational commands.
    pub criterion: Option<u8>,
    pub pass: bool,
    pub params: BTreeMap<String, Value>,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<Value>,
    /// CSV companion table, written next to the JSON.
    #[serde(skip)]
    pub table: Option<String>,
}

impl Report {
    pub fn new(command: &str, criterion: Option<u8>) -> Self {
        Report {
            schema: SCHEMA,
            command: command.to_string(),
            criterion,
            pass: true,
            params: BTreeMap::new(),
            checks: Vec::new(),
            notes: Vec::new(),
            records: Vec::new(),
            table: None,
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) {
        self.params.insert(key.to_string(), serde_json::to_value(value).expect("serializable parameter"));
    }

    pub fn check(&mut self, check: Check) {
        self.pass &= check.pass;
        self.checks.push(check);
    }

    pub fn record(&mut self, value: impl Serialize) {
        self.records.push(serde_json::to_value(value).expect("serializable record"));
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn failed_checks(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    /// One line for the terminal.
    pub fn summary(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let label = match self.criterion {
            Some(c) => format!("criterion {c} ({})", self.command),
            None => self.command.clone(),
        };
        let failed = self.failed_checks();
        if failed.is_empty() {
            format!("{verdict} {label}: {} checks", self.checks.len())
        } else {
            format!("{verdict} {label}: failed {}", failed.join(", "))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_failing_check_fails_the_report() {
        let mut r = Report::new("demo", Some(1));
        r.check(Check::at_most("small", 1e-12, 1e-10));
        r.check(Check::at_least("large", 0.5, 1.0));
        assert!(!r.pass);
        assert_eq!(r.failed_checks(), vec!["large"]);
        assert!(r.summary().starts_with("FAIL criterion 1"));
    }

    #[test]
    fn json_is_stable_and_skips_the_table() {
        let mut r = Report::new("demo", None);
        r.param("seed", 0);
        r.table = Some("a,b\n".into());
        let json = r.to_json();
        assert_eq!(json, r.clone().to_json());
        assert!(json.contains("\"schema\": \"kh-report/1\""));
        assert!(!json.contains("a,b"));
    }

    #[test]
    fn non_finite_values_fail_both_relations() {
        assert!(!Check::at_most("x", f64::NAN, 1.0).pass);
        assert!(!Check::at_least("x", f64::NAN, 1.0).pass);
    }
}
