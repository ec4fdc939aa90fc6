//! `report.json` and `summary.md` writers.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CodeVersion {
    pub package: &'static str,
    pub source_hash: &'static str,
}

pub fn code_version() -> CodeVersion {
    CodeVersion {
        package: env!("CARGO_PKG_VERSION"),
        source_hash: env!("NLEXIT_SOURCE_HASH"),
    }
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Informational,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Hypotheses {
    pub checked: bool,
    pub passed: Option<bool>,
    pub label: Option<String>,
}

impl Hypotheses {
    pub fn unchecked() -> Self {
        Self {
            checked: false,
            passed: None,
            label: None,
        }
    }

    pub fn checked(passed: bool, label: Option<&str>) -> Self {
        Self {
            checked: true,
            passed: Some(passed),
            label: label.map(str::to_string),
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Failure {
    pub check: String,
    pub detail: String,
}

impl Failure {
    pub fn new(check: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            check: check.into(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub experiment: String,
    pub code_version: CodeVersion,
    pub config: Value,
    pub hypotheses: Hypotheses,
    pub metrics: Value,
    pub tolerances: Value,
    pub verdict: Verdict,
    pub failures: Vec<Failure>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        match self.verdict {
            Verdict::Pass | Verdict::Informational => 0,
            Verdict::Fail => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn summary_markdown(&self) -> String {
        let mut out = String::new();
        let verdict = match self.verdict {
            Verdict::Pass => "pass",
            Verdict::Fail => "FAIL",
            Verdict::Informational => "informational",
        };
        let _ = writeln!(out, "# {}\n", self.experiment);
        let _ = writeln!(out, "- verdict: **{verdict}**");
        let _ = writeln!(
            out,
            "- code: {} ({})",
            self.code_version.package, self.code_version.source_hash
        );
        match (self.hypotheses.checked, self.hypotheses.passed) {
            (true, Some(p)) => {
                let _ = writeln!(out, "- hypotheses: {}", if p { "satisfied" } else { "violated" });
            }
            _ => {
                let _ = writeln!(out, "- hypotheses: not checked");
            }
        }
        if let Some(l) = &self.hypotheses.label {
            let _ = writeln!(out, "- label: {l}");
        }
        if !self.failures.is_empty() {
            let _ = writeln!(out, "\n## Failures\n");
            for f in &self.failures {
                let _ = writeln!(out, "- `{}`: {}", f.check, f.detail);
            }
        }
        let _ = writeln!(out, "\n## Metrics\n\n| key | value |\n|---|---|");
        let mut rows = Vec::new();
        flatten("", &self.metrics, 0, &mut rows);
        for (k, v) in rows {
            let _ = writeln!(out, "| `{k}` | {v} |");
        }
        if !self.notes.is_empty() {
            let _ = writeln!(out, "\n## Notes\n");
            for n in &self.notes {
                let _ = writeln!(out, "- {n}");
            }
        }
        out
    }
}

/// Scalar leaves as `(pointer, value)`, skipping deep nesting and long lists.
fn flatten(prefix: &str, v: &Value, depth: usize, out: &mut Vec<(String, String)>) {
    const MAX_DEPTH: usize = 4;
    const MAX_ITEMS: usize = 24;
    match v {
        Value::Object(m) if depth < MAX_DEPTH => {
            for (k, x) in m {
                flatten(&format!("{prefix}/{k}"), x, depth + 1, out);
            }
        }
        Value::Array(a) if depth < MAX_DEPTH && a.len() <= MAX_ITEMS => {
            for (i, x) in a.iter().enumerate() {
                flatten(&format!("{prefix}/{i}"), x, depth + 1, out);
            }
        }
        Value::Object(_) | Value::Array(_) => {}
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_lists_failures_and_metrics() {
        let r = Report {
            schema_version: SCHEMA_VERSION,
            experiment: "x".into(),
            code_version: code_version(),
            config: Value::Null,
            hypotheses: Hypotheses::checked(false, Some("violated")),
            metrics: serde_json::json!({"a": 1.5, "b": {"c": [1, 2]}}),
            tolerances: Value::Null,
            verdict: Verdict::Fail,
            failures: vec![Failure::new("gap", "too large")],
            notes: vec![],
        };
        let md = r.summary_markdown();
        assert!(md.contains("| `/a` | 1.5 |"));
        assert!(md.contains("| `/b/c/1` | 2 |"));
        assert!(md.contains("`gap`: too large"));
        assert_eq!(r.exit_code(), 1);
    }
}
