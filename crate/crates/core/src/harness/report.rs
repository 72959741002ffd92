// SPDX-License-Identifier: Apache-2.0

//! Scenario reports in text and JSON form.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepReport {
    pub index: usize,
    pub op: String,
    pub detail: String,
    pub expected: Option<String>,
    pub outcome: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertReport {
    pub index: usize,
    pub check: String,
    pub req: Option<String>,
    pub expected: String,
    pub actual: String,
    pub detail: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub description: String,
    pub note: Option<String>,
    pub mode: String,
    pub seed: u64,
    pub passed: bool,
    pub steps: Vec<StepReport>,
    pub asserts: Vec<AssertReport>,
    pub invariants: Vec<InvariantReport>,
    pub log: Vec<String>,
}

/// Human name of a requirement tag such as `R3`.
pub fn requirement_name(req: &str) -> &'static str {
    match req {
        "R1" => "SGX guarantees",
        "R2" => "Controlled migration",
        "R3" => "Fork prevention",
        "R4" => "Roll-back prevention",
        _ => "unmapped",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" => Ok(Self::Text),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown report format `{other}` (expected text or json)")),
        }
    }
}

impl ScenarioReport {
    pub fn failed_asserts(&self) -> impl Iterator<Item = &AssertReport> {
        self.asserts.iter().filter(|a| !a.passed)
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Text => self.to_text(),
            ReportFormat::Json => serde_json::to_string_pretty(self).expect("report serializes") + "\n",
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(s, "scenario {} [{}] seed={} {verdict}", self.name, self.mode, self.seed);
        if !self.description.is_empty() {
            let _ = writeln!(s, "  {}", self.description.trim());
        }
        if let Some(n) = &self.note {
            let _ = writeln!(s, "  note: {}", n.trim());
        }
        let _ = writeln!(s, "\nsteps:");
        for st in &self.steps {
            let mark = if st.passed { "ok  " } else { "FAIL" };
            let exp = st.expected.as_deref().map(|e| format!(" (expected {e})")).unwrap_or_default();
            let _ = writeln!(s, "  {mark} #{:<3} {:<16} {}{exp}  {}", st.index, st.op, st.outcome, st.detail);
        }
        let _ = writeln!(s, "\nassertions:");
        for a in &self.asserts {
            let mark = if a.passed { "PASS" } else { "FAIL" };
            let req = a.req.as_deref().map(|r| format!("{r} {}", requirement_name(r))).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "  {mark} #{:<3} {:<20} [{req}] expected {} got {}  {}",
                a.index, a.check, a.expected, a.actual, a.detail
            );
        }
        let _ = writeln!(s, "\ninvariants:");
        for i in &self.invariants {
            let _ = writeln!(s, "  {} {:<15} {}", if i.passed { "PASS" } else { "FAIL" }, i.name, i.detail);
        }
        let _ = writeln!(s, "\nevent log:");
        for l in &self.log {
            let _ = writeln!(s, "  {l}");
        }
        s
    }
}
