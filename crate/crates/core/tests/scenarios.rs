// SPDX-License-Identifier: Apache-2.0

//! The bundled scenario corpus, report formats and the CLI.

use enclave_migrate::harness::{corpus, run, Mode, ReportFormat, RunOptions, ScenarioReport, Script, ScriptError};
use std::process::Command;

fn run_named(name: &str, mode: Mode, seed: Option<u64>) -> ScenarioReport {
    let script = Script::parse(corpus::find(name).unwrap()).unwrap();
    run(&script, RunOptions { seed, mode: Some(mode) }).unwrap()
}

fn step<'a>(r: &'a ScenarioReport, op: &str, detail_prefix: &str) -> &'a str {
    &r.steps.iter().find(|s| s.op == op && s.detail.starts_with(detail_prefix)).unwrap().outcome
}

#[test]
fn every_bundled_scenario_passes_in_its_modes() {
    for (name, text) in corpus::SCENARIOS {
        let script = Script::parse(text).unwrap();
        assert_eq!(&script.name, name);
        for mode in corpus::modes(&script) {
            let r = run(&script, RunOptions { seed: None, mode: Some(mode) }).unwrap();
            assert!(r.passed, "{name} [{}]\n{}", mode.name(), r.to_text());
        }
    }
}

#[test]
fn fork_attack_outcomes_per_mode() {
    let full = run_named("fork_attack", Mode::Full, None);
    assert_eq!(step(&full, "start", "app_frozen"), "FrozenBuffer");
    assert_eq!(step(&full, "app_load", "app_stale"), "CounterNotFound");

    let base = run_named("fork_attack", Mode::Baseline, None);
    assert_eq!(step(&base, "start", "app_frozen"), "ok");
    assert_eq!(step(&base, "app_load", "app_stale accepted version 1"), "ok");
    let fork = base.asserts.iter().find(|a| a.check == "fork").unwrap();
    assert_eq!(fork.actual, "true");
}

#[test]
fn rollback_attack_outcomes_per_mode() {
    let load = |m| {
        let r = run_named("rollback_attack", m, None);
        r.steps.iter().rev().find(|s| s.op == "app_load").unwrap().outcome.clone()
    };
    assert_eq!(load(Mode::Full), "VersionMismatch");
    assert_eq!(load(Mode::Baseline), "ok");
}

#[test]
fn unexpected_outcome_fails_the_report() {
    // Running the baseline-vulnerable expectations of a full-only script in
    // baseline mode must not pass silently.
    let r = run_named("normal_migration", Mode::Baseline, None);
    assert!(!r.passed);
    assert!(r.failed_asserts().any(|a| a.check == "counter"));
}

#[test]
fn json_report_round_trips() {
    let r = run_named("me_crash_retry", Mode::Full, Some(5));
    let json = r.render(ReportFormat::Json);
    let back: ScenarioReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    for key in ["name", "mode", "seed", "passed", "steps", "asserts", "invariants", "log"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn text_report_maps_requirements() {
    let t = run_named("rollback_attack", Mode::Full, None).to_text();
    assert!(t.contains("[R4 Roll-back prevention]"), "{t}");
    let t = run_named("modified_me", Mode::Full, None).to_text();
    assert!(t.contains("[R2 Controlled migration]"));
}

#[test]
fn seed_changes_traffic_but_not_outcomes() {
    let a = run_named("normal_migration", Mode::Full, Some(1));
    let b = run_named("normal_migration", Mode::Full, Some(2));
    assert!(a.passed && b.passed);
    assert_ne!(a.log, b.log);
    assert_eq!(a.log.len(), b.log.len());
}

#[test]
fn script_errors_are_reported() {
    let bad = corpus::find("normal_migration").unwrap().replace("to = \"B\"", "to = \"Z\"");
    assert!(matches!(Script::parse(&bad), Err(ScriptError::Event { op: "migrate", .. })));
    let bad = corpus::find("normal_migration").unwrap().replace("op = \"seal\"", "op = \"teleport\"");
    assert!(matches!(Script::parse(&bad), Err(ScriptError::Parse(_))));
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_enclave-migrate"))
}

#[test]
fn cli_exit_codes() {
    let ok = cli().args(["run", "fork_attack", "--mode", "baseline"]).output().unwrap();
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("[R3 Fork prevention]"));

    let dir = tempfile::tempdir().unwrap();
    let failing = dir.path().join("failing.toml");
    let text = corpus::find("normal_migration").unwrap().replace("value = 3\n\n[[events]]\nop = \"assert\"\ncheck = \"delivered\"", "value = 4\n\n[[events]]\nop = \"assert\"\ncheck = \"delivered\"");
    std::fs::write(&failing, text).unwrap();
    let out = dir.path().join("report.json");
    let fail = cli()
        .args(["run", failing.to_str().unwrap(), "--report", "json", "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(fail.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&fail.stderr).contains("failed assert #8 counter"));
    let report: ScenarioReport = serde_json::from_slice(&std::fs::read(out).unwrap()).unwrap();
    assert!(!report.passed);

    let missing = cli().args(["run", "no-such-scenario"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));

    let list = cli().arg("list-scenarios").output().unwrap();
    assert_eq!(String::from_utf8_lossy(&list.stdout).lines().count(), corpus::SCENARIOS.len());
}
