// SPDX-License-Identifier: Apache-2.0

//! Scenario scripts, written in TOML.
//!
//! Top-level keys: `name`, `machines`, `vms`, `enclaves`, `adversary`,
//! `events`, plus optional `description`, `mode` and `seed`. Each event is a
//! table with an `op` key. Expectations may be a single value or a
//! `{ full = .., baseline = .. }` table when the outcome depends on the
//! library mode.

use crate::migration_lib::{InitState, LibraryMode};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Full,
    Baseline,
}

impl Mode {
    pub fn library_mode(self) -> LibraryMode {
        match self {
            Mode::Full => LibraryMode::Full,
            Mode::Baseline => LibraryMode::NaiveBaseline,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Mode::Full),
            "baseline" => Ok(Mode::Baseline),
            other => Err(format!("unknown mode `{other}` (expected full or baseline)")),
        }
    }
}

/// A value, or one value per library mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerMode<T> {
    Split { full: T, baseline: T },
    One(T),
}

impl<T: Clone> PerMode<T> {
    pub fn get(&self, mode: Mode) -> T {
        match self {
            PerMode::One(v) => v.clone(),
            PerMode::Split { full, baseline } => match mode {
                Mode::Full => full.clone(),
                Mode::Baseline => baseline.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineSpec {
    pub name: String,
    #[serde(default = "default_operator")]
    pub operator: String,
    #[serde(default)]
    pub me: MeSpec,
}

fn default_operator() -> String {
    "default-operator".into()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeSpec {
    #[default]
    Genuine,
    Modified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmSpec {
    pub name: String,
    pub machine: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnclaveSpec {
    pub name: String,
    pub code: String,
    #[serde(default = "default_signer")]
    pub signer: String,
    pub vm: String,
    /// Overrides the scenario mode for this enclave.
    pub mode: Option<Mode>,
}

fn default_signer() -> String {
    "app-vendor".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    CreateNew,
    Reload,
    AwaitIncoming,
}

impl InitKind {
    pub fn state(self) -> InitState {
        match self {
            InitKind::CreateNew => InitState::CreateNew,
            InitKind::Reload => InitState::Reload,
            InitKind::AwaitIncoming => InitState::AwaitIncoming,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterAction {
    Create,
    Read,
    Increment,
    Destroy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleAction {
    Deliver,
    Drop,
    Duplicate,
    Delay,
    Inject,
    Record,
    Corrupt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    /// Frame kind, e.g. `MIGRATION_RECORD`.
    pub kind: Option<String>,
    pub from: Option<String>,
    pub to: Option<String>,
    pub from_endpoint: Option<u16>,
    pub to_endpoint: Option<u16>,
    pub action: RuleAction,
    /// Extra copies for `duplicate`.
    pub count: Option<u32>,
    /// Ticks for `delay`.
    pub ticks: Option<u64>,
    /// Hex payload for `inject`.
    pub payload: Option<String>,
    /// Byte position for `corrupt`, counted from the end.
    pub offset_from_end: Option<usize>,
    pub limit: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Counter,
    AppVersion,
    Fork,
    Rollback,
    Record,
    MigrationConfirmed,
    Delivered,
    ReplaysRejected,
    Phase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Event {
    Start {
        enclave: String,
        init: InitKind,
        /// Pass the stored internals buffer. Defaults to true for `reload`.
        buffer: Option<bool>,
        expect: Option<PerMode<String>>,
    },
    Stop {
        enclave: String,
        expect: Option<PerMode<String>>,
    },
    Seal {
        enclave: String,
        label: String,
        data: String,
        expect: Option<PerMode<String>>,
    },
    Unseal {
        enclave: String,
        label: String,
        data: Option<String>,
        expect: Option<PerMode<String>>,
    },
    Counter {
        enclave: String,
        action: CounterAction,
        slot: Option<u8>,
        value: Option<PerMode<u32>>,
        expect: Option<PerMode<String>>,
    },
    AppPersist {
        enclave: String,
        payload: String,
        value: Option<PerMode<u32>>,
        expect: Option<PerMode<String>>,
    },
    AppLoad {
        enclave: String,
        value: Option<PerMode<u32>>,
        expect: Option<PerMode<String>>,
    },
    Migrate {
        enclave: String,
        to: String,
        expect: Option<PerMode<String>>,
    },
    MigrationStart {
        enclave: String,
        to: String,
        expect: Option<PerMode<String>>,
    },
    VmMigrate {
        vm: String,
        to: String,
        expect: Option<PerMode<String>>,
    },
    MeRetry {
        machine: String,
        enclave: String,
        to: Option<String>,
        expect: Option<PerMode<String>>,
    },
    MeRestart {
        machine: String,
        expect: Option<PerMode<String>>,
    },
    Snapshot {
        vm: String,
        label: String,
    },
    Restore {
        label: String,
        vm: String,
        keys: Option<Vec<String>>,
    },
    Adversary {
        #[serde(default)]
        rules: Vec<RuleSpec>,
        #[serde(default)]
        clear: bool,
        #[serde(default)]
        replay: bool,
    },
    Assert {
        check: Check,
        req: Option<String>,
        enclave: Option<String>,
        machine: Option<String>,
        slot: Option<u8>,
        value: Option<PerMode<u32>>,
        state: Option<PerMode<String>>,
        last_error: Option<String>,
        at_least: Option<u32>,
        expect: Option<PerMode<bool>>,
    },
}

impl Event {
    pub fn op(&self) -> &'static str {
        match self {
            Event::Start { .. } => "start",
            Event::Stop { .. } => "stop",
            Event::Seal { .. } => "seal",
            Event::Unseal { .. } => "unseal",
            Event::Counter { .. } => "counter",
            Event::AppPersist { .. } => "app_persist",
            Event::AppLoad { .. } => "app_load",
            Event::Migrate { .. } => "migrate",
            Event::MigrationStart { .. } => "migration_start",
            Event::VmMigrate { .. } => "vm_migrate",
            Event::MeRetry { .. } => "me_retry",
            Event::MeRestart { .. } => "me_restart",
            Event::Snapshot { .. } => "snapshot",
            Event::Restore { .. } => "restore",
            Event::Adversary { .. } => "adversary",
            Event::Assert { .. } => "assert",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Interpretation or caveat shown in reports.
    pub note: Option<String>,
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub machines: Vec<MachineSpec>,
    #[serde(default)]
    pub vms: Vec<VmSpec>,
    #[serde(default)]
    pub enclaves: Vec<EnclaveSpec>,
    #[serde(default)]
    pub adversary: Vec<RuleSpec>,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScriptError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("event {index} ({op}): {message}")]
    Event { index: usize, op: &'static str, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl Script {
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let s: Script = toml::from_str(text).map_err(|e| ScriptError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn enclave(&self, name: &str) -> Option<&EnclaveSpec> {
        self.enclaves.iter().find(|e| e.name == name)
    }

    /// Checks that every event references declared entities and that the
    /// script ends with an assertion.
    pub fn validate(&self) -> Result<(), ScriptError> {
        let mut names = BTreeSet::new();
        for n in self.machines.iter().map(|m| &m.name).chain(self.vms.iter().map(|v| &v.name)) {
            if !names.insert(n.as_str()) {
                return Err(ScriptError::Invalid(format!("duplicate machine or vm name `{n}`")));
            }
        }
        let machines: BTreeSet<&str> = self.machines.iter().map(|m| m.name.as_str()).collect();
        let vms: BTreeSet<&str> = self.vms.iter().map(|v| v.name.as_str()).collect();
        let mut enclaves = BTreeSet::new();
        for v in &self.vms {
            if !machines.contains(v.machine.as_str()) {
                return Err(ScriptError::Invalid(format!("vm `{}` placed on undeclared machine `{}`", v.name, v.machine)));
            }
        }
        for e in &self.enclaves {
            if !vms.contains(e.vm.as_str()) {
                return Err(ScriptError::Invalid(format!("enclave `{}` in undeclared vm `{}`", e.name, e.vm)));
            }
            if !enclaves.insert(e.name.as_str()) {
                return Err(ScriptError::Invalid(format!("duplicate enclave `{}`", e.name)));
            }
        }
        let check_rule = |r: &RuleSpec| -> Result<(), String> {
            for m in [&r.from, &r.to].into_iter().flatten() {
                if !machines.contains(m.as_str()) {
                    return Err(format!("undeclared machine `{m}`"));
                }
            }
            if let Some(k) = &r.kind {
                if crate::netsim::FrameKind::from_name(k).is_none() {
                    return Err(format!("unknown frame kind `{k}`"));
                }
            }
            if let Some(p) = &r.payload {
                hex::decode(p).map_err(|e| format!("payload is not hex: {e}"))?;
            }
            match r.action {
                RuleAction::Inject if r.payload.is_none() => Err("inject needs `payload`".into()),
                _ => Ok(()),
            }
        };
        for r in &self.adversary {
            check_rule(r).map_err(ScriptError::Invalid)?;
        }
        let mut labels = BTreeSet::new();
        for (index, ev) in self.events.iter().enumerate() {
            let fail = |message: String| ScriptError::Event { index, op: ev.op(), message };
            let need_enclave = |e: &str| {
                if enclaves.contains(e) {
                    Ok(())
                } else {
                    Err(fail(format!("undeclared enclave `{e}`")))
                }
            };
            let need_machine = |m: &str| {
                if machines.contains(m) {
                    Ok(())
                } else {
                    Err(fail(format!("undeclared machine `{m}`")))
                }
            };
            let need_vm = |v: &str| if vms.contains(v) { Ok(()) } else { Err(fail(format!("undeclared vm `{v}`"))) };
            match ev {
                Event::Start { enclave, .. }
                | Event::Stop { enclave, .. }
                | Event::Seal { enclave, .. }
                | Event::Unseal { enclave, .. }
                | Event::Counter { enclave, .. }
                | Event::AppPersist { enclave, .. }
                | Event::AppLoad { enclave, .. } => need_enclave(enclave)?,
                Event::Migrate { enclave, to, .. } | Event::MigrationStart { enclave, to, .. } => {
                    need_enclave(enclave)?;
                    need_machine(to)?;
                }
                Event::VmMigrate { vm, to, .. } => {
                    need_vm(vm)?;
                    need_machine(to)?;
                }
                Event::MeRetry { machine, enclave, to, .. } => {
                    need_machine(machine)?;
                    need_enclave(enclave)?;
                    if let Some(t) = to {
                        need_machine(t)?;
                    }
                }
                Event::MeRestart { machine, .. } => need_machine(machine)?,
                Event::Snapshot { vm, label } => {
                    need_vm(vm)?;
                    labels.insert(label.clone());
                }
                Event::Restore { label, vm, .. } => {
                    need_vm(vm)?;
                    if !labels.contains(label) {
                        return Err(fail(format!("restore of snapshot `{label}` before it is taken")));
                    }
                }
                Event::Adversary { rules, .. } => {
                    for r in rules {
                        check_rule(r).map_err(fail)?;
                    }
                }
                Event::Assert { check, enclave, machine, value, state, at_least, expect, .. } => {
                    if let Some(e) = enclave {
                        need_enclave(e)?;
                    }
                    if let Some(m) = machine {
                        need_machine(m)?;
                    }
                    let missing = match check {
                        Check::Counter | Check::AppVersion => {
                            (enclave.is_none() || value.is_none()).then_some("`enclave` and `value`")
                        }
                        Check::Fork | Check::Rollback => expect.is_none().then_some("`expect`"),
                        Check::Record => {
                            (machine.is_none() || enclave.is_none() || state.is_none()).then_some("`machine`, `enclave` and `state`")
                        }
                        Check::MigrationConfirmed => {
                            (machine.is_none() || enclave.is_none() || expect.is_none()).then_some("`machine`, `enclave` and `expect`")
                        }
                        Check::Delivered => (enclave.is_none() || value.is_none()).then_some("`enclave` and `value`"),
                        Check::ReplaysRejected => at_least.is_none().then_some("`at_least`"),
                        Check::Phase => (enclave.is_none() || state.is_none()).then_some("`enclave` and `state`"),
                    };
                    if let Some(m) = missing {
                        return Err(fail(format!("{check:?} assertion needs {m}")));
                    }
                }
            }
        }
        if !matches!(self.events.last(), Some(Event::Assert { .. })) {
            return Err(ScriptError::Invalid("a scenario must end with an assert".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        name = "t"
        [[machines]]
        name = "A"
        [[vms]]
        name = "vm1"
        machine = "A"
        [[enclaves]]
        name = "app"
        code = "c"
        vm = "vm1"
        [[events]]
        op = "start"
        enclave = "app"
        init = "create_new"
        expect = { full = "ok", baseline = "ok" }
        [[events]]
        op = "assert"
        check = "counter"
        enclave = "app"
        value = 0
    "#;

    #[test]
    fn parses_minimal() {
        let s = Script::parse(MINIMAL).unwrap();
        assert_eq!(s.events.len(), 2);
        assert_eq!(s.machines[0].operator, "default-operator");
        match &s.events[0] {
            Event::Start { expect: Some(e), .. } => assert_eq!(e.get(Mode::Baseline), "ok"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_undeclared_entity() {
        let bad = MINIMAL.replace("enclave = \"app\"\n        init", "enclave = \"ghost\"\n        init");
        assert!(matches!(Script::parse(&bad), Err(ScriptError::Event { index: 0, .. })));
    }

    #[test]
    fn rejects_unknown_field_and_missing_assert() {
        let bad = MINIMAL.replace("init = \"create_new\"", "init = \"create_new\"\n        bogus = 1");
        assert!(matches!(Script::parse(&bad), Err(ScriptError::Parse(_))));
        let no_assert = MINIMAL.split("[[events]]\n        op = \"assert\"").next().unwrap();
        assert!(matches!(Script::parse(no_assert), Err(ScriptError::Invalid(_))));
    }
}
