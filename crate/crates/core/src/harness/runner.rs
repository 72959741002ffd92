// SPDX-License-Identifier: Apache-2.0

//! Executes a [`Script`] against a fresh [`Simulation`].
//!
//! The network is run to quiescence after every event. Expected outcomes are
//! compared per event, assertions are evaluated in order, and three
//! invariants are checked over the whole run:
//!
//! * identity match: every forwarded record went to an endpoint owned by an
//!   enclave with the source's mrenclave, over a session attested as such;
//! * secrecy: no MSK or migrated counter array appears in any payload the
//!   adversary observed;
//! * at-most-once: no record is accepted by a library more often than it was
//!   buffered by the destination ME.

use super::app;
use super::report::{AssertReport, InvariantReport, ScenarioReport, StepReport};
use super::script::{Check, CounterAction, Event, InitKind, Mode, PerMode, RuleAction, RuleSpec, Script, ScriptError};
use crate::migration_enclave::{MeEvent, RecordState};
use crate::migration_lib::{CounterSlot, Phase};
use crate::netsim::{Action, AdversaryPolicy, FrameKind, MeKind, Rule, RuleMatch, SimError, Simulation};
use crate::sgx::{EnclaveIdentity, MachineId, Measurement, SealedBlob};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error("setup failed: {0}")]
    Setup(SimError),
}

pub fn outcome_name(e: &SimError) -> String {
    match e {
        SimError::Library(l) => l.name().into(),
        SimError::Me(m) => format!("{m:?}"),
        SimError::UnknownMachine(_) => "UnknownMachine".into(),
        SimError::UnknownVm(_) => "UnknownVm".into(),
        SimError::UnknownOperator(_) => "UnknownOperator".into(),
        SimError::NotRunning(_) => "NotRunning".into(),
        SimError::Duplicate(_) => "Duplicate".into(),
        SimError::UnknownSnapshot(_) => "UnknownSnapshot".into(),
        SimError::ManagementVmImmovable => "ManagementVmImmovable".into(),
        SimError::Net(_) => "UnknownEndpoint".into(),
        SimError::NotQuiescent(_) => "NotQuiescent".into(),
    }
}

/// Per-step result before it is compared with the expectation.
struct Outcome {
    name: String,
    detail: String,
}

impl Outcome {
    fn ok(detail: impl Into<String>) -> Self {
        Self { name: "ok".into(), detail: detail.into() }
    }

    fn err(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Self { name: name.into(), detail: detail.into() }
    }

    fn from_sim(r: Result<(), SimError>, detail: impl Into<String>) -> Self {
        match r {
            Ok(()) => Self::ok(detail),
            Err(e) => Self::err(outcome_name(&e), detail),
        }
    }
}

struct Runner<'s> {
    script: &'s Script,
    mode: Mode,
    sim: Simulation,
    /// Version each live instance last accepted (loaded or persisted).
    accepted: BTreeMap<String, u32>,
    /// Newest version any instance of a code has accepted.
    newest: BTreeMap<String, u32>,
    secrets: BTreeSet<Vec<u8>>,
}

pub fn run(script: &Script, opts: RunOptions) -> Result<ScenarioReport, RunError> {
    script.validate()?;
    let mode = opts.mode.or(script.mode).unwrap_or(Mode::Full);
    let seed = opts.seed.or(script.seed).unwrap_or(0);
    let mut r = Runner { script, mode, sim: Simulation::new(seed), accepted: BTreeMap::new(), newest: BTreeMap::new(), secrets: BTreeSet::new() };
    r.setup().map_err(RunError::Setup)?;

    let mut steps = Vec::new();
    let mut asserts = Vec::new();
    for (index, ev) in script.events.iter().enumerate() {
        r.sim.annotate(format!("event {index} {}", ev.op()));
        if let Event::Assert { .. } = ev {
            let a = r.assert(index, ev);
            r.sim.annotate(format!("assert {index} {}: {}", a.check, if a.passed { "pass" } else { "FAIL" }));
            asserts.push(a);
            continue;
        }
        let out = r.event(ev);
        let quiesce = r.sim.run_until_quiescent();
        r.collect_secrets();
        let out = match quiesce {
            Ok(_) => out,
            Err(e) => Outcome::err(outcome_name(&e), out.detail),
        };
        let expected = expectation(ev).map(|e| e.get(mode));
        let passed = expected.as_deref().map_or(true, |e| e == out.name);
        r.sim.annotate(format!("outcome {index} {}", out.name));
        steps.push(StepReport { index, op: ev.op().into(), detail: out.detail, expected, outcome: out.name, passed });
    }
    let invariants = r.invariants();
    let passed = steps.iter().all(|s| s.passed) && asserts.iter().all(|a| a.passed) && invariants.iter().all(|i| i.passed);
    Ok(ScenarioReport {
        name: script.name.clone(),
        description: script.description.clone(),
        note: script.note.clone(),
        mode: mode.name().into(),
        seed,
        passed,
        steps,
        asserts,
        invariants,
        log: r.sim.log().to_vec(),
    })
}

fn expectation(ev: &Event) -> Option<PerMode<String>> {
    let e = match ev {
        Event::Start { expect, .. }
        | Event::Stop { expect, .. }
        | Event::Seal { expect, .. }
        | Event::Unseal { expect, .. }
        | Event::Counter { expect, .. }
        | Event::AppPersist { expect, .. }
        | Event::AppLoad { expect, .. }
        | Event::Migrate { expect, .. }
        | Event::MigrationStart { expect, .. }
        | Event::VmMigrate { expect, .. }
        | Event::MeRetry { expect, .. }
        | Event::MeRestart { expect, .. } => expect.clone(),
        Event::Snapshot { .. } | Event::Restore { .. } | Event::Adversary { .. } | Event::Assert { .. } => None,
    };
    Some(e.unwrap_or(PerMode::One("ok".into())))
}

fn rule(spec: &RuleSpec, sim: &Simulation) -> Rule {
    let machine = |n: &Option<String>| n.as_ref().map(|n| sim.machine_id(n).expect("validated machine"));
    let when = RuleMatch {
        from_machine: machine(&spec.from),
        to_machine: machine(&spec.to),
        from_endpoint: spec.from_endpoint,
        to_endpoint: spec.to_endpoint,
        kind: spec.kind.as_deref().map(|k| FrameKind::from_name(k).expect("validated kind")),
    };
    let action = match spec.action {
        RuleAction::Deliver => Action::Deliver,
        RuleAction::Drop => Action::Drop,
        RuleAction::Duplicate => Action::Duplicate(spec.count.unwrap_or(1)),
        RuleAction::Delay => Action::Delay(spec.ticks.unwrap_or(1)),
        RuleAction::Inject => Action::Inject(hex::decode(spec.payload.as_deref().unwrap_or("")).expect("validated hex")),
        RuleAction::Record => Action::Record,
        RuleAction::Corrupt => Action::Corrupt { offset_from_end: spec.offset_from_end.unwrap_or(1) },
    };
    let r = Rule::new(when, action);
    match spec.limit {
        Some(n) => r.with_limit(n),
        None => r,
    }
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

fn check_value(got: u32, want: Option<&PerMode<u32>>, mode: Mode) -> Outcome {
    match want.map(|w| w.get(mode)) {
        Some(w) if w != got => Outcome::err(format!("value {got}"), format!("expected value {w}")),
        _ => Outcome::ok(format!("value {got}")),
    }
}

impl Runner<'_> {
    fn setup(&mut self) -> Result<(), SimError> {
        let ops: BTreeSet<&str> = self.script.machines.iter().map(|m| m.operator.as_str()).collect();
        for op in ops {
            self.sim.add_operator(op)?;
        }
        for m in &self.script.machines {
            let kind = match m.me {
                super::script::MeSpec::Genuine => MeKind::Genuine,
                super::script::MeSpec::Modified => MeKind::Modified,
            };
            self.sim.add_machine(&m.name, &m.operator, kind)?;
        }
        for v in &self.script.vms {
            self.sim.add_vm(&v.name, &v.machine)?;
        }
        if !self.script.adversary.is_empty() {
            let rules = self.script.adversary.iter().map(|r| rule(r, &self.sim)).collect();
            self.sim.set_policy(AdversaryPolicy::new(rules));
        }
        Ok(())
    }

    fn identity(&self, enclave: &str) -> EnclaveIdentity {
        let e = self.script.enclave(enclave).expect("validated enclave");
        EnclaveIdentity::measure(&e.code, &e.signer)
    }

    fn vm_of(&self, enclave: &str) -> Result<String, SimError> {
        Ok(self.sim.instance(enclave)?.vm.clone())
    }

    fn stored(&self, vm: &str, key: &str) -> Option<Vec<u8>> {
        self.sim.vm(vm).ok()?.store.get(key).map(<[u8]>::to_vec)
    }

    fn put(&mut self, vm: &str, key: &str, value: Vec<u8>) {
        if let Ok(store) = self.sim.vm_store_mut(vm) {
            store.put(key, value);
        }
    }

    fn start(&mut self, enclave: &str, init: InitKind, buffer: bool) -> Result<(), SimError> {
        let spec = self.script.enclave(enclave).expect("validated enclave");
        let vm = self.sim.instance(enclave).map(|i| i.vm.clone()).unwrap_or_else(|_| spec.vm.clone());
        let mode = spec.mode.unwrap_or(self.mode).library_mode();
        self.accepted.remove(enclave);
        self.sim.start_enclave(enclave, &spec.code, &spec.signer, &vm, mode, init.state(), buffer)
    }

    fn stop(&mut self, enclave: &str) -> Result<(), SimError> {
        self.accepted.remove(enclave);
        self.sim.stop_enclave(enclave)
    }

    fn event(&mut self, ev: &Event) -> Outcome {
        let mode = self.mode;
        match ev {
            Event::Start { enclave, init, buffer, .. } => {
                let buffer = buffer.unwrap_or(*init == InitKind::Reload);
                Outcome::from_sim(self.start(enclave, *init, buffer), format!("{enclave} {init:?} buffer={buffer}"))
            }
            Event::Stop { enclave, .. } => Outcome::from_sim(self.stop(enclave), enclave.clone()),
            Event::Seal { enclave, label, data, .. } => {
                let vm = match self.vm_of(enclave) {
                    Ok(v) => v,
                    Err(e) => return Outcome::err(outcome_name(&e), enclave.clone()),
                };
                let r = self.sim.with_library(enclave, |lib, env| lib.seal_migratable(data.as_bytes(), label.as_bytes(), env.rng));
                match r {
                    Ok(Ok(blob)) => {
                        self.put(&vm, &format!("blob/{label}"), blob.to_bytes());
                        Outcome::ok(format!("{enclave} sealed {label}"))
                    }
                    Ok(Err(e)) => Outcome::err(e.name(), label.clone()),
                    Err(e) => Outcome::err(outcome_name(&e), label.clone()),
                }
            }
            Event::Unseal { enclave, label, data, .. } => {
                let vm = match self.vm_of(enclave) {
                    Ok(v) => v,
                    Err(e) => return Outcome::err(outcome_name(&e), enclave.clone()),
                };
                let Some(bytes) = self.stored(&vm, &format!("blob/{label}")) else {
                    return Outcome::err("NoBlob", label.clone());
                };
                let Ok(blob) = SealedBlob::from_bytes(&bytes) else {
                    return Outcome::err("Malformed", label.clone());
                };
                match self.sim.with_library(enclave, |lib, _| lib.unseal_migratable(&blob)) {
                    Ok(Ok((pt, aad))) => {
                        if aad != label.as_bytes() || data.as_ref().is_some_and(|d| d.as_bytes() != pt.as_slice()) {
                            Outcome::err("DataMismatch", String::from_utf8_lossy(&pt).into_owned())
                        } else {
                            Outcome::ok(format!("{enclave} unsealed {label}"))
                        }
                    }
                    Ok(Err(e)) => Outcome::err(e.name(), label.clone()),
                    Err(e) => Outcome::err(outcome_name(&e), label.clone()),
                }
            }
            Event::Counter { enclave, action, slot, value, .. } => {
                let slot = CounterSlot(slot.unwrap_or(0));
                let r = self.sim.with_library(enclave, |lib, env| match action {
                    CounterAction::Create => lib.create_counter(env),
                    CounterAction::Read => lib.read_counter(slot, env).map(|v| (slot, v)),
                    CounterAction::Increment => lib.increment_counter(slot, env).map(|v| (slot, v)),
                    CounterAction::Destroy => lib.destroy_counter(slot, env).map(|_| (slot, 0)),
                });
                match r {
                    Ok(Ok((s, v))) => {
                        let mut o = check_value(v, value.as_ref(), mode);
                        o.detail = format!("{enclave} {action:?} slot {} -> {}", s.0, o.detail);
                        o
                    }
                    Ok(Err(e)) => Outcome::err(e.name(), format!("{enclave} {action:?} slot {}", slot.0)),
                    Err(e) => Outcome::err(outcome_name(&e), enclave.clone()),
                }
            }
            Event::AppPersist { enclave, payload, value, .. } => {
                let (vm, code) = match self.sim.instance(enclave) {
                    Ok(i) => (i.vm.clone(), i.code.clone()),
                    Err(e) => return Outcome::err(outcome_name(&e), enclave.clone()),
                };
                let key = app::state_key(&code);
                let stored = self.stored(&vm, &key);
                let r = self.sim.with_library(enclave, |lib, env| app::persist(lib, stored.as_deref(), payload.as_bytes(), env));
                match r {
                    Ok(Ok((st, blob))) => {
                        self.put(&vm, &key, blob);
                        self.accept(enclave, &code, st.version);
                        let mut o = check_value(st.version, value.as_ref(), mode);
                        o.detail = format!("{enclave} persisted version {}", st.version);
                        o
                    }
                    Ok(Err(e)) => Outcome::err(e.name(), format!("{enclave}: {e}")),
                    Err(e) => Outcome::err(outcome_name(&e), enclave.clone()),
                }
            }
            Event::AppLoad { enclave, value, .. } => {
                let (vm, code) = match self.sim.instance(enclave) {
                    Ok(i) => (i.vm.clone(), i.code.clone()),
                    Err(e) => return Outcome::err(outcome_name(&e), enclave.clone()),
                };
                let stored = self.stored(&vm, &app::state_key(&code));
                let r = self.sim.with_library(enclave, |lib, env| app::load(lib, stored.as_deref(), env));
                match r {
                    Ok(Ok(st)) => {
                        self.accept(enclave, &code, st.version);
                        let mut o = check_value(st.version, value.as_ref(), mode);
                        o.detail = format!("{enclave} accepted version {}", st.version);
                        o
                    }
                    Ok(Err(e)) => Outcome::err(e.name(), format!("{enclave}: {e}")),
                    Err(e) => Outcome::err(outcome_name(&e), enclave.clone()),
                }
            }
            Event::Migrate { enclave, to, .. } => self.migrate(enclave, to),
            Event::MigrationStart { enclave, to, .. } => {
                Outcome::from_sim(self.sim.migration_start(enclave, to), format!("{enclave} -> {to}"))
            }
            Event::VmMigrate { vm, to, .. } => match self.sim.vm_migrate(vm, to) {
                Ok(stopped) => {
                    for n in &stopped {
                        self.accepted.remove(n);
                    }
                    Outcome::ok(format!("{vm} -> {to}, stopped [{}]", stopped.join(", ")))
                }
                Err(e) => Outcome::err(outcome_name(&e), vm.clone()),
            },
            Event::MeRetry { machine, enclave, to, .. } => {
                let m = self.identity(enclave).mrenclave;
                Outcome::from_sim(self.sim.me_retry(machine, &m, to.as_deref()), format!("{machine} {enclave}"))
            }
            Event::MeRestart { machine, .. } => Outcome::from_sim(self.sim.restart_me(machine), machine.clone()),
            Event::Snapshot { vm, label } => Outcome::from_sim(self.sim.snapshot(vm, label), format!("{vm} as {label}")),
            Event::Restore { label, vm, keys } => {
                Outcome::from_sim(self.sim.restore(label, vm, keys.as_deref()), format!("{label} into {vm}"))
            }
            Event::Adversary { rules, clear, replay } => {
                if *clear {
                    self.sim.set_policy(AdversaryPolicy::new(Vec::new()));
                }
                for r in rules {
                    let r = rule(r, &self.sim);
                    self.sim.push_rule(r);
                }
                let replayed = if *replay { self.sim.replay_recorded() } else { 0 };
                Outcome::ok(format!("{} rules, replayed {replayed}", rules.len()))
            }
            Event::Assert { .. } => unreachable!("asserts are evaluated separately"),
        }
    }

    /// Migration start, wait for the record to reach the destination ME, move
    /// the VM and start the enclave there awaiting the data.
    fn migrate(&mut self, enclave: &str, to: &str) -> Outcome {
        let detail = format!("{enclave} -> {to}");
        let (vm, source_machine) = match self.sim.instance(enclave) {
            Ok(i) => (i.vm.clone(), i.machine()),
            Err(e) => return Outcome::err(outcome_name(&e), detail),
        };
        if let Err(e) = self.sim.migration_start(enclave, to) {
            return Outcome::err(outcome_name(&e), detail);
        }
        if let Err(e) = self.sim.run_until_quiescent() {
            return Outcome::err(outcome_name(&e), detail);
        }
        self.collect_secrets();
        let m = self.identity(enclave).mrenclave;
        match self.sim.me(source_machine).outgoing_record(&m) {
            Some(r) if r.state == RecordState::AwaitingConfirm => {}
            Some(r) => return Outcome::err(r.last_error.map_or("NotSent".into(), |c| c.name().to_string()), detail),
            None => return Outcome::err("NotSent", detail),
        }
        if let Err(e) = self.sim.vm_migrate(&vm, to) {
            return Outcome::err(outcome_name(&e), detail);
        }
        self.accepted.remove(enclave);
        if let Err(e) = self.start(enclave, InitKind::AwaitIncoming, false) {
            return Outcome::err(outcome_name(&e), detail);
        }
        if let Err(e) = self.sim.run_until_quiescent() {
            return Outcome::err(outcome_name(&e), detail);
        }
        match self.sim.instance(enclave).map(|i| i.library.phase()) {
            Ok(Phase::Operating) => Outcome::ok(detail),
            _ => Outcome::err("NotDelivered", detail),
        }
    }

    fn collect_secrets(&mut self) {
        for inst in self.sim.instances() {
            if inst.library.phase() != Phase::Awaiting {
                self.secrets.insert(inst.library.msk().as_bytes().to_vec());
            }
        }
        let ids: Vec<MachineId> = self.sim.machine_ids().collect();
        for id in ids {
            let t = self.sim.me(id).records();
            for r in t.outgoing.values().chain(t.incoming.values()) {
                self.secrets.insert(r.data.msk.as_bytes().to_vec());
                self.secrets.insert(r.data.counter_array_bytes());
            }
        }
    }

    fn accept(&mut self, enclave: &str, code: &str, version: u32) {
        self.accepted.insert(enclave.into(), version);
        let n = self.newest.entry(code.into()).or_default();
        *n = (*n).max(version);
    }

    /// Live instances that accepted a version older than the newest one ever
    /// accepted for their code.
    fn rollback(&self) -> (bool, String) {
        let stale: Vec<String> = self
            .live_versions()
            .into_iter()
            .filter(|(_, code, _, v)| self.newest.get(code).is_some_and(|n| v < n))
            .map(|(n, code, m, v)| format!("{n}@{m}=v{v} < v{}", self.newest[&code]))
            .collect();
        let detail = if stale.is_empty() { format!("newest {:?}", self.newest) } else { stale.join("; ") };
        (!stale.is_empty(), detail)
    }

    fn live_versions(&self) -> Vec<(String, String, MachineId, u32)> {
        self.sim
            .instances()
            .filter_map(|i| self.accepted.get(&i.name).map(|v| (i.name.clone(), i.code.clone(), i.machine(), *v)))
            .collect()
    }

    fn fork(&self) -> (bool, String) {
        let live = self.live_versions();
        let mut forks = Vec::new();
        for (i, a) in live.iter().enumerate() {
            for b in &live[i + 1..] {
                if a.1 == b.1 && a.2 != b.2 && a.3 != b.3 {
                    forks.push(format!("{}@{}=v{} / {}@{}=v{}", a.0, a.2, a.3, b.0, b.2, b.3));
                }
            }
        }
        let detail = if forks.is_empty() {
            let all: Vec<String> = live.iter().map(|(n, _, m, v)| format!("{n}@{m}=v{v}")).collect();
            format!("live: [{}]", all.join(", "))
        } else {
            forks.join("; ")
        };
        (!forks.is_empty(), detail)
    }

    fn assert(&mut self, index: usize, ev: &Event) -> AssertReport {
        let Event::Assert { check, req, enclave, machine, slot, value, state, last_error, at_least, expect } = ev else {
            unreachable!()
        };
        let mode = self.mode;
        let enclave = enclave.as_deref().unwrap_or_default();
        let source = |r: &Self| r.identity(enclave).mrenclave;
        let machine_id = machine.as_deref().map(|m| self.sim.machine_id(m).expect("validated machine"));
        let (expected, actual, detail): (String, String, String) = match check {
            Check::Counter => {
                let slot = CounterSlot(slot.unwrap_or(0));
                let r = self.sim.with_library(enclave, |lib, env| lib.read_counter(slot, env));
                let actual = match r {
                    Ok(Ok(v)) => v.to_string(),
                    Ok(Err(e)) => e.name().into(),
                    Err(e) => outcome_name(&e),
                };
                (value.as_ref().expect("validated").get(mode).to_string(), actual, format!("{enclave} slot {}", slot.0))
            }
            Check::AppVersion => {
                let actual = self.accepted.get(enclave).map_or("none".into(), u32::to_string);
                (value.as_ref().expect("validated").get(mode).to_string(), actual, enclave.into())
            }
            Check::Fork => {
                let (f, detail) = self.fork();
                (expect.as_ref().expect("validated").get(mode).to_string(), f.to_string(), detail)
            }
            Check::Rollback => {
                let (r, detail) = self.rollback();
                (expect.as_ref().expect("validated").get(mode).to_string(), r.to_string(), detail)
            }
            Check::Record => {
                let me = self.sim.me(machine_id.expect("validated"));
                let m = source(self);
                let rec = me.outgoing_record(&m).or_else(|| me.incoming_record(&m));
                let mut actual = rec.map_or("none".into(), |r| r.state.name().to_string());
                let mut expected = state.as_ref().expect("validated").get(mode);
                if let Some(le) = last_error {
                    let got = rec.and_then(|r| r.last_error).map_or("none", |c| c.name());
                    actual = format!("{actual}/{got}");
                    expected = format!("{expected}/{le}");
                }
                (expected, actual, format!("{} on {}", enclave, machine.as_deref().unwrap_or_default()))
            }
            Check::MigrationConfirmed => {
                let id = machine_id.expect("validated");
                let m = source(self);
                let confirmed = self
                    .sim
                    .me_events()
                    .iter()
                    .any(|(mid, e)| *mid == id && matches!(e, MeEvent::MigrationConfirmed { source } if *source == m));
                let actual = confirmed && self.sim.me(id).outgoing_record(&m).is_none();
                (expect.as_ref().expect("validated").get(mode).to_string(), actual.to_string(), enclave.into())
            }
            Check::Delivered => {
                let m = source(self);
                let n = self.sim.audits().iter().filter(|a| a.source == m).count();
                (value.as_ref().expect("validated").get(mode).to_string(), n.to_string(), enclave.into())
            }
            Check::ReplaysRejected => {
                let me = self.sim.me_events().iter().filter(|(_, e)| matches!(e, MeEvent::ReplayRejected { .. })).count();
                let lib = self.sim.library_replays();
                let want = at_least.expect("validated") as usize;
                let ok = me + lib >= want;
                (format!(">={want}"), if ok { format!(">={want}") } else { (me + lib).to_string() }, format!("me {me}, library {lib}"))
            }
            Check::Phase => {
                let actual = self.sim.instance(enclave).map_or("NotRunning".into(), |i| format!("{:?}", i.library.phase()));
                (state.as_ref().expect("validated").get(mode), actual, enclave.into())
            }
        };
        let check_name = serde_json::to_value(check).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        AssertReport { index, check: check_name, req: req.clone(), passed: expected == actual, expected, actual, detail }
    }

    fn invariants(&self) -> Vec<InvariantReport> {
        let audits = self.sim.audits();
        let bad: Vec<String> = audits
            .iter()
            .filter(|a| !(a.source == a.session_peer && a.endpoint_owner == Some(a.source)))
            .map(|a| format!("{} -> session {} owner {:?}", a.source.short(), a.session_peer.short(), a.endpoint_owner.map(|o| o.short())))
            .collect();
        let identity = InvariantReport {
            name: "identity-match".into(),
            passed: bad.is_empty(),
            detail: if bad.is_empty() { format!("{} deliveries checked", audits.len()) } else { bad.join("; ") },
        };

        let observed = self.sim.network().observed();
        let leaks = self
            .secrets
            .iter()
            .filter(|s| observed.iter().any(|e| contains(&e.payload, s)))
            .count();
        let secrecy = InvariantReport {
            name: "secrecy".into(),
            passed: leaks == 0,
            detail: format!("{} secrets x {} payloads, {leaks} found", self.secrets.len(), observed.len()),
        };

        let mut buffered: BTreeMap<(MachineId, Measurement), usize> = BTreeMap::new();
        let mut confirmed: BTreeMap<(MachineId, Measurement), usize> = BTreeMap::new();
        for (id, e) in self.sim.me_events() {
            match e {
                MeEvent::RecordBuffered { source, .. } => *buffered.entry((*id, *source)).or_default() += 1,
                MeEvent::DeliveryConfirmed { source } => *confirmed.entry((*id, *source)).or_default() += 1,
                _ => {}
            }
        }
        let over: Vec<String> = confirmed
            .iter()
            .filter(|(k, n)| **n > buffered.get(k).copied().unwrap_or(0))
            .map(|((id, s), n)| format!("{id} {} delivered {n}x", s.short()))
            .collect();
        let once = InvariantReport {
            name: "at-most-once".into(),
            passed: over.is_empty(),
            detail: if over.is_empty() { format!("{} deliveries confirmed", confirmed.values().sum::<usize>()) } else { over.join("; ") },
        };
        vec![identity, secrecy, once]
    }
}

