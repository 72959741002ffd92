// SPDX-License-Identifier: Apache-2.0

//! The simulation world: machines with their platform state and migration
//! enclave, VMs with persistent stores, running enclave instances, and the
//! network that connects them. All randomness comes from one seeded
//! generator, so a run is fully determined by its seed and inputs.

use super::{Address, AdversaryPolicy, Envelope, Frame, NetError, Network, Rule, VmStore, ME_ENDPOINT};
use crate::crypto::{sha256, SimRng};
use crate::migration_enclave::{DataCenterCredential, MeConfig, MeEnv, MeError, MeEvent, MigrationEnclave, Operator};
use crate::migration_lib::{EnclaveEnv, FrameOutcome, InitState, LibError, LibraryConfig, LibraryMode, MigrationLibrary};
use crate::sgx::{AttestationRoot, EnclaveIdentity, MachineId, Measurement, PlatformState};
use rand::SeedableRng;
use std::collections::BTreeMap;

pub const ME_CODE: &str = "migration-enclave 1.0";
pub const ME_MODIFIED_CODE: &str = "migration-enclave 1.0 (modified)";
pub const ME_SIGNER: &str = "migration-enclave vendor";

/// Identity every genuine migration enclave measures to.
pub fn genuine_me_identity() -> EnclaveIdentity {
    EnclaveIdentity::measure(ME_CODE, ME_SIGNER)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeKind {
    Genuine,
    /// Different code, skips all peer checks.
    Modified,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("unknown machine `{0}`")]
    UnknownMachine(String),
    #[error("unknown vm `{0}`")]
    UnknownVm(String),
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("enclave `{0}` is not running")]
    NotRunning(String),
    #[error("name `{0}` already in use")]
    Duplicate(String),
    #[error("unknown snapshot `{0}`")]
    UnknownSnapshot(String),
    #[error("management VMs cannot be migrated")]
    ManagementVmImmovable,
    #[error("{}", .0.name())]
    Library(LibError),
    #[error("{0}")]
    Me(MeError),
    #[error("{0}")]
    Net(NetError),
    #[error("network did not quiesce within {0} deliveries")]
    NotQuiescent(usize),
}

impl From<LibError> for SimError {
    fn from(e: LibError) -> Self {
        Self::Library(e)
    }
}

impl From<MeError> for SimError {
    fn from(e: MeError) -> Self {
        Self::Me(e)
    }
}

/// One forwarded migration record, seen from both sides: what the ME
/// believed about the session, and who actually owns the endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryAudit {
    pub machine: MachineId,
    pub source: Measurement,
    pub session_peer: Measurement,
    pub endpoint_owner: Option<Measurement>,
}

struct Machine {
    name: String,
    platform: PlatformState,
    me: MigrationEnclave,
    me_cfg: MeConfig,
    credential: DataCenterCredential,
    mgmt_vm: String,
    next_endpoint: u16,
}

#[derive(Debug, Clone)]
pub struct Vm {
    pub name: String,
    pub machine: MachineId,
    pub store: VmStore,
    pub management: bool,
}

pub struct Instance {
    pub name: String,
    pub code: String,
    pub vm: String,
    pub address: Address,
    pub library: MigrationLibrary,
    pub outcomes: Vec<FrameOutcome>,
}

impl Instance {
    pub fn machine(&self) -> MachineId {
        self.address.machine
    }
}

pub fn internals_key(code: &str) -> String {
    format!("lib/{code}/internals")
}

const ME_RECORDS_KEY: &str = "me/records";
const MAX_DELIVERIES: usize = 100_000;

pub struct Simulation {
    rng: SimRng,
    root: AttestationRoot,
    operators: BTreeMap<String, Operator>,
    machines: BTreeMap<MachineId, Machine>,
    machine_names: BTreeMap<String, MachineId>,
    vms: BTreeMap<String, Vm>,
    instances: BTreeMap<String, Instance>,
    by_address: BTreeMap<Address, String>,
    snapshots: BTreeMap<String, VmStore>,
    net: Network,
    log: Vec<String>,
    audits: Vec<DeliveryAudit>,
    me_events: Vec<(MachineId, MeEvent)>,
    lib_replays: usize,
}

impl Simulation {
    pub fn new(seed: u64) -> Self {
        let mut rng = SimRng::seed_from_u64(seed);
        let root = AttestationRoot::generate(&mut rng);
        Self {
            rng,
            root,
            operators: BTreeMap::new(),
            machines: BTreeMap::new(),
            machine_names: BTreeMap::new(),
            vms: BTreeMap::new(),
            instances: BTreeMap::new(),
            by_address: BTreeMap::new(),
            snapshots: BTreeMap::new(),
            net: Network::new(),
            log: Vec::new(),
            audits: Vec::new(),
            me_events: Vec::new(),
            lib_replays: 0,
        }
    }

    fn note(&mut self, line: String) {
        self.log.push(format!("t={} {line}", self.net.now()));
    }

    pub fn log(&self) -> &[String] {
        &self.log
    }

    /// Appends a harness-level line to the event log.
    pub fn annotate(&mut self, line: impl Into<String>) {
        self.note(line.into());
    }

    pub fn rng(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    pub fn attestation_root(&self) -> &AttestationRoot {
        &self.root
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn audits(&self) -> &[DeliveryAudit] {
        &self.audits
    }

    pub fn me_events(&self) -> &[(MachineId, MeEvent)] {
        &self.me_events
    }

    /// Frames rejected by libraries as replays, including stopped instances.
    pub fn library_replays(&self) -> usize {
        self.lib_replays
    }

    // ---- topology ------------------------------------------------------------

    pub fn add_operator(&mut self, name: &str) -> Result<(), SimError> {
        if self.operators.contains_key(name) {
            return Err(SimError::Duplicate(name.into()));
        }
        let op = Operator::generate(name, &mut self.rng);
        self.operators.insert(name.into(), op);
        Ok(())
    }

    pub fn add_machine(&mut self, name: &str, operator: &str, kind: MeKind) -> Result<MachineId, SimError> {
        if self.machine_names.contains_key(name) {
            return Err(SimError::Duplicate(name.into()));
        }
        let op = self.operators.get(operator).ok_or_else(|| SimError::UnknownOperator(operator.into()))?;
        let credential = op.issue(&mut self.rng);
        let id = MachineId(self.machines.len() as u64 + 1);
        let platform = PlatformState::new(id, &self.root, &mut self.rng);
        let code = match kind {
            MeKind::Genuine => ME_CODE,
            MeKind::Modified => ME_MODIFIED_CODE,
        };
        let me_cfg = MeConfig {
            identity: EnclaveIdentity::measure(code, ME_SIGNER),
            address: Address::me_of(id),
            attestation_root: self.root.verifying_key(),
            enforce_peer_checks: kind == MeKind::Genuine,
        };
        let mut me = MigrationEnclave::new(me_cfg);
        me.setup(credential.clone())?;
        let mgmt_vm = format!("mgmt-{name}");
        self.vms.insert(
            mgmt_vm.clone(),
            Vm { name: mgmt_vm.clone(), machine: id, store: VmStore::new(), management: true },
        );
        self.net.register(Address::me_of(id));
        self.machines.insert(
            id,
            Machine { name: name.into(), platform, me, me_cfg, credential, mgmt_vm, next_endpoint: ME_ENDPOINT + 1 },
        );
        self.machine_names.insert(name.into(), id);
        self.note(format!("machine {name} = {id} operator={operator} me={kind:?}"));
        Ok(id)
    }

    pub fn machine_id(&self, name: &str) -> Result<MachineId, SimError> {
        self.machine_names.get(name).copied().ok_or_else(|| SimError::UnknownMachine(name.into()))
    }

    pub fn machine_name(&self, id: MachineId) -> &str {
        &self.machines[&id].name
    }

    pub fn machine_ids(&self) -> impl Iterator<Item = MachineId> + '_ {
        self.machines.keys().copied()
    }

    pub fn platform(&self, id: MachineId) -> &PlatformState {
        &self.machines[&id].platform
    }

    pub fn platform_mut(&mut self, id: MachineId) -> &mut PlatformState {
        &mut self.machines.get_mut(&id).expect("known machine").platform
    }

    pub fn me(&self, id: MachineId) -> &MigrationEnclave {
        &self.machines[&id].me
    }

    pub fn add_vm(&mut self, name: &str, machine: &str) -> Result<(), SimError> {
        if self.vms.contains_key(name) {
            return Err(SimError::Duplicate(name.into()));
        }
        let id = self.machine_id(machine)?;
        self.vms.insert(name.into(), Vm { name: name.into(), machine: id, store: VmStore::new(), management: false });
        self.note(format!("vm {name} on {machine}"));
        Ok(())
    }

    pub fn vm(&self, name: &str) -> Result<&Vm, SimError> {
        self.vms.get(name).ok_or_else(|| SimError::UnknownVm(name.into()))
    }

    pub fn vm_store_mut(&mut self, name: &str) -> Result<&mut VmStore, SimError> {
        self.vms.get_mut(name).map(|v| &mut v.store).ok_or_else(|| SimError::UnknownVm(name.into()))
    }

    // ---- enclaves ------------------------------------------------------------

    /// Launches an enclave instance in `vm`. With `use_stored_buffer` the
    /// library receives the internals buffer found in the VM store.
    #[allow(clippy::too_many_arguments)]
    pub fn start_enclave(
        &mut self,
        name: &str,
        code: &str,
        signer: &str,
        vm: &str,
        mode: LibraryMode,
        init: InitState,
        use_stored_buffer: bool,
    ) -> Result<(), SimError> {
        if self.instances.contains_key(name) {
            return Err(SimError::Duplicate(name.into()));
        }
        let vm_ref = self.vms.get(vm).ok_or_else(|| SimError::UnknownVm(vm.into()))?;
        let machine_id = vm_ref.machine;
        let buffer = if use_stored_buffer { vm_ref.store.get(&internals_key(code)).map(<[u8]>::to_vec) } else { None };
        let machine = self.machines.get_mut(&machine_id).expect("vm on known machine");
        let address = Address::new(machine_id, machine.next_endpoint);
        let cfg = LibraryConfig {
            identity: EnclaveIdentity::measure(code, signer),
            mode,
            address,
            me_address: Address::me_of(machine_id),
            me_identity: genuine_me_identity(),
        };
        let mut env = EnclaveEnv { platform: &mut machine.platform, rng: &mut self.rng };
        let result = MigrationLibrary::init(cfg, buffer.as_deref(), init, &mut env);
        let library = match result {
            Ok(l) => l,
            Err(e) => {
                self.note(format!("start {name} on {machine_id} {init:?} failed: {}", e.name()));
                return Err(e.into());
            }
        };
        machine.next_endpoint += 1;
        self.net.register(address);
        self.by_address.insert(address, name.into());
        self.instances.insert(
            name.into(),
            Instance { name: name.into(), code: code.into(), vm: vm.into(), address, library, outcomes: Vec::new() },
        );
        self.note(format!("start {name} at {address} {init:?} {mode:?}"));
        self.drain_instance(name);
        Ok(())
    }

    pub fn stop_enclave(&mut self, name: &str) -> Result<(), SimError> {
        let inst = self.instances.remove(name).ok_or_else(|| SimError::NotRunning(name.into()))?;
        self.net.unregister(&inst.address);
        self.by_address.remove(&inst.address);
        if let Some(m) = self.machines.get_mut(&inst.address.machine) {
            m.me.endpoint_closed(&inst.address);
        }
        self.note(format!("stop {name} at {}", inst.address));
        Ok(())
    }

    pub fn instance(&self, name: &str) -> Result<&Instance, SimError> {
        self.instances.get(name).ok_or_else(|| SimError::NotRunning(name.into()))
    }

    pub fn instances(&self) -> impl Iterator<Item = &Instance> {
        self.instances.values()
    }

    /// Runs `f` inside the enclave `name`, then flushes its outboxes.
    pub fn with_library<R>(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut MigrationLibrary, &mut EnclaveEnv<'_>) -> R,
    ) -> Result<R, SimError> {
        let inst = self.instances.get_mut(name).ok_or_else(|| SimError::NotRunning(name.into()))?;
        let machine = self.machines.get_mut(&inst.address.machine).expect("known machine");
        let mut env = EnclaveEnv { platform: &mut machine.platform, rng: &mut self.rng };
        let r = f(&mut inst.library, &mut env);
        self.drain_instance(name);
        Ok(r)
    }

    pub fn migration_start(&mut self, name: &str, destination: &str) -> Result<(), SimError> {
        let dest = Address::me_of(self.machine_id(destination)?);
        let r = self.with_library(name, |lib, env| lib.migration_start(dest, env))?;
        self.note(format!(
            "migration_start {name} -> {destination}: {}",
            r.map_or_else(|e| e.name().to_string(), |_| "ok".into())
        ));
        r.map_err(SimError::from)
    }

    fn drain_instance(&mut self, name: &str) {
        let Some(inst) = self.instances.get_mut(name) else {
            return;
        };
        let persisted = inst.library.take_persisted_buffer();
        let outgoing = inst.library.take_outgoing();
        let (from, vm, code) = (inst.address, inst.vm.clone(), inst.code.clone());
        if let Some(buf) = persisted {
            if let Some(v) = self.vms.get_mut(&vm) {
                v.store.put(&internals_key(&code), buf);
            }
        }
        for (to, bytes) in outgoing {
            self.send(from, to, bytes);
        }
    }

    fn drain_me(&mut self, id: MachineId) {
        let m = self.machines.get_mut(&id).expect("known machine");
        let persisted = m.me.take_persisted();
        let outgoing = m.me.take_outgoing();
        let events = m.me.take_events();
        let mgmt = m.mgmt_vm.clone();
        let from = m.me.address();
        if let Some(buf) = persisted {
            self.vms.get_mut(&mgmt).expect("management vm").store.put(ME_RECORDS_KEY, buf);
        }
        for ev in events {
            if let MeEvent::Forwarded { source, session_peer, to } = &ev {
                let owner = self.by_address.get(to).map(|n| self.instances[n].library.config().identity.mrenclave);
                self.audits.push(DeliveryAudit {
                    machine: id,
                    source: *source,
                    session_peer: *session_peer,
                    endpoint_owner: owner,
                });
            }
            self.note(format!("me {id}: {ev}"));
            self.me_events.push((id, ev));
        }
        for (to, bytes) in outgoing {
            self.send(from, to, bytes);
        }
    }

    fn send(&mut self, from: Address, to: Address, bytes: Vec<u8>) {
        let kind = Frame::peek_kind(&bytes).map_or("?", |k| k.name());
        let digest = hex::encode(&sha256(&[&bytes])[..4]);
        let len = bytes.len();
        match self.net.send(from, to, bytes) {
            Ok(o) => {
                let fate = if o.dropped {
                    " dropped".to_string()
                } else if o.scheduled > 1 {
                    format!(" x{}", o.scheduled)
                } else if o.injected > 0 {
                    " +injected".to_string()
                } else {
                    String::new()
                };
                self.note(format!("send {from}->{to} {kind} len={len} h={digest}{fate}"));
            }
            Err(e) => self.note(format!("send {from}->{to} {kind} failed: {e}")),
        }
    }

    // ---- network ---------------------------------------------------------------

    pub fn set_policy(&mut self, policy: AdversaryPolicy) {
        self.note(format!("adversary policy set ({} rules)", policy.rules().len()));
        self.net.set_policy(policy);
    }

    pub fn push_rule(&mut self, rule: Rule) {
        let mut p = self.net.policy().clone();
        p.push(rule);
        self.net.set_policy(p);
        self.note("adversary rule added".into());
    }

    pub fn replay_recorded(&mut self) -> usize {
        let n = self.net.replay_recorded();
        self.note(format!("adversary replays {n} recorded envelopes"));
        n
    }

    /// Delivers one envelope. Returns false when the queue is empty.
    pub fn step(&mut self) -> bool {
        let Some(env) = self.net.step() else {
            return false;
        };
        self.deliver(env);
        true
    }

    pub fn run_until_quiescent(&mut self) -> Result<usize, SimError> {
        let mut n = 0;
        while self.step() {
            n += 1;
            if n >= MAX_DELIVERIES {
                return Err(SimError::NotQuiescent(n));
            }
        }
        Ok(n)
    }

    fn deliver(&mut self, env: Envelope) {
        let Envelope { from, to, payload, .. } = env;
        let kind = Frame::peek_kind(&payload).map_or("?", |k| k.name());
        self.note(format!("deliver {from}->{to} {kind}"));
        if to.endpoint == ME_ENDPOINT {
            let Some(m) = self.machines.get_mut(&to.machine) else {
                return;
            };
            let mut me_env = MeEnv { platform: &m.platform, rng: &mut self.rng };
            m.me.handle_frame(from, &payload, &mut me_env);
            self.drain_me(to.machine);
            return;
        }
        let Some(name) = self.by_address.get(&to).cloned() else {
            self.note(format!("undeliverable {to}"));
            return;
        };
        let inst = self.instances.get_mut(&name).expect("indexed instance");
        let machine = self.machines.get_mut(&to.machine).expect("known machine");
        let mut lib_env = EnclaveEnv { platform: &mut machine.platform, rng: &mut self.rng };
        let outcome = inst.library.handle_frame(from, &payload, &mut lib_env);
        if outcome == FrameOutcome::ReplayRejected {
            self.lib_replays += 1;
        }
        inst.outcomes.push(outcome.clone());
        self.note(format!("lib {name}: {outcome:?}"));
        self.drain_instance(&name);
    }

    // ---- host and adversary actions on VMs -------------------------------------

    /// Moves a VM and its store to another machine. Enclave instances inside
    /// it stop; their names are returned.
    pub fn vm_migrate(&mut self, vm: &str, to: &str) -> Result<Vec<String>, SimError> {
        let to_id = self.machine_id(to)?;
        let v = self.vms.get(vm).ok_or_else(|| SimError::UnknownVm(vm.into()))?;
        if v.management {
            return Err(SimError::ManagementVmImmovable);
        }
        let stopped: Vec<String> = self.instances.values().filter(|i| i.vm == vm).map(|i| i.name.clone()).collect();
        for n in &stopped {
            self.stop_enclave(n)?;
        }
        self.vms.get_mut(vm).expect("checked").machine = to_id;
        self.note(format!("vm_migrate {vm} -> {to}"));
        Ok(stopped)
    }

    pub fn snapshot(&mut self, vm: &str, label: &str) -> Result<(), SimError> {
        let store = self.vm(vm)?.store.clone();
        self.snapshots.insert(label.into(), store);
        self.note(format!("snapshot {vm} as {label}"));
        Ok(())
    }

    /// Overwrites entries of `vm`'s store with a snapshot, all entries or only `keys`.
    pub fn restore(&mut self, label: &str, vm: &str, keys: Option<&[String]>) -> Result<(), SimError> {
        let snap = self.snapshots.get(label).ok_or_else(|| SimError::UnknownSnapshot(label.into()))?.clone();
        let store = self.vm_store_mut(vm)?;
        match keys {
            None => *store = snap,
            Some(keys) => {
                for k in keys {
                    match snap.get(k) {
                        Some(v) => store.put(k, v.to_vec()),
                        None => {
                            store.remove(k);
                        }
                    }
                }
            }
        }
        self.note(format!("restore {label} into {vm}"));
        Ok(())
    }

    // ---- migration enclave control ---------------------------------------------

    /// Crash-restarts the ME: sessions are lost, sealed records are recovered
    /// from the management store and the operator re-provisions it.
    pub fn restart_me(&mut self, machine: &str) -> Result<(), SimError> {
        let id = self.machine_id(machine)?;
        let m = self.machines.get_mut(&id).expect("known machine");
        let sealed = self.vms[&m.mgmt_vm].store.get(ME_RECORDS_KEY).map(<[u8]>::to_vec);
        let mut me = MigrationEnclave::recover(m.me_cfg, sealed.as_deref(), &m.platform)?;
        me.setup(m.credential.clone())?;
        m.me = me;
        self.note(format!("me {id} restarted"));
        Ok(())
    }

    pub fn me_retry(&mut self, machine: &str, source: &Measurement, destination: Option<&str>) -> Result<(), SimError> {
        let id = self.machine_id(machine)?;
        let dest = destination.map(|d| self.machine_id(d).map(Address::me_of)).transpose()?;
        let m = self.machines.get_mut(&id).expect("known machine");
        let mut env = MeEnv { platform: &m.platform, rng: &mut self.rng };
        let r = m.me.retry(source, dest, &mut env);
        self.note(format!("me_retry {machine} {}: {:?}", source.short(), r));
        self.drain_me(id);
        r.map_err(SimError::from)
    }
}
