// SPDX-License-Identifier: Apache-2.0

//! The Migration Library linked into every migratable enclave.
//!
//! It replaces native sealing with sealing under a Migration Sealing Key
//! (MSK) that is generated once and carried along on every migration, and it
//! wraps native monotonic counters with per-slot offsets so effective values
//! survive a move to another machine:
//!
//! `effective(slot) = native(slot) + offset(slot)`
//!
//! On migration start the library persists a frozen flag, reads and destroys
//! every native counter, and hands the effective values and the MSK to the
//! local migration enclave. On the destination it creates one fresh native
//! counter per active slot and installs the received values as offsets.
//!
//! The library never performs I/O. Persisted buffers and outgoing frames
//! accumulate in outboxes that the host drains.

pub mod records;

pub use records::{LibraryInternals, MigrationData, SLOTS};

use crate::crypto::{aead_open, aead_seal, Key128, SimRng, NONCE_LEN};
use crate::netsim::channel::{AttestedChannel, Ephemeral, Frame, FrameKind, LocalHello, Role};
use crate::netsim::Address;
use crate::protocol::{decode_error, encode_error, ErrorCode};
use crate::sgx::{EnclaveIdentity, PlatformState, SealKeyPolicy, SealedBlob, SgxError};
use rand::RngCore;
use std::fmt;

/// Associated data of the sealed internals buffer.
const INTERNALS_AAD: &[u8] = b"migration-library internals v1";

/// Application-visible counter handle, independent of the native uuid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CounterSlot(pub u8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitState {
    CreateNew,
    Reload,
    AwaitIncoming,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LibraryMode {
    /// Counters destroyed at freeze, offsets installed on receipt.
    Full,
    /// Transfers only the MSK: no counter deletion, no offsets, no persisted
    /// frozen flag. Vulnerable on purpose.
    NaiveBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Operating,
    Awaiting,
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum LibError {
    #[error("library is frozen")]
    Frozen,
    #[error("persisted buffer is frozen; refusing to operate")]
    FrozenBuffer,
    #[error("authentication failure")]
    AuthFailure,
    #[error("malformed persisted buffer")]
    MalformedBuffer,
    #[error("attestation of the migration enclave failed")]
    AttestationFailure,
    #[error("report data does not bind the key-agreement message")]
    BindingMismatch,
    #[error("no attested channel to the migration enclave")]
    ChannelFailure,
    #[error("native counter could not be destroyed")]
    CounterDestroyFailure,
    #[error("counter limit exceeded")]
    CounterLimitExceeded,
    #[error("counter not found")]
    CounterNotFound,
    #[error("counter overflow")]
    CounterOverflow,
    #[error("not awaiting an incoming migration")]
    NotAwaiting,
    #[error("awaiting incoming migration data")]
    AwaitingMigration,
}

impl LibError {
    pub fn name(self) -> &'static str {
        match self {
            Self::Frozen => "Frozen",
            Self::FrozenBuffer => "FrozenBuffer",
            Self::AuthFailure => "AuthFailure",
            Self::MalformedBuffer => "MalformedBuffer",
            Self::AttestationFailure => "AttestationFailure",
            Self::BindingMismatch => "BindingMismatch",
            Self::ChannelFailure => "ChannelFailure",
            Self::CounterDestroyFailure => "CounterDestroyFailure",
            Self::CounterLimitExceeded => "CounterLimitExceeded",
            Self::CounterNotFound => "CounterNotFound",
            Self::CounterOverflow => "CounterOverflow",
            Self::NotAwaiting => "NotAwaiting",
            Self::AwaitingMigration => "AwaitingMigration",
        }
    }
}

fn counter_err(e: SgxError) -> LibError {
    match e {
        SgxError::CounterLimitExceeded => LibError::CounterLimitExceeded,
        SgxError::CounterOverflow => LibError::CounterOverflow,
        _ => LibError::CounterNotFound,
    }
}

/// The enclave's view of the machine it currently runs on.
pub struct EnclaveEnv<'a> {
    pub platform: &'a mut PlatformState,
    pub rng: &'a mut SimRng,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LibraryConfig {
    pub identity: EnclaveIdentity,
    pub mode: LibraryMode,
    /// This enclave's network endpoint.
    pub address: Address,
    pub me_address: Address,
    /// Identity the local migration enclave must attest to.
    pub me_identity: EnclaveIdentity,
}

/// Result of feeding one inbound frame to the library.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameOutcome {
    ChannelEstablished,
    MigrationReceived,
    ReplayRejected,
    MeError(ErrorCode),
    Rejected(LibError),
    Ignored,
}

pub struct MigrationLibrary {
    cfg: LibraryConfig,
    internals: LibraryInternals,
    phase: Phase,
    pending_hello: Option<(Ephemeral, Vec<u8>)>,
    channel: Option<AttestedChannel>,
    persisted: Option<Vec<u8>>,
    outgoing: Vec<(Address, Vec<u8>)>,
}

impl fmt::Debug for MigrationLibrary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MigrationLibrary")
            .field("identity", &self.cfg.identity.mrenclave)
            .field("mode", &self.cfg.mode)
            .field("phase", &self.phase)
            .field("channel", &self.channel.is_some())
            .finish()
    }
}

impl MigrationLibrary {
    /// Initializes the library and starts local attestation with the ME.
    ///
    /// `CreateNew` ignores `buffer`. `Reload` requires one. `AwaitIncoming`
    /// accepts an optional buffer, which must unseal on this machine; its
    /// frozen flag is tolerated since the contents are replaced on receipt.
    pub fn init(
        cfg: LibraryConfig,
        buffer: Option<&[u8]>,
        init: InitState,
        env: &mut EnclaveEnv<'_>,
    ) -> Result<Self, LibError> {
        let (internals, phase) = match init {
            InitState::CreateNew => (LibraryInternals::fresh(Key128::random(env.rng)), Phase::Operating),
            InitState::Reload => {
                let li = Self::open_buffer(&cfg, buffer.ok_or(LibError::MalformedBuffer)?, env.platform)?;
                if li.frozen {
                    return Err(LibError::FrozenBuffer);
                }
                (li, Phase::Operating)
            }
            InitState::AwaitIncoming => {
                if let Some(b) = buffer {
                    Self::open_buffer(&cfg, b, env.platform)?;
                }
                (LibraryInternals::fresh(Key128::from_bytes([0; 16])), Phase::Awaiting)
            }
        };
        let mut lib = Self {
            cfg,
            internals,
            phase,
            pending_hello: None,
            channel: None,
            persisted: None,
            outgoing: Vec::new(),
        };
        if init == InitState::CreateNew {
            lib.persist(env);
        }
        lib.send_hello(env);
        Ok(lib)
    }

    fn open_buffer(cfg: &LibraryConfig, buffer: &[u8], platform: &PlatformState) -> Result<LibraryInternals, LibError> {
        let blob = SealedBlob::from_bytes(buffer).map_err(|_| LibError::MalformedBuffer)?;
        if blob.policy != SealKeyPolicy::ByMrenclave {
            return Err(LibError::MalformedBuffer);
        }
        let (pt, aad) = platform.unseal_data(&cfg.identity, &blob).map_err(|_| LibError::AuthFailure)?;
        if aad != INTERNALS_AAD {
            return Err(LibError::MalformedBuffer);
        }
        LibraryInternals::decode(&pt).ok_or(LibError::MalformedBuffer)
    }

    fn persist(&mut self, env: &mut EnclaveEnv<'_>) {
        let blob = env.platform.seal_data(
            &self.cfg.identity,
            SealKeyPolicy::ByMrenclave,
            &self.internals.encode(),
            INTERNALS_AAD,
            env.rng,
        );
        self.persisted = Some(blob.to_bytes());
    }

    fn send_hello(&mut self, env: &mut EnclaveEnv<'_>) {
        let eph = Ephemeral::generate(env.rng);
        let hello = LocalHello::create(env.platform, &self.cfg.identity, &self.cfg.me_identity, &eph).encode();
        self.outgoing.push((self.cfg.me_address, Frame::new(FrameKind::LocalHello, hello.clone()).encode()));
        self.pending_hello = Some((eph, hello));
    }

    // ---- host-facing accessors ------------------------------------------

    pub fn config(&self) -> &LibraryConfig {
        &self.cfg
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn has_channel(&self) -> bool {
        self.channel.is_some()
    }

    /// Latest sealed internals buffer, if it changed since the last call.
    pub fn take_persisted_buffer(&mut self) -> Option<Vec<u8>> {
        self.persisted.take()
    }

    /// Frames queued for the network since the last call.
    pub fn take_outgoing(&mut self) -> Vec<(Address, Vec<u8>)> {
        std::mem::take(&mut self.outgoing)
    }

    /// Copy of the MSK, for test oracles that inspect simulation state.
    pub fn msk(&self) -> Key128 {
        self.internals.msk.clone()
    }

    pub fn internals(&self) -> &LibraryInternals {
        &self.internals
    }

    fn operating(&self) -> Result<(), LibError> {
        match self.phase {
            Phase::Operating => Ok(()),
            Phase::Frozen => Err(LibError::Frozen),
            Phase::Awaiting => Err(LibError::AwaitingMigration),
        }
    }

    // ---- migratable sealing ------------------------------------------------

    /// Seals under the MSK. Same parameters as native sealing.
    pub fn seal_migratable(&self, plaintext: &[u8], aad: &[u8], rng: &mut SimRng) -> Result<SealedBlob, LibError> {
        self.operating()?;
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let policy = SealKeyPolicy::ByMrenclave;
        let mut bound = vec![policy.tag()];
        bound.extend_from_slice(aad);
        let (ciphertext, tag) = aead_seal(&self.internals.msk, &nonce, &bound, plaintext);
        Ok(SealedBlob { policy, nonce, aad: aad.to_vec(), ciphertext, tag })
    }

    pub fn unseal_migratable(&self, blob: &SealedBlob) -> Result<(Vec<u8>, Vec<u8>), LibError> {
        self.operating()?;
        let mut bound = vec![blob.policy.tag()];
        bound.extend_from_slice(&blob.aad);
        let pt = aead_open(&self.internals.msk, &blob.nonce, &bound, &blob.ciphertext, &blob.tag)
            .ok_or(LibError::AuthFailure)?;
        Ok((pt, blob.aad.clone()))
    }

    // ---- migratable counters -------------------------------------------------

    fn uuid(&self, slot: CounterSlot) -> Result<crate::sgx::CounterUuid, LibError> {
        let i = slot.0 as usize;
        if !self.internals.active[i] {
            return Err(LibError::CounterNotFound);
        }
        self.internals.uuids[i].ok_or(LibError::CounterNotFound)
    }

    pub fn create_counter(&mut self, env: &mut EnclaveEnv<'_>) -> Result<(CounterSlot, u32), LibError> {
        self.operating()?;
        let i = self.internals.active.iter().position(|a| !a).ok_or(LibError::CounterLimitExceeded)?;
        let (uuid, _) = env.platform.mc_create(&self.cfg.identity, env.rng).map_err(counter_err)?;
        self.internals.active[i] = true;
        self.internals.uuids[i] = Some(uuid);
        self.internals.offsets[i] = 0;
        self.persist(env);
        Ok((CounterSlot(i as u8), 0))
    }

    pub fn read_counter(&self, slot: CounterSlot, env: &mut EnclaveEnv<'_>) -> Result<u32, LibError> {
        self.operating()?;
        let uuid = self.uuid(slot)?;
        let native = env.platform.mc_read(&self.cfg.identity, &uuid).map_err(counter_err)?;
        native.checked_add(self.internals.offsets[slot.0 as usize]).ok_or(LibError::CounterOverflow)
    }

    pub fn increment_counter(&mut self, slot: CounterSlot, env: &mut EnclaveEnv<'_>) -> Result<u32, LibError> {
        self.operating()?;
        let uuid = self.uuid(slot)?;
        let offset = self.internals.offsets[slot.0 as usize];
        let native = env.platform.mc_read(&self.cfg.identity, &uuid).map_err(counter_err)?;
        // Overflow of the effective value is checked before touching the counter.
        native
            .checked_add(offset)
            .and_then(|v| v.checked_add(1))
            .ok_or(LibError::CounterOverflow)?;
        let native = env.platform.mc_increment(&self.cfg.identity, &uuid).map_err(counter_err)?;
        Ok(native + offset)
    }

    pub fn destroy_counter(&mut self, slot: CounterSlot, env: &mut EnclaveEnv<'_>) -> Result<(), LibError> {
        self.operating()?;
        let uuid = self.uuid(slot)?;
        env.platform.mc_destroy(&self.cfg.identity, &uuid).map_err(counter_err)?;
        let i = slot.0 as usize;
        self.internals.active[i] = false;
        self.internals.uuids[i] = None;
        self.internals.offsets[i] = 0;
        self.persist(env);
        Ok(())
    }

    // ---- migration -------------------------------------------------------------

    /// Freezes the enclave and hands its migratable state to the local ME,
    /// addressed to the ME at `destination`.
    pub fn migration_start(&mut self, destination: Address, env: &mut EnclaveEnv<'_>) -> Result<(), LibError> {
        self.operating()?;
        if self.channel.is_none() {
            return Err(LibError::ChannelFailure);
        }
        let data = match self.cfg.mode {
            LibraryMode::Full => {
                self.internals.frozen = true;
                self.persist(env);
                self.phase = Phase::Frozen;
                let mut data = MigrationData::empty(self.internals.msk.clone());
                for i in 0..SLOTS {
                    if !self.internals.active[i] {
                        continue;
                    }
                    let uuid = self.internals.uuids[i].ok_or(LibError::CounterDestroyFailure)?;
                    let native = env
                        .platform
                        .mc_read(&self.cfg.identity, &uuid)
                        .map_err(|_| LibError::CounterDestroyFailure)?;
                    env.platform
                        .mc_destroy(&self.cfg.identity, &uuid)
                        .map_err(|_| LibError::CounterDestroyFailure)?;
                    data.active[i] = true;
                    data.values[i] = native
                        .checked_add(self.internals.offsets[i])
                        .ok_or(LibError::CounterDestroyFailure)?;
                }
                data
            }
            LibraryMode::NaiveBaseline => {
                self.phase = Phase::Frozen;
                MigrationData::empty(self.internals.msk.clone())
            }
        };
        let mut body = destination.encode().to_vec();
        body.extend_from_slice(&data.encode());
        self.send_sealed(FrameKind::MigrateRequest, &body);
        Ok(())
    }

    /// Installs incoming migration data. Only valid while awaiting.
    pub fn receive_incoming(&mut self, data: &MigrationData, env: &mut EnclaveEnv<'_>) -> Result<(), LibError> {
        if self.phase != Phase::Awaiting {
            return Err(LibError::NotAwaiting);
        }
        let mut li = LibraryInternals::fresh(data.msk.clone());
        if self.cfg.mode == LibraryMode::Full {
            let mut created = Vec::new();
            for i in 0..SLOTS {
                if !data.active[i] {
                    continue;
                }
                match env.platform.mc_create(&self.cfg.identity, env.rng) {
                    Ok((uuid, _)) => {
                        created.push(uuid);
                        li.active[i] = true;
                        li.uuids[i] = Some(uuid);
                        li.offsets[i] = data.values[i];
                    }
                    Err(_) => {
                        for uuid in &created {
                            let _ = env.platform.mc_destroy(&self.cfg.identity, uuid);
                        }
                        return Err(LibError::CounterLimitExceeded);
                    }
                }
            }
        }
        self.internals = li;
        self.phase = Phase::Operating;
        self.persist(env);
        Ok(())
    }

    fn send_sealed(&mut self, kind: FrameKind, body: &[u8]) {
        if let Some(ch) = self.channel.as_mut() {
            let wire = ch.seal_frame(kind, body);
            self.outgoing.push((self.cfg.me_address, wire));
        }
    }

    /// Processes one inbound frame from the network.
    pub fn handle_frame(&mut self, from: Address, bytes: &[u8], env: &mut EnclaveEnv<'_>) -> FrameOutcome {
        if from != self.cfg.me_address {
            return FrameOutcome::Ignored;
        }
        let Ok(frame) = Frame::decode(bytes) else {
            return FrameOutcome::Ignored;
        };
        match frame.kind {
            FrameKind::LocalHello => self.on_hello(&frame, env),
            FrameKind::IncomingData | FrameKind::Error | FrameKind::Confirm => {
                let Some(ch) = self.channel.as_mut() else {
                    return FrameOutcome::Ignored;
                };
                let body = match ch.open_frame(&frame) {
                    Ok(b) => b,
                    Err(crate::netsim::ChannelError::Replay(_)) => return FrameOutcome::ReplayRejected,
                    Err(_) => return FrameOutcome::Ignored,
                };
                match frame.kind {
                    FrameKind::IncomingData => self.on_incoming(&body, env),
                    FrameKind::Error => match decode_error(&body) {
                        Some((code, _)) => FrameOutcome::MeError(code),
                        None => FrameOutcome::Ignored,
                    },
                    _ => FrameOutcome::Ignored,
                }
            }
            _ => FrameOutcome::Ignored,
        }
    }

    fn on_hello(&mut self, frame: &Frame, env: &mut EnclaveEnv<'_>) -> FrameOutcome {
        let Some((eph, mine)) = self.pending_hello.as_ref() else {
            return FrameOutcome::Ignored;
        };
        let Ok(hello) = LocalHello::decode(&frame.payload) else {
            return FrameOutcome::Ignored;
        };
        let prover = match hello.verify(env.platform, &self.cfg.identity) {
            Ok(p) => p,
            Err(crate::netsim::ChannelError::BindingMismatch) => return FrameOutcome::Rejected(LibError::BindingMismatch),
            Err(_) => return FrameOutcome::Rejected(LibError::AttestationFailure),
        };
        if prover != self.cfg.me_identity {
            return FrameOutcome::Rejected(LibError::AttestationFailure);
        }
        let transcript = [mine.as_slice(), &frame.payload].concat();
        self.channel = Some(AttestedChannel::derive(0, eph, &hello.epk, &transcript, Role::Initiator, prover));
        self.pending_hello = None;
        FrameOutcome::ChannelEstablished
    }

    fn on_incoming(&mut self, body: &[u8], env: &mut EnclaveEnv<'_>) -> FrameOutcome {
        let Some(data) = MigrationData::decode(body) else {
            self.send_sealed(FrameKind::Error, &encode_error(ErrorCode::Malformed, None));
            return FrameOutcome::Rejected(LibError::MalformedBuffer);
        };
        match self.receive_incoming(&data, env) {
            Ok(()) => {
                let me = self.cfg.identity.mrenclave;
                self.send_sealed(FrameKind::Confirm, me.as_bytes());
                FrameOutcome::MigrationReceived
            }
            Err(e) => {
                let code = match e {
                    LibError::NotAwaiting => ErrorCode::NotAwaiting,
                    _ => ErrorCode::CounterLimitExceeded,
                };
                self.send_sealed(FrameKind::Error, &encode_error(code, Some(&self.cfg.identity.mrenclave)));
                FrameOutcome::Rejected(e)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sgx::{AttestationRoot, MachineId};
    use rand::SeedableRng;

    struct Fx {
        rng: SimRng,
        platform: PlatformState,
    }

    fn fx() -> Fx {
        let mut rng = SimRng::seed_from_u64(77);
        let root = AttestationRoot::generate(&mut rng);
        let platform = PlatformState::new(MachineId(1), &root, &mut rng);
        Fx { rng, platform }
    }

    fn cfg(mode: LibraryMode) -> LibraryConfig {
        LibraryConfig {
            identity: EnclaveIdentity::measure("app", "acme"),
            mode,
            address: Address::new(MachineId(1), 1),
            me_address: Address::me_of(MachineId(1)),
            me_identity: EnclaveIdentity::measure("me", "op"),
        }
    }

    fn lib(f: &mut Fx, mode: LibraryMode) -> MigrationLibrary {
        let mut env = EnclaveEnv { platform: &mut f.platform, rng: &mut f.rng };
        MigrationLibrary::init(cfg(mode), None, InitState::CreateNew, &mut env).unwrap()
    }

    #[test]
    fn create_new_is_clean_and_persists() {
        let mut f = fx();
        let mut l = lib(&mut f, LibraryMode::Full);
        assert!(l.internals().offsets.iter().all(|&o| o == 0));
        assert!(!l.internals().frozen);
        assert!(l.take_persisted_buffer().is_some());
        let out = l.take_outgoing();
        assert_eq!(out.len(), 1);
        assert_eq!(Frame::peek_kind(&out[0].1), Some(FrameKind::LocalHello));
    }

    #[test]
    fn reload_roundtrip_and_frozen_buffer() {
        let mut f = fx();
        let mut l = lib(&mut f, LibraryMode::Full);
        let mut env = EnclaveEnv { platform: &mut f.platform, rng: &mut f.rng };
        let (slot, _) = l.create_counter(&mut env).unwrap();
        l.increment_counter(slot, &mut env).unwrap();
        let buf = l.take_persisted_buffer().unwrap();
        let r = MigrationLibrary::init(cfg(LibraryMode::Full), Some(&buf), InitState::Reload, &mut env).unwrap();
        assert_eq!(r.internals(), l.internals());
        assert_eq!(r.read_counter(slot, &mut env), Ok(1));

        let mut frozen = l.internals().clone();
        frozen.frozen = true;
        let blob = env.platform.seal_data(
            &cfg(LibraryMode::Full).identity,
            SealKeyPolicy::ByMrenclave,
            &frozen.encode(),
            INTERNALS_AAD,
            env.rng,
        );
        let err = MigrationLibrary::init(cfg(LibraryMode::Full), Some(&blob.to_bytes()), InitState::Reload, &mut env)
            .unwrap_err();
        assert_eq!(err, LibError::FrozenBuffer);
    }

    #[test]
    fn reload_rejects_foreign_buffer() {
        let mut f = fx();
        let mut l = lib(&mut f, LibraryMode::Full);
        let buf = l.take_persisted_buffer().unwrap();
        let mut other = cfg(LibraryMode::Full);
        other.identity = EnclaveIdentity::measure("other", "acme");
        let mut env = EnclaveEnv { platform: &mut f.platform, rng: &mut f.rng };
        assert_eq!(
            MigrationLibrary::init(other, Some(&buf), InitState::Reload, &mut env).unwrap_err(),
            LibError::AuthFailure
        );
    }

    #[test]
    fn offsets_add_to_native() {
        let mut f = fx();
        let mut l = lib(&mut f, LibraryMode::Full);
        let mut env = EnclaveEnv { platform: &mut f.platform, rng: &mut f.rng };
        let (s, v) = l.create_counter(&mut env).unwrap();
        assert_eq!((s, v), (CounterSlot(0), 0));
        l.increment_counter(s, &mut env).unwrap();
        l.increment_counter(s, &mut env).unwrap();
        l.internals.offsets[0] = 5;
        assert_eq!(l.read_counter(s, &mut env), Ok(7));
    }

    #[test]
    fn increment_overflow_checked_first() {
        let mut f = fx();
        let mut l = lib(&mut f, LibraryMode::Full);
        let mut env = EnclaveEnv { platform: &mut f.platform, rng: &mut f.rng };
        let (s, _) = l.create_counter(&mut env).unwrap();
        l.internals.offsets[0] = u32::MAX;
        assert_eq!(l.increment_counter(s, &mut env), Err(LibError::CounterOverflow));
        l.internals.offsets[0] = 0;
        assert_eq!(l.read_counter(s, &mut env), Ok(0));
    }

    #[test]
    fn slot_reuse_after_destroy() {
        let mut f = fx();
        let mut l = lib(&mut f, LibraryMode::Full);
        let mut env = EnclaveEnv { platform: &mut f.platform, rng: &mut f.rng };
        let slots: Vec<_> = (0..5).map(|_| l.create_counter(&mut env).unwrap().0).collect();
        let old = l.internals().uuids[3].unwrap();
        l.destroy_counter(slots[3], &mut env).unwrap();
        assert_eq!(l.read_counter(slots[3], &mut env), Err(LibError::CounterNotFound));
        assert_eq!(l.destroy_counter(slots[3], &mut env), Err(LibError::CounterNotFound));
        let (again, v) = l.create_counter(&mut env).unwrap();
        assert_eq!((again, v), (CounterSlot(3), 0));
        assert!(l.internals().uuids[3].unwrap().counter_id > old.counter_id);
    }

    #[test]
    fn out_of_band_destroy_is_reported_regardless_of_offset() {
        let mut f = fx();
        let mut l = lib(&mut f, LibraryMode::Full);
        let mut env = EnclaveEnv { platform: &mut f.platform, rng: &mut f.rng };
        let (s, _) = l.create_counter(&mut env).unwrap();
        l.internals.offsets[0] = 40;
        let uuid = l.internals().uuids[0].unwrap();
        env.platform.mc_destroy(&cfg(LibraryMode::Full).identity, &uuid).unwrap();
        assert_eq!(l.read_counter(s, &mut env), Err(LibError::CounterNotFound));
    }

    #[test]
    fn migratable_blob_is_not_native() {
        let mut f = fx();
        let l = lib(&mut f, LibraryMode::Full);
        let blob = l.seal_migratable(b"v", b"ad", &mut f.rng).unwrap();
        assert_eq!(l.unseal_migratable(&blob).unwrap(), (b"v".to_vec(), b"ad".to_vec()));
        assert_eq!(f.platform.unseal_data(&cfg(LibraryMode::Full).identity, &blob), Err(SgxError::AuthFailure));
        let native = f.platform.seal_data(&cfg(LibraryMode::Full).identity, SealKeyPolicy::ByMrenclave, b"v", b"ad", &mut f.rng);
        assert_eq!(l.unseal_migratable(&native), Err(LibError::AuthFailure));
    }

    #[test]
    fn migration_start_requires_channel() {
        let mut f = fx();
        let mut l = lib(&mut f, LibraryMode::Full);
        let mut env = EnclaveEnv { platform: &mut f.platform, rng: &mut f.rng };
        assert_eq!(
            l.migration_start(Address::me_of(MachineId(2)), &mut env),
            Err(LibError::ChannelFailure)
        );
        assert_eq!(l.phase(), Phase::Operating);
    }

    #[test]
    fn receive_incoming_installs_offsets_and_rolls_back_on_limit() {
        let mut f = fx();
        let mut env = EnclaveEnv { platform: &mut f.platform, rng: &mut f.rng };
        let mut l = MigrationLibrary::init(cfg(LibraryMode::Full), None, InitState::AwaitIncoming, &mut env).unwrap();
        assert_eq!(l.read_counter(CounterSlot(0), &mut env), Err(LibError::AwaitingMigration));
        let mut d = MigrationData::empty(Key128::from_bytes([5; 16]));
        d.active[2] = true;
        d.values[2] = 7;
        let before = env.platform.counter_stats();
        l.receive_incoming(&d, &mut env).unwrap();
        let delta = env.platform.counter_stats() - before;
        assert_eq!((delta.creates, delta.increments), (1, 0));
        assert_eq!(l.read_counter(CounterSlot(2), &mut env), Ok(7));
        assert_eq!(l.msk(), Key128::from_bytes([5; 16]));
        assert_eq!(l.receive_incoming(&d, &mut env), Err(LibError::NotAwaiting));

        // A destination that cannot host every counter refuses and leaves no counters behind.
        let mut busy = cfg(LibraryMode::Full);
        busy.identity = EnclaveIdentity::measure("busy", "acme");
        for _ in 0..250 {
            env.platform.mc_create(&busy.identity, env.rng).unwrap();
        }
        let mut full = MigrationData::empty(Key128::from_bytes([6; 16]));
        for i in 0..10 {
            full.active[i] = true;
        }
        let mut b = MigrationLibrary::init(busy, None, InitState::AwaitIncoming, &mut env).unwrap();
        assert_eq!(b.receive_incoming(&full, &mut env), Err(LibError::CounterLimitExceeded));
        assert_eq!(b.phase(), Phase::Awaiting);
        for _ in 0..6 {
            env.platform.mc_create(&busy.identity, env.rng).unwrap();
        }
    }
}
