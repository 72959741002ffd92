// SPDX-License-Identifier: Apache-2.0

//! The per-machine Migration Enclave.
//!
//! Local side: libraries attest with a LOCAL_HELLO; the ME records the
//! attested MRENCLAVE of each session and accepts MIGRATE_REQUEST frames over
//! the resulting channel.
//!
//! Remote side, initiator `A` (source) and responder `B` (destination):
//!
//! ```text
//! A -> B  QUOTE_EXCHANGE  sid || quote_A || epk_A
//! B -> A  QUOTE_EXCHANGE  sid || quote_B || epk_B
//! A -> B  TRANSCRIPT_SIG  sealed: cert_A || sig_A(transcript)
//! B -> A  TRANSCRIPT_SIG  sealed: cert_B || sig_B(transcript)
//! A -> B  MIGRATION_RECORD sealed: source_mrenclave || migration data
//! B -> A  CONFIRM         sealed: source_mrenclave   (after the library confirms)
//! ```
//!
//! `transcript = quote_A || quote_B || epk_A || epk_B`. Each side checks that
//! the peer quote attests the ME's own MRENCLAVE and that the peer
//! certificate comes from its own operator. The session id `sid` is chosen by
//! the initiator and appears in the nonce of every sealed frame.
//!
//! The ME is a pure state machine: frames out, persisted records and events
//! accumulate in outboxes the host drains.

pub mod credential;
pub mod record;

pub use credential::{DataCenterCredential, Operator, OperatorCertificate};
pub use record::{MigrationRecord, RecordState, RecordTable};

use crate::crypto::SimRng;
use crate::migration_lib::MigrationData;
use crate::netsim::channel::{AttestedChannel, ChannelError, Ephemeral, Frame, FrameKind, LocalHello, RemoteHello, Role};
use crate::netsim::Address;
use crate::protocol::{decode_error, encode_error, ErrorCode};
use crate::sgx::{EnclaveIdentity, Measurement, PlatformState, Quote, SealKeyPolicy, SealedBlob};
use ed25519_dalek::VerifyingKey;
use rand::RngCore;
use std::collections::BTreeMap;
use std::fmt;

const RECORDS_AAD: &[u8] = b"migration-enclave records v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MeError {
    #[error("credential already provisioned")]
    AlreadyProvisioned,
    #[error("no credential provisioned")]
    NotProvisioned,
    #[error("no migration record for that enclave")]
    NoSuchRecord,
    #[error("record is not pending and cannot be retried")]
    NotRetryable,
    #[error("persisted records could not be recovered")]
    CorruptRecords,
}

/// Observable ME activity, logged by the host and used by test oracles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MeEvent {
    LocalSession { addr: Address, peer: Measurement },
    LocalAttestRejected { addr: Address, code: ErrorCode },
    RequestRejected { source: Measurement, code: ErrorCode },
    RecordCreated { source: Measurement, destination: Address },
    RemoteRejected { peer: Address, code: ErrorCode },
    RecordSent { source: Measurement, peer: Address },
    RecordRetained { source: Measurement, code: ErrorCode },
    RecordBuffered { source: Measurement, from: Address },
    /// Migration data decrypted and forwarded to a local session.
    Forwarded { source: Measurement, session_peer: Measurement, to: Address },
    DeliveryConfirmed { source: Measurement },
    DeliveryFailed { source: Measurement, code: ErrorCode },
    MigrationConfirmed { source: Measurement },
    ReplayRejected { from: Address, kind: FrameKind },
    Dropped { from: Address, kind: FrameKind, reason: &'static str },
}

impl fmt::Display for MeEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LocalSession { addr, peer } => write!(f, "local-session {addr} peer={}", peer.short()),
            Self::LocalAttestRejected { addr, code } => write!(f, "local-attest-rejected {addr} {code}"),
            Self::RequestRejected { source, code } => write!(f, "request-rejected {} {code}", source.short()),
            Self::RecordCreated { source, destination } => {
                write!(f, "record-created {} dest={destination}", source.short())
            }
            Self::RemoteRejected { peer, code } => write!(f, "remote-rejected peer={peer} {code}"),
            Self::RecordSent { source, peer } => write!(f, "record-sent {} to={peer}", source.short()),
            Self::RecordRetained { source, code } => write!(f, "record-retained {} {code}", source.short()),
            Self::RecordBuffered { source, from } => write!(f, "record-buffered {} from={from}", source.short()),
            Self::Forwarded { source, session_peer, to } => {
                write!(f, "forwarded {} to={to} session-peer={}", source.short(), session_peer.short())
            }
            Self::DeliveryConfirmed { source } => write!(f, "delivery-confirmed {}", source.short()),
            Self::DeliveryFailed { source, code } => write!(f, "delivery-failed {} {code}", source.short()),
            Self::MigrationConfirmed { source } => write!(f, "migration-confirmed {}", source.short()),
            Self::ReplayRejected { from, kind } => write!(f, "replay-rejected from={from} {kind}"),
            Self::Dropped { from, kind, reason } => write!(f, "dropped from={from} {kind}: {reason}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeConfig {
    pub identity: EnclaveIdentity,
    pub address: Address,
    pub attestation_root: VerifyingKey,
    /// A genuine ME enforces the peer-identity and operator checks. A
    /// modified build skips them.
    pub enforce_peer_checks: bool,
}

struct LocalSession {
    channel: AttestedChannel,
    peer: EnclaveIdentity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RemoteState {
    AwaitingQuote,
    AwaitingSig,
    Authenticated,
}

struct RemoteSession {
    role: Role,
    state: RemoteState,
    eph: Option<Ephemeral>,
    my_hello: Vec<u8>,
    channel: Option<AttestedChannel>,
    transcript: Vec<u8>,
    /// Outgoing record this session carries (initiator only).
    record_for: Option<Measurement>,
}

type SessionKey = (Address, u32);

pub struct MigrationEnclave {
    cfg: MeConfig,
    credential: Option<DataCenterCredential>,
    local: BTreeMap<Address, LocalSession>,
    remote: BTreeMap<SessionKey, RemoteSession>,
    records: RecordTable,
    /// Local session each forwarded incoming record went to.
    forwarded_to: BTreeMap<Measurement, Address>,
    /// Remote session each incoming record arrived on, for relaying.
    arrived_on: BTreeMap<Measurement, SessionKey>,
    persisted: Option<Vec<u8>>,
    outgoing: Vec<(Address, Vec<u8>)>,
    events: Vec<MeEvent>,
}

impl fmt::Debug for MigrationEnclave {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MigrationEnclave")
            .field("address", &self.cfg.address)
            .field("provisioned", &self.credential.is_some())
            .field("local_sessions", &self.local.len())
            .field("remote_sessions", &self.remote.len())
            .finish()
    }
}

/// The machine an ME runs on.
pub struct MeEnv<'a> {
    pub platform: &'a PlatformState,
    pub rng: &'a mut SimRng,
}

impl MigrationEnclave {
    pub fn new(cfg: MeConfig) -> Self {
        Self {
            cfg,
            credential: None,
            local: BTreeMap::new(),
            remote: BTreeMap::new(),
            records: RecordTable::default(),
            forwarded_to: BTreeMap::new(),
            arrived_on: BTreeMap::new(),
            persisted: None,
            outgoing: Vec::new(),
            events: Vec::new(),
        }
    }

    /// Starts an ME from its sealed record store, as after a crash. Sessions
    /// are not recovered.
    pub fn recover(cfg: MeConfig, sealed: Option<&[u8]>, platform: &PlatformState) -> Result<Self, MeError> {
        let mut me = Self::new(cfg);
        if let Some(bytes) = sealed {
            let blob = SealedBlob::from_bytes(bytes).map_err(|_| MeError::CorruptRecords)?;
            let (pt, aad) = platform.unseal_data(&cfg.identity, &blob).map_err(|_| MeError::CorruptRecords)?;
            if aad != RECORDS_AAD {
                return Err(MeError::CorruptRecords);
            }
            me.records = RecordTable::decode(&pt).ok_or(MeError::CorruptRecords)?;
        }
        Ok(me)
    }

    pub fn setup(&mut self, credential: DataCenterCredential) -> Result<(), MeError> {
        if self.credential.is_some() {
            return Err(MeError::AlreadyProvisioned);
        }
        self.credential = Some(credential);
        Ok(())
    }

    pub fn identity(&self) -> &EnclaveIdentity {
        &self.cfg.identity
    }

    pub fn address(&self) -> Address {
        self.cfg.address
    }

    pub fn records(&self) -> &RecordTable {
        &self.records
    }

    pub fn outgoing_record(&self, source: &Measurement) -> Option<&MigrationRecord> {
        self.records.outgoing.get(source)
    }

    pub fn incoming_record(&self, source: &Measurement) -> Option<&MigrationRecord> {
        self.records.incoming.get(source)
    }

    pub fn local_peer(&self, addr: &Address) -> Option<Measurement> {
        self.local.get(addr).map(|s| s.peer.mrenclave)
    }

    pub fn take_persisted(&mut self) -> Option<Vec<u8>> {
        self.persisted.take()
    }

    pub fn take_outgoing(&mut self) -> Vec<(Address, Vec<u8>)> {
        std::mem::take(&mut self.outgoing)
    }

    pub fn take_events(&mut self) -> Vec<MeEvent> {
        std::mem::take(&mut self.events)
    }

    /// Forgets a local session whose endpoint has gone away.
    pub fn endpoint_closed(&mut self, addr: &Address) {
        self.local.remove(addr);
    }

    fn persist(&mut self, env: &mut MeEnv<'_>) {
        let blob = env.platform.seal_data(
            &self.cfg.identity,
            SealKeyPolicy::ByMrenclave,
            &self.records.encode(),
            RECORDS_AAD,
            env.rng,
        );
        self.persisted = Some(blob.to_bytes());
    }

    fn send_plain(&mut self, to: Address, kind: FrameKind, payload: Vec<u8>) {
        self.outgoing.push((to, Frame::new(kind, payload).encode()));
    }

    fn send_local(&mut self, to: Address, kind: FrameKind, body: &[u8]) {
        if let Some(s) = self.local.get_mut(&to) {
            let wire = s.channel.seal_frame(kind, body);
            self.outgoing.push((to, wire));
        }
    }

    fn send_remote(&mut self, key: SessionKey, kind: FrameKind, body: &[u8]) {
        if let Some(ch) = self.remote.get_mut(&key).and_then(|s| s.channel.as_mut()) {
            let wire = ch.seal_frame(kind, body);
            self.outgoing.push((key.0, wire));
        }
    }

    /// Re-sends a pending record, optionally to a new destination ME.
    pub fn retry(&mut self, source: &Measurement, destination: Option<Address>, env: &mut MeEnv<'_>) -> Result<(), MeError> {
        if self.credential.is_none() {
            return Err(MeError::NotProvisioned);
        }
        let rec = self.records.outgoing.get_mut(source).ok_or(MeError::NoSuchRecord)?;
        if rec.state != RecordState::PendingSend {
            return Err(MeError::NotRetryable);
        }
        if let Some(d) = destination {
            rec.peer_me = d;
        }
        self.persist(env);
        self.start_send(*source, env);
        Ok(())
    }

    fn start_send(&mut self, source: Measurement, env: &mut MeEnv<'_>) {
        let dest = self.records.outgoing[&source].peer_me;
        // Abandon any earlier handshake for this record.
        self.remote.retain(|_, s| s.record_for != Some(source));
        let sid = env.rng.next_u32();
        let eph = Ephemeral::generate(env.rng);
        let hello = RemoteHello::create(env.platform, &self.cfg.identity, &eph).encode();
        let mut payload = sid.to_be_bytes().to_vec();
        payload.extend_from_slice(&hello);
        self.send_plain(dest, FrameKind::QuoteExchange, payload);
        self.remote.insert(
            (dest, sid),
            RemoteSession {
                role: Role::Initiator,
                state: RemoteState::AwaitingQuote,
                eph: Some(eph),
                my_hello: hello,
                channel: None,
                transcript: Vec::new(),
                record_for: Some(source),
            },
        );
    }

    fn retain(&mut self, source: Measurement, code: ErrorCode, env: &mut MeEnv<'_>) {
        if let Some(rec) = self.records.outgoing.get_mut(&source) {
            rec.state = RecordState::PendingSend;
            rec.last_error = Some(code);
            self.persist(env);
            self.events.push(MeEvent::RecordRetained { source, code });
        }
    }

    /// Processes one inbound frame.
    pub fn handle_frame(&mut self, from: Address, bytes: &[u8], env: &mut MeEnv<'_>) {
        let Ok(frame) = Frame::decode(bytes) else {
            return;
        };
        if from.machine == self.cfg.address.machine {
            self.handle_local(from, frame, env);
        } else {
            self.handle_remote(from, frame, env);
        }
    }

    // ---- local side ------------------------------------------------------------

    fn handle_local(&mut self, from: Address, frame: Frame, env: &mut MeEnv<'_>) {
        if frame.kind == FrameKind::LocalHello {
            return self.on_local_hello(from, &frame, env);
        }
        let Some(session) = self.local.get_mut(&from) else {
            self.events.push(MeEvent::Dropped { from, kind: frame.kind, reason: "no session" });
            return;
        };
        let body = match session.channel.open_frame(&frame) {
            Ok(b) => b,
            Err(ChannelError::Replay(_)) => {
                self.events.push(MeEvent::ReplayRejected { from, kind: frame.kind });
                return;
            }
            Err(_) => {
                self.events.push(MeEvent::Dropped { from, kind: frame.kind, reason: "authentication" });
                return;
            }
        };
        let peer = session.peer.mrenclave;
        match frame.kind {
            FrameKind::MigrateRequest => self.on_migrate_request(from, peer, &body, env),
            FrameKind::Confirm => self.on_library_confirm(from, peer, env),
            FrameKind::Error => self.on_library_error(from, peer, &body, env),
            kind => self.events.push(MeEvent::Dropped { from, kind, reason: "unexpected" }),
        }
    }

    fn on_local_hello(&mut self, from: Address, frame: &Frame, env: &mut MeEnv<'_>) {
        let hello = match LocalHello::decode(&frame.payload) {
            Ok(h) => h,
            Err(_) => {
                self.events.push(MeEvent::LocalAttestRejected { addr: from, code: ErrorCode::Malformed });
                return;
            }
        };
        let prover = match hello.verify(env.platform, &self.cfg.identity) {
            Ok(p) => p,
            Err(e) => {
                let code = match e {
                    ChannelError::BindingMismatch => ErrorCode::BindingMismatch,
                    _ => ErrorCode::AttestationFailure,
                };
                self.events.push(MeEvent::LocalAttestRejected { addr: from, code });
                return;
            }
        };
        let eph = Ephemeral::generate(env.rng);
        let reply = LocalHello::create(env.platform, &self.cfg.identity, &prover, &eph).encode();
        let transcript = [frame.payload.as_slice(), &reply].concat();
        let channel = AttestedChannel::derive(0, &eph, &hello.epk, &transcript, Role::Responder, prover);
        self.send_plain(from, FrameKind::LocalHello, reply);
        self.local.insert(from, LocalSession { channel, peer: prover });
        self.events.push(MeEvent::LocalSession { addr: from, peer: prover.mrenclave });
        self.try_deliver(prover.mrenclave, env);
    }

    fn on_migrate_request(&mut self, from: Address, source: Measurement, body: &[u8], env: &mut MeEnv<'_>) {
        let reject = |me: &mut Self, code: ErrorCode| {
            me.send_local(from, FrameKind::Error, &encode_error(code, Some(&source)));
            me.events.push(MeEvent::RequestRejected { source, code });
        };
        if self.credential.is_none() {
            return reject(self, ErrorCode::NotProvisioned);
        }
        if body.len() != Address::ENCODED_LEN + MigrationData::ENCODED_LEN {
            return reject(self, ErrorCode::Malformed);
        }
        let (Some(destination), Some(data)) = (
            Address::decode(&body[..Address::ENCODED_LEN]),
            MigrationData::decode(&body[Address::ENCODED_LEN..]),
        ) else {
            return reject(self, ErrorCode::Malformed);
        };
        if self.records.outgoing.get(&source).is_some_and(|r| r.state == RecordState::AwaitingConfirm) {
            return reject(self, ErrorCode::Busy);
        }
        // The record is keyed by the attested identity of the session, never
        // by anything the request claims.
        self.records.outgoing.insert(
            source,
            MigrationRecord {
                data,
                source_mrenclave: source,
                peer_me: destination,
                state: RecordState::PendingSend,
                last_error: None,
            },
        );
        self.persist(env);
        self.events.push(MeEvent::RecordCreated { source, destination });
        self.start_send(source, env);
    }

    fn on_library_confirm(&mut self, from: Address, peer: Measurement, env: &mut MeEnv<'_>) {
        if self.forwarded_to.get(&peer) != Some(&from) {
            self.events.push(MeEvent::Dropped { from, kind: FrameKind::Confirm, reason: "nothing forwarded" });
            return;
        }
        self.forwarded_to.remove(&peer);
        self.records.incoming.remove(&peer);
        self.persist(env);
        self.events.push(MeEvent::DeliveryConfirmed { source: peer });
        if let Some(key) = self.arrived_on.remove(&peer) {
            self.send_remote(key, FrameKind::Confirm, peer.as_bytes());
        }
    }

    fn on_library_error(&mut self, from: Address, peer: Measurement, body: &[u8], env: &mut MeEnv<'_>) {
        let Some((code, _)) = decode_error(body) else {
            return;
        };
        if self.forwarded_to.get(&peer) != Some(&from) {
            return;
        }
        self.forwarded_to.remove(&peer);
        self.events.push(MeEvent::DeliveryFailed { source: peer, code });
        if code == ErrorCode::NotAwaiting {
            // Nothing was installed; keep the record for an awaiting instance.
            if let Some(r) = self.records.incoming.get_mut(&peer) {
                r.state = RecordState::BufferedIncoming;
            }
            self.persist(env);
            return;
        }
        self.records.incoming.remove(&peer);
        self.persist(env);
        if let Some(key) = self.arrived_on.remove(&peer) {
            self.send_remote(key, FrameKind::Error, &encode_error(code, Some(&peer)));
        }
    }

    /// Forwards a buffered record to a live local session with the same
    /// attested MRENCLAVE, if there is one.
    fn try_deliver(&mut self, source: Measurement, env: &mut MeEnv<'_>) {
        let Some(rec) = self.records.incoming.get(&source) else {
            return;
        };
        if rec.state != RecordState::BufferedIncoming {
            return;
        }
        let Some(addr) = self.local.iter().find(|(_, s)| s.peer.mrenclave == source).map(|(a, _)| *a) else {
            return;
        };
        let body = rec.data.encode();
        let session_peer = self.local[&addr].peer.mrenclave;
        self.send_local(addr, FrameKind::IncomingData, &body);
        self.records.incoming.get_mut(&source).expect("present").state = RecordState::Forwarded;
        self.forwarded_to.insert(source, addr);
        self.persist(env);
        self.events.push(MeEvent::Forwarded { source, session_peer, to: addr });
    }

    // ---- remote side -----------------------------------------------------------

    fn handle_remote(&mut self, from: Address, frame: Frame, env: &mut MeEnv<'_>) {
        match frame.kind {
            FrameKind::QuoteExchange => self.on_quote_exchange(from, &frame, env),
            FrameKind::Error if frame.payload.len() == 1 => self.on_handshake_error(from, frame.payload[0], env),
            FrameKind::TranscriptSig | FrameKind::MigrationRecord | FrameKind::Confirm | FrameKind::Error => {
                let Some(sid) = AttestedChannel::id_of(&frame) else {
                    return;
                };
                let key = (from, sid);
                let Some(ch) = self.remote.get_mut(&key).and_then(|s| s.channel.as_mut()) else {
                    self.events.push(MeEvent::Dropped { from, kind: frame.kind, reason: "no session" });
                    return;
                };
                match ch.open_frame(&frame) {
                    Ok(body) => self.on_remote_sealed(key, frame.kind, &body, env),
                    Err(ChannelError::Replay(_)) => self.events.push(MeEvent::ReplayRejected { from, kind: frame.kind }),
                    Err(_) => self.events.push(MeEvent::Dropped { from, kind: frame.kind, reason: "authentication" }),
                }
            }
            kind => self.events.push(MeEvent::Dropped { from, kind, reason: "unexpected" }),
        }
    }

    fn check_peer_quote(&self, hello: &RemoteHello) -> Result<(), ErrorCode> {
        let prover = hello.verify(&self.cfg.attestation_root).map_err(|e| match e {
            ChannelError::BindingMismatch => ErrorCode::BindingMismatch,
            _ => ErrorCode::QuoteInvalid,
        })?;
        if self.cfg.enforce_peer_checks && prover != self.cfg.identity {
            return Err(ErrorCode::PeerIdentityMismatch);
        }
        Ok(())
    }

    fn on_quote_exchange(&mut self, from: Address, frame: &Frame, env: &mut MeEnv<'_>) {
        let p = &frame.payload;
        if p.len() != 4 + Quote::ENCODED_LEN + 32 {
            return;
        }
        let sid = u32::from_be_bytes(p[..4].try_into().expect("4 bytes"));
        let Ok(hello) = RemoteHello::decode(&p[4..]) else {
            return;
        };
        let key = (from, sid);
        let initiator_waiting = self
            .remote
            .get(&key)
            .is_some_and(|s| s.role == Role::Initiator && s.state == RemoteState::AwaitingQuote);
        if initiator_waiting {
            self.initiator_got_quote(key, &p[4..], hello, env);
        } else if !self.remote.contains_key(&key) {
            self.responder_got_quote(key, &p[4..], hello, env);
        }
    }

    fn responder_got_quote(&mut self, key: SessionKey, their: &[u8], hello: RemoteHello, env: &mut MeEnv<'_>) {
        let verdict = if self.credential.is_none() { Err(ErrorCode::NotProvisioned) } else { self.check_peer_quote(&hello) };
        if let Err(code) = verdict {
            self.events.push(MeEvent::RemoteRejected { peer: key.0, code });
            self.send_plain(key.0, FrameKind::Error, vec![code as u8]);
            return;
        }
        let eph = Ephemeral::generate(env.rng);
        let mine = RemoteHello::create(env.platform, &self.cfg.identity, &eph);
        let mine_bytes = mine.encode();
        let transcript = sig_transcript(&hello, &mine);
        let channel = AttestedChannel::derive(
            key.1,
            &eph,
            &hello.epk,
            &[their, mine_bytes.as_slice()].concat(),
            Role::Responder,
            hello.quote.prover,
        );
        let mut payload = key.1.to_be_bytes().to_vec();
        payload.extend_from_slice(&mine_bytes);
        self.send_plain(key.0, FrameKind::QuoteExchange, payload);
        self.remote.insert(
            key,
            RemoteSession {
                role: Role::Responder,
                state: RemoteState::AwaitingSig,
                eph: None,
                my_hello: mine_bytes,
                channel: Some(channel),
                transcript,
                record_for: None,
            },
        );
    }

    fn initiator_got_quote(&mut self, key: SessionKey, their: &[u8], hello: RemoteHello, env: &mut MeEnv<'_>) {
        let source = self.remote[&key].record_for.expect("initiator carries a record");
        if let Err(code) = self.check_peer_quote(&hello) {
            self.remote.remove(&key);
            self.events.push(MeEvent::RemoteRejected { peer: key.0, code });
            return self.retain(source, code, env);
        }
        let session = self.remote.get_mut(&key).expect("present");
        let eph = session.eph.take().expect("initiator keeps its ephemeral");
        let mine = RemoteHello::decode(&session.my_hello).expect("own hello decodes");
        session.transcript = sig_transcript(&mine, &hello);
        session.channel = Some(AttestedChannel::derive(
            key.1,
            &eph,
            &hello.epk,
            &[session.my_hello.as_slice(), their].concat(),
            Role::Initiator,
            hello.quote.prover,
        ));
        session.state = RemoteState::AwaitingSig;
        let sig = self.credential.as_ref().expect("provisioned").sign_transcript(&session.transcript);
        self.send_remote(key, FrameKind::TranscriptSig, &sig);
    }

    fn on_handshake_error(&mut self, from: Address, code: u8, env: &mut MeEnv<'_>) {
        let code = ErrorCode::from_u8(code).unwrap_or(ErrorCode::Malformed);
        let aborted: Vec<_> = self
            .remote
            .iter()
            .filter(|((peer, _), s)| *peer == from && s.role == Role::Initiator && s.state == RemoteState::AwaitingQuote)
            .map(|(k, s)| (*k, s.record_for))
            .collect();
        for (key, source) in aborted {
            self.remote.remove(&key);
            self.events.push(MeEvent::RemoteRejected { peer: from, code });
            if let Some(s) = source {
                self.retain(s, code, env);
            }
        }
    }

    fn on_remote_sealed(&mut self, key: SessionKey, kind: FrameKind, body: &[u8], env: &mut MeEnv<'_>) {
        let (role, state, record_for) = {
            let s = &self.remote[&key];
            (s.role, s.state, s.record_for)
        };
        match (kind, role, state) {
            (FrameKind::TranscriptSig, _, RemoteState::AwaitingSig) => {
                let cred = self.credential.as_ref().expect("provisioned before any handshake");
                let ok = !self.cfg.enforce_peer_checks || cred.verify_peer(body, &self.remote[&key].transcript);
                if !ok {
                    self.events.push(MeEvent::RemoteRejected { peer: key.0, code: ErrorCode::OperatorMismatch });
                    if role == Role::Responder {
                        self.send_remote(key, FrameKind::Error, &[ErrorCode::OperatorMismatch as u8]);
                    }
                    self.remote.remove(&key);
                    if let Some(s) = record_for {
                        self.retain(s, ErrorCode::OperatorMismatch, env);
                    }
                    return;
                }
                self.remote.get_mut(&key).expect("present").state = RemoteState::Authenticated;
                match role {
                    Role::Responder => {
                        let sig = cred.sign_transcript(&self.remote[&key].transcript);
                        self.send_remote(key, FrameKind::TranscriptSig, &sig);
                    }
                    Role::Initiator => {
                        let source = record_for.expect("initiator carries a record");
                        let Some(rec) = self.records.outgoing.get_mut(&source) else {
                            return;
                        };
                        let mut msg = source.as_bytes().to_vec();
                        msg.extend_from_slice(&rec.data.encode());
                        rec.state = RecordState::AwaitingConfirm;
                        rec.last_error = None;
                        self.send_remote(key, FrameKind::MigrationRecord, &msg);
                        self.persist(env);
                        self.events.push(MeEvent::RecordSent { source, peer: key.0 });
                    }
                }
            }
            (FrameKind::MigrationRecord, Role::Responder, RemoteState::Authenticated) => {
                if body.len() != 32 + MigrationData::ENCODED_LEN {
                    return;
                }
                let source = Measurement(body[..32].try_into().expect("32 bytes"));
                let Some(data) = MigrationData::decode(&body[32..]) else {
                    return;
                };
                if self.records.incoming.get(&source).is_some_and(|r| r.state == RecordState::Forwarded) {
                    self.events.push(MeEvent::Dropped { from: key.0, kind, reason: "record already forwarded" });
                    return;
                }
                self.records.incoming.insert(
                    source,
                    MigrationRecord {
                        data,
                        source_mrenclave: source,
                        peer_me: key.0,
                        state: RecordState::BufferedIncoming,
                        last_error: None,
                    },
                );
                self.arrived_on.insert(source, key);
                self.persist(env);
                self.events.push(MeEvent::RecordBuffered { source, from: key.0 });
                self.try_deliver(source, env);
            }
            (FrameKind::Confirm, Role::Initiator, RemoteState::Authenticated) => {
                let Ok(source) = <[u8; 32]>::try_from(body).map(Measurement) else {
                    return;
                };
                if record_for != Some(source) {
                    return;
                }
                if self.records.outgoing.get(&source).is_some_and(|r| r.state == RecordState::AwaitingConfirm) {
                    self.records.outgoing.remove(&source);
                    self.remote.remove(&key);
                    self.persist(env);
                    self.events.push(MeEvent::MigrationConfirmed { source });
                }
            }
            (FrameKind::Error, Role::Initiator, _) => {
                let Some((code, about)) = decode_error(body) else {
                    return;
                };
                let source = about.or(record_for);
                self.remote.remove(&key);
                self.events.push(MeEvent::RemoteRejected { peer: key.0, code });
                if let Some(s) = source.filter(|s| Some(*s) == record_for) {
                    self.retain(s, code, env);
                }
            }
            _ => self.events.push(MeEvent::Dropped { from: key.0, kind, reason: "unexpected in state" }),
        }
    }
}

/// `quote_A || quote_B || epk_A || epk_B`, initiator first.
fn sig_transcript(initiator: &RemoteHello, responder: &RemoteHello) -> Vec<u8> {
    [
        initiator.quote.encode(),
        responder.quote.encode(),
        initiator.epk.to_vec(),
        responder.epk.to_vec(),
    ]
    .concat()
}
