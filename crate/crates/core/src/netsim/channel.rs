// SPDX-License-Identifier: Apache-2.0

//! Frames and attestation-bound secure channels.
//!
//! Every message is a frame: `length (4, BE) || kind (1) || payload`, where
//! `length` counts payload bytes. Handshake frames carry a report or quote
//! whose `report_data` commits to the sender's ephemeral X25519 key:
//! `report_data = SHA-256("ka-bind" || epk) || 0^32`.
//!
//! After the handshake, frames are sealed with AES-128-GCM under directional
//! keys. The payload is `nonce (12) || ciphertext || tag (16)` with
//! `nonce = channel_id (4, BE) || seq (8, BE)`, and the plaintext starts with
//! the same 8-byte sequence number. The receiver
//! accepts only strictly increasing sequence numbers, so a replayed or
//! duplicated frame never yields a second delivery.

use crate::crypto::{aead_open, aead_seal, sha256, Key128, Reader, SimRng, NONCE_LEN, TAG_LEN};
use crate::sgx::{
    verify_quote, EnclaveIdentity, PlatformState, Quote, Report, ReportData, SgxError,
};
use ed25519_dalek::VerifyingKey;
use hkdf::Hkdf;
use sha2::Sha256;
use std::fmt;
use x25519_dalek::{PublicKey, StaticSecret};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum FrameKind {
    QuoteExchange = 0x01,
    TranscriptSig = 0x02,
    MigrationRecord = 0x03,
    Confirm = 0x04,
    Error = 0x05,
    LocalHello = 0x10,
    MigrateRequest = 0x11,
    IncomingData = 0x12,
}

impl FrameKind {
    pub fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            0x01 => Self::QuoteExchange,
            0x02 => Self::TranscriptSig,
            0x03 => Self::MigrationRecord,
            0x04 => Self::Confirm,
            0x05 => Self::Error,
            0x10 => Self::LocalHello,
            0x11 => Self::MigrateRequest,
            0x12 => Self::IncomingData,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::QuoteExchange => "QUOTE_EXCHANGE",
            Self::TranscriptSig => "TRANSCRIPT_SIG",
            Self::MigrationRecord => "MIGRATION_RECORD",
            Self::Confirm => "CONFIRM",
            Self::Error => "ERROR",
            Self::LocalHello => "LOCAL_HELLO",
            Self::MigrateRequest => "MIGRATE_REQUEST",
            Self::IncomingData => "INCOMING_DATA",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            Self::QuoteExchange,
            Self::TranscriptSig,
            Self::MigrationRecord,
            Self::Confirm,
            Self::Error,
            Self::LocalHello,
            Self::MigrateRequest,
            Self::IncomingData,
        ]
        .into_iter()
        .find(|k| k.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameKind,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameKind, payload: Vec<u8>) -> Self {
        Self { kind, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.payload.len());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ChannelError> {
        let mut r = Reader::new(bytes);
        let len = r.u32().ok_or(ChannelError::Malformed)? as usize;
        let kind = FrameKind::from_u8(r.u8().ok_or(ChannelError::Malformed)?).ok_or(ChannelError::Malformed)?;
        let payload = r.take(len).ok_or(ChannelError::Malformed)?.to_vec();
        if !r.is_empty() {
            return Err(ChannelError::Malformed);
        }
        Ok(Self { kind, payload })
    }

    /// Frame kind of an encoded frame without decoding the payload.
    pub fn peek_kind(bytes: &[u8]) -> Option<FrameKind> {
        bytes.get(4).copied().and_then(FrameKind::from_u8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ChannelError {
    #[error("attestation failure")]
    AttestationFailure,
    #[error("report data does not bind the key-agreement message")]
    BindingMismatch,
    #[error("quote invalid")]
    QuoteInvalid,
    #[error("frame failed authentication")]
    AuthFailure,
    #[error("replayed or out-of-order frame (seq {0})")]
    Replay(u64),
    #[error("malformed frame")]
    Malformed,
}

/// Report data committing to an ephemeral public key.
pub fn binding_report_data(epk: &[u8; 32]) -> ReportData {
    let mut rd = [0u8; 64];
    rd[..32].copy_from_slice(&sha256(&[b"ka-bind\0", epk]));
    rd
}

/// Ephemeral half of the key agreement, kept by a side until the peer's
/// hello arrives.
pub struct Ephemeral {
    secret: StaticSecret,
    public: [u8; 32],
}

impl Ephemeral {
    pub fn generate(rng: &mut SimRng) -> Self {
        let secret = StaticSecret::random_from_rng(&mut *rng);
        let public = PublicKey::from(&secret).to_bytes();
        Self { secret, public }
    }

    pub fn public(&self) -> &[u8; 32] {
        &self.public
    }

    fn agree(&self, peer: &[u8; 32]) -> [u8; 32] {
        self.secret.diffie_hellman(&PublicKey::from(*peer)).to_bytes()
    }
}

/// Local-attestation hello: a report targeting the peer plus the ephemeral key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalHello {
    pub report: Report,
    pub epk: [u8; 32],
}

impl LocalHello {
    pub fn create(platform: &PlatformState, prover: &EnclaveIdentity, target: &EnclaveIdentity, eph: &Ephemeral) -> Self {
        let report = platform.local_attest(prover, target, &binding_report_data(eph.public()));
        Self { report, epk: *eph.public() }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut v = self.report.encode();
        v.extend_from_slice(&self.epk);
        v
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ChannelError> {
        if bytes.len() != Report::ENCODED_LEN + 32 {
            return Err(ChannelError::Malformed);
        }
        let report = Report::decode(&bytes[..Report::ENCODED_LEN]).map_err(|_| ChannelError::Malformed)?;
        let epk = bytes[Report::ENCODED_LEN..].try_into().expect("length checked");
        Ok(Self { report, epk })
    }

    /// Checks the report MAC for `verifier` on `platform`, then the key binding.
    /// Returns the attested prover.
    pub fn verify(&self, platform: &PlatformState, verifier: &EnclaveIdentity) -> Result<EnclaveIdentity, ChannelError> {
        if !platform.verify_report(verifier, &self.report) {
            return Err(ChannelError::AttestationFailure);
        }
        if self.report.report_data != binding_report_data(&self.epk) {
            return Err(ChannelError::BindingMismatch);
        }
        Ok(self.report.prover)
    }
}

/// Remote-attestation hello: a quote plus the ephemeral key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteHello {
    pub quote: Quote,
    pub epk: [u8; 32],
}

impl RemoteHello {
    pub fn create(platform: &PlatformState, prover: &EnclaveIdentity, eph: &Ephemeral) -> Self {
        Self { quote: platform.get_quote(prover, &binding_report_data(eph.public())), epk: *eph.public() }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut v = self.quote.encode();
        v.extend_from_slice(&self.epk);
        v
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ChannelError> {
        if bytes.len() != Quote::ENCODED_LEN + 32 {
            return Err(ChannelError::Malformed);
        }
        let quote = Quote::decode(&bytes[..Quote::ENCODED_LEN]).map_err(|_| ChannelError::Malformed)?;
        let epk = bytes[Quote::ENCODED_LEN..].try_into().expect("length checked");
        Ok(Self { quote, epk })
    }

    pub fn verify(&self, root: &VerifyingKey) -> Result<EnclaveIdentity, ChannelError> {
        let prover = verify_quote(root, &self.quote).map_err(|e| match e {
            SgxError::QuoteInvalid => ChannelError::QuoteInvalid,
            _ => ChannelError::Malformed,
        })?;
        if self.quote.report_data != binding_report_data(&self.epk) {
            return Err(ChannelError::BindingMismatch);
        }
        Ok(prover)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Initiator,
    Responder,
}

/// An established, attestation-bound channel endpoint.
pub struct AttestedChannel {
    id: u32,
    send_key: Key128,
    recv_key: Key128,
    send_seq: u64,
    recv_seq: u64,
    peer: EnclaveIdentity,
}

impl fmt::Debug for AttestedChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AttestedChannel")
            .field("id", &self.id)
            .field("peer", &self.peer.mrenclave)
            .field("send_seq", &self.send_seq)
            .field("recv_seq", &self.recv_seq)
            .finish()
    }
}

impl AttestedChannel {
    /// Derives directional keys from the shared secret. `transcript` is the
    /// initiator's hello followed by the responder's hello, so both sides
    /// bind the keys to the same attestation evidence.
    pub fn derive(
        id: u32,
        eph: &Ephemeral,
        peer_epk: &[u8; 32],
        transcript: &[u8],
        role: Role,
        peer: EnclaveIdentity,
    ) -> Self {
        let shared = eph.agree(peer_epk);
        let salt = sha256(&[transcript]);
        let hk = Hkdf::<Sha256>::new(Some(&salt), &shared);
        let mut i2r = [0u8; 16];
        let mut r2i = [0u8; 16];
        hk.expand(b"channel initiator->responder", &mut i2r).expect("16 bytes is a valid length");
        hk.expand(b"channel responder->initiator", &mut r2i).expect("16 bytes is a valid length");
        let (send, recv) = match role {
            Role::Initiator => (i2r, r2i),
            Role::Responder => (r2i, i2r),
        };
        Self {
            id,
            send_key: Key128::from_bytes(send),
            recv_key: Key128::from_bytes(recv),
            send_seq: 0,
            recv_seq: 0,
            peer,
        }
    }

    pub fn peer(&self) -> &EnclaveIdentity {
        &self.peer
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    /// Channel id carried in the nonce of a sealed frame.
    pub fn id_of(frame: &Frame) -> Option<u32> {
        frame.payload.get(..4).map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
    }

    /// Seals `body` into an encoded frame of the given kind.
    pub fn seal_frame(&mut self, kind: FrameKind, body: &[u8]) -> Vec<u8> {
        self.send_seq += 1;
        let seq = self.send_seq;
        let mut nonce = [0u8; NONCE_LEN];
        nonce[..4].copy_from_slice(&self.id.to_be_bytes());
        nonce[4..].copy_from_slice(&seq.to_be_bytes());
        let mut pt = Vec::with_capacity(8 + body.len());
        pt.extend_from_slice(&seq.to_be_bytes());
        pt.extend_from_slice(body);
        let (ct, tag) = aead_seal(&self.send_key, &nonce, &[kind as u8], &pt);
        let mut payload = Vec::with_capacity(NONCE_LEN + ct.len() + TAG_LEN);
        payload.extend_from_slice(&nonce);
        payload.extend_from_slice(&ct);
        payload.extend_from_slice(&tag);
        Frame::new(kind, payload).encode()
    }

    /// Authenticates and decrypts a frame, enforcing strictly increasing
    /// sequence numbers. State is untouched on failure.
    pub fn open_frame(&mut self, frame: &Frame) -> Result<Vec<u8>, ChannelError> {
        let p = &frame.payload;
        if p.len() < NONCE_LEN + TAG_LEN + 8 {
            return Err(ChannelError::Malformed);
        }
        let nonce: [u8; NONCE_LEN] = p[..NONCE_LEN].try_into().expect("length checked");
        let tag: [u8; TAG_LEN] = p[p.len() - TAG_LEN..].try_into().expect("length checked");
        let pt = aead_open(&self.recv_key, &nonce, &[frame.kind as u8], &p[NONCE_LEN..p.len() - TAG_LEN], &tag)
            .ok_or(ChannelError::AuthFailure)?;
        let seq = u64::from_be_bytes(pt[..8].try_into().expect("length checked"));
        if seq <= self.recv_seq || nonce[4..] != seq.to_be_bytes() || nonce[..4] != self.id.to_be_bytes() {
            return Err(ChannelError::Replay(seq));
        }
        self.recv_seq = seq;
        Ok(pt[8..].to_vec())
    }
}

/// Runs the two-message local handshake between enclave `a` (initiator,
/// running on `platform_a`) and enclave `b` (responder, on `platform_b`).
/// Both enclaves must share one machine for the reports to verify.
pub fn establish_local_channel(
    platform_a: &PlatformState,
    a: &EnclaveIdentity,
    platform_b: &PlatformState,
    b: &EnclaveIdentity,
    rng: &mut SimRng,
) -> Result<(AttestedChannel, AttestedChannel), ChannelError> {
    let eph_a = Ephemeral::generate(rng);
    let hello_a = LocalHello::create(platform_a, a, b, &eph_a);
    let prover_a = hello_a.verify(platform_b, b)?;
    let eph_b = Ephemeral::generate(rng);
    let hello_b = LocalHello::create(platform_b, b, &prover_a, &eph_b);
    let prover_b = hello_b.verify(platform_a, a)?;
    let transcript = [hello_a.encode(), hello_b.encode()].concat();
    Ok((
        AttestedChannel::derive(0, &eph_a, &hello_b.epk, &transcript, Role::Initiator, prover_b),
        AttestedChannel::derive(0, &eph_b, &hello_a.epk, &transcript, Role::Responder, prover_a),
    ))
}

/// Mutual remote attestation between two enclaves on any machines. Returns
/// both endpoints; the caller checks the attested identities
/// (`channel.peer()`) against its own policy.
pub fn establish_remote_channel(
    platform_a: &PlatformState,
    a: &EnclaveIdentity,
    platform_b: &PlatformState,
    b: &EnclaveIdentity,
    root: &VerifyingKey,
    rng: &mut SimRng,
) -> Result<(AttestedChannel, AttestedChannel), ChannelError> {
    let eph_a = Ephemeral::generate(rng);
    let hello_a = RemoteHello::create(platform_a, a, &eph_a);
    let prover_a = hello_a.verify(root)?;
    let eph_b = Ephemeral::generate(rng);
    let hello_b = RemoteHello::create(platform_b, b, &eph_b);
    let prover_b = hello_b.verify(root)?;
    let transcript = [hello_a.encode(), hello_b.encode()].concat();
    Ok((
        AttestedChannel::derive(0, &eph_a, &hello_b.epk, &transcript, Role::Initiator, prover_b),
        AttestedChannel::derive(0, &eph_b, &hello_a.epk, &transcript, Role::Responder, prover_a),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sgx::{AttestationRoot, MachineId};
    use rand::SeedableRng;

    struct Fx {
        rng: SimRng,
        root: AttestationRoot,
        a: PlatformState,
        b: PlatformState,
    }

    fn fx() -> Fx {
        let mut rng = SimRng::seed_from_u64(21);
        let root = AttestationRoot::generate(&mut rng);
        let a = PlatformState::new(MachineId(1), &root, &mut rng);
        let b = PlatformState::new(MachineId(2), &root, &mut rng);
        Fx { rng, root, a, b }
    }

    fn lib() -> EnclaveIdentity {
        EnclaveIdentity::measure("app", "acme")
    }

    fn me() -> EnclaveIdentity {
        EnclaveIdentity::measure("migration-enclave", "operator")
    }

    #[test]
    fn local_channel_same_machine() {
        let mut f = fx();
        let (mut x, mut y) = establish_local_channel(&f.a, &lib(), &f.a, &me(), &mut f.rng).unwrap();
        assert_eq!(*x.peer(), me());
        assert_eq!(*y.peer(), lib());
        let wire = x.seal_frame(FrameKind::MigrateRequest, b"hello");
        let frame = Frame::decode(&wire).unwrap();
        assert_eq!(y.open_frame(&frame).unwrap(), b"hello");
        let back = y.seal_frame(FrameKind::Confirm, b"");
        assert_eq!(x.open_frame(&Frame::decode(&back).unwrap()).unwrap(), b"");
    }

    #[test]
    fn local_channel_across_machines_fails() {
        let mut f = fx();
        let err = establish_local_channel(&f.a, &lib(), &f.b, &me(), &mut f.rng).unwrap_err();
        assert_eq!(err, ChannelError::AttestationFailure);
    }

    #[test]
    fn substituted_key_agreement_message_is_detected() {
        let mut f = fx();
        let eph = Ephemeral::generate(&mut f.rng);
        let mut hello = LocalHello::create(&f.a, &lib(), &me(), &eph);
        let mallory = Ephemeral::generate(&mut f.rng);
        hello.epk = *mallory.public();
        assert_eq!(hello.verify(&f.a, &me()), Err(ChannelError::BindingMismatch));
    }

    #[test]
    fn replayed_frame_is_rejected() {
        let mut f = fx();
        let (mut x, mut y) = establish_local_channel(&f.a, &lib(), &f.a, &me(), &mut f.rng).unwrap();
        let first = Frame::decode(&x.seal_frame(FrameKind::Confirm, b"1")).unwrap();
        let second = Frame::decode(&x.seal_frame(FrameKind::Confirm, b"2")).unwrap();
        assert!(y.open_frame(&first).is_ok());
        assert_eq!(y.open_frame(&first), Err(ChannelError::Replay(1)));
        assert!(y.open_frame(&second).is_ok());
        assert_eq!(y.open_frame(&first), Err(ChannelError::Replay(1)));
    }

    #[test]
    fn frame_kind_is_authenticated() {
        let mut f = fx();
        let (mut x, mut y) = establish_local_channel(&f.a, &lib(), &f.a, &me(), &mut f.rng).unwrap();
        let mut frame = Frame::decode(&x.seal_frame(FrameKind::Confirm, b"")).unwrap();
        frame.kind = FrameKind::Error;
        assert_eq!(y.open_frame(&frame), Err(ChannelError::AuthFailure));
    }

    #[test]
    fn remote_channel_and_forged_quote() {
        let mut f = fx();
        let (mut x, mut y) =
            establish_remote_channel(&f.a, &me(), &f.b, &me(), &f.root.verifying_key(), &mut f.rng).unwrap();
        let wire = x.seal_frame(FrameKind::MigrationRecord, b"data");
        assert_eq!(y.open_frame(&Frame::decode(&wire).unwrap()).unwrap(), b"data");

        let other_root = AttestationRoot::generate(&mut f.rng);
        let rogue = PlatformState::new(MachineId(66), &other_root, &mut f.rng);
        let err = establish_remote_channel(&rogue, &me(), &f.b, &me(), &f.root.verifying_key(), &mut f.rng)
            .unwrap_err();
        assert_eq!(err, ChannelError::QuoteInvalid);
    }

    #[test]
    fn frame_codec_rejects_trailing_bytes() {
        let mut bytes = Frame::new(FrameKind::Confirm, vec![1, 2]).encode();
        assert_eq!(Frame::peek_kind(&bytes), Some(FrameKind::Confirm));
        bytes.push(0);
        assert_eq!(Frame::decode(&bytes), Err(ChannelError::Malformed));
    }
}
