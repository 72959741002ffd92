// SPDX-License-Identifier: Apache-2.0

//! Data-center credentials: an operator CA certifies each migration
//! enclave's signing key, and peers sign the attestation transcript with it.
//!
//! Certificate layout: `operator_id (32) || public_key (32) || ca_signature (64)`,
//! where the CA signs `"dc-cert\0" || operator_id || public_key`.

use crate::crypto::{sha256, Reader};
use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};
use std::fmt;

fn cert_message(operator_id: &[u8; 32], public_key: &[u8; 32]) -> Vec<u8> {
    [b"dc-cert\0".as_slice(), operator_id, public_key].concat()
}

fn transcript_message(transcript: &[u8]) -> Vec<u8> {
    [b"transcript\0".as_slice(), transcript].concat()
}

/// A cloud operator holding the CA key for its data centers.
pub struct Operator {
    name: String,
    id: [u8; 32],
    ca: SigningKey,
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Operator").field("name", &self.name).finish()
    }
}

impl Operator {
    pub fn generate<R: RngCore + CryptoRng>(name: &str, rng: &mut R) -> Self {
        Self { name: name.to_string(), id: sha256(&[b"operator\0", name.as_bytes()]), ca: SigningKey::generate(rng) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn id(&self) -> [u8; 32] {
        self.id
    }

    pub fn ca_key(&self) -> VerifyingKey {
        self.ca.verifying_key()
    }

    /// Issues a fresh credential for one migration enclave.
    pub fn issue<R: RngCore + CryptoRng>(&self, rng: &mut R) -> DataCenterCredential {
        let signing = SigningKey::generate(rng);
        let public_key = signing.verifying_key().to_bytes();
        let signature = self.ca.sign(&cert_message(&self.id, &public_key)).to_bytes();
        DataCenterCredential {
            signing,
            cert: OperatorCertificate { operator_id: self.id, public_key, signature },
            operator_ca: self.ca_key(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OperatorCertificate {
    pub operator_id: [u8; 32],
    pub public_key: [u8; 32],
    pub signature: [u8; 64],
}

impl OperatorCertificate {
    pub const ENCODED_LEN: usize = 128;

    pub fn encode(&self) -> [u8; 128] {
        let mut out = [0u8; 128];
        out[..32].copy_from_slice(&self.operator_id);
        out[32..64].copy_from_slice(&self.public_key);
        out[64..].copy_from_slice(&self.signature);
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        let mut r = Reader::new(bytes);
        let c = Self { operator_id: r.array()?, public_key: r.array()?, signature: r.array()? };
        r.is_empty().then_some(c)
    }
}

/// Operator-provisioned signing key plus its certificate.
#[derive(Clone)]
pub struct DataCenterCredential {
    signing: SigningKey,
    cert: OperatorCertificate,
    operator_ca: VerifyingKey,
}

impl fmt::Debug for DataCenterCredential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DataCenterCredential").field("operator_id", &hex::encode(&self.cert.operator_id[..4])).finish()
    }
}

impl DataCenterCredential {
    pub fn certificate(&self) -> &OperatorCertificate {
        &self.cert
    }

    /// `certificate (128) || signature (64)` over the transcript.
    pub fn sign_transcript(&self, transcript: &[u8]) -> Vec<u8> {
        let mut out = self.cert.encode().to_vec();
        out.extend_from_slice(&self.signing.sign(&transcript_message(transcript)).to_bytes());
        out
    }

    /// True iff `message` carries a certificate from this credential's own
    /// operator and a valid signature over `transcript`.
    pub fn verify_peer(&self, message: &[u8], transcript: &[u8]) -> bool {
        if message.len() != OperatorCertificate::ENCODED_LEN + 64 {
            return false;
        }
        let Some(cert) = OperatorCertificate::decode(&message[..128]) else {
            return false;
        };
        if cert.operator_id != self.cert.operator_id {
            return false;
        }
        let ca_sig = Signature::from_bytes(&cert.signature);
        if self.operator_ca.verify(&cert_message(&cert.operator_id, &cert.public_key), &ca_sig).is_err() {
            return false;
        }
        let Ok(peer) = VerifyingKey::from_bytes(&cert.public_key) else {
            return false;
        };
        let sig = Signature::from_bytes(message[128..].try_into().expect("64 bytes"));
        peer.verify(&transcript_message(transcript), &sig).is_ok()
    }
}
