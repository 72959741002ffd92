// SPDX-License-Identifier: Apache-2.0

//! Local-attestation reports and remote-attestation quotes.
//!
//! A report is MACed with a key only the target enclave on the same machine
//! can derive. A quote is signed by the machine's quoting key, which in turn
//! carries a certificate from the simulation-wide attestation root.

use super::identity::{EnclaveIdentity, MachineId};
use super::SgxError;
use crate::crypto::Reader;
use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};

pub type ReportData = [u8; 64];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub prover: EnclaveIdentity,
    pub target: EnclaveIdentity,
    pub report_data: ReportData,
    pub mac: [u8; 16],
}

impl Report {
    pub const ENCODED_LEN: usize = 64 + 64 + 64 + 16;

    /// Bytes covered by the MAC.
    pub(crate) fn body(prover: &EnclaveIdentity, target: &EnclaveIdentity, data: &ReportData) -> Vec<u8> {
        let mut v = Vec::with_capacity(192);
        v.extend_from_slice(&prover.encode());
        v.extend_from_slice(&target.encode());
        v.extend_from_slice(data);
        v
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut v = Self::body(&self.prover, &self.target, &self.report_data);
        v.extend_from_slice(&self.mac);
        v
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SgxError> {
        let bad = || SgxError::Malformed("report");
        let mut r = Reader::new(bytes);
        let prover = EnclaveIdentity::decode(&r.array::<64>().ok_or_else(bad)?);
        let target = EnclaveIdentity::decode(&r.array::<64>().ok_or_else(bad)?);
        let report_data = r.array::<64>().ok_or_else(bad)?;
        let mac = r.array::<16>().ok_or_else(bad)?;
        if !r.is_empty() {
            return Err(bad());
        }
        Ok(Self { prover, target, report_data, mac })
    }
}

/// The single signing authority standing in for the vendor attestation service.
pub struct AttestationRoot {
    key: SigningKey,
}

impl AttestationRoot {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self { key: SigningKey::generate(rng) }
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.key.verifying_key()
    }

    pub(crate) fn certify_quoting_key(&self, machine: MachineId, qe: &VerifyingKey) -> Signature {
        self.key.sign(&qe_cert_message(machine, qe))
    }
}

fn qe_cert_message(machine: MachineId, qe: &VerifyingKey) -> Vec<u8> {
    let mut m = b"qe-cert\0".to_vec();
    m.extend_from_slice(&machine.0.to_be_bytes());
    m.extend_from_slice(qe.as_bytes());
    m
}

fn quote_message(prover: &EnclaveIdentity, data: &ReportData) -> Vec<u8> {
    let mut m = b"quote\0".to_vec();
    m.extend_from_slice(&prover.encode());
    m.extend_from_slice(data);
    m
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quote {
    pub prover: EnclaveIdentity,
    pub report_data: ReportData,
    pub machine: MachineId,
    pub quoting_key: [u8; 32],
    pub quoting_cert: [u8; 64],
    pub signature: [u8; 64],
}

impl Quote {
    pub const ENCODED_LEN: usize = 64 + 64 + 8 + 32 + 64 + 64;

    pub(crate) fn sign(
        prover: EnclaveIdentity,
        report_data: ReportData,
        machine: MachineId,
        quoting_key: &SigningKey,
        quoting_cert: &Signature,
    ) -> Self {
        let signature = quoting_key.sign(&quote_message(&prover, &report_data));
        Self {
            prover,
            report_data,
            machine,
            quoting_key: quoting_key.verifying_key().to_bytes(),
            quoting_cert: quoting_cert.to_bytes(),
            signature: signature.to_bytes(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(Self::ENCODED_LEN);
        v.extend_from_slice(&self.prover.encode());
        v.extend_from_slice(&self.report_data);
        v.extend_from_slice(&self.machine.0.to_be_bytes());
        v.extend_from_slice(&self.quoting_key);
        v.extend_from_slice(&self.quoting_cert);
        v.extend_from_slice(&self.signature);
        v
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SgxError> {
        let bad = || SgxError::Malformed("quote");
        let mut r = Reader::new(bytes);
        let q = Self {
            prover: EnclaveIdentity::decode(&r.array::<64>().ok_or_else(bad)?),
            report_data: r.array::<64>().ok_or_else(bad)?,
            machine: MachineId(r.u64().ok_or_else(bad)?),
            quoting_key: r.array::<32>().ok_or_else(bad)?,
            quoting_cert: r.array::<64>().ok_or_else(bad)?,
            signature: r.array::<64>().ok_or_else(bad)?,
        };
        if !r.is_empty() {
            return Err(bad());
        }
        Ok(q)
    }
}

/// Checks the quoting-key certificate against `root`, then the quote
/// signature. Returns the attested prover identity.
pub fn verify_quote(root: &VerifyingKey, quote: &Quote) -> Result<EnclaveIdentity, SgxError> {
    let qe = VerifyingKey::from_bytes(&quote.quoting_key).map_err(|_| SgxError::QuoteInvalid)?;
    root.verify(&qe_cert_message(quote.machine, &qe), &Signature::from_bytes(&quote.quoting_cert))
        .map_err(|_| SgxError::QuoteInvalid)?;
    qe.verify(
        &quote_message(&quote.prover, &quote.report_data),
        &Signature::from_bytes(&quote.signature),
    )
    .map_err(|_| SgxError::QuoteInvalid)?;
    Ok(quote.prover)
}
