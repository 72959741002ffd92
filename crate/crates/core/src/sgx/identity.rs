// SPDX-License-Identifier: Apache-2.0

use crate::crypto::sha256;
use rand::{CryptoRng, RngCore};
use std::fmt;

/// Opaque identifier of one simulated physical machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MachineId(pub u64);

impl fmt::Display for MachineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

/// 256-bit measurement digest (MRENCLAVE or MRSIGNER).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Measurement(pub [u8; 32]);

impl Measurement {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Measurement({})", self.short())
    }
}

impl fmt::Display for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// Code identity plus signing identity of an enclave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EnclaveIdentity {
    pub mrenclave: Measurement,
    pub mrsigner: Measurement,
}

impl EnclaveIdentity {
    pub const ENCODED_LEN: usize = 64;

    /// Measures a code descriptor and a signer name. Identical descriptors
    /// give identical identities on every machine.
    pub fn measure(code_descriptor: &str, signer: &str) -> Self {
        Self {
            mrenclave: Measurement(sha256(&[b"mrenclave\0", code_descriptor.as_bytes()])),
            mrsigner: Measurement(sha256(&[b"mrsigner\0", signer.as_bytes()])),
        }
    }

    pub fn encode(&self) -> [u8; 64] {
        let mut out = [0u8; 64];
        out[..32].copy_from_slice(&self.mrenclave.0);
        out[32..].copy_from_slice(&self.mrsigner.0);
        out
    }

    pub fn decode(bytes: &[u8; 64]) -> Self {
        let mut e = [0u8; 32];
        let mut s = [0u8; 32];
        e.copy_from_slice(&bytes[..32]);
        s.copy_from_slice(&bytes[32..]);
        Self { mrenclave: Measurement(e), mrsigner: Measurement(s) }
    }
}

/// Per-machine root secret from which sealing and report keys derive.
/// Deliberately neither `Clone`, `Debug`-printable, nor serializable.
pub struct CpuSecret([u8; 16]);

impl CpuSecret {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut s = [0u8; 16];
        rng.fill_bytes(&mut s);
        Self(s)
    }

    pub(crate) fn expose(&self) -> &[u8; 16] {
        &self.0
    }
}

impl fmt::Debug for CpuSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CpuSecret(..)")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measurement_is_deterministic() {
        assert_eq!(EnclaveIdentity::measure("app", "acme"), EnclaveIdentity::measure("app", "acme"));
        assert_ne!(
            EnclaveIdentity::measure("app", "acme").mrenclave,
            EnclaveIdentity::measure("app2", "acme").mrenclave
        );
        let a = EnclaveIdentity::measure("x", "y");
        assert_eq!(EnclaveIdentity::decode(&a.encode()), a);
    }
}
