// SPDX-License-Identifier: Apache-2.0

//! Authenticated sealing of enclave data.
//!
//! The blob layout on disk is
//! `policy (1) || nonce (12) || aad_len (4, BE) || aad || ct_len (4, BE) || ct || tag (16)`.
//! The policy byte is bound into the AEAD associated data, so every field is
//! authenticated.

use super::SgxError;
use crate::crypto::{aead_open, aead_seal, Key128, Reader, NONCE_LEN, TAG_LEN};
use rand::{CryptoRng, RngCore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SealKeyPolicy {
    ByMrenclave,
    ByMrsigner,
}

impl SealKeyPolicy {
    pub fn tag(self) -> u8 {
        match self {
            Self::ByMrenclave => 0x01,
            Self::ByMrsigner => 0x02,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0x01 => Some(Self::ByMrenclave),
            0x02 => Some(Self::ByMrsigner),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedBlob {
    pub policy: SealKeyPolicy,
    pub nonce: [u8; NONCE_LEN],
    pub aad: Vec<u8>,
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

fn bound_aad(policy: SealKeyPolicy, aad: &[u8]) -> Vec<u8> {
    let mut v = Vec::with_capacity(aad.len() + 1);
    v.push(policy.tag());
    v.extend_from_slice(aad);
    v
}

/// Seals `plaintext` under `key` with a fresh random nonce.
pub fn seal<R: RngCore + CryptoRng>(
    key: &Key128,
    policy: SealKeyPolicy,
    plaintext: &[u8],
    aad: &[u8],
    rng: &mut R,
) -> SealedBlob {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let (ciphertext, tag) = aead_seal(key, &nonce, &bound_aad(policy, aad), plaintext);
    SealedBlob { policy, nonce, aad: aad.to_vec(), ciphertext, tag }
}

/// Returns `(plaintext, aad)` or fails with [`SgxError::AuthFailure`].
pub fn unseal(key: &Key128, blob: &SealedBlob) -> Result<(Vec<u8>, Vec<u8>), SgxError> {
    let pt = aead_open(
        key,
        &blob.nonce,
        &bound_aad(blob.policy, &blob.aad),
        &blob.ciphertext,
        &blob.tag,
    )
    .ok_or(SgxError::AuthFailure)?;
    Ok((pt, blob.aad.clone()))
}

impl SealedBlob {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(1 + NONCE_LEN + 8 + self.aad.len() + self.ciphertext.len() + TAG_LEN);
        out.push(self.policy.tag());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&(self.aad.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.aad);
        out.extend_from_slice(&(self.ciphertext.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SgxError> {
        let mut r = Reader::new(bytes);
        let bad = || SgxError::Malformed("sealed blob");
        let policy = SealKeyPolicy::from_tag(r.u8().ok_or_else(bad)?).ok_or_else(bad)?;
        let nonce = r.array::<NONCE_LEN>().ok_or_else(bad)?;
        let aad_len = r.u32().ok_or_else(bad)? as usize;
        let aad = r.take(aad_len).ok_or_else(bad)?.to_vec();
        let ct_len = r.u32().ok_or_else(bad)? as usize;
        let ciphertext = r.take(ct_len).ok_or_else(bad)?.to_vec();
        let tag = r.array::<TAG_LEN>().ok_or_else(bad)?;
        if !r.is_empty() {
            return Err(bad());
        }
        Ok(Self { policy, nonce, aad, ciphertext, tag })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::SimRng;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn key(b: u8) -> Key128 {
        Key128::from_bytes([b; 16])
    }

    #[test]
    fn roundtrip() {
        let mut rng = SimRng::seed_from_u64(3);
        let blob = seal(&key(1), SealKeyPolicy::ByMrenclave, b"secret", b"hdr", &mut rng);
        assert_eq!(unseal(&key(1), &blob).unwrap(), (b"secret".to_vec(), b"hdr".to_vec()));
        assert_eq!(SealedBlob::from_bytes(&blob.to_bytes()).unwrap(), blob);
    }

    #[test]
    fn wrong_key_and_tampered_aad_fail() {
        let mut rng = SimRng::seed_from_u64(3);
        let blob = seal(&key(1), SealKeyPolicy::ByMrenclave, b"secret", b"hdr", &mut rng);
        assert_eq!(unseal(&key(2), &blob), Err(SgxError::AuthFailure));
        let mut t = blob.clone();
        t.aad[0] ^= 0x80;
        assert_eq!(unseal(&key(1), &t), Err(SgxError::AuthFailure));
        let mut p = blob;
        p.policy = SealKeyPolicy::ByMrsigner;
        assert_eq!(unseal(&key(1), &p), Err(SgxError::AuthFailure));
    }

    #[test]
    fn nonce_fresh_per_call() {
        let mut rng = SimRng::seed_from_u64(3);
        let a = seal(&key(1), SealKeyPolicy::ByMrenclave, b"x", b"", &mut rng);
        let b = seal(&key(1), SealKeyPolicy::ByMrenclave, b"x", b"", &mut rng);
        assert_ne!(a.nonce, b.nonce);
    }

    // Brute force over a 16-key fixture: only the sealing key opens a blob.
    #[test]
    fn only_matching_key_unseals() {
        let mut rng = SimRng::seed_from_u64(9);
        let keys: Vec<Key128> = (0..16).map(|_| Key128::random(&mut rng)).collect();
        for (i, k) in keys.iter().enumerate() {
            let blob = seal(k, SealKeyPolicy::ByMrenclave, b"pt", b"ad", &mut rng);
            for (j, other) in keys.iter().enumerate() {
                assert_eq!(unseal(other, &blob).is_ok(), i == j, "key {j} vs blob {i}");
            }
        }
    }

    proptest! {
        #[test]
        fn any_bitflip_fails(
            pt in proptest::collection::vec(any::<u8>(), 1..64),
            aad in proptest::collection::vec(any::<u8>(), 0..16),
            pos in any::<prop::sample::Index>(),
            bit in 0u8..8,
        ) {
            let mut rng = SimRng::seed_from_u64(5);
            let blob = seal(&key(4), SealKeyPolicy::ByMrenclave, &pt, &aad, &mut rng);
            let mut bytes = blob.to_bytes();
            let i = pos.index(bytes.len());
            bytes[i] ^= 1 << bit;
            // Either the layout no longer parses or authentication fails.
            if let Ok(t) = SealedBlob::from_bytes(&bytes) {
                prop_assert_eq!(unseal(&key(4), &t), Err(SgxError::AuthFailure));
            }
        }

        #[test]
        fn ciphertext_byte_flip_fails(pt in proptest::collection::vec(any::<u8>(), 1..64), pos in any::<prop::sample::Index>()) {
            let mut rng = SimRng::seed_from_u64(6);
            let mut blob = seal(&key(4), SealKeyPolicy::ByMrenclave, &pt, b"", &mut rng);
            let i = pos.index(blob.ciphertext.len());
            blob.ciphertext[i] ^= 0xFF;
            prop_assert_eq!(unseal(&key(4), &blob), Err(SgxError::AuthFailure));
        }

        #[test]
        fn truncated_ciphertext_fails(pt in proptest::collection::vec(any::<u8>(), 1..64), cut in any::<prop::sample::Index>()) {
            let mut rng = SimRng::seed_from_u64(7);
            let mut blob = seal(&key(4), SealKeyPolicy::ByMrenclave, &pt, b"a", &mut rng);
            let keep = cut.index(blob.ciphertext.len());
            blob.ciphertext.truncate(keep);
            prop_assert_eq!(unseal(&key(4), &blob), Err(SgxError::AuthFailure));
        }
    }
}
