// SPDX-License-Identifier: Apache-2.0

//! Small wrappers over the primitives every layer of the simulator shares:
//! SHA-256, HMAC-SHA256, and AES-128-GCM with a detached tag.

use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes128Gcm, Nonce, Tag};
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use std::fmt;

/// Deterministic generator used for every key, nonce and counter nonce in a run.
pub type SimRng = rand_chacha::ChaCha20Rng;

pub const KEY_LEN: usize = 16;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

/// A 128-bit symmetric key. `Debug` never prints key material.
#[derive(Clone, PartialEq, Eq)]
pub struct Key128([u8; KEY_LEN]);

impl Key128 {
    pub const fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut k = [0u8; KEY_LEN];
        rng.fill_bytes(&mut k);
        Self(k)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for Key128 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Key128(..)")
    }
}

pub fn sha256(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

pub fn hmac_sha256(key: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(key).expect("hmac accepts any key length");
    for p in parts {
        mac.update(p);
    }
    mac.finalize().into_bytes().into()
}

/// Truncated HMAC tag check in constant time.
pub fn hmac_sha256_verify16(key: &[u8], parts: &[&[u8]], tag: &[u8; 16]) -> bool {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(key).expect("hmac accepts any key length");
    for p in parts {
        mac.update(p);
    }
    mac.verify_truncated_left(tag).is_ok()
}

/// Keyed derivation producing a 128-bit key: HMAC-SHA256(secret, label || context), truncated.
pub fn derive_key128(secret: &[u8], label: &[u8], context: &[&[u8]]) -> Key128 {
    let mut parts: Vec<&[u8]> = Vec::with_capacity(context.len() + 1);
    parts.push(label);
    parts.extend_from_slice(context);
    let full = hmac_sha256(secret, &parts);
    let mut k = [0u8; KEY_LEN];
    k.copy_from_slice(&full[..KEY_LEN]);
    Key128(k)
}

/// AES-128-GCM encryption returning `(ciphertext, tag)`.
pub fn aead_seal(
    key: &Key128,
    nonce: &[u8; NONCE_LEN],
    aad: &[u8],
    plaintext: &[u8],
) -> (Vec<u8>, [u8; TAG_LEN]) {
    let cipher = Aes128Gcm::new(key.as_bytes().into());
    let mut buf = plaintext.to_vec();
    let tag = cipher
        .encrypt_in_place_detached(Nonce::from_slice(nonce), aad, &mut buf)
        .expect("plaintext within AES-GCM length limit");
    (buf, tag.into())
}

/// AES-128-GCM decryption; `None` on any authentication failure.
pub fn aead_open(
    key: &Key128,
    nonce: &[u8; NONCE_LEN],
    aad: &[u8],
    ciphertext: &[u8],
    tag: &[u8; TAG_LEN],
) -> Option<Vec<u8>> {
    let cipher = Aes128Gcm::new(key.as_bytes().into());
    let mut buf = ciphertext.to_vec();
    cipher
        .decrypt_in_place_detached(Nonce::from_slice(nonce), aad, &mut buf, Tag::from_slice(tag))
        .ok()?;
    Some(buf)
}

/// Cursor over a byte slice for the fixed big-endian layouts used throughout.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.take(N).map(|s| s.try_into().expect("length checked"))
    }

    pub(crate) fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|s| s[0])
    }

    pub(crate) fn u16(&mut self) -> Option<u16> {
        self.array::<2>().map(u16::from_be_bytes)
    }

    pub(crate) fn u32(&mut self) -> Option<u32> {
        self.array::<4>().map(u32::from_be_bytes)
    }

    pub(crate) fn u64(&mut self) -> Option<u64> {
        self.array::<8>().map(u64::from_be_bytes)
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn aead_roundtrip_and_tamper() {
        let mut rng = SimRng::seed_from_u64(1);
        let key = Key128::random(&mut rng);
        let nonce = [7u8; NONCE_LEN];
        let (ct, tag) = aead_seal(&key, &nonce, b"hdr", b"payload");
        assert_eq!(aead_open(&key, &nonce, b"hdr", &ct, &tag).unwrap(), b"payload");
        assert!(aead_open(&key, &nonce, b"hdX", &ct, &tag).is_none());
        let mut bad = tag;
        bad[0] ^= 1;
        assert!(aead_open(&key, &nonce, b"hdr", &ct, &bad).is_none());
    }

    #[test]
    fn key_debug_is_redacted() {
        let k = Key128::from_bytes([0xAB; 16]);
        assert_eq!(format!("{k:?}"), "Key128(..)");
    }

    #[test]
    fn reader_bounds() {
        let mut r = Reader::new(&[0, 1, 2]);
        assert_eq!(r.u16(), Some(1));
        assert_eq!(r.u16(), None);
        assert_eq!(r.u8(), Some(2));
        assert!(r.is_empty());
    }
}
