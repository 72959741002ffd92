// SPDX-License-Identifier: Apache-2.0

//! Fixed-size encodings of the library's persistent internals and of the
//! data that travels between machines on migration.
//!
//! Internals: `frozen (1) || active (256) || uuids (256 x 12) || offsets (256 x 4, BE) || msk (16)`,
//! 4369 bytes. Absent uuids are zero-filled.
//!
//! Migration data: `active (256) || values (256 x 4, BE) || msk (16)`, 1296 bytes.
//! Inactive slots carry value 0.

use crate::crypto::{Key128, KEY_LEN};
use crate::sgx::CounterUuid;

pub const SLOTS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LibraryInternals {
    pub frozen: bool,
    pub active: [bool; SLOTS],
    pub uuids: [Option<CounterUuid>; SLOTS],
    pub offsets: [u32; SLOTS],
    pub msk: Key128,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MigrationData {
    pub active: [bool; SLOTS],
    pub values: [u32; SLOTS],
    pub msk: Key128,
}

fn flag(b: u8) -> Option<bool> {
    match b {
        0 => Some(false),
        1 => Some(true),
        _ => None,
    }
}

impl LibraryInternals {
    pub const ENCODED_LEN: usize = 1 + SLOTS + SLOTS * CounterUuid::ENCODED_LEN + SLOTS * 4 + KEY_LEN;

    pub fn fresh(msk: Key128) -> Self {
        Self { frozen: false, active: [false; SLOTS], uuids: [None; SLOTS], offsets: [0; SLOTS], msk }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::ENCODED_LEN);
        out.push(self.frozen as u8);
        out.extend(self.active.iter().map(|&a| a as u8));
        for u in &self.uuids {
            out.extend_from_slice(&u.map(|u| u.encode()).unwrap_or([0; 12]));
        }
        for o in &self.offsets {
            out.extend_from_slice(&o.to_be_bytes());
        }
        out.extend_from_slice(self.msk.as_bytes());
        out
    }

    /// Decodes the canonical layout. A uuid is present exactly where its
    /// slot is active.
    pub fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != Self::ENCODED_LEN {
            return None;
        }
        let frozen = flag(bytes[0])?;
        let mut active = [false; SLOTS];
        for (i, a) in active.iter_mut().enumerate() {
            *a = flag(bytes[1 + i])?;
        }
        let ubase = 1 + SLOTS;
        let mut uuids = [None; SLOTS];
        for (i, u) in uuids.iter_mut().enumerate() {
            if active[i] {
                let at = ubase + i * 12;
                *u = Some(CounterUuid::decode(bytes[at..at + 12].try_into().expect("12 bytes")));
            }
        }
        let obase = ubase + SLOTS * 12;
        let mut offsets = [0u32; SLOTS];
        for (i, o) in offsets.iter_mut().enumerate() {
            let at = obase + i * 4;
            *o = u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        }
        let kbase = obase + SLOTS * 4;
        let msk = Key128::from_bytes(bytes[kbase..].try_into().expect("16 bytes"));
        Some(Self { frozen, active, uuids, offsets, msk })
    }
}

impl MigrationData {
    pub const ENCODED_LEN: usize = SLOTS + SLOTS * 4 + KEY_LEN;

    pub fn empty(msk: Key128) -> Self {
        Self { active: [false; SLOTS], values: [0; SLOTS], msk }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::ENCODED_LEN);
        out.extend(self.active.iter().map(|&a| a as u8));
        for (a, v) in self.active.iter().zip(&self.values) {
            out.extend_from_slice(&(if *a { *v } else { 0 }).to_be_bytes());
        }
        out.extend_from_slice(self.msk.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != Self::ENCODED_LEN {
            return None;
        }
        let mut active = [false; SLOTS];
        for (i, a) in active.iter_mut().enumerate() {
            *a = flag(bytes[i])?;
        }
        let mut values = [0u32; SLOTS];
        for (i, v) in values.iter_mut().enumerate() {
            let at = SLOTS + i * 4;
            *v = u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
            if !active[i] && *v != 0 {
                return None;
            }
        }
        let msk = Key128::from_bytes(bytes[SLOTS * 5..].try_into().expect("16 bytes"));
        Some(Self { active, values, msk })
    }

    /// The bytes of the counter-value array as they appear on the wire.
    pub fn counter_array_bytes(&self) -> Vec<u8> {
        self.encode()[SLOTS..SLOTS * 5].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lengths_match_layout() {
        assert_eq!(LibraryInternals::ENCODED_LEN, 4369);
        assert_eq!(MigrationData::ENCODED_LEN, 1296);
        assert_eq!(LibraryInternals::fresh(Key128::from_bytes([1; 16])).encode().len(), 4369);
    }

    #[test]
    fn internals_layout_offsets() {
        let mut li = LibraryInternals::fresh(Key128::from_bytes([0xAB; 16]));
        li.frozen = true;
        li.active[1] = true;
        li.uuids[1] = Some(CounterUuid { counter_id: 0x01020304, nonce: [9; 8] });
        li.offsets[1] = 0x0A0B0C0D;
        let b = li.encode();
        assert_eq!(b[0], 1);
        assert_eq!(b[2], 1);
        assert_eq!(&b[257 + 12..257 + 16], &[1, 2, 3, 4]);
        assert_eq!(&b[257 + 3072 + 4..257 + 3072 + 8], &[0x0A, 0x0B, 0x0C, 0x0D]);
        assert_eq!(&b[4353..], &[0xAB; 16]);
    }

    #[test]
    fn rejects_non_canonical() {
        let mut b = MigrationData::empty(Key128::from_bytes([0; 16])).encode();
        b[SLOTS + 3] = 1; // value on an inactive slot
        assert_eq!(MigrationData::decode(&b), None);
        let mut c = LibraryInternals::fresh(Key128::from_bytes([0; 16])).encode();
        c[0] = 2;
        assert_eq!(LibraryInternals::decode(&c), None);
    }

    proptest! {
        #[test]
        fn migration_data_roundtrip(
            slots in proptest::collection::btree_map(0usize..SLOTS, any::<u32>(), 0..20),
            msk in any::<[u8; 16]>(),
        ) {
            let mut d = MigrationData::empty(Key128::from_bytes(msk));
            for (i, v) in &slots {
                d.active[*i] = true;
                d.values[*i] = *v;
            }
            prop_assert_eq!(MigrationData::decode(&d.encode()), Some(d));
        }

        #[test]
        fn internals_roundtrip(
            slots in proptest::collection::btree_map(0usize..SLOTS, (any::<u32>(), any::<u32>(), any::<[u8; 8]>()), 0..20),
            frozen in any::<bool>(),
        ) {
            let mut li = LibraryInternals::fresh(Key128::from_bytes([3; 16]));
            li.frozen = frozen;
            for (i, (id, off, nonce)) in &slots {
                li.active[*i] = true;
                li.uuids[*i] = Some(CounterUuid { counter_id: *id, nonce: *nonce });
                li.offsets[*i] = *off;
            }
            prop_assert_eq!(LibraryInternals::decode(&li.encode()), Some(li));
        }
    }
}
