// SPDX-License-Identifier: Apache-2.0

use super::identity::Measurement;
use crate::crypto::Reader;

/// Platform-assigned handle of a monotonic counter. The nonce acts as the
/// access capability: only a caller presenting it can reach the counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CounterUuid {
    pub counter_id: u32,
    pub nonce: [u8; 8],
}

impl CounterUuid {
    pub const ENCODED_LEN: usize = 12;

    pub fn encode(&self) -> [u8; 12] {
        let mut out = [0u8; 12];
        out[..4].copy_from_slice(&self.counter_id.to_be_bytes());
        out[4..].copy_from_slice(&self.nonce);
        out
    }

    pub fn decode(bytes: &[u8; 12]) -> Self {
        let mut r = Reader::new(bytes);
        let counter_id = r.u32().expect("fixed length");
        let nonce = r.array::<8>().expect("fixed length");
        Self { counter_id, nonce }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterRecord {
    pub uuid: CounterUuid,
    pub owner: Measurement,
    pub value: u32,
    pub destroyed: bool,
}

/// Calls made against the platform counter service, for structural
/// assertions about how much native work an operation performed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CounterOpStats {
    pub creates: u64,
    pub reads: u64,
    pub increments: u64,
    pub destroys: u64,
}

impl std::ops::Sub for CounterOpStats {
    type Output = CounterOpStats;

    fn sub(self, rhs: Self) -> Self {
        Self {
            creates: self.creates - rhs.creates,
            reads: self.reads - rhs.reads,
            increments: self.increments - rhs.increments,
            destroys: self.destroys - rhs.destroys,
        }
    }
}
