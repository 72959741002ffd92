// SPDX-License-Identifier: Apache-2.0

//! Migration records held by a migration enclave, and their persisted form.
//!
//! Persisted layout (big-endian counts):
//! `n_out (4) || { source (32) || destination (10) || state (1) || last_error (1) || data (1296) }*`
//! `|| n_in (4) || { source (32) || source_me (10) || state (1) || data (1296) }*`.
//! `last_error` 0 means none.

use crate::crypto::Reader;
use crate::migration_lib::MigrationData;
use crate::netsim::Address;
use crate::protocol::ErrorCode;
use crate::sgx::Measurement;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordState {
    PendingSend,
    AwaitingConfirm,
    BufferedIncoming,
    /// Forwarded to a local library; awaiting its confirmation. Never resent.
    Forwarded,
    Delivered,
}

impl RecordState {
    fn tag(self) -> u8 {
        match self {
            Self::PendingSend => 1,
            Self::AwaitingConfirm => 2,
            Self::BufferedIncoming => 3,
            Self::Forwarded => 4,
            Self::Delivered => 5,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        Some(match t {
            1 => Self::PendingSend,
            2 => Self::AwaitingConfirm,
            3 => Self::BufferedIncoming,
            4 => Self::Forwarded,
            5 => Self::Delivered,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::PendingSend => "PendingSend",
            Self::AwaitingConfirm => "AwaitingConfirm",
            Self::BufferedIncoming => "BufferedIncoming",
            Self::Forwarded => "Forwarded",
            Self::Delivered => "Delivered",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MigrationRecord {
    pub data: MigrationData,
    pub source_mrenclave: Measurement,
    /// ME address of the destination (outgoing) or of the source (incoming).
    pub peer_me: Address,
    pub state: RecordState,
    pub last_error: Option<ErrorCode>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecordTable {
    pub outgoing: BTreeMap<Measurement, MigrationRecord>,
    pub incoming: BTreeMap<Measurement, MigrationRecord>,
}

impl RecordTable {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (with_error, map) in [(true, &self.outgoing), (false, &self.incoming)] {
            out.extend_from_slice(&(map.len() as u32).to_be_bytes());
            for r in map.values() {
                out.extend_from_slice(r.source_mrenclave.as_bytes());
                out.extend_from_slice(&r.peer_me.encode());
                out.push(r.state.tag());
                if with_error {
                    out.push(r.last_error.map_or(0, |c| c as u8));
                }
                out.extend_from_slice(&r.data.encode());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        let mut r = Reader::new(bytes);
        let mut table = Self::default();
        for with_error in [true, false] {
            let n = r.u32()?;
            for _ in 0..n {
                let source_mrenclave = Measurement(r.array()?);
                let peer_me = Address::decode(r.take(Address::ENCODED_LEN)?)?;
                let state = RecordState::from_tag(r.u8()?)?;
                let last_error = if with_error {
                    match r.u8()? {
                        0 => None,
                        c => Some(ErrorCode::from_u8(c)?),
                    }
                } else {
                    None
                };
                let data = MigrationData::decode(r.take(MigrationData::ENCODED_LEN)?)?;
                let rec = MigrationRecord { data, source_mrenclave, peer_me, state, last_error };
                let map = if with_error { &mut table.outgoing } else { &mut table.incoming };
                map.insert(source_mrenclave, rec);
            }
        }
        r.is_empty().then_some(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Key128;
    use crate::sgx::MachineId;

    #[test]
    fn table_roundtrip() {
        let mut data = MigrationData::empty(Key128::from_bytes([9; 16]));
        data.active[4] = true;
        data.values[4] = 1_000_000_000;
        let mut t = RecordTable::default();
        t.outgoing.insert(
            Measurement([1; 32]),
            MigrationRecord {
                data: data.clone(),
                source_mrenclave: Measurement([1; 32]),
                peer_me: Address::me_of(MachineId(2)),
                state: RecordState::PendingSend,
                last_error: Some(ErrorCode::OperatorMismatch),
            },
        );
        t.incoming.insert(
            Measurement([2; 32]),
            MigrationRecord {
                data,
                source_mrenclave: Measurement([2; 32]),
                peer_me: Address::me_of(MachineId(3)),
                state: RecordState::BufferedIncoming,
                last_error: None,
            },
        );
        assert_eq!(RecordTable::decode(&t.encode()), Some(t));
        assert_eq!(RecordTable::decode(&RecordTable::default().encode()), Some(RecordTable::default()));
    }
}
