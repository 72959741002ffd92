// SPDX-License-Identifier: Apache-2.0

//! Error codes carried in `ERROR` frames between libraries and migration
//! enclaves. The first payload byte is the code. When an error concerns a
//! specific migration record, the source MRENCLAVE (32 bytes) follows.

use crate::sgx::Measurement;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum ErrorCode {
    AttestationFailure = 0x01,
    BindingMismatch = 0x02,
    QuoteInvalid = 0x03,
    PeerIdentityMismatch = 0x04,
    OperatorMismatch = 0x05,
    NotProvisioned = 0x06,
    Busy = 0x07,
    CounterLimitExceeded = 0x08,
    NotAwaiting = 0x09,
    Malformed = 0x0A,
}

impl ErrorCode {
    pub fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            0x01 => Self::AttestationFailure,
            0x02 => Self::BindingMismatch,
            0x03 => Self::QuoteInvalid,
            0x04 => Self::PeerIdentityMismatch,
            0x05 => Self::OperatorMismatch,
            0x06 => Self::NotProvisioned,
            0x07 => Self::Busy,
            0x08 => Self::CounterLimitExceeded,
            0x09 => Self::NotAwaiting,
            0x0A => Self::Malformed,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::AttestationFailure => "AttestationFailure",
            Self::BindingMismatch => "BindingMismatch",
            Self::QuoteInvalid => "QuoteInvalid",
            Self::PeerIdentityMismatch => "PeerIdentityMismatch",
            Self::OperatorMismatch => "OperatorMismatch",
            Self::NotProvisioned => "NotProvisioned",
            Self::Busy => "Busy",
            Self::CounterLimitExceeded => "CounterLimitExceeded",
            Self::NotAwaiting => "NotAwaiting",
            Self::Malformed => "Malformed",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn encode_error(code: ErrorCode, about: Option<&Measurement>) -> Vec<u8> {
    let mut v = vec![code as u8];
    if let Some(m) = about {
        v.extend_from_slice(m.as_bytes());
    }
    v
}

pub fn decode_error(body: &[u8]) -> Option<(ErrorCode, Option<Measurement>)> {
    let code = ErrorCode::from_u8(*body.first()?)?;
    match body.len() {
        1 => Some((code, None)),
        33 => Some((code, Some(Measurement(body[1..].try_into().expect("32 bytes"))))),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_roundtrip() {
        for b in 0u8..=255 {
            if let Some(c) = ErrorCode::from_u8(b) {
                assert_eq!(c as u8, b);
            }
        }
        let m = Measurement([7; 32]);
        assert_eq!(decode_error(&encode_error(ErrorCode::Busy, Some(&m))), Some((ErrorCode::Busy, Some(m))));
        assert_eq!(decode_error(&encode_error(ErrorCode::Busy, None)), Some((ErrorCode::Busy, None)));
        assert_eq!(decode_error(&[0x05, 1]), None);
    }
}
