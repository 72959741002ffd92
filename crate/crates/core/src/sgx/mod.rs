// SPDX-License-Identifier: Apache-2.0

//! Simulated SGX hardware and platform-service primitives.

pub mod attest;
pub mod counter;
pub mod identity;
pub mod platform;
pub mod seal;

pub use attest::{verify_quote, AttestationRoot, Quote, Report, ReportData};
pub use counter::{CounterOpStats, CounterRecord, CounterUuid};
pub use identity::{CpuSecret, EnclaveIdentity, MachineId, Measurement};
pub use platform::{PlatformState, MAX_COUNTERS_PER_ENCLAVE};
pub use seal::{seal, unseal, SealKeyPolicy, SealedBlob};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum SgxError {
    #[error("authentication failure")]
    AuthFailure,
    #[error("monotonic counter limit exceeded")]
    CounterLimitExceeded,
    #[error("monotonic counter not found")]
    CounterNotFound,
    #[error("monotonic counter overflow")]
    CounterOverflow,
    #[error("quote verification failed")]
    QuoteInvalid,
    #[error("platform service unavailable")]
    ServiceUnavailable,
    #[error("malformed {0}")]
    Malformed(&'static str),
}
