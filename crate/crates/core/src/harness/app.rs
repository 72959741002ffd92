// SPDX-License-Identifier: Apache-2.0

//! The versioned-state application used by scenarios.
//!
//! It keeps one sealed blob `version (4) || slot (1) || payload` in its VM
//! store, sealed under the MSK. Persisting increments the migratable counter
//! and seals the new value alongside the payload. Loading accepts the blob only
//! if its version equals the counter's current effective value.

use crate::migration_lib::{CounterSlot, EnclaveEnv, LibError, MigrationLibrary};
use crate::sgx::SealedBlob;
use std::fmt;

pub const APP_AAD: &[u8] = b"app-state";

pub fn state_key(code: &str) -> String {
    format!("app/{code}/state")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppError {
    NoState,
    AuthFailure,
    Malformed,
    VersionMismatch { sealed: u32, counter: u32 },
    Lib(LibError),
}

impl AppError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::NoState => "NoState",
            Self::AuthFailure => "AuthFailure",
            Self::Malformed => "Malformed",
            Self::VersionMismatch { .. } => "VersionMismatch",
            Self::Lib(e) => e.name(),
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::VersionMismatch { sealed, counter } => write!(f, "VersionMismatch (sealed {sealed}, counter {counter})"),
            other => f.write_str(other.name()),
        }
    }
}

impl From<LibError> for AppError {
    fn from(e: LibError) -> Self {
        Self::Lib(e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppState {
    pub version: u32,
    pub slot: CounterSlot,
    pub payload: Vec<u8>,
}

impl AppState {
    fn encode(&self) -> Vec<u8> {
        let mut v = self.version.to_be_bytes().to_vec();
        v.push(self.slot.0);
        v.extend_from_slice(&self.payload);
        v
    }

    fn decode(b: &[u8]) -> Option<Self> {
        if b.len() < 5 {
            return None;
        }
        Some(Self {
            version: u32::from_be_bytes(b[..4].try_into().ok()?),
            slot: CounterSlot(b[4]),
            payload: b[5..].to_vec(),
        })
    }
}

fn open(lib: &MigrationLibrary, stored: Option<&[u8]>) -> Result<AppState, AppError> {
    let bytes = stored.ok_or(AppError::NoState)?;
    let blob = SealedBlob::from_bytes(bytes).map_err(|_| AppError::Malformed)?;
    let (pt, aad) = lib.unseal_migratable(&blob).map_err(|e| match e {
        LibError::AuthFailure => AppError::AuthFailure,
        other => AppError::Lib(other),
    })?;
    if aad != APP_AAD {
        return Err(AppError::Malformed);
    }
    AppState::decode(&pt).ok_or(AppError::Malformed)
}

/// Loads the stored state and checks it against the counter.
pub fn load(lib: &MigrationLibrary, stored: Option<&[u8]>, env: &mut EnclaveEnv<'_>) -> Result<AppState, AppError> {
    let st = open(lib, stored)?;
    let counter = lib.read_counter(st.slot, env)?;
    if counter != st.version {
        return Err(AppError::VersionMismatch { sealed: st.version, counter });
    }
    Ok(st)
}

/// Increments the counter and seals a new version. Returns the new state and
/// the blob to store. The counter slot comes from the stored blob; a missing
/// blob or counter gets a fresh counter.
pub fn persist(
    lib: &mut MigrationLibrary,
    stored: Option<&[u8]>,
    payload: &[u8],
    env: &mut EnclaveEnv<'_>,
) -> Result<(AppState, Vec<u8>), AppError> {
    let slot = match open(lib, stored) {
        Ok(st) => Some(st.slot),
        Err(AppError::NoState) => None,
        Err(e) => return Err(e),
    };
    let (slot, version) = match slot.map(|s| (s, lib.increment_counter(s, env))) {
        Some((s, Ok(v))) => (s, v),
        None | Some((_, Err(LibError::CounterNotFound))) => {
            let (s, _) = lib.create_counter(env)?;
            (s, lib.increment_counter(s, env)?)
        }
        Some((_, Err(e))) => return Err(e.into()),
    };
    let st = AppState { version, slot, payload: payload.to_vec() };
    let blob = lib.seal_migratable(&st.encode(), APP_AAD, env.rng)?;
    Ok((st, blob.to_bytes()))
}
