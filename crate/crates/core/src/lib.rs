// SPDX-License-Identifier: Apache-2.0

//! Simulation of SGX enclave migration with persistent state.
//!
//! * [`sgx`]: simulated hardware primitives (sealing, monotonic counters,
//!   local and remote attestation).
//! * [`migration_lib`]: the library linked into migratable enclaves.
//! * [`migration_enclave`]: the per-machine migration enclave.
//! * [`netsim`]: network, adversary, VM stores and the simulation driver.
//! * [`harness`]: scenario scripts, the versioned test application, reports
//!   and benchmarks.

pub mod crypto;
pub mod harness;
pub mod migration_enclave;
pub mod migration_lib;
pub mod netsim;
pub mod protocol;
pub mod sgx;
