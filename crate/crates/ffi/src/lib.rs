// SPDX-License-Identifier: Apache-2.0

//! C ABI over the enclave migration simulator.
//!
//! Every function returns an [`EmStatus`]. On failure a message is available
//! from [`em_last_error`] on the same thread. Strings and byte buffers
//! handed out by the library are released with [`em_string_free`] and
//! [`em_bytes_free`]. Calls that involve the network run it until quiescent
//! before returning.

use enclave_migrate::harness::{run, Mode, ReportFormat, RunOptions, Script};
use enclave_migrate::migration_lib::{CounterSlot, InitState, LibError, LibraryMode};
use enclave_migrate::netsim::{MeKind, SimError, Simulation};
use enclave_migrate::sgx::SealedBlob;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    NotFound = 4,
    Duplicate = 5,
    NotRunning = 6,
    /// The migration library refused the operation.
    Library = 7,
    /// The migration enclave refused the operation.
    MigrationEnclave = 8,
    Network = 9,
    /// The scenario ran but at least one expectation failed.
    ScenarioFailed = 10,
    Panic = 11,
}

/// How an enclave instance starts.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmInit {
    CreateNew = 0,
    /// Reloads the internals buffer stored in the VM.
    Reload = 1,
    AwaitIncoming = 2,
}

/// Opaque simulation handle.
pub struct EmSimulation {
    sim: Simulation,
}

/// A byte buffer owned by the library.
#[repr(C)]
pub struct EmBytes {
    pub data: *mut u8,
    pub len: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(EmStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> EmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            EmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside the simulator".into());
            EmStatus::Panic
        }
    }
}

fn sim_error(e: SimError) -> Failure {
    let status = match &e {
        SimError::UnknownMachine(_) | SimError::UnknownVm(_) | SimError::UnknownOperator(_) | SimError::UnknownSnapshot(_) => {
            EmStatus::NotFound
        }
        SimError::Duplicate(_) => EmStatus::Duplicate,
        SimError::NotRunning(_) => EmStatus::NotRunning,
        SimError::Library(_) => EmStatus::Library,
        SimError::Me(_) => EmStatus::MigrationEnclave,
        SimError::Net(_) | SimError::NotQuiescent(_) => EmStatus::Network,
        SimError::ManagementVmImmovable => EmStatus::InvalidArgument,
    };
    Failure(status, e.to_string())
}

fn lib_error(e: LibError) -> Failure {
    Failure(EmStatus::Library, e.name().into())
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(EmStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(EmStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// # Safety
/// `p` is null or points to a live handle.
unsafe fn handle<'a>(p: *mut EmSimulation) -> FfiResult<&'a mut Simulation> {
    p.as_mut().map(|h| &mut h.sim).ok_or(Failure(EmStatus::NullPointer, "simulation handle is null".into()))
}

/// # Safety
/// `p` is null or valid for writes.
unsafe fn write<T>(p: *mut T, v: T) {
    if !p.is_null() {
        p.write(v);
    }
}

/// # Safety
/// `data` is valid for `len` bytes, or `len` is 0.
unsafe fn bytes<'a>(data: *const u8, len: usize, what: &str) -> FfiResult<&'a [u8]> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(Failure(EmStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

fn quiesce(sim: &mut Simulation) -> FfiResult<()> {
    sim.run_until_quiescent().map(|_| ()).map_err(sim_error)
}

fn owned_bytes(v: Vec<u8>) -> EmBytes {
    let mut b = v.into_boxed_slice();
    let out = EmBytes { data: b.as_mut_ptr(), len: b.len() };
    std::mem::forget(b);
    out
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call on this thread.
#[no_mangle]
pub extern "C" fn em_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` is null or was returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn em_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `b` was returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn em_bytes_free(b: EmBytes) {
    if !b.data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(b.data, b.len)));
    }
}

/// Runs a TOML scenario. `mode` is null, "full" or "baseline"; `seed` is
/// null to use the scenario's seed. On `Ok` or `ScenarioFailed` the report
/// (JSON when `json` is true, else text) is written to `report_out`.
///
/// # Safety
/// Pointer arguments are null or valid.
#[no_mangle]
pub unsafe extern "C" fn em_run_scenario(
    toml: *const c_char,
    mode: *const c_char,
    seed: *const u64,
    json: bool,
    report_out: *mut *mut c_char,
) -> EmStatus {
    guard(|| {
        let script = Script::parse(text(toml, "toml")?).map_err(|e| Failure(EmStatus::InvalidArgument, e.to_string()))?;
        let mode = if mode.is_null() {
            None
        } else {
            Some(text(mode, "mode")?.parse::<Mode>().map_err(|e| Failure(EmStatus::InvalidArgument, e))?)
        };
        let opts = RunOptions { seed: seed.as_ref().copied(), mode };
        let report = run(&script, opts).map_err(|e| Failure(EmStatus::InvalidArgument, e.to_string()))?;
        let rendered = report.render(if json { ReportFormat::Json } else { ReportFormat::Text });
        write(report_out, CString::new(rendered).expect("report has no NUL").into_raw());
        if report.passed {
            Ok(())
        } else {
            Err(Failure(EmStatus::ScenarioFailed, format!("{} assertions failed", report.failed_asserts().count())))
        }
    })
}

/// Creates an empty simulation. Returns null only on allocation failure.
#[no_mangle]
pub extern "C" fn em_sim_new(seed: u64) -> *mut EmSimulation {
    Box::into_raw(Box::new(EmSimulation { sim: Simulation::new(seed) }))
}

/// # Safety
/// `sim` is null or a handle from [`em_sim_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn em_sim_free(sim: *mut EmSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// # Safety
/// Pointer arguments are valid.
#[no_mangle]
pub unsafe extern "C" fn em_sim_add_operator(sim: *mut EmSimulation, name: *const c_char) -> EmStatus {
    guard(|| handle(sim)?.add_operator(text(name, "name")?).map_err(sim_error))
}

/// Adds a machine with its own migration enclave. A modified migration
/// enclave has a different measurement and skips all peer checks.
///
/// # Safety
/// Pointer arguments are valid.
#[no_mangle]
pub unsafe extern "C" fn em_sim_add_machine(
    sim: *mut EmSimulation,
    name: *const c_char,
    operator_name: *const c_char,
    modified_me: bool,
) -> EmStatus {
    guard(|| {
        let kind = if modified_me { MeKind::Modified } else { MeKind::Genuine };
        let s = handle(sim)?;
        s.add_machine(text(name, "name")?, text(operator_name, "operator")?, kind).map_err(sim_error)?;
        quiesce(s)
    })
}

/// # Safety
/// Pointer arguments are valid.
#[no_mangle]
pub unsafe extern "C" fn em_sim_add_vm(sim: *mut EmSimulation, name: *const c_char, machine: *const c_char) -> EmStatus {
    guard(|| handle(sim)?.add_vm(text(name, "name")?, text(machine, "machine")?).map_err(sim_error))
}

/// Starts enclave instance `name` running `code` signed by `signer` inside
/// `vm`. `baseline` selects the library that transfers only the sealing key.
///
/// # Safety
/// Pointer arguments are valid.
#[no_mangle]
pub unsafe extern "C" fn em_enclave_start(
    sim: *mut EmSimulation,
    name: *const c_char,
    code: *const c_char,
    signer: *const c_char,
    vm: *const c_char,
    init: EmInit,
    baseline: bool,
) -> EmStatus {
    guard(|| {
        let s = handle(sim)?;
        let (init, stored) = match init {
            EmInit::CreateNew => (InitState::CreateNew, false),
            EmInit::Reload => (InitState::Reload, true),
            EmInit::AwaitIncoming => (InitState::AwaitIncoming, false),
        };
        let mode = if baseline { LibraryMode::NaiveBaseline } else { LibraryMode::Full };
        s.start_enclave(text(name, "name")?, text(code, "code")?, text(signer, "signer")?, text(vm, "vm")?, mode, init, stored)
            .map_err(sim_error)?;
        quiesce(s)
    })
}

/// # Safety
/// Pointer arguments are valid.
#[no_mangle]
pub unsafe extern "C" fn em_enclave_stop(sim: *mut EmSimulation, name: *const c_char) -> EmStatus {
    guard(|| handle(sim)?.stop_enclave(text(name, "name")?).map_err(sim_error))
}

/// # Safety
/// Pointer arguments are valid; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn em_counter_create(
    sim: *mut EmSimulation,
    enclave: *const c_char,
    slot_out: *mut u8,
    value_out: *mut u32,
) -> EmStatus {
    guard(|| {
        let (slot, v) = handle(sim)?.with_library(text(enclave, "enclave")?, |l, env| l.create_counter(env)).map_err(sim_error)?.map_err(lib_error)?;
        write(slot_out, slot.0);
        write(value_out, v);
        Ok(())
    })
}

/// # Safety
/// Pointer arguments are valid; `value_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn em_counter_increment(
    sim: *mut EmSimulation,
    enclave: *const c_char,
    slot: u8,
    value_out: *mut u32,
) -> EmStatus {
    guard(|| {
        let v = handle(sim)?
            .with_library(text(enclave, "enclave")?, |l, env| l.increment_counter(CounterSlot(slot), env))
            .map_err(sim_error)?
            .map_err(lib_error)?;
        write(value_out, v);
        Ok(())
    })
}

/// # Safety
/// Pointer arguments are valid; `value_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn em_counter_read(
    sim: *mut EmSimulation,
    enclave: *const c_char,
    slot: u8,
    value_out: *mut u32,
) -> EmStatus {
    guard(|| {
        let v = handle(sim)?
            .with_library(text(enclave, "enclave")?, |l, env| l.read_counter(CounterSlot(slot), env))
            .map_err(sim_error)?
            .map_err(lib_error)?;
        write(value_out, v);
        Ok(())
    })
}

/// # Safety
/// Pointer arguments are valid.
#[no_mangle]
pub unsafe extern "C" fn em_counter_destroy(sim: *mut EmSimulation, enclave: *const c_char, slot: u8) -> EmStatus {
    guard(|| {
        handle(sim)?
            .with_library(text(enclave, "enclave")?, |l, env| l.destroy_counter(CounterSlot(slot), env))
            .map_err(sim_error)?
            .map_err(lib_error)
    })
}

/// Seals `data` with the migratable sealing key. The blob goes to `blob_out`.
///
/// # Safety
/// Pointer arguments are valid for their lengths.
#[no_mangle]
pub unsafe extern "C" fn em_seal(
    sim: *mut EmSimulation,
    enclave: *const c_char,
    data: *const u8,
    len: usize,
    aad: *const u8,
    aad_len: usize,
    blob_out: *mut EmBytes,
) -> EmStatus {
    guard(|| {
        let (pt, aad) = (bytes(data, len, "data")?, bytes(aad, aad_len, "aad")?);
        let blob = handle(sim)?
            .with_library(text(enclave, "enclave")?, |l, env| l.seal_migratable(pt, aad, env.rng))
            .map_err(sim_error)?
            .map_err(lib_error)?;
        write(blob_out, owned_bytes(blob.to_bytes()));
        Ok(())
    })
}

/// Unseals a blob from [`em_seal`]. The plaintext goes to `data_out`.
///
/// # Safety
/// Pointer arguments are valid for their lengths.
#[no_mangle]
pub unsafe extern "C" fn em_unseal(
    sim: *mut EmSimulation,
    enclave: *const c_char,
    blob: *const u8,
    len: usize,
    data_out: *mut EmBytes,
) -> EmStatus {
    guard(|| {
        let blob = SealedBlob::from_bytes(bytes(blob, len, "blob")?).map_err(|e| Failure(EmStatus::InvalidArgument, format!("{e:?}")))?;
        let (pt, _) = handle(sim)?
            .with_library(text(enclave, "enclave")?, |l, _| l.unseal_migratable(&blob))
            .map_err(sim_error)?
            .map_err(lib_error)?;
        write(data_out, owned_bytes(pt));
        Ok(())
    })
}

/// Asks the enclave's library to migrate its state to the migration enclave
/// on `destination`. The instance freezes; the data waits there until an
/// instance started with [`EmInit::AwaitIncoming`] collects it.
///
/// # Safety
/// Pointer arguments are valid.
#[no_mangle]
pub unsafe extern "C" fn em_migration_start(sim: *mut EmSimulation, enclave: *const c_char, destination: *const c_char) -> EmStatus {
    guard(|| {
        let s = handle(sim)?;
        s.migration_start(text(enclave, "enclave")?, text(destination, "destination")?).map_err(sim_error)?;
        quiesce(s)
    })
}

/// Moves `vm` to machine `to`, stopping the enclaves inside it.
///
/// # Safety
/// Pointer arguments are valid.
#[no_mangle]
pub unsafe extern "C" fn em_vm_migrate(sim: *mut EmSimulation, vm: *const c_char, to: *const c_char) -> EmStatus {
    guard(|| handle(sim)?.vm_migrate(text(vm, "vm")?, text(to, "to")?).map(|_| ()).map_err(sim_error))
}

/// Simulation event log, one entry per line.
///
/// # Safety
/// Pointer arguments are valid.
#[no_mangle]
pub unsafe extern "C" fn em_sim_log(sim: *mut EmSimulation, log_out: *mut *mut c_char) -> EmStatus {
    guard(|| {
        let joined = handle(sim)?.log().join("\n");
        write(log_out, CString::new(joined.replace('\0', " ")).expect("nul removed").into_raw());
        Ok(())
    })
}
