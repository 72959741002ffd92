// SPDX-License-Identifier: Apache-2.0

use enclave_migrate_ffi::*;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = em_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Sim(*mut EmSimulation);

impl Drop for Sim {
    fn drop(&mut self) {
        unsafe { em_sim_free(self.0) };
    }
}

impl Sim {
    fn three_machines(seed: u64) -> Self {
        let s = Sim(em_sim_new(seed));
        unsafe {
            assert_eq!(em_sim_add_operator(s.0, c("acme").as_ptr()), EmStatus::Ok);
            for m in ["A", "B"] {
                assert_eq!(em_sim_add_machine(s.0, c(m).as_ptr(), c("acme").as_ptr(), false), EmStatus::Ok);
            }
            assert_eq!(em_sim_add_machine(s.0, c("X").as_ptr(), c("acme").as_ptr(), true), EmStatus::Ok);
            assert_eq!(em_sim_add_vm(s.0, c("vm").as_ptr(), c("A").as_ptr()), EmStatus::Ok);
        }
        s
    }

    fn start(&self, init: EmInit) -> EmStatus {
        unsafe { em_enclave_start(self.0, c("app").as_ptr(), c("counter-app").as_ptr(), c("vendor").as_ptr(), c("vm").as_ptr(), init, false) }
    }
}

#[test]
fn counters_and_sealed_data_survive_migration() {
    let s = Sim::three_machines(1);
    let app = c("app");
    unsafe {
        assert_eq!(s.start(EmInit::CreateNew), EmStatus::Ok);
        let (mut slot, mut v) = (u8::MAX, u32::MAX);
        assert_eq!(em_counter_create(s.0, app.as_ptr(), &mut slot, &mut v), EmStatus::Ok);
        assert_eq!((slot, v), (0, 0));
        for want in 1..=3 {
            assert_eq!(em_counter_increment(s.0, app.as_ptr(), slot, &mut v), EmStatus::Ok);
            assert_eq!(v, want);
        }
        let secret = b"ledger state";
        let mut blob = EmBytes { data: ptr::null_mut(), len: 0 };
        assert_eq!(em_seal(s.0, app.as_ptr(), secret.as_ptr(), secret.len(), b"v1".as_ptr(), 2, &mut blob), EmStatus::Ok);

        assert_eq!(em_migration_start(s.0, app.as_ptr(), c("B").as_ptr()), EmStatus::Ok);
        assert_eq!(em_counter_read(s.0, app.as_ptr(), slot, &mut v), EmStatus::Library);
        assert_eq!(last_error(), "Frozen");
        assert_eq!(em_vm_migrate(s.0, c("vm").as_ptr(), c("B").as_ptr()), EmStatus::Ok);
        assert_eq!(s.start(EmInit::AwaitIncoming), EmStatus::Ok);

        assert_eq!(em_counter_read(s.0, app.as_ptr(), slot, &mut v), EmStatus::Ok);
        assert_eq!(v, 3);
        let mut out = EmBytes { data: ptr::null_mut(), len: 0 };
        assert_eq!(em_unseal(s.0, app.as_ptr(), blob.data, blob.len, &mut out), EmStatus::Ok);
        assert_eq!(std::slice::from_raw_parts(out.data, out.len), secret);
        em_bytes_free(out);
        em_bytes_free(blob);

        let mut log: *mut c_char = ptr::null_mut();
        assert_eq!(em_sim_log(s.0, &mut log), EmStatus::Ok);
        assert!(CStr::from_ptr(log).to_string_lossy().contains("start app"));
        em_string_free(log);
    }
}

#[test]
fn refused_migration_reports_the_migration_enclave() {
    let s = Sim::three_machines(2);
    unsafe {
        assert_eq!(s.start(EmInit::CreateNew), EmStatus::Ok);
        // The modified ME on X fails attestation; the library itself stays
        // frozen while the record waits at A.
        assert_eq!(em_migration_start(s.0, c("app").as_ptr(), c("X").as_ptr()), EmStatus::Ok);
        assert_eq!(em_counter_create(s.0, c("app").as_ptr(), ptr::null_mut(), ptr::null_mut()), EmStatus::Library);
        assert_eq!(em_vm_migrate(s.0, c("vm").as_ptr(), c("X").as_ptr()), EmStatus::Ok);
        assert_eq!(s.start(EmInit::AwaitIncoming), EmStatus::Ok);
        assert_eq!(em_counter_create(s.0, c("app").as_ptr(), ptr::null_mut(), ptr::null_mut()), EmStatus::Library);
        assert_eq!(last_error(), "AwaitingMigration");
    }
}

#[test]
fn error_codes() {
    let s = Sim::three_machines(3);
    unsafe {
        assert_eq!(em_sim_add_vm(s.0, c("vm").as_ptr(), c("A").as_ptr()), EmStatus::Duplicate);
        assert_eq!(em_sim_add_vm(s.0, c("vm2").as_ptr(), c("Q").as_ptr()), EmStatus::NotFound);
        assert!(last_error().contains("Q"));
        assert_eq!(em_counter_read(s.0, c("ghost").as_ptr(), 0, ptr::null_mut()), EmStatus::NotRunning);
        assert_eq!(em_sim_add_operator(ptr::null_mut(), c("x").as_ptr()), EmStatus::NullPointer);
        assert_eq!(em_sim_add_operator(s.0, ptr::null()), EmStatus::NullPointer);
        let bad = [0xffu8, 0];
        assert_eq!(em_sim_add_operator(s.0, bad.as_ptr().cast()), EmStatus::InvalidUtf8);
        assert_eq!(s.start(EmInit::CreateNew), EmStatus::Ok);
        assert_eq!(em_counter_read(s.0, c("app").as_ptr(), 9, ptr::null_mut()), EmStatus::Library);
        assert_eq!(last_error(), "CounterNotFound");
        let junk = [1u8, 2, 3];
        assert_eq!(em_unseal(s.0, c("app").as_ptr(), junk.as_ptr(), junk.len(), ptr::null_mut()), EmStatus::InvalidArgument);
        assert_eq!(em_sim_add_operator(s.0, c("fresh").as_ptr()), EmStatus::Ok);
        assert!(em_last_error().is_null());
    }
}

#[test]
fn bundled_scenario_through_the_c_abi() {
    let text = enclave_migrate::harness::corpus::find("fork_attack").unwrap();
    let seed = 11u64;
    unsafe {
        let mut report: *mut c_char = ptr::null_mut();
        let st = em_run_scenario(c(text).as_ptr(), c("baseline").as_ptr(), &seed, true, &mut report);
        assert_eq!(st, EmStatus::Ok, "{}", last_error());
        let json: serde_json::Value = serde_json::from_str(CStr::from_ptr(report).to_str().unwrap()).unwrap();
        assert_eq!(json["mode"], "baseline");
        assert_eq!(json["seed"], 11);
        em_string_free(report);

        let failing = corpus_normal_migration_with_wrong_value();
        let mut report: *mut c_char = ptr::null_mut();
        assert_eq!(em_run_scenario(c(&failing).as_ptr(), ptr::null(), ptr::null(), false, &mut report), EmStatus::ScenarioFailed);
        assert!(CStr::from_ptr(report).to_string_lossy().contains("FAIL"));
        em_string_free(report);

        assert_eq!(em_run_scenario(c("name = 1").as_ptr(), ptr::null(), ptr::null(), false, ptr::null_mut()), EmStatus::InvalidArgument);
        assert_eq!(em_run_scenario(c(text).as_ptr(), c("turbo").as_ptr(), ptr::null(), false, ptr::null_mut()), EmStatus::InvalidArgument);
    }
}

fn corpus_normal_migration_with_wrong_value() -> String {
    let text = enclave_migrate::harness::corpus::find("normal_migration").unwrap();
    let failing = text.replacen("value = 3", "value = 4", 1);
    assert_ne!(failing, text);
    failing
}

#[test]
fn header_is_current_and_compiles_as_c() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/enclave_migrate.h")).unwrap();
    for name in ["em_sim_new", "em_run_scenario", "em_migration_start", "EM_STATUS_SCENARIO_FAILED", "typedef struct EmSimulation EmSimulation"] {
        assert!(header.contains(name), "{name} missing from header");
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        r#"#include "enclave_migrate.h"
int main(void) {
    EmSimulation *s = em_sim_new(1);
    uint32_t v = 0;
    EmStatus st = em_counter_read(s, "app", 0, &v);
    em_sim_free(s);
    return st == EM_STATUS_NOT_RUNNING ? 0 : 1;
}
"#,
    )
    .unwrap();
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .output()
        .expect("C compiler `cc` on PATH");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
