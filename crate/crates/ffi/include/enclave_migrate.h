/* SPDX-License-Identifier: Apache-2.0 */

#ifndef ENCLAVE_MIGRATE_H
#define ENCLAVE_MIGRATE_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * How an enclave instance starts.
 */
typedef enum EmInit {
  EM_INIT_CREATE_NEW = 0,
  /**
   * Reloads the internals buffer stored in the VM.
   */
  EM_INIT_RELOAD = 1,
  EM_INIT_AWAIT_INCOMING = 2,
} EmInit;

/**
 * Result codes.
 */
typedef enum EmStatus {
  EM_STATUS_OK = 0,
  EM_STATUS_NULL_POINTER = 1,
  EM_STATUS_INVALID_UTF8 = 2,
  EM_STATUS_INVALID_ARGUMENT = 3,
  EM_STATUS_NOT_FOUND = 4,
  EM_STATUS_DUPLICATE = 5,
  EM_STATUS_NOT_RUNNING = 6,
  /**
   * The migration library refused the operation.
   */
  EM_STATUS_LIBRARY = 7,
  /**
   * The migration enclave refused the operation.
   */
  EM_STATUS_MIGRATION_ENCLAVE = 8,
  EM_STATUS_NETWORK = 9,
  /**
   * The scenario ran but at least one expectation failed.
   */
  EM_STATUS_SCENARIO_FAILED = 10,
  EM_STATUS_PANIC = 11,
} EmStatus;

/**
 * Opaque simulation handle.
 */
typedef struct EmSimulation EmSimulation;

/**
 * A byte buffer owned by the library.
 */
typedef struct EmBytes {
  uint8_t *data;
  size_t len;
} EmBytes;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call on this thread.
 */
const char *em_last_error(void);

/**
 * # Safety
 * `s` is null or was returned by this library and not yet freed.
 */
void em_string_free(char *s);

/**
 * # Safety
 * `b` was returned by this library and not yet freed.
 */
void em_bytes_free(struct EmBytes b);

/**
 * Runs a TOML scenario. `mode` is null, "full" or "baseline"; `seed` is
 * null to use the scenario's seed. On `Ok` or `ScenarioFailed` the report
 * (JSON when `json` is true, else text) is written to `report_out`.
 *
 * # Safety
 * Pointer arguments are null or valid.
 */
enum EmStatus em_run_scenario(const char *toml,
                              const char *mode,
                              const uint64_t *seed,
                              bool json,
                              char **report_out);

/**
 * Creates an empty simulation. Returns null only on allocation failure.
 */
struct EmSimulation *em_sim_new(uint64_t seed);

/**
 * # Safety
 * `sim` is null or a handle from [`em_sim_new`] not yet freed.
 */
void em_sim_free(struct EmSimulation *sim);

/**
 * # Safety
 * Pointer arguments are valid.
 */
enum EmStatus em_sim_add_operator(struct EmSimulation *sim, const char *name);

/**
 * Adds a machine with its own migration enclave. A modified migration
 * enclave has a different measurement and skips all peer checks.
 *
 * # Safety
 * Pointer arguments are valid.
 */
enum EmStatus em_sim_add_machine(struct EmSimulation *sim,
                                 const char *name,
                                 const char *operator_name,
                                 bool modified_me);

/**
 * # Safety
 * Pointer arguments are valid.
 */
enum EmStatus em_sim_add_vm(struct EmSimulation *sim, const char *name, const char *machine);

/**
 * Starts enclave instance `name` running `code` signed by `signer` inside
 * `vm`. `baseline` selects the library that transfers only the sealing key.
 *
 * # Safety
 * Pointer arguments are valid.
 */
enum EmStatus em_enclave_start(struct EmSimulation *sim,
                               const char *name,
                               const char *code,
                               const char *signer,
                               const char *vm,
                               enum EmInit init,
                               bool baseline);

/**
 * # Safety
 * Pointer arguments are valid.
 */
enum EmStatus em_enclave_stop(struct EmSimulation *sim, const char *name);

/**
 * # Safety
 * Pointer arguments are valid; outputs may be null.
 */
enum EmStatus em_counter_create(struct EmSimulation *sim,
                                const char *enclave,
                                uint8_t *slot_out,
                                uint32_t *value_out);

/**
 * # Safety
 * Pointer arguments are valid; `value_out` may be null.
 */
enum EmStatus em_counter_increment(struct EmSimulation *sim,
                                   const char *enclave,
                                   uint8_t slot,
                                   uint32_t *value_out);

/**
 * # Safety
 * Pointer arguments are valid; `value_out` may be null.
 */
enum EmStatus em_counter_read(struct EmSimulation *sim,
                              const char *enclave,
                              uint8_t slot,
                              uint32_t *value_out);

/**
 * # Safety
 * Pointer arguments are valid.
 */
enum EmStatus em_counter_destroy(struct EmSimulation *sim, const char *enclave, uint8_t slot);

/**
 * Seals `data` with the migratable sealing key. The blob goes to `blob_out`.
 *
 * # Safety
 * Pointer arguments are valid for their lengths.
 */
enum EmStatus em_seal(struct EmSimulation *sim,
                      const char *enclave,
                      const uint8_t *data,
                      size_t len,
                      const uint8_t *aad,
                      size_t aad_len,
                      struct EmBytes *blob_out);

/**
 * Unseals a blob from [`em_seal`]. The plaintext goes to `data_out`.
 *
 * # Safety
 * Pointer arguments are valid for their lengths.
 */
enum EmStatus em_unseal(struct EmSimulation *sim,
                        const char *enclave,
                        const uint8_t *blob,
                        size_t len,
                        struct EmBytes *data_out);

/**
 * Asks the enclave's library to migrate its state to the migration enclave
 * on `destination`. The instance freezes; the data waits there until an
 * instance started with [`EmInit::AwaitIncoming`] collects it.
 *
 * # Safety
 * Pointer arguments are valid.
 */
enum EmStatus em_migration_start(struct EmSimulation *sim,
                                 const char *enclave,
                                 const char *destination);

/**
 * Moves `vm` to machine `to`, stopping the enclaves inside it.
 *
 * # Safety
 * Pointer arguments are valid.
 */
enum EmStatus em_vm_migrate(struct EmSimulation *sim, const char *vm, const char *to);

/**
 * Simulation event log, one entry per line.
 *
 * # Safety
 * Pointer arguments are valid.
 */
enum EmStatus em_sim_log(struct EmSimulation *sim, char **log_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENCLAVE_MIGRATE_H */
