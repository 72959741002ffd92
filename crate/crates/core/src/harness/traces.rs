// SPDX-License-Identifier: Apache-2.0

//! Randomized traces of counter and sealing operations interleaved with
//! migrations, checked step by step against an in-memory reference model.
//!
//! The model is a map from counter slot to the number of increments applied
//! since the counter was created, plus the list of every blob sealed so far.
//! After each operation the library must agree with it: reads equal the
//! model, values never decrease, and every blob still unseals to its
//! plaintext on whatever machine the enclave runs.

use crate::crypto::SimRng;
use crate::migration_lib::{CounterSlot, InitState, LibError, LibraryMode, Phase, SLOTS};
use crate::netsim::{MeKind, Simulation};
use crate::sgx::SealedBlob;
use rand::{Rng, SeedableRng};
use std::collections::BTreeMap;

pub const MACHINES: [&str; 3] = ["A", "B", "C"];
pub const MAX_MIGRATIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceOp {
    Create,
    /// Picks a live slot by index modulo the number of live slots.
    Increment(u8),
    Read(u8),
    Destroy(u8),
    Seal(Vec<u8>),
    /// Index into the machines other than the current one.
    Migrate(u8),
}

/// Draws a trace of `len` operations with at most [`MAX_MIGRATIONS`] migrations.
pub fn generate(rng: &mut SimRng, len: usize) -> Vec<TraceOp> {
    let mut migrations = 0;
    (0..len)
        .map(|_| loop {
            let op = match rng.gen_range(0..100) {
                0..=14 => TraceOp::Create,
                15..=54 => TraceOp::Increment(rng.gen()),
                55..=69 => TraceOp::Read(rng.gen()),
                70..=74 => TraceOp::Destroy(rng.gen()),
                75..=89 => {
                    let n = rng.gen_range(0..48);
                    TraceOp::Seal((0..n).map(|_| rng.gen()).collect())
                }
                _ => TraceOp::Migrate(rng.gen_range(0..2)),
            };
            if matches!(op, TraceOp::Migrate(_)) {
                if migrations == MAX_MIGRATIONS {
                    continue;
                }
                migrations += 1;
            }
            break op;
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraceStats {
    pub ops: usize,
    pub migrations: usize,
    pub increments: u64,
    pub unseals: u64,
}

struct Model {
    values: BTreeMap<u8, u32>,
    blobs: Vec<(Vec<u8>, Vec<u8>)>,
}

impl Model {
    fn pick(&self, i: u8) -> Option<u8> {
        if self.values.is_empty() {
            return None;
        }
        self.values.keys().nth(i as usize % self.values.len()).copied()
    }

    fn first_free(&self) -> Option<u8> {
        (0..SLOTS).map(|s| s as u8).find(|s| !self.values.contains_key(s))
    }
}

/// Runs one trace in a fresh simulation. Returns a description of the first
/// divergence from the model.
pub fn run(seed: u64, ops: &[TraceOp]) -> Result<TraceStats, String> {
    let mut sim = Simulation::new(seed);
    let fail = |step: usize, msg: String| format!("seed {seed} step {step}: {msg}");
    sim.add_operator("op").map_err(|e| e.to_string())?;
    for m in MACHINES {
        sim.add_machine(m, "op", MeKind::Genuine).map_err(|e| e.to_string())?;
    }
    sim.add_vm("vm", "A").map_err(|e| e.to_string())?;
    let start = |sim: &mut Simulation, init| {
        sim.start_enclave("app", "trace-app", "vendor", "vm", LibraryMode::Full, init, false)?;
        sim.run_until_quiescent().map(|_| ())
    };
    start(&mut sim, InitState::CreateNew).map_err(|e| e.to_string())?;

    let mut model = Model { values: BTreeMap::new(), blobs: Vec::new() };
    let mut here = 0usize;
    let mut stats = TraceStats { ops: ops.len(), ..Default::default() };
    for (step, op) in ops.iter().enumerate() {
        match op {
            TraceOp::Create => {
                let want = model.first_free();
                let got = sim.with_library("app", |lib, env| lib.create_counter(env)).map_err(|e| e.to_string())?;
                match (want, got) {
                    (Some(w), Ok((s, 0))) if s.0 == w => {
                        model.values.insert(w, 0);
                    }
                    (None, Err(LibError::CounterLimitExceeded)) => {}
                    (w, g) => return Err(fail(step, format!("create: model slot {w:?}, library {g:?}"))),
                }
            }
            TraceOp::Increment(i) => {
                let Some(slot) = model.pick(*i) else { continue };
                let got = sim
                    .with_library("app", |lib, env| lib.increment_counter(CounterSlot(slot), env))
                    .map_err(|e| e.to_string())?;
                let v = model.values.get_mut(&slot).expect("picked");
                *v += 1;
                stats.increments += 1;
                if got != Ok(*v) {
                    return Err(fail(step, format!("increment slot {slot}: model {v}, library {got:?}")));
                }
            }
            TraceOp::Read(i) => {
                let Some(slot) = model.pick(*i) else { continue };
                let got = sim
                    .with_library("app", |lib, env| lib.read_counter(CounterSlot(slot), env))
                    .map_err(|e| e.to_string())?;
                if got != Ok(model.values[&slot]) {
                    return Err(fail(step, format!("read slot {slot}: model {}, library {got:?}", model.values[&slot])));
                }
            }
            TraceOp::Destroy(i) => {
                let Some(slot) = model.pick(*i) else { continue };
                let got = sim
                    .with_library("app", |lib, env| lib.destroy_counter(CounterSlot(slot), env))
                    .map_err(|e| e.to_string())?;
                if got != Ok(()) {
                    return Err(fail(step, format!("destroy slot {slot}: {got:?}")));
                }
                model.values.remove(&slot);
            }
            TraceOp::Seal(pt) => {
                let blob = sim
                    .with_library("app", |lib, env| lib.seal_migratable(pt, b"trace", env.rng))
                    .map_err(|e| e.to_string())?
                    .map_err(|e| fail(step, format!("seal: {e:?}")))?;
                model.blobs.push((blob.to_bytes(), pt.clone()));
            }
            TraceOp::Migrate(k) => {
                let others: Vec<usize> = (0..MACHINES.len()).filter(|&m| m != here).collect();
                let to = others[*k as usize % others.len()];
                let before: BTreeMap<u8, u32> = model.values.clone();
                sim.migration_start("app", MACHINES[to]).map_err(|e| fail(step, e.to_string()))?;
                sim.run_until_quiescent().map_err(|e| e.to_string())?;
                sim.vm_migrate("vm", MACHINES[to]).map_err(|e| e.to_string())?;
                start(&mut sim, InitState::AwaitIncoming).map_err(|e| fail(step, e.to_string()))?;
                let phase = sim.instance("app").map_err(|e| e.to_string())?.library.phase();
                if phase != Phase::Operating {
                    return Err(fail(step, format!("migration to {} left the library {phase:?}", MACHINES[to])));
                }
                here = to;
                stats.migrations += 1;
                // Every live counter carries over unchanged; every blob still opens.
                for (slot, v) in &before {
                    let got = sim
                        .with_library("app", |lib, env| lib.read_counter(CounterSlot(*slot), env))
                        .map_err(|e| e.to_string())?;
                    if got != Ok(*v) {
                        return Err(fail(step, format!("after migration slot {slot}: model {v}, library {got:?}")));
                    }
                }
                for (bytes, pt) in &model.blobs {
                    let blob = SealedBlob::from_bytes(bytes).map_err(|e| e.to_string())?;
                    let got = sim.with_library("app", |lib, _| lib.unseal_migratable(&blob)).map_err(|e| e.to_string())?;
                    stats.unseals += 1;
                    if got.as_ref().map(|(p, _)| p) != Ok(pt) {
                        return Err(fail(step, format!("blob of {} bytes did not unseal: {got:?}", pt.len())));
                    }
                }
            }
        }
    }
    Ok(stats)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SuiteResult {
    pub traces: usize,
    pub failures: Vec<String>,
    pub totals: TraceStats,
    pub max_migrations: usize,
}

/// Runs `count` traces derived from `base_seed` on all available cores.
pub fn run_suite(count: usize, base_seed: u64, len: usize) -> SuiteResult {
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()).min(count.max(1));
    let results: Vec<SuiteResult> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                s.spawn(move || {
                    let mut r = SuiteResult::default();
                    for i in (t..count).step_by(threads) {
                        let seed = base_seed.wrapping_add(i as u64);
                        let mut rng = SimRng::seed_from_u64(seed ^ 0x7261_6365);
                        let ops = generate(&mut rng, len);
                        r.traces += 1;
                        match run(seed, &ops) {
                            Ok(st) => {
                                r.totals.ops += st.ops;
                                r.totals.migrations += st.migrations;
                                r.totals.increments += st.increments;
                                r.totals.unseals += st.unseals;
                                r.max_migrations = r.max_migrations.max(st.migrations);
                            }
                            Err(e) => r.failures.push(e),
                        }
                    }
                    r
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("trace worker panicked")).collect()
    });
    let mut all = SuiteResult::default();
    for r in results {
        all.traces += r.traces;
        all.failures.extend(r.failures);
        all.totals.ops += r.totals.ops;
        all.totals.migrations += r.totals.migrations;
        all.totals.increments += r.totals.increments;
        all.totals.unseals += r.totals.unseals;
        all.max_migrations = all.max_migrations.max(r.max_migrations);
    }
    all.failures.sort();
    all
}
