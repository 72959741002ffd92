// SPDX-License-Identifier: Apache-2.0

//! Microbenchmarks: native simulated primitives against their migratable
//! counterparts, library initialization, and end-to-end migration latency.
//!
//! Each iteration times one call with a monotonic clock. Reports carry the
//! mean, sample standard deviation and the half-width of the 99% confidence
//! interval of the mean, `t(0.995, n-1) * s / sqrt(n)`. Pairs also carry the
//! relative overhead and a two-sided Welch t-test p-value.

use crate::crypto::SimRng;
use crate::migration_lib::{
    CounterSlot, EnclaveEnv, InitState, LibraryConfig, LibraryMode, MigrationData, MigrationLibrary, Phase,
};
use crate::netsim::sim::genuine_me_identity;
use crate::netsim::{Address, MeKind, SimError, Simulation};
use crate::sgx::{AttestationRoot, EnclaveIdentity, MachineId, PlatformState, SealKeyPolicy};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

pub const NOTE: &str = "Absolute timings come from simulated primitives and are not comparable to hardware \
measurements; no hardware figure is asserted.";

const CODE: &str = "bench-app";
const SIGNER: &str = "bench-vendor";
const PAYLOAD_LEN: usize = 128;
pub const LARGE_VALUE: u32 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpStats {
    pub name: String,
    pub iterations: usize,
    pub mean_ns: f64,
    pub sd_ns: f64,
    pub ci99_half_ns: f64,
}

impl OpStats {
    pub fn from_samples(name: &str, samples: &[f64]) -> Self {
        let n = samples.len();
        assert!(n >= 2, "need at least two samples");
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid dof").inverse_cdf(0.995);
        Self { name: name.into(), iterations: n, mean_ns: mean, sd_ns: sd, ci99_half_ns: t * sd / (n as f64).sqrt() }
    }

    fn well_formed(&self) -> bool {
        self.iterations >= 2
            && self.mean_ns.is_finite()
            && self.mean_ns >= 0.0
            && self.sd_ns.is_finite()
            && self.ci99_half_ns.is_finite()
            && self.ci99_half_ns >= 0.0
    }
}

/// Two-sided Welch t-test p-value for equal means.
pub fn welch_p(a: &OpStats, b: &OpStats) -> f64 {
    let (va, vb) = (a.sd_ns.powi(2) / a.iterations as f64, b.sd_ns.powi(2) / b.iterations as f64);
    let se = (va + vb).sqrt();
    if se == 0.0 {
        return if a.mean_ns == b.mean_ns { 1.0 } else { 0.0 };
    }
    let t = (a.mean_ns - b.mean_ns) / se;
    let df = (va + vb).powi(2)
        / (va.powi(2) / (a.iterations - 1) as f64 + vb.powi(2) / (b.iterations - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid dof");
    2.0 * (1.0 - dist.cdf(t.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub operation: String,
    pub native: OpStats,
    pub migratable: OpStats,
    /// `(migratable - native) / native`, from the means.
    pub relative_overhead: f64,
    pub welch_p: f64,
}

impl PairReport {
    fn new(operation: &str, native: OpStats, migratable: OpStats) -> Self {
        let relative_overhead = (migratable.mean_ns - native.mean_ns) / native.mean_ns;
        let welch_p = welch_p(&native, &migratable);
        Self { operation: operation.into(), native, migratable, relative_overhead, welch_p }
    }
}

/// Native counter work done on the destination during one migration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DestinationOps {
    pub creates: u64,
    pub reads: u64,
    pub increments: u64,
    pub destroys: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationLatency {
    pub counter_value: u32,
    pub latency: OpStats,
    /// Destination native counter operations, identical for every iteration.
    pub destination_ops: DestinationOps,
    pub destination_ops_constant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSuite {
    pub iterations: usize,
    pub note: String,
    pub pairs: Vec<PairReport>,
    pub init: Vec<OpStats>,
    pub migration: Vec<MigrationLatency>,
    pub migration_welch_p: f64,
}

pub const PAIR_OPERATIONS: [&str; 6] = ["create", "destroy", "increment", "read", "seal", "unseal"];

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("iterations must be at least 2")]
    TooFewIterations,
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
    #[error("{0}")]
    Unexpected(String),
}

struct Fixture {
    rng: SimRng,
    platform: PlatformState,
    identity: EnclaveIdentity,
}

impl Fixture {
    fn new(seed: u64) -> Self {
        let mut rng = SimRng::seed_from_u64(seed);
        let root = AttestationRoot::generate(&mut rng);
        let platform = PlatformState::new(MachineId(1), &root, &mut rng);
        Self { rng, platform, identity: EnclaveIdentity::measure(CODE, SIGNER) }
    }

    fn cfg(&self) -> LibraryConfig {
        LibraryConfig {
            identity: self.identity,
            mode: LibraryMode::Full,
            address: Address::new(MachineId(1), 1),
            me_address: Address::me_of(MachineId(1)),
            me_identity: genuine_me_identity(),
        }
    }

    fn library(&mut self) -> MigrationLibrary {
        let cfg = self.cfg();
        let mut env = EnclaveEnv { platform: &mut self.platform, rng: &mut self.rng };
        MigrationLibrary::init(cfg, None, InitState::CreateNew, &mut env).expect("fresh library")
    }
}

fn time<T>(f: impl FnOnce() -> T) -> (f64, T) {
    let t = Instant::now();
    let r = black_box(f());
    (t.elapsed().as_nanos() as f64, r)
}

fn native_pairs(n: usize, fx: &mut Fixture) -> [Vec<f64>; 6] {
    let id = fx.identity;
    let mut out: [Vec<f64>; 6] = Default::default();
    for _ in 0..n {
        let (t, (uuid, _)) = time(|| fx.platform.mc_create(&id, &mut fx.rng).expect("create"));
        out[0].push(t);
        let (t, _) = time(|| fx.platform.mc_destroy(&id, &uuid).expect("destroy"));
        out[1].push(t);
    }
    let (uuid, _) = fx.platform.mc_create(&id, &mut fx.rng).expect("create");
    let payload = vec![0x5au8; PAYLOAD_LEN];
    for _ in 0..n {
        out[2].push(time(|| fx.platform.mc_increment(&id, &uuid).expect("increment")).0);
        out[3].push(time(|| fx.platform.mc_read(&id, &uuid).expect("read")).0);
        let (t, blob) =
            time(|| fx.platform.seal_data(&id, SealKeyPolicy::ByMrenclave, &payload, b"bench", &mut fx.rng));
        out[4].push(t);
        out[5].push(time(|| fx.platform.unseal_data(&id, &blob).expect("unseal")).0);
    }
    fx.platform.mc_destroy(&id, &uuid).expect("destroy");
    out
}

fn migratable_pairs(n: usize, fx: &mut Fixture) -> [Vec<f64>; 6] {
    let mut lib = fx.library();
    let mut out: [Vec<f64>; 6] = Default::default();
    let mut env = EnclaveEnv { platform: &mut fx.platform, rng: &mut fx.rng };
    for _ in 0..n {
        let (t, (slot, _)) = time(|| lib.create_counter(&mut env).expect("create"));
        out[0].push(t);
        let (t, _) = time(|| lib.destroy_counter(slot, &mut env).expect("destroy"));
        out[1].push(t);
    }
    let (slot, _) = lib.create_counter(&mut env).expect("create");
    let payload = vec![0x5au8; PAYLOAD_LEN];
    for _ in 0..n {
        out[2].push(time(|| lib.increment_counter(slot, &mut env).expect("increment")).0);
        out[3].push(time(|| lib.read_counter(slot, &mut env).expect("read")).0);
        let (t, blob) = time(|| lib.seal_migratable(&payload, b"bench", env.rng).expect("seal"));
        out[4].push(t);
        out[5].push(time(|| lib.unseal_migratable(&blob).expect("unseal")).0);
    }
    out
}

fn init_samples(n: usize, fx: &mut Fixture) -> Vec<OpStats> {
    let cfg = fx.cfg();
    let (mut new, mut reload) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let mut env = EnclaveEnv { platform: &mut fx.platform, rng: &mut fx.rng };
        let (t, mut lib) = time(|| MigrationLibrary::init(cfg, None, InitState::CreateNew, &mut env).expect("init"));
        new.push(t);
        let buf = lib.take_persisted_buffer().expect("persisted");
        reload.push(time(|| MigrationLibrary::init(cfg, Some(&buf), InitState::Reload, &mut env).expect("reload")).0);
    }
    vec![OpStats::from_samples("init_new", &new), OpStats::from_samples("init_reload", &reload)]
}

/// Ping-pongs one enclave between two machines `n` times and times each
/// migration from `migration_start` until the destination library is
/// operating again.
pub fn migration_latency(n: usize, value: u32, seed: u64) -> Result<MigrationLatency, BenchError> {
    let mut sim = Simulation::new(seed);
    sim.add_operator("bench-op")?;
    let machines = ["A", "B"];
    for m in machines {
        sim.add_machine(m, "bench-op", MeKind::Genuine)?;
    }
    sim.add_vm("vm", "A")?;
    if value <= 1 {
        sim.start_enclave("app", CODE, SIGNER, "vm", LibraryMode::Full, InitState::CreateNew, false)?;
        sim.run_until_quiescent()?;
        sim.with_library("app", |lib, env| -> Result<(), crate::migration_lib::LibError> {
            let (slot, _) = lib.create_counter(env)?;
            for _ in 0..value {
                lib.increment_counter(slot, env)?;
            }
            Ok(())
        })?
        .map_err(SimError::from)?;
    } else {
        // Large values are installed as an offset, then incremented once.
        sim.start_enclave("app", CODE, SIGNER, "vm", LibraryMode::Full, InitState::AwaitIncoming, false)?;
        sim.run_until_quiescent()?;
        sim.with_library("app", |lib, env| -> Result<(), crate::migration_lib::LibError> {
            let mut data = MigrationData::empty(crate::crypto::Key128::random(env.rng));
            data.active[0] = true;
            data.values[0] = value - 1;
            lib.receive_incoming(&data, env)?;
            lib.increment_counter(CounterSlot(0), env)?;
            Ok(())
        })?
        .map_err(SimError::from)?;
    }
    let check = sim.with_library("app", |lib, env| lib.read_counter(CounterSlot(0), env))?;
    if check != Ok(value) {
        return Err(BenchError::Unexpected(format!("counter at {check:?}, wanted {value}")));
    }

    let mut samples = Vec::with_capacity(n);
    let mut ops: Option<DestinationOps> = None;
    let mut constant = true;
    for i in 0..n {
        let to = machines[(i + 1) % 2];
        let dest = sim.machine_id(to)?;
        let before = sim.platform(dest).counter_stats();
        let t = Instant::now();
        sim.migration_start("app", to)?;
        sim.run_until_quiescent()?;
        sim.vm_migrate("vm", to)?;
        sim.start_enclave("app", CODE, SIGNER, "vm", LibraryMode::Full, InitState::AwaitIncoming, false)?;
        sim.run_until_quiescent()?;
        samples.push(t.elapsed().as_nanos() as f64);
        if sim.instance("app")?.library.phase() != Phase::Operating {
            return Err(BenchError::Unexpected(format!("migration {i} did not complete")));
        }
        let d = sim.platform(dest).counter_stats() - before;
        let d = DestinationOps { creates: d.creates, reads: d.reads, increments: d.increments, destroys: d.destroys };
        match ops {
            None => ops = Some(d),
            Some(o) if o != d => constant = false,
            Some(_) => {}
        }
    }
    let after = sim.with_library("app", |lib, env| lib.read_counter(CounterSlot(0), env))?;
    if after != Ok(value) {
        return Err(BenchError::Unexpected(format!("counter at {after:?} after migrations, wanted {value}")));
    }
    Ok(MigrationLatency {
        counter_value: value,
        latency: OpStats::from_samples(&format!("migrate_value_{value}"), &samples),
        destination_ops: ops.unwrap_or_default(),
        destination_ops_constant: constant,
    })
}

pub fn run(iterations: usize, seed: u64) -> Result<BenchSuite, BenchError> {
    if iterations < 2 {
        return Err(BenchError::TooFewIterations);
    }
    let mut fx = Fixture::new(seed);
    let native = native_pairs(iterations, &mut fx);
    let mut fx = Fixture::new(seed);
    let migratable = migratable_pairs(iterations, &mut fx);
    let pairs = PAIR_OPERATIONS
        .iter()
        .enumerate()
        .map(|(i, op)| {
            PairReport::new(
                op,
                OpStats::from_samples(&format!("native_{op}"), &native[i]),
                OpStats::from_samples(&format!("migratable_{op}"), &migratable[i]),
            )
        })
        .collect();
    let mut fx = Fixture::new(seed);
    let init = init_samples(iterations, &mut fx);
    let small = migration_latency(iterations, 1, seed)?;
    let large = migration_latency(iterations, LARGE_VALUE, seed)?;
    let migration_welch_p = welch_p(&small.latency, &large.latency);
    Ok(BenchSuite { iterations, note: NOTE.into(), pairs, init, migration: vec![small, large], migration_welch_p })
}

impl BenchSuite {
    /// Structural and statistical checks on a finished run.
    pub fn check(&self) -> Result<(), String> {
        let ops: Vec<&str> = self.pairs.iter().map(|p| p.operation.as_str()).collect();
        if ops != PAIR_OPERATIONS {
            return Err(format!("operation pairs {ops:?}"));
        }
        let all = self
            .pairs
            .iter()
            .flat_map(|p| [&p.native, &p.migratable])
            .chain(&self.init)
            .chain(self.migration.iter().map(|m| &m.latency));
        for s in all {
            if !s.well_formed() || s.iterations != self.iterations {
                return Err(format!("{} is not well formed: {s:?}", s.name));
            }
        }
        for p in &self.pairs {
            if !p.relative_overhead.is_finite() || !(0.0..=1.0).contains(&p.welch_p) {
                return Err(format!("{}: overhead {} p {}", p.operation, p.relative_overhead, p.welch_p));
            }
        }
        if self.init.len() != 2 || self.migration.len() != 2 {
            return Err("missing init or migration reports".into());
        }
        let (a, b) = (&self.migration[0], &self.migration[1]);
        if !(a.destination_ops_constant && b.destination_ops_constant) || a.destination_ops != b.destination_ops {
            return Err(format!("destination ops differ: {:?} vs {:?}", a.destination_ops, b.destination_ops));
        }
        if a.destination_ops.creates != 1 || a.destination_ops.increments != 0 {
            return Err(format!("destination ops {:?}, want one create and no increment", a.destination_ops));
        }
        if self.note.is_empty() {
            return Err("missing note".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bench report serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let us = |ns: f64| ns / 1000.0;
        let mut s = String::new();
        let _ = writeln!(s, "benchmark, {} iterations per operation", self.iterations);
        let _ = writeln!(s, "note: {}\n", self.note);
        let _ = writeln!(
            s,
            "{:<10} {:>24} {:>24} {:>10} {:>8}",
            "operation", "native mean ± ci99 (us)", "migratable (us)", "overhead", "welch p"
        );
        for p in &self.pairs {
            let _ = writeln!(
                s,
                "{:<10} {:>14.3} ± {:<7.3} {:>14.3} ± {:<7.3} {:>9.1}% {:>8.3}",
                p.operation,
                us(p.native.mean_ns),
                us(p.native.ci99_half_ns),
                us(p.migratable.mean_ns),
                us(p.migratable.ci99_half_ns),
                p.relative_overhead * 100.0,
                p.welch_p
            );
        }
        let _ = writeln!(s);
        for i in &self.init {
            let _ = writeln!(s, "{:<12} {:>12.3} ± {:.3} us", i.name, us(i.mean_ns), us(i.ci99_half_ns));
        }
        let _ = writeln!(s);
        for m in &self.migration {
            let d = m.destination_ops;
            let _ = writeln!(
                s,
                "migration, counter at {:>10}: {:>10.3} ± {:.3} us; destination ops create={} read={} increment={} destroy={} (constant: {})",
                m.counter_value,
                us(m.latency.mean_ns),
                us(m.latency.ci99_half_ns),
                d.creates,
                d.reads,
                d.increments,
                d.destroys,
                m.destination_ops_constant
            );
        }
        let _ = writeln!(s, "migration latency, value 1 vs {LARGE_VALUE}: welch p = {:.3}", self.migration_welch_p);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_matches_hand_computation() {
        // n = 4, mean 2.5, s = sqrt(5/3); t(0.995, 3) = 5.8409 from tables.
        let s = OpStats::from_samples("x", &[1.0, 2.0, 3.0, 4.0]);
        assert!((s.mean_ns - 2.5).abs() < 1e-12);
        assert!((s.sd_ns - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let expected = 5.8409 * (5.0f64 / 3.0).sqrt() / 2.0;
        assert!((s.ci99_half_ns - expected).abs() < 1e-3, "{}", s.ci99_half_ns);
    }

    #[test]
    fn welch_p_extremes() {
        let a = OpStats::from_samples("a", &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!((welch_p(&a, &a) - 1.0).abs() < 1e-12);
        let b = OpStats::from_samples("b", &[101.0, 102.0, 103.0, 104.0, 105.0]);
        assert!(welch_p(&a, &b) < 1e-6);
    }

    #[test]
    fn small_run_is_well_formed() {
        let suite = run(8, 3).unwrap();
        suite.check().unwrap();
        assert!(suite.to_text().contains(NOTE));
        let back: BenchSuite = serde_json::from_str(&suite.to_json()).unwrap();
        assert_eq!(back.pairs.len(), 6);
    }
}
