// SPDX-License-Identifier: Apache-2.0

use super::attest::{AttestationRoot, Quote, Report, ReportData};
use super::counter::{CounterOpStats, CounterRecord, CounterUuid};
use super::identity::{CpuSecret, EnclaveIdentity, MachineId};
use super::seal::{self, SealKeyPolicy, SealedBlob};
use super::SgxError;
use crate::crypto::{derive_key128, hmac_sha256, hmac_sha256_verify16, Key128};
use ed25519_dalek::{Signature, SigningKey};
use rand::{CryptoRng, RngCore};
use std::collections::BTreeMap;

/// Maximum number of live monotonic counters one enclave may own.
pub const MAX_COUNTERS_PER_ENCLAVE: usize = 256;

/// One simulated SGX machine: CPU secret, counter service and quoting key.
pub struct PlatformState {
    machine: MachineId,
    cpu_secret: CpuSecret,
    counters: BTreeMap<u32, CounterRecord>,
    next_counter_id: u32,
    quoting_key: SigningKey,
    quoting_cert: Signature,
    stats: CounterOpStats,
    destroy_faults: u32,
}

impl std::fmt::Debug for PlatformState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PlatformState")
            .field("machine", &self.machine)
            .field("counters", &self.counters.len())
            .field("next_counter_id", &self.next_counter_id)
            .finish_non_exhaustive()
    }
}

impl PlatformState {
    pub fn new<R: RngCore + CryptoRng>(machine: MachineId, root: &AttestationRoot, rng: &mut R) -> Self {
        let cpu_secret = CpuSecret::generate(rng);
        let quoting_key = SigningKey::generate(rng);
        let quoting_cert = root.certify_quoting_key(machine, &quoting_key.verifying_key());
        Self {
            machine,
            cpu_secret,
            counters: BTreeMap::new(),
            next_counter_id: 0,
            quoting_key,
            quoting_cert,
            stats: CounterOpStats::default(),
            destroy_faults: 0,
        }
    }

    pub fn machine(&self) -> MachineId {
        self.machine
    }

    pub fn counter_stats(&self) -> CounterOpStats {
        self.stats
    }

    /// Makes the next `n` destroy requests fail as if the platform service
    /// were unavailable.
    pub fn inject_destroy_faults(&mut self, n: u32) {
        self.destroy_faults = n;
    }

    pub fn quoting_key_bytes(&self) -> [u8; 32] {
        self.quoting_key.verifying_key().to_bytes()
    }

    // ---- sealing ---------------------------------------------------------

    pub fn derive_seal_key(&self, identity: &EnclaveIdentity, policy: SealKeyPolicy) -> Key128 {
        let digest = match policy {
            SealKeyPolicy::ByMrenclave => identity.mrenclave,
            SealKeyPolicy::ByMrsigner => identity.mrsigner,
        };
        derive_key128(self.cpu_secret.expose(), b"seal-key\0", &[&[policy.tag()], digest.as_bytes()])
    }

    /// Native sealing with the machine-bound key, the analogue of the SDK default.
    pub fn seal_data<R: RngCore + CryptoRng>(
        &self,
        identity: &EnclaveIdentity,
        policy: SealKeyPolicy,
        plaintext: &[u8],
        aad: &[u8],
        rng: &mut R,
    ) -> SealedBlob {
        seal::seal(&self.derive_seal_key(identity, policy), policy, plaintext, aad, rng)
    }

    pub fn unseal_data(
        &self,
        identity: &EnclaveIdentity,
        blob: &SealedBlob,
    ) -> Result<(Vec<u8>, Vec<u8>), SgxError> {
        seal::unseal(&self.derive_seal_key(identity, blob.policy), blob)
    }

    // ---- monotonic counters ---------------------------------------------

    fn live_count(&self, caller: &EnclaveIdentity) -> usize {
        self.counters
            .values()
            .filter(|c| !c.destroyed && c.owner == caller.mrenclave)
            .count()
    }

    fn lookup(&mut self, caller: &EnclaveIdentity, uuid: &CounterUuid) -> Result<&mut CounterRecord, SgxError> {
        match self.counters.get_mut(&uuid.counter_id) {
            Some(rec) if !rec.destroyed && rec.uuid.nonce == uuid.nonce && rec.owner == caller.mrenclave => {
                Ok(rec)
            }
            // Unknown id, destroyed, wrong nonce and wrong owner all look alike.
            _ => Err(SgxError::CounterNotFound),
        }
    }

    pub fn mc_create<R: RngCore + CryptoRng>(
        &mut self,
        caller: &EnclaveIdentity,
        rng: &mut R,
    ) -> Result<(CounterUuid, u32), SgxError> {
        self.stats.creates += 1;
        if self.live_count(caller) >= MAX_COUNTERS_PER_ENCLAVE {
            return Err(SgxError::CounterLimitExceeded);
        }
        let counter_id = self.next_counter_id;
        self.next_counter_id = counter_id.checked_add(1).ok_or(SgxError::CounterLimitExceeded)?;
        let mut nonce = [0u8; 8];
        rng.fill_bytes(&mut nonce);
        let uuid = CounterUuid { counter_id, nonce };
        self.counters.insert(
            counter_id,
            CounterRecord { uuid, owner: caller.mrenclave, value: 0, destroyed: false },
        );
        Ok((uuid, 0))
    }

    pub fn mc_read(&mut self, caller: &EnclaveIdentity, uuid: &CounterUuid) -> Result<u32, SgxError> {
        self.stats.reads += 1;
        Ok(self.lookup(caller, uuid)?.value)
    }

    pub fn mc_increment(&mut self, caller: &EnclaveIdentity, uuid: &CounterUuid) -> Result<u32, SgxError> {
        self.stats.increments += 1;
        let rec = self.lookup(caller, uuid)?;
        rec.value = rec.value.checked_add(1).ok_or(SgxError::CounterOverflow)?;
        Ok(rec.value)
    }

    pub fn mc_destroy(&mut self, caller: &EnclaveIdentity, uuid: &CounterUuid) -> Result<(), SgxError> {
        self.stats.destroys += 1;
        if self.destroy_faults > 0 {
            self.lookup(caller, uuid)?;
            self.destroy_faults -= 1;
            return Err(SgxError::ServiceUnavailable);
        }
        self.lookup(caller, uuid)?.destroyed = true;
        Ok(())
    }

    /// Every counter id ever allocated on this machine, in allocation order.
    pub fn allocated_counter_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.counters.keys().copied()
    }

    #[cfg(test)]
    pub(crate) fn force_counter_value(&mut self, counter_id: u32, value: u32) {
        self.counters.get_mut(&counter_id).expect("counter exists").value = value;
    }

    // ---- attestation -----------------------------------------------------

    fn report_key(&self, target: &EnclaveIdentity) -> [u8; 32] {
        hmac_sha256(self.cpu_secret.expose(), &[b"report-key\0", &target.encode()])
    }

    pub fn local_attest(
        &self,
        prover: &EnclaveIdentity,
        target: &EnclaveIdentity,
        report_data: &ReportData,
    ) -> Report {
        let key = self.report_key(target);
        let body = Report::body(prover, target, report_data);
        let full = hmac_sha256(&key, &[&body]);
        let mut mac = [0u8; 16];
        mac.copy_from_slice(&full[..16]);
        Report { prover: *prover, target: *target, report_data: *report_data, mac }
    }

    /// True iff the report was produced on this machine for `verifier`.
    pub fn verify_report(&self, verifier: &EnclaveIdentity, report: &Report) -> bool {
        if report.target != *verifier {
            return false;
        }
        let key = self.report_key(verifier);
        let body = Report::body(&report.prover, &report.target, &report.report_data);
        hmac_sha256_verify16(&key, &[&body], &report.mac)
    }

    pub fn get_quote(&self, prover: &EnclaveIdentity, report_data: &ReportData) -> Quote {
        Quote::sign(*prover, *report_data, self.machine, &self.quoting_key, &self.quoting_cert)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::SimRng;
    use crate::sgx::attest::verify_quote;
    use proptest::prelude::*;
    use rand::SeedableRng;

    struct Fixture {
        rng: SimRng,
        root: AttestationRoot,
    }

    fn fixture() -> Fixture {
        let mut rng = SimRng::seed_from_u64(11);
        let root = AttestationRoot::generate(&mut rng);
        Fixture { rng, root }
    }

    fn app(n: u32) -> EnclaveIdentity {
        EnclaveIdentity::measure(&format!("app-{n}"), "acme")
    }

    #[test]
    fn seal_key_is_deterministic_and_machine_bound() {
        let mut f = fixture();
        let a = PlatformState::new(MachineId(1), &f.root, &mut f.rng);
        let b = PlatformState::new(MachineId(2), &f.root, &mut f.rng);
        let id = app(0);
        assert_eq!(
            a.derive_seal_key(&id, SealKeyPolicy::ByMrenclave),
            a.derive_seal_key(&id, SealKeyPolicy::ByMrenclave)
        );
        assert_ne!(
            a.derive_seal_key(&id, SealKeyPolicy::ByMrenclave),
            b.derive_seal_key(&id, SealKeyPolicy::ByMrenclave)
        );
    }

    // 4 enclaves x 2 machines: all 8 BY_MRENCLAVE keys pairwise distinct.
    #[test]
    fn seal_keys_pairwise_distinct_over_fixture() {
        let mut f = fixture();
        let machines: Vec<PlatformState> =
            (0..2).map(|i| PlatformState::new(MachineId(i), &f.root, &mut f.rng)).collect();
        let mut keys = Vec::new();
        for m in &machines {
            for e in 0..4 {
                keys.push(m.derive_seal_key(&app(e), SealKeyPolicy::ByMrenclave));
            }
        }
        assert_eq!(keys.len(), 8);
        for i in 0..keys.len() {
            for j in i + 1..keys.len() {
                assert_ne!(keys[i], keys[j], "keys {i} and {j} collide");
            }
        }
    }

    #[test]
    fn mrsigner_policy_shares_key_across_code_versions() {
        let mut f = fixture();
        let p = PlatformState::new(MachineId(1), &f.root, &mut f.rng);
        let v1 = EnclaveIdentity::measure("app-v1", "acme");
        let v2 = EnclaveIdentity::measure("app-v2", "acme");
        let blob = p.seal_data(&v1, SealKeyPolicy::ByMrsigner, b"up", b"", &mut f.rng);
        assert_eq!(p.unseal_data(&v2, &blob).unwrap().0, b"up");
        let blob = p.seal_data(&v1, SealKeyPolicy::ByMrenclave, b"pin", b"", &mut f.rng);
        assert_eq!(p.unseal_data(&v2, &blob), Err(SgxError::AuthFailure));
    }

    // Flip each byte of the serialized blob in turn.
    #[test]
    fn every_byte_position_is_authenticated() {
        let mut f = fixture();
        let p = PlatformState::new(MachineId(1), &f.root, &mut f.rng);
        let id = app(0);
        let blob = p.seal_data(&id, SealKeyPolicy::ByMrenclave, b"persistent state", b"v=1", &mut f.rng);
        let bytes = blob.to_bytes();
        for i in 0..bytes.len() {
            let mut t = bytes.clone();
            t[i] ^= 0x01;
            if let Ok(parsed) = SealedBlob::from_bytes(&t) {
                assert_eq!(p.unseal_data(&id, &parsed), Err(SgxError::AuthFailure), "byte {i}");
            }
        }
    }

    #[test]
    fn counter_lifecycle() {
        let mut f = fixture();
        let mut p = PlatformState::new(MachineId(1), &f.root, &mut f.rng);
        let id = app(0);
        let (uuid, v) = p.mc_create(&id, &mut f.rng).unwrap();
        assert_eq!((uuid.counter_id, v), (0, 0));
        assert_eq!(p.mc_read(&id, &uuid), Ok(0));
        for _ in 0..3 {
            p.mc_increment(&id, &uuid).unwrap();
        }
        assert_eq!(p.mc_read(&id, &uuid), Ok(3));
        assert_eq!(p.mc_destroy(&id, &uuid), Ok(()));
        assert_eq!(p.mc_read(&id, &uuid), Err(SgxError::CounterNotFound));
        assert_eq!(p.mc_increment(&id, &uuid), Err(SgxError::CounterNotFound));
        assert_eq!(p.mc_destroy(&id, &uuid), Err(SgxError::CounterNotFound));
        let (again, _) = p.mc_create(&id, &mut f.rng).unwrap();
        assert!(again.counter_id > uuid.counter_id);
    }

    #[test]
    fn wrong_nonce_or_owner_is_not_found() {
        let mut f = fixture();
        let mut p = PlatformState::new(MachineId(1), &f.root, &mut f.rng);
        let (uuid, _) = p.mc_create(&app(0), &mut f.rng).unwrap();
        let mut forged = uuid;
        forged.nonce[0] ^= 1;
        assert_eq!(p.mc_read(&app(0), &forged), Err(SgxError::CounterNotFound));
        assert_eq!(p.mc_read(&app(1), &uuid), Err(SgxError::CounterNotFound));
    }

    #[test]
    fn increment_overflow_at_max() {
        let mut f = fixture();
        let mut p = PlatformState::new(MachineId(1), &f.root, &mut f.rng);
        let (uuid, _) = p.mc_create(&app(0), &mut f.rng).unwrap();
        p.force_counter_value(uuid.counter_id, u32::MAX);
        assert_eq!(p.mc_increment(&app(0), &uuid), Err(SgxError::CounterOverflow));
        assert_eq!(p.mc_read(&app(0), &uuid), Ok(u32::MAX));
    }

    #[test]
    fn limit_is_256_live_per_enclave() {
        let mut f = fixture();
        let mut p = PlatformState::new(MachineId(1), &f.root, &mut f.rng);
        let mut first = None;
        for _ in 0..MAX_COUNTERS_PER_ENCLAVE {
            let (u, _) = p.mc_create(&app(0), &mut f.rng).unwrap();
            first.get_or_insert(u);
        }
        assert_eq!(p.mc_create(&app(0), &mut f.rng), Err(SgxError::CounterLimitExceeded));
        // Other enclaves have their own budget.
        assert!(p.mc_create(&app(1), &mut f.rng).is_ok());
        p.mc_destroy(&app(0), &first.unwrap()).unwrap();
        assert!(p.mc_create(&app(0), &mut f.rng).is_ok());
    }

    #[test]
    fn injected_destroy_fault_leaves_counter_live() {
        let mut f = fixture();
        let mut p = PlatformState::new(MachineId(1), &f.root, &mut f.rng);
        let (u, _) = p.mc_create(&app(0), &mut f.rng).unwrap();
        p.inject_destroy_faults(1);
        assert_eq!(p.mc_destroy(&app(0), &u), Err(SgxError::ServiceUnavailable));
        assert_eq!(p.mc_read(&app(0), &u), Ok(0));
        assert_eq!(p.mc_destroy(&app(0), &u), Ok(()));
    }

    #[test]
    fn report_validates_on_exactly_one_platform() {
        let mut f = fixture();
        let a = PlatformState::new(MachineId(1), &f.root, &mut f.rng);
        let b = PlatformState::new(MachineId(2), &f.root, &mut f.rng);
        let (prover, target) = (app(0), app(1));
        let r = a.local_attest(&prover, &target, &[7; 64]);
        assert!(a.verify_report(&target, &r));
        assert!(!b.verify_report(&target, &r));
        assert!(!a.verify_report(&prover, &r));
        let mut t = r.clone();
        t.report_data[3] ^= 1;
        assert!(!a.verify_report(&target, &t));
        assert_eq!(Report::decode(&r.encode()).unwrap(), r);
    }

    #[test]
    fn quote_validates_under_exactly_one_root() {
        let mut f = fixture();
        let other_root = AttestationRoot::generate(&mut f.rng);
        let a = PlatformState::new(MachineId(1), &f.root, &mut f.rng);
        let q = a.get_quote(&app(0), &[1; 64]);
        assert_eq!(verify_quote(&f.root.verifying_key(), &q), Ok(app(0)));
        assert_eq!(verify_quote(&other_root.verifying_key(), &q), Err(SgxError::QuoteInvalid));
        let mut t = q.clone();
        t.report_data[0] ^= 1;
        assert_eq!(verify_quote(&f.root.verifying_key(), &t), Err(SgxError::QuoteInvalid));
        assert_eq!(Quote::decode(&q.encode()).unwrap(), q);
    }

    #[test]
    fn quote_from_uncertified_key_is_rejected() {
        let mut f = fixture();
        let rogue_key = SigningKey::generate(&mut f.rng);
        let rogue_root = AttestationRoot::generate(&mut f.rng);
        let cert = rogue_root.certify_quoting_key(MachineId(9), &rogue_key.verifying_key());
        let q = Quote::sign(app(0), [0; 64], MachineId(9), &rogue_key, &cert);
        assert_eq!(verify_quote(&f.root.verifying_key(), &q), Err(SgxError::QuoteInvalid));
    }

    proptest! {
        // Values observed for a live counter never decrease.
        #[test]
        fn live_counter_values_non_decreasing(ops in proptest::collection::vec(0u8..2, 1..200)) {
            let mut f = fixture();
            let mut p = PlatformState::new(MachineId(1), &f.root, &mut f.rng);
            let id = app(0);
            let (u, mut last) = p.mc_create(&id, &mut f.rng).unwrap();
            for op in ops {
                let v = if op == 0 { p.mc_read(&id, &u).unwrap() } else { p.mc_increment(&id, &u).unwrap() };
                prop_assert!(v >= last);
                last = v;
            }
        }

        #[test]
        fn counter_ids_never_repeat(ops in proptest::collection::vec(any::<bool>(), 1..300)) {
            let mut f = fixture();
            let mut p = PlatformState::new(MachineId(1), &f.root, &mut f.rng);
            let id = app(0);
            let mut live: Vec<CounterUuid> = Vec::new();
            let mut seen = std::collections::BTreeSet::new();
            for create in ops {
                if create || live.is_empty() {
                    if let Ok((u, _)) = p.mc_create(&id, &mut f.rng) {
                        prop_assert!(seen.insert(u.counter_id));
                        live.push(u);
                    }
                } else {
                    let u = live.remove(0);
                    p.mc_destroy(&id, &u).unwrap();
                }
            }
        }
    }
}
