// SPDX-License-Identifier: Apache-2.0

//! Property tests over the whole stack.

use enclave_migrate::crypto::SimRng;
use enclave_migrate::harness::traces::{self, TraceOp};
use enclave_migrate::netsim::channel::{establish_local_channel, establish_remote_channel, Frame, FrameKind};
use enclave_migrate::netsim::{ChannelError, VmStore};
use enclave_migrate::sgx::{AttestationRoot, EnclaveIdentity, MachineId, PlatformState};
use proptest::prelude::*;
use rand::SeedableRng;

fn op() -> impl Strategy<Value = TraceOp> {
    prop_oneof![
        2 => Just(TraceOp::Create),
        5 => any::<u8>().prop_map(TraceOp::Increment),
        2 => any::<u8>().prop_map(TraceOp::Read),
        1 => any::<u8>().prop_map(TraceOp::Destroy),
        2 => proptest::collection::vec(any::<u8>(), 0..32).prop_map(TraceOp::Seal),
        1 => (0u8..2).prop_map(TraceOp::Migrate),
    ]
}

fn trace() -> impl Strategy<Value = Vec<TraceOp>> {
    proptest::collection::vec(op(), 1..30).prop_filter("at most three migrations", |ops| {
        ops.iter().filter(|o| matches!(o, TraceOp::Migrate(_))).count() <= traces::MAX_MIGRATIONS
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn traces_agree_with_reference_model(seed in any::<u64>(), ops in trace()) {
        let r = traces::run(seed, &ops);
        prop_assert!(r.is_ok(), "{}", r.unwrap_err());
    }
}

proptest! {
    #[test]
    fn counter_ids_strictly_grow(seed in any::<u64>(), plan in proptest::collection::vec(any::<bool>(), 1..200)) {
        let mut rng = SimRng::seed_from_u64(seed);
        let root = AttestationRoot::generate(&mut rng);
        let mut p = PlatformState::new(MachineId(1), &root, &mut rng);
        let id = EnclaveIdentity::measure("c", "s");
        let mut live = Vec::new();
        let mut last = None;
        for create in plan {
            if create || live.is_empty() {
                let (uuid, v) = p.mc_create(&id, &mut rng).unwrap();
                prop_assert_eq!(v, 0);
                prop_assert!(last.map_or(true, |l| uuid.counter_id > l));
                last = Some(uuid.counter_id);
                live.push(uuid);
                if live.len() == 200 {
                    p.mc_destroy(&id, &live.remove(0)).unwrap();
                }
            } else {
                let uuid = live.swap_remove(0);
                p.mc_destroy(&id, &uuid).unwrap();
            }
        }
    }

    #[test]
    fn any_duplicated_channel_frame_is_rejected(seed in any::<u64>(), bodies in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..64), 1..8), dup in any::<prop::sample::Index>(), remote in any::<bool>()) {
        let mut rng = SimRng::seed_from_u64(seed);
        let root = AttestationRoot::generate(&mut rng);
        let pa = PlatformState::new(MachineId(1), &root, &mut rng);
        let pb = PlatformState::new(MachineId(2), &root, &mut rng);
        let (a, b) = (EnclaveIdentity::measure("a", "s"), EnclaveIdentity::measure("b", "s"));
        let (mut tx, mut rx) = if remote {
            establish_remote_channel(&pa, &a, &pb, &b, &root.verifying_key(), &mut rng).unwrap()
        } else {
            establish_local_channel(&pa, &a, &pa, &b, &mut rng).unwrap()
        };
        let wires: Vec<Vec<u8>> = bodies.iter().map(|body| tx.seal_frame(FrameKind::Confirm, body)).collect();
        for (w, body) in wires.iter().zip(&bodies) {
            let f = Frame::decode(w).unwrap();
            prop_assert_eq!(&rx.open_frame(&f).unwrap(), body);
        }
        let again = Frame::decode(&wires[dup.index(wires.len())]).unwrap();
        prop_assert!(matches!(rx.open_frame(&again), Err(ChannelError::Replay(_))));
    }

    #[test]
    fn vm_store_file_round_trips(entries in proptest::collection::btree_map("[a-z/]{0,24}", proptest::collection::vec(any::<u8>(), 0..64), 0..12)) {
        let mut s = VmStore::new();
        for (k, v) in &entries {
            s.put(k, v.clone());
        }
        let bytes = s.encode().unwrap();
        prop_assert_eq!(u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize, entries.len());
        prop_assert_eq!(VmStore::decode(&bytes).unwrap(), s);
    }
}
