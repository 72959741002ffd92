// SPDX-License-Identifier: Apache-2.0

//! Deterministic simulated network and host environment.
//!
//! The transport is a discrete-event queue ordered by `(delivery tick,
//! send order)`, so envelopes between one pair of endpoints arrive FIFO
//! unless an adversary rule delays them. Every envelope passes the
//! [`AdversaryPolicy`] at send time and is appended to the adversary's
//! observation log.

pub mod adversary;
pub mod channel;
pub mod sim;
pub mod store;

pub use adversary::{Action, AdversaryPolicy, Rule, RuleMatch};
pub use channel::{AttestedChannel, ChannelError, Frame, FrameKind};
pub use sim::{MeKind, SimError, Simulation};
pub use store::{StoreError, VmStore};

use crate::crypto::Reader;
use crate::sgx::MachineId;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Endpoint number of a machine's migration enclave.
pub const ME_ENDPOINT: u16 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address {
    pub machine: MachineId,
    pub endpoint: u16,
}

impl Address {
    pub const ENCODED_LEN: usize = 10;

    pub fn new(machine: MachineId, endpoint: u16) -> Self {
        Self { machine, endpoint }
    }

    pub fn me_of(machine: MachineId) -> Self {
        Self { machine, endpoint: ME_ENDPOINT }
    }

    pub fn encode(&self) -> [u8; 10] {
        let mut out = [0u8; 10];
        out[..8].copy_from_slice(&self.machine.0.to_be_bytes());
        out[8..].copy_from_slice(&self.endpoint.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        let mut r = Reader::new(bytes);
        let machine = MachineId(r.u64()?);
        let endpoint = r.u16()?;
        r.is_empty().then_some(Self { machine, endpoint })
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.machine, self.endpoint)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub from: Address,
    pub to: Address,
    pub payload: Vec<u8>,
    pub deliver_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum NetError {
    #[error("unknown endpoint {0}")]
    UnknownEndpoint(Address),
}

/// What happened to one sent envelope, for the event log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SendOutcome {
    pub scheduled: usize,
    pub dropped: bool,
    pub injected: usize,
}

#[derive(Default)]
pub struct Network {
    now: u64,
    seq: u64,
    endpoints: BTreeSet<Address>,
    queue: BTreeMap<(u64, u64), Envelope>,
    policy: AdversaryPolicy,
    observed: Vec<Envelope>,
    recorded: Vec<Envelope>,
}

impl Network {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn register(&mut self, addr: Address) {
        self.endpoints.insert(addr);
    }

    pub fn unregister(&mut self, addr: &Address) {
        self.endpoints.remove(addr);
    }

    pub fn is_registered(&self, addr: &Address) -> bool {
        self.endpoints.contains(addr)
    }

    pub fn set_policy(&mut self, policy: AdversaryPolicy) {
        self.policy = policy;
    }

    pub fn policy(&self) -> &AdversaryPolicy {
        &self.policy
    }

    /// Every envelope ever sent, including ones the adversary dropped.
    pub fn observed(&self) -> &[Envelope] {
        &self.observed
    }

    /// Envelopes captured by `Record` rules.
    pub fn recorded(&self) -> &[Envelope] {
        &self.recorded
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    fn schedule(&mut self, from: Address, to: Address, payload: Vec<u8>, delay: u64) {
        let deliver_at = self.now + 1 + delay;
        self.seq += 1;
        self.queue.insert((deliver_at, self.seq), Envelope { from, to, payload, deliver_at });
    }

    pub fn send(&mut self, from: Address, to: Address, payload: Vec<u8>) -> Result<SendOutcome, NetError> {
        if !self.endpoints.contains(&to) {
            return Err(NetError::UnknownEndpoint(to));
        }
        self.observed.push(Envelope { from, to, payload: payload.clone(), deliver_at: self.now });
        let decision = self.policy.decide(&from, &to, &payload);
        if decision.record {
            self.recorded.push(Envelope { from, to, payload: payload.clone(), deliver_at: self.now });
        }
        let mut out = SendOutcome { scheduled: 0, dropped: false, injected: 0 };
        match decision.action {
            Action::Deliver | Action::Record => {
                self.schedule(from, to, payload, 0);
                out.scheduled = 1;
            }
            Action::Drop => out.dropped = true,
            Action::Duplicate(n) => {
                for _ in 0..=n {
                    self.schedule(from, to, payload.clone(), 0);
                }
                out.scheduled = n as usize + 1;
            }
            Action::Delay(k) => {
                self.schedule(from, to, payload, k);
                out.scheduled = 1;
            }
            Action::Inject(extra) => {
                self.schedule(from, to, payload, 0);
                self.schedule(from, to, extra, 0);
                out.scheduled = 1;
                out.injected = 1;
            }
            Action::Corrupt { offset_from_end } => {
                let mut p = payload;
                if let Some(i) = p.len().checked_sub(1 + offset_from_end) {
                    p[i] ^= 0x01;
                }
                self.schedule(from, to, p, 0);
                out.scheduled = 1;
            }
        }
        Ok(out)
    }

    /// Re-sends every recorded envelope unchanged, as an active replay.
    pub fn replay_recorded(&mut self) -> usize {
        let recorded = self.recorded.clone();
        for e in &recorded {
            self.schedule(e.from, e.to, e.payload.clone(), 0);
        }
        recorded.len()
    }

    /// Pops the next envelope in delivery order and advances the clock.
    pub fn step(&mut self) -> Option<Envelope> {
        let key = *self.queue.keys().next()?;
        let env = self.queue.remove(&key).expect("key present");
        self.now = self.now.max(env.deliver_at);
        Some(env)
    }

    /// Advances the clock by one tick outside message delivery.
    pub fn tick(&mut self) {
        self.now += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(m: u64, e: u16) -> Address {
        Address::new(MachineId(m), e)
    }

    fn net() -> Network {
        let mut n = Network::new();
        n.register(a(1, 0));
        n.register(a(2, 0));
        n
    }

    fn frame(kind: FrameKind, tag: u8) -> Vec<u8> {
        Frame::new(kind, vec![tag]).encode()
    }

    #[test]
    fn address_codec() {
        let x = a(0x0102, 7);
        assert_eq!(Address::decode(&x.encode()), Some(x));
        assert_eq!(Address::decode(&[0; 9]), None);
    }

    #[test]
    fn fifo_without_policy() {
        let mut n = net();
        for t in 0..5 {
            n.send(a(1, 0), a(2, 0), frame(FrameKind::Confirm, t)).unwrap();
        }
        let got: Vec<u8> = std::iter::from_fn(|| n.step()).map(|e| e.payload[5]).collect();
        assert_eq!(got, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn unknown_endpoint() {
        let mut n = net();
        assert_eq!(n.send(a(1, 0), a(9, 0), vec![]), Err(NetError::UnknownEndpoint(a(9, 0))));
    }

    #[test]
    fn drop_duplicate_delay() {
        let mut n = net();
        n.set_policy(AdversaryPolicy::new(vec![
            Rule::new(RuleMatch { kind: Some(FrameKind::Error), ..Default::default() }, Action::Drop),
            Rule::new(RuleMatch { kind: Some(FrameKind::Confirm), ..Default::default() }, Action::Duplicate(2)),
            Rule::new(RuleMatch { kind: Some(FrameKind::MigrationRecord), ..Default::default() }, Action::Delay(10)),
        ]));
        n.send(a(1, 0), a(2, 0), frame(FrameKind::MigrationRecord, 9)).unwrap();
        n.send(a(1, 0), a(2, 0), frame(FrameKind::Error, 1)).unwrap();
        n.send(a(1, 0), a(2, 0), frame(FrameKind::Confirm, 2)).unwrap();
        let got: Vec<u8> = std::iter::from_fn(|| n.step()).map(|e| e.payload[5]).collect();
        assert_eq!(got, vec![2, 2, 2, 9]);
        assert_eq!(n.observed().len(), 3);
    }

    #[test]
    fn record_is_non_terminal() {
        let mut n = net();
        n.set_policy(AdversaryPolicy::new(vec![
            Rule::new(RuleMatch::default(), Action::Record),
            Rule::new(RuleMatch::default(), Action::Drop).with_limit(1),
        ]));
        n.send(a(1, 0), a(2, 0), frame(FrameKind::Confirm, 1)).unwrap();
        n.send(a(1, 0), a(2, 0), frame(FrameKind::Confirm, 2)).unwrap();
        assert_eq!(n.recorded().len(), 2);
        let got: Vec<u8> = std::iter::from_fn(|| n.step()).map(|e| e.payload[5]).collect();
        assert_eq!(got, vec![2]);
        assert_eq!(n.replay_recorded(), 2);
        assert_eq!(n.pending(), 2);
    }
}
