// SPDX-License-Identifier: Apache-2.0

//! Deterministic network adversary: an ordered rule list evaluated at send
//! time. `Record` rules are non-terminal; the first matching terminal rule
//! decides the envelope's fate, and an envelope no rule matches is delivered.

use super::channel::{Frame, FrameKind};
use super::Address;
use crate::sgx::MachineId;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleMatch {
    pub from_machine: Option<MachineId>,
    pub to_machine: Option<MachineId>,
    pub from_endpoint: Option<u16>,
    pub to_endpoint: Option<u16>,
    pub kind: Option<FrameKind>,
}

impl RuleMatch {
    pub fn matches(&self, from: &Address, to: &Address, payload: &[u8]) -> bool {
        self.from_machine.map_or(true, |m| m == from.machine)
            && self.to_machine.map_or(true, |m| m == to.machine)
            && self.from_endpoint.map_or(true, |e| e == from.endpoint)
            && self.to_endpoint.map_or(true, |e| e == to.endpoint)
            && self.kind.map_or(true, |k| Frame::peek_kind(payload) == Some(k))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Deliver,
    Drop,
    /// Deliver the original plus `n` identical copies.
    Duplicate(u32),
    /// Deliver `k` ticks later than normal.
    Delay(u64),
    /// Deliver the original, then an adversary-chosen payload on the same route.
    Inject(Vec<u8>),
    /// Capture a copy; evaluation continues with later rules.
    Record,
    /// Flip the low bit of the byte `offset_from_end` positions before the end.
    Corrupt { offset_from_end: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub when: RuleMatch,
    pub action: Action,
    /// Remaining number of applications; `None` is unlimited.
    pub limit: Option<u32>,
}

impl Rule {
    pub fn new(when: RuleMatch, action: Action) -> Self {
        Self { when, action, limit: None }
    }

    pub fn with_limit(mut self, n: u32) -> Self {
        self.limit = Some(n);
        self
    }

    fn armed(&self) -> bool {
        self.limit != Some(0)
    }

    fn consume(&mut self) {
        if let Some(n) = self.limit.as_mut() {
            *n -= 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub action: Action,
    pub record: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdversaryPolicy {
    rules: Vec<Rule>,
}

impl AdversaryPolicy {
    pub fn new(rules: Vec<Rule>) -> Self {
        Self { rules }
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn push(&mut self, rule: Rule) {
        self.rules.push(rule);
    }

    pub fn decide(&mut self, from: &Address, to: &Address, payload: &[u8]) -> Decision {
        let mut record = false;
        for rule in &mut self.rules {
            if !rule.armed() || !rule.when.matches(from, to, payload) {
                continue;
            }
            rule.consume();
            if rule.action == Action::Record {
                record = true;
                continue;
            }
            return Decision { action: rule.action.clone(), record };
        }
        Decision { action: Action::Deliver, record }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_terminal_rule_wins_and_limits_expire() {
        let from = Address::new(MachineId(1), 0);
        let to = Address::new(MachineId(2), 0);
        let p = Frame::new(FrameKind::Confirm, vec![]).encode();
        let mut pol = AdversaryPolicy::new(vec![
            Rule::new(RuleMatch { to_machine: Some(MachineId(3)), ..Default::default() }, Action::Drop),
            Rule::new(RuleMatch { kind: Some(FrameKind::Confirm), ..Default::default() }, Action::Delay(4))
                .with_limit(1),
            Rule::new(RuleMatch::default(), Action::Duplicate(1)),
        ]);
        assert_eq!(pol.decide(&from, &to, &p).action, Action::Delay(4));
        assert_eq!(pol.decide(&from, &to, &p).action, Action::Duplicate(1));
    }

    #[test]
    fn endpoint_predicates() {
        let m = RuleMatch { from_endpoint: Some(3), ..Default::default() };
        let to = Address::new(MachineId(1), 0);
        assert!(m.matches(&Address::new(MachineId(1), 3), &to, &[]));
        assert!(!m.matches(&Address::new(MachineId(1), 4), &to, &[]));
    }
}
