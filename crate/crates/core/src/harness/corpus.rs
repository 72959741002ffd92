// SPDX-License-Identifier: Apache-2.0

//! Scenario files bundled into the binary.

use super::script::{Mode, Script};

macro_rules! bundle {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../scenarios/", $name, ".toml")))),*]
    };
}

pub const SCENARIOS: &[(&str, &str)] = bundle!(
    "normal_migration",
    "migrate_back",
    "fork_attack",
    "rollback_attack",
    "rollback_degenerate",
    "unauthorized_destination",
    "modified_me",
    "wrong_identity_receiver",
    "stale_buffer_replay",
    "me_crash_retry",
    "replay_local_channel",
    "replay_remote_channel",
    "key_substitution",
);

pub fn find(name: &str) -> Option<&'static str> {
    SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Modes a script is meant to run in: its pinned mode, or both.
pub fn modes(script: &Script) -> Vec<Mode> {
    match script.mode {
        Some(m) => vec![m],
        None => vec![Mode::Full, Mode::Baseline],
    }
}
