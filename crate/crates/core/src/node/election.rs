//! Registry-node election among the members of a group.

use alloc::collections::BTreeMap;
use alloc::string::String;

use rand::Rng;

use crate::stanza::{Child, Stanza, StanzaKind};
use crate::time::Micros;

use super::device::{arm_watchdog, Membership};
use super::registry_role::{self, RegistryRole};
use super::wire::{attr_u64, capability_attrs, parse_capability};
use super::{CapabilityReport, Core, Report, TimerKey};

#[derive(Debug)]
pub(super) struct Election {
    round: u64,
    #[allow(dead_code)]
    started: Micros,
    /// Candidate id to (capability, replica epoch).
    candidates: BTreeMap<String, (CapabilityReport, u64)>,
    announced: bool,
}

/// Highest score wins; equal scores go to the smallest id.
pub fn election_winner<'a>(candidates: impl IntoIterator<Item = (&'a str, f64)>) -> Option<String> {
    let mut best: Option<(&str, f64)> = None;
    for (id, score) in candidates {
        best = match best {
            None => Some((id, score)),
            Some((bid, bs)) => {
                let better = score.total_cmp(&bs).then_with(|| bid.cmp(id)).is_gt();
                if better {
                    Some((id, score))
                } else {
                    Some((bid, bs))
                }
            }
        };
    }
    best.map(|(id, _)| id.into())
}

pub(super) fn start(core: &mut Core, group: &str, m: &mut Membership, willing: bool) {
    if m.election.is_some() {
        return;
    }
    m.election_round += 1;
    let round = m.election_round;
    m.election = Some(Election {
        round,
        started: core.now,
        candidates: BTreeMap::new(),
        announced: false,
    });
    core.report(Report::ElectionStarted { group: group.into() });
    if willing {
        let jitter = core.rng.gen_range(0..=core.cfg.detector.election_jitter_max);
        core.timer(
            core.now + jitter,
            TimerKey::ElectionAnnounce {
                group: group.into(),
                round,
            },
        );
    }
    core.timer(
        core.now + core.cfg.election_window,
        TimerKey::ElectionClose {
            group: group.into(),
            round,
        },
    );
}

pub(super) fn announce(core: &mut Core, m: &mut Membership, round: u64, caps: &CapabilityReport) {
    let me = core.id.clone();
    let epoch = m.epoch;
    let Some(e) = m.election.as_mut().filter(|e| e.round == round && !e.announced) else {
        return;
    };
    e.announced = true;
    e.candidates.insert(me, (*caps, epoch));
    let c = capability_attrs(Child::empty("candidate").attr("epoch", epoch), caps);
    let s = core.stanza(StanzaKind::Message, "election", m.channel.clone()).with(c);
    core.send(s);
}

pub(super) fn on_message(
    core: &mut Core,
    group: &str,
    m: &mut Membership,
    s: &Stanza,
    willing: bool,
    caps: &CapabilityReport,
) {
    let Some(c) = s.child("candidate") else { return };
    let Some(from) = s.from.device_node().map(String::from) else { return };
    if from == core.id {
        return;
    }
    if m.registry.is_some() {
        // still alive: tell the group right away
        let me = core.id.clone();
        registry_role::send_heartbeat(core, m, &me, caps);
        return;
    }
    let (Some(cap), Some(epoch)) = (parse_capability(c), attr_u64(c, "epoch")) else {
        return;
    };
    start(core, group, m, willing);
    if let Some(e) = m.election.as_mut() {
        e.candidates.insert(from, (cap, epoch));
    }
}

/// Closes the window; returns whether this node took over.
pub(super) fn close(core: &mut Core, group: &str, m: &mut Membership, round: u64) -> bool {
    if m.election.as_ref().map(|e| e.round) != Some(round) {
        return false;
    }
    let e = m.election.take().expect("checked");
    let w = core.cfg.weights;
    let winner = election_winner(e.candidates.iter().map(|(id, (c, _))| (id.as_str(), c.score(&w))));
    if winner.as_deref() != Some(core.id.as_str()) {
        m.last_heartbeat = core.now;
        arm_watchdog(core, m);
        return false;
    }
    let me = core.id.clone();
    let mut role = RegistryRole::default();
    for id in e.candidates.keys().filter(|id| **id != me) {
        role.add_member(id);
    }
    let providers: alloc::vec::Vec<String> = m.store.entries().map(|x| x.provider.clone()).collect();
    for p in providers.iter().filter(|p| **p != me) {
        role.add_member(p);
    }
    let top = e.candidates.values().map(|(_, ep)| *ep).max().unwrap_or(0);
    m.epoch = m.epoch.max(top) + 1;
    m.registry = Some(role);
    m.registry_node = Some(me);
    m.synced = true;
    let _ = group;
    registry_role::announce(core, m);
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn highest_score_then_smallest_id() {
        assert_eq!(election_winner([("b", 50.0), ("a", 40.0), ("c", 50.0)]), Some("b".into()));
        assert_eq!(election_winner([("z", 1.0)]), Some("z".into()));
        assert_eq!(election_winner(core::iter::empty()), None);
    }
}
