use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::registry::{RegistryStore, ServiceEntry};
use crate::stanza::decode;

use super::log::{LogKind, TrafficLog};

#[derive(Clone, Debug, PartialEq)]
pub struct GroupState {
    pub is_registry: bool,
    pub synced: bool,
    pub epoch: u64,
    pub store: RegistryStore<ServiceEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    pub up: bool,
    pub navigator: bool,
    pub groups: BTreeMap<String, GroupState>,
}

/// Node states at the end of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FinalState {
    pub nodes: BTreeMap<String, NodeState>,
}

impl FinalState {
    pub fn groups(&self) -> BTreeSet<&str> {
        self.nodes
            .values()
            .flat_map(|n| n.groups.keys().map(String::as_str))
            .collect()
    }

    /// Up nodes holding the registry role for `group`.
    pub fn registry_nodes(&self, group: &str) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|(_, n)| n.up && n.groups.get(group).is_some_and(|g| g.is_registry))
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Invariant {
    SingleResponder,
    ReplyCorrelation,
    ReplicaConvergence,
    ElectionSafety,
}

impl Invariant {
    pub const ALL: [Invariant; 4] = [
        Invariant::SingleResponder,
        Invariant::ReplyCorrelation,
        Invariant::ReplicaConvergence,
        Invariant::ElectionSafety,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Invariant::SingleResponder => "single-responder",
            Invariant::ReplyCorrelation => "reply-correlation",
            Invariant::ReplicaConvergence => "replica-convergence",
            Invariant::ElectionSafety => "election-safety",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub invariant: Invariant,
    pub passed: bool,
    /// Log index of the first offending event, for log-based checks.
    pub event: Option<usize>,
    pub detail: String,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}", self.invariant.as_str(), if self.passed { "PASS" } else { "FAIL" })?;
        if let Some(i) = self.event {
            write!(f, "\tevent {i}")?;
        }
        if !self.detail.is_empty() {
            write!(f, "\t{}", self.detail)?;
        }
        Ok(())
    }
}

fn verdict(invariant: Invariant, failure: Option<(Option<usize>, String)>) -> Verdict {
    match failure {
        None => Verdict {
            invariant,
            passed: true,
            event: None,
            detail: String::new(),
        },
        Some((event, detail)) => Verdict {
            invariant,
            passed: false,
            event,
            detail,
        },
    }
}

/// Checks the traffic log and final states; one verdict per [`Invariant`].
pub fn assert_invariants(log: &TrafficLog, state: &FinalState) -> Vec<Verdict> {
    let (single, correlation) = check_replies(log);
    alloc::vec![
        verdict(Invariant::SingleResponder, single),
        verdict(Invariant::ReplyCorrelation, correlation),
        verdict(Invariant::ReplicaConvergence, check_convergence(state)),
        verdict(Invariant::ElectionSafety, check_election(state)),
    ]
}

type Failure = Option<(Option<usize>, String)>;

fn check_replies(log: &TrafficLog) -> (Failure, Failure) {
    // (request id, requester) -> sent to a group channel
    let mut requests: BTreeMap<(String, String), bool> = BTreeMap::new();
    let mut responder: BTreeMap<(String, String), String> = BTreeMap::new();
    let mut replied: BTreeSet<(String, String, String)> = BTreeSet::new();
    let mut single = None;
    let mut correlation = None;
    for (i, e) in log.iter().enumerate() {
        if e.kind != LogKind::Send {
            continue;
        }
        let Ok(s) = decode(&e.bytes) else { continue };
        if s.is_iq_request() {
            let to_group = s.to.service_id().is_none() && !s.to.is_navigators();
            requests.insert((s.id.clone(), e.from.clone()), to_group);
            continue;
        }
        if !s.is_iq_reply() {
            continue;
        }
        let requester = s.to.device_node().unwrap_or_default().to_string();
        let key = (s.id.clone(), requester);
        let Some(&to_group) = requests.get(&key) else {
            correlation.get_or_insert((Some(i), format!("reply {} from {} matches no request", s.id, e.from)));
            continue;
        };
        if !replied.insert((key.0.clone(), key.1.clone(), e.from.clone())) {
            correlation.get_or_insert((Some(i), format!("second reply to {} from {}", s.id, e.from)));
        }
        if to_group {
            let first = responder.entry(key).or_insert_with(|| e.from.clone());
            if *first != e.from {
                single.get_or_insert((
                    Some(i),
                    format!("group request {} answered by {} and {}", s.id, first, e.from),
                ));
            }
        }
    }
    (single, correlation)
}

fn check_convergence(state: &FinalState) -> Failure {
    for g in state.groups() {
        let regs = state.registry_nodes(g);
        let [reg] = regs.as_slice() else { continue };
        let truth = &state.nodes[*reg].groups[g].store;
        for (id, n) in &state.nodes {
            if !n.up || id == reg {
                continue;
            }
            if let Some(m) = n.groups.get(g) {
                if m.store != *truth {
                    return Some((
                        None,
                        format!(
                            "{id} replica of {g} at version {} differs from {reg} at version {}",
                            m.store.version(),
                            truth.version()
                        ),
                    ));
                }
            }
        }
    }
    None
}

fn check_election(state: &FinalState) -> Failure {
    for g in state.groups() {
        let regs = state.registry_nodes(g);
        if regs.len() > 1 {
            return Some((None, format!("{g} has registry nodes {}", regs.join(", "))));
        }
    }
    None
}
