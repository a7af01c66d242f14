//! Seeded discrete-event simulator.
//!
//! Events run in `(time, insertion sequence)` order against a virtual clock
//! in microseconds. Nodes exchange encoded stanza bytes over unicast device
//! addresses and multicast channels with per-receiver latency and loss
//! draws. Everything, including node RNG seeds, derives from the scenario
//! seed, so a scenario replays byte for byte.

mod invariants;
mod log;
mod metrics;
mod scenario;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::rc::Rc;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::node::{Command, Input, Node, NodeKind, Output, Report, TimerKey};
use crate::registry::{Availability, GroupEntry, RegistryStore, ServiceEntry};
use crate::stanza::{decode, encode, DEVICE_GROUP};
use crate::time::{Micros, MICROS_PER_SEC};

pub use invariants::{assert_invariants, FinalState, GroupState, Invariant, NodeState, Verdict};
pub use log::{LogEvent, LogKind, TrafficLog};
pub use metrics::{MetricsReport, Sample, METRICS_HEADER};
pub use scenario::{
    Action, ChannelModel, LinkModel, ProbeSpec, Scenario, ScenarioError, ScriptedEvent, DEFAULT_REQUEST_CAPACITY,
};

#[derive(Debug)]
enum Event {
    Deliver { to: String, from: String, bytes: Rc<[u8]> },
    Timer { node: String, incarnation: u64, key: TimerKey },
    Script(Action),
    Probe(usize),
}

struct SimNode {
    node: Node,
    up: bool,
    /// Bumped on every crash so timers armed before it are ignored.
    incarnation: u64,
    /// Start of the current one-second capacity window and requests taken in it.
    window: (Micros, u32),
}

/// A reported event with the node and time it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRecord {
    pub time: Micros,
    pub node: String,
    pub report: Report,
}

pub struct Simulation {
    now: Micros,
    seq: u64,
    queue: BTreeMap<(Micros, u64), Event>,
    nodes: BTreeMap<String, SimNode>,
    subs: BTreeMap<String, BTreeSet<String>>,
    channel: ChannelModel,
    partition: BTreeMap<String, usize>,
    rng: ChaCha8Rng,
    log: TrafficLog,
    metrics: MetricsReport,
    reports: Vec<ReportRecord>,
    probes: Vec<ProbeSpec>,
    bytes_sent: BTreeMap<String, u64>,
    duration: Micros,
    settle: Micros,
    capacity: u32,
    finished: bool,
}

/// Mixes the scenario seed with a node's position for its private RNG.
fn node_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let mut nodes = BTreeMap::new();
        for (i, spec) in scenario.nodes.iter().enumerate() {
            let node = Node::new(
                spec,
                &scenario.net,
                &scenario.taxonomy,
                scenario.protocol.clone(),
                node_seed(scenario.seed, i),
            )?;
            nodes.insert(
                spec.id.clone(),
                SimNode {
                    node,
                    up: false,
                    incarnation: 0,
                    window: (0, 0),
                },
            );
        }
        let mut sim = Simulation {
            now: 0,
            seq: 0,
            queue: BTreeMap::new(),
            nodes,
            subs: BTreeMap::new(),
            channel: scenario.channel.clone(),
            partition: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            log: TrafficLog::default(),
            metrics: MetricsReport::default(),
            reports: Vec::new(),
            probes: scenario.probes.clone(),
            bytes_sent: BTreeMap::new(),
            duration: scenario.duration,
            settle: scenario.settle_time(),
            capacity: scenario.request_capacity,
            finished: false,
        };
        for spec in scenario.nodes.iter().filter(|s| !s.start_down) {
            sim.push(0, Event::Script(Action::Up(spec.id.clone())));
        }
        for e in &scenario.events {
            sim.push(e.at, Event::Script(e.action.clone()));
        }
        for (i, p) in scenario.probes.iter().enumerate() {
            if p.start < scenario.duration {
                sim.push(p.start, Event::Probe(i));
            }
        }
        Ok(sim)
    }

    fn push(&mut self, at: Micros, e: Event) {
        self.seq += 1;
        self.queue.insert((at.max(self.now), self.seq), e);
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    pub fn duration(&self) -> Micros {
        self.duration
    }

    /// End of the settle period, where final state is taken.
    pub fn end_time(&self) -> Micros {
        self.duration + self.settle
    }

    pub fn schedule(&mut self, at: Micros, action: Action) -> Result<(), ScenarioError> {
        if let Some(n) = action.node() {
            if !self.nodes.contains_key(n) {
                return Err(ScenarioError::UnknownNode(n.into()));
            }
        }
        self.push(at, Event::Script(action));
        Ok(())
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id).map(|n| &n.node)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut Node> {
        self.nodes.get_mut(id).map(|n| &mut n.node)
    }

    pub fn is_up(&self, id: &str) -> bool {
        self.nodes.get(id).is_some_and(|n| n.up)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&str, &Node, bool)> {
        self.nodes.iter().map(|(k, n)| (k.as_str(), &n.node, n.up))
    }

    /// Up nodes currently holding the registry role for `group`.
    pub fn registry_nodes(&self, group: &str) -> Vec<String> {
        self.nodes
            .iter()
            .filter(|(_, n)| n.up && n.node.is_registry_for(group))
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn log(&self) -> &TrafficLog {
        &self.log
    }

    pub fn metrics(&self) -> &MetricsReport {
        &self.metrics
    }

    pub fn reports(&self) -> &[ReportRecord] {
        &self.reports
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    /// Installs an existing group without protocol traffic: every navigator
    /// learns `entry`, `registry` serves `services` and each member holds a
    /// synced replica. Call before the nodes start.
    pub fn bootstrap_group(
        &mut self,
        entry: &GroupEntry,
        registry: &str,
        members: &[&str],
        services: Vec<ServiceEntry>,
    ) -> Result<(), ScenarioError> {
        let mut store = RegistryStore::new();
        for s in services {
            store
                .upsert(s)
                .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        }
        for n in core::iter::once(&registry).chain(members) {
            if !self.nodes.contains_key(*n) {
                return Err(ScenarioError::UnknownNode((*n).into()));
            }
        }
        for n in self.nodes.values_mut().filter(|n| n.node.is_navigator()) {
            n.node.bootstrap_group(entry.clone());
        }
        for m in members.iter().filter(|m| **m != registry) {
            let node = &mut self.nodes.get_mut(*m).expect("checked").node;
            if !node.bootstrap_member(entry, store.clone(), registry, 1) {
                return Err(ScenarioError::Invalid(alloc::format!("`{m}` is not a device")));
            }
        }
        let node = &mut self.nodes.get_mut(registry).expect("checked").node;
        if !node.bootstrap_registry(entry, store, members) {
            return Err(ScenarioError::Invalid(alloc::format!("`{registry}` is not a device")));
        }
        Ok(())
    }

    /// Runs every event due at or before `t`, then sets the clock to `t`.
    pub fn run_until(&mut self, t: Micros) {
        while self.step_before(t) {}
        self.now = self.now.max(t);
    }

    /// Runs events until `pred` holds for a new report or `deadline` passes.
    pub fn run_until_report(&mut self, deadline: Micros, mut pred: impl FnMut(&ReportRecord) -> bool) -> Option<ReportRecord> {
        let mut seen = self.reports.len();
        while self.step_before(deadline) {
            if let Some(r) = self.reports[seen..].iter().find(|r| pred(r)) {
                return Some(r.clone());
            }
            seen = self.reports.len();
        }
        self.now = self.now.max(deadline);
        None
    }

    fn step_before(&mut self, t: Micros) -> bool {
        let Some((&(at, seq), _)) = self.queue.first_key_value() else {
            return false;
        };
        if at > t {
            return false;
        }
        let event = self.queue.remove(&(at, seq)).expect("present");
        self.now = at;
        self.dispatch(event);
        true
    }

    /// Runs to the end of the settle period and adds per-node traffic totals.
    pub fn finish(&mut self) {
        if self.finished {
            return;
        }
        let end = self.end_time();
        self.run_until(end);
        self.finished = true;
        let totals: Vec<(String, u64)> = self.bytes_sent.iter().map(|(k, v)| (k.clone(), *v)).collect();
        for (node, bytes) in totals {
            self.metrics.push("bytes_sent", &node, end, bytes as f64);
        }
    }

    pub fn final_state(&self) -> FinalState {
        let mut nodes = BTreeMap::new();
        for (id, n) in &self.nodes {
            let groups = n
                .node
                .memberships()
                .into_iter()
                .map(|m| {
                    (
                        m.group.to_string(),
                        GroupState {
                            is_registry: m.is_registry,
                            synced: m.synced,
                            epoch: m.epoch,
                            store: m.store.clone(),
                        },
                    )
                })
                .collect();
            nodes.insert(
                id.clone(),
                NodeState {
                    up: n.up,
                    navigator: n.node.is_navigator(),
                    groups,
                },
            );
        }
        FinalState { nodes }
    }

    fn dispatch(&mut self, event: Event) {
        match event {
            Event::Deliver { to, from, bytes } => self.deliver(&to, &from, bytes),
            Event::Timer { node, incarnation, key } => {
                let Some(n) = self.nodes.get(&node) else { return };
                if n.up && n.incarnation == incarnation {
                    self.input(&node, Input::Timer(key));
                }
            }
            Event::Script(a) => self.script(a),
            Event::Probe(i) => {
                let p = self.probes[i].clone();
                self.input(
                    &p.node,
                    Input::Command(Command::Probe {
                        group: p.group,
                        text: p.text,
                    }),
                );
                let next = self.now + p.every;
                if next < self.duration {
                    self.push(next, Event::Probe(i));
                }
            }
        }
    }

    fn script(&mut self, a: Action) {
        match a {
            Action::Up(id) => {
                let Some(n) = self.nodes.get_mut(&id) else { return };
                if n.up {
                    return;
                }
                n.up = true;
                self.log.push(self.now, LogKind::Up, &id, "-", Rc::from([]));
                self.input(&id, Input::Start);
            }
            Action::Down(id) => {
                let Some(n) = self.nodes.get_mut(&id) else { return };
                if !n.up {
                    return;
                }
                n.node.crash();
                n.up = false;
                n.incarnation += 1;
                self.log.push(self.now, LogKind::Down, &id, "-", Rc::from([]));
            }
            Action::Signal(id, s) => self.input(&id, Input::Signal(s)),
            Action::Command(id, c) => self.input(&id, Input::Command(c)),
            Action::Partition(sides) => {
                self.partition.clear();
                for (i, side) in sides.into_iter().enumerate() {
                    for n in side {
                        self.partition.insert(n, i);
                    }
                }
            }
            Action::Heal => self.partition.clear(),
        }
    }

    fn blocked(&self, a: &str, b: &str) -> bool {
        match (self.partition.get(a), self.partition.get(b)) {
            (Some(x), Some(y)) => x != y,
            _ => false,
        }
    }

    fn deliver(&mut self, to: &str, from: &str, bytes: Rc<[u8]>) {
        let now = self.now;
        let capacity = self.capacity;
        let Some(n) = self.nodes.get_mut(to) else { return };
        if !n.up {
            self.log.push(now, LogKind::Discard, from, to, bytes);
            return;
        }
        let Ok(stanza) = decode(&bytes) else {
            self.log.push(now, LogKind::Discard, from, to, bytes);
            return;
        };
        if stanza.is_iq_request() {
            let window = now / MICROS_PER_SEC * MICROS_PER_SEC;
            if n.window.0 != window {
                n.window = (window, 0);
            }
            if n.window.1 >= capacity {
                self.log.push(now, LogKind::Shed, from, to, bytes);
                return;
            }
            n.window.1 += 1;
        }
        self.log.push(now, LogKind::Deliver, from, to, bytes);
        self.input(to, Input::Stanza(stanza));
    }

    /// Feeds one input to an Up node and routes what it produced.
    fn input(&mut self, id: &str, input: Input) {
        let now = self.now;
        let Some(n) = self.nodes.get_mut(id) else { return };
        if !n.up {
            return;
        }
        let outs = n.node.handle(now, input);
        let incarnation = n.incarnation;
        for o in outs {
            match o {
                Output::Send(s) => self.send(id, s),
                Output::Subscribe(c) => {
                    self.subs.entry(c.to_string()).or_default().insert(id.into());
                }
                Output::Unsubscribe(c) => {
                    if let Some(s) = self.subs.get_mut(&c.to_string()) {
                        s.remove(id);
                    }
                }
                Output::Timer { at, key } => self.push(
                    at,
                    Event::Timer {
                        node: id.into(),
                        incarnation,
                        key,
                    },
                ),
                Output::Report(r) => self.record(id, r),
            }
        }
    }

    fn send(&mut self, from: &str, s: crate::stanza::Stanza) {
        let now = self.now;
        let to = s.to.to_string();
        let bytes: Rc<[u8]> = match encode(&s) {
            Ok(b) => b.into(),
            Err(_) => {
                self.log.push(now, LogKind::Discard, from, &to, Rc::from([]));
                return;
            }
        };
        self.log.push(now, LogKind::Send, from, &to, bytes.clone());
        *self.bytes_sent.entry(from.into()).or_default() += bytes.len() as u64;

        let bare = s.to.bare().to_string();
        let receivers: Vec<String> = if s.to.service_id().is_none() {
            self.subs
                .get(&bare)
                .map(|set| {
                    set.iter()
                        .filter(|r| r.as_str() != from && self.is_up(r))
                        .cloned()
                        .collect()
                })
                .unwrap_or_default()
        } else if s.to.group_id() == DEVICE_GROUP {
            s.to.device_node()
                .filter(|n| self.nodes.contains_key(*n))
                .map(|n| alloc::vec![n.to_string()])
                .unwrap_or_default()
        } else {
            Vec::new()
        };
        let link = self.channel.link(&bare).clone();
        for r in receivers {
            if self.blocked(from, &r) {
                self.log.push(now, LogKind::Blocked, from, &r, bytes.clone());
                continue;
            }
            if link.loss_prob > 0.0 && self.rng.gen::<f64>() < link.loss_prob {
                self.log.push(now, LogKind::Lost, from, &r, bytes.clone());
                continue;
            }
            let jitter = if link.jitter > 0 { self.rng.gen_range(0..=link.jitter) } else { 0 };
            self.push(
                now + link.base_latency + jitter,
                Event::Deliver {
                    to: r,
                    from: from.into(),
                    bytes: bytes.clone(),
                },
            );
        }
    }

    /// The availability a probe answer should have shown on arrival.
    fn true_status(&self, e: &ServiceEntry) -> Availability {
        match self.nodes.get(&e.provider) {
            Some(n) if n.up => n.node.service_status(&e.service_id).unwrap_or(Availability::Unavailable),
            _ => Availability::Unavailable,
        }
    }

    fn record(&mut self, node: &str, r: Report) {
        let t = self.now;
        let m = &mut self.metrics;
        match &r {
            Report::Registered { latency, .. } => m.push("reg_latency_us", node, t, *latency as f64),
            Report::RegistrationFailed { .. } => m.push("reg_failed", node, t, 1.0),
            Report::DiscoveryDone { latency, results, .. } => {
                m.push("discovery_latency_us", node, t, *latency as f64);
                m.push("discovery_results", node, t, results.len() as f64);
            }
            Report::DiscoveryFailed { .. } => m.push("discovery_failed", node, t, 1.0),
            Report::ProbeResult { entries, latency, .. } => {
                m.push("probe_latency_us", node, t, *latency as f64);
                let stale: Vec<bool> = entries.iter().map(|e| e.availability != self.true_status(e)).collect();
                for s in stale {
                    self.metrics.push("probe_stale", node, t, if s { 1.0 } else { 0.0 });
                }
            }
            Report::ProbeFailed { .. } => m.push("probe_failed", node, t, 1.0),
            Report::PresenceSent { .. } => m.push("presence_sent", node, t, 1.0),
            Report::ElectionStarted { .. } => m.push("election_started", node, t, 1.0),
            Report::BecameRegistry { epoch, .. } => m.push("became_registry", node, t, *epoch as f64),
            Report::Demoted { .. } => m.push("demoted", node, t, 1.0),
            Report::GroupCreated { .. } => m.push("group_created", node, t, 1.0),
            Report::GroupDropped { .. } => m.push("group_dropped", node, t, 1.0),
            _ => {}
        }
        self.reports.push(ReportRecord {
            time: t,
            node: node.into(),
            report: r,
        });
    }
}

/// Output of a complete run.
pub struct RunOutput {
    pub metrics: MetricsReport,
    pub log: TrafficLog,
    pub final_state: FinalState,
    pub reports: Vec<ReportRecord>,
}

/// Runs `scenario` through its duration and settle period.
pub fn run(scenario: &Scenario) -> Result<RunOutput, ScenarioError> {
    let mut sim = Simulation::new(scenario)?;
    sim.finish();
    let final_state = sim.final_state();
    Ok(RunOutput {
        metrics: core::mem::take(&mut sim.metrics),
        log: core::mem::take(&mut sim.log),
        reports: core::mem::take(&mut sim.reports),
        final_state,
    })
}

/// Devices declared in a scenario, in declaration order.
pub fn device_ids(scenario: &Scenario) -> Vec<&str> {
    scenario
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Device)
        .map(|n| n.id.as_str())
        .collect()
}
