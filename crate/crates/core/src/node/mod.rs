//! Protocol roles as event-driven state machines.
//!
//! A [`Node`] consumes one [`Input`] at a time and returns the [`Output`]s it
//! produced: stanzas to send, channel subscriptions, timers and reports. It
//! never performs IO and never reads a clock other than the `now` it is
//! handed, so the same input sequence always yields the same outputs.
//!
//! Two node kinds exist. A navigator holds the group registry and classifies
//! requests into groups. A device hosts services (provider), asks for
//! services (consumer), or both; per joined group it keeps a replica of the
//! service registry and may hold the registry-node role for that group.

mod device;
mod election;
mod navigator;
mod registry_role;
pub mod wire;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classify::DomainTaxonomy;
use crate::registry::{Availability, RegistryStore, ServiceEntry};
use crate::stanza::{Identifier, Stanza, StanzaKind};
use crate::time::{ms, secs, Micros};

pub use device::{BindingInfo, ServiceChanges, ServiceSpec};
pub use election::election_winner;

/// Derived view of what a node currently does.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeRole {
    Navigator,
    RegistryNode(String),
    Provider(Vec<String>),
    Consumer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CapabilityReport {
    pub battery_pct: u8,
    pub network_strength: u8,
    pub hardware_score: u32,
    pub uptime_secs: u64,
}

impl Default for CapabilityReport {
    fn default() -> Self {
        CapabilityReport {
            battery_pct: 100,
            network_strength: 100,
            hardware_score: 50,
            uptime_secs: 3600,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CapabilityWeights {
    pub battery: f64,
    pub network: f64,
    pub hardware: f64,
    pub uptime: f64,
}

impl Default for CapabilityWeights {
    fn default() -> Self {
        CapabilityWeights {
            battery: 0.4,
            network: 0.3,
            hardware: 0.2,
            uptime: 0.1,
        }
    }
}

impl CapabilityReport {
    /// Hardware scores are a 1..=100 benchmark index; larger values clamp.
    pub fn normalized_hardware(&self) -> f64 {
        self.hardware_score.min(100) as f64
    }

    /// Weighted score in `[0, 100]`; uptime saturates at one day.
    pub fn score(&self, w: &CapabilityWeights) -> f64 {
        let battery = self.battery_pct.min(100) as f64;
        let network = self.network_strength.min(100) as f64;
        let uptime = self.uptime_secs.min(86_400) as f64 / 864.0;
        w.battery * battery + w.network * network + w.hardware * self.normalized_hardware() + w.uptime * uptime
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FailureDetectorConfig {
    pub heartbeat_period: Micros,
    pub miss_threshold: u32,
    /// Candidates announce after a uniform delay in `[0, election_jitter_max]`.
    pub election_jitter_max: Micros,
}

impl Default for FailureDetectorConfig {
    fn default() -> Self {
        FailureDetectorConfig {
            heartbeat_period: secs(5),
            miss_threshold: 3,
            election_jitter_max: ms(500),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub detector: FailureDetectorConfig,
    pub election_window: Micros,
    pub request_timeout: Micros,
    pub request_retries: u32,
    pub pull_period: Micros,
    pub weights: CapabilityWeights,
    pub battery_low_pct: u8,
    pub network_weak: u8,
    pub load_high_pct: u8,
    /// After a full resync, re-register owned services missing from the
    /// new registry node's store.
    pub reregister_on_resync: bool,
    /// Backoff before a timed-out registration starts over.
    pub register_backoff: Micros,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            detector: FailureDetectorConfig::default(),
            election_window: secs(2),
            request_timeout: secs(2),
            request_retries: 3,
            pull_period: secs(10),
            weights: CapabilityWeights::default(),
            battery_low_pct: 15,
            network_weak: 20,
            load_high_pct: 90,
            reregister_on_resync: true,
            register_backoff: secs(5),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("heartbeat period must be positive")]
    HeartbeatPeriod,
    #[error("miss threshold must be at least 1")]
    MissThreshold,
    #[error("request timeout must be positive")]
    RequestTimeout,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.detector.heartbeat_period == 0 {
            return Err(ConfigError::HeartbeatPeriod);
        }
        if self.detector.miss_threshold == 0 {
            return Err(ConfigError::MissThreshold);
        }
        if self.request_timeout == 0 {
            return Err(ConfigError::RequestTimeout);
        }
        Ok(())
    }

    /// Silence after which members declare the registry node lost.
    pub fn silence_limit(&self) -> Micros {
        self.detector.heartbeat_period * self.detector.miss_threshold as u64
    }

    /// Upper bound from loss detection to a new registry node.
    pub fn failover_bound(&self) -> Micros {
        self.silence_limit() + self.election_window + self.detector.election_jitter_max
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum PresenceCause {
    Manual,
    LowBattery,
    WeakNetwork,
    Overload,
    Heartbeat,
}

impl PresenceCause {
    pub fn as_str(self) -> &'static str {
        match self {
            PresenceCause::Manual => "manual",
            PresenceCause::LowBattery => "low_battery",
            PresenceCause::WeakNetwork => "weak_network",
            PresenceCause::Overload => "overload",
            PresenceCause::Heartbeat => "heartbeat",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeviceSignal {
    Battery(u8),
    Network(u8),
    Load(u8),
}

/// Application-level actions injected by a scenario.
#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    /// Register a service declared in the node's spec, by its local key.
    Register { service: String },
    Discover { text: String },
    /// One direct availability query to a group channel, skipping the navigator.
    Probe { group: String, text: String },
    SetPresence { service: String, status: Availability },
    Update { service: String, changes: ServiceChanges },
    Unregister { service: String },
    Bind { provider: String, service_id: String },
    /// Registry node pushes its current version to members.
    Share { group: String },
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum TimerKey {
    Request(String),
    NavPing,
    Heartbeat { group: String, gen: u64 },
    Watchdog { group: String, gen: u64 },
    Pull { group: String, gen: u64 },
    ElectionAnnounce { group: String, round: u64 },
    ElectionClose { group: String, round: u64 },
    RegisterRetry { service: String },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Input {
    /// Boot, or coming back up after a NodeDown.
    Start,
    Stanza(Stanza),
    Timer(TimerKey),
    Signal(DeviceSignal),
    Command(Command),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscoveryError {
    NoNavigator,
    NoRegistryNode,
    Interrupted,
}

impl fmt::Display for DiscoveryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiscoveryError::NoNavigator => "no navigator answered",
            DiscoveryError::NoRegistryNode => "no registry node answered",
            DiscoveryError::Interrupted => "interrupted by restart",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscoveryPath {
    /// Served from the local replica after a selective update.
    Replica,
    /// Served by the group's registry node.
    RegistryNode,
    /// Navigator then registry node.
    Navigator,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Report {
    Registered {
        service: String,
        service_id: String,
        group: String,
        started: Micros,
        latency: Micros,
    },
    RegistrationFailed {
        service: String,
        reason: String,
    },
    DiscoveryDone {
        search: u64,
        text: String,
        path: DiscoveryPath,
        results: Vec<ServiceEntry>,
        latency: Micros,
    },
    DiscoveryFailed {
        search: u64,
        text: String,
        error: DiscoveryError,
    },
    ProbeResult {
        group: String,
        entries: Vec<ServiceEntry>,
        latency: Micros,
    },
    ProbeFailed {
        group: String,
    },
    PresenceSent {
        service_id: String,
        status: Availability,
        cause: PresenceCause,
    },
    Updated {
        service: String,
    },
    UpdateNotFound {
        service: String,
    },
    Unregistered {
        service: String,
    },
    RequestFailed {
        service: String,
        reason: String,
    },
    Binding {
        service_id: String,
        result: Result<BindingInfo, String>,
    },
    Synced {
        group: String,
        epoch: u64,
        version: u64,
    },
    ElectionStarted {
        group: String,
    },
    BecameRegistry {
        group: String,
        epoch: u64,
    },
    Demoted {
        group: String,
    },
    GroupCreated {
        group: String,
        registrant: String,
    },
    GroupDropped {
        group: String,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Output {
    Send(Stanza),
    Subscribe(Identifier),
    Unsubscribe(Identifier),
    Timer { at: Micros, key: TimerKey },
    Report(Report),
}

/// Scenario-level description of one node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
    pub capability: CapabilityReport,
    /// Stands as a candidate in registry-node elections.
    pub willing: bool,
    pub services: Vec<ServiceSpec>,
    /// Navigator node ids this device contacts, in retry order.
    pub navigators: Vec<String>,
    /// Down at time zero; comes up only through a scripted event.
    pub start_down: bool,
}

impl NodeSpec {
    pub fn new(id: &str, kind: NodeKind) -> Self {
        NodeSpec {
            id: id.into(),
            kind,
            capability: CapabilityReport::default(),
            willing: true,
            services: Vec::new(),
            navigators: Vec::new(),
            start_down: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Navigator,
    Device,
}

#[derive(Clone, Debug, PartialEq)]
struct Pending {
    purpose: Purpose,
    stanza: Stanza,
    attempt: u32,
    max_attempts: u32,
    /// Attempt `i` goes to `targets[i % len]`; empty means keep `stanza.to`.
    targets: Vec<Identifier>,
    started: Micros,
}

#[derive(Clone, Debug, PartialEq)]
enum Purpose {
    NavPing { group: String },
    GroupQuery { flow: Flow },
    Register { service: String },
    Join { group: String },
    Pull { group: String },
    Search { search: u64, group: String },
    Probe { group: String },
    Update { service: String },
    Unregister { service: String },
}

#[derive(Clone, Debug, PartialEq)]
enum Flow {
    Register { service: String },
    Discover { search: u64 },
}

/// State shared by every role: identity, config, RNG, correlation table and
/// the output buffer of the input being handled.
struct Core {
    id: String,
    net: String,
    addr: Identifier,
    cfg: ProtocolConfig,
    rng: ChaCha8Rng,
    seq: u64,
    now: Micros,
    pending: BTreeMap<String, Pending>,
    out: Vec<Output>,
}

impl Core {
    fn next_id(&mut self) -> String {
        self.seq += 1;
        alloc::format!("{}.{}", self.id, self.seq)
    }

    fn stanza(&mut self, kind: StanzaKind, ty: &str, to: Identifier) -> Stanza {
        let id = self.next_id();
        Stanza::new(kind, id, ty, to, self.addr.clone())
    }

    fn send(&mut self, s: Stanza) {
        self.out.push(Output::Send(s));
    }

    fn timer(&mut self, at: Micros, key: TimerKey) {
        self.out.push(Output::Timer { at, key });
    }

    fn report(&mut self, r: Report) {
        self.out.push(Output::Report(r));
    }

    fn device_addr(&self, node: &str) -> Identifier {
        Identifier::device(node, &self.net).expect("node ids are validated tokens")
    }

    fn channel(&self, group: &str) -> Identifier {
        Identifier::group(group, &self.net).expect("group ids are validated tokens")
    }

    /// Sends an Iq request and tracks it for correlation and retries.
    fn request(&mut self, stanza: Stanza, purpose: Purpose, max_attempts: u32, targets: Vec<Identifier>) {
        let mut stanza = stanza;
        if let Some(t) = targets.first() {
            stanza.to = t.clone();
        }
        let id = stanza.id.clone();
        self.timer(self.now + self.cfg.request_timeout, TimerKey::Request(id.clone()));
        self.pending.insert(
            id,
            Pending {
                purpose,
                stanza: stanza.clone(),
                attempt: 0,
                max_attempts: max_attempts.max(1),
                targets,
                started: self.now,
            },
        );
        self.send(stanza);
    }

    fn retries(&self) -> u32 {
        self.cfg.request_retries + 1
    }

    /// Resends a timed-out request under a fresh id, or returns it when
    /// attempts are exhausted.
    fn on_request_timeout(&mut self, id: &str) -> Option<Pending> {
        let mut p = self.pending.remove(id)?;
        p.attempt += 1;
        if p.attempt >= p.max_attempts {
            return Some(p);
        }
        let new_id = self.next_id();
        p.stanza.id = new_id.clone();
        if !p.targets.is_empty() {
            p.stanza.to = p.targets[p.attempt as usize % p.targets.len()].clone();
        }
        self.timer(self.now + self.cfg.request_timeout, TimerKey::Request(new_id.clone()));
        self.send(p.stanza.clone());
        self.pending.insert(new_id, p);
        None
    }

    fn reply(&mut self, req: &Stanza, ty: &str) -> Stanza {
        Stanza::new(StanzaKind::Iq, req.id.clone(), ty, req.from.clone(), self.addr.clone())
    }

    fn pending_matching(&self, mut f: impl FnMut(&Purpose) -> bool) -> bool {
        self.pending.values().any(|p| f(&p.purpose))
    }
}

enum Role {
    Navigator(navigator::Navigator),
    Device(device::Device),
}

pub struct Node {
    core: Core,
    role: Role,
}

impl fmt::Debug for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Node")
            .field("id", &self.core.id)
            .field("roles", &self.roles())
            .finish()
    }
}

/// Read-only view of one group membership.
#[derive(Clone, Copy, Debug)]
pub struct MembershipView<'a> {
    pub group: &'a str,
    pub is_registry: bool,
    pub synced: bool,
    pub epoch: u64,
    pub registry_node: Option<&'a str>,
    pub store: &'a RegistryStore<ServiceEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum NodeError {
    #[error("node id `{0}` is not a valid token")]
    InvalidId(String),
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("service spec `{0}`: {1}")]
    InvalidService(String, &'static str),
}

impl Node {
    /// `seed` feeds this node's private RNG (election jitter).
    pub fn new(
        spec: &NodeSpec,
        net: &str,
        taxonomy: &DomainTaxonomy,
        cfg: ProtocolConfig,
        seed: u64,
    ) -> Result<Node, NodeError> {
        cfg.validate()?;
        let addr = Identifier::device(&spec.id, net).map_err(|_| NodeError::InvalidId(spec.id.clone()))?;
        if addr.service_id() != Some(spec.id.as_str()) {
            return Err(NodeError::InvalidId(spec.id.clone()));
        }
        let core = Core {
            id: spec.id.clone(),
            net: addr.net_id().to_string(),
            addr,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seq: 0,
            now: 0,
            pending: BTreeMap::new(),
            out: Vec::new(),
        };
        let role = match spec.kind {
            NodeKind::Navigator => Role::Navigator(navigator::Navigator::new(taxonomy.clone())),
            NodeKind::Device => Role::Device(device::Device::new(spec, &core, taxonomy.clone())?),
        };
        Ok(Node { core, role })
    }

    pub fn id(&self) -> &str {
        &self.core.id
    }

    pub fn address(&self) -> &Identifier {
        &self.core.addr
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.core.cfg
    }

    pub fn handle(&mut self, now: Micros, input: Input) -> Vec<Output> {
        self.core.now = self.core.now.max(now);
        match input {
            Input::Timer(TimerKey::Request(id)) => {
                if let Some(p) = self.core.on_request_timeout(&id) {
                    match &mut self.role {
                        Role::Navigator(n) => n.on_request_failed(&mut self.core, p),
                        Role::Device(d) => d.on_request_failed(&mut self.core, p),
                    }
                }
            }
            Input::Stanza(s) if s.is_iq_reply() => {
                // replies to anything we no longer wait for are dropped
                if let Some(p) = self.core.pending.remove(&s.id) {
                    match &mut self.role {
                        Role::Navigator(n) => n.on_reply(&mut self.core, p, s),
                        Role::Device(d) => d.on_reply(&mut self.core, p, s),
                    }
                }
            }
            input => match &mut self.role {
                Role::Navigator(n) => n.handle(&mut self.core, input),
                Role::Device(d) => d.handle(&mut self.core, input),
            },
        }
        core::mem::take(&mut self.core.out)
    }

    /// Called by the host when the node goes down; volatile state is lost.
    pub fn crash(&mut self) {
        self.core.pending.clear();
        self.core.out.clear();
        match &mut self.role {
            Role::Navigator(_) => {}
            Role::Device(d) => d.crash(),
        }
    }

    pub fn roles(&self) -> Vec<NodeRole> {
        match &self.role {
            Role::Navigator(_) => alloc::vec![NodeRole::Navigator],
            Role::Device(d) => d.roles(),
        }
    }

    pub fn is_navigator(&self) -> bool {
        matches!(self.role, Role::Navigator(_))
    }

    /// The group registry held by a navigator.
    pub fn group_registry(&self) -> Option<&RegistryStore<crate::registry::GroupEntry>> {
        match &self.role {
            Role::Navigator(n) => Some(&n.groups),
            Role::Device(_) => None,
        }
    }

    pub fn taxonomy(&self) -> &DomainTaxonomy {
        match &self.role {
            Role::Navigator(n) => &n.taxonomy,
            Role::Device(d) => &d.taxonomy,
        }
    }

    pub fn memberships(&self) -> Vec<MembershipView<'_>> {
        match &self.role {
            Role::Navigator(_) => Vec::new(),
            Role::Device(d) => d.views(),
        }
    }

    pub fn membership(&self, group: &str) -> Option<MembershipView<'_>> {
        self.memberships().into_iter().find(|m| m.group == group)
    }

    pub fn is_registry_for(&self, group: &str) -> bool {
        self.membership(group).is_some_and(|m| m.is_registry)
    }

    pub fn capability(&self) -> Option<CapabilityReport> {
        match &self.role {
            Role::Device(d) => Some(d.capability),
            Role::Navigator(_) => None,
        }
    }

    pub fn willing(&self) -> bool {
        match &self.role {
            Role::Device(d) => d.willing,
            Role::Navigator(_) => false,
        }
    }

    /// Availability this provider currently advertises for `service_id`.
    pub fn service_status(&self, service_id: &str) -> Option<Availability> {
        match &self.role {
            Role::Device(d) => d.service_status(service_id),
            Role::Navigator(_) => None,
        }
    }

    /// `(local key, registered service id, group)` for every owned service.
    pub fn owned_services(&self) -> Vec<(String, Option<String>, Option<String>)> {
        match &self.role {
            Role::Device(d) => d.owned(),
            Role::Navigator(_) => Vec::new(),
        }
    }

    /// Makes this device the registry node of `group` holding `entries`
    /// without any protocol exchange (scenario bootstrap).
    pub fn bootstrap_registry(
        &mut self,
        group: &crate::registry::GroupEntry,
        store: RegistryStore<ServiceEntry>,
        members: &[&str],
    ) -> bool {
        match &mut self.role {
            Role::Device(d) => {
                d.bootstrap_registry(&self.core, group, store, members);
                true
            }
            Role::Navigator(_) => false,
        }
    }

    /// Makes this device a synced member of `group` whose registry node is
    /// `registry` (scenario bootstrap).
    pub fn bootstrap_member(
        &mut self,
        group: &crate::registry::GroupEntry,
        store: RegistryStore<ServiceEntry>,
        registry: &str,
        epoch: u64,
    ) -> bool {
        match &mut self.role {
            Role::Device(d) => {
                d.bootstrap_member(&self.core, group, store, registry, epoch);
                true
            }
            Role::Navigator(_) => false,
        }
    }

    /// Marks a declared service as already registered under `service_id` in `group`.
    pub fn bootstrap_service(&mut self, key: &str, group: &crate::registry::GroupEntry, service_id: &str) -> bool {
        match &mut self.role {
            Role::Device(d) => d.bootstrap_service(key, group, service_id),
            Role::Navigator(_) => false,
        }
    }

    /// Adds a group entry to a navigator's registry (scenario bootstrap).
    pub fn bootstrap_group(&mut self, entry: crate::registry::GroupEntry) -> bool {
        match &mut self.role {
            Role::Navigator(n) => {
                n.bootstrap_group(entry);
                true
            }
            Role::Device(_) => false,
        }
    }
}

#[cfg(test)]
mod tests;
