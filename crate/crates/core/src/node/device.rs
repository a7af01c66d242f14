use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::classify::{match_group, DomainTaxonomy};
use crate::registry::{Availability, Entry, GroupEntry, Query, RegistryStore, ServiceEntry};
use crate::stanza::{Child, Identifier, Stanza, StanzaKind};
use crate::time::Micros;

use super::election::{self, Election};
use super::navigator::learn_terms;
use super::registry_role::{self, RegisterFields, RegistryRole};
use super::wire::{self, *};
use super::{
    CapabilityReport, Command, Core, DeviceSignal, DiscoveryError, DiscoveryPath, Flow, Input,
    MembershipView, NodeError, NodeRole, NodeSpec, Output, Pending, PresenceCause, Purpose, Report,
    TimerKey,
};

/// What a consumer needs to invoke a service, returned by the provider itself.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct BindingInfo {
    pub endpoint: String,
    /// `(name, type)` pairs.
    pub params: Vec<(String, String)>,
    pub returns: String,
    /// WSDL/WADL document URL.
    pub wsdl: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServiceSpec {
    /// Scenario-local handle for the service.
    pub key: String,
    pub name: String,
    pub description: String,
    pub location: Option<String>,
    pub info: BTreeMap<String, String>,
    /// Service id asked for at registration; the registry node picks one otherwise.
    pub propose_id: Option<String>,
    pub binding: BindingInfo,
    /// Register on first boot without a scripted command.
    pub autoregister: bool,
}

impl ServiceSpec {
    pub fn new(key: &str, name: &str, description: &str) -> Self {
        ServiceSpec {
            key: key.into(),
            name: name.into(),
            description: description.into(),
            location: None,
            info: BTreeMap::new(),
            propose_id: None,
            binding: BindingInfo::default(),
            autoregister: true,
        }
    }
}

/// Fields changed by an update; `None` leaves a field alone.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ServiceChanges {
    pub name: Option<String>,
    pub description: Option<String>,
    pub location: Option<String>,
    pub info: BTreeMap<String, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SvcState {
    Idle,
    Registering,
    Registered,
}

struct OwnedService {
    spec: ServiceSpec,
    group: Option<GroupEntry>,
    service_id: Option<String>,
    state: SvcState,
    manual: Availability,
    /// Presence sequence number; the registry node ignores older reports.
    seq: u64,
    reg_started: Option<Micros>,
    tokens: u64,
}

pub(super) struct Membership {
    pub entry: GroupEntry,
    pub channel: Identifier,
    pub store: RegistryStore<ServiceEntry>,
    pub epoch: u64,
    pub synced: bool,
    pub registry_node: Option<String>,
    pub registry: Option<RegistryRole>,
    pub last_heartbeat: Micros,
    pub hb_gen: u64,
    pub watch_gen: u64,
    pub pull_gen: u64,
    pub election: Option<Election>,
    pub election_round: u64,
    snapshot_rx: Option<SnapshotRx>,
    pull_waiters: Vec<u64>,
}

struct SnapshotRx {
    epoch: u64,
    version: u64,
    from: String,
    parts: BTreeMap<u32, String>,
    of: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SearchFlow {
    Consumer,
    ReplicaHit,
    ReplicaMiss,
}

struct Search {
    text: String,
    group: Option<String>,
    flow: SearchFlow,
    started: Micros,
}

pub(super) struct Device {
    pub capability: CapabilityReport,
    pub willing: bool,
    pub taxonomy: DomainTaxonomy,
    navigators: Vec<Identifier>,
    services: BTreeMap<String, OwnedService>,
    groups: BTreeMap<String, Membership>,
    triggers: BTreeSet<PresenceCause>,
    searches: BTreeMap<u64, Search>,
    next_search: u64,
    booted: bool,
}

fn effective(svc: &OwnedService, triggers: &BTreeSet<PresenceCause>) -> Availability {
    if svc.manual == Availability::Available && triggers.is_empty() {
        Availability::Available
    } else {
        Availability::Unavailable
    }
}

fn lookup_in_group(store: &RegistryStore<ServiceEntry>, group: &str, text: &str) -> Vec<ServiceEntry> {
    store
        .lookup(&Query::ByNameSubstring(text.into()))
        .into_iter()
        .filter(|e| e.in_group(group))
        .collect()
}

impl Device {
    pub fn new(spec: &NodeSpec, core: &Core, taxonomy: DomainTaxonomy) -> Result<Self, NodeError> {
        let mut services = BTreeMap::new();
        for s in &spec.services {
            if s.name.is_empty() || s.description.is_empty() {
                return Err(NodeError::InvalidService(s.key.clone(), "name and description are required"));
            }
            if let Some(p) = &s.propose_id {
                if !crate::stanza::is_token(&p.to_ascii_lowercase()) {
                    return Err(NodeError::InvalidService(s.key.clone(), "proposed id is not a token"));
                }
            }
            if services.contains_key(&s.key) {
                return Err(NodeError::InvalidService(s.key.clone(), "duplicate service key"));
            }
            services.insert(
                s.key.clone(),
                OwnedService {
                    spec: s.clone(),
                    group: None,
                    service_id: None,
                    state: SvcState::Idle,
                    manual: Availability::Available,
                    seq: 0,
                    reg_started: None,
                    tokens: 0,
                },
            );
        }
        let navigators = spec
            .navigators
            .iter()
            .map(|n| Identifier::device(n, &core.net).map_err(|_| NodeError::InvalidId(n.clone())))
            .collect::<Result<_, _>>()?;
        Ok(Device {
            capability: spec.capability,
            willing: spec.willing,
            taxonomy,
            navigators,
            services,
            groups: BTreeMap::new(),
            triggers: BTreeSet::new(),
            searches: BTreeMap::new(),
            next_search: 0,
            booted: false,
        })
    }

    // ---- views ---------------------------------------------------------

    pub fn roles(&self) -> Vec<NodeRole> {
        let mut roles: Vec<NodeRole> = self
            .groups
            .iter()
            .filter(|(_, m)| m.registry.is_some())
            .map(|(g, _)| NodeRole::RegistryNode(g.clone()))
            .collect();
        if !self.services.is_empty() || !self.groups.is_empty() {
            roles.push(NodeRole::Provider(self.groups.keys().cloned().collect()));
        }
        if self.services.is_empty() {
            roles.push(NodeRole::Consumer);
        }
        roles
    }

    pub fn views(&self) -> Vec<MembershipView<'_>> {
        self.groups
            .iter()
            .map(|(g, m)| MembershipView {
                group: g,
                is_registry: m.registry.is_some(),
                synced: m.synced,
                epoch: m.epoch,
                registry_node: m.registry_node.as_deref(),
                store: &m.store,
            })
            .collect()
    }

    pub fn service_status(&self, service_id: &str) -> Option<Availability> {
        self.services
            .values()
            .find(|s| s.state == SvcState::Registered && s.service_id.as_deref() == Some(service_id))
            .map(|s| effective(s, &self.triggers))
    }

    pub fn owned(&self) -> Vec<(String, Option<String>, Option<String>)> {
        self.services
            .iter()
            .map(|(k, s)| {
                let registered = s.state == SvcState::Registered;
                (
                    k.clone(),
                    s.service_id.clone().filter(|_| registered),
                    s.group.as_ref().map(|g| g.group_id.clone()),
                )
            })
            .collect()
    }

    // ---- bootstrap -----------------------------------------------------

    fn new_membership(&mut self, core: &Core, entry: &GroupEntry) -> &mut Membership {
        learn_terms(&mut self.taxonomy, entry);
        let g = entry.group_id.clone();
        self.groups.entry(g).or_insert_with(|| Membership {
            channel: core.channel(&entry.group_id),
            entry: entry.clone(),
            store: RegistryStore::new(),
            epoch: 0,
            synced: false,
            registry_node: None,
            registry: None,
            last_heartbeat: core.now,
            hb_gen: 0,
            watch_gen: 0,
            pull_gen: 0,
            election: None,
            election_round: 0,
            snapshot_rx: None,
            pull_waiters: Vec::new(),
        })
    }

    pub fn bootstrap_registry(
        &mut self,
        core: &Core,
        group: &GroupEntry,
        store: RegistryStore<ServiceEntry>,
        members: &[&str],
    ) {
        let me = core.id.clone();
        let m = self.new_membership(core, group);
        m.store = store;
        m.epoch = 1;
        m.synced = true;
        m.registry_node = Some(me.clone());
        let mut role = RegistryRole::default();
        for n in members.iter().filter(|n| **n != me) {
            role.add_member(n);
        }
        m.registry = Some(role);
    }

    pub fn bootstrap_member(
        &mut self,
        core: &Core,
        group: &GroupEntry,
        store: RegistryStore<ServiceEntry>,
        registry: &str,
        epoch: u64,
    ) {
        let m = self.new_membership(core, group);
        m.store = store;
        m.epoch = epoch;
        m.synced = true;
        m.registry_node = Some(registry.into());
    }

    pub fn bootstrap_service(&mut self, key: &str, group: &GroupEntry, service_id: &str) -> bool {
        let Some(svc) = self.services.get_mut(key) else {
            return false;
        };
        svc.group = Some(group.clone());
        svc.service_id = Some(service_id.into());
        svc.state = SvcState::Registered;
        true
    }

    // ---- lifecycle -----------------------------------------------------

    pub fn crash(&mut self) {
        self.searches.clear();
        for m in self.groups.values_mut() {
            m.election = None;
            m.snapshot_rx = None;
            m.pull_waiters.clear();
        }
    }

    fn start(&mut self, core: &mut Core) {
        let restart = self.booted;
        self.booted = true;
        let groups: Vec<String> = self.groups.keys().cloned().collect();
        for g in groups {
            let m = self.groups.get_mut(&g).expect("listed");
            if restart && m.registry.take().is_some() {
                m.registry_node = None;
                core.report(Report::Demoted { group: g.clone() });
            }
            core.out.push(Output::Subscribe(m.channel.clone()));
            m.last_heartbeat = core.now;
            arm_pull(core, m);
            if m.registry.is_some() {
                arm_heartbeat(core, m, core.now);
            } else {
                arm_watchdog(core, m);
            }
        }
        let keys: Vec<String> = self
            .services
            .iter()
            .filter(|(_, s)| match s.state {
                SvcState::Registering => true,
                SvcState::Idle => !restart && s.spec.autoregister,
                SvcState::Registered => false,
            })
            .map(|(k, _)| k.clone())
            .collect();
        for k in keys {
            self.start_registration(core, &k, true);
        }
    }

    pub fn handle(&mut self, core: &mut Core, input: Input) {
        match input {
            Input::Start => self.start(core),
            Input::Stanza(s) => self.on_stanza(core, s),
            Input::Timer(t) => self.on_timer(core, t),
            Input::Signal(sig) => self.on_signal(core, sig),
            Input::Command(c) => self.on_command(core, c),
        }
    }

    fn on_timer(&mut self, core: &mut Core, t: TimerKey) {
        match t {
            TimerKey::Pull { group, gen } => {
                let Some(m) = self.groups.get_mut(&group) else { return };
                if m.pull_gen != gen {
                    return;
                }
                arm_pull(core, m);
                if let Some(role) = m.registry.as_mut() {
                    registry_role::share(core, &m.channel, &m.store, m.epoch, role, false);
                } else if !m.synced {
                    join(core, &group, m);
                } else {
                    pull(core, &group, m);
                }
            }
            TimerKey::Heartbeat { group, gen } => {
                let me = core.id.clone();
                let Some(m) = self.groups.get_mut(&group) else { return };
                if m.hb_gen != gen || m.registry.is_none() {
                    return;
                }
                registry_role::tick(core, m, &me, &self.capability);
                let next = core.now + core.cfg.detector.heartbeat_period;
                arm_heartbeat(core, m, next);
            }
            TimerKey::Watchdog { group, gen } => {
                let Some(m) = self.groups.get_mut(&group) else { return };
                if m.watch_gen != gen || m.registry.is_some() {
                    return;
                }
                if core.now.saturating_sub(m.last_heartbeat) >= core.cfg.silence_limit() {
                    election::start(core, &group, m, self.willing);
                }
            }
            TimerKey::ElectionAnnounce { group, round } => {
                let Some(m) = self.groups.get_mut(&group) else { return };
                election::announce(core, m, round, &self.capability);
            }
            TimerKey::ElectionClose { group, round } => {
                let Some(m) = self.groups.get_mut(&group) else { return };
                if election::close(core, &group, m, round) {
                    self.after_takeover(core, &group);
                }
            }
            TimerKey::RegisterRetry { service } => {
                if self.services.get(&service).is_some_and(|s| s.state == SvcState::Registering) {
                    self.start_registration(core, &service, false);
                }
            }
            TimerKey::Request(_) | TimerKey::NavPing => {}
        }
    }

    /// Local follow-up once this device has become a group's registry node.
    fn after_takeover(&mut self, core: &mut Core, group: &str) {
        let now = core.now;
        if let Some(m) = self.groups.get_mut(group) {
            arm_heartbeat(core, m, now);
        }
        // our own services may be missing from a stale replica
        let keys: Vec<String> = self
            .services
            .iter()
            .filter(|(_, s)| {
                s.state == SvcState::Registered
                    && s.group.as_ref().is_some_and(|g| g.group_id == group)
                    && s.service_id.as_ref().is_some_and(|id| {
                        self.groups.get(group).is_some_and(|m| !m.store.contains(id))
                    })
            })
            .map(|(k, _)| k.clone())
            .collect();
        for k in keys {
            self.go_register(core, &k);
        }
        self.push_own_status(core, group);
    }

    /// Writes the current status of our own services into the store we serve.
    fn push_own_status(&mut self, core: &mut Core, group: &str) {
        let Some(m) = self.groups.get_mut(group) else { return };
        let Some(role) = m.registry.as_mut() else { return };
        for s in self.services.values() {
            if s.state != SvcState::Registered || s.group.as_ref().map(|g| g.group_id.as_str()) != Some(group) {
                continue;
            }
            if let Some(id) = &s.service_id {
                role.apply_status(&mut m.store, id, effective(s, &self.triggers), s.seq);
            }
        }
        let _ = core;
    }

    // ---- commands ------------------------------------------------------

    fn on_command(&mut self, core: &mut Core, cmd: Command) {
        match cmd {
            Command::Register { service } => {
                if !self.services.contains_key(&service) {
                    core.report(Report::RegistrationFailed {
                        service,
                        reason: "unknown service".into(),
                    });
                } else if self.services[&service].state == SvcState::Idle {
                    self.start_registration(core, &service, true);
                }
            }
            Command::Discover { text } => self.discover(core, text),
            Command::Probe { group, text } => {
                let to = core.channel(&group);
                let s = core
                    .stanza(StanzaKind::Iq, "get", to)
                    .with(Child::new(OP_SEARCH, text));
                core.request(s, Purpose::Probe { group }, 1, Vec::new());
            }
            Command::SetPresence { service, status } => {
                let Some(svc) = self.services.get_mut(&service) else {
                    core.report(Report::RequestFailed {
                        service,
                        reason: "unknown service".into(),
                    });
                    return;
                };
                svc.manual = status;
                if svc.state == SvcState::Registered {
                    self.send_presence(core, &service, PresenceCause::Manual);
                }
            }
            Command::Update { service, changes } => self.update(core, service, changes),
            Command::Unregister { service } => self.unregister(core, service),
            Command::Bind { provider, service_id } => {
                let to = core.device_addr(&provider);
                let s = core
                    .stanza(StanzaKind::Message, "binding", to)
                    .with(Child::empty("bind").attr("service", service_id.as_str()));
                core.send(s);
            }
            Command::Share { group } => {
                if let Some(m) = self.groups.get_mut(&group) {
                    if let Some(role) = m.registry.as_mut() {
                        registry_role::share(core, &m.channel, &m.store, m.epoch, role, true);
                    }
                }
            }
        }
    }

    fn on_signal(&mut self, core: &mut Core, sig: DeviceSignal) {
        let before: BTreeMap<String, Availability> = self
            .services
            .iter()
            .map(|(k, s)| (k.clone(), effective(s, &self.triggers)))
            .collect();
        let (cause, active) = match sig {
            DeviceSignal::Battery(v) => {
                self.capability.battery_pct = v.min(100);
                (PresenceCause::LowBattery, v < core.cfg.battery_low_pct)
            }
            DeviceSignal::Network(v) => {
                self.capability.network_strength = v.min(100);
                (PresenceCause::WeakNetwork, v < core.cfg.network_weak)
            }
            DeviceSignal::Load(v) => (PresenceCause::Overload, v > core.cfg.load_high_pct),
        };
        if active {
            self.triggers.insert(cause);
        } else {
            self.triggers.remove(&cause);
        }
        let changed: Vec<String> = self
            .services
            .iter()
            .filter(|(k, s)| s.state == SvcState::Registered && before[*k] != effective(s, &self.triggers))
            .map(|(k, _)| k.clone())
            .collect();
        for k in changed {
            self.send_presence(core, &k, cause);
        }
    }

    fn send_presence(&mut self, core: &mut Core, key: &str, cause: PresenceCause) {
        let Some(svc) = self.services.get_mut(key) else { return };
        let (Some(sid), Some(group)) = (svc.service_id.clone(), svc.group.clone()) else {
            return;
        };
        svc.seq += 1;
        let status = effective(svc, &self.triggers);
        let seq = svc.seq;
        core.report(Report::PresenceSent {
            service_id: sid.clone(),
            status,
            cause,
        });
        if let Some(m) = self.groups.get_mut(&group.group_id) {
            if let Some(role) = m.registry.as_mut() {
                role.apply_status(&mut m.store, &sid, status, seq);
                return;
            }
        }
        let Ok(from) = core.channel(&group.group_id).with_service(&sid) else { return };
        let id = core.next_id();
        let ty = if status == Availability::Available { "available" } else { "unavailable" };
        let s = Stanza::new(StanzaKind::Presence, id, ty, core.channel(&group.group_id), from)
            .with(Child::new("status", status.status_text()).attr("seq", seq))
            .with(Child::new("cause", cause.as_str()));
        core.send(s);
    }

    // ---- registration --------------------------------------------------

    /// `fresh` resets the latency clock; retries keep the original start.
    fn start_registration(&mut self, core: &mut Core, key: &str, fresh: bool) {
        let Some(svc) = self.services.get_mut(key) else { return };
        svc.state = SvcState::Registering;
        if fresh || svc.reg_started.is_none() {
            svc.reg_started.get_or_insert(core.now);
        }
        if self.navigators.is_empty() {
            if let Some(g) = svc.group.clone() {
                if self.groups.contains_key(&g.group_id) {
                    self.go_register(core, key);
                    return;
                }
            }
            svc.state = SvcState::Idle;
            svc.reg_started = None;
            core.report(Report::RegistrationFailed {
                service: key.into(),
                reason: "no navigator configured".into(),
            });
            return;
        }
        let desc = svc.spec.description.clone();
        let s = core
            .stanza(StanzaKind::Iq, "get", self.navigators[0].clone())
            .with(Child::new(OP_QUERY, desc).attr("purpose", "register"));
        let tries = core.retries();
        core.request(
            s,
            Purpose::GroupQuery {
                flow: Flow::Register { service: key.into() },
            },
            tries,
            self.navigators.clone(),
        );
    }

    fn ensure_membership(&mut self, core: &mut Core, entry: &GroupEntry, grant: bool) {
        let me = core.id.clone();
        let exists = self.groups.contains_key(&entry.group_id);
        let m = self.new_membership(core, entry);
        if grant && m.registry.is_none() {
            m.registry = Some(RegistryRole::default());
            m.registry_node = Some(me);
            m.synced = true;
            m.epoch = m.epoch.max(1);
            let now = core.now;
            arm_heartbeat(core, m, now);
            core.report(Report::BecameRegistry {
                group: entry.group_id.clone(),
                epoch: m.epoch,
            });
        }
        if !exists {
            core.out.push(Output::Subscribe(m.channel.clone()));
            m.last_heartbeat = core.now;
            arm_pull(core, m);
            if m.registry.is_none() {
                arm_watchdog(core, m);
            }
        }
    }

    fn go_register(&mut self, core: &mut Core, key: &str) {
        let me = core.id.clone();
        let Some(svc) = self.services.get_mut(key) else { return };
        let Some(group) = svc.group.clone() else { return };
        svc.state = SvcState::Registering;
        svc.reg_started.get_or_insert(core.now);
        svc.tokens += 1;
        let fields = RegisterFields {
            name: svc.spec.name.clone(),
            description: svc.spec.description.clone(),
            provider: me.clone(),
            propose: svc.service_id.clone().or_else(|| svc.spec.propose_id.clone()),
            location: svc.spec.location.clone(),
            info: svc.spec.info.clone(),
            token: Some(alloc::format!("{me}.{key}.{}", svc.tokens)),
        };
        let Some(m) = self.groups.get_mut(&group.group_id) else { return };
        if let Some(role) = m.registry.as_mut() {
            let res = role.register(&mut m.store, &m.channel, &fields, &me);
            match res {
                Ok((sid, _)) => self.on_registered(core, key, sid),
                Err(cond) => self.registration_failed(core, key, cond),
            }
            return;
        }
        let s = core.stanza(StanzaKind::Iq, "set", m.channel.clone());
        let s = registry_role::register_stanza(s, &fields);
        let tries = core.retries();
        core.request(s, Purpose::Register { service: key.into() }, tries, Vec::new());
    }

    fn on_registered(&mut self, core: &mut Core, key: &str, sid: String) {
        let Some(svc) = self.services.get_mut(key) else { return };
        let Some(group) = svc.group.clone() else { return };
        svc.service_id = Some(sid.clone());
        svc.state = SvcState::Registered;
        let started = svc.reg_started.take().unwrap_or(core.now);
        let status = effective(svc, &self.triggers);
        core.report(Report::Registered {
            service: key.into(),
            service_id: sid,
            group: group.group_id.clone(),
            started,
            latency: core.now - started,
        });
        if let Some(m) = self.groups.get_mut(&group.group_id) {
            if m.registry.is_none() && !m.synced {
                join(core, &group.group_id, m);
            }
        }
        if status != Availability::Available {
            self.send_presence(core, key, PresenceCause::Manual);
        }
    }

    fn registration_failed(&mut self, core: &mut Core, key: &str, reason: &str) {
        if let Some(svc) = self.services.get_mut(key) {
            svc.state = SvcState::Idle;
            svc.reg_started = None;
        }
        core.report(Report::RegistrationFailed {
            service: key.into(),
            reason: reason.into(),
        });
    }

    fn update(&mut self, core: &mut Core, key: String, changes: ServiceChanges) {
        let me = core.id.clone();
        let Some(svc) = self.services.get_mut(&key) else {
            core.report(Report::RequestFailed {
                service: key,
                reason: "unknown service".into(),
            });
            return;
        };
        if let Some(n) = &changes.name {
            svc.spec.name = n.clone();
        }
        if let Some(d) = &changes.description {
            svc.spec.description = d.clone();
        }
        if let Some(l) = &changes.location {
            svc.spec.location = Some(l.clone());
        }
        for (k, v) in &changes.info {
            svc.spec.info.insert(k.clone(), v.clone());
        }
        let (Some(sid), Some(group), SvcState::Registered) = (svc.service_id.clone(), svc.group.clone(), svc.state)
        else {
            core.report(Report::RequestFailed {
                service: key,
                reason: "not registered".into(),
            });
            return;
        };
        let Some(m) = self.groups.get_mut(&group.group_id) else { return };
        if let Some(role) = m.registry.as_mut() {
            match role.update(&mut m.store, &sid, &changes) {
                Ok(_) => core.report(Report::Updated { service: key }),
                Err(_) => self.update_not_found(core, &key),
            }
            return;
        }
        let _ = me;
        let s = core.stanza(StanzaKind::Iq, "set", m.channel.clone());
        let s = registry_role::update_stanza(s, &sid, &changes);
        let tries = core.retries();
        core.request(s, Purpose::Update { service: key }, tries, Vec::new());
    }

    /// The registry node lost our entry (e.g. after failover): register again.
    fn update_not_found(&mut self, core: &mut Core, key: &str) {
        core.report(Report::UpdateNotFound { service: key.into() });
        if let Some(svc) = self.services.get_mut(key) {
            svc.reg_started = Some(core.now);
        }
        self.go_register(core, key);
    }

    fn unregister(&mut self, core: &mut Core, key: String) {
        let Some(svc) = self.services.get(&key) else {
            core.report(Report::RequestFailed {
                service: key,
                reason: "unknown service".into(),
            });
            return;
        };
        let (Some(sid), Some(group), SvcState::Registered) = (svc.service_id.clone(), svc.group.clone(), svc.state)
        else {
            core.report(Report::RequestFailed {
                service: key,
                reason: "not registered".into(),
            });
            return;
        };
        let Some(m) = self.groups.get_mut(&group.group_id) else { return };
        if let Some(role) = m.registry.as_mut() {
            let _ = role.unregister(&mut m.store, &sid);
            self.mark_unregistered(core, &key);
            return;
        }
        let s = core
            .stanza(StanzaKind::Iq, "set", m.channel.clone())
            .with(Child::empty(OP_UNREGISTER).attr("service", sid.as_str()));
        let tries = core.retries();
        core.request(s, Purpose::Unregister { service: key }, tries, Vec::new());
    }

    fn mark_unregistered(&mut self, core: &mut Core, key: &str) {
        if let Some(svc) = self.services.get_mut(key) {
            svc.state = SvcState::Idle;
            svc.service_id = None;
        }
        core.report(Report::Unregistered { service: key.into() });
    }

    // ---- discovery -----------------------------------------------------

    fn discover(&mut self, core: &mut Core, text: String) {
        self.next_search += 1;
        let id = self.next_search;
        let local = match_group(&self.taxonomy, &text)
            .best_positive()
            .map(String::from)
            .filter(|g| self.groups.get(g).is_some_and(|m| m.synced || m.registry.is_some()));
        let Some(group) = local else {
            self.searches.insert(
                id,
                Search {
                    text: text.clone(),
                    group: None,
                    flow: SearchFlow::Consumer,
                    started: core.now,
                },
            );
            if self.navigators.is_empty() {
                self.searches.remove(&id);
                core.report(Report::DiscoveryFailed {
                    search: id,
                    text,
                    error: DiscoveryError::NoNavigator,
                });
                return;
            }
            let s = core
                .stanza(StanzaKind::Iq, "get", self.navigators[0].clone())
                .with(Child::new(OP_QUERY, text).attr("purpose", "discover"));
            let tries = core.retries();
            core.request(
                s,
                Purpose::GroupQuery {
                    flow: Flow::Discover { search: id },
                },
                tries,
                self.navigators.clone(),
            );
            return;
        };
        let m = self.groups.get_mut(&group).expect("filtered above");
        if m.registry.is_some() {
            let results = lookup_in_group(&m.store, &group, &text);
            core.report(Report::DiscoveryDone {
                search: id,
                text,
                path: DiscoveryPath::Replica,
                results,
                latency: 0,
            });
            return;
        }
        let hit = !lookup_in_group(&m.store, &group, &text).is_empty();
        self.searches.insert(
            id,
            Search {
                text: text.clone(),
                group: Some(group.clone()),
                flow: if hit { SearchFlow::ReplicaHit } else { SearchFlow::ReplicaMiss },
                started: core.now,
            },
        );
        if hit {
            m.pull_waiters.push(id);
            pull(core, &group, m);
        } else {
            search_group(core, id, &group, text);
        }
    }

    fn finish_waiters(&mut self, core: &mut Core, group: &str) {
        let Some(m) = self.groups.get_mut(group) else { return };
        for id in core::mem::take(&mut m.pull_waiters) {
            if let Some(s) = self.searches.remove(&id) {
                let results = lookup_in_group(&m.store, group, &s.text);
                core.report(Report::DiscoveryDone {
                    search: id,
                    text: s.text,
                    path: DiscoveryPath::Replica,
                    results,
                    latency: core.now - s.started,
                });
            }
        }
    }

    // ---- replies -------------------------------------------------------

    pub fn on_reply(&mut self, core: &mut Core, p: Pending, s: Stanza) {
        let ok = s.type_attr == "result";
        let cond = s.child_text("error").unwrap_or(ERR_INTERNAL).to_string();
        match p.purpose {
            Purpose::GroupQuery { flow: Flow::Register { service } } => {
                let entry = s
                    .child("group")
                    .and_then(|c| wire::parse_entry::<GroupEntry>(&c.text).map(|e| (e, c.get("grant") == Some("true"))));
                match (ok, entry) {
                    (true, Some((entry, grant))) => {
                        self.ensure_membership(core, &entry, grant);
                        if let Some(svc) = self.services.get_mut(&service) {
                            svc.group = Some(entry);
                        }
                        self.go_register(core, &service);
                    }
                    (true, None) => self.registration_failed(core, &service, "no group"),
                    (false, _) => self.registration_failed(core, &service, &cond),
                }
            }
            Purpose::GroupQuery { flow: Flow::Discover { search } } => {
                let entry = s.child("group").and_then(|c| wire::parse_entry::<GroupEntry>(&c.text));
                match entry.filter(|_| ok) {
                    Some(e) => {
                        let text = self.searches.get(&search).map(|x| x.text.clone()).unwrap_or_default();
                        if let Some(x) = self.searches.get_mut(&search) {
                            x.group = Some(e.group_id.clone());
                        }
                        search_group(core, search, &e.group_id, text);
                    }
                    None => {
                        if let Some(x) = self.searches.remove(&search) {
                            core.report(Report::DiscoveryDone {
                                search,
                                text: x.text,
                                path: DiscoveryPath::Navigator,
                                results: Vec::new(),
                                latency: core.now - x.started,
                            });
                        }
                    }
                }
            }
            Purpose::Register { service } => {
                let sid = s.child("registered").and_then(|c| c.get("service")).map(String::from);
                match (ok, sid) {
                    (true, Some(sid)) => self.on_registered(core, &service, sid),
                    _ => self.registration_failed(core, &service, &cond),
                }
            }
            Purpose::Join { .. } => {}
            Purpose::Pull { group } => self.on_pull_reply(core, &group, &s, ok),
            Purpose::Search { search, group } => {
                let results = parse_results(&s);
                if let Some(x) = self.searches.remove(&search) {
                    let path = match x.flow {
                        SearchFlow::Consumer => DiscoveryPath::Navigator,
                        _ => DiscoveryPath::RegistryNode,
                    };
                    core.report(Report::DiscoveryDone {
                        search,
                        text: x.text,
                        path,
                        results,
                        latency: core.now - x.started,
                    });
                    if x.flow == SearchFlow::ReplicaMiss {
                        if let Some(m) = self.groups.get_mut(&group) {
                            pull(core, &group, m);
                        }
                    }
                }
            }
            Purpose::Probe { group } => {
                if ok {
                    core.report(Report::ProbeResult {
                        group,
                        entries: parse_results(&s),
                        latency: core.now - p.started,
                    });
                } else {
                    core.report(Report::ProbeFailed { group });
                }
            }
            Purpose::Update { service } => {
                if ok {
                    core.report(Report::Updated { service });
                } else if cond == ERR_NOT_FOUND {
                    self.update_not_found(core, &service);
                } else {
                    core.report(Report::RequestFailed { service, reason: cond });
                }
            }
            Purpose::Unregister { service } => {
                if ok || cond == ERR_NOT_FOUND {
                    self.mark_unregistered(core, &service);
                } else {
                    core.report(Report::RequestFailed { service, reason: cond });
                }
            }
            Purpose::NavPing { .. } => {}
        }
    }

    pub fn on_request_failed(&mut self, core: &mut Core, p: Pending) {
        match p.purpose {
            Purpose::GroupQuery { flow: Flow::Register { service } } | Purpose::Register { service } => {
                // keep trying: the group may be mid-election
                core.timer(core.now + core.cfg.register_backoff, TimerKey::RegisterRetry { service });
            }
            Purpose::GroupQuery { flow: Flow::Discover { search } } => {
                if let Some(x) = self.searches.remove(&search) {
                    core.report(Report::DiscoveryFailed {
                        search,
                        text: x.text,
                        error: DiscoveryError::NoNavigator,
                    });
                }
            }
            Purpose::Search { search, .. } => {
                if let Some(x) = self.searches.remove(&search) {
                    core.report(Report::DiscoveryFailed {
                        search,
                        text: x.text,
                        error: DiscoveryError::NoRegistryNode,
                    });
                }
            }
            Purpose::Pull { group } => self.finish_waiters(core, &group),
            Purpose::Probe { group } => core.report(Report::ProbeFailed { group }),
            Purpose::Update { service } | Purpose::Unregister { service } => core.report(Report::RequestFailed {
                service,
                reason: "timeout".into(),
            }),
            Purpose::Join { .. } | Purpose::NavPing { .. } => {}
        }
    }

    fn on_pull_reply(&mut self, core: &mut Core, group: &str, s: &Stanza, ok: bool) {
        let Some(m) = self.groups.get_mut(group) else { return };
        if m.registry.is_some() {
            return;
        }
        let diff = s.child("diff");
        let epoch = diff.and_then(|d| attr_u64(d, "epoch"));
        let head = diff.and_then(|d| attr_u64(d, "head"));
        if !ok || epoch != Some(m.epoch) || head.is_none() {
            m.synced = false;
            join(core, group, m);
            self.finish_waiters(core, group);
            return;
        }
        let mut failed = false;
        for c in s.children("rec") {
            match wire::parse_record::<ServiceEntry>(c) {
                Some(r) if r.version <= m.store.version() => {}
                Some(r) => {
                    if m.store.apply(r).is_err() {
                        failed = true;
                        break;
                    }
                }
                None => {
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            m.synced = false;
            join(core, group, m);
            self.finish_waiters(core, group);
            return;
        }
        if head.is_some_and(|h| h > m.store.version()) {
            pull(core, group, m);
            return;
        }
        core.report(Report::Synced {
            group: group.into(),
            epoch: m.epoch,
            version: m.store.version(),
        });
        self.finish_waiters(core, group);
    }

    // ---- inbound stanzas -----------------------------------------------

    fn on_stanza(&mut self, core: &mut Core, s: Stanza) {
        let me = core.id.clone();
        let group = s.to.group_id().to_string();
        let to_channel = s.to.is_channel() && !s.to.is_navigators();
        match s.kind {
            StanzaKind::Iq if to_channel && s.is_iq_request() => {
                let Some(m) = self.groups.get_mut(&group) else { return };
                if m.registry.is_some() {
                    let reply = registry_role::handle_request(core, m, &s);
                    core.send(reply);
                }
            }
            StanzaKind::Presence if to_channel => {
                if let Some(hb) = s.child("heartbeat") {
                    let Some(from) = s.from.device_node().map(String::from) else { return };
                    if from == me {
                        return;
                    }
                    self.on_heartbeat(core, &group, &from, hb);
                } else if let (Some(sid), Some(st)) = (s.from.service_id(), s.child("status")) {
                    let Some(m) = self.groups.get_mut(&group) else { return };
                    let Some(role) = m.registry.as_mut() else { return };
                    let status = if s.type_attr == "available" {
                        Availability::Available
                    } else {
                        Availability::Unavailable
                    };
                    let seq = attr_u64(st, "seq").unwrap_or(0);
                    role.apply_status(&mut m.store, sid, status, seq);
                }
            }
            StanzaKind::Presence if s.to == core.addr => {
                if let Some(pr) = s.child("probe-reply") {
                    let Some(g) = pr.get("group") else { return };
                    let Some(from) = s.from.device_node() else { return };
                    let Some(m) = self.groups.get_mut(g) else { return };
                    let Some(role) = m.registry.as_mut() else { return };
                    role.on_probe_reply(&mut m.store, from, &s);
                }
            }
            StanzaKind::Message if to_channel => match s.type_attr.as_str() {
                "push" => {
                    let Some(v) = s.child("version") else { return };
                    let Some(m) = self.groups.get_mut(&group) else { return };
                    if m.registry.is_some() {
                        return;
                    }
                    if attr_u64(v, "epoch") != Some(m.epoch) || !m.synced {
                        m.synced = false;
                        join(core, &group, m);
                    } else if attr_u64(v, "head").is_some_and(|h| h > m.store.version()) {
                        pull(core, &group, m);
                    }
                }
                "election" => {
                    let Some(m) = self.groups.get_mut(&group) else { return };
                    let caps = self.capability;
                    let willing = self.willing;
                    election::on_message(core, &group, m, &s, willing, &caps);
                }
                _ => {}
            },
            StanzaKind::Message if s.to == core.addr => match s.type_attr.as_str() {
                "push" => {
                    if let Some(c) = s.child("chunk") {
                        self.on_chunk(core, &s, c.clone());
                    }
                }
                "binding" => {
                    if let Some(b) = s.child("bind") {
                        let sid = b.get("service").unwrap_or_default().to_string();
                        let reply = self.binding_reply(core, &s, &sid);
                        core.send(reply);
                    } else if let Some(b) = s.child("binding") {
                        core.report(Report::Binding {
                            service_id: b.get("service").unwrap_or_default().into(),
                            result: parse_binding(&s),
                        });
                    }
                }
                _ => {}
            },
            _ => {}
        }
    }

    fn on_heartbeat(&mut self, core: &mut Core, group: &str, from: &str, hb: &Child) {
        let me = core.id.clone();
        let Some(m) = self.groups.get_mut(group) else { return };
        let epoch = attr_u64(hb, "epoch").unwrap_or(0);
        let version = attr_u64(hb, "version").unwrap_or(0);
        if m.registry.is_some() {
            // two registry nodes met: the lower-ranked one steps down
            let theirs = wire::parse_capability(hb).unwrap_or_default();
            let w = &core.cfg.weights;
            let winner = election::election_winner([
                (me.as_str(), self.capability.score(w)),
                (from, theirs.score(w)),
            ]);
            if winner.as_deref() == Some(from) {
                m.registry = None;
                m.registry_node = Some(from.into());
                m.synced = false;
                m.last_heartbeat = core.now;
                arm_watchdog(core, m);
                core.report(Report::Demoted { group: group.into() });
                join(core, group, m);
            } else {
                m.epoch = m.epoch.max(epoch) + 1;
                let caps = self.capability;
                registry_role::send_heartbeat(core, m, &me, &caps);
            }
            return;
        }
        m.last_heartbeat = core.now;
        arm_watchdog(core, m);
        m.election = None;
        if m.registry_node.as_deref() != Some(from) {
            m.registry_node = Some(from.into());
        }
        if epoch != m.epoch || !m.synced {
            m.synced = false;
            join(core, group, m);
        } else if version > m.store.version() {
            pull(core, group, m);
        }
        // probe reply with our per-service availability
        let mut reply = Stanza::new(
            StanzaKind::Presence,
            core.next_id(),
            "available",
            core.device_addr(from),
            core.addr.clone(),
        )
        .with(Child::empty("probe-reply").attr("group", group).attr("epoch", epoch));
        for s in self.services.values() {
            if s.state != SvcState::Registered || s.group.as_ref().map(|g| g.group_id.as_str()) != Some(group) {
                continue;
            }
            if let Some(id) = &s.service_id {
                let st = effective(s, &self.triggers);
                reply.payload.push(
                    Child::new("status", st.status_text())
                        .attr("service", id.as_str())
                        .attr("seq", s.seq),
                );
            }
        }
        core.send(reply);
    }

    fn on_chunk(&mut self, core: &mut Core, s: &Stanza, c: Child) {
        let Some(g) = c.get("group").map(String::from) else { return };
        let Some(from) = s.from.device_node().map(String::from) else { return };
        let (Some(epoch), Some(version), Some(seq), Some(of)) = (
            attr_u64(&c, "epoch"),
            attr_u64(&c, "version"),
            attr_u64(&c, "seq"),
            attr_u64(&c, "of"),
        ) else {
            return;
        };
        let Some(m) = self.groups.get_mut(&g) else { return };
        if m.registry.is_some() || of == 0 || seq >= of {
            return;
        }
        let rx = m.snapshot_rx.get_or_insert_with(|| SnapshotRx {
            epoch,
            version,
            from: from.clone(),
            parts: BTreeMap::new(),
            of: of as u32,
        });
        if (rx.epoch, rx.version, rx.from.as_str(), rx.of) != (epoch, version, from.as_str(), of as u32) {
            *rx = SnapshotRx {
                epoch,
                version,
                from: from.clone(),
                parts: BTreeMap::new(),
                of: of as u32,
            };
        }
        rx.parts.insert(seq as u32, c.text);
        if rx.parts.len() < rx.of as usize {
            return;
        }
        let rx = m.snapshot_rx.take().expect("present");
        let text: String = rx.parts.into_values().collect();
        let Ok(store) = RegistryStore::<ServiceEntry>::restore(text.as_bytes()) else {
            return;
        };
        m.store = store;
        m.epoch = rx.epoch;
        m.synced = true;
        m.registry_node = Some(rx.from);
        core.pending
            .retain(|_, p| !matches!(&p.purpose, Purpose::Join { group } if *group == g));
        core.report(Report::Synced {
            group: g.clone(),
            epoch: m.epoch,
            version: m.store.version(),
        });
        self.finish_waiters(core, &g);
        if core.cfg.reregister_on_resync {
            self.reconcile(core, &g);
        }
    }

    /// Re-registers owned services the registry node no longer lists.
    fn reconcile(&mut self, core: &mut Core, group: &str) {
        let Some(m) = self.groups.get(group) else { return };
        let missing: Vec<String> = self
            .services
            .iter()
            .filter(|(_, s)| {
                s.state == SvcState::Registered
                    && s.group.as_ref().is_some_and(|g| g.group_id == group)
                    && s.service_id.as_ref().is_some_and(|id| !m.store.contains(id))
            })
            .map(|(k, _)| k.clone())
            .collect();
        for k in missing {
            if let Some(svc) = self.services.get_mut(&k) {
                svc.reg_started = Some(core.now);
            }
            self.go_register(core, &k);
        }
    }

    fn binding_reply(&self, core: &mut Core, req: &Stanza, sid: &str) -> Stanza {
        let id = core.next_id();
        let head = Child::empty("binding").attr("ref", req.id.as_str()).attr("service", sid);
        let reply = Stanza::new(StanzaKind::Message, id, "binding", req.from.clone(), core.addr.clone()).with(head);
        let svc = self
            .services
            .values()
            .find(|s| s.state == SvcState::Registered && s.service_id.as_deref() == Some(sid));
        match svc {
            Some(s) if effective(s, &self.triggers) == Availability::Available => {
                let b = &s.spec.binding;
                let mut reply = reply.with(Child::new("endpoint", b.endpoint.as_str()));
                for (name, ty) in &b.params {
                    reply.payload.push(Child::empty("param").attr("name", name.as_str()).attr("type", ty.as_str()));
                }
                reply = reply.with(Child::new("returns", b.returns.as_str()));
                if let Some(w) = &b.wsdl {
                    reply = reply.with(Child::new("wsdl", w.as_str()));
                }
                reply
            }
            _ => reply.with(error_child(ERR_UNAVAILABLE)),
        }
    }
}

fn parse_results(s: &Stanza) -> Vec<ServiceEntry> {
    s.children("entry")
        .filter_map(|c| wire::parse_entry::<ServiceEntry>(&c.text))
        .collect()
}

fn parse_binding(s: &Stanza) -> Result<BindingInfo, String> {
    if let Some(e) = s.child_text("error") {
        return Err(e.into());
    }
    Ok(BindingInfo {
        endpoint: s.child_text("endpoint").unwrap_or_default().into(),
        params: s
            .children("param")
            .map(|p| (p.get("name").unwrap_or_default().into(), p.get("type").unwrap_or_default().into()))
            .collect(),
        returns: s.child_text("returns").unwrap_or_default().into(),
        wsdl: s.child_text("wsdl").map(Into::into),
    })
}

fn search_group(core: &mut Core, search: u64, group: &str, text: String) {
    let to = core.channel(group);
    let s = core.stanza(StanzaKind::Iq, "get", to).with(Child::new(OP_SEARCH, text));
    let tries = core.retries();
    core.request(
        s,
        Purpose::Search {
            search,
            group: group.into(),
        },
        tries,
        Vec::new(),
    );
}

pub(super) fn join(core: &mut Core, group: &str, m: &mut Membership) {
    if core.pending_matching(|p| matches!(p, Purpose::Join { group: g } if g == group)) {
        return;
    }
    let me = core.id.clone();
    let s = core
        .stanza(StanzaKind::Iq, "get", m.channel.clone())
        .with(Child::empty(OP_JOIN).attr("node", me));
    core.request(s, Purpose::Join { group: group.into() }, 1, Vec::new());
}

pub(super) fn pull(core: &mut Core, group: &str, m: &mut Membership) {
    if !m.synced {
        join(core, group, m);
        return;
    }
    if core.pending_matching(|p| matches!(p, Purpose::Pull { group: g } if g == group)) {
        return;
    }
    let s = core.stanza(StanzaKind::Iq, "get", m.channel.clone()).with(
        Child::empty(OP_PULL)
            .attr("since", m.store.version())
            .attr("epoch", m.epoch),
    );
    core.request(s, Purpose::Pull { group: group.into() }, 1, Vec::new());
}

pub(super) fn arm_pull(core: &mut Core, m: &mut Membership) {
    m.pull_gen += 1;
    core.timer(
        core.now + core.cfg.pull_period,
        TimerKey::Pull {
            group: m.entry.group_id.clone(),
            gen: m.pull_gen,
        },
    );
}

pub(super) fn arm_heartbeat(core: &mut Core, m: &mut Membership, at: Micros) {
    m.hb_gen += 1;
    core.timer(
        at,
        TimerKey::Heartbeat {
            group: m.entry.group_id.clone(),
            gen: m.hb_gen,
        },
    );
}

pub(super) fn arm_watchdog(core: &mut Core, m: &mut Membership) {
    m.watch_gen += 1;
    core.timer(
        m.last_heartbeat + core.cfg.silence_limit(),
        TimerKey::Watchdog {
            group: m.entry.group_id.clone(),
            gen: m.watch_gen,
        },
    );
}
