//! Serving side of a group: the registry node's request handling, member
//! probing and presence bookkeeping.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::registry::{Availability, Entry, Query, RegistryStore, ServiceEntry};
use crate::stanza::{is_token, Child, Identifier, Stanza, StanzaKind, MAX_STANZA_BYTES};

use super::device::{Membership, ServiceChanges};
use super::wire::{self, *};
use super::{CapabilityReport, Core, Report};

/// Raw snapshot text carried per chunk message.
pub(super) const CHUNK_BYTES: usize = 12_000;
/// Room left for the envelope when filling a reply with entries.
const ENVELOPE_SLACK: usize = 256;

#[derive(Clone, Copy, Debug, Default)]
struct MemberState {
    heard: bool,
    missed: u32,
}

#[derive(Debug, Default)]
pub(super) struct RegistryRole {
    members: BTreeMap<String, MemberState>,
    /// Highest presence sequence number applied per service.
    presence_seq: BTreeMap<String, u64>,
    /// Services marked unavailable because their provider stopped answering probes.
    forced: BTreeSet<String>,
    /// Registration token to service id, so retried registrations are idempotent.
    tokens: BTreeMap<String, String>,
    last_shared: u64,
}

pub(super) struct RegisterFields {
    pub name: String,
    pub description: String,
    pub provider: String,
    pub propose: Option<String>,
    pub location: Option<String>,
    pub info: BTreeMap<String, String>,
    pub token: Option<String>,
}

impl RegistryRole {
    pub fn add_member(&mut self, node: &str) {
        self.members.entry(node.into()).or_insert(MemberState {
            heard: true,
            missed: 0,
        });
    }

    pub fn register(
        &mut self,
        store: &mut RegistryStore<ServiceEntry>,
        channel: &Identifier,
        f: &RegisterFields,
        me: &str,
    ) -> Result<(String, u64), &'static str> {
        if f.name.trim().is_empty() || f.description.trim().is_empty() || !is_token(&f.provider) {
            return Err(ERR_BAD_REQUEST);
        }
        if let Some(t) = &f.token {
            if let Some(sid) = self.tokens.get(t) {
                if store.contains(sid) {
                    return Ok((sid.clone(), store.version()));
                }
            }
        }
        let sid = match &f.propose {
            Some(p) => {
                let p = p.to_ascii_lowercase();
                if !is_token(&p) {
                    return Err(ERR_BAD_REQUEST);
                }
                if store.get(&p).is_some_and(|e| e.provider != f.provider) {
                    return Err(ERR_CONFLICT);
                }
                p
            }
            None => {
                let mut n = store.version() + 1;
                loop {
                    let id = alloc::format!("s{n}");
                    if !store.contains(&id) {
                        break id;
                    }
                    n += 1;
                }
            }
        };
        let mut entry = ServiceEntry::new(channel, &sid, &f.name, &f.description, &f.provider)
            .map_err(|_| ERR_BAD_REQUEST)?;
        entry.location = f.location.clone();
        entry.other_info = f.info.clone();
        let version = store.upsert(entry).map_err(|_| ERR_BAD_REQUEST)?;
        if let Some(t) = &f.token {
            self.tokens.insert(t.clone(), sid.clone());
        }
        self.presence_seq.remove(&sid);
        self.forced.remove(&sid);
        if f.provider != me {
            self.add_member(&f.provider);
            if let Some(m) = self.members.get_mut(&f.provider) {
                m.heard = true;
                m.missed = 0;
            }
        }
        Ok((sid, version))
    }

    pub fn update(
        &mut self,
        store: &mut RegistryStore<ServiceEntry>,
        sid: &str,
        c: &ServiceChanges,
    ) -> Result<u64, &'static str> {
        let mut e = store.get(sid).cloned().ok_or(ERR_NOT_FOUND)?;
        if let Some(n) = &c.name {
            e.service_name = n.clone();
        }
        if let Some(d) = &c.description {
            e.description = d.clone();
        }
        if let Some(l) = &c.location {
            e.location = Some(l.clone());
        }
        for (k, v) in &c.info {
            e.other_info.insert(k.clone(), v.clone());
        }
        store.upsert(e).map_err(|_| ERR_BAD_REQUEST)
    }

    pub fn unregister(&mut self, store: &mut RegistryStore<ServiceEntry>, sid: &str) -> Result<u64, &'static str> {
        let v = store.remove(sid).map_err(|_| ERR_NOT_FOUND)?;
        self.presence_seq.remove(sid);
        self.forced.remove(sid);
        self.tokens.retain(|_, s| s != sid);
        Ok(v)
    }

    /// Applies a provider's availability report. Older sequence numbers are
    /// ignored; a repeat of the last one is accepted only to lift an
    /// unavailability we imposed ourselves.
    pub fn apply_status(&mut self, store: &mut RegistryStore<ServiceEntry>, sid: &str, status: Availability, seq: u64) {
        let Some(e) = store.get(sid) else { return };
        let accept = match self.presence_seq.get(sid) {
            None => true,
            Some(&r) => seq > r || (seq == r && self.forced.contains(sid)),
        };
        if !accept {
            return;
        }
        self.presence_seq.insert(sid.into(), seq);
        self.forced.remove(sid);
        if e.availability != status {
            let mut e = e.clone();
            e.availability = status;
            let _ = store.upsert(e);
        }
    }

    pub fn on_probe_reply(&mut self, store: &mut RegistryStore<ServiceEntry>, from: &str, s: &Stanza) {
        let m = self.members.entry(from.into()).or_default();
        m.heard = true;
        m.missed = 0;
        for st in s.children("status") {
            let (Some(sid), Some(seq)) = (st.get("service"), attr_u64(st, "seq")) else {
                continue;
            };
            let Some(status) = Availability::parse(&st.text) else { continue };
            if store.get(sid).is_some_and(|e| e.provider == from) {
                self.apply_status(store, sid, status, seq);
            }
        }
    }

    /// One probe round: members silent since the last round count a miss,
    /// and at the threshold their services are marked unavailable.
    fn account(&mut self, store: &mut RegistryStore<ServiceEntry>, threshold: u32) {
        let mut lost = Vec::new();
        for (node, st) in self.members.iter_mut() {
            if st.heard {
                st.missed = 0;
            } else {
                st.missed = st.missed.saturating_add(1);
                if st.missed == threshold {
                    lost.push(node.clone());
                }
            }
            st.heard = false;
        }
        for node in lost {
            let ids: Vec<String> = store
                .entries()
                .filter(|e| e.provider == node && e.availability == Availability::Available)
                .map(|e| e.id().to_string())
                .collect();
            for id in ids {
                if let Some(mut e) = store.get(&id).cloned() {
                    e.availability = Availability::Unavailable;
                    let _ = store.upsert(e);
                    self.forced.insert(id);
                }
            }
        }
    }
}

pub(super) fn register_stanza(s: Stanza, f: &RegisterFields) -> Stanza {
    let mut op = Child::empty(OP_REGISTER);
    if let Some(t) = &f.token {
        op = op.attr("token", t.as_str());
    }
    if let Some(p) = &f.propose {
        op = op.attr("propose", p.as_str());
    }
    let mut s = s
        .with(op)
        .with(Child::new("name", f.name.as_str()))
        .with(Child::new("description", f.description.as_str()));
    if let Some(l) = &f.location {
        s = s.with(Child::new("location", l.as_str()));
    }
    for (k, v) in &f.info {
        s = s.with(Child::new("info", v.as_str()).attr("key", k.as_str()));
    }
    s
}

fn info_of(s: &Stanza) -> BTreeMap<String, String> {
    s.children("info")
        .filter_map(|c| Some((c.get("key")?.to_string(), c.text.clone())))
        .collect()
}

pub(super) fn update_stanza(s: Stanza, sid: &str, c: &ServiceChanges) -> Stanza {
    let mut s = s.with(Child::empty(OP_UPDATE).attr("service", sid));
    if let Some(n) = &c.name {
        s = s.with(Child::new("name", n.as_str()));
    }
    if let Some(d) = &c.description {
        s = s.with(Child::new("description", d.as_str()));
    }
    if let Some(l) = &c.location {
        s = s.with(Child::new("location", l.as_str()));
    }
    for (k, v) in &c.info {
        s = s.with(Child::new("info", v.as_str()).attr("key", k.as_str()));
    }
    s
}

/// Answers an Iq request addressed to a group we serve.
pub(super) fn handle_request(core: &mut Core, m: &mut Membership, req: &Stanza) -> Stanza {
    let me = core.id.clone();
    let error = |core: &mut Core, cond: &str| core.reply(req, "error").with(error_child(cond));
    let Some(op) = req.op() else {
        return error(core, ERR_BAD_REQUEST);
    };
    let role = m.registry.as_mut().expect("caller checked role");
    match op.name.as_str() {
        OP_REGISTER => {
            let Some(provider) = req.from.device_node() else {
                return error(core, ERR_BAD_REQUEST);
            };
            let f = RegisterFields {
                name: req.child_text("name").unwrap_or_default().into(),
                description: req.child_text("description").unwrap_or_default().into(),
                provider: provider.into(),
                propose: op.get("propose").map(Into::into),
                location: req.child_text("location").map(Into::into),
                info: info_of(req),
                token: op.get("token").map(Into::into),
            };
            match role.register(&mut m.store, &m.channel, &f, &me) {
                Ok((sid, version)) => {
                    let access = m.store.get(&sid).map(|e| e.access_point.to_string()).unwrap_or_default();
                    core.reply(req, "result").with(
                        Child::new("registered", access)
                            .attr("service", sid.as_str())
                            .attr("version", version),
                    )
                }
                Err(cond) => error(core, cond),
            }
        }
        OP_JOIN => {
            let Some(node) = req.from.device_node().map(String::from) else {
                return error(core, ERR_BAD_REQUEST);
            };
            role.add_member(&node);
            let text = String::from_utf8(m.store.snapshot()).unwrap_or_default();
            let parts = chunk_text(&text, CHUNK_BYTES);
            let n = parts.len();
            let to = core.device_addr(&node);
            for (i, part) in parts.into_iter().enumerate() {
                let c = Child::new("chunk", part)
                    .attr("group", m.entry.group_id.as_str())
                    .attr("epoch", m.epoch)
                    .attr("version", m.store.version())
                    .attr("seq", i)
                    .attr("of", n);
                let s = core.stanza(StanzaKind::Message, "push", to.clone()).with(c);
                core.send(s);
            }
            core.reply(req, "result").with(
                Child::empty("snapshot")
                    .attr("epoch", m.epoch)
                    .attr("version", m.store.version())
                    .attr("pages", n)
                    .attr("registry", me.as_str()),
            )
        }
        OP_PULL => {
            let since = attr_u64(op, "since");
            if attr_u64(op, "epoch") != Some(m.epoch) || since.is_none() {
                return error(core, ERR_RESYNC);
            }
            let Ok(page) = m.store.diff_since(since.unwrap_or(0)) else {
                return error(core, ERR_RESYNC);
            };
            let head = Child::empty("diff")
                .attr("since", page.since)
                .attr("head", page.head)
                .attr("epoch", m.epoch);
            let mut reply = core.reply(req, "result").with(head);
            let mut budget = MAX_STANZA_BYTES.saturating_sub(reply.encoded_len() + ENVELOPE_SLACK);
            for r in &page.records {
                let c = wire::record_child(r);
                let len = c.encoded_len();
                if len > budget {
                    break;
                }
                budget -= len;
                reply.payload.push(c);
            }
            if reply.payload.len() == 1 && !page.records.is_empty() {
                // a single record too large for a message: fall back to chunks
                return error(core, ERR_RESYNC);
            }
            reply
        }
        OP_SEARCH => {
            let found: Vec<ServiceEntry> = m
                .store
                .lookup(&Query::ByNameSubstring(op.text.clone()))
                .into_iter()
                .filter(|e| e.in_group(&m.entry.group_id))
                .collect();
            let mut reply = core.reply(req, "result");
            let mut budget = MAX_STANZA_BYTES.saturating_sub(reply.encoded_len() + ENVELOPE_SLACK);
            let mut children = Vec::new();
            for e in &found {
                let c = entry_child("entry", e);
                let len = c.encoded_len();
                if len > budget {
                    break;
                }
                budget -= len;
                children.push(c);
            }
            reply.payload.push(
                Child::empty("results")
                    .attr("count", children.len())
                    .attr("total", found.len())
                    .attr("truncated", children.len() < found.len()),
            );
            reply.payload.extend(children);
            reply
        }
        OP_PING => core.reply(req, "result").with(
            Child::empty("pong")
                .attr("epoch", m.epoch)
                .attr("registry", me.as_str())
                .attr("version", m.store.version()),
        ),
        OP_UPDATE => {
            let Some(sid) = op.get("service") else {
                return error(core, ERR_BAD_REQUEST);
            };
            let owner = req.from.device_node();
            if m.store.get(sid).is_some_and(|e| Some(e.provider.as_str()) != owner) {
                return error(core, ERR_CONFLICT);
            }
            let changes = ServiceChanges {
                name: req.child_text("name").map(Into::into),
                description: req.child_text("description").map(Into::into),
                location: req.child_text("location").map(Into::into),
                info: info_of(req),
            };
            match role.update(&mut m.store, sid, &changes) {
                Ok(v) => core
                    .reply(req, "result")
                    .with(Child::empty("updated").attr("service", sid).attr("version", v)),
                Err(cond) => error(core, cond),
            }
        }
        OP_UNREGISTER => {
            let Some(sid) = op.get("service") else {
                return error(core, ERR_BAD_REQUEST);
            };
            let owner = req.from.device_node();
            if m.store.get(sid).is_some_and(|e| Some(e.provider.as_str()) != owner) {
                return error(core, ERR_CONFLICT);
            }
            match role.unregister(&mut m.store, sid) {
                Ok(v) => core
                    .reply(req, "result")
                    .with(Child::empty("unregistered").attr("service", sid).attr("version", v)),
                Err(cond) => error(core, cond),
            }
        }
        _ => error(core, ERR_BAD_REQUEST),
    }
}

pub(super) fn send_heartbeat(core: &mut Core, m: &Membership, me: &str, caps: &CapabilityReport) {
    let hb = capability_attrs(
        Child::empty("heartbeat")
            .attr("epoch", m.epoch)
            .attr("version", m.store.version())
            .attr("registry", me),
        caps,
    );
    let s = core.stanza(StanzaKind::Presence, "available", m.channel.clone()).with(hb);
    core.send(s);
}

/// Heartbeat timer: account for the previous probe round, then probe again.
pub(super) fn tick(core: &mut Core, m: &mut Membership, me: &str, caps: &CapabilityReport) {
    let k = core.cfg.detector.miss_threshold;
    if let Some(role) = m.registry.as_mut() {
        role.account(&mut m.store, k);
    }
    send_heartbeat(core, m, me, caps);
}

/// Pushes the current version to members when it moved (or when `force`d).
pub(super) fn share(
    core: &mut Core,
    channel: &Identifier,
    store: &RegistryStore<ServiceEntry>,
    epoch: u64,
    role: &mut RegistryRole,
    force: bool,
) {
    if !force && store.version() == role.last_shared {
        return;
    }
    role.last_shared = store.version();
    let s = core
        .stanza(StanzaKind::Message, "push", channel.clone())
        .with(Child::empty("version").attr("epoch", epoch).attr("head", store.version()));
    core.send(s);
}

/// Reports the takeover and announces it on the navigator channel.
pub(super) fn announce(core: &mut Core, m: &Membership) {
    let me = core.id.clone();
    let nav = Identifier::navigators(&core.net).expect("valid net");
    let mut entry = m.entry.clone();
    entry.group_access_point = m.channel.clone();
    let s = core.stanza(StanzaKind::Presence, "available", nav).with(
        entry_child("registry", &entry)
            .attr("group", m.entry.group_id.as_str())
            .attr("epoch", m.epoch)
            .attr("node", me.as_str()),
    );
    core.send(s);
    core.report(Report::BecameRegistry {
        group: m.entry.group_id.clone(),
        epoch: m.epoch,
    });
}
