use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::classify::{match_group, propose_group_id, tokenize, DomainTaxonomy};
use crate::registry::{Entry, GroupEntry, RegistryStore};
use crate::stanza::{Child, Identifier, Stanza, StanzaKind};
use crate::time::Micros;

use super::wire::{self, *};
use super::{Core, Input, Pending, Purpose, Report, TimerKey};

/// Domain recorded for groups created at runtime.
const LEARNED_DOMAIN: &str = "general";
/// `other_info` key carrying a learned group's classification terms.
pub(super) const TERMS_KEY: &str = "terms";

pub(super) struct Navigator {
    pub taxonomy: DomainTaxonomy,
    pub groups: RegistryStore<GroupEntry>,
    /// Last time each group's registry node was heard from.
    health: BTreeMap<String, Micros>,
}

impl Navigator {
    pub fn new(taxonomy: DomainTaxonomy) -> Self {
        Navigator {
            taxonomy,
            groups: RegistryStore::new(),
            health: BTreeMap::new(),
        }
    }

    pub fn bootstrap_group(&mut self, entry: GroupEntry) {
        learn_terms(&mut self.taxonomy, &entry);
        let _ = self.groups.upsert(entry);
    }

    pub fn handle(&mut self, core: &mut Core, input: Input) {
        match input {
            Input::Start => {
                let nav = Identifier::navigators(&core.net).expect("valid net");
                core.out.push(super::Output::Subscribe(nav));
                self.health.clear();
                for e in self.groups.entries() {
                    self.health.insert(e.group_id.clone(), core.now);
                }
                core.timer(core.now + core.cfg.detector.heartbeat_period, TimerKey::NavPing);
            }
            Input::Timer(TimerKey::NavPing) => self.tick(core),
            Input::Stanza(s) => self.on_stanza(core, s),
            _ => {}
        }
    }

    fn tick(&mut self, core: &mut Core) {
        let drop_after = core.cfg.failover_bound();
        let ids: Vec<String> = self.groups.entries().map(|e| e.group_id.clone()).collect();
        for g in ids {
            let last = *self.health.entry(g.clone()).or_insert(core.now);
            if core.now.saturating_sub(last) >= drop_after {
                self.drop_group(core, &g, true);
                continue;
            }
            let to = core.channel(&g);
            let ping = core
                .stanza(StanzaKind::Iq, "get", to)
                .with(Child::empty(OP_PING).attr("group", g.as_str()));
            core.request(ping, Purpose::NavPing { group: g }, 1, Vec::new());
        }
        core.timer(core.now + core.cfg.detector.heartbeat_period, TimerKey::NavPing);
    }

    fn drop_group(&mut self, core: &mut Core, group: &str, share: bool) {
        if self.groups.remove(group).is_err() {
            return;
        }
        self.health.remove(group);
        if share {
            let to = Identifier::navigators(&core.net).expect("valid net");
            let msg = core
                .stanza(StanzaKind::Message, "push", to)
                .with(Child::empty("group-delete").attr("group", group));
            core.send(msg);
        }
        core.report(Report::GroupDropped { group: group.into() });
    }

    pub fn on_reply(&mut self, core: &mut Core, p: Pending, s: Stanza) {
        if let Purpose::NavPing { group } = p.purpose {
            if s.type_attr == "result" && self.groups.contains(&group) {
                self.health.insert(group, core.now);
            }
        }
    }

    pub fn on_request_failed(&mut self, _core: &mut Core, _p: Pending) {}

    fn on_stanza(&mut self, core: &mut Core, s: Stanza) {
        match (s.kind, s.type_attr.as_str()) {
            (StanzaKind::Iq, "get") if s.op().is_some_and(|c| c.name == OP_QUERY) => {
                let reply = self.group_query(core, &s);
                core.send(reply);
            }
            (StanzaKind::Message, "push") if s.to.is_navigators() => {
                for c in &s.payload {
                    match c.name.as_str() {
                        "group-upsert" => {
                            if let Some(e) = wire::parse_entry::<GroupEntry>(&c.text) {
                                self.merge(core, e);
                            }
                        }
                        "group-delete" => {
                            if let Some(g) = c.get("group") {
                                self.drop_group(core, g, false);
                            }
                        }
                        _ => {}
                    }
                }
            }
            (StanzaKind::Presence, "available") if s.to.is_navigators() => {
                if let Some(c) = s.child("registry") {
                    if let Some(e) = wire::parse_entry::<GroupEntry>(&c.text) {
                        self.merge(core, e);
                    }
                }
            }
            _ => {}
        }
    }

    /// Adopts a group learned from another navigator or a registry node.
    fn merge(&mut self, core: &mut Core, mut entry: GroupEntry) {
        learn_terms(&mut self.taxonomy, &entry);
        self.health.insert(entry.group_id.clone(), core.now);
        if let Some(cur) = self.groups.get(&entry.group_id) {
            entry.version = cur.version;
            if *cur == entry {
                return;
            }
        }
        let _ = self.groups.upsert(entry);
    }

    fn group_query(&mut self, core: &mut Core, req: &Stanza) -> Stanza {
        let q = req.op().expect("checked by caller");
        let description = q.text.as_str();
        let error = |core: &mut Core, cond: &str| core.reply(req, "error").with(error_child(cond));
        if tokenize(description).is_empty() {
            return error(core, ERR_BAD_REQUEST);
        }
        let m = match_group(&self.taxonomy, description);
        if q.get("purpose") != Some("register") {
            let mut reply = core.reply(req, "result");
            if let Some(e) = m.best_positive().and_then(|g| self.groups.get(g)) {
                reply.payload.push(entry_child("group", e).attr("grant", "false"));
            }
            return reply;
        }

        let Some(registrant) = req.from.device_node().map(String::from) else {
            return error(core, ERR_BAD_REQUEST);
        };
        if let Some(g) = &m.best_group {
            if let Some(e) = self.groups.get(g) {
                return core
                    .reply(req, "result")
                    .with(entry_child("group", e).attr("grant", "false"));
            }
        }
        let (group_id, domain) = match &m.best_group {
            Some(g) => {
                let domain = self.taxonomy.get(g).map(|t| t.domain.clone()).unwrap_or_default();
                (g.clone(), domain)
            }
            None => {
                let groups = &self.groups;
                let taxonomy = &self.taxonomy;
                let taken = |g: &str| taxonomy.contains(g) || groups.contains(g) || g.starts_with('_');
                match propose_group_id(description, taken) {
                    Ok(g) => (g, LEARNED_DOMAIN.to_string()),
                    Err(_) => return error(core, ERR_BAD_REQUEST),
                }
            }
        };
        let Ok(mut entry) = GroupEntry::new(&group_id, &core.net, &domain, &registrant) else {
            return error(core, ERR_INTERNAL);
        };
        entry.group_description = description.into();
        if !self.taxonomy.contains(&group_id) {
            let terms: BTreeSet<String> = tokenize(description).into_iter().collect();
            entry
                .other_info
                .insert(TERMS_KEY.into(), terms.iter().cloned().collect::<Vec<_>>().join(","));
            if self.taxonomy.insert(&group_id, &domain, terms).is_err() {
                return error(core, ERR_INTERNAL);
            }
        } else if let Some(t) = self.taxonomy.get(&group_id) {
            let terms: Vec<String> = t.terms.iter().cloned().collect();
            entry.other_info.insert(TERMS_KEY.into(), terms.join(","));
        }
        if self.groups.upsert(entry.clone()).is_err() {
            return error(core, ERR_INTERNAL);
        }
        let entry = self.groups.get(&group_id).cloned().unwrap_or(entry);
        self.health.insert(group_id.clone(), core.now);
        let share = core
            .stanza(StanzaKind::Message, "push", Identifier::navigators(&core.net).expect("valid net"))
            .with(entry_child("group-upsert", &entry));
        core.send(share);
        core.report(Report::GroupCreated {
            group: group_id,
            registrant,
        });
        core.reply(req, "result")
            .with(entry_child("group", &entry).attr("grant", "true"))
    }
}

pub(super) fn learn_terms(taxonomy: &mut DomainTaxonomy, entry: &GroupEntry) {
    if taxonomy.contains(entry.id()) {
        return;
    }
    if let Some(terms) = entry.other_info.get(TERMS_KEY) {
        let terms = terms.split(',').map(|t| t.trim().to_string());
        let _ = taxonomy.insert(entry.id(), &entry.group_domain, terms);
    }
}
