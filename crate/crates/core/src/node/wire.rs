//! Payload vocabulary carried inside stanzas.
//!
//! Registry entries travel as the text of a payload child holding the
//! entry's canonical XML; the stanza encoder escapes it, which keeps every
//! payload one level deep.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::registry::{ChangeOp, ChangeRecord, Entry};
use crate::stanza::xml::parse_element;
use crate::stanza::Child;

use super::CapabilityReport;

pub const OP_QUERY: &str = "query";
pub const OP_REGISTER: &str = "register";
pub const OP_JOIN: &str = "join";
pub const OP_PULL: &str = "pull";
pub const OP_SEARCH: &str = "search";
pub const OP_PING: &str = "ping";
pub const OP_UPDATE: &str = "update";
pub const OP_UNREGISTER: &str = "unregister";

pub const ERR_BAD_REQUEST: &str = "bad-request";
pub const ERR_CONFLICT: &str = "conflict";
pub const ERR_NOT_FOUND: &str = "not-found";
pub const ERR_INTERNAL: &str = "internal";
pub const ERR_RESYNC: &str = "resync";
pub const ERR_UNAVAILABLE: &str = "unavailable";

pub fn entry_child<E: Entry>(name: &str, entry: &E) -> Child {
    Child::new(name, entry.to_element().to_xml())
}

pub fn parse_entry<E: Entry>(text: &str) -> Option<E> {
    let el = parse_element(text, 2).ok()?;
    E::from_element(&el).ok()
}

pub fn record_child<E: Entry>(r: &ChangeRecord<E>) -> Child {
    match &r.op {
        ChangeOp::Upsert(e) => entry_child("rec", e).attr("op", "upsert"),
        ChangeOp::Delete => Child::empty("rec").attr("op", "delete"),
    }
    .attr("v", r.version)
    .attr("id", r.id.as_str())
}

pub fn parse_record<E: Entry>(c: &Child) -> Option<ChangeRecord<E>> {
    let version = c.get("v")?.parse().ok()?;
    let id: String = c.get("id")?.into();
    let op = match c.get("op")? {
        "upsert" => ChangeOp::Upsert(parse_entry(&c.text)?),
        "delete" => ChangeOp::Delete,
        _ => return None,
    };
    Some(ChangeRecord { version, id, op })
}

pub fn error_child(condition: &str) -> Child {
    Child::new("error", condition)
}

pub fn capability_attrs(c: Child, cap: &CapabilityReport) -> Child {
    c.attr("battery", cap.battery_pct)
        .attr("network", cap.network_strength)
        .attr("hardware", cap.hardware_score)
        .attr("uptime", cap.uptime_secs)
}

pub fn parse_capability(c: &Child) -> Option<CapabilityReport> {
    Some(CapabilityReport {
        battery_pct: c.get("battery")?.parse().ok()?,
        network_strength: c.get("network")?.parse().ok()?,
        hardware_score: c.get("hardware")?.parse().ok()?,
        uptime_secs: c.get("uptime")?.parse().ok()?,
    })
}

pub fn attr_u64(c: &Child, key: &str) -> Option<u64> {
    c.get(key)?.parse().ok()
}

/// Splits `text` into pieces of at most `max` bytes on char boundaries.
pub fn chunk_text(text: &str, max: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        let mut cut = rest.len().min(max);
        while !rest.is_char_boundary(cut) {
            cut -= 1;
        }
        if cut == 0 {
            cut = rest.chars().next().map_or(rest.len(), char::len_utf8);
        }
        out.push(rest[..cut].to_string());
        rest = &rest[cut..];
    }
    if out.is_empty() {
        out.push(String::new());
    }
    out
}
