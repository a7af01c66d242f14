//! Text snapshot format.
//!
//! ```text
//! MOBREG-SNAPSHOT v1 <group|service> <store_version> <entry_count> <crc32-of-body-hex>\n
//! <entry id="...">...</entry>\n      (one canonical element per entry, id order)
//! ```
//!
//! The body is every byte after the header line. The checksum is CRC-32
//! (IEEE) as eight lowercase hex digits.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{Entry, RegistryError, RegistryStore};
use crate::stanza::xml;

pub const SNAPSHOT_MAGIC: &str = "MOBREG-SNAPSHOT";

pub(super) fn write<E: Entry>(store: &RegistryStore<E>) -> Vec<u8> {
    let mut body = String::new();
    for e in store.entries() {
        e.to_element().write(&mut body);
        body.push('\n');
    }
    let crc = crc32fast::hash(body.as_bytes());
    let mut out = format!(
        "{SNAPSHOT_MAGIC} v1 {} {} {} {crc:08x}\n",
        E::KIND.as_str(),
        store.version(),
        store.len()
    );
    out.push_str(&body);
    out.into_bytes()
}

pub(super) fn read<E: Entry>(bytes: &[u8]) -> Result<RegistryStore<E>, RegistryError> {
    let corrupt = RegistryError::CorruptSnapshot;
    let text = core::str::from_utf8(bytes).map_err(|_| corrupt("not UTF-8"))?;
    let nl = text.find('\n').ok_or(corrupt("missing header"))?;
    let (header, body) = (&text[..nl], &text[nl + 1..]);

    let fields: Vec<&str> = header.split(' ').collect();
    let [magic, ver, kind, store_version, count, crc] = fields[..] else {
        return Err(corrupt("header field count"));
    };
    if magic != SNAPSHOT_MAGIC || ver != "v1" {
        return Err(corrupt("bad magic"));
    }
    if kind != E::KIND.as_str() {
        return Err(corrupt("entry kind mismatch"));
    }
    let store_version: u64 = store_version.parse().map_err(|_| corrupt("store version"))?;
    let count: usize = count.parse().map_err(|_| corrupt("entry count"))?;
    if crc.len() != 8 {
        return Err(corrupt("checksum field"));
    }
    let crc = u32::from_str_radix(crc, 16).map_err(|_| corrupt("checksum field"))?;
    if crc32fast::hash(body.as_bytes()) != crc {
        return Err(corrupt("checksum mismatch"));
    }
    if !(body.is_empty() || body.ends_with('\n')) {
        return Err(corrupt("unterminated entry line"));
    }

    let mut entries = BTreeMap::new();
    for line in body.lines() {
        let el = xml::parse_element(line, 2).map_err(|_| corrupt("entry is not well-formed"))?;
        let entry = E::from_element(&el).map_err(|_| corrupt("entry schema"))?;
        if entry.version() > store_version {
            return Err(corrupt("entry newer than store"));
        }
        let id = String::from(entry.id());
        if entries.insert(id, entry).is_some() {
            return Err(corrupt("duplicate entry id"));
        }
    }
    if entries.len() != count {
        return Err(corrupt("entry count mismatch"));
    }
    Ok(RegistryStore::from_parts(entries, store_version))
}
