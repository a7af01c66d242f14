//! Group and service registry stores.
//!
//! Every mutation bumps a store-wide version by exactly one and appends a
//! changelog record, so a replica at version `v` catches up by applying the
//! records newer than `v` in order. The changelog keeps the most recent
//! [`DEFAULT_RETENTION`] records; a replica older than that must full-sync
//! from a snapshot.

mod entry;
mod snapshot;

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;

pub use entry::{Availability, Entry, EntryKind, GroupEntry, ServiceEntry};
pub use snapshot::SNAPSHOT_MAGIC;

pub const DEFAULT_RETENTION: usize = 10_000;
pub const DIFF_PAGE_LIMIT: usize = 200;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("invariant violated: {0}")]
    InvariantViolation(&'static str),
    #[error("no entry with id `{0}`")]
    NotFound(String),
    #[error("version {requested} precedes retained changelog (oldest diffable version {oldest})")]
    VersionTooOld { requested: u64, oldest: u64 },
    #[error("version {requested} is ahead of store version {current}")]
    VersionAhead { requested: u64, current: u64 },
    #[error("change record {got} does not follow replica version {expected}")]
    VersionGap { expected: u64, got: u64 },
    #[error("entry schema: {0}")]
    Schema(&'static str),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(&'static str),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ChangeOp<E> {
    Upsert(E),
    Delete,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChangeRecord<E> {
    pub version: u64,
    pub id: String,
    pub op: ChangeOp<E>,
}

/// One page of a selective update.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiffPage<E> {
    pub since: u64,
    pub records: Vec<ChangeRecord<E>>,
    /// Store version when the page was cut.
    pub head: u64,
}

impl<E> DiffPage<E> {
    pub fn last_version(&self) -> u64 {
        self.records.last().map_or(self.since, |r| r.version)
    }

    pub fn has_more(&self) -> bool {
        self.last_version() < self.head
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Query {
    ById(String),
    ByNameSubstring(String),
    ByGroup(String),
}

#[derive(Clone, Debug)]
pub struct RegistryStore<E> {
    entries: BTreeMap<String, E>,
    version: u64,
    /// Changelog covers versions `base+1 ..= version`.
    base: u64,
    changelog: VecDeque<ChangeRecord<E>>,
    retention: usize,
}

impl<E: Entry> Default for RegistryStore<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// Stores compare by content and version; changelog retention is not state.
impl<E: Entry> PartialEq for RegistryStore<E> {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version && self.entries == other.entries
    }
}

impl<E: Entry> RegistryStore<E> {
    pub fn new() -> Self {
        Self::with_retention(DEFAULT_RETENTION)
    }

    pub fn with_retention(retention: usize) -> Self {
        RegistryStore {
            entries: BTreeMap::new(),
            version: 0,
            base: 0,
            changelog: VecDeque::new(),
            retention: retention.max(1),
        }
    }

    /// A store holding `entries` at `version` with an empty changelog.
    pub(crate) fn from_parts(entries: BTreeMap<String, E>, version: u64) -> Self {
        RegistryStore {
            entries,
            version,
            base: version,
            changelog: VecDeque::new(),
            retention: DEFAULT_RETENTION,
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Oldest version `v` for which `diff_since(v)` succeeds.
    pub fn oldest_diffable(&self) -> u64 {
        self.base
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&E> {
        self.entries.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &E> {
        self.entries.values()
    }

    pub fn changelog(&self) -> impl Iterator<Item = &ChangeRecord<E>> {
        self.changelog.iter()
    }

    fn append(&mut self, record: ChangeRecord<E>) {
        self.version = record.version;
        self.changelog.push_back(record);
        while self.changelog.len() > self.retention {
            if let Some(r) = self.changelog.pop_front() {
                self.base = r.version;
            }
        }
    }

    pub fn upsert(&mut self, mut entry: E) -> Result<u64, RegistryError> {
        entry.validate()?;
        let version = self.version + 1;
        entry.set_version(version);
        let id: String = entry.id().into();
        self.entries.insert(id.clone(), entry.clone());
        self.append(ChangeRecord {
            version,
            id,
            op: ChangeOp::Upsert(entry),
        });
        Ok(version)
    }

    pub fn remove(&mut self, id: &str) -> Result<u64, RegistryError> {
        if self.entries.remove(id).is_none() {
            return Err(RegistryError::NotFound(id.into()));
        }
        let version = self.version + 1;
        self.append(ChangeRecord {
            version,
            id: id.into(),
            op: ChangeOp::Delete,
        });
        Ok(version)
    }

    /// Results ordered by version descending, then id ascending.
    pub fn lookup(&self, query: &Query) -> Vec<E> {
        let mut out: Vec<E> = match query {
            Query::ById(id) => self.entries.get(id.as_str()).cloned().into_iter().collect(),
            Query::ByNameSubstring(s) => {
                let needle = s.to_lowercase();
                self.entries
                    .values()
                    .filter(|e| e.matches_text(&needle))
                    .cloned()
                    .collect()
            }
            Query::ByGroup(g) => self
                .entries
                .values()
                .filter(|e| e.in_group(g))
                .cloned()
                .collect(),
        };
        out.sort_by(|a, b| b.version().cmp(&a.version()).then_with(|| a.id().cmp(b.id())));
        out
    }

    /// First page (at most [`DIFF_PAGE_LIMIT`] records) of changes after `since`.
    pub fn diff_since(&self, since: u64) -> Result<DiffPage<E>, RegistryError> {
        self.diff_page(since, DIFF_PAGE_LIMIT)
    }

    pub fn diff_page(&self, since: u64, limit: usize) -> Result<DiffPage<E>, RegistryError> {
        if since > self.version {
            return Err(RegistryError::VersionAhead {
                requested: since,
                current: self.version,
            });
        }
        if since < self.base {
            return Err(RegistryError::VersionTooOld {
                requested: since,
                oldest: self.base,
            });
        }
        let skip = (since - self.base) as usize;
        Ok(DiffPage {
            since,
            records: self
                .changelog
                .iter()
                .skip(skip)
                .take(limit.clamp(1, DIFF_PAGE_LIMIT))
                .cloned()
                .collect(),
            head: self.version,
        })
    }

    /// Every page from `since` to the current version, in order.
    pub fn diff_all(&self, since: u64) -> Result<Vec<DiffPage<E>>, RegistryError> {
        let mut pages = Vec::new();
        let mut at = since;
        loop {
            let page = self.diff_since(at)?;
            let more = page.has_more();
            at = page.last_version();
            pages.push(page);
            if !more {
                return Ok(pages);
            }
        }
    }

    /// Replays one record onto a replica; it must be the next version.
    pub fn apply(&mut self, record: ChangeRecord<E>) -> Result<(), RegistryError> {
        if record.version != self.version + 1 {
            return Err(RegistryError::VersionGap {
                expected: self.version + 1,
                got: record.version,
            });
        }
        match &record.op {
            ChangeOp::Upsert(e) => {
                e.validate()?;
                if e.id() != record.id || e.version() != record.version {
                    return Err(RegistryError::InvariantViolation("change record disagrees with entry"));
                }
                self.entries.insert(record.id.clone(), e.clone());
            }
            ChangeOp::Delete => {
                self.entries.remove(&record.id);
            }
        }
        self.append(record);
        Ok(())
    }

    /// Applies the records of `page` that are newer than this replica.
    pub fn apply_page(&mut self, page: &DiffPage<E>) -> Result<(), RegistryError> {
        for r in &page.records {
            if r.version <= self.version {
                continue;
            }
            self.apply(r.clone())?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Vec<u8> {
        snapshot::write(self)
    }

    pub fn restore(bytes: &[u8]) -> Result<Self, RegistryError> {
        snapshot::read(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stanza::parse_identifier;
    use alloc::format;

    fn svc(id: &str, name: &str) -> ServiceEntry {
        let g = parse_identifier("trafficinfo@acmecity").unwrap();
        ServiceEntry::new(&g, id, name, "traffic updates", "pa").unwrap()
    }

    #[test]
    fn upsert_base_case() {
        let mut s = RegistryStore::new();
        assert_eq!(s.upsert(svc("mainstreet", "Main")).unwrap(), 1);
        assert_eq!((s.version(), s.len()), (1, 1));
    }

    #[test]
    fn upsert_same_id_twice() {
        let mut s = RegistryStore::new();
        s.upsert(svc("mainstreet", "Main")).unwrap();
        let mut e = svc("mainstreet", "Main");
        e.availability = Availability::Unavailable;
        s.upsert(e).unwrap();
        assert_eq!((s.version(), s.len(), s.changelog().count()), (2, 1, 2));
        assert_eq!(s.get("mainstreet").unwrap().version, 2);
    }

    #[test]
    fn upsert_rejects_invalid_entry() {
        let mut s = RegistryStore::new();
        let mut e = svc("mainstreet", "Main");
        e.service_groups.clear();
        assert!(matches!(s.upsert(e), Err(RegistryError::InvariantViolation(_))));
        assert_eq!(s.version(), 0);
    }

    #[test]
    fn remove_paths() {
        let mut s = RegistryStore::new();
        s.upsert(svc("a", "A")).unwrap();
        let before = s.version();
        s.remove("a").unwrap();
        assert!(s.lookup(&Query::ById("a".into())).is_empty());
        let diff = s.diff_since(before).unwrap();
        assert_eq!(diff.records.len(), 1);
        assert_eq!(diff.records[0].op, ChangeOp::Delete);
        assert_eq!(s.remove("a"), Err(RegistryError::NotFound("a".into())));
        assert_eq!(s.version(), 2);
    }

    #[test]
    fn lookup_orders_by_version_then_id() {
        let mut s = RegistryStore::new();
        assert!(s.lookup(&Query::ByGroup("trafficinfo".into())).is_empty());
        s.upsert(svc("mainstreet", "Main street")).unwrap();
        s.upsert(svc("highstreet", "High street")).unwrap();
        s.upsert(svc("bstreet", "B street")).unwrap();
        let ids: Vec<_> = s
            .lookup(&Query::ByGroup("trafficinfo".into()))
            .into_iter()
            .map(|e| e.service_id)
            .collect();
        assert_eq!(ids, ["bstreet", "highstreet", "mainstreet"]);
        let hits = s.lookup(&Query::ByNameSubstring("HIGH".into()));
        assert_eq!(hits.len(), 1);
        assert_eq!(s.lookup(&Query::ByNameSubstring("updates".into())).len(), 3);
        assert!(s.lookup(&Query::ByGroup("hospital".into())).is_empty());
    }

    #[test]
    fn diff_edges() {
        let mut s = RegistryStore::with_retention(5);
        assert!(s.diff_since(0).unwrap().records.is_empty());
        for i in 0..12 {
            s.upsert(svc(&format!("s{i}"), "x")).unwrap();
        }
        assert!(s.diff_since(s.version()).unwrap().records.is_empty());
        assert_eq!(s.oldest_diffable(), 7);
        assert_eq!(
            s.diff_since(3),
            Err(RegistryError::VersionTooOld { requested: 3, oldest: 7 })
        );
        assert_eq!(s.diff_since(7).unwrap().records.len(), 5);
        assert!(matches!(s.diff_since(13), Err(RegistryError::VersionAhead { .. })));
    }

    #[test]
    fn diff_pages_are_capped() {
        let mut s = RegistryStore::new();
        for i in 0..450 {
            s.upsert(svc(&format!("s{i}"), "x")).unwrap();
        }
        let pages = s.diff_all(0).unwrap();
        let sizes: Vec<_> = pages.iter().map(|p| p.records.len()).collect();
        assert_eq!(sizes, [200, 200, 50]);
        let mut replica = RegistryStore::new();
        for p in &pages {
            replica.apply_page(p).unwrap();
        }
        assert_eq!(replica, s);
    }

    #[test]
    fn apply_rejects_gaps() {
        let mut s = RegistryStore::new();
        s.upsert(svc("a", "A")).unwrap();
        s.upsert(svc("b", "B")).unwrap();
        let rec = s.changelog().nth(1).unwrap().clone();
        let mut replica = RegistryStore::<ServiceEntry>::new();
        assert_eq!(
            replica.apply(rec),
            Err(RegistryError::VersionGap { expected: 1, got: 2 })
        );
    }
}
