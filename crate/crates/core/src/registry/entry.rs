use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use super::RegistryError;
use crate::stanza::xml::Element;
use crate::stanza::{is_token, parse_identifier, Identifier};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Availability {
    Available,
    Unavailable,
}

impl Availability {
    pub fn as_str(self) -> &'static str {
        match self {
            Availability::Available => "available",
            Availability::Unavailable => "unavailable",
        }
    }

    /// Capitalized form used in presence `<status>` text.
    pub fn status_text(self) -> &'static str {
        match self {
            Availability::Available => "Available",
            Availability::Unavailable => "Unavailable",
        }
    }

    /// Accepts either case form.
    pub fn parse(s: &str) -> Option<Self> {
        if s.eq_ignore_ascii_case("available") {
            Some(Availability::Available)
        } else if s.eq_ignore_ascii_case("unavailable") {
            Some(Availability::Unavailable)
        } else {
            None
        }
    }
}

impl fmt::Display for Availability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryKind {
    Service,
    Group,
}

impl EntryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryKind::Service => "service",
            EntryKind::Group => "group",
        }
    }
}

/// Row type stored in a [`super::RegistryStore`].
pub trait Entry: Clone + PartialEq + fmt::Debug {
    const KIND: EntryKind;

    fn id(&self) -> &str;
    fn version(&self) -> u64;
    fn set_version(&mut self, version: u64);
    fn validate(&self) -> Result<(), RegistryError>;
    fn to_element(&self) -> Element;
    fn from_element(el: &Element) -> Result<Self, RegistryError>;
    /// Case-insensitive containment; `needle` is already lowercase.
    fn matches_text(&self, needle: &str) -> bool;
    fn in_group(&self, group: &str) -> bool;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServiceEntry {
    pub service_name: String,
    pub access_point: Identifier,
    pub service_id: String,
    pub description: String,
    pub service_groups: Vec<String>,
    pub availability: Availability,
    pub location: Option<String>,
    pub provider: String,
    pub other_info: BTreeMap<String, String>,
    pub version: u64,
}

impl ServiceEntry {
    /// An Available entry with `access_point = group@net/service_id`.
    pub fn new(
        group: &Identifier,
        service_id: &str,
        name: &str,
        description: &str,
        provider: &str,
    ) -> Result<Self, RegistryError> {
        let access_point = group
            .with_service(service_id)
            .map_err(|_| RegistryError::InvariantViolation("service id is not a token"))?;
        Ok(ServiceEntry {
            service_name: name.into(),
            service_id: access_point.service_id().unwrap_or_default().into(),
            access_point,
            description: description.into(),
            service_groups: alloc::vec![group.group_id().into()],
            availability: Availability::Available,
            location: None,
            provider: provider.into(),
            other_info: BTreeMap::new(),
            version: 0,
        })
    }
}

fn info_children(el: &mut Element, info: &BTreeMap<String, String>) {
    for (k, v) in info {
        el.children
            .push(Element::with_text("info", v.as_str()).attr("key", k.as_str()));
    }
}

struct Fields<'a> {
    el: &'a Element,
}

impl<'a> Fields<'a> {
    fn one(&self, name: &'static str) -> Result<&'a str, RegistryError> {
        let mut it = self.el.children.iter().filter(|c| c.name == name);
        match (it.next(), it.next()) {
            (Some(c), None) => Ok(c.text.as_str()),
            (None, _) => Err(RegistryError::Schema(name)),
            _ => Err(RegistryError::Schema("duplicate field")),
        }
    }

    fn opt(&self, name: &'static str) -> Result<Option<&'a str>, RegistryError> {
        let mut it = self.el.children.iter().filter(|c| c.name == name);
        match (it.next(), it.next()) {
            (c, None) => Ok(c.map(|c| c.text.as_str())),
            _ => Err(RegistryError::Schema("duplicate field")),
        }
    }

    fn many(&self, name: &'static str) -> impl Iterator<Item = &'a Element> + 'a {
        self.el.children.iter().filter(move |c| c.name == name)
    }

    fn info(&self) -> Result<BTreeMap<String, String>, RegistryError> {
        let mut map = BTreeMap::new();
        for c in self.many("info") {
            let key = c.get_attr("key").ok_or(RegistryError::Schema("info key"))?;
            if map.insert(key.to_string(), c.text.clone()).is_some() {
                return Err(RegistryError::Schema("duplicate info key"));
            }
        }
        Ok(map)
    }

    fn version(&self) -> Result<u64, RegistryError> {
        self.one("version")?
            .parse()
            .map_err(|_| RegistryError::Schema("version"))
    }

    fn id(&self) -> Result<&'a str, RegistryError> {
        if self.el.name != "entry" {
            return Err(RegistryError::Schema("entry element"));
        }
        self.el.get_attr("id").ok_or(RegistryError::Schema("entry id"))
    }

    fn known(&self, names: &[&str]) -> Result<(), RegistryError> {
        if self.el.attrs.len() != 1 {
            return Err(RegistryError::Schema("entry attributes"));
        }
        if self.el.children.iter().any(|c| !names.contains(&c.name.as_str())) {
            return Err(RegistryError::Schema("unknown field"));
        }
        Ok(())
    }
}

impl Entry for ServiceEntry {
    const KIND: EntryKind = EntryKind::Service;

    fn id(&self) -> &str {
        &self.service_id
    }

    fn version(&self) -> u64 {
        self.version
    }

    fn set_version(&mut self, version: u64) {
        self.version = version;
    }

    fn validate(&self) -> Result<(), RegistryError> {
        if !is_token(&self.service_id) {
            return Err(RegistryError::InvariantViolation("service id is not a token"));
        }
        if self.access_point.service_id() != Some(self.service_id.as_str()) {
            return Err(RegistryError::InvariantViolation("access point does not name the service"));
        }
        if self.service_groups.is_empty() || !self.service_groups.iter().all(|g| is_token(g)) {
            return Err(RegistryError::InvariantViolation("service groups"));
        }
        if !is_token(&self.provider) {
            return Err(RegistryError::InvariantViolation("provider is not a token"));
        }
        Ok(())
    }

    fn to_element(&self) -> Element {
        let mut el = Element::new("entry")
            .attr("id", self.service_id.as_str())
            .child(Element::with_text("name", self.service_name.as_str()))
            .child(Element::with_text("access", self.access_point.to_string()))
            .child(Element::with_text("description", self.description.as_str()));
        for g in &self.service_groups {
            el.children.push(Element::with_text("group", g.as_str()));
        }
        el.children
            .push(Element::with_text("availability", self.availability.as_str()));
        if let Some(loc) = &self.location {
            el.children.push(Element::with_text("location", loc.as_str()));
        }
        el.children
            .push(Element::with_text("provider", self.provider.as_str()));
        info_children(&mut el, &self.other_info);
        el.children
            .push(Element::with_text("version", self.version.to_string()));
        el
    }

    fn from_element(el: &Element) -> Result<Self, RegistryError> {
        let f = Fields { el };
        let id = f.id()?;
        f.known(&[
            "name",
            "access",
            "description",
            "group",
            "availability",
            "location",
            "provider",
            "info",
            "version",
        ])?;
        let entry = ServiceEntry {
            service_name: f.one("name")?.into(),
            access_point: parse_identifier(f.one("access")?)
                .map_err(|_| RegistryError::Schema("access"))?,
            service_id: id.into(),
            description: f.one("description")?.into(),
            service_groups: f.many("group").map(|g| g.text.clone()).collect(),
            availability: Availability::parse(f.one("availability")?)
                .ok_or(RegistryError::Schema("availability"))?,
            location: f.opt("location")?.map(Into::into),
            provider: f.one("provider")?.into(),
            other_info: f.info()?,
            version: f.version()?,
        };
        entry.validate()?;
        Ok(entry)
    }

    fn matches_text(&self, needle: &str) -> bool {
        self.service_name.to_lowercase().contains(needle)
            || self.description.to_lowercase().contains(needle)
    }

    fn in_group(&self, group: &str) -> bool {
        self.service_groups.iter().any(|g| g == group)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupEntry {
    pub group_name: String,
    pub group_domain: String,
    pub group_description: String,
    pub registrant: String,
    pub group_id: String,
    /// Multicast channel of the group, always `group_id@net_id`.
    pub group_access_point: Identifier,
    pub other_info: BTreeMap<String, String>,
    pub version: u64,
}

impl GroupEntry {
    pub fn new(group_id: &str, net: &str, domain: &str, registrant: &str) -> Result<Self, RegistryError> {
        let access = Identifier::group(group_id, net)
            .map_err(|_| RegistryError::InvariantViolation("group id is not a token"))?;
        Ok(GroupEntry {
            group_name: group_id.into(),
            group_domain: domain.into(),
            group_description: String::new(),
            registrant: registrant.into(),
            group_id: access.group_id().into(),
            group_access_point: access,
            other_info: BTreeMap::new(),
            version: 0,
        })
    }
}

impl Entry for GroupEntry {
    const KIND: EntryKind = EntryKind::Group;

    fn id(&self) -> &str {
        &self.group_id
    }

    fn version(&self) -> u64 {
        self.version
    }

    fn set_version(&mut self, version: u64) {
        self.version = version;
    }

    fn validate(&self) -> Result<(), RegistryError> {
        if !is_token(&self.group_id) {
            return Err(RegistryError::InvariantViolation("group id is not a token"));
        }
        if self.group_access_point.group_id() != self.group_id || !self.group_access_point.is_channel() {
            return Err(RegistryError::InvariantViolation("access point must be group_id@net_id"));
        }
        if !is_token(&self.registrant) {
            return Err(RegistryError::InvariantViolation("registrant is not a token"));
        }
        Ok(())
    }

    fn to_element(&self) -> Element {
        let mut el = Element::new("entry")
            .attr("id", self.group_id.as_str())
            .child(Element::with_text("name", self.group_name.as_str()))
            .child(Element::with_text("domain", self.group_domain.as_str()))
            .child(Element::with_text("description", self.group_description.as_str()))
            .child(Element::with_text("registrant", self.registrant.as_str()))
            .child(Element::with_text("access", self.group_access_point.to_string()));
        info_children(&mut el, &self.other_info);
        el.children
            .push(Element::with_text("version", self.version.to_string()));
        el
    }

    fn from_element(el: &Element) -> Result<Self, RegistryError> {
        let f = Fields { el };
        let id = f.id()?;
        f.known(&["name", "domain", "description", "registrant", "access", "info", "version"])?;
        let entry = GroupEntry {
            group_name: f.one("name")?.into(),
            group_domain: f.one("domain")?.into(),
            group_description: f.one("description")?.into(),
            registrant: f.one("registrant")?.into(),
            group_id: id.into(),
            group_access_point: parse_identifier(f.one("access")?)
                .map_err(|_| RegistryError::Schema("access"))?,
            other_info: f.info()?,
            version: f.version()?,
        };
        entry.validate()?;
        Ok(entry)
    }

    fn matches_text(&self, needle: &str) -> bool {
        self.group_name.to_lowercase().contains(needle)
            || self.group_description.to_lowercase().contains(needle)
    }

    fn in_group(&self, group: &str) -> bool {
        self.group_id == group
    }
}
