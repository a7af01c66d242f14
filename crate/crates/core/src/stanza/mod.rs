//! Addressing and the three-stanza XML wire protocol.
//!
//! Canonical encoding: UTF-8, no declaration, one root element named after the
//! kind, root attributes in the order `id`, `type`, `to`, `from`, payload
//! children in order with their own attributes sorted by name, and no
//! whitespace between elements. Line breaks inside values are written as
//! character references so an encoded stanza never contains a raw LF.

mod ident;
pub mod xml;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

pub use ident::{
    is_token, parse_identifier, render_identifier, Identifier, DEVICE_GROUP, LOCAL_NET,
    NAVIGATORS_GROUP,
};
use xml::Element;

/// Upper bound on the canonical encoding of one stanza.
pub const MAX_STANZA_BYTES: usize = 64 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    InvalidUtf8,
    UnexpectedEof,
    Malformed,
    MismatchedTag,
    BadEntity,
    DuplicateAttribute,
    TooDeep,
    MixedContent,
    TrailingContent,
    UnknownRoot,
    MissingAttribute(&'static str),
    UnexpectedAttribute,
    IllegalType,
    EmptyToken,
    MissingAt,
    IllegalCharacter,
    InvalidIdentifier,
    TooLarge,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::MissingAttribute(a) => write!(f, "missing attribute `{a}`"),
            ParseErrorKind::IllegalType => f.write_str("illegal type attribute for stanza kind"),
            other => write!(f, "{other:?}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("parse error at byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum StanzaError {
    #[error("invalid stanza: {0}")]
    InvalidStanza(&'static str),
    #[error("encoded stanza is {0} bytes, limit is {MAX_STANZA_BYTES}")]
    TooLarge(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StanzaKind {
    Message,
    Presence,
    Iq,
}

impl StanzaKind {
    pub fn element_name(self) -> &'static str {
        match self {
            StanzaKind::Message => "message",
            StanzaKind::Presence => "presence",
            StanzaKind::Iq => "iq",
        }
    }

    pub fn from_element_name(name: &str) -> Option<Self> {
        match name {
            "message" => Some(StanzaKind::Message),
            "presence" => Some(StanzaKind::Presence),
            "iq" => Some(StanzaKind::Iq),
            _ => None,
        }
    }

    /// The `type` values legal for this kind.
    pub fn legal_types(self) -> &'static [&'static str] {
        match self {
            StanzaKind::Message => &["push", "pull", "binding", "election"],
            StanzaKind::Presence => &["available", "unavailable"],
            StanzaKind::Iq => &["get", "set", "result", "error"],
        }
    }
}

/// One payload element: a name, sorted attributes and text content.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Child {
    pub name: String,
    pub attrs: BTreeMap<String, String>,
    pub text: String,
}

impl Child {
    pub fn new(name: &str, text: impl Into<String>) -> Self {
        Child {
            name: name.into(),
            attrs: BTreeMap::new(),
            text: text.into(),
        }
    }

    pub fn empty(name: &str) -> Self {
        Self::new(name, "")
    }

    pub fn attr(mut self, key: &str, value: impl ToString) -> Self {
        self.attrs.insert(key.into(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).map(String::as_str)
    }

    fn to_element(&self) -> Element {
        let mut el = Element::with_text(self.name.as_str(), self.text.as_str());
        for (k, v) in &self.attrs {
            el.attrs.push((k.clone(), v.clone()));
        }
        el
    }

    /// Bytes this child adds to an encoded stanza.
    pub fn encoded_len(&self) -> usize {
        self.to_element().to_xml().len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stanza {
    pub kind: StanzaKind,
    pub id: String,
    pub type_attr: String,
    pub to: Identifier,
    pub from: Identifier,
    pub payload: Vec<Child>,
}

impl Stanza {
    pub fn new(
        kind: StanzaKind,
        id: impl Into<String>,
        type_attr: &str,
        to: Identifier,
        from: Identifier,
    ) -> Self {
        Stanza {
            kind,
            id: id.into(),
            type_attr: type_attr.into(),
            to,
            from,
            payload: Vec::new(),
        }
    }

    pub fn with(mut self, child: Child) -> Self {
        self.payload.push(child);
        self
    }

    pub fn child(&self, name: &str) -> Option<&Child> {
        self.payload.iter().find(|c| c.name == name)
    }

    pub fn children<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Child> + 'a {
        self.payload.iter().filter(move |c| c.name == name)
    }

    pub fn child_text(&self, name: &str) -> Option<&str> {
        self.child(name).map(|c| c.text.as_str())
    }

    /// First payload element, which names the operation for Iq requests.
    pub fn op(&self) -> Option<&Child> {
        self.payload.first()
    }

    pub fn is_iq_request(&self) -> bool {
        self.kind == StanzaKind::Iq && matches!(self.type_attr.as_str(), "get" | "set")
    }

    pub fn is_iq_reply(&self) -> bool {
        self.kind == StanzaKind::Iq && matches!(self.type_attr.as_str(), "result" | "error")
    }

    pub fn encoded_len(&self) -> usize {
        self.to_element().to_xml().len()
    }

    pub fn validate(&self) -> Result<(), StanzaError> {
        if self.id.is_empty() {
            return Err(StanzaError::InvalidStanza("empty id"));
        }
        if !self.kind.legal_types().contains(&self.type_attr.as_str()) {
            return Err(StanzaError::InvalidStanza("illegal type for kind"));
        }
        for c in &self.payload {
            if !xml::is_name(&c.name) {
                return Err(StanzaError::InvalidStanza("illegal payload element name"));
            }
            if c.attrs.keys().any(|k| !xml::is_name(k)) {
                return Err(StanzaError::InvalidStanza("illegal payload attribute name"));
            }
        }
        Ok(())
    }

    fn to_element(&self) -> Element {
        let mut root = Element::new(self.kind.element_name())
            .attr("id", self.id.as_str())
            .attr("type", self.type_attr.as_str())
            .attr("to", self.to.to_string())
            .attr("from", self.from.to_string());
        for c in &self.payload {
            root.children.push(c.to_element());
        }
        root
    }
}

/// Canonical bytes of `stanza`.
pub fn encode(stanza: &Stanza) -> Result<Vec<u8>, StanzaError> {
    stanza.validate()?;
    let bytes = stanza.to_element().to_xml().into_bytes();
    if bytes.len() > MAX_STANZA_BYTES {
        return Err(StanzaError::TooLarge(bytes.len()));
    }
    Ok(bytes)
}

/// Parses canonical or whitespace/attribute-order variant renderings.
pub fn decode(bytes: &[u8]) -> Result<Stanza, ParseError> {
    let text = core::str::from_utf8(bytes).map_err(|e| ParseError {
        offset: e.valid_up_to(),
        kind: ParseErrorKind::InvalidUtf8,
    })?;
    let root_at = text.len() - text.trim_start_matches([' ', '\t', '\n', '\r']).len();
    let at = |kind| ParseError {
        offset: root_at,
        kind,
    };
    let root = xml::parse_element(text, 2)?;
    let kind = StanzaKind::from_element_name(&root.name).ok_or(at(ParseErrorKind::UnknownRoot))?;

    let mut id = None;
    let mut type_attr = None;
    let mut to = None;
    let mut from = None;
    for (k, v) in root.attrs {
        let slot = match k.as_str() {
            "id" => &mut id,
            "type" => &mut type_attr,
            "to" => &mut to,
            "from" => &mut from,
            _ => return Err(at(ParseErrorKind::UnexpectedAttribute)),
        };
        *slot = Some(v);
    }
    let id = id
        .filter(|s| !s.is_empty())
        .ok_or(at(ParseErrorKind::MissingAttribute("id")))?;
    let type_attr = type_attr.ok_or(at(ParseErrorKind::MissingAttribute("type")))?;
    if !kind.legal_types().contains(&type_attr.as_str()) {
        return Err(at(ParseErrorKind::IllegalType));
    }
    let ident = |v: Option<String>, name| -> Result<Identifier, ParseError> {
        let v = v.ok_or(at(ParseErrorKind::MissingAttribute(name)))?;
        parse_identifier(&v).map_err(|_| at(ParseErrorKind::InvalidIdentifier))
    };
    let to = ident(to, "to")?;
    let from = ident(from, "from")?;

    let mut payload = Vec::with_capacity(root.children.len());
    for c in root.children {
        let mut attrs = BTreeMap::new();
        for (k, v) in c.attrs {
            attrs.insert(k, v);
        }
        payload.push(Child {
            name: c.name,
            attrs,
            text: c.text,
        });
    }
    let stanza = Stanza {
        kind,
        id,
        type_attr,
        to,
        from,
        payload,
    };
    if stanza.to_element().to_xml().len() > MAX_STANZA_BYTES {
        return Err(at(ParseErrorKind::TooLarge));
    }
    Ok(stanza)
}
