use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use super::{ParseError, ParseErrorKind};

/// Network id used for private registries.
pub const LOCAL_NET: &str = "local";

/// Reserved group token of the common access channel shared by navigators.
pub const NAVIGATORS_GROUP: &str = "_navigators";

/// Reserved group token for per-device unicast addresses (`_device@net/<node>`).
/// Group tokens starting with `_` never name a service group.
pub const DEVICE_GROUP: &str = "_device";

/// `group_id@net_id[/service_id]` address. All tokens are lowercase and drawn
/// from `[a-z0-9._-]`; mixed-case input is folded on construction.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Identifier {
    group: String,
    net: String,
    service: Option<String>,
}

pub fn is_token(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || matches!(b, b'.' | b'_' | b'-'))
}

/// Lowercases and validates one token. Offset in errors is relative to `s`.
fn token(s: &str) -> Result<String, ParseErrorKind> {
    if s.is_empty() {
        return Err(ParseErrorKind::EmptyToken);
    }
    let t = s.to_ascii_lowercase();
    if is_token(&t) {
        Ok(t)
    } else {
        Err(ParseErrorKind::IllegalCharacter)
    }
}

impl Identifier {
    pub fn new(group: &str, net: &str, service: Option<&str>) -> Result<Self, ParseError> {
        let at = |kind| ParseError { offset: 0, kind };
        Ok(Identifier {
            group: token(group).map_err(at)?,
            net: token(net).map_err(at)?,
            service: service.map(token).transpose().map_err(at)?,
        })
    }

    /// Multicast address of a service group.
    pub fn group(group: &str, net: &str) -> Result<Self, ParseError> {
        Self::new(group, net, None)
    }

    pub fn device(node: &str, net: &str) -> Result<Self, ParseError> {
        Self::new(DEVICE_GROUP, net, Some(node))
    }

    pub fn navigators(net: &str) -> Result<Self, ParseError> {
        Self::new(NAVIGATORS_GROUP, net, None)
    }

    pub fn group_id(&self) -> &str {
        &self.group
    }

    pub fn net_id(&self) -> &str {
        &self.net
    }

    pub fn service_id(&self) -> Option<&str> {
        self.service.as_deref()
    }

    pub fn is_channel(&self) -> bool {
        self.service.is_none()
    }

    pub fn is_navigators(&self) -> bool {
        self.service.is_none() && self.group == NAVIGATORS_GROUP
    }

    /// The node id when this is a device address.
    pub fn device_node(&self) -> Option<&str> {
        if self.group == DEVICE_GROUP {
            self.service.as_deref()
        } else {
            None
        }
    }

    /// The bare group address (service part dropped).
    pub fn bare(&self) -> Identifier {
        Identifier {
            group: self.group.clone(),
            net: self.net.clone(),
            service: None,
        }
    }

    pub fn with_service(&self, service: &str) -> Result<Identifier, ParseError> {
        Identifier::new(&self.group, &self.net, Some(service))
    }
}

impl fmt::Display for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.group, self.net)?;
        if let Some(s) = &self.service {
            write!(f, "/{s}")?;
        }
        Ok(())
    }
}

impl FromStr for Identifier {
    type Err = ParseError;

    fn from_str(text: &str) -> Result<Self, ParseError> {
        parse_identifier(text)
    }
}

pub fn parse_identifier(text: &str) -> Result<Identifier, ParseError> {
    let at = |offset, kind| ParseError { offset, kind };
    let Some(at_pos) = text.find('@') else {
        return Err(at(text.len(), ParseErrorKind::MissingAt));
    };
    let (group, rest) = (&text[..at_pos], &text[at_pos + 1..]);
    let (net, service) = match rest.find('/') {
        Some(p) => (&rest[..p], Some(&rest[p + 1..])),
        None => (rest, None),
    };
    let group = token(group).map_err(|k| at(0, k))?;
    let net_off = at_pos + 1;
    let net = token(net).map_err(|k| at(net_off, k))?;
    let service = match service {
        Some(s) => Some(token(s).map_err(|k| at(net_off + net.len() + 1, k))?),
        None => None,
    };
    Ok(Identifier {
        group,
        net,
        service,
    })
}

pub fn render_identifier(id: &Identifier) -> String {
    alloc::format!("{id}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn parses_mixed_case_example() {
        let id = parse_identifier("trafficinfo@acmeCity/mainstreet").unwrap();
        assert_eq!(id.group_id(), "trafficinfo");
        assert_eq!(id.net_id(), "acmecity");
        assert_eq!(id.service_id(), Some("mainstreet"));
        assert_eq!(id.to_string(), "trafficinfo@acmecity/mainstreet");
    }

    #[test]
    fn private_registry() {
        let id = parse_identifier("hospital@local").unwrap();
        assert_eq!((id.group_id(), id.net_id(), id.service_id()), ("hospital", "local", None));
    }

    #[test]
    fn rejects_bad_forms() {
        assert_eq!(parse_identifier("@local").unwrap_err().kind, ParseErrorKind::EmptyToken);
        assert_eq!(parse_identifier("hospital").unwrap_err().kind, ParseErrorKind::MissingAt);
        assert_eq!(parse_identifier("a@b/").unwrap_err().kind, ParseErrorKind::EmptyToken);
        assert_eq!(parse_identifier("a b@c").unwrap_err().kind, ParseErrorKind::IllegalCharacter);
        assert_eq!(parse_identifier("a@b/c/d").unwrap_err().kind, ParseErrorKind::IllegalCharacter);
        assert_eq!(parse_identifier("a@b@c").unwrap_err().kind, ParseErrorKind::IllegalCharacter);
        assert_eq!(
            parse_identifier("a@b/c d").unwrap_err(),
            ParseError { offset: 4, kind: ParseErrorKind::IllegalCharacter }
        );
    }
}
