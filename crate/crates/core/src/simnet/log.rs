use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{self, Write};

use crate::time::Micros;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LogKind {
    Send,
    Deliver,
    /// Dropped by the loss model.
    Lost,
    /// Dropped because the receiver was over its request capacity.
    Shed,
    /// Dropped because the receiver was down, or the stanza could not be encoded.
    Discard,
    /// Dropped by a partition.
    Blocked,
    Up,
    Down,
}

impl LogKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LogKind::Send => "send",
            LogKind::Deliver => "deliver",
            LogKind::Lost => "lost",
            LogKind::Shed => "shed",
            LogKind::Discard => "discard",
            LogKind::Blocked => "blocked",
            LogKind::Up => "up",
            LogKind::Down => "down",
        }
    }
}

/// One traffic log line. For sends `to` is the stanza address; for
/// per-receiver records it is the receiving node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogEvent {
    pub time: Micros,
    pub kind: LogKind,
    pub from: String,
    pub to: String,
    pub bytes: Rc<[u8]>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrafficLog {
    pub events: Vec<LogEvent>,
}

impl TrafficLog {
    pub fn push(&mut self, time: Micros, kind: LogKind, from: &str, to: &str, bytes: Rc<[u8]>) {
        self.events.push(LogEvent {
            time,
            kind,
            from: from.into(),
            to: to.into(),
            bytes,
        });
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LogEvent> {
        self.events.iter()
    }

    /// `<time>\t<kind>\t<from>\t<to>\t<hex>` per line.
    pub fn write<W: Write>(&self, out: &mut W) -> fmt::Result {
        for e in &self.events {
            write!(out, "{}\t{}\t{}\t{}\t", e.time, e.kind.as_str(), e.from, e.to)?;
            for b in e.bytes.iter() {
                write!(out, "{b:02x}")?;
            }
            out.write_char('\n')?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        self.write(&mut s).expect("writing to a String cannot fail");
        s
    }
}
