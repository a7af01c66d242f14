//! Two-tier mobile web-service registry.
//!
//! Navigator nodes keep the group registry and route requests to service
//! groups; each group elects one member as its registry node, which answers
//! queries against the group's service registry while every member keeps a
//! local replica. Nodes talk only in XML stanzas ([`stanza`]) and are driven
//! here by a seeded discrete-event simulator ([`simnet`]).
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod classify;
pub mod node;
pub mod registry;
pub mod simnet;
pub mod stanza;
pub mod time;
