use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::classify::DomainTaxonomy;
use crate::node::{Command, DeviceSignal, NodeError, NodeSpec, ProtocolConfig};
use crate::stanza::LOCAL_NET;
use crate::time::{ms, Micros};

/// Per-message delay and loss. Loss is an independent draw per receiver.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkModel {
    pub base_latency: Micros,
    /// Uniform extra delay in `[0, jitter]`.
    pub jitter: Micros,
    pub loss_prob: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            base_latency: ms(10),
            jitter: ms(10),
            loss_prob: 0.0,
        }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(ScenarioError::Invalid("loss probability outside [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ChannelModel {
    pub default: LinkModel,
    /// Keyed by bare channel address, e.g. `hospital@local`; unicast
    /// traffic uses the `_device@<net>` key.
    pub overrides: BTreeMap<String, LinkModel>,
}

impl ChannelModel {
    pub fn lossless(latency: Micros) -> Self {
        ChannelModel {
            default: LinkModel {
                base_latency: latency,
                jitter: 0,
                loss_prob: 0.0,
            },
            overrides: BTreeMap::new(),
        }
    }

    pub fn link(&self, channel: &str) -> &LinkModel {
        self.overrides.get(channel).unwrap_or(&self.default)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.default.validate()?;
        self.overrides.values().try_for_each(LinkModel::validate)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Up(String),
    Down(String),
    Signal(String, DeviceSignal),
    Command(String, Command),
    /// Nodes listed in different sides cannot reach each other; unlisted
    /// nodes reach everyone.
    Partition(Vec<BTreeSet<String>>),
    Heal,
}

impl Action {
    pub fn node(&self) -> Option<&str> {
        match self {
            Action::Up(n) | Action::Down(n) | Action::Signal(n, _) | Action::Command(n, _) => Some(n),
            Action::Partition(_) | Action::Heal => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScriptedEvent {
    pub at: Micros,
    pub action: Action,
}

/// Repeated availability probe from a consumer to one group.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSpec {
    pub node: String,
    pub group: String,
    pub text: String,
    pub start: Micros,
    pub every: Micros,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub seed: u64,
    pub duration: Micros,
    pub net: String,
    pub nodes: Vec<NodeSpec>,
    pub taxonomy: DomainTaxonomy,
    pub events: Vec<ScriptedEvent>,
    pub channel: ChannelModel,
    pub probes: Vec<ProbeSpec>,
    pub protocol: ProtocolConfig,
    /// Iq requests a node accepts per simulated second; the rest are shed.
    pub request_capacity: u32,
    /// Quiet time after `duration` before final state is taken; `None`
    /// derives it from the protocol timers.
    pub settle: Option<Micros>,
}

pub const DEFAULT_REQUEST_CAPACITY: u32 = 100;

impl Scenario {
    pub fn new(seed: u64, duration: Micros) -> Self {
        Scenario {
            seed,
            duration,
            net: LOCAL_NET.into(),
            nodes: Vec::new(),
            taxonomy: DomainTaxonomy::default(),
            events: Vec::new(),
            channel: ChannelModel::default(),
            probes: Vec::new(),
            protocol: ProtocolConfig::default(),
            request_capacity: DEFAULT_REQUEST_CAPACITY,
            settle: None,
        }
    }

    pub fn at(mut self, at: Micros, action: Action) -> Self {
        self.events.push(ScriptedEvent { at, action });
        self
    }

    /// Time allowed after the last scripted event for pulls, failure
    /// detection and elections to finish.
    pub fn settle_time(&self) -> Micros {
        self.settle.unwrap_or_else(|| {
            let p = &self.protocol;
            2 * p.pull_period + p.failover_bound() + ms(1000)
        })
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.channel.validate()?;
        self.protocol
            .validate()
            .map_err(|e| ScenarioError::Node(NodeError::Config(e)))?;
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(ScenarioError::DuplicateNode(n.id.clone()));
            }
        }
        let known = |n: &str| -> Result<(), ScenarioError> {
            if ids.contains(n) {
                Ok(())
            } else {
                Err(ScenarioError::UnknownNode(n.into()))
            }
        };
        for n in &self.nodes {
            for nav in &n.navigators {
                known(nav)?;
            }
        }
        for e in &self.events {
            if e.at > self.duration {
                return Err(ScenarioError::EventAfterDuration {
                    at: e.at,
                    duration: self.duration,
                });
            }
            if let Some(n) = e.action.node() {
                known(n)?;
            }
            if let Action::Command(_, Command::Bind { provider, .. }) = &e.action {
                known(provider)?;
            }
            if let Action::Partition(sides) = &e.action {
                for n in sides.iter().flatten() {
                    known(n)?;
                }
            }
        }
        for p in &self.probes {
            known(&p.node)?;
            if p.every == 0 {
                return Err(ScenarioError::Invalid("probe period must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` declared twice")]
    DuplicateNode(String),
    #[error("event at {at}us is after the scenario duration {duration}us")]
    EventAfterDuration { at: Micros, duration: Micros },
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error("{0}")]
    Invalid(String),
}
