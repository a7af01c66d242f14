//! TOML scenario files.
//!
//! Times are seconds (fractions allowed) unless a key says otherwise.
//!
//! ```toml
//! seed = 7                  # replaced by --seed when given
//! duration = 120
//! net = "local"             # optional
//! taxonomy = "taxonomy.tsv" # path relative to this file, or inline:
//! taxonomy_text = "hospital\thealth\tdoctor,nurse\n"
//! settle = 40               # optional quiet time after duration
//! request_capacity = 100    # Iq requests per node per second
//!
//! [channel]                 # default link; all keys optional
//! latency_ms = 10
//! jitter_ms = 10
//! loss = 0.0
//! [channel.overrides."hospital@local"]
//! latency_ms = 40
//!
//! [protocol]                # all keys optional
//! heartbeat = 5
//! miss_threshold = 3
//! election_jitter_ms = 500
//! election_window = 2
//! request_timeout = 2
//! request_retries = 3
//! pull_period = 10
//! register_backoff = 5
//! battery_low = 15
//! network_weak = 20
//! load_high = 90
//! reregister_on_resync = true
//!
//! [[node]]
//! id = "nav"
//! kind = "navigator"
//!
//! [[node]]
//! id = "p{}"                # with `count`, `{}` becomes 0, 1, ...
//! count = 4
//! navigators = ["nav"]      # default: every navigator
//! battery = 80              # also network, hardware, uptime, willing, start_down
//! [[node.service]]
//! key = "svc"
//! name = "Doctor rating {}"
//! description = "hospital doctor rating"
//! propose = "rating{}"      # optional; also location, info, autoregister,
//!                           # endpoint, returns, wsdl, params = [["name", "type"]]
//!
//! [[event]]
//! at = 30
//! node = "p0"
//! action = "down"
//! # up | down | battery | network | load (value) | register (service)
//! # discover (text) | probe (group, text) | presence (service, status)
//! # update (service, name/description/location) | unregister (service)
//! # bind (provider, service_id) | share (group) | partition (sides) | heal
//! every = 20                # optional repetition, `count` times;
//! count = 3                 # status = "toggle" alternates unavailable/available
//!
//! [[probe]]
//! node = "c0"
//! group = "hospital"
//! text = "doctor"
//! start = 5
//! every = 1
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use mobreg_core::classify::{ClassifyError, DomainTaxonomy};
use mobreg_core::node::{
    BindingInfo, CapabilityReport, Command, DeviceSignal, NodeKind, NodeSpec, ProtocolConfig, ServiceChanges,
    ServiceSpec,
};
use mobreg_core::registry::Availability;
use mobreg_core::simnet::{Action, ChannelModel, LinkModel, ProbeSpec, Scenario, ScenarioError, ScriptedEvent};
use mobreg_core::time::Micros;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Syntax { path: PathBuf, source: toml::de::Error },
    #[error("{0}")]
    Schema(String),
    #[error("taxonomy: {0}")]
    Taxonomy(#[from] ClassifyError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

fn schema(msg: impl Into<String>) -> LoadError {
    LoadError::Schema(msg.into())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    seed: Option<u64>,
    duration: f64,
    net: Option<String>,
    taxonomy: Option<String>,
    taxonomy_text: Option<String>,
    settle: Option<f64>,
    request_capacity: Option<u32>,
    #[serde(default)]
    channel: FileChannel,
    #[serde(default)]
    protocol: FileProtocol,
    #[serde(default, rename = "node")]
    nodes: Vec<FileNode>,
    #[serde(default, rename = "event")]
    events: Vec<FileEvent>,
    #[serde(default, rename = "probe")]
    probes: Vec<FileProbe>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileLink {
    latency_ms: Option<f64>,
    jitter_ms: Option<f64>,
    loss: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileChannel {
    latency_ms: Option<f64>,
    jitter_ms: Option<f64>,
    loss: Option<f64>,
    #[serde(default)]
    overrides: BTreeMap<String, FileLink>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileProtocol {
    heartbeat: Option<f64>,
    miss_threshold: Option<u32>,
    election_jitter_ms: Option<f64>,
    election_window: Option<f64>,
    request_timeout: Option<f64>,
    request_retries: Option<u32>,
    pull_period: Option<f64>,
    register_backoff: Option<f64>,
    battery_low: Option<u8>,
    network_weak: Option<u8>,
    load_high: Option<u8>,
    reregister_on_resync: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileNode {
    id: String,
    #[serde(default)]
    kind: Kind,
    count: Option<usize>,
    navigators: Option<Vec<String>>,
    battery: Option<u8>,
    network: Option<u8>,
    hardware: Option<u32>,
    uptime: Option<u64>,
    willing: Option<bool>,
    #[serde(default)]
    start_down: bool,
    #[serde(default, rename = "service")]
    services: Vec<FileService>,
}

#[derive(Deserialize, Default, Clone, Copy, PartialEq)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Navigator,
    #[default]
    Device,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileService {
    key: String,
    name: String,
    description: String,
    location: Option<String>,
    propose: Option<String>,
    #[serde(default = "yes")]
    autoregister: bool,
    #[serde(default)]
    info: BTreeMap<String, String>,
    #[serde(default)]
    endpoint: String,
    #[serde(default)]
    returns: String,
    wsdl: Option<String>,
    #[serde(default)]
    params: Vec<(String, String)>,
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileEvent {
    at: f64,
    action: String,
    node: Option<String>,
    every: Option<f64>,
    count: Option<usize>,
    value: Option<u8>,
    service: Option<String>,
    text: Option<String>,
    group: Option<String>,
    status: Option<String>,
    provider: Option<String>,
    service_id: Option<String>,
    name: Option<String>,
    description: Option<String>,
    location: Option<String>,
    sides: Option<Vec<Vec<String>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileProbe {
    node: String,
    group: String,
    text: String,
    start: f64,
    every: f64,
}

fn micros(what: &str, secs: f64) -> Result<Micros, LoadError> {
    if !secs.is_finite() || secs < 0.0 {
        return Err(schema(format!("{what} must be a non-negative number")));
    }
    Ok((secs * 1e6).round() as Micros)
}

fn millis(what: &str, ms: f64) -> Result<Micros, LoadError> {
    micros(what, ms / 1e3)
}

/// Loads a scenario file. `taxonomy` overrides the file's own taxonomy and
/// `seed` its seed.
pub fn load(path: &Path, taxonomy: Option<&Path>, seed: Option<u64>) -> Result<Scenario, LoadError> {
    let text = read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let tax_text = match taxonomy {
        Some(p) => Some(read(p)?),
        None => None,
    };
    parse(&text, base, tax_text.as_deref(), seed).map_err(|e| match e {
        LoadError::Syntax { source, .. } => LoadError::Syntax {
            path: path.into(),
            source,
        },
        e => e,
    })
}

fn read(path: &Path) -> Result<String, LoadError> {
    std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.into(),
        source,
    })
}

/// Parses scenario text; relative taxonomy paths resolve against `base`.
pub fn parse(text: &str, base: &Path, taxonomy: Option<&str>, seed: Option<u64>) -> Result<Scenario, LoadError> {
    let f: File = toml::from_str(text).map_err(|source| LoadError::Syntax {
        path: PathBuf::new(),
        source,
    })?;
    let mut sc = Scenario::new(seed.or(f.seed).unwrap_or(0), micros("duration", f.duration)?);
    if let Some(net) = f.net {
        sc.net = net;
    }
    sc.taxonomy = match (taxonomy, &f.taxonomy, &f.taxonomy_text) {
        (Some(t), _, _) => DomainTaxonomy::parse(t)?,
        (None, Some(_), Some(_)) => return Err(schema("give either `taxonomy` or `taxonomy_text`, not both")),
        (None, Some(p), None) => DomainTaxonomy::parse(&read(&base.join(p))?)?,
        (None, None, Some(t)) => DomainTaxonomy::parse(t)?,
        (None, None, None) => DomainTaxonomy::default(),
    };
    if let Some(s) = f.settle {
        sc.settle = Some(micros("settle", s)?);
    }
    if let Some(c) = f.request_capacity {
        sc.request_capacity = c;
    }
    sc.channel = channel(&f.channel)?;
    sc.protocol = protocol(&f.protocol)?;
    sc.nodes = nodes(&f.nodes)?;
    for e in &f.events {
        sc.events.extend(events(e)?);
    }
    sc.events.sort_by_key(|e| e.at);
    for p in &f.probes {
        sc.probes.push(ProbeSpec {
            node: p.node.clone(),
            group: p.group.clone(),
            text: p.text.clone(),
            start: micros("probe start", p.start)?,
            every: micros("probe every", p.every)?,
        });
    }
    sc.validate()?;
    Ok(sc)
}

fn link(base: &LinkModel, latency: Option<f64>, jitter: Option<f64>, loss: Option<f64>) -> Result<LinkModel, LoadError> {
    Ok(LinkModel {
        base_latency: latency.map(|v| millis("latency_ms", v)).transpose()?.unwrap_or(base.base_latency),
        jitter: jitter.map(|v| millis("jitter_ms", v)).transpose()?.unwrap_or(base.jitter),
        loss_prob: loss.unwrap_or(base.loss_prob),
    })
}

fn channel(c: &FileChannel) -> Result<ChannelModel, LoadError> {
    let default = link(&LinkModel::default(), c.latency_ms, c.jitter_ms, c.loss)?;
    let mut overrides = BTreeMap::new();
    for (k, o) in &c.overrides {
        overrides.insert(k.clone(), link(&default, o.latency_ms, o.jitter_ms, o.loss)?);
    }
    Ok(ChannelModel { default, overrides })
}

fn protocol(p: &FileProtocol) -> Result<ProtocolConfig, LoadError> {
    let mut c = ProtocolConfig::default();
    let set = |slot: &mut Micros, what: &str, v: Option<f64>| -> Result<(), LoadError> {
        if let Some(v) = v {
            *slot = micros(what, v)?;
        }
        Ok(())
    };
    set(&mut c.detector.heartbeat_period, "heartbeat", p.heartbeat)?;
    set(&mut c.election_window, "election_window", p.election_window)?;
    set(&mut c.request_timeout, "request_timeout", p.request_timeout)?;
    set(&mut c.pull_period, "pull_period", p.pull_period)?;
    set(&mut c.register_backoff, "register_backoff", p.register_backoff)?;
    if let Some(v) = p.election_jitter_ms {
        c.detector.election_jitter_max = millis("election_jitter_ms", v)?;
    }
    if let Some(v) = p.miss_threshold {
        c.detector.miss_threshold = v;
    }
    if let Some(v) = p.request_retries {
        c.request_retries = v;
    }
    if let Some(v) = p.battery_low {
        c.battery_low_pct = v;
    }
    if let Some(v) = p.network_weak {
        c.network_weak = v;
    }
    if let Some(v) = p.load_high {
        c.load_high_pct = v;
    }
    if let Some(v) = p.reregister_on_resync {
        c.reregister_on_resync = v;
    }
    Ok(c)
}

fn expand(template: &str, i: Option<usize>) -> String {
    match i {
        Some(i) => template.replace("{}", &i.to_string()),
        None => template.to_string(),
    }
}

fn nodes(file: &[FileNode]) -> Result<Vec<NodeSpec>, LoadError> {
    let mut navigators = Vec::new();
    for n in file.iter().filter(|n| n.kind == Kind::Navigator) {
        navigators.extend(instances(n)?.into_iter().map(|i| expand(&n.id, i)));
    }
    let mut out = Vec::new();
    for n in file {
        for i in instances(n)? {
            let kind = match n.kind {
                Kind::Navigator => NodeKind::Navigator,
                Kind::Device => NodeKind::Device,
            };
            let mut spec = NodeSpec::new(&expand(&n.id, i), kind);
            let cap = CapabilityReport::default();
            spec.capability = CapabilityReport {
                battery_pct: n.battery.unwrap_or(cap.battery_pct),
                network_strength: n.network.unwrap_or(cap.network_strength),
                hardware_score: n.hardware.unwrap_or(cap.hardware_score),
                uptime_secs: n.uptime.unwrap_or(cap.uptime_secs),
            };
            spec.willing = n.willing.unwrap_or(true);
            spec.start_down = n.start_down;
            if kind == NodeKind::Device {
                spec.navigators = n.navigators.clone().unwrap_or_else(|| navigators.clone());
                spec.services = n.services.iter().map(|s| service(s, i)).collect();
            } else if !n.services.is_empty() {
                return Err(schema(format!("navigator `{}` cannot host services", spec.id)));
            }
            out.push(spec);
        }
    }
    Ok(out)
}

fn instances(n: &FileNode) -> Result<Vec<Option<usize>>, LoadError> {
    match n.count {
        None => Ok(vec![None]),
        Some(_) if !n.id.contains("{}") => Err(schema(format!("node `{}` has a count but no `{{}}` in its id", n.id))),
        Some(c) => Ok((0..c).map(Some).collect()),
    }
}

fn service(s: &FileService, i: Option<usize>) -> ServiceSpec {
    let mut spec = ServiceSpec::new(&s.key, &expand(&s.name, i), &expand(&s.description, i));
    spec.location = s.location.clone();
    spec.propose_id = s.propose.as_deref().map(|p| expand(p, i));
    spec.autoregister = s.autoregister;
    spec.info = s.info.clone();
    spec.binding = BindingInfo {
        endpoint: s.endpoint.clone(),
        params: s.params.clone(),
        returns: s.returns.clone(),
        wsdl: s.wsdl.clone(),
    };
    spec
}

fn events(e: &FileEvent) -> Result<Vec<ScriptedEvent>, LoadError> {
    let start = micros("event at", e.at)?;
    let every = e.every.map(|v| micros("event every", v)).transpose()?;
    let count = match (every, e.count) {
        (None, None) => 1,
        (Some(_), Some(c)) => c,
        _ => return Err(schema("`every` and `count` go together")),
    };
    (0..count)
        .map(|k| {
            Ok(ScriptedEvent {
                at: start + every.unwrap_or(0) * k as Micros,
                action: action(e, k)?,
            })
        })
        .collect()
}

fn need<'a>(e: &'a FileEvent, field: &'static str, v: &'a Option<String>) -> Result<&'a str, LoadError> {
    v.as_deref()
        .ok_or_else(|| schema(format!("`{}` event needs `{field}`", e.action)))
}

fn action(e: &FileEvent, k: usize) -> Result<Action, LoadError> {
    if let Some(a) = match e.action.as_str() {
        "partition" => {
            let sides = e.sides.as_ref().ok_or_else(|| schema("`partition` event needs `sides`"))?;
            Some(Action::Partition(
                sides.iter().map(|s| s.iter().cloned().collect::<BTreeSet<_>>()).collect(),
            ))
        }
        "heal" => Some(Action::Heal),
        _ => None,
    } {
        return Ok(a);
    }
    let node = need(e, "node", &e.node)?.to_string();
    let value = || e.value.ok_or_else(|| schema(format!("`{}` event needs `value`", e.action)));
    let command = |c: Command| Ok(Action::Command(node.clone(), c));
    match e.action.as_str() {
        "up" => Ok(Action::Up(node)),
        "down" => Ok(Action::Down(node)),
        "battery" => Ok(Action::Signal(node, DeviceSignal::Battery(value()?))),
        "network" => Ok(Action::Signal(node, DeviceSignal::Network(value()?))),
        "load" => Ok(Action::Signal(node, DeviceSignal::Load(value()?))),
        "register" => command(Command::Register {
            service: need(e, "service", &e.service)?.into(),
        }),
        "discover" => command(Command::Discover {
            text: need(e, "text", &e.text)?.into(),
        }),
        "probe" => command(Command::Probe {
            group: need(e, "group", &e.group)?.into(),
            text: need(e, "text", &e.text)?.into(),
        }),
        "presence" => {
            let status = match need(e, "status", &e.status)? {
                "toggle" if k.is_multiple_of(2) => Availability::Unavailable,
                "toggle" => Availability::Available,
                s => Availability::parse(s).ok_or_else(|| schema(format!("unknown status `{s}`")))?,
            };
            command(Command::SetPresence {
                service: need(e, "service", &e.service)?.into(),
                status,
            })
        }
        "update" => command(Command::Update {
            service: need(e, "service", &e.service)?.into(),
            changes: ServiceChanges {
                name: e.name.clone(),
                description: e.description.clone(),
                location: e.location.clone(),
                info: BTreeMap::new(),
            },
        }),
        "unregister" => command(Command::Unregister {
            service: need(e, "service", &e.service)?.into(),
        }),
        "bind" => command(Command::Bind {
            provider: need(e, "provider", &e.provider)?.into(),
            service_id: need(e, "service_id", &e.service_id)?.into(),
        }),
        "share" => command(Command::Share {
            group: need(e, "group", &e.group)?.into(),
        }),
        other => Err(schema(format!("unknown action `{other}`"))),
    }
}
