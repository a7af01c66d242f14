//! Desk-scale versions of the registry experiments.
//!
//! Each experiment builds its scenarios in code and returns typed rows; the
//! CLI turns them into CSV with [`csv`].

use std::collections::BTreeMap;
use std::fmt::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use mobreg_core::classify::DomainTaxonomy;
use mobreg_core::node::{
    election_winner, CapabilityReport, Command, NodeKind, NodeSpec, ProtocolConfig, Report, ServiceSpec,
};
use mobreg_core::registry::{Availability, GroupEntry, RegistryStore, ServiceEntry};
use mobreg_core::simnet::{run as run_scenario, Action, ProbeSpec, Scenario, Simulation};
use mobreg_core::stanza::{Identifier, LOCAL_NET};
use mobreg_core::time::{ms, secs, Micros};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TAXONOMY: &str = "hospital\thealth\tdoctor,hospital,nurse,clinic,patient,medical\n\
                            transport\ttravel\tbus,train,taxi,ticket,route,timetable\n\
                            food\tdining\trestaurant,pizza,menu,delivery,cafe\n";

pub fn taxonomy() -> DomainTaxonomy {
    DomainTaxonomy::parse(TAXONOMY).expect("built-in taxonomy parses")
}

pub const DIRECTORY_SIZES: [usize; 6] = [500, 1000, 5000, 10_000, 50_000, 100_000];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    RegLatency,
    DiscoveryScale,
    RegistryGrowth,
    PresenceFn,
    Failover,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::RegLatency,
        Experiment::DiscoveryScale,
        Experiment::RegistryGrowth,
        Experiment::PresenceFn,
        Experiment::Failover,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::RegLatency => "reg-latency",
            Experiment::DiscoveryScale => "discovery-scale",
            Experiment::RegistryGrowth => "registry-growth",
            Experiment::PresenceFn => "presence-fn",
            Experiment::Failover => "failover",
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown experiment `{0}`; expected one of reg-latency, discovery-scale, registry-growth, presence-fn, failover")]
pub struct UnknownExperiment(pub String);

impl FromStr for Experiment {
    type Err = UnknownExperiment;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| UnknownExperiment(s.into()))
    }
}

/// Runs one experiment with its default parameters and renders the CSV.
pub fn csv(e: Experiment, seed: u64) -> String {
    let mut out = String::new();
    match e {
        Experiment::RegLatency => {
            let r = registration(seed);
            out.push_str("client,service,service_id,group,latency_us\n");
            for row in &r.rows {
                let _ = writeln!(out, "{},{},{},{},{}", row.client, row.key, row.service_id, row.group, row.latency);
            }
        }
        Experiment::DiscoveryScale => {
            out.push_str("size,queries,hits,mean_wall_us,mean_sim_us\n");
            for row in discovery_scale(seed, &DIRECTORY_SIZES, 50) {
                let _ = writeln!(
                    out,
                    "{},{},{},{:.1},{}",
                    row.size,
                    row.queries,
                    row.hits,
                    row.mean_wall.as_secs_f64() * 1e6,
                    row.mean_sim
                );
            }
        }
        Experiment::RegistryGrowth => {
            out.push_str("size,snapshot_bytes\n");
            for (size, bytes) in registry_growth(&DIRECTORY_SIZES) {
                let _ = writeln!(out, "{size},{bytes}");
            }
        }
        Experiment::PresenceFn => {
            let r = presence(seed, 120);
            out.push_str("toggles,answers,stale,failed_probes,rate\n");
            let _ = writeln!(out, "{},{},{},{},{:.6}", r.toggles, r.answers, r.stale, r.failed, r.rate());
        }
        Experiment::Failover => {
            out.push_str("run,members,killed,expected,elected,elapsed_us,registry_nodes\n");
            for r in failover(seed, 100) {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.run,
                    r.candidates.len() + 1,
                    r.killed,
                    r.expected,
                    r.elected.as_deref().unwrap_or("-"),
                    r.elapsed.map(|e| e.to_string()).unwrap_or_else(|| "-".into()),
                    r.registry_nodes.join(" ")
                );
            }
        }
    }
    out
}

fn navigator() -> NodeSpec {
    NodeSpec::new("nav", NodeKind::Navigator)
}

fn device(id: &str) -> NodeSpec {
    let mut n = NodeSpec::new(id, NodeKind::Device);
    n.navigators = vec!["nav".into()];
    n
}

fn cmd(node: &str, c: Command) -> Action {
    Action::Command(node.into(), c)
}

// ---- directory size ----------------------------------------------------

/// Entry `i` of a synthetic hospital directory; names are unique and fixed width.
pub fn directory_entry(i: usize) -> ServiceEntry {
    let chan = Identifier::group("hospital", LOCAL_NET).expect("valid channel");
    let mut e = ServiceEntry::new(
        &chan,
        &format!("s{}", i + 1),
        &format!("Doctor record {i:06}"),
        "hospital patient record lookup",
        &format!("p{}", i % 50),
    )
    .expect("valid entry");
    e.location = Some(format!("ward {}", i % 40));
    e
}

pub fn directory(n: usize) -> RegistryStore<ServiceEntry> {
    let mut store = RegistryStore::new();
    for i in 0..n {
        store.upsert(directory_entry(i)).expect("valid entry");
    }
    store
}

/// Snapshot size in bytes for each directory size.
pub fn registry_growth(sizes: &[usize]) -> Vec<(usize, usize)> {
    sizes.iter().map(|&n| (n, directory(n).snapshot().len())).collect()
}

#[derive(Clone, Debug)]
pub struct ScaleRow {
    pub size: usize,
    pub queries: usize,
    /// Queries whose answer held the target entry.
    pub hits: usize,
    pub mean_wall: Duration,
    pub mean_sim: Micros,
}

/// Consumer discovery against a registry node holding `size` entries.
/// Wall time covers running the simulator from the discover command to its
/// result, so it includes the registry lookup and the stanza round trips.
pub fn discovery_scale(seed: u64, sizes: &[usize], queries: usize) -> Vec<ScaleRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sizes
        .iter()
        .map(|&size| {
            let mut sc = Scenario::new(seed, secs(24 * 3600));
            sc.taxonomy = taxonomy();
            sc.nodes = vec![navigator(), device("r0"), device("c0")];
            let mut sim = Simulation::new(&sc).expect("valid scenario");
            let entry = GroupEntry::new("hospital", LOCAL_NET, "health", "r0").expect("valid group");
            sim.bootstrap_group(&entry, "r0", &[], (0..size).map(directory_entry).collect())
                .expect("valid bootstrap");
            sim.run_until(secs(1));

            let ask = |sim: &mut Simulation, target: usize| {
                let text = format!("doctor record {target:06}");
                let t0 = sim.now();
                sim.schedule(t0, cmd("c0", Command::Discover { text })).expect("known node");
                let start = Instant::now();
                let r = sim.run_until_report(t0 + secs(60), |r| {
                    r.node == "c0" && matches!(r.report, Report::DiscoveryDone { .. } | Report::DiscoveryFailed { .. })
                });
                let wall = start.elapsed();
                match r.map(|r| r.report) {
                    Some(Report::DiscoveryDone { results, latency, .. }) => {
                        let want = format!("s{}", target + 1);
                        (wall, latency, results.iter().any(|e| e.service_id == want))
                    }
                    _ => (wall, 0, false),
                }
            };
            for _ in 0..3 {
                let t = rng.gen_range(0..size);
                ask(&mut sim, t);
            }
            let (mut wall, mut sim_total, mut hits) = (Duration::ZERO, 0, 0);
            for _ in 0..queries {
                let t = rng.gen_range(0..size);
                let (w, l, hit) = ask(&mut sim, t);
                wall += w;
                sim_total += l;
                hits += hit as usize;
            }
            ScaleRow {
                size,
                queries,
                hits,
                mean_wall: wall / queries.max(1) as u32,
                mean_sim: sim_total / queries.max(1) as u64,
            }
        })
        .collect()
}

// ---- presence ------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct PresenceRun {
    pub toggles: usize,
    /// Entries returned by probes, each compared with the provider's true status.
    pub answers: usize,
    pub stale: usize,
    pub failed: usize,
}

impl PresenceRun {
    pub fn rate(&self) -> f64 {
        if self.answers == 0 {
            1.0
        } else {
            self.stale as f64 / self.answers as f64
        }
    }
}

pub const TOGGLE_HALF_PERIOD: Micros = secs(10);

/// `cycles` unavailable/available cycles of one provider while a consumer
/// probes its group about once a second.
pub fn presence(seed: u64, cycles: usize) -> PresenceRun {
    let first = secs(20);
    let end = first + 2 * cycles as Micros * TOGGLE_HALF_PERIOD + secs(10);
    let mut sc = Scenario::new(seed, end);
    sc.taxonomy = taxonomy();
    let mut reg = device("r0");
    reg.services.push(ServiceSpec::new("svc", "Nurse roster", "hospital nurse roster"));
    let mut p0 = device("p0");
    let mut svc = ServiceSpec::new("svc", "Doctor on call", "hospital doctor on call");
    svc.autoregister = false;
    p0.services.push(svc);
    sc.nodes = vec![navigator(), reg, p0, device("c0")];
    sc = sc.at(secs(1), cmd("p0", Command::Register { service: "svc".into() }));
    for k in 0..2 * cycles {
        let status = if k % 2 == 0 {
            Availability::Unavailable
        } else {
            Availability::Available
        };
        sc = sc.at(
            first + k as Micros * TOGGLE_HALF_PERIOD,
            cmd("p0", Command::SetPresence { service: "svc".into(), status }),
        );
    }
    // A period off the toggle grid so probes sweep every phase of a cycle.
    sc.probes.push(ProbeSpec {
        node: "c0".into(),
        group: "hospital".into(),
        text: "doctor on call".into(),
        start: secs(5),
        every: ms(1013),
    });
    let out = run_scenario(&sc).expect("valid scenario");
    PresenceRun {
        toggles: cycles,
        answers: out.metrics.count("probe_stale"),
        stale: out.metrics.values("probe_stale").filter(|v| *v > 0.0).count(),
        failed: out.metrics.count("probe_failed"),
    }
}

// ---- failover ------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct Candidate {
    pub id: String,
    pub capability: CapabilityReport,
    pub willing: bool,
}

#[derive(Clone, Debug)]
pub struct FailoverRow {
    pub run: usize,
    pub killed: String,
    /// Surviving members.
    pub candidates: Vec<Candidate>,
    /// Winner by the capability rule, smallest id on ties.
    pub expected: String,
    /// First node to report taking over, if any.
    pub elected: Option<String>,
    /// From the kill to that report.
    pub elapsed: Option<Micros>,
    /// Up registry nodes of the group at quiescence.
    pub registry_nodes: Vec<String>,
}

/// `runs` seeded kills of a registry node in groups of 3 to 10 members.
pub fn failover(seed: u64, runs: usize) -> Vec<FailoverRow> {
    (0..runs).map(|r| failover_run(seed, r)).collect()
}

fn failover_run(seed: u64, run: usize) -> FailoverRow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(run as u64));
    let n = rng.gen_range(3..=10usize);
    let ids: Vec<String> = (0..n).map(|i| format!("m{i}")).collect();
    let registry = rng.gen_range(0..n);
    // coarse capability levels so equal scores come up regularly
    let mut nodes: Vec<NodeSpec> = ids
        .iter()
        .map(|id| {
            let mut d = device(id);
            d.capability = CapabilityReport {
                battery_pct: *[40u8, 60, 80, 100].choose(&mut rng).expect("non-empty"),
                network_strength: *[50u8, 100].choose(&mut rng).expect("non-empty"),
                hardware_score: *[50u32, 100].choose(&mut rng).expect("non-empty"),
                uptime_secs: 3600,
            };
            d.willing = rng.gen_bool(0.8);
            let mut svc = ServiceSpec::new("svc", &format!("Doctor desk {id}"), "hospital doctor desk");
            svc.autoregister = false;
            d.services.push(svc);
            d
        })
        .collect();
    nodes[registry].willing = true;
    let survivors: Vec<usize> = (0..n).filter(|&i| i != registry).collect();
    if survivors.iter().all(|&i| !nodes[i].willing) {
        let pick = *survivors.choose(&mut rng).expect("at least two members");
        nodes[pick].willing = true;
    }

    let kill_at = secs(20) + rng.gen_range(0..secs(5));
    let mut sc = Scenario::new(seed ^ run as u64, secs(90));
    sc.taxonomy = taxonomy();
    sc.nodes.push(navigator());
    sc.nodes.extend(nodes.iter().cloned());
    let cfg: ProtocolConfig = sc.protocol.clone();
    let mut sim = Simulation::new(&sc).expect("valid scenario");
    let entry = GroupEntry::new("hospital", LOCAL_NET, "health", &ids[registry]).expect("valid group");
    let chan = Identifier::group("hospital", LOCAL_NET).expect("valid channel");
    let services: Vec<ServiceEntry> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            ServiceEntry::new(&chan, &format!("s{}", i + 1), &format!("Doctor desk {id}"), "hospital doctor desk", id)
                .expect("valid entry")
        })
        .collect();
    let members: Vec<&str> = ids.iter().map(String::as_str).collect();
    sim.bootstrap_group(&entry, &ids[registry], &members, services)
        .expect("valid bootstrap");
    for (i, id) in ids.iter().enumerate() {
        sim.node_mut(id)
            .expect("declared")
            .bootstrap_service("svc", &entry, &format!("s{}", i + 1));
    }
    sim.schedule(kill_at, Action::Down(ids[registry].clone())).expect("known node");
    sim.run_until(kill_at);
    let took_over = sim.run_until_report(kill_at + cfg.failover_bound() + secs(20), |r| {
        matches!(r.report, Report::BecameRegistry { .. })
    });
    sim.finish();

    let candidates: Vec<Candidate> = survivors
        .iter()
        .map(|&i| Candidate {
            id: ids[i].clone(),
            capability: nodes[i].capability,
            willing: nodes[i].willing,
        })
        .collect();
    let expected = election_winner(
        candidates
            .iter()
            .filter(|c| c.willing)
            .map(|c| (c.id.as_str(), c.capability.score(&cfg.weights))),
    )
    .expect("a willing survivor exists");
    FailoverRow {
        run,
        killed: ids[registry].clone(),
        candidates,
        expected,
        elected: took_over.as_ref().map(|r| r.node.clone()),
        elapsed: took_over.map(|r| r.time - kill_at),
        registry_nodes: sim.registry_nodes("hospital"),
    }
}

// ---- registration under churn ----------------------------------------------

pub const CLIENTS: usize = 4;
pub const SERVICES_PER_CLIENT: usize = 50;
const BACKGROUND: usize = 16;

/// `(name prefix, description)` per domain; the last is not in [`TAXONOMY`]
/// and becomes a new group.
const DOMAINS: [(&str, &str); 4] = [
    ("Doctor booking", "doctor appointment booking at the city hospital"),
    ("Bus timetable", "bus and train ticket route planner"),
    ("Pizza menu", "restaurant menu and pizza delivery"),
    ("Weather radar", "weather forecast with rain radar"),
];

#[derive(Clone, Debug)]
pub struct RegRow {
    pub client: String,
    pub key: String,
    pub name: String,
    pub service_id: String,
    pub group: String,
    pub latency: Micros,
}

#[derive(Clone, Debug)]
pub struct RegistrationRun {
    /// One row per successful client registration.
    pub rows: Vec<RegRow>,
    pub attempted: usize,
    pub failed: usize,
    /// `client/key` of registered services a later discovery did not return.
    pub undiscovered: Vec<String>,
    pub churners: Vec<String>,
    pub churn_events: usize,
}

/// Four clients register fifty services each while two of twenty providers
/// go up and down; afterwards a consumer looks every service up by name.
pub fn registration(seed: u64) -> RegistrationRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let churn_end = secs(60);
    let discover_at = secs(110);
    let spacing = ms(150);
    let total = CLIENTS * SERVICES_PER_CLIENT;
    let mut sc = Scenario::new(seed, discover_at + total as Micros * spacing + secs(10));
    sc.taxonomy = taxonomy();
    sc.nodes.push(navigator());

    for b in 0..BACKGROUND {
        let (prefix, desc) = DOMAINS[b % DOMAINS.len()];
        let mut d = device(&format!("b{b:02}"));
        d.services.push(ServiceSpec::new("svc", &format!("{prefix} b{b:02}"), desc));
        sc.nodes.push(d);
    }
    let mut names = BTreeMap::new();
    for c in 0..CLIENTS {
        let id = format!("c{c}");
        let mut d = device(&id);
        for j in 0..SERVICES_PER_CLIENT {
            let (prefix, desc) = DOMAINS[(c * SERVICES_PER_CLIENT + j) % DOMAINS.len()];
            let key = format!("n{j:02}");
            let name = format!("{prefix} c{c}n{j:02}");
            let mut svc = ServiceSpec::new(&key, &name, desc);
            svc.autoregister = false;
            d.services.push(svc);
            names.insert((id.clone(), key.clone()), name);
            sc.events.push(mobreg_core::simnet::ScriptedEvent {
                at: secs(1) + j as Micros * ms(400) + c as Micros * ms(100),
                action: cmd(&id, Command::Register { service: key }),
            });
        }
        sc.nodes.push(d);
    }
    sc.nodes.push(device("d0"));

    // 10% of the 20 providers churn: one of the first registrants of each
    // domain, which likely holds a registry role, and one other.
    let churners = vec![
        format!("b{:02}", rng.gen_range(0..DOMAINS.len())),
        format!("b{:02}", rng.gen_range(DOMAINS.len()..BACKGROUND)),
    ];
    let mut churn_events = 0;
    for ch in &churners {
        let mut t = secs(2) + rng.gen_range(0..secs(4));
        while t < churn_end {
            sc.events.push(mobreg_core::simnet::ScriptedEvent {
                at: t,
                action: Action::Down(ch.clone()),
            });
            t = (t + rng.gen_range(secs(5)..secs(25))).min(churn_end);
            sc.events.push(mobreg_core::simnet::ScriptedEvent {
                at: t,
                action: Action::Up(ch.clone()),
            });
            churn_events += 2;
            t += rng.gen_range(secs(5)..secs(15));
        }
    }

    let mut texts = BTreeMap::new();
    for (k, ((client, key), name)) in names.iter().enumerate() {
        let text = name.to_lowercase();
        texts.insert(text.clone(), (client.clone(), key.clone()));
        sc.events.push(mobreg_core::simnet::ScriptedEvent {
            at: discover_at + k as Micros * spacing,
            action: cmd("d0", Command::Discover { text }),
        });
    }
    sc.events.sort_by_key(|e| e.at);

    let out = run_scenario(&sc).expect("valid scenario");
    let mut rows = Vec::new();
    let mut ids = BTreeMap::new();
    let mut failed = 0;
    for r in &out.reports {
        if !r.node.starts_with('c') {
            continue;
        }
        match &r.report {
            Report::Registered {
                service,
                service_id,
                group,
                latency,
                ..
            } => {
                ids.insert((r.node.clone(), service.clone()), service_id.clone());
                rows.push(RegRow {
                    client: r.node.clone(),
                    key: service.clone(),
                    name: names[&(r.node.clone(), service.clone())].clone(),
                    service_id: service_id.clone(),
                    group: group.clone(),
                    latency: *latency,
                });
            }
            Report::RegistrationFailed { .. } => failed += 1,
            _ => {}
        }
    }
    let mut found = std::collections::BTreeSet::new();
    for r in out.reports.iter().filter(|r| r.node == "d0") {
        if let Report::DiscoveryDone { text, results, .. } = &r.report {
            let Some(owner) = texts.get(text) else { continue };
            let Some(sid) = ids.get(owner) else { continue };
            if results.iter().any(|e| &e.service_id == sid && e.provider == owner.0) {
                found.insert(owner.clone());
            }
        }
    }
    let undiscovered = names
        .keys()
        .filter(|k| !found.contains(*k))
        .map(|(c, k)| format!("{c}/{k}"))
        .collect();
    RegistrationRun {
        rows,
        attempted: total,
        failed,
        undiscovered,
        churners,
        churn_events,
    }
}
