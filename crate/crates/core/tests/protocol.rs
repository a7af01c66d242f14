mod common;

use std::collections::BTreeSet;

use common::*;
use mobreg_core::node::{BindingInfo, Command, DeviceSignal, DiscoveryPath, NodeSpec, Report, ServiceChanges};
use mobreg_core::registry::Availability;
use mobreg_core::simnet::{assert_invariants, run, Action, ChannelModel, LinkModel, LogKind, ProbeSpec, Simulation};
use mobreg_core::time::{ms, secs};

fn all_pass(sim: &Simulation) {
    for v in assert_invariants(sim.log(), &sim.final_state()) {
        assert!(v.passed, "{v}");
    }
}

fn cmd(node: &str, c: Command) -> Action {
    Action::Command(node.into(), c)
}

#[test]
fn registry_kill_elects_best_candidate_within_bound() {
    let mut sc = hospital(11, 5, 120);
    for (i, n) in sc.nodes.iter_mut().skip(1).enumerate() {
        n.capability = cap(50 + i as u8 * 10, 80, 50, 3600);
    }
    let bound = sc.protocol.failover_bound();
    sc = sc.at(secs(30), Action::Down("p0".into()));
    let mut sim = Simulation::new(&sc).unwrap();
    sim.finish();
    assert_eq!(sim.registry_nodes("hospital"), ["p4"]);
    let took_over = sim
        .reports()
        .iter()
        .find(|r| r.node == "p4" && matches!(r.report, Report::BecameRegistry { .. }))
        .unwrap();
    assert!(took_over.time - secs(30) <= bound + ms(500));
    all_pass(&sim);
}

#[test]
fn equal_scores_elect_smallest_id() {
    let mut sc = hospital(5, 4, 90).at(secs(20), Action::Down("p0".into()));
    for n in sc.nodes.iter_mut().skip(1) {
        n.capability = cap(70, 70, 70, 7000);
    }
    let mut sim = Simulation::new(&sc).unwrap();
    sim.finish();
    assert_eq!(sim.registry_nodes("hospital"), ["p1"]);
}

#[test]
fn unwilling_members_never_take_over() {
    let mut sc = hospital(5, 3, 90).at(secs(20), Action::Down("p0".into()));
    sc.nodes[2].capability = cap(100, 100, 100, 86400);
    sc.nodes[2].willing = false;
    let mut sim = Simulation::new(&sc).unwrap();
    sim.finish();
    assert_eq!(sim.registry_nodes("hospital"), ["p2"]);
}

#[test]
fn restarted_registry_node_returns_as_provider() {
    let sc = hospital(21, 4, 150)
        .at(secs(20), Action::Down("p0".into()))
        .at(secs(60), Action::Up("p0".into()));
    let mut sim = Simulation::new(&sc).unwrap();
    sim.finish();
    let regs = sim.registry_nodes("hospital");
    assert_eq!(regs.len(), 1);
    assert_ne!(regs[0], "p0");
    let m = sim.node("p0").unwrap().membership("hospital").unwrap();
    assert!(!m.is_registry && m.synced);
    // its own service survives the handover
    assert!(m.store.contains("s1"));
    all_pass(&sim);
}

#[test]
fn partition_heal_leaves_one_registry_node() {
    let side = |ids: &[&str]| ids.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    let sc = hospital(8, 5, 150)
        .at(secs(10), Action::Partition(vec![side(&["p0", "p1", "nav"]), side(&["p2", "p3", "p4"])]))
        .at(secs(60), Action::Heal);
    let mut sim = Simulation::new(&sc).unwrap();
    sim.run_until(secs(59));
    assert_eq!(sim.registry_nodes("hospital").len(), 2, "both sides elected");
    sim.finish();
    assert_eq!(sim.registry_nodes("hospital").len(), 1);
    assert!(count(sim.reports(), |r| matches!(r, Report::Demoted { .. })) >= 1);
    let v = assert_invariants(sim.log(), &sim.final_state());
    assert!(v.iter().find(|v| v.invariant.as_str() == "election-safety").unwrap().passed);
    assert!(v.iter().find(|v| v.invariant.as_str() == "replica-convergence").unwrap().passed);
}

#[test]
fn presence_follows_toggles_and_signals() {
    let mut sc = hospital(4, 3, 120);
    sc.nodes.push(device("c0"));
    sc.probes.push(ProbeSpec {
        node: "c0".into(),
        group: "hospital".into(),
        text: "rating 2".into(),
        start: secs(5),
        every: secs(1),
    });
    sc = sc
        .at(secs(20), cmd("p2", Command::SetPresence { service: "svc".into(), status: Availability::Unavailable }))
        .at(secs(40), cmd("p2", Command::SetPresence { service: "svc".into(), status: Availability::Available }))
        .at(secs(60), Action::Signal("p2".into(), DeviceSignal::Battery(10)))
        .at(secs(80), Action::Signal("p2".into(), DeviceSignal::Battery(90)));
    let out = run(&sc).unwrap();
    let answers: Vec<(u64, Availability)> = out
        .reports
        .iter()
        .filter_map(|r| match &r.report {
            Report::ProbeResult { entries, .. } if entries.len() == 1 => Some((r.time, entries[0].availability)),
            _ => None,
        })
        .collect();
    assert!(answers.len() > 100);
    for (t, a) in answers {
        let off = (secs(21)..secs(40)).contains(&t) || (secs(61)..secs(80)).contains(&t);
        let on = (secs(6)..secs(20)).contains(&t) || (secs(41)..secs(60)).contains(&t) || t > secs(81);
        if off {
            assert_eq!(a, Availability::Unavailable, "at {t}");
        }
        if on {
            assert_eq!(a, Availability::Available, "at {t}");
        }
    }
    let stale: f64 = out.metrics.values("probe_stale").sum();
    assert!(stale <= 4.0, "{stale}");
}

#[test]
fn silent_provider_is_marked_unavailable() {
    let sc = hospital(9, 3, 90).at(secs(20), Action::Down("p2".into()));
    let mut sim = Simulation::new(&sc).unwrap();
    sim.finish();
    let reg = sim.registry_nodes("hospital")[0].clone();
    let store = sim.node(&reg).unwrap().membership("hospital").unwrap().store;
    assert_eq!(store.get("s3").unwrap().availability, Availability::Unavailable);
    assert_eq!(store.get("s2").unwrap().availability, Availability::Available);
    all_pass(&sim);
}

#[test]
fn update_unregister_and_convergence_under_loss() {
    let mut sc = hospital(31, 5, 120);
    sc.channel = ChannelModel {
        default: LinkModel { base_latency: ms(5), jitter: ms(20), loss_prob: 0.05 },
        ..Default::default()
    };
    let changes = ServiceChanges {
        description: Some("hospital doctor rating for patients, now with nurses".into()),
        ..Default::default()
    };
    sc = sc
        .at(secs(20), cmd("p1", Command::Update { service: "svc".into(), changes }))
        .at(secs(30), cmd("p3", Command::Unregister { service: "svc".into() }));
    let mut sim = Simulation::new(&sc).unwrap();
    sim.finish();
    assert_eq!(count(sim.reports(), |r| matches!(r, Report::Updated { .. })), 1);
    assert_eq!(count(sim.reports(), |r| matches!(r, Report::Unregistered { .. })), 1);
    let reg = sim.registry_nodes("hospital")[0].clone();
    let store = sim.node(&reg).unwrap().membership("hospital").unwrap().store.clone();
    assert!(store.get("s2").unwrap().description.contains("nurses"));
    assert!(!store.contains("s4"));
    all_pass(&sim);
}

#[test]
fn update_after_failover_reregisters() {
    // p0 dies before p1's entry reaches any replica, so the new registry
    // node has never heard of it
    let mut sc = hospital(2, 3, 120);
    sc.protocol.pull_period = secs(600);
    sc.protocol.reregister_on_resync = false;
    sc.nodes[3].capability = cap(100, 100, 100, 86400);
    // p2 registers and syncs at 1.2 s, p1 only at 1.5 s
    sc.events.retain(|e| !matches!(&e.action, Action::Command(n, _) if n == "p1"));
    sc = sc
        .at(ms(1500), cmd("p1", Command::Register { service: "svc".into() }))
        .at(secs(2), Action::Down("p0".into()))
        .at(secs(40), cmd("p1", Command::Update { service: "svc".into(), changes: ServiceChanges::default() }));
    let mut sim = Simulation::new(&sc).unwrap();
    sim.run_until(secs(39));
    sim.finish();
    assert_eq!(count(sim.reports(), |r| matches!(r, Report::UpdateNotFound { .. })), 1);
    let reg = sim.registry_nodes("hospital")[0].clone();
    let store = sim.node(&reg).unwrap().membership("hospital").unwrap().store.clone();
    assert_eq!(reg, "p2");
    let p1: Vec<_> = store.entries().filter(|e| e.provider == "p1").collect();
    assert_eq!(p1.len(), 1);
    // the re-registration keeps the id the provider already had
    assert_eq!(p1[0].service_id, "s3");
}

#[test]
fn binding_comes_from_the_provider() {
    let mut sc = hospital(3, 2, 60);
    sc.nodes[2].services[0].binding = BindingInfo {
        endpoint: "http://10.0.0.7:8080/rate".into(),
        params: vec![("doctor".into(), "string".into())],
        returns: "int".into(),
        wsdl: Some("http://10.0.0.7:8080/rate?wsdl".into()),
    };
    sc.nodes.push(device("c0"));
    sc = sc
        .at(secs(10), cmd("c0", Command::Bind { provider: "p1".into(), service_id: "s2".into() }))
        .at(secs(20), cmd("p1", Command::SetPresence { service: "svc".into(), status: Availability::Unavailable }))
        .at(secs(30), cmd("c0", Command::Bind { provider: "p1".into(), service_id: "s2".into() }));
    let out = run(&sc).unwrap();
    let results: Vec<_> = out
        .reports
        .iter()
        .filter_map(|r| match &r.report {
            Report::Binding { result, .. } => Some(result.clone()),
            _ => None,
        })
        .collect();
    assert_eq!(results.len(), 2);
    assert_eq!(results[0].as_ref().unwrap().endpoint, "http://10.0.0.7:8080/rate");
    assert_eq!(results[0].as_ref().unwrap().params, [("doctor".to_string(), "string".to_string())]);
    assert_eq!(results[1], Err("unavailable".into()));
}

#[test]
fn provider_and_consumer_paths_agree() {
    let mut sc = hospital(12, 4, 60);
    sc.nodes.push(device("c0"));
    sc = sc
        .at(secs(30), cmd("c0", Command::Discover { text: "doctor".into() }))
        .at(secs(30), cmd("p2", Command::Discover { text: "doctor".into() }))
        .at(secs(31), cmd("p2", Command::Discover { text: "rating 3".into() }));
    let out = run(&sc).unwrap();
    let done: Vec<_> = out
        .reports
        .iter()
        .filter_map(|r| match &r.report {
            Report::DiscoveryDone { path, results, .. } => {
                let mut ids: Vec<String> = results.iter().map(|e| e.service_id.clone()).collect();
                ids.sort();
                Some((r.node.clone(), *path, ids))
            }
            _ => None,
        })
        .collect();
    let consumer = done.iter().find(|d| d.0 == "c0").unwrap();
    let member = done.iter().find(|d| d.0 == "p2").unwrap();
    assert_eq!(consumer.1, DiscoveryPath::Navigator);
    assert_eq!(member.1, DiscoveryPath::Replica);
    assert_eq!(consumer.2, member.2);
    assert_eq!(consumer.2.len(), 4);
}

#[test]
fn discovery_without_navigator_fails_cleanly() {
    let mut sc = hospital(1, 1, 30);
    sc.nodes.push(device("c0"));
    sc = sc
        .at(secs(5), Action::Down("nav".into()))
        .at(secs(6), cmd("c0", Command::Discover { text: "doctor".into() }));
    let out = run(&sc).unwrap();
    assert!(out.reports.iter().any(|r| matches!(
        &r.report,
        Report::DiscoveryFailed { error: mobreg_core::node::DiscoveryError::NoNavigator, .. }
    )));
}

#[test]
fn unknown_domain_gets_a_new_group() {
    let mut sc = hospital(1, 1, 30);
    sc.nodes.push(provider("q0", "Pizza Express", "Pizza delivery service of Italian food"));
    sc.taxonomy.remove("food");
    let out = run(&sc).unwrap();
    let created: Vec<_> = out
        .reports
        .iter()
        .filter_map(|r| match &r.report {
            Report::GroupCreated { group, .. } => Some(group.clone()),
            _ => None,
        })
        .collect();
    assert_eq!(created, ["hospital", "delivery"]);
    assert!(out.final_state.nodes["q0"].groups["delivery"].is_registry);
}

#[test]
fn dead_group_is_dropped_and_recreated() {
    let mut sc = hospital(6, 1, 120).at(secs(10), Action::Down("p0".into()));
    let mut late = provider("p9", "Clinic finder", "find a clinic or hospital nearby");
    late.start_down = true;
    sc.nodes.push(late);
    sc = sc.at(secs(60), Action::Up("p9".into()));
    let out = run(&sc).unwrap();
    assert_eq!(count(&out.reports, |r| matches!(r, Report::GroupDropped { .. })), 1);
    assert_eq!(out.final_state.registry_nodes("hospital"), ["p9"]);
}

#[test]
fn flood_is_shed_beyond_capacity() {
    let mut sc = hospital(1, 1, 20);
    sc.request_capacity = 10;
    sc.nodes.push(device("c0"));
    for i in 0..40 {
        sc = sc.at(secs(5) + i * 1000, cmd("c0", Command::Probe { group: "hospital".into(), text: "x".into() }));
    }
    let mut sim = Simulation::new(&sc).unwrap();
    sim.finish();
    let shed = sim.log().iter().filter(|e| e.kind == LogKind::Shed).count();
    assert!(shed >= 29, "{shed}");
    assert!(count(sim.reports(), |r| matches!(r, Report::ProbeFailed { .. })) >= 29);
    all_pass(&sim);
}

#[test]
fn multicast_loss_fraction_matches_model() {
    let mut sc = mobreg_core::simnet::Scenario::new(99, secs(200));
    sc.taxonomy = taxonomy();
    sc.nodes.push(NodeSpec::new("nav", mobreg_core::node::NodeKind::Navigator));
    sc.nodes.push(provider("p0", "Doctor", "hospital doctor"));
    sc.nodes.push(device("c0"));
    sc.channel.overrides.insert("hospital@local".into(), LinkModel { base_latency: ms(1), jitter: 0, loss_prob: 0.3 });
    sc.request_capacity = u32::MAX;
    sc.protocol.request_retries = 0;
    for i in 0..10_000u64 {
        sc = sc.at(secs(10) + i * 10_000, cmd("c0", Command::Probe { group: "hospital".into(), text: "x".into() }));
    }
    let mut sim = Simulation::new(&sc).unwrap();
    sim.run_until(secs(115));
    let probes: Vec<_> = sim
        .log()
        .iter()
        .filter(|e| e.from == "c0" && e.to == "p0" && matches!(e.kind, LogKind::Deliver | LogKind::Lost))
        .map(|e| e.kind)
        .collect();
    assert_eq!(probes.len(), 10_000);
    let delivered = probes.iter().filter(|k| **k == LogKind::Deliver).count() as f64 / 10_000.0;
    assert!((delivered - 0.7).abs() <= 0.02, "{delivered}");
}
