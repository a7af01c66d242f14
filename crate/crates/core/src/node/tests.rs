use super::*;
use crate::classify::DomainTaxonomy;
use crate::registry::{GroupEntry, ServiceEntry};
use crate::stanza::{decode, encode, parse_identifier, Child};
use alloc::vec;

fn tax() -> DomainTaxonomy {
    DomainTaxonomy::parse("hospital\thealth\tdoctor,hospital,nurse\n").unwrap()
}

fn nav() -> Node {
    Node::new(&NodeSpec::new("nav", NodeKind::Navigator), "local", &tax(), ProtocolConfig::default(), 1).unwrap()
}

fn dev(id: &str, services: Vec<ServiceSpec>) -> Node {
    let mut s = NodeSpec::new(id, NodeKind::Device);
    s.navigators = vec!["nav".into()];
    s.services = services;
    Node::new(&s, "local", &tax(), ProtocolConfig::default(), 2).unwrap()
}

fn sends(out: &[Output]) -> Vec<Stanza> {
    out.iter()
        .filter_map(|o| match o {
            Output::Send(s) => Some(s.clone()),
            _ => None,
        })
        .collect()
}

fn reports(out: &[Output]) -> Vec<Report> {
    out.iter()
        .filter_map(|o| match o {
            Output::Report(r) => Some(r.clone()),
            _ => None,
        })
        .collect()
}

/// Passes a stanza through the wire encoding, as the simulator does.
fn wire(s: &Stanza) -> Input {
    Input::Stanza(decode(&encode(s).unwrap()).unwrap())
}

fn group(id: &str) -> GroupEntry {
    GroupEntry::new(id, "local", "health", "p0").unwrap()
}

#[test]
fn capability_score_matches_weights() {
    let w = CapabilityWeights::default();
    let full = CapabilityReport {
        battery_pct: 100,
        network_strength: 100,
        hardware_score: 100,
        uptime_secs: 86_400,
    };
    assert!((full.score(&w) - 100.0).abs() < 1e-9);
    // 0.4*50 + 0.3*20 + 0.2*100 (clamped) + 0.1*50
    let c = CapabilityReport {
        battery_pct: 50,
        network_strength: 20,
        hardware_score: 400,
        uptime_secs: 43_200,
    };
    assert!((c.score(&w) - 51.0).abs() < 1e-9);
}

#[test]
fn config_bounds() {
    let c = ProtocolConfig::default();
    assert_eq!(c.silence_limit(), secs(15));
    assert_eq!(c.failover_bound(), secs(15) + secs(2) + ms(500));
    let mut bad = c.clone();
    bad.detector.miss_threshold = 0;
    assert_eq!(bad.validate(), Err(ConfigError::MissThreshold));
    let spec = NodeSpec::new("Bad id", NodeKind::Device);
    assert!(matches!(
        Node::new(&spec, "local", &tax(), c, 0),
        Err(NodeError::InvalidId(_))
    ));
}

#[test]
fn navigator_grants_a_group_once() {
    let mut n = nav();
    n.handle(0, Input::Start);
    let from = parse_identifier("_device@local/p0").unwrap();
    let to = parse_identifier("_device@local/nav").unwrap();
    let q = |id: &str, from: &Identifier| {
        Stanza::new(StanzaKind::Iq, id, "get", to.clone(), from.clone())
            .with(Child::new("query", "doctor rating at the hospital").attr("purpose", "register"))
    };
    let out = n.handle(10, wire(&q("a", &from)));
    let reply = &sends(&out).into_iter().find(|s| s.is_iq_reply()).unwrap();
    assert_eq!(reply.type_attr, "result");
    assert_eq!(reply.child("group").unwrap().get("grant"), Some("true"));
    assert!(reports(&out).contains(&Report::GroupCreated {
        group: "hospital".into(),
        registrant: "p0".into()
    }));
    let other = parse_identifier("_device@local/p1").unwrap();
    let out = n.handle(20, wire(&q("b", &other)));
    let reply = sends(&out).into_iter().find(|s| s.is_iq_reply()).unwrap();
    assert_eq!(reply.child("group").unwrap().get("grant"), Some("false"));
    assert_eq!(n.group_registry().unwrap().len(), 1);
}

#[test]
fn navigator_rejects_empty_description() {
    let mut n = nav();
    let q = Stanza::new(
        StanzaKind::Iq,
        "a",
        "get",
        parse_identifier("_device@local/nav").unwrap(),
        parse_identifier("_device@local/p0").unwrap(),
    )
    .with(Child::new("query", "a an of"));
    let out = n.handle(0, wire(&q));
    let reply = &sends(&out)[0];
    assert_eq!(reply.type_attr, "error");
    assert_eq!(reply.child_text("error"), Some("bad-request"));
}

#[test]
fn device_start_asks_navigator_for_a_group() {
    let mut d = dev("p0", vec![ServiceSpec::new("svc", "Doctor", "hospital doctor")]);
    let out = d.handle(0, Input::Start);
    let s = sends(&out);
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].to.to_string(), "_device@local/nav");
    assert_eq!(s[0].op().unwrap().get("purpose"), Some("register"));
}

#[test]
fn registry_answers_join_pull_and_search() {
    let g = group("hospital");
    let chan = parse_identifier("hospital@local").unwrap();
    let mut store = RegistryStore::new();
    for i in 0..3 {
        let id = alloc::format!("s{i}");
        store
            .upsert(ServiceEntry::new(&chan, &id, "Doctor", "hospital doctor", "p0").unwrap())
            .unwrap();
    }
    let mut reg = dev("p0", vec![]);
    reg.bootstrap_registry(&g, store, &["p1"]);
    reg.handle(0, Input::Start);
    let mut mem = dev("p1", vec![]);
    mem.bootstrap_member(&g, RegistryStore::new(), "p0", 1);
    mem.handle(0, Input::Start);

    // join: one chunk message carries the snapshot
    let mut synced = None;
    let join = Stanza::new(StanzaKind::Iq, "j", "get", chan.clone(), parse_identifier("_device@local/p1").unwrap())
        .with(Child::empty("join").attr("node", "p1"));
    for s in sends(&reg.handle(10, wire(&join))) {
        if s.to == *mem.address() && s.kind == StanzaKind::Message {
            synced = reports(&mem.handle(20, wire(&s))).into_iter().find(|r| matches!(r, Report::Synced { .. }));
        }
    }
    assert_eq!(
        synced,
        Some(Report::Synced {
            group: "hospital".into(),
            epoch: 1,
            version: 3
        })
    );
    assert_eq!(
        mem.membership("hospital").unwrap().store,
        reg.membership("hospital").unwrap().store
    );

    let pull = Stanza::new(StanzaKind::Iq, "q", "get", chan.clone(), parse_identifier("_device@local/p1").unwrap())
        .with(Child::empty("pull").attr("since", 1).attr("epoch", 1));
    let reply = sends(&reg.handle(30, wire(&pull))).remove(0);
    assert_eq!(reply.children("rec").count(), 2);
    let stale = Stanza::new(StanzaKind::Iq, "r", "get", chan.clone(), parse_identifier("_device@local/p1").unwrap())
        .with(Child::empty("pull").attr("since", 1).attr("epoch", 7));
    let reply = sends(&reg.handle(30, wire(&stale))).remove(0);
    assert_eq!(reply.child_text("error"), Some("resync"));

    let search = Stanza::new(StanzaKind::Iq, "s", "get", chan.clone(), parse_identifier("_device@local/c0").unwrap())
        .with(Child::new("search", "doctor"));
    let reply = sends(&reg.handle(40, wire(&search))).remove(0);
    assert_eq!(reply.child("results").unwrap().get("count"), Some("3"));
    assert_eq!(reply.children("entry").count(), 3);

    // members ignore group requests
    assert!(sends(&mem.handle(50, wire(&search))).is_empty());
}

#[test]
fn heartbeat_gets_a_probe_reply_with_statuses() {
    let g = group("hospital");
    let mut mem = dev("p1", vec![ServiceSpec::new("svc", "Doctor", "hospital doctor")]);
    let chan = parse_identifier("hospital@local").unwrap();
    let mut store = RegistryStore::new();
    store
        .upsert(ServiceEntry::new(&chan, "s1", "Doctor", "hospital doctor", "p1").unwrap())
        .unwrap();
    mem.bootstrap_member(&g, store, "p0", 1);
    mem.bootstrap_service("svc", &g, "s1");
    mem.handle(0, Input::Start);
    mem.handle(1, Input::Signal(DeviceSignal::Load(95)));
    let hb = Stanza::new(StanzaKind::Presence, "h", "available", chan, parse_identifier("_device@local/p0").unwrap())
        .with(wire::capability_attrs(
            Child::empty("heartbeat").attr("epoch", 1).attr("version", 1).attr("registry", "p0"),
            &CapabilityReport::default(),
        ));
    let out = mem.handle(5, wire(&hb));
    let reply = sends(&out).remove(0);
    assert_eq!(reply.to.to_string(), "_device@local/p0");
    let st = reply.child("status").unwrap();
    assert_eq!((st.get("service"), st.text.as_str()), (Some("s1"), "Unavailable"));
    assert_eq!(mem.service_status("s1"), Some(Availability::Unavailable));
}

#[test]
fn silent_registry_triggers_election() {
    let g = group("hospital");
    let mut mem = dev("p1", vec![]);
    mem.bootstrap_member(&g, RegistryStore::new(), "p0", 1);
    let out = mem.handle(0, Input::Start);
    let watchdog = out
        .iter()
        .find_map(|o| match o {
            Output::Timer { at, key: key @ TimerKey::Watchdog { .. } } => Some((*at, key.clone())),
            _ => None,
        })
        .unwrap();
    assert_eq!(watchdog.0, secs(15));
    let out = mem.handle(watchdog.0, Input::Timer(watchdog.1));
    assert!(reports(&out).contains(&Report::ElectionStarted { group: "hospital".into() }));
    let mut timers: Vec<(Micros, TimerKey)> = out
        .iter()
        .filter_map(|o| match o {
            Output::Timer { at, key } => Some((*at, key.clone())),
            _ => None,
        })
        .collect();
    timers.sort();
    let (announce_at, announce) = timers[0].clone();
    assert!(announce_at - secs(15) <= ms(500));
    let out = mem.handle(announce_at, Input::Timer(announce));
    assert_eq!(sends(&out)[0].type_attr, "election");
    let (close_at, close) = timers[1].clone();
    assert_eq!(close_at, secs(17));
    let out = mem.handle(close_at, Input::Timer(close));
    assert!(reports(&out).contains(&Report::BecameRegistry {
        group: "hospital".into(),
        epoch: 2
    }));
    assert!(mem.is_registry_for("hospital"));
}
