#![allow(dead_code)]

use mobreg_core::classify::DomainTaxonomy;
use mobreg_core::node::{CapabilityReport, NodeKind, NodeSpec, Report, ServiceSpec};
use mobreg_core::simnet::{ReportRecord, Scenario};
use mobreg_core::time::secs;

pub const TAXONOMY: &str = "hospital\thealth\tdoctor,hospital,nurse,clinic,patient,medical\n\
                            transport\ttravel\tbus,train,taxi,ticket,route\n\
                            food\tdining\trestaurant,pizza,menu,delivery,cafe\n";

pub fn taxonomy() -> DomainTaxonomy {
    DomainTaxonomy::parse(TAXONOMY).unwrap()
}

pub fn device(id: &str) -> NodeSpec {
    let mut n = NodeSpec::new(id, NodeKind::Device);
    n.navigators = vec!["nav".into()];
    n
}

pub fn provider(id: &str, name: &str, desc: &str) -> NodeSpec {
    let mut n = device(id);
    n.services.push(ServiceSpec::new("svc", name, desc));
    n
}

pub fn cap(battery: u8, network: u8, hardware: u32, uptime: u64) -> CapabilityReport {
    CapabilityReport {
        battery_pct: battery,
        network_strength: network,
        hardware_score: hardware,
        uptime_secs: uptime,
    }
}

/// A navigator plus `n` hospital providers `p0..`; `p0` registers first.
pub fn hospital(seed: u64, n: usize, duration_s: u64) -> Scenario {
    let mut sc = Scenario::new(seed, secs(duration_s));
    sc.taxonomy = taxonomy();
    sc.nodes.push(NodeSpec::new("nav", NodeKind::Navigator));
    for i in 0..n {
        let mut p = provider(&format!("p{i}"), &format!("Doctor rating {i}"), "hospital doctor rating for patients");
        if i > 0 {
            p.services[0].autoregister = false;
        }
        sc.nodes.push(p);
    }
    for i in 1..n {
        sc.events.push(mobreg_core::simnet::ScriptedEvent {
            at: secs(1) + i as u64 * 100_000,
            action: mobreg_core::simnet::Action::Command(
                format!("p{i}"),
                mobreg_core::node::Command::Register { service: "svc".into() },
            ),
        });
    }
    sc
}

pub fn count(reports: &[ReportRecord], f: impl Fn(&Report) -> bool) -> usize {
    reports.iter().filter(|r| f(&r.report)).count()
}
