//! Stock descriptors, testbed inventory and the demo alarm rule.

use crate::catalog::{
    Catalog, CatalogContents, DescriptorRef, Flavor, LinkKind, MetricModel, NsDescriptor, NsLink,
    NsMember, PolicyAction, PolicyRule, RadioProfile, RadioRole, VnfDescriptor, VnfKind,
};
use crate::infra::{ComputeNode, Inventory};
use crate::monitor::{AlarmRule, Metric, Predicate, Scope, Selector};
use crate::rf::{Bandwidth, RfFrontend, SpectrumBand};

pub const DEMO_RULE_ID: &str = "rb-saturated";
pub const DEMO_TOKEN: &str = "oocran-demo";
pub const MHZ: u64 = 1_000_000;

fn enb_name(bw: Bandwidth) -> String {
    format!("enb-{}", bw.mhz())
}

/// eNB VNFD with the stock flavor and metric model for its bandwidth.
pub fn enb_vnfd(bw: Bandwidth) -> VnfDescriptor {
    let (flavor, ram) = match bw {
        Bandwidth::Mhz1_4 => (Flavor::new(1, 1500, 8), 1500.0),
        Bandwidth::Mhz3 => (Flavor::new(1, 2500, 8), 2500.0),
        _ => (Flavor::new(2, 3600, 8), 3600.0),
    };
    VnfDescriptor {
        name: enb_name(bw),
        version: "v1".into(),
        kind: VnfKind::Radio,
        flavor,
        radio_profile: Some(RadioProfile {
            bandwidth_mhz: bw.mhz(),
            role: RadioRole::Enb,
        }),
        metric_model: MetricModel {
            cpu_base_pct: 2.0,
            cpu_per_rb_pct: 0.6,
            ram_fixed_mb: ram,
            bler_nominal: 0.0,
            snr_nominal_db: 30.0,
        },
        image_ref: "oocran/enb:latest".into(),
    }
}

fn light_model() -> MetricModel {
    MetricModel {
        cpu_base_pct: 0.5,
        cpu_per_rb_pct: 0.0,
        ram_fixed_mb: 256.0,
        bler_nominal: 0.0,
        snr_nominal_db: 30.0,
    }
}

/// Simulated radio channel between eNB and UE.
pub fn channel_vnfd() -> VnfDescriptor {
    VnfDescriptor {
        name: "channel".into(),
        version: "v1".into(),
        kind: VnfKind::Radio,
        flavor: Flavor::new(1, 512, 4),
        radio_profile: Some(RadioProfile {
            bandwidth_mhz: 20.0,
            role: RadioRole::Channel,
        }),
        metric_model: light_model(),
        image_ref: "oocran/channel:latest".into(),
    }
}

pub fn ue_vnfd() -> VnfDescriptor {
    VnfDescriptor {
        name: "ue".into(),
        version: "v1".into(),
        kind: VnfKind::Radio,
        flavor: Flavor::new(1, 512, 4),
        radio_profile: Some(RadioProfile {
            bandwidth_mhz: 20.0,
            role: RadioRole::Ue,
        }),
        metric_model: light_model(),
        image_ref: "oocran/ue:latest".into(),
    }
}

/// eNB, channel and UE in a line. With `scale_to`, the NS reconfigures to
/// that descriptor when the demo alarm fires.
pub fn lte_cell_nsd(bw: Bandwidth, scale_to: Option<DescriptorRef>) -> NsDescriptor {
    let member = |id: &str, vnfd: DescriptorRef| NsMember {
        member_id: id.into(),
        vnfd,
        replicas: 1,
    };
    let link = |a: &str, b: &str| NsLink {
        endpoints: (a.into(), b.into()),
        link_kind: LinkKind::Radio,
    };
    NsDescriptor {
        name: format!("lte-cell-{}", bw.mhz()),
        version: "v1".into(),
        members: vec![
            member("enb", DescriptorRef::new(enb_name(bw), "v1")),
            member("channel", DescriptorRef::new("channel", "v1")),
            member("ue", DescriptorRef::new("ue", "v1")),
        ],
        links: vec![link("enb", "channel"), link("channel", "ue")],
        policies: scale_to
            .into_iter()
            .map(|target| PolicyRule {
                rule_id: "scale-up".into(),
                alarm_rule_ref: DEMO_RULE_ID.into(),
                action: PolicyAction::ReconfigureTo { target },
                cooldown_s: 300.0,
            })
            .collect(),
        requires_frontend: true,
    }
}

pub fn demo_contents() -> CatalogContents {
    let big = lte_cell_nsd(Bandwidth::Mhz5, None);
    let small = lte_cell_nsd(Bandwidth::Mhz1_4, Some(big.reference()));
    CatalogContents {
        vnfds: vec![
            enb_vnfd(Bandwidth::Mhz1_4),
            enb_vnfd(Bandwidth::Mhz5),
            channel_vnfd(),
            ue_vnfd(),
        ],
        nsds: vec![big, small],
    }
}

pub fn demo_catalog() -> Catalog {
    Catalog::from_contents(demo_contents()).expect("stock descriptors are valid")
}

/// Two servers and one USRP per site over a 70 MHz band.
pub fn testbed_inventory() -> Inventory {
    Inventory {
        nodes: vec![
            ComputeNode::new("server-1", 16, 65536, 1000),
            ComputeNode::new("server-2", 16, 65536, 1000),
        ],
        frontends: ["site-a", "site-b"]
            .iter()
            .enumerate()
            .map(|(i, site)| RfFrontend {
                frontend_id: format!("usrp-{}", i + 1),
                site_id: site.to_string(),
                freq_min_hz: 2600 * MHZ,
                freq_max_hz: 2700 * MHZ,
                max_bw_hz: 20 * MHZ,
            })
            .collect(),
        bands: vec![SpectrumBand {
            band_id: "band-7".into(),
            low_hz: 2620 * MHZ,
            high_hz: 2690 * MHZ,
            raster_hz: 100_000,
        }],
    }
}

/// Fires when an NS schedules more than 5 RBs for 30 s.
pub fn demo_alarm_rule() -> AlarmRule {
    AlarmRule {
        rule_id: DEMO_RULE_ID.into(),
        selector: Selector {
            scope: Scope::Ns,
            scope_id: None,
            metric: Metric::RbOccupied,
        },
        predicate: Predicate::Gt,
        threshold: 5.0,
        hold_s: 30.0,
        clear_hold_s: None,
        severity: "major".into(),
        webhook_token: DEMO_TOKEN.into(),
    }
}
