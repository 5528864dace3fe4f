use oocran_core::catalog::{DescriptorRef, LinkKind, NsDescriptor, NsLink, NsMember};
use oocran_core::fixtures;
use proptest::prelude::*;

/// Connected iff no non-empty proper subset of members is closed under links.
fn connected_by_subsets(n: usize, edges: &[(usize, usize)]) -> bool {
    (1u32..(1 << n) - 1).all(|set| {
        let inside = |i: usize| set & (1 << i) != 0;
        edges.iter().any(|&(a, b)| inside(a) != inside(b))
    })
}

fn nsd(n: usize, edges: &[(usize, usize)]) -> NsDescriptor {
    NsDescriptor {
        name: "mesh".into(),
        version: "v1".into(),
        members: (0..n)
            .map(|i| NsMember {
                member_id: format!("m{i}"),
                vnfd: DescriptorRef::new("ue", "v1"),
                replicas: 1,
            })
            .collect(),
        links: edges
            .iter()
            .map(|&(a, b)| NsLink {
                endpoints: (format!("m{a}"), format!("m{b}")),
                link_kind: LinkKind::Ip,
            })
            .collect(),
        policies: vec![],
        requires_frontend: false,
    }
}

fn graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1usize..=6).prop_flat_map(|n| {
        let max_edges = if n > 1 { 8 } else { 0 };
        let edge = (0..n, 1..n.max(2)).prop_map(move |(a, step)| (a, (a + step) % n));
        (Just(n), prop::collection::vec(edge, 0..=max_edges))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn connectivity_violation_matches_subset_oracle((n, edges) in graph()) {
        let cat = fixtures::demo_catalog();
        let v = cat.validate_nsd(&nsd(n, &edges));
        let flagged = v.iter().any(|x| x.0 == "link graph not connected");
        prop_assert_eq!(flagged, !connected_by_subsets(n, &edges));
        prop_assert_eq!(v.is_empty(), connected_by_subsets(n, &edges), "{:?}", v);
    }
}

#[test]
fn stock_nsds_validate() {
    let cat = fixtures::demo_catalog();
    for nsd in cat.list_nsds() {
        assert!(cat.validate_nsd(&nsd).is_empty(), "{}", nsd.reference());
    }
}
