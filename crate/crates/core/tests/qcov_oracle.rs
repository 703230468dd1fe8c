mod common;

use htins_core::detectors::{build_qcoverage, detects, gen_random_vectors, DetectorProfile, QuinTrigger};
use htins_core::netlist::CircuitGraph;
use htins_core::pruning::{Candidate, CandidateSet, Origin};
use proptest::prelude::*;
use std::collections::BTreeMap;

fn set_over(g: &CircuitGraph, names: &[&str], rv: &[u8]) -> CandidateSet {
    CandidateSet {
        circuit: g.name().into(),
        members: names
            .iter()
            .zip(rv)
            .map(|(n, &rv)| Candidate {
                net: g.lookup(n).unwrap(),
                origin: Origin::Regular,
                rv,
            })
            .collect(),
        jsi_set: 0.0,
        seed: 0,
    }
}

/// First vector index activating each 5-subset, by brute force.
fn brute(g: &CircuitGraph, cs: &CandidateSet, vectors: &[Vec<bool>]) -> BTreeMap<u64, u32> {
    let m = cs.len();
    let mut out = BTreeMap::new();
    for (k, v) in vectors.iter().enumerate() {
        let vals = common::ref_eval(g, v);
        for mask in 0u64..1 << m {
            if mask.count_ones() != 5 || out.contains_key(&mask) {
                continue;
            }
            let fires = (0..m).filter(|i| mask >> i & 1 == 1).all(|i| vals[cs.members[i].net.index()] == (cs.members[i].rv == 1));
            if fires {
                out.insert(mask, k as u32);
            }
        }
    }
    out
}

fn as_map(p: &DetectorProfile) -> BTreeMap<u64, u32> {
    p.quins().into_iter().map(|q| (q.mask(), p.witness(q).unwrap())).collect()
}

#[test]
fn c17_eight_members_ten_thousand_vectors() {
    let g = common::load("c17");
    let names = ["N1", "N3", "N10", "N11", "N16", "N19", "N22", "N23"];
    let cs = set_over(&g, &names, &[1, 0, 0, 1, 0, 1, 1, 0]);
    let tvs = gen_random_vectors(&g, 10_000, 5);
    let p = build_qcoverage(&g, &tvs, &cs, 5).unwrap();
    let rows: Vec<Vec<bool>> = tvs.vectors.iter().map(|v| v.bits().collect()).collect();
    assert_eq!(as_map(&p), brute(&g, &cs, &rows));
    for q in 0u64..256 {
        if q.count_ones() == 5 {
            assert_eq!(detects(&p, QuinTrigger::from_mask(q)).unwrap(), p.contains(QuinTrigger::from_mask(q)));
        }
    }
}

#[test]
fn empty_detector_covers_nothing_and_merge_is_union() {
    let g = common::load("c17");
    let names = ["N1", "N2", "N3", "N6", "N7", "N10"];
    let cs = set_over(&g, &names, &[1, 1, 1, 1, 1, 0]);
    let none = build_qcoverage(&g, &gen_random_vectors(&g, 0, 1), &cs, 5).unwrap();
    assert_eq!(none.q_count(), 0);
    let a = build_qcoverage(&g, &gen_random_vectors(&g, 3, 1), &cs, 5).unwrap();
    let b = build_qcoverage(&g, &gen_random_vectors(&g, 3, 2), &cs, 5).unwrap();
    let all = DetectorProfile::merged("ALL", &[&a, &b]).unwrap();
    let mut want: Vec<_> = a.quins().into_iter().chain(b.quins()).collect();
    want.sort();
    want.dedup();
    assert_eq!(all.quins(), want);
    let back = DetectorProfile::from_file(&all.to_file()).unwrap();
    assert_eq!(back, all);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_circuits_match_brute_force(seed in any::<u64>(), rvs in proptest::collection::vec(0u8..2, 7)) {
        let g = common::random_circuit(seed, 6, 20);
        let names: Vec<String> = g.nets().skip(g.net_count() - 7).map(|n| g.net_name(n).to_string()).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let cs = set_over(&g, &refs, &rvs);
        let tvs = gen_random_vectors(&g, 150, seed);
        let p = build_qcoverage(&g, &tvs, &cs, 5).unwrap();
        let rows: Vec<Vec<bool>> = tvs.vectors.iter().map(|v| v.bits().collect()).collect();
        prop_assert_eq!(as_map(&p), brute(&g, &cs, &rows));
    }
}
