mod common;

use htins_core::netlist::GateKind;
use htins_core::pruning::compute_hts;
use htins_core::sim::{
    analyze_nets, estimate_signal_stats, evaluate, scoap_controllability, simulate_batch, SimVector,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn c17_every_vector_every_net() {
    let g = common::load("c17");
    let vectors: Vec<SimVector> = (0..32).map(|x| common::vector_of(&common::bits_of(x, 5))).collect();
    let mut ref_counts = vec![0u64; g.net_count()];
    for (x, v) in vectors.iter().enumerate() {
        let want = common::ref_eval(&g, &common::bits_of(x as u64, 5));
        assert_eq!(evaluate(&g, v).unwrap(), want, "vector {v}");
        for (c, b) in ref_counts.iter_mut().zip(&want) {
            *c += *b as u64;
        }
    }
    assert_eq!(simulate_batch(&g, &vectors).unwrap(), ref_counts);
}

#[test]
fn c17_outputs_by_hand() {
    // N22 = NAND(N10, N16), N23 = NAND(N16, N19) on input 00000: both 0
    let g = common::load("c17");
    let outs = htins_core::sim::evaluate_outputs(&g, &"00000".parse().unwrap()).unwrap();
    assert_eq!(outs, [false, false]);
    let outs = htins_core::sim::evaluate_outputs(&g, &"11111".parse().unwrap()).unwrap();
    assert_eq!(outs, [true, false]);
}

#[test]
fn input_probabilities_near_half_on_c880() {
    let g = common::load("c880");
    let n = 50_000;
    let stats = estimate_signal_stats(&g, n, 11);
    let sigma = (0.25 / n as f64).sqrt();
    for &pi in g.primary_inputs() {
        assert!((stats[pi.index()].p1 - 0.5).abs() < 4.0 * sigma);
    }
}

#[test]
fn stats_are_seeded() {
    let g = common::load("c432");
    assert_eq!(analyze_nets(&g, 5_000, 3), analyze_nets(&g, 5_000, 3));
    assert_ne!(analyze_nets(&g, 5_000, 3), analyze_nets(&g, 5_000, 4));
}

#[test]
fn scoap_grows_along_every_gate() {
    for name in ["c432", "c880", "c1355", "c6288"] {
        let g = common::load(name);
        let cc = scoap_controllability(&g);
        for &pi in g.primary_inputs() {
            assert_eq!((cc[pi.index()].cc0, cc[pi.index()].cc1), (1, 1));
        }
        for gate in g.gates() {
            let out = cc[gate.output.index()];
            let lo = gate.inputs.iter().map(|i| cc[i.index()].cc0.min(cc[i.index()].cc1)).min().unwrap();
            assert!(out.cc0.min(out.cc1) > lo, "{name} {}", g.net_name(gate.output));
        }
    }
}

#[test]
fn scoap_small_gates() {
    // three-input gates over primary inputs
    let cases = [
        (GateKind::And, (2, 4)),
        (GateKind::Nand, (4, 2)),
        (GateKind::Or, (4, 2)),
        (GateKind::Nor, (2, 4)),
        (GateKind::Xor, (4, 4)),
    ];
    for (kind, want) in cases {
        let mut b = htins_core::netlist::NetlistBuilder::new("t");
        b.input("a").input("b").input("c").output("y").gate("y", kind, ["a", "b", "c"]);
        let g = b.build().unwrap();
        let c = scoap_controllability(&g)[g.lookup("y").unwrap().index()];
        assert_eq!((c.cc0, c.cc1), want, "{kind:?}");
    }
}

proptest! {
    #[test]
    fn word_simulation_matches_reference(seed in any::<u64>(), n_pi in 1usize..10, n_gates in 1usize..30) {
        let g = common::random_circuit(seed, n_pi, n_gates);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<bool>> = (0..70).map(|_| (0..n_pi).map(|_| rng.gen()).collect()).collect();
        let vectors: Vec<SimVector> = rows.iter().map(|r| common::vector_of(r)).collect();
        let mut want = vec![0u64; g.net_count()];
        for r in &rows {
            for (c, b) in want.iter_mut().zip(common::ref_eval(&g, r)) {
                *c += b as u64;
            }
        }
        prop_assert_eq!(simulate_batch(&g, &vectors).unwrap(), want);
    }

    #[test]
    fn hts_symmetric_and_below_one(a in 1u64..1_000_000, b in 1u64..1_000_000) {
        let h = compute_hts(a, b);
        prop_assert_eq!(h, compute_hts(b, a));
        prop_assert!((0.0..1.0).contains(&h));
    }
}
