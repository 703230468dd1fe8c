//! Fixtures and reference evaluators shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use htins_core::netlist::{parse_bench_named, CircuitGraph, GateKind, NetId, NetlistBuilder};
use htins_core::sim::SimVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ISCAS8: [&str; 8] = ["c880", "c1355", "c1908", "c2670", "c3540", "c5315", "c6288", "c7552"];

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/iscas85")
}

pub fn load(name: &str) -> CircuitGraph {
    let path = data_dir().join(format!("{name}.bench"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    parse_bench_named(&text, name).unwrap()
}

pub fn corpus() -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(data_dir())
        .unwrap()
        .filter_map(|e| {
            let p = e.ok()?.path();
            (p.extension()? == "bench").then(|| p.file_stem()?.to_str().map(String::from))?
        })
        .collect();
    v.sort();
    v
}

/// Gate truth written out from the textbook definitions, independent of
/// the library's evaluator.
pub fn ref_gate(kind: GateKind, ins: &[bool]) -> bool {
    let ones = ins.iter().filter(|&&b| b).count();
    match kind {
        GateKind::And => ones == ins.len(),
        GateKind::Nand => ones != ins.len(),
        GateKind::Or => ones > 0,
        GateKind::Nor => ones == 0,
        GateKind::Xor => ones % 2 == 1,
        GateKind::Xnor => ones % 2 == 0,
        GateKind::Not => !ins[0],
        GateKind::Buf => ins[0],
    }
}

/// Recursive memoized evaluation of every net, by name.
pub fn ref_eval(g: &CircuitGraph, pis: &[bool]) -> Vec<bool> {
    fn go(g: &CircuitGraph, n: NetId, pis: &[bool], memo: &mut HashMap<NetId, bool>) -> bool {
        if let Some(&v) = memo.get(&n) {
            return v;
        }
        let v = match g.driving_gate(n) {
            None => pis[g.input_position(n).unwrap()],
            Some(gate) => {
                let gate = gate.clone();
                let ins: Vec<bool> = gate.inputs.iter().map(|&i| go(g, i, pis, memo)).collect();
                ref_gate(gate.kind, &ins)
            }
        };
        memo.insert(n, v);
        v
    }
    let mut memo = HashMap::new();
    g.nets().map(|n| go(g, n, pis, &mut memo)).collect()
}

pub fn bits_of(x: u64, width: usize) -> Vec<bool> {
    (0..width).map(|i| x >> i & 1 == 1).collect()
}

pub fn vector_of(bits: &[bool]) -> SimVector {
    SimVector::from_bits(bits.iter().copied())
}

/// Every primary-input assignment with its reference net values.
pub fn truth_table(g: &CircuitGraph) -> Vec<(Vec<bool>, Vec<bool>)> {
    let w = g.primary_inputs().len();
    assert!(w <= 20, "exhaustive tables only for small circuits");
    (0..1u64 << w)
        .map(|x| {
            let b = bits_of(x, w);
            let v = ref_eval(g, &b);
            (b, v)
        })
        .collect()
}

/// Random acyclic netlist with `n_pi` inputs and `n_gates` gates; the last
/// few gate outputs and any dangling nets become primary outputs.
pub fn random_circuit(seed: u64, n_pi: usize, n_gates: usize) -> CircuitGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = NetlistBuilder::new(format!("rand{seed}"));
    let mut nets: Vec<String> = (0..n_pi).map(|i| format!("i{i}")).collect();
    for n in &nets {
        b.input(n.clone());
    }
    let mut used = vec![false; n_pi + n_gates];
    for k in 0..n_gates {
        let kind = GateKind::ALL[rng.gen_range(0..GateKind::ALL.len())];
        let arity = if kind.is_unary() { 1 } else { rng.gen_range(2..=3) };
        let ins: Vec<String> = (0..arity)
            .map(|_| {
                let j = rng.gen_range(0..nets.len());
                used[j] = true;
                nets[j].clone()
            })
            .collect();
        let out = format!("g{k}");
        b.gate(out.clone(), kind, ins);
        nets.push(out);
    }
    for (j, n) in nets.iter().enumerate().skip(n_pi) {
        if !used[j] || j + 3 >= nets.len() {
            b.output(n.clone());
        }
    }
    b.build().unwrap()
}

/// Exact per-net statistics from the full truth table.
pub fn exact_stats(g: &CircuitGraph) -> Vec<htins_core::sim::NetStats> {
    use htins_core::pruning::compute_hts;
    use htins_core::sim::{scoap_controllability, NetStats, SignalStats};
    let table = truth_table(g);
    let cc = scoap_controllability(g);
    g.nets()
        .map(|n| {
            let ones = table.iter().filter(|(_, v)| v[n.index()]).count();
            let p1 = ones as f64 / table.len() as f64;
            let s = SignalStats::from_p1(p1);
            let c = cc[n.index()];
            NetStats {
                net: n,
                p1,
                rv: s.rv,
                sw: s.sw,
                cc0: c.cc0,
                cc1: c.cc1,
                hts: compute_hts(c.cc0, c.cc1),
                level: g.level(n),
            }
        })
        .collect()
}
