//! Trojan construction: an AND-tree trigger over candidate nets at their
//! rare values, spliced into a payload net through an XOR.

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::justify::{justify, Assignment, Justification};
use crate::netlist::{validate_acyclic, CircuitGraph, GateKind, NetId, NetlistBuilder, NetlistError};
use crate::pruning::CandidateSet;
use crate::sim::{evaluate_outputs, SimVector};

/// Name prefix reserved for inserted gates.
pub const HT_PREFIX: &str = "tf_";
/// Output net of the trigger tree.
pub const TRIGGER_NET: &str = "tf_trig";
/// Output net of the payload XOR.
pub const PAYLOAD_NET: &str = "tf_pl";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InsertError {
    #[error("trigger index {0} used twice")]
    DuplicateTrigger(usize),
    #[error("trigger index {index} out of range for {m} candidates")]
    IndexOutOfRange { index: usize, m: usize },
    #[error("a trigger needs between 2 and 8 nets, got {0}")]
    BadTriggerCount(usize),
    #[error("no net qualifies as payload for this trigger")]
    NoEligiblePayload,
    #[error("net `{0}` cannot carry the payload for this trigger")]
    IneligiblePayload(String),
    #[error("circuit already uses the reserved prefix `tf_` (net `{0}`)")]
    ReservedName(String),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
}

/// One Trojan: which candidates trigger it, where the payload lands, and
/// what verification found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HtInstance {
    /// Sorted candidate indices.
    pub triggers: Vec<usize>,
    pub payload: NetId,
    pub trigger_vector: Option<SimVector>,
    /// Some input vector sets every trigger net to its rare value.
    pub functional: bool,
    /// The trigger vector flips at least one primary output.
    pub propagates: Option<bool>,
    pub detected_by: Vec<String>,
}

impl HtInstance {
    pub fn new(triggers: &[usize], payload: NetId) -> Self {
        let mut t = triggers.to_vec();
        t.sort_unstable();
        HtInstance {
            triggers: t,
            payload,
            trigger_vector: None,
            functional: false,
            propagates: None,
            detected_by: Vec::new(),
        }
    }

    /// Trigger as a candidate bit mask.
    pub fn trigger_mask(&self) -> u64 {
        self.triggers.iter().fold(0, |m, &i| m | 1 << i)
    }

    pub fn sidecar(&self, g: &CircuitGraph, cs: &CandidateSet) -> HtSidecar {
        HtSidecar {
            circuit: g.name().to_string(),
            triggers: self
                .triggers
                .iter()
                .map(|&i| g.net_name(cs.members[i].net).to_string())
                .collect(),
            trigger_indices: self.triggers.clone(),
            payload: g.net_name(self.payload).to_string(),
            trigger_vector: self.trigger_vector.as_ref().map(ToString::to_string),
            functional: self.functional,
            propagates: self.propagates,
            detected_by: self.detected_by.clone(),
        }
    }
}

/// Per-instance JSON sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HtSidecar {
    pub circuit: String,
    pub triggers: Vec<String>,
    pub trigger_indices: Vec<usize>,
    pub payload: String,
    pub trigger_vector: Option<String>,
    pub functional: bool,
    pub propagates: Option<bool>,
    pub detected_by: Vec<String>,
}

/// Gates to add for a trigger, by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerTree {
    pub gates: Vec<(String, GateKind, Vec<String>)>,
    pub trigger_out: String,
    pub inverters: usize,
}

fn check_triggers(cs: &CandidateSet, triggers: &[usize]) -> Result<(), InsertError> {
    if !(2..=8).contains(&triggers.len()) {
        return Err(InsertError::BadTriggerCount(triggers.len()));
    }
    for (k, &i) in triggers.iter().enumerate() {
        if i >= cs.len() {
            return Err(InsertError::IndexOutOfRange { index: i, m: cs.len() });
        }
        if triggers[..k].contains(&i) {
            return Err(InsertError::DuplicateTrigger(i));
        }
    }
    Ok(())
}

/// Inverters for rare-0 members, then a balanced tree of 2-input ANDs
/// whose output is 1 exactly when every member sits at its rare value.
pub fn build_trigger_tree(
    g: &CircuitGraph,
    cs: &CandidateSet,
    triggers: &[usize],
) -> Result<TriggerTree, InsertError> {
    check_triggers(cs, triggers)?;
    let mut sorted = triggers.to_vec();
    sorted.sort_unstable();
    let mut gates = Vec::new();
    let mut layer: Vec<String> = Vec::new();
    let mut inverters = 0;
    for &i in &sorted {
        let c = cs.members[i];
        let name = g.net_name(c.net).to_string();
        if c.rv == 1 {
            layer.push(name);
        } else {
            let inv = format!("{HT_PREFIX}inv{inverters}");
            inverters += 1;
            gates.push((inv.clone(), GateKind::Not, vec![name]));
            layer.push(inv);
        }
    }
    let mut ands = 0;
    while layer.len() > 1 {
        let mut next = Vec::with_capacity(layer.len().div_ceil(2));
        let mut it = layer.chunks(2);
        for pair in &mut it {
            if pair.len() == 2 {
                let out = format!("{HT_PREFIX}and{ands}");
                ands += 1;
                gates.push((out.clone(), GateKind::And, pair.to_vec()));
                next.push(out);
            } else {
                next.push(pair[0].clone());
            }
        }
        layer = next;
    }
    // the root AND carries the well-known trigger name
    let root = gates.last_mut().expect("at least one AND");
    root.0 = TRIGGER_NET.to_string();
    Ok(TriggerTree {
        gates,
        trigger_out: TRIGGER_NET.to_string(),
        inverters,
    })
}

/// Nets that may carry the payload: not a candidate, not a primary input,
/// and strictly above every trigger net's level.
pub fn eligible_payloads(g: &CircuitGraph, cs: &CandidateSet, triggers: &[usize]) -> Vec<NetId> {
    let max_level = triggers
        .iter()
        .map(|&i| g.level(cs.members[i].net))
        .max()
        .unwrap_or(0);
    let in_m: Vec<NetId> = cs.nets();
    g.nets()
        .filter(|&n| !g.is_input(n) && g.level(n) > max_level && !in_m.contains(&n))
        .collect()
}

/// Uniform draw among [`eligible_payloads`].
pub fn select_payload<R: Rng + ?Sized>(
    g: &CircuitGraph,
    cs: &CandidateSet,
    triggers: &[usize],
    rng: &mut R,
) -> Result<NetId, InsertError> {
    check_triggers(cs, triggers)?;
    let pool = eligible_payloads(g, cs, triggers);
    if pool.is_empty() {
        return Err(InsertError::NoEligiblePayload);
    }
    Ok(pool[rng.gen_range(0..pool.len())])
}

/// Golden circuit with one Trojan spliced in.
#[derive(Debug, Clone)]
pub struct InfectedNetlist {
    pub base: String,
    pub graph: CircuitGraph,
    pub ht: HtInstance,
    pub trigger_out: NetId,
    pub payload_out: NetId,
    pub added_gates: usize,
}

/// Splice `XOR(trigger, payload)` so every former reader of the payload
/// net, including a primary output, now reads the XOR.
pub fn insert_ht(
    g: &CircuitGraph,
    cs: &CandidateSet,
    triggers: &[usize],
    payload: NetId,
) -> Result<InfectedNetlist, InsertError> {
    if let Some(n) = g.nets().find(|&n| g.net_name(n).starts_with(HT_PREFIX)) {
        return Err(InsertError::ReservedName(g.net_name(n).to_string()));
    }
    let tree = build_trigger_tree(g, cs, triggers)?;
    if !g.contains(payload) {
        return Err(NetlistError::UnknownNet(payload.to_string()).into());
    }
    if !eligible_payloads(g, cs, triggers).contains(&payload) {
        return Err(InsertError::IneligiblePayload(g.net_name(payload).to_string()));
    }
    let p = g.net_name(payload).to_string();
    let mut b: NetlistBuilder = g.to_builder();
    for (_, _, ins) in b.gates.iter_mut() {
        for i in ins.iter_mut() {
            if *i == p {
                *i = PAYLOAD_NET.to_string();
            }
        }
    }
    for o in b.outputs.iter_mut() {
        if *o == p {
            *o = PAYLOAD_NET.to_string();
        }
    }
    let added_gates = tree.gates.len() + 1;
    b.gates.extend(tree.gates);
    b.gate(PAYLOAD_NET, GateKind::Xor, [TRIGGER_NET.to_string(), p]);
    let graph = b.build()?;
    validate_acyclic(&graph)?;
    Ok(InfectedNetlist {
        base: g.name().to_string(),
        trigger_out: graph.lookup(TRIGGER_NET)?,
        payload_out: graph.lookup(PAYLOAD_NET)?,
        graph,
        ht: HtInstance::new(triggers, payload),
        added_gates,
    })
}

/// Requirement set putting every trigger net at its rare value.
pub fn trigger_requirements(g: &CircuitGraph, cs: &CandidateSet, triggers: &[usize]) -> Assignment {
    Assignment::new(
        g,
        triggers.iter().map(|&i| {
            let c = cs.members[i];
            (c.net, c.rv == 1)
        }),
    )
    .expect("distinct candidate nets")
}

/// Look for a vector activating the trigger on the golden circuit.
pub fn verify_functional(
    golden: &CircuitGraph,
    cs: &CandidateSet,
    inf: &InfectedNetlist,
    timeout: Duration,
) -> HtInstance {
    let mut ht = inf.ht.clone();
    match justify(golden, &trigger_requirements(golden, cs, &ht.triggers), timeout) {
        Justification::Sat(v) => {
            ht.functional = true;
            ht.trigger_vector = Some(v);
        }
        Justification::Unsat | Justification::Timeout => {
            ht.functional = false;
            ht.trigger_vector = None;
        }
    }
    ht
}

/// True when `vector` makes some primary output differ from golden.
pub fn check_propagation(golden: &CircuitGraph, inf: &InfectedNetlist, vector: &SimVector) -> bool {
    let a = evaluate_outputs(golden, vector).expect("width follows golden");
    let b = evaluate_outputs(&inf.graph, vector).expect("same primary inputs");
    a != b
}

/// Bench text: the original gates, then the `tf_` gates.
pub fn emit_infected(inf: &InfectedNetlist) -> String {
    let g = &inf.graph;
    let mut s = String::new();
    for &i in g.primary_inputs() {
        s.push_str(&format!("INPUT({})\n", g.net_name(i)));
    }
    for &o in g.primary_outputs() {
        s.push_str(&format!("OUTPUT({})\n", g.net_name(o)));
    }
    let line = |gate: &crate::netlist::Gate| {
        let ins: Vec<&str> = gate.inputs.iter().map(|&i| g.net_name(i)).collect();
        format!("{} = {}({})\n", g.net_name(gate.output), gate.kind.bench_name(), ins.join(", "))
    };
    let is_ht = |gate: &&crate::netlist::Gate| g.net_name(gate.output).starts_with(HT_PREFIX);
    for gate in g.gates().iter().filter(|x| !is_ht(x)) {
        s.push_str(&line(gate));
    }
    for gate in g.gates().iter().filter(is_ht) {
        s.push_str(&line(gate));
    }
    s
}

/// Delete every `tf_` gate and reconnect the payload readers to the
/// original driver.
pub fn strip_ht(infected: &CircuitGraph, payload_name: &str) -> Result<CircuitGraph, NetlistError> {
    let mut b = infected.to_builder();
    b.gates.retain(|(o, _, _)| !o.starts_with(HT_PREFIX));
    for (_, _, ins) in b.gates.iter_mut() {
        for i in ins.iter_mut() {
            if i == PAYLOAD_NET {
                *i = payload_name.to_string();
            }
        }
    }
    for o in b.outputs.iter_mut() {
        if o == PAYLOAD_NET {
            *o = payload_name.to_string();
        }
    }
    b.build()
}

/// Name-level equality: same inputs and outputs in the same order, and the
/// same gate driving every net.
pub fn same_structure(a: &CircuitGraph, b: &CircuitGraph) -> bool {
    let names = |g: &CircuitGraph, v: &[NetId]| v.iter().map(|&n| g.net_name(n).to_string()).collect::<Vec<_>>();
    if names(a, a.primary_inputs()) != names(b, b.primary_inputs())
        || names(a, a.primary_outputs()) != names(b, b.primary_outputs())
        || a.gates().len() != b.gates().len()
    {
        return false;
    }
    a.gates().iter().all(|ga| {
        let Some(out) = b.net_id(a.net_name(ga.output)) else {
            return false;
        };
        let Some(gb) = b.driving_gate(out) else {
            return false;
        };
        ga.kind == gb.kind && names(a, &ga.inputs) == names(b, &gb.inputs)
    })
}
