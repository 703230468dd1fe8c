//! Boolean justification on the gate graph.
//!
//! Requirements are encoded as gate-consistency clauses over the
//! cone of influence of the required nets and solved by a DPLL search
//! with two-watched-literal unit propagation. Decisions are made on
//! primary inputs only; once every cone input is assigned, propagation
//! fixes every internal net, so a conflict-free full input assignment is a
//! model.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::netlist::{transitive_fanin, CircuitGraph, GateKind, NetId};
use crate::sim::{evaluate, SimVector};

/// Default per-query budget.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JustifyError {
    #[error("net {0} is required at both 0 and 1")]
    ConflictingRequirement(NetId),
    #[error("net {0} does not exist")]
    UnknownNet(NetId),
    #[error("empty requirement set")]
    Empty,
}

/// Required net values; at most one value per net.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    reqs: BTreeMap<NetId, bool>,
}

impl Assignment {
    pub fn new<I: IntoIterator<Item = (NetId, bool)>>(
        g: &CircuitGraph,
        reqs: I,
    ) -> Result<Self, JustifyError> {
        let mut m = BTreeMap::new();
        for (n, v) in reqs {
            if !g.contains(n) {
                return Err(JustifyError::UnknownNet(n));
            }
            if let Some(prev) = m.insert(n, v) {
                if prev != v {
                    return Err(JustifyError::ConflictingRequirement(n));
                }
            }
        }
        if m.is_empty() {
            return Err(JustifyError::Empty);
        }
        Ok(Assignment { reqs: m })
    }

    pub fn iter(&self) -> impl Iterator<Item = (NetId, bool)> + '_ {
        self.reqs.iter().map(|(&n, &v)| (n, v))
    }

    pub fn len(&self) -> usize {
        self.reqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reqs.is_empty()
    }

    /// True when `values` (one per net) meets every requirement.
    pub fn satisfied_by(&self, values: &[bool]) -> bool {
        self.iter().all(|(n, v)| values[n.index()] == v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Justification {
    Sat(SimVector),
    Unsat,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Implication {
    Yes,
    /// A vector meeting the antecedent but not the consequent.
    No(SimVector),
    Timeout,
}

/// Find an input vector realizing `req`, prove none exists, or give up
/// after `timeout`.
///
/// Primary inputs outside the requirement cones are 0 in a returned
/// vector. Every SAT answer is re-simulated before it is returned.
pub fn justify(g: &CircuitGraph, req: &Assignment, timeout: Duration) -> Justification {
    let mut solver = ConeSolver::new(g, req);
    let outcome = solver.solve(Instant::now() + timeout);
    match outcome {
        Outcome::Sat => {
            let v = solver.input_vector();
            let values = evaluate(g, &v).expect("vector width follows the graph");
            assert!(
                req.satisfied_by(&values),
                "justification returned a vector that does not satisfy its requirements"
            );
            Justification::Sat(v)
        }
        Outcome::Unsat => Justification::Unsat,
        Outcome::Timeout => Justification::Timeout,
    }
}

/// Decide whether `antecedent` forces `consequent` over all input vectors.
pub fn implies(
    g: &CircuitGraph,
    antecedent: (NetId, bool),
    consequent: (NetId, bool),
    timeout: Duration,
) -> Result<Implication, JustifyError> {
    for n in [antecedent.0, consequent.0] {
        if !g.contains(n) {
            return Err(JustifyError::UnknownNet(n));
        }
    }
    if antecedent.0 == consequent.0 {
        if antecedent.1 == consequent.1 {
            return Ok(Implication::Yes);
        }
        // n=v => n=!v holds only if n=v is unreachable
        let req = Assignment::new(g, [antecedent])?;
        return Ok(match justify(g, &req, timeout) {
            Justification::Sat(v) => Implication::No(v),
            Justification::Unsat => Implication::Yes,
            Justification::Timeout => Implication::Timeout,
        });
    }
    let req = Assignment::new(g, [antecedent, (consequent.0, !consequent.1)])?;
    Ok(match justify(g, &req, timeout) {
        Justification::Sat(v) => Implication::No(v),
        Justification::Unsat => Implication::Yes,
        Justification::Timeout => Implication::Timeout,
    })
}

// Literal: var * 2 + (1 if negated).
type Lit = u32;

#[inline]
fn lit(var: u32, positive: bool) -> Lit {
    var * 2 + (!positive) as u32
}

#[inline]
fn neg(l: Lit) -> Lit {
    l ^ 1
}

#[inline]
fn var_of(l: Lit) -> usize {
    (l >> 1) as usize
}

const UNASSIGNED: u8 = 2;

enum Outcome {
    Sat,
    Unsat,
    Timeout,
}

struct Decision {
    trail_pos: usize,
    lit: Lit,
    flipped: bool,
}

struct ConeSolver<'g> {
    g: &'g CircuitGraph,
    /// (net, var) for every cone primary input, in declaration order.
    inputs: Vec<(NetId, u32)>,
    clauses: Vec<Vec<Lit>>,
    watches: Vec<Vec<usize>>,
    occurs: Vec<Vec<usize>>,
    value: Vec<u8>,
    trail: Vec<Lit>,
    qhead: usize,
    units: Vec<Lit>,
    trivially_unsat: bool,
}

impl<'g> ConeSolver<'g> {
    fn new(g: &'g CircuitGraph, req: &Assignment) -> Self {
        let mut in_cone = vec![false; g.net_count()];
        for (n, _) in req.iter() {
            for x in transitive_fanin(g, n) {
                in_cone[x.index()] = true;
            }
        }
        let mut var_of_net = vec![u32::MAX; g.net_count()];
        let mut n_vars = 0u32;
        let mut inputs = Vec::new();
        for n in g.nets().filter(|n| in_cone[n.index()]) {
            var_of_net[n.index()] = n_vars;
            if g.is_input(n) {
                inputs.push((n, n_vars));
            }
            n_vars += 1;
        }

        let mut clauses: Vec<Vec<Lit>> = Vec::new();
        let add = |c: Vec<Lit>, clauses: &mut Vec<Vec<Lit>>| {
            let mut c = c;
            c.sort_unstable();
            c.dedup();
            if c.windows(2).any(|w| w[0] ^ 1 == w[1]) {
                return; // tautology
            }
            clauses.push(c);
        };
        for gate in g.gates() {
            if !in_cone[gate.output.index()] {
                continue;
            }
            let o = var_of_net[gate.output.index()];
            let ins: Vec<u32> = gate.inputs.iter().map(|i| var_of_net[i.index()]).collect();
            match gate.kind {
                GateKind::And | GateKind::Nand | GateKind::Or | GateKind::Nor => {
                    // out <-> AND(in_j)
                    let (out, pos_in) = match gate.kind {
                        GateKind::And => (lit(o, true), true),
                        GateKind::Nand => (lit(o, false), true),
                        GateKind::Or => (lit(o, false), false),
                        _ => (lit(o, true), false),
                    };
                    let mut big = vec![out];
                    for &i in &ins {
                        let il = lit(i, pos_in);
                        add(vec![neg(out), il], &mut clauses);
                        big.push(neg(il));
                    }
                    add(big, &mut clauses);
                }
                GateKind::Not | GateKind::Buf => {
                    let il = lit(ins[0], gate.kind == GateKind::Buf);
                    let ol = lit(o, true);
                    add(vec![neg(ol), il], &mut clauses);
                    add(vec![ol, neg(il)], &mut clauses);
                }
                GateKind::Xor | GateKind::Xnor => {
                    let mut acc = lit(ins[0], true);
                    for (k, &i) in ins.iter().enumerate().skip(1) {
                        let last = k == ins.len() - 1;
                        let z = if last {
                            lit(o, gate.kind == GateKind::Xor)
                        } else {
                            let v = n_vars;
                            n_vars += 1;
                            lit(v, true)
                        };
                        let y = lit(i, true);
                        add(vec![neg(z), acc, y], &mut clauses);
                        add(vec![neg(z), neg(acc), neg(y)], &mut clauses);
                        add(vec![z, neg(acc), y], &mut clauses);
                        add(vec![z, acc, neg(y)], &mut clauses);
                        acc = z;
                    }
                }
            }
        }

        let n = n_vars as usize;
        let mut watches = vec![Vec::new(); 2 * n];
        let mut occurs = vec![Vec::new(); n];
        let mut units = Vec::new();
        let mut trivially_unsat = false;
        for (ci, c) in clauses.iter().enumerate() {
            for &l in c {
                occurs[var_of(l)].push(ci);
            }
            match c.len() {
                0 => trivially_unsat = true,
                1 => units.push(c[0]),
                _ => {
                    watches[c[0] as usize].push(ci);
                    watches[c[1] as usize].push(ci);
                }
            }
        }
        for (net, v) in req.iter() {
            units.push(lit(var_of_net[net.index()], v));
        }

        ConeSolver {
            g,
            inputs,
            clauses,
            watches,
            occurs,
            value: vec![UNASSIGNED; n],
            trail: Vec::new(),
            qhead: 0,
            units,
            trivially_unsat,
        }
    }

    #[inline]
    fn lit_value(&self, l: Lit) -> u8 {
        let v = self.value[var_of(l)];
        if v == UNASSIGNED {
            UNASSIGNED
        } else {
            v ^ (l & 1) as u8
        }
    }

    /// Assign `l` true. Returns false if it is already false.
    fn enqueue(&mut self, l: Lit) -> bool {
        match self.lit_value(l) {
            1 => true,
            0 => false,
            _ => {
                self.value[var_of(l)] = 1 ^ (l & 1) as u8;
                self.trail.push(l);
                true
            }
        }
    }

    /// Unit propagation; false on conflict.
    fn propagate(&mut self) -> bool {
        while self.qhead < self.trail.len() {
            let p = self.trail[self.qhead];
            self.qhead += 1;
            let false_lit = neg(p);
            let mut ws = std::mem::take(&mut self.watches[false_lit as usize]);
            let mut i = 0;
            let mut conflict = false;
            while i < ws.len() {
                let ci = ws[i];
                let clause = &mut self.clauses[ci];
                if clause[0] == false_lit {
                    clause.swap(0, 1);
                }
                let first = clause[0];
                if self.value[var_of(first)] != UNASSIGNED
                    && self.value[var_of(first)] ^ (first & 1) as u8 == 1
                {
                    i += 1;
                    continue;
                }
                let mut moved = false;
                for k in 2..clause.len() {
                    let l = clause[k];
                    let v = self.value[var_of(l)];
                    if v == UNASSIGNED || v ^ (l & 1) as u8 == 1 {
                        clause.swap(1, k);
                        self.watches[clause[1] as usize].push(ci);
                        ws.swap_remove(i);
                        moved = true;
                        break;
                    }
                }
                if moved {
                    continue;
                }
                if !self.enqueue(first) {
                    conflict = true;
                    break;
                }
                i += 1;
            }
            self.watches[false_lit as usize] = ws;
            if conflict {
                return false;
            }
        }
        true
    }

    fn undo_to(&mut self, pos: usize) {
        for &l in &self.trail[pos..] {
            self.value[var_of(l)] = UNASSIGNED;
        }
        self.trail.truncate(pos);
        self.qhead = pos;
    }

    /// Unassigned cone input in the most unresolved clauses; ties go to
    /// the lower input position. Polarity favours the side satisfying more
    /// of those clauses.
    fn pick_branch(&self) -> Option<Lit> {
        let mut best: Option<(usize, Lit)> = None;
        for &(_, var) in &self.inputs {
            if self.value[var as usize] != UNASSIGNED {
                continue;
            }
            let mut pos = 0usize;
            let mut negc = 0usize;
            for &ci in &self.occurs[var as usize] {
                let c = &self.clauses[ci];
                if c.iter().any(|&l| self.lit_value(l) == 1) {
                    continue;
                }
                if c.contains(&lit(var, true)) {
                    pos += 1;
                } else {
                    negc += 1;
                }
            }
            let score = pos + negc;
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, lit(var, pos >= negc)));
            }
        }
        best.map(|(_, l)| l)
    }

    fn solve(&mut self, deadline: Instant) -> Outcome {
        if self.trivially_unsat {
            return Outcome::Unsat;
        }
        for l in std::mem::take(&mut self.units) {
            if !self.enqueue(l) {
                return Outcome::Unsat;
            }
        }
        if !self.propagate() {
            return Outcome::Unsat;
        }
        let mut decisions: Vec<Decision> = Vec::new();
        let mut steps = 0u32;
        loop {
            steps = steps.wrapping_add(1);
            if steps.is_multiple_of(256) && Instant::now() >= deadline {
                return Outcome::Timeout;
            }
            let Some(l) = self.pick_branch() else {
                return Outcome::Sat;
            };
            decisions.push(Decision {
                trail_pos: self.trail.len(),
                lit: l,
                flipped: false,
            });
            self.enqueue(l);
            while !self.propagate() {
                // chronological backtracking to the latest unflipped decision
                loop {
                    let Some(d) = decisions.last_mut() else {
                        return Outcome::Unsat;
                    };
                    if d.flipped {
                        let pos = d.trail_pos;
                        decisions.pop();
                        self.undo_to(pos);
                        continue;
                    }
                    d.flipped = true;
                    d.lit = neg(d.lit);
                    let (pos, l) = (d.trail_pos, d.lit);
                    self.undo_to(pos);
                    self.enqueue(l);
                    break;
                }
                steps = steps.wrapping_add(1);
                if steps.is_multiple_of(256) && Instant::now() >= deadline {
                    return Outcome::Timeout;
                }
            }
        }
    }

    fn input_vector(&self) -> SimVector {
        let mut v = SimVector::zeros(self.g.primary_inputs().len());
        for &(net, var) in &self.inputs {
            let pos = self.g.input_position(net).unwrap();
            v.set(pos, self.value[var as usize] == 1);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::parse_bench;

    const T: Duration = Duration::from_secs(5);

    fn fig2() -> CircuitGraph {
        parse_bench(
            "INPUT(I0)\nINPUT(I1)\nINPUT(I2)\nINPUT(I3)\nOUTPUT(O)\n\
             a = AND(I0, I1)\nb = BUFF(a)\no = OR(I2, I3)\nn = NOT(o)\nK = AND(b, n)\nO = NOT(K)\n",
        )
        .unwrap()
    }

    #[test]
    fn activates_k() {
        let g = fig2();
        let k = g.lookup("K").unwrap();
        let req = Assignment::new(&g, [(k, true)]).unwrap();
        match justify(&g, &req, T) {
            Justification::Sat(v) => assert_eq!(v.to_string(), "1100"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn conflicting_requirements_rejected() {
        let g = fig2();
        let k = g.lookup("K").unwrap();
        assert_eq!(
            Assignment::new(&g, [(k, true), (k, false)]),
            Err(JustifyError::ConflictingRequirement(k))
        );
        assert_eq!(Assignment::new(&g, []), Err(JustifyError::Empty));
    }

    #[test]
    fn net_and_its_inverse_unsat() {
        let g = parse_bench("INPUT(a)\nOUTPUT(b)\nb = NOT(a)\n").unwrap();
        let req = Assignment::new(&g, [(NetId(0), true), (NetId(1), true)]).unwrap();
        assert_eq!(justify(&g, &req, T), Justification::Unsat);
    }

    #[test]
    fn fig2_implications_hold() {
        let g = fig2();
        let k = g.lookup("K").unwrap();
        for (n, v) in [("a", true), ("b", true), ("o", false), ("n", true)] {
            let r = g.lookup(n).unwrap();
            assert_eq!(implies(&g, (k, true), (r, v), T).unwrap(), Implication::Yes, "{n}");
        }
    }

    #[test]
    fn reflexive_and_independent() {
        let g = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = AND(a, b)\n").unwrap();
        let (a, b) = (NetId(0), NetId(1));
        assert_eq!(implies(&g, (a, true), (a, true), T).unwrap(), Implication::Yes);
        match implies(&g, (a, true), (b, true), T).unwrap() {
            Implication::No(w) => assert_eq!(w.to_string(), "10"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn xor_constant_is_never_one() {
        let g = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\nz = XOR(a, b, a, b)\ny = OR(z, b)\n").unwrap();
        let z = g.lookup("z").unwrap();
        let req = Assignment::new(&g, [(z, true)]).unwrap();
        assert_eq!(justify(&g, &req, T), Justification::Unsat);
        let req = Assignment::new(&g, [(z, false)]).unwrap();
        assert!(matches!(justify(&g, &req, T), Justification::Sat(_)));
    }

    #[test]
    fn inputs_outside_cone_stay_zero() {
        let g = parse_bench("INPUT(a)\nINPUT(b)\nINPUT(c)\nOUTPUT(y)\nx = NOR(a, a)\ny = AND(x, b, c)\n")
            .unwrap();
        let x = g.lookup("x").unwrap();
        let req = Assignment::new(&g, [(x, true)]).unwrap();
        assert_eq!(justify(&g, &req, T), Justification::Sat("000".parse().unwrap()));
    }

    #[test]
    fn zero_timeout_may_give_up() {
        let g = fig2();
        let k = g.lookup("K").unwrap();
        let req = Assignment::new(&g, [(k, true)]).unwrap();
        // small problem, may finish before the first deadline check
        assert!(matches!(
            justify(&g, &req, Duration::ZERO),
            Justification::Sat(_) | Justification::Timeout
        ));
    }
}
