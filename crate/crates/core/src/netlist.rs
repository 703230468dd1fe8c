//! Gate-level combinational netlists.
//!
//! A [`CircuitGraph`] is an immutable, levelized, acyclic gate graph read
//! from (and written back to) the ISCAS-85 `.bench` format. Nets are dense
//! integer handles; names live in a side table. Primary inputs take the
//! first ids in declaration order, gate outputs follow in topological
//! order, so iterating nets by id is a valid evaluation order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense handle for a net within one [`CircuitGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NetId(pub u32);

impl NetId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GateKind {
    And,
    Nand,
    Or,
    Nor,
    Xor,
    Xnor,
    Not,
    Buf,
}

impl GateKind {
    pub const ALL: [GateKind; 8] = [
        GateKind::And,
        GateKind::Nand,
        GateKind::Or,
        GateKind::Nor,
        GateKind::Xor,
        GateKind::Xnor,
        GateKind::Not,
        GateKind::Buf,
    ];

    pub fn is_unary(self) -> bool {
        matches!(self, GateKind::Not | GateKind::Buf)
    }

    pub fn arity_ok(self, n: usize) -> bool {
        if self.is_unary() {
            n == 1
        } else {
            n >= 2
        }
    }

    /// Keyword used when writing `.bench` text.
    pub fn bench_name(self) -> &'static str {
        match self {
            GateKind::And => "AND",
            GateKind::Nand => "NAND",
            GateKind::Or => "OR",
            GateKind::Nor => "NOR",
            GateKind::Xor => "XOR",
            GateKind::Xnor => "XNOR",
            GateKind::Not => "NOT",
            GateKind::Buf => "BUFF",
        }
    }

    /// Scalar gate function.
    pub fn eval<I: IntoIterator<Item = bool>>(self, inputs: I) -> bool {
        let mut it = inputs.into_iter();
        match self {
            GateKind::And => it.all(|b| b),
            GateKind::Nand => !it.all(|b| b),
            GateKind::Or => it.any(|b| b),
            GateKind::Nor => !it.any(|b| b),
            GateKind::Xor => it.fold(false, |a, b| a ^ b),
            GateKind::Xnor => !it.fold(false, |a, b| a ^ b),
            GateKind::Not => !it.next().unwrap_or(false),
            GateKind::Buf => it.next().unwrap_or(false),
        }
    }

    /// Bit-parallel gate function over 64 patterns at once.
    #[inline]
    pub fn eval_words<I: IntoIterator<Item = u64>>(self, inputs: I) -> u64 {
        let mut it = inputs.into_iter();
        match self {
            GateKind::And => it.fold(!0, |a, b| a & b),
            GateKind::Nand => !it.fold(!0, |a, b| a & b),
            GateKind::Or => it.fold(0, |a, b| a | b),
            GateKind::Nor => !it.fold(0, |a, b| a | b),
            GateKind::Xor => it.fold(0, |a, b| a ^ b),
            GateKind::Xnor => !it.fold(0, |a, b| a ^ b),
            GateKind::Not => !it.next().unwrap_or(0),
            GateKind::Buf => it.next().unwrap_or(0),
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.bench_name())
    }
}

impl FromStr for GateKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "AND" => GateKind::And,
            "NAND" => GateKind::Nand,
            "OR" => GateKind::Or,
            "NOR" => GateKind::Nor,
            "XOR" => GateKind::Xor,
            "XNOR" => GateKind::Xnor,
            "NOT" | "INV" => GateKind::Not,
            "BUF" | "BUFF" => GateKind::Buf,
            _ => return Err(()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gate {
    pub kind: GateKind,
    pub inputs: Vec<NetId>,
    pub output: NetId,
}

/// What drives a net.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Driver {
    /// Primary input, by declaration position.
    Input(usize),
    /// Gate, by index into [`CircuitGraph::gates`].
    Gate(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetlistError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("net `{net}` has more than one driver")]
    MultipleDrivers { net: String },
    #[error("net `{net}` is used but never driven")]
    UndrivenNet { net: String },
    #[error("combinational cycle through {}", .cycle.join(" -> "))]
    CycleDetected { cycle: Vec<String> },
    #[error("unknown net `{0}`")]
    UnknownNet(String),
    #[error("gate `{net}` of kind {kind} cannot take {arity} input(s)")]
    BadArity {
        net: String,
        kind: GateKind,
        arity: usize,
    },
}

/// Name-level description of a netlist, before validation.
///
/// Gates may be listed in any order; [`NetlistBuilder::build`] sorts,
/// checks and levelizes them.
#[derive(Debug, Clone, Default)]
pub struct NetlistBuilder {
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub gates: Vec<(String, GateKind, Vec<String>)>,
}

impl NetlistBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        NetlistBuilder {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn input(&mut self, name: impl Into<String>) -> &mut Self {
        self.inputs.push(name.into());
        self
    }

    pub fn output(&mut self, name: impl Into<String>) -> &mut Self {
        self.outputs.push(name.into());
        self
    }

    pub fn gate<S: Into<String>>(
        &mut self,
        output: impl Into<String>,
        kind: GateKind,
        inputs: impl IntoIterator<Item = S>,
    ) -> &mut Self {
        self.gates.push((
            output.into(),
            kind,
            inputs.into_iter().map(Into::into).collect(),
        ));
        self
    }

    pub fn build(&self) -> Result<CircuitGraph, NetlistError> {
        build_graph(self, None)
    }
}

/// Immutable, levelized combinational netlist.
#[derive(Debug, Clone)]
pub struct CircuitGraph {
    name: String,
    net_names: Vec<String>,
    name_index: HashMap<String, NetId>,
    gates: Vec<Gate>,
    primary_inputs: Vec<NetId>,
    primary_outputs: Vec<NetId>,
    drivers: Vec<Driver>,
    levels: Vec<u32>,
    fanouts: Vec<Vec<usize>>,
}

impl CircuitGraph {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn net_count(&self) -> usize {
        self.net_names.len()
    }

    pub fn nets(&self) -> impl Iterator<Item = NetId> + '_ {
        (0..self.net_names.len() as u32).map(NetId)
    }

    /// Gates in topological order.
    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn primary_inputs(&self) -> &[NetId] {
        &self.primary_inputs
    }

    pub fn primary_outputs(&self) -> &[NetId] {
        &self.primary_outputs
    }

    pub fn net_name(&self, n: NetId) -> &str {
        &self.net_names[n.index()]
    }

    pub fn net_id(&self, name: &str) -> Option<NetId> {
        self.name_index.get(name).copied()
    }

    pub fn lookup(&self, name: &str) -> Result<NetId, NetlistError> {
        self.net_id(name)
            .ok_or_else(|| NetlistError::UnknownNet(name.to_string()))
    }

    pub fn contains(&self, n: NetId) -> bool {
        n.index() < self.net_names.len()
    }

    pub fn driver(&self, n: NetId) -> Driver {
        self.drivers[n.index()]
    }

    /// Gate driving `n`, or `None` for a primary input.
    pub fn driving_gate(&self, n: NetId) -> Option<&Gate> {
        match self.drivers[n.index()] {
            Driver::Gate(g) => Some(&self.gates[g]),
            Driver::Input(_) => None,
        }
    }

    pub fn is_input(&self, n: NetId) -> bool {
        matches!(self.drivers[n.index()], Driver::Input(_))
    }

    /// Position of `n` among the primary inputs (its test-vector bit).
    pub fn input_position(&self, n: NetId) -> Option<usize> {
        match self.drivers[n.index()] {
            Driver::Input(i) => Some(i),
            Driver::Gate(_) => None,
        }
    }

    pub fn is_output(&self, n: NetId) -> bool {
        self.primary_outputs.contains(&n)
    }

    pub fn level(&self, n: NetId) -> u32 {
        self.levels[n.index()]
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn max_level(&self) -> u32 {
        self.levels.iter().copied().max().unwrap_or(0)
    }

    /// Indices of the gates reading `n`.
    pub fn fanout_gates(&self, n: NetId) -> &[usize] {
        &self.fanouts[n.index()]
    }

    /// Name-level copy of this graph, for editing and rebuilding.
    pub fn to_builder(&self) -> NetlistBuilder {
        NetlistBuilder {
            name: self.name.clone(),
            inputs: self
                .primary_inputs
                .iter()
                .map(|&n| self.net_name(n).to_string())
                .collect(),
            outputs: self
                .primary_outputs
                .iter()
                .map(|&n| self.net_name(n).to_string())
                .collect(),
            gates: self
                .gates
                .iter()
                .map(|g| {
                    (
                        self.net_name(g.output).to_string(),
                        g.kind,
                        g.inputs
                            .iter()
                            .map(|&i| self.net_name(i).to_string())
                            .collect(),
                    )
                })
                .collect(),
        }
    }
}

fn build_graph(
    b: &NetlistBuilder,
    gate_lines: Option<&[usize]>,
) -> Result<CircuitGraph, NetlistError> {
    let line_of = |g: usize| gate_lines.map(|l| l[g]);

    // name -> who drives it
    #[derive(Clone, Copy)]
    enum Src {
        Pi,
        Gate(usize),
    }
    let mut src: HashMap<&str, Src> = HashMap::new();
    for name in &b.inputs {
        if src.insert(name.as_str(), Src::Pi).is_some() {
            return Err(NetlistError::MultipleDrivers { net: name.clone() });
        }
    }
    for (gi, (out, kind, ins)) in b.gates.iter().enumerate() {
        if !kind.arity_ok(ins.len()) {
            return Err(match line_of(gi) {
                Some(line) => NetlistError::Parse {
                    line,
                    message: format!("{kind} gate `{out}` cannot take {} input(s)", ins.len()),
                },
                None => NetlistError::BadArity {
                    net: out.clone(),
                    kind: *kind,
                    arity: ins.len(),
                },
            });
        }
        if src.insert(out.as_str(), Src::Gate(gi)).is_some() {
            return Err(NetlistError::MultipleDrivers { net: out.clone() });
        }
    }
    for (_, _, ins) in &b.gates {
        for i in ins {
            if !src.contains_key(i.as_str()) {
                return Err(NetlistError::UndrivenNet { net: i.clone() });
            }
        }
    }
    for o in &b.outputs {
        if !src.contains_key(o.as_str()) {
            return Err(NetlistError::UndrivenNet { net: o.clone() });
        }
    }

    // Iterative DFS post-order over gates, in source order. Already-sorted
    // input comes out unchanged, which keeps emit/parse round trips stable.
    const WHITE: u8 = 0;
    const GREY: u8 = 1;
    const BLACK: u8 = 2;
    let mut color = vec![WHITE; b.gates.len()];
    let mut order: Vec<usize> = Vec::with_capacity(b.gates.len());
    for root in 0..b.gates.len() {
        if color[root] != WHITE {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        color[root] = GREY;
        while let Some(top) = stack.last_mut() {
            let g = top.0;
            let ins = &b.gates[g].2;
            if top.1 < ins.len() {
                let inp = ins[top.1].as_str();
                top.1 += 1;
                if let Some(Src::Gate(h)) = src.get(inp).copied() {
                    match color[h] {
                        WHITE => {
                            color[h] = GREY;
                            stack.push((h, 0));
                        }
                        GREY => {
                            let start = stack.iter().position(|&(s, _)| s == h).unwrap();
                            let mut cycle: Vec<String> =
                                stack[start..].iter().map(|&(s, _)| b.gates[s].0.clone()).collect();
                            cycle.push(b.gates[h].0.clone());
                            return Err(NetlistError::CycleDetected { cycle });
                        }
                        _ => {}
                    }
                }
            } else {
                color[g] = BLACK;
                order.push(g);
                stack.pop();
            }
        }
    }

    let n_nets = b.inputs.len() + b.gates.len();
    let mut net_names = Vec::with_capacity(n_nets);
    let mut name_index = HashMap::with_capacity(n_nets);
    let mut drivers = Vec::with_capacity(n_nets);
    for (i, name) in b.inputs.iter().enumerate() {
        name_index.insert(name.clone(), NetId(net_names.len() as u32));
        net_names.push(name.clone());
        drivers.push(Driver::Input(i));
    }
    for (pos, &g) in order.iter().enumerate() {
        let name = &b.gates[g].0;
        name_index.insert(name.clone(), NetId(net_names.len() as u32));
        net_names.push(name.clone());
        drivers.push(Driver::Gate(pos));
    }

    let mut levels = vec![0u32; n_nets];
    let mut fanouts = vec![Vec::new(); n_nets];
    let mut gates = Vec::with_capacity(order.len());
    for (pos, &g) in order.iter().enumerate() {
        let (out, kind, ins) = &b.gates[g];
        let output = name_index[out];
        let inputs: Vec<NetId> = ins.iter().map(|i| name_index[i]).collect();
        let lvl = inputs.iter().map(|i| levels[i.index()]).max().unwrap_or(0) + 1;
        levels[output.index()] = lvl;
        for i in &inputs {
            fanouts[i.index()].push(pos);
        }
        gates.push(Gate {
            kind: *kind,
            inputs,
            output,
        });
    }

    let mut primary_outputs = Vec::with_capacity(b.outputs.len());
    for o in &b.outputs {
        primary_outputs.push(name_index[o]);
    }

    Ok(CircuitGraph {
        name: b.name.clone(),
        net_names,
        name_index,
        gates,
        primary_inputs: (0..b.inputs.len() as u32).map(NetId).collect(),
        primary_outputs,
        drivers,
        levels,
        fanouts,
    })
}

fn parse_call(s: &str) -> Option<(&str, Vec<&str>)> {
    let open = s.find('(')?;
    let close = s.rfind(')')?;
    if close < open || !s[close + 1..].trim().is_empty() {
        return None;
    }
    let head = s[..open].trim();
    let args = s[open + 1..close]
        .split(',')
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .collect();
    Some((head, args))
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| !c.is_whitespace() && !matches!(c, '(' | ')' | ',' | '=' | '#'))
}

/// Parse `.bench` text into a validated, levelized graph.
pub fn parse_bench(text: &str) -> Result<CircuitGraph, NetlistError> {
    parse_bench_named(text, "circuit")
}

/// Like [`parse_bench`], naming the resulting circuit.
pub fn parse_bench_named(text: &str, name: &str) -> Result<CircuitGraph, NetlistError> {
    let mut b = NetlistBuilder::new(name);
    let mut gate_lines = Vec::new();
    let mut seen_outputs = std::collections::HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let l = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if l.is_empty() {
            continue;
        }
        let err = |message: String| NetlistError::Parse { line, message };

        if let Some((lhs, rhs)) = l.split_once('=') {
            let out = lhs.trim();
            if !valid_name(out) {
                return Err(err(format!("invalid net name `{out}`")));
            }
            let (head, args) =
                parse_call(rhs.trim()).ok_or_else(|| err(format!("malformed gate `{l}`")))?;
            let kind: GateKind = head
                .parse()
                .map_err(|_| err(format!("unsupported gate kind `{head}`")))?;
            if let Some(bad) = args.iter().find(|a| !valid_name(a)) {
                return Err(err(format!("invalid net name `{bad}`")));
            }
            b.gate(out, kind, args);
            gate_lines.push(line);
        } else {
            let (head, args) =
                parse_call(l).ok_or_else(|| err(format!("malformed line `{l}`")))?;
            if args.len() != 1 || !valid_name(args[0]) {
                return Err(err(format!("`{head}` takes exactly one net name")));
            }
            match head.to_ascii_uppercase().as_str() {
                "INPUT" => {
                    b.input(args[0]);
                }
                "OUTPUT" => {
                    if !seen_outputs.insert(args[0].to_string()) {
                        return Err(err(format!("duplicate OUTPUT `{}`", args[0])));
                    }
                    b.output(args[0]);
                }
                other => return Err(err(format!("unknown declaration `{other}`"))),
            }
        }
    }
    build_graph(&b, Some(&gate_lines))
}

/// Canonical `.bench` text: inputs, outputs, then gates in topological
/// order. No comments or blank lines.
pub fn emit_bench(g: &CircuitGraph) -> String {
    let mut s = String::new();
    for &i in g.primary_inputs() {
        s.push_str("INPUT(");
        s.push_str(g.net_name(i));
        s.push_str(")\n");
    }
    for &o in g.primary_outputs() {
        s.push_str("OUTPUT(");
        s.push_str(g.net_name(o));
        s.push_str(")\n");
    }
    for gate in g.gates() {
        s.push_str(g.net_name(gate.output));
        s.push_str(" = ");
        s.push_str(gate.kind.bench_name());
        s.push('(');
        for (k, i) in gate.inputs.iter().enumerate() {
            if k > 0 {
                s.push_str(", ");
            }
            s.push_str(g.net_name(*i));
        }
        s.push_str(")\n");
    }
    s
}

/// Recompute a topological order of all nets with Kahn's algorithm.
///
/// A graph built through [`NetlistBuilder`] is acyclic by construction;
/// this is an independent check used after structural edits.
pub fn validate_acyclic(g: &CircuitGraph) -> Result<Vec<NetId>, NetlistError> {
    let n = g.net_count();
    let mut indeg = vec![0usize; n];
    for gate in g.gates() {
        indeg[gate.output.index()] = gate.inputs.len();
    }
    let mut ready: std::collections::VecDeque<NetId> =
        g.nets().filter(|x| indeg[x.index()] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(x) = ready.pop_front() {
        order.push(x);
        for &gi in g.fanout_gates(x) {
            let out = g.gates()[gi].output;
            // a net may feed the same gate more than once
            let times = g.gates()[gi].inputs.iter().filter(|&&i| i == x).count();
            let d = &mut indeg[out.index()];
            if *d > 0 {
                *d -= times.min(*d);
                if *d == 0 {
                    ready.push_back(out);
                }
            }
        }
    }
    if order.len() != n {
        let cycle = g
            .nets()
            .filter(|x| indeg[x.index()] > 0)
            .map(|x| g.net_name(x).to_string())
            .collect();
        return Err(NetlistError::CycleDetected { cycle });
    }
    Ok(order)
}

/// Fixed-width set of primary-input positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PiSet {
    words: Vec<u64>,
}

impl PiSet {
    pub fn empty(width: usize) -> Self {
        PiSet {
            words: vec![0; width.div_ceil(64)],
        }
    }

    pub fn insert(&mut self, pos: usize) {
        self.words[pos / 64] |= 1 << (pos % 64);
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.words[pos / 64] >> (pos % 64) & 1 == 1
    }

    pub fn union_with(&mut self, other: &PiSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn intersection_len(&self, other: &PiSet) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn union_len(&self, other: &PiSet) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones() as usize)
            .sum()
    }

    pub fn is_disjoint(&self, other: &PiSet) -> bool {
        self.intersection_len(other) == 0
    }

    pub fn is_subset(&self, other: &PiSet) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            (0..64).filter(move |b| w >> b & 1 == 1).map(move |b| wi * 64 + b)
        })
    }
}

/// Primary-input cone of every net, indexed by [`NetId`].
pub fn pi_cones(g: &CircuitGraph) -> Vec<PiSet> {
    let width = g.primary_inputs().len();
    let mut cones = vec![PiSet::empty(width); g.net_count()];
    for (pos, &pi) in g.primary_inputs().iter().enumerate() {
        cones[pi.index()].insert(pos);
    }
    for gate in g.gates() {
        let mut c = PiSet::empty(width);
        for i in &gate.inputs {
            c.union_with(&cones[i.index()]);
        }
        cones[gate.output.index()] = c;
    }
    cones
}

/// The primary inputs with a directed path to `n`, in declaration order.
pub fn input_cone(g: &CircuitGraph, n: NetId) -> Result<Vec<NetId>, NetlistError> {
    if !g.contains(n) {
        return Err(NetlistError::UnknownNet(n.to_string()));
    }
    Ok(transitive_fanin(g, n)
        .into_iter()
        .filter(|&x| g.is_input(x))
        .collect())
}

/// Every net with a path to `n`, including `n`, in ascending id order.
pub fn transitive_fanin(g: &CircuitGraph, n: NetId) -> Vec<NetId> {
    let mut seen = vec![false; g.net_count()];
    let mut stack = vec![n];
    seen[n.index()] = true;
    while let Some(x) = stack.pop() {
        if let Some(gate) = g.driving_gate(x) {
            for &i in &gate.inputs {
                if !seen[i.index()] {
                    seen[i.index()] = true;
                    stack.push(i);
                }
            }
        }
    }
    g.nets().filter(|x| seen[x.index()]).collect()
}

/// Count of each gate kind in the transitive fan-in of `n`.
pub fn cone_gate_profile(g: &CircuitGraph, n: NetId) -> BTreeMap<GateKind, usize> {
    let mut m = BTreeMap::new();
    for x in transitive_fanin(g, n) {
        if let Some(gate) = g.driving_gate(x) {
            *m.entry(gate.kind).or_insert(0) += 1;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const C17: &str = "\
# c17
INPUT(1)
INPUT(2)
INPUT(3)
INPUT(6)
INPUT(7)
OUTPUT(22)
OUTPUT(23)
10 = NAND(1, 3)
11 = NAND(3, 6)
16 = NAND(2, 11)
19 = NAND(11, 7)
22 = NAND(10, 16)
23 = NAND(16, 19)
";

    #[test]
    fn parses_c17() {
        let g = parse_bench(C17).unwrap();
        assert_eq!(g.gates().len(), 6);
        assert_eq!(g.primary_inputs().len(), 5);
        assert_eq!(g.primary_outputs().len(), 2);
        assert_eq!(g.net_count(), 11);
        assert_eq!(g.level(g.lookup("22").unwrap()), 3);
        assert_eq!(g.level(g.lookup("10").unwrap()), 1);
        assert_eq!(g.max_level(), 3);
    }

    #[test]
    fn pass_through() {
        let g = parse_bench("INPUT(a)\nOUTPUT(a)\n").unwrap();
        assert!(g.gates().is_empty());
        assert_eq!(g.primary_inputs(), g.primary_outputs());
        assert_eq!(emit_bench(&g), "INPUT(a)\nOUTPUT(a)\n");
    }

    #[test]
    fn multiple_drivers() {
        let t = "INPUT(a)\nINPUT(b)\nOUTPUT(x)\nx = AND(a,b)\nx = OR(a,b)\n";
        assert!(matches!(
            parse_bench(t),
            Err(NetlistError::MultipleDrivers { net }) if net == "x"
        ));
    }

    #[test]
    fn undriven_and_unknown() {
        let t = "INPUT(a)\nOUTPUT(x)\nx = AND(a, b)\n";
        assert!(matches!(parse_bench(t), Err(NetlistError::UndrivenNet { net }) if net == "b"));
        let g = parse_bench(C17).unwrap();
        assert!(matches!(
            input_cone(&g, NetId(99)),
            Err(NetlistError::UnknownNet(_))
        ));
    }

    #[test]
    fn self_loop_is_cycle() {
        let t = "INPUT(a)\nOUTPUT(x)\nx = AND(x, a)\n";
        assert!(matches!(
            parse_bench(t),
            Err(NetlistError::CycleDetected { .. })
        ));
    }

    #[test]
    fn longer_cycle_witness() {
        let t = "INPUT(a)\nOUTPUT(z)\nx = AND(a, z)\ny = NOT(x)\nz = BUFF(y)\n";
        match parse_bench(t) {
            Err(NetlistError::CycleDetected { cycle }) => {
                assert_eq!(cycle.first(), cycle.last());
                assert_eq!(cycle.len(), 4);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_number() {
        let t = "INPUT(a)\n\nOUTPUT(x)\nx = AND(a\n";
        assert!(matches!(parse_bench(t), Err(NetlistError::Parse { line: 4, .. })));
        let t = "INPUT(a)\nOUTPUT(x)\nx = FOO(a, a)\n";
        assert!(matches!(parse_bench(t), Err(NetlistError::Parse { line: 3, .. })));
        let t = "INPUT(a)\nOUTPUT(x)\nx = NOT(a, a)\n";
        assert!(matches!(parse_bench(t), Err(NetlistError::Parse { line: 3, .. })));
    }

    #[test]
    fn crlf_and_whitespace() {
        let t = "INPUT( a )\r\nOUTPUT(x)\r\n  x=nand( a ,a )  # trailing\r\n";
        let g = parse_bench(t).unwrap();
        assert_eq!(g.gates()[0].kind, GateKind::Nand);
        assert_eq!(g.gates()[0].inputs.len(), 2);
    }

    #[test]
    fn chain_order() {
        let t = "INPUT(a)\nOUTPUT(c)\nc = NOT(b)\nb = BUFF(a)\n";
        let g = parse_bench(t).unwrap();
        let order: Vec<&str> = validate_acyclic(&g)
            .unwrap()
            .into_iter()
            .map(|n| g.net_name(n))
            .collect();
        assert_eq!(order, ["a", "b", "c"]);
    }

    #[test]
    fn c17_topological_order_covers_all_nets() {
        let g = parse_bench(C17).unwrap();
        let order = validate_acyclic(&g).unwrap();
        assert_eq!(order.len(), g.net_count());
        let mut pos = vec![0; g.net_count()];
        for (i, n) in order.iter().enumerate() {
            pos[n.index()] = i;
        }
        for gate in g.gates() {
            for i in &gate.inputs {
                assert!(pos[i.index()] < pos[gate.output.index()]);
            }
        }
    }

    #[test]
    fn cones() {
        let g = parse_bench(C17).unwrap();
        let names = |v: Vec<NetId>| v.into_iter().map(|n| g.net_name(n).to_string()).collect::<Vec<_>>();
        let n22 = g.lookup("22").unwrap();
        assert_eq!(names(input_cone(&g, n22).unwrap()), ["1", "2", "3", "6"]);
        let n1 = g.lookup("1").unwrap();
        assert_eq!(input_cone(&g, n1).unwrap(), vec![n1]);
        let cones = pi_cones(&g);
        assert_eq!(cones[n22.index()].iter().collect::<Vec<_>>(), [0, 1, 2, 3]);
    }

    #[test]
    fn gate_eval_matches_words() {
        for kind in GateKind::ALL {
            let arity = if kind.is_unary() { 1 } else { 3 };
            for m in 0..(1u32 << arity) {
                let bits: Vec<bool> = (0..arity).map(|i| m >> i & 1 == 1).collect();
                let words = bits.iter().map(|&b| if b { !0u64 } else { 0 });
                let w = kind.eval_words(words);
                assert_eq!(w == !0, kind.eval(bits.iter().copied()), "{kind} {m}");
            }
        }
    }
}
