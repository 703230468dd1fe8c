//! Logic simulation, signal statistics and SCOAP controllability.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{CircuitGraph, GateKind, NetId};
use crate::pruning::compute_hts;

/// Default number of random vectors used to estimate signal probabilities.
pub const DEFAULT_SIM_VECTORS: usize = 50_000;
/// Default rarity threshold on `sw`.
pub const DEFAULT_TH_SW: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("vector width {got} does not match {expected} primary inputs")]
    WidthMismatch { expected: usize, got: usize },
    #[error("empty vector list")]
    Empty,
}

/// One binary assignment to the primary inputs; bit `i` drives the `i`-th
/// declared input.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SimVector {
    width: usize,
    words: Vec<u64>,
}

impl SimVector {
    pub fn zeros(width: usize) -> Self {
        SimVector {
            width,
            words: vec![0; width.div_ceil(64)],
        }
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let bits: Vec<bool> = bits.into_iter().collect();
        let mut v = SimVector::zeros(bits.len());
        for (i, b) in bits.into_iter().enumerate() {
            v.set(i, b);
        }
        v
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, b: bool) {
        assert!(i < self.width, "bit {i} out of range for width {}", self.width);
        if b {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.width).map(|i| self.get(i))
    }
}

impl fmt::Display for SimVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.bits() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid character {ch:?} at column {column}")]
pub struct BadVectorChar {
    pub column: usize,
    pub ch: char,
}

impl FromStr for SimVector {
    type Err = BadVectorChar;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut bits = Vec::with_capacity(s.len());
        for (column, ch) in s.chars().enumerate() {
            match ch {
                '0' => bits.push(false),
                '1' => bits.push(true),
                _ => return Err(BadVectorChar { column, ch }),
            }
        }
        Ok(SimVector::from_bits(bits))
    }
}

impl Serialize for SimVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SimVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Up to 64 patterns packed column-wise: `inputs[i]` bit `j` is input `i`
/// of pattern `j`. Bits outside `mask` are padding.
#[derive(Debug, Clone)]
pub struct PatternBlock {
    pub inputs: Vec<u64>,
    pub mask: u64,
}

impl PatternBlock {
    pub fn len(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.mask == 0
    }
}

/// Transpose vectors into 64-wide pattern blocks.
pub fn pack_vectors(width: usize, vectors: &[SimVector]) -> Result<Vec<PatternBlock>, SimError> {
    vectors
        .chunks(64)
        .map(|chunk| {
            let mut inputs = vec![0u64; width];
            for (j, v) in chunk.iter().enumerate() {
                if v.width() != width {
                    return Err(SimError::WidthMismatch {
                        expected: width,
                        got: v.width(),
                    });
                }
                for (i, w) in inputs.iter_mut().enumerate() {
                    *w |= (v.get(i) as u64) << j;
                }
            }
            let mask = if chunk.len() == 64 { !0 } else { (1u64 << chunk.len()) - 1 };
            Ok(PatternBlock { inputs, mask })
        })
        .collect()
}

/// Pseudo-random block `index` of the stream named by `seed`.
///
/// Blocks are generated independently, so any split of the index range
/// across workers reproduces the same patterns.
pub fn random_block(width: usize, seed: u64, index: u64, count: usize) -> PatternBlock {
    debug_assert!((1..=64).contains(&count));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let inputs = (0..width).map(|_| rng.next_u64()).collect();
    let mask = if count == 64 { !0 } else { (1u64 << count) - 1 };
    PatternBlock { inputs, mask }
}

/// Unpack a block into individual vectors.
pub fn unpack_block(block: &PatternBlock) -> Vec<SimVector> {
    (0..block.len())
        .map(|j| SimVector::from_bits(block.inputs.iter().map(|w| w >> j & 1 == 1)))
        .collect()
}

/// Bit-parallel simulation of 64 patterns; returns one word per net.
pub fn simulate_words(g: &CircuitGraph, inputs: &[u64]) -> Vec<u64> {
    assert_eq!(inputs.len(), g.primary_inputs().len());
    let mut values = vec![0u64; g.net_count()];
    for (&pi, &w) in g.primary_inputs().iter().zip(inputs) {
        values[pi.index()] = w;
    }
    for gate in g.gates() {
        let v = gate.kind.eval_words(gate.inputs.iter().map(|i| values[i.index()]));
        values[gate.output.index()] = v;
    }
    values
}

/// Scalar evaluation of one vector; returns one value per net.
pub fn evaluate(g: &CircuitGraph, v: &SimVector) -> Result<Vec<bool>, SimError> {
    let width = g.primary_inputs().len();
    if v.width() != width {
        return Err(SimError::WidthMismatch {
            expected: width,
            got: v.width(),
        });
    }
    let mut values = vec![false; g.net_count()];
    for (i, &pi) in g.primary_inputs().iter().enumerate() {
        values[pi.index()] = v.get(i);
    }
    for gate in g.gates() {
        values[gate.output.index()] = gate.kind.eval(gate.inputs.iter().map(|i| values[i.index()]));
    }
    Ok(values)
}

/// Primary-output values of one vector, in declaration order.
pub fn evaluate_outputs(g: &CircuitGraph, v: &SimVector) -> Result<Vec<bool>, SimError> {
    let values = evaluate(g, v)?;
    Ok(g.primary_outputs().iter().map(|o| values[o.index()]).collect())
}

fn accumulate(counts: &mut [u64], values: &[u64], mask: u64) {
    for (c, v) in counts.iter_mut().zip(values) {
        *c += (v & mask).count_ones() as u64;
    }
}

fn merge(mut a: Vec<u64>, b: Vec<u64>) -> Vec<u64> {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

/// Per-net count of vectors under which the net is 1.
pub fn simulate_batch(g: &CircuitGraph, vectors: &[SimVector]) -> Result<Vec<u64>, SimError> {
    if vectors.is_empty() {
        return Err(SimError::Empty);
    }
    let blocks = pack_vectors(g.primary_inputs().len(), vectors)?;
    let n = g.net_count();
    Ok(blocks
        .par_iter()
        .fold(
            || vec![0u64; n],
            |mut acc, b| {
                accumulate(&mut acc, &simulate_words(g, &b.inputs), b.mask);
                acc
            },
        )
        .reduce(|| vec![0u64; n], merge))
}

/// Per-net ones-count over `n_vectors` seeded random vectors.
pub fn random_ones_counts(g: &CircuitGraph, n_vectors: usize, seed: u64) -> Vec<u64> {
    let width = g.primary_inputs().len();
    let n = g.net_count();
    let n_blocks = n_vectors.div_ceil(64);
    (0..n_blocks)
        .into_par_iter()
        .fold(
            || vec![0u64; n],
            |mut acc, k| {
                let count = (n_vectors - k * 64).min(64);
                let b = random_block(width, seed, k as u64, count);
                accumulate(&mut acc, &simulate_words(g, &b.inputs), b.mask);
                acc
            },
        )
        .reduce(|| vec![0u64; n], merge)
}

/// Signal probability of one net.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalStats {
    /// Fraction of vectors with the net at 1.
    pub p1: f64,
    /// Rare value: the less frequent logic value (1 on a tie).
    pub rv: u8,
    /// Rarity, `min(p1, 1 - p1)`.
    pub sw: f64,
}

impl SignalStats {
    pub fn from_p1(p1: f64) -> Self {
        SignalStats {
            p1,
            rv: if p1 <= 0.5 { 1 } else { 0 },
            sw: p1.min(1.0 - p1),
        }
    }
}

pub fn estimate_signal_stats(g: &CircuitGraph, n_vectors: usize, seed: u64) -> Vec<SignalStats> {
    assert!(n_vectors >= 1, "need at least one vector");
    random_ones_counts(g, n_vectors, seed)
        .into_iter()
        .map(|c| SignalStats::from_p1(c as f64 / n_vectors as f64))
        .collect()
}

/// Internal nets whose rarity is at most `th_sw`. Primary inputs and
/// outputs are never rare.
pub fn rare_nets(g: &CircuitGraph, stats: &[SignalStats], th_sw: f64) -> Vec<NetId> {
    g.nets()
        .filter(|&n| !g.is_input(n) && !g.is_output(n))
        .filter(|n| stats[n.index()].sw <= th_sw)
        .collect()
}

/// SCOAP combinational controllability pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Controllability {
    pub cc0: u64,
    pub cc1: u64,
}

/// Goldstein's combinational controllability for every net.
///
/// Counts saturate at `u64::MAX`; the deep reconvergent multipliers in the
/// benchmark set push sums far past `u32`.
pub fn scoap_controllability(g: &CircuitGraph) -> Vec<Controllability> {
    let mut cc = vec![Controllability { cc0: 1, cc1: 1 }; g.net_count()];
    for gate in g.gates() {
        let ins: Vec<Controllability> = gate.inputs.iter().map(|i| cc[i.index()]).collect();
        let sum0 = || ins.iter().fold(0u64, |a, c| a.saturating_add(c.cc0));
        let sum1 = || ins.iter().fold(0u64, |a, c| a.saturating_add(c.cc1));
        let min0 = || ins.iter().map(|c| c.cc0).min().unwrap();
        let min1 = || ins.iter().map(|c| c.cc1).min().unwrap();
        let (c0, c1) = match gate.kind {
            GateKind::And => (min0(), sum1()),
            GateKind::Nand => (sum1(), min0()),
            GateKind::Or => (sum0(), min1()),
            GateKind::Nor => (min1(), sum0()),
            GateKind::Xor => xor_costs(&ins),
            GateKind::Xnor => {
                let (even, odd) = xor_costs(&ins);
                (odd, even)
            }
            GateKind::Not => (ins[0].cc1, ins[0].cc0),
            GateKind::Buf => (ins[0].cc0, ins[0].cc1),
        };
        cc[gate.output.index()] = Controllability {
            cc0: c0.saturating_add(1),
            cc1: c1.saturating_add(1),
        };
    }
    cc
}

/// Cheapest (even-parity, odd-parity) input assignment costs.
fn xor_costs(ins: &[Controllability]) -> (u64, u64) {
    let mut even = 0u64;
    let mut odd = u64::MAX;
    for c in ins {
        let e = even.saturating_add(c.cc0).min(odd.saturating_add(c.cc1));
        let o = even.saturating_add(c.cc1).min(odd.saturating_add(c.cc0));
        even = e;
        odd = o;
    }
    (even, odd)
}

/// Full per-net record used by pruning and reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetStats {
    pub net: NetId,
    pub p1: f64,
    pub rv: u8,
    pub sw: f64,
    pub cc0: u64,
    pub cc1: u64,
    pub hts: f64,
    pub level: u32,
}

/// Simulate, estimate probabilities and compute SCOAP for every net.
pub fn analyze_nets(g: &CircuitGraph, n_vectors: usize, seed: u64) -> Vec<NetStats> {
    let sig = estimate_signal_stats(g, n_vectors, seed);
    let cc = scoap_controllability(g);
    g.nets()
        .map(|n| {
            let s = sig[n.index()];
            let c = cc[n.index()];
            NetStats {
                net: n,
                p1: s.p1,
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

impl NetStats {
    pub fn signal(&self) -> SignalStats {
        SignalStats {
            p1: self.p1,
            rv: self.rv,
            sw: self.sw,
        }
    }
}

/// Stats dump: `net_name,level,p1,rv,sw,cc0,cc1,hts`.
pub fn stats_csv(g: &CircuitGraph, stats: &[NetStats]) -> String {
    let mut s = String::from("net_name,level,p1,rv,sw,cc0,cc1,hts\n");
    for st in stats {
        s.push_str(&format!(
            "{},{},{:.6},{},{:.6},{},{},{:.6}\n",
            g.net_name(st.net),
            st.level,
            st.p1,
            st.rv,
            st.sw,
            st.cc0,
            st.cc1,
            st.hts
        ));
    }
    s
}
