//! Reduction of the rare-net set to a small trigger-candidate set.
//!
//! Rare nets `T` go through functional pruning (drop nets whose rare value
//! is implied by a higher net's rare value), structural pruning (keep one
//! net per group of look-alike nets), a seeded random pick of `M`, and,
//! when input cones overlap heavily, Jaccard-based diversification with
//! regular nets.

use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::justify::{implies, justify, Assignment, Implication, Justification};
use crate::netlist::{cone_gate_profile, pi_cones, CircuitGraph, GateKind, NetId, PiSet};
use crate::sim::{random_block, simulate_words, NetStats};

/// Default candidate-set size.
pub const DEFAULT_M: usize = 20;
/// Default pairwise JSI threshold for diversification clusters.
pub const DEFAULT_JSI_TH: f64 = 0.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PruneError {
    #[error("no candidate nets survive pruning")]
    EmptyCandidatePool,
    #[error("threshold {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error("unknown net `{0}` in candidate set")]
    UnknownNet(String),
    #[error("candidate set is for circuit `{found}`, not `{expected}`")]
    CircuitMismatch { expected: String, found: String },
    #[error("malformed candidate set: {0}")]
    Format(String),
}

/// HT trigger susceptibility, `|cc1 - cc0| / max(cc1, cc0)`.
pub fn compute_hts(cc0: u64, cc1: u64) -> f64 {
    let hi = cc0.max(cc1);
    if hi == 0 {
        return 0.0;
    }
    cc0.abs_diff(cc1) as f64 / hi as f64
}

/// A kept net and the nets it stands in for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneGroup {
    pub representative: NetId,
    pub pruned: Vec<NetId>,
}

#[derive(Debug, Clone, Default)]
pub struct FunctionalPrune {
    /// F_pruned, ascending id.
    pub kept: Vec<NetId>,
    pub groups: Vec<PruneGroup>,
    /// Nets that can never take their rare value; dropped.
    pub unactivatable: Vec<NetId>,
    /// Queries that hit the time budget; the net in question was kept.
    pub timeouts: usize,
    /// Implication queries actually sent to the solver.
    pub solver_queries: usize,
}

const PREFILTER_BLOCKS: usize = 128;
const PREFILTER_SEED: u64 = 0x5eed_f11e;

/// Functional pruning over rare nets `t`.
///
/// Nets are visited from the highest logic level down (ties by ascending
/// id). For each surviving net `k`, every surviving rare net `r` in its
/// fan-in cone for which `k = rv(k)` forces `r = rv(r)` is discarded and
/// never revisited. Random simulation screens out most non-implications
/// before the solver is asked.
pub fn functional_prune(
    g: &CircuitGraph,
    t: &[NetId],
    stats: &[NetStats],
    timeout: Duration,
) -> FunctionalPrune {
    let mut out = FunctionalPrune::default();
    if t.is_empty() {
        return out;
    }
    let width = g.primary_inputs().len();
    let sims: Vec<Vec<u64>> = (0..PREFILTER_BLOCKS)
        .into_par_iter()
        .map(|k| simulate_words(g, &random_block(width, PREFILTER_SEED, k as u64, 64).inputs))
        .collect();
    // word with bit set where the net sits at its rare value
    let at_rare = |sim: &[u64], n: NetId| {
        let w = sim[n.index()];
        if stats[n.index()].rv == 1 {
            w
        } else {
            !w
        }
    };

    let mut in_t = vec![false; g.net_count()];
    for &n in t {
        in_t[n.index()] = true;
    }
    let mut order: Vec<NetId> = t.to_vec();
    order.sort_by_key(|&n| (std::cmp::Reverse(g.level(n)), n));

    let mut discarded = vec![false; g.net_count()];
    let mut kept = Vec::new();
    for &k in &order {
        if discarded[k.index()] {
            continue;
        }
        let rv_k = stats[k.index()].rv == 1;
        let act = Assignment::new(g, [(k, rv_k)]).expect("single requirement");
        match justify(g, &act, timeout) {
            Justification::Unsat => {
                debug!("{} can never reach its rare value; dropped", g.net_name(k));
                out.unactivatable.push(k);
                discarded[k.index()] = true;
                continue;
            }
            Justification::Timeout => {
                out.timeouts += 1;
                kept.push(k);
                continue;
            }
            Justification::Sat(_) => {}
        }
        kept.push(k);

        let cone = crate::netlist::transitive_fanin(g, k);
        let candidates: Vec<NetId> = cone
            .into_iter()
            .filter(|&r| r != k && in_t[r.index()] && !discarded[r.index()])
            .filter(|&r| {
                sims.iter()
                    .all(|sim| at_rare(sim, k) & !at_rare(sim, r) == 0)
            })
            .collect();
        out.solver_queries += candidates.len();
        let verdicts: Vec<(NetId, Implication)> = candidates
            .par_iter()
            .map(|&r| {
                let rv_r = stats[r.index()].rv == 1;
                let v = implies(g, (k, rv_k), (r, rv_r), timeout).expect("nets exist");
                (r, v)
            })
            .collect();
        let mut pruned = Vec::new();
        for (r, v) in verdicts {
            match v {
                Implication::Yes => {
                    discarded[r.index()] = true;
                    pruned.push(r);
                }
                Implication::No(_) => {}
                Implication::Timeout => {
                    out.timeouts += 1;
                    warn!(
                        "implication {} => {} timed out; keeping {}",
                        g.net_name(k),
                        g.net_name(r),
                        g.net_name(r)
                    );
                }
            }
        }
        if !pruned.is_empty() {
            out.groups.push(PruneGroup {
                representative: k,
                pruned,
            });
        }
    }
    kept.retain(|n| !discarded[n.index()]);
    kept.sort();
    out.kept = kept;
    out
}

/// Grouping key for structural pruning.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StructuralKey {
    pub level: u32,
    pub rv: u8,
    pub cc0: u64,
    pub cc1: u64,
    /// `sw` in hundredths.
    pub sw_centi: i64,
    pub cone_kinds: Vec<(GateKind, usize)>,
}

pub fn structural_key(g: &CircuitGraph, stats: &[NetStats], n: NetId) -> StructuralKey {
    let s = &stats[n.index()];
    StructuralKey {
        level: g.level(n),
        rv: s.rv,
        cc0: s.cc0,
        cc1: s.cc1,
        sw_centi: (s.sw * 100.0).round() as i64,
        cone_kinds: cone_gate_profile(g, n).into_iter().collect(),
    }
}

#[derive(Debug, Clone, Default)]
pub struct StructuralPrune {
    /// S_pruned, ascending id.
    pub kept: Vec<NetId>,
    pub groups: Vec<PruneGroup>,
}

/// Keep the smallest-id net of every group sharing a [`StructuralKey`].
pub fn structural_prune(g: &CircuitGraph, f_pruned: &[NetId], stats: &[NetStats]) -> StructuralPrune {
    let mut groups: BTreeMap<StructuralKey, Vec<NetId>> = BTreeMap::new();
    for &n in f_pruned {
        groups.entry(structural_key(g, stats, n)).or_default().push(n);
    }
    let mut out = StructuralPrune::default();
    for (_, mut nets) in groups {
        nets.sort();
        let rep = nets[0];
        out.kept.push(rep);
        if nets.len() > 1 {
            out.groups.push(PruneGroup {
                representative: rep,
                pruned: nets[1..].to_vec(),
            });
        }
    }
    out.kept.sort();
    out.groups.sort_by_key(|gr| gr.representative);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Rare,
    Regular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub net: NetId,
    pub origin: Origin,
    /// Rare value, frozen from the pruning-time statistics.
    pub rv: u8,
}

/// The trigger-candidate set `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub circuit: String,
    pub members: Vec<Candidate>,
    pub jsi_set: f64,
    pub seed: u64,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn nets(&self) -> Vec<NetId> {
        self.members.iter().map(|c| c.net).collect()
    }

    pub fn position(&self, n: NetId) -> Option<usize> {
        self.members.iter().position(|c| c.net == n)
    }

    fn normalize(&mut self, g: &CircuitGraph) {
        self.members.sort_by_key(|c| c.net);
        let cones = pi_cones(g);
        self.jsi_set = jaccard_set_with(&cones, &self.nets());
    }

    pub fn to_file(&self, g: &CircuitGraph) -> CandidateSetFile {
        CandidateSetFile {
            circuit: self.circuit.clone(),
            seed: self.seed,
            members: self
                .members
                .iter()
                .map(|c| CandidateEntry {
                    net: g.net_name(c.net).to_string(),
                    origin: c.origin,
                    rv: c.rv,
                })
                .collect(),
            jsi_set: self.jsi_set,
        }
    }

    pub fn from_file(g: &CircuitGraph, f: &CandidateSetFile) -> Result<Self, PruneError> {
        if f.circuit != g.name() {
            return Err(PruneError::CircuitMismatch {
                expected: g.name().to_string(),
                found: f.circuit.clone(),
            });
        }
        let mut members = Vec::with_capacity(f.members.len());
        for e in &f.members {
            let net = g
                .net_id(&e.net)
                .ok_or_else(|| PruneError::UnknownNet(e.net.clone()))?;
            if e.rv > 1 {
                return Err(PruneError::Format(format!("rv {} for `{}`", e.rv, e.net)));
            }
            members.push(Candidate {
                net,
                origin: e.origin,
                rv: e.rv,
            });
        }
        let mut nets: Vec<NetId> = members.iter().map(|c| c.net).collect();
        nets.sort();
        nets.dedup();
        if nets.len() != members.len() {
            return Err(PruneError::Format("duplicate member".into()));
        }
        Ok(CandidateSet {
            circuit: f.circuit.clone(),
            members,
            jsi_set: f.jsi_set,
            seed: f.seed,
        })
    }
}

/// On-disk form of a [`CandidateSet`]; nets by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSetFile {
    pub circuit: String,
    pub seed: u64,
    pub members: Vec<CandidateEntry>,
    pub jsi_set: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub net: String,
    pub origin: Origin,
    pub rv: u8,
}

/// Internal nets outside `t`, the pool regular candidates are drawn from.
pub fn regular_nets(g: &CircuitGraph, t: &[NetId]) -> Vec<NetId> {
    let mut in_t = vec![false; g.net_count()];
    for &n in t {
        in_t[n.index()] = true;
    }
    g.nets()
        .filter(|&n| !g.is_input(n) && !g.is_output(n) && !in_t[n.index()])
        .collect()
}

/// Seeded pick of regular nets, preferring ones whose cones avoid `taken`.
/// Cone-disjoint nets come first; the rest only when `allow_overlap`.
fn pick_regular(
    pool: &[NetId],
    cones: &[PiSet],
    taken: &mut PiSet,
    exclude: &[NetId],
    want: usize,
    seed: u64,
    allow_overlap: bool,
) -> Vec<NetId> {
    let mut pool: Vec<NetId> = pool.iter().copied().filter(|n| !exclude.contains(n)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let mut chosen = Vec::new();
    for &n in &pool {
        if chosen.len() == want {
            break;
        }
        if cones[n.index()].is_disjoint(taken) {
            taken.union_with(&cones[n.index()]);
            chosen.push(n);
        }
    }
    if allow_overlap {
        for &n in &pool {
            if chosen.len() == want {
                break;
            }
            if !chosen.contains(&n) {
                chosen.push(n);
            }
        }
    }
    chosen
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub set: CandidateSet,
    /// Members still missing after regular-net filling.
    pub shortfall: usize,
}

/// Uniform seeded sample of `m` nets from `s_pruned`, sorted by id.
///
/// When `s_pruned` is smaller than `m` the gap is filled with regular nets,
/// cone-disjoint ones first.
pub fn select_candidates(
    g: &CircuitGraph,
    s_pruned: &[NetId],
    t: &[NetId],
    stats: &[NetStats],
    m: usize,
    seed: u64,
) -> Result<Selection, PruneError> {
    if s_pruned.is_empty() {
        return Err(PruneError::EmptyCandidatePool);
    }
    let mut pool = s_pruned.to_vec();
    pool.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<NetId> = pool.choose_multiple(&mut rng, m.min(pool.len())).copied().collect();
    picked.sort();
    let mut members: Vec<Candidate> = picked
        .iter()
        .map(|&n| Candidate {
            net: n,
            origin: Origin::Rare,
            rv: stats[n.index()].rv,
        })
        .collect();

    let mut shortfall = 0;
    if members.len() < m {
        let want = m - members.len();
        let cones = pi_cones(g);
        let mut taken = PiSet::empty(g.primary_inputs().len());
        for c in &members {
            taken.union_with(&cones[c.net.index()]);
        }
        let extra = pick_regular(
            &regular_nets(g, t),
            &cones,
            &mut taken,
            &picked,
            want,
            seed ^ 0x9e37_79b9_7f4a_7c15,
            true,
        );
        shortfall = want - extra.len();
        warn!(
            "{}: only {} pruned nets for |M| = {}; filled {} with regular nets{}",
            g.name(),
            pool.len(),
            m,
            extra.len(),
            if shortfall > 0 {
                format!(", {shortfall} short")
            } else {
                String::new()
            }
        );
        members.extend(extra.into_iter().map(|n| Candidate {
            net: n,
            origin: Origin::Regular,
            rv: stats[n.index()].rv,
        }));
    }
    let mut set = CandidateSet {
        circuit: g.name().to_string(),
        members,
        jsi_set: 0.0,
        seed,
    };
    set.normalize(g);
    Ok(Selection { set, shortfall })
}

/// Jaccard index of two PI sets; 0 when both are empty.
pub fn jaccard_index(a: &PiSet, b: &PiSet) -> f64 {
    let u = a.union_len(b);
    if u == 0 {
        0.0
    } else {
        a.intersection_len(b) as f64 / u as f64
    }
}

/// Jaccard similarity of the primary-input cones of `a` and `b`.
pub fn jaccard_pair(g: &CircuitGraph, a: NetId, b: NetId) -> f64 {
    let cone = |n: NetId| {
        let mut s = PiSet::empty(g.primary_inputs().len());
        for pi in crate::netlist::input_cone(g, n).expect("net exists") {
            s.insert(g.input_position(pi).unwrap());
        }
        s
    };
    jaccard_index(&cone(a), &cone(b))
}

/// Mean pairwise JSI over `nets`; 0 for fewer than two nets.
pub fn jaccard_set(g: &CircuitGraph, nets: &[NetId]) -> f64 {
    jaccard_set_with(&pi_cones(g), nets)
}

/// [`jaccard_set`] with precomputed cones.
pub fn jaccard_set_with(cones: &[PiSet], nets: &[NetId]) -> f64 {
    if nets.len() < 2 {
        debug!("JSI of {} net(s) defined as 0", nets.len());
        return 0.0;
    }
    let sum: f64 = (0..nets.len())
        .into_par_iter()
        .map(|i| {
            let a = &cones[nets[i].index()];
            nets[i + 1..]
                .iter()
                .map(|b| jaccard_index(a, &cones[b.index()]))
                .sum::<f64>()
        })
        .sum();
    let pairs = nets.len() * (nets.len() - 1) / 2;
    sum / pairs as f64
}

#[derive(Debug, Clone)]
pub struct Diversification {
    pub set: CandidateSet,
    /// Member clusters, each listed with its kept net first.
    pub clusters: Vec<Vec<NetId>>,
    /// Removed members.
    pub removed: Vec<NetId>,
    /// Regular nets brought in.
    pub added: Vec<NetId>,
    /// Replacements that share inputs with the set, used once no
    /// cone-disjoint regular net was left.
    pub overlapping: usize,
    /// Removed members left unreplaced.
    pub shortfall: usize,
    pub jsi_before: f64,
    pub jsi_after: f64,
}

/// Break up clusters of members with overlapping input cones.
///
/// Members are clustered greedily (each unclustered member absorbs every
/// later unclustered member with pairwise JSI at or above `jsi_th`). Each
/// cluster keeps its member with the smallest cone; the rest are replaced
/// by regular nets whose cones are disjoint from every remaining member.
/// Once no such net is left, the regular net with the lowest worst-case
/// JSI against the current set fills the slot, provided that JSI stays
/// below `jsi_th`.
pub fn diversify_candidates(
    g: &CircuitGraph,
    cs: &CandidateSet,
    t: &[NetId],
    stats: &[NetStats],
    jsi_th: f64,
    seed: u64,
) -> Result<Diversification, PruneError> {
    if !(jsi_th > 0.0 && jsi_th <= 1.0) {
        return Err(PruneError::BadThreshold(jsi_th));
    }
    let cones = pi_cones(g);
    let nets = cs.nets();
    let jsi_before = jaccard_set_with(&cones, &nets);

    let mut cluster_of = vec![usize::MAX; nets.len()];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..nets.len() {
        if cluster_of[i] != usize::MAX {
            continue;
        }
        let id = clusters.len();
        cluster_of[i] = id;
        let mut cl = vec![i];
        for j in i + 1..nets.len() {
            if cluster_of[j] == usize::MAX
                && jaccard_index(&cones[nets[i].index()], &cones[nets[j].index()]) >= jsi_th
            {
                cluster_of[j] = id;
                cl.push(j);
            }
        }
        clusters.push(cl);
    }

    let mut keep = vec![false; nets.len()];
    let mut cluster_nets = Vec::new();
    for cl in &clusters {
        let &best = cl
            .iter()
            .min_by_key(|&&i| (cones[nets[i].index()].len(), nets[i]))
            .unwrap();
        keep[best] = true;
        let mut listed = vec![nets[best]];
        listed.extend(cl.iter().filter(|&&i| i != best).map(|&i| nets[i]));
        cluster_nets.push(listed);
    }
    let removed: Vec<NetId> = (0..nets.len()).filter(|&i| !keep[i]).map(|i| nets[i]).collect();
    if removed.is_empty() {
        return Ok(Diversification {
            set: cs.clone(),
            clusters: cluster_nets,
            removed,
            added: Vec::new(),
            overlapping: 0,
            shortfall: 0,
            jsi_before,
            jsi_after: jsi_before,
        });
    }

    let mut members: Vec<Candidate> = cs
        .members
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(c, _)| *c)
        .collect();
    let mut taken = PiSet::empty(g.primary_inputs().len());
    for c in &members {
        taken.union_with(&cones[c.net.index()]);
    }
    let added = pick_regular(
        &regular_nets(g, t),
        &cones,
        &mut taken,
        &nets,
        removed.len(),
        seed,
        false,
    );
    let mut added = added;
    let disjoint = added.len();
    if disjoint < removed.len() {
        warn!(
            "{}: no cone-disjoint regular net for {} of {} removed candidates; using least-overlapping ones",
            g.name(),
            removed.len() - disjoint,
            removed.len()
        );
        let mut current: Vec<NetId> = members.iter().map(|c| c.net).chain(added.iter().copied()).collect();
        let mut pool: Vec<NetId> = regular_nets(g, t)
            .into_iter()
            .filter(|n| !nets.contains(n) && !added.contains(n))
            .collect();
        pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x0d15_7a11));
        while added.len() < removed.len() {
            let worst = |n: NetId| {
                current
                    .iter()
                    .map(|m| jaccard_index(&cones[n.index()], &cones[m.index()]))
                    .fold(0.0, f64::max)
            };
            let best = pool
                .iter()
                .enumerate()
                .map(|(k, &n)| (k, worst(n)))
                .filter(|&(_, w)| w < jsi_th)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            let Some((k, _)) = best else { break };
            let n = pool.swap_remove(k);
            added.push(n);
            current.push(n);
        }
    }
    let overlapping = added.len() - disjoint;
    let shortfall = removed.len() - added.len();
    if shortfall > 0 {
        warn!(
            "{}: {} of {} removed candidates left unreplaced",
            g.name(),
            shortfall,
            removed.len()
        );
    }
    members.extend(added.iter().map(|&n| Candidate {
        net: n,
        origin: Origin::Regular,
        rv: stats[n.index()].rv,
    }));
    let mut set = CandidateSet {
        circuit: cs.circuit.clone(),
        members,
        jsi_set: 0.0,
        seed: cs.seed,
    };
    set.normalize(g);
    info!(
        "{}: replaced {} of {} candidates, JSI {:.3} -> {:.3}",
        g.name(),
        added.len(),
        nets.len(),
        jsi_before,
        set.jsi_set
    );
    let jsi_after = set.jsi_set;
    Ok(Diversification {
        set,
        clusters: cluster_nets,
        removed,
        added,
        overlapping,
        shortfall,
        jsi_before,
        jsi_after,
    })
}

/// Named form of a [`PruneGroup`] for reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedGroup {
    pub representative: String,
    pub pruned: Vec<String>,
}

/// Summary of one pruning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub circuit: String,
    pub t_count: usize,
    pub f_pruned_count: usize,
    pub s_pruned_count: usize,
    pub functional_groups: Vec<NamedGroup>,
    pub structural_groups: Vec<NamedGroup>,
    pub unactivatable: Vec<String>,
    pub justification_timeouts: usize,
    pub jsi_t: f64,
    pub jsi_before: f64,
    pub jsi_after: Option<f64>,
    pub replaced: Vec<String>,
    pub added: Vec<String>,
    /// S_pruned within F_pruned within T, checked after the run.
    pub chain_inclusion: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct PruneConfig {
    pub th_sw: f64,
    pub m: usize,
    pub jsi_th: f64,
    pub timeout: Duration,
    pub seed: u64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            th_sw: crate::sim::DEFAULT_TH_SW,
            m: DEFAULT_M,
            jsi_th: DEFAULT_JSI_TH,
            timeout: crate::justify::DEFAULT_TIMEOUT,
            seed: 0,
        }
    }
}

/// Every stage of one pruning run.
#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub t: Vec<NetId>,
    pub functional: FunctionalPrune,
    pub structural: StructuralPrune,
    pub candidates: CandidateSet,
    pub report: PruneReport,
}

fn is_sorted_subset(a: &[NetId], b: &[NetId]) -> bool {
    let set: std::collections::HashSet<_> = b.iter().collect();
    a.iter().all(|x| set.contains(x))
}

/// Rare-net filter, functional and structural pruning, then selection.
pub fn prune_pipeline(
    g: &CircuitGraph,
    stats: &[NetStats],
    cfg: &PruneConfig,
) -> Result<PruneOutcome, PruneError> {
    let signal: Vec<_> = stats.iter().map(|s| s.signal()).collect();
    let t = crate::sim::rare_nets(g, &signal, cfg.th_sw);
    if t.is_empty() {
        return Err(PruneError::EmptyCandidatePool);
    }
    let functional = functional_prune(g, &t, stats, cfg.timeout);
    let structural = structural_prune(g, &functional.kept, stats);
    let sel = select_candidates(g, &structural.kept, &t, stats, cfg.m, cfg.seed)?;

    let names = |v: &[NetId]| v.iter().map(|&n| g.net_name(n).to_string()).collect::<Vec<_>>();
    let named = |gr: &PruneGroup| NamedGroup {
        representative: g.net_name(gr.representative).to_string(),
        pruned: names(&gr.pruned),
    };
    let cones = pi_cones(g);
    let report = PruneReport {
        circuit: g.name().to_string(),
        t_count: t.len(),
        f_pruned_count: functional.kept.len(),
        s_pruned_count: structural.kept.len(),
        functional_groups: functional.groups.iter().map(named).collect(),
        structural_groups: structural.groups.iter().map(named).collect(),
        unactivatable: names(&functional.unactivatable),
        justification_timeouts: functional.timeouts,
        jsi_t: jaccard_set_with(&cones, &t),
        jsi_before: sel.set.jsi_set,
        jsi_after: None,
        replaced: Vec::new(),
        added: Vec::new(),
        chain_inclusion: is_sorted_subset(&structural.kept, &functional.kept)
            && is_sorted_subset(&functional.kept, &t),
    };
    Ok(PruneOutcome {
        t,
        functional,
        structural,
        candidates: sel.set,
        report,
    })
}

impl PruneOutcome {
    /// Apply diversification and record it in the report.
    pub fn diversify(
        &mut self,
        g: &CircuitGraph,
        stats: &[NetStats],
        jsi_th: f64,
        seed: u64,
    ) -> Result<Diversification, PruneError> {
        let d = diversify_candidates(g, &self.candidates, &self.t, stats, jsi_th, seed)?;
        self.report.jsi_after = Some(d.jsi_after);
        self.report.replaced = d.removed.iter().map(|&n| g.net_name(n).to_string()).collect();
        self.report.added = d.added.iter().map(|&n| g.net_name(n).to_string()).collect();
        self.candidates = d.set.clone();
        Ok(d)
    }
}

/// Rare members grouped by representative, for quick lookups.
pub fn representative_map(groups: &[PruneGroup]) -> HashMap<NetId, NetId> {
    let mut m = HashMap::new();
    for gr in groups {
        for &p in &gr.pruned {
            m.insert(p, gr.representative);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::parse_bench;
    use crate::sim::{evaluate, scoap_controllability, SimVector};

    /// Exact statistics by enumerating every input vector.
    fn exact_stats(g: &CircuitGraph) -> Vec<NetStats> {
        let w = g.primary_inputs().len();
        let mut ones = vec![0u64; g.net_count()];
        for x in 0..1u64 << w {
            let v = SimVector::from_bits((0..w).map(|i| x >> i & 1 == 1));
            for (c, b) in ones.iter_mut().zip(evaluate(g, &v).unwrap()) {
                *c += b as u64;
            }
        }
        let cc = scoap_controllability(g);
        g.nets()
            .map(|n| {
                let p1 = ones[n.index()] as f64 / (1u64 << w) as f64;
                let s = crate::sim::SignalStats::from_p1(p1);
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

    fn two_paths() -> CircuitGraph {
        parse_bench(
            "INPUT(I0)\nINPUT(I1)\nINPUT(I2)\nINPUT(I3)\nOUTPUT(O)\n\
             a = AND(I0, I1)\nb = BUFF(a)\no = OR(I2, I3)\nn = NOT(o)\nK = AND(b, n)\nO = NOT(K)\n",
        )
        .unwrap()
    }

    #[test]
    fn hts_matches_table_row() {
        assert!((compute_hts(11, 3) - 8.0 / 11.0).abs() < 1e-12);
        assert!((compute_hts(1, 4) - 0.75).abs() < 1e-12);
        assert_eq!(compute_hts(4, 1), compute_hts(1, 4));
        assert_eq!(compute_hts(5, 5), 0.0);
    }

    #[test]
    fn both_rare_paths_collapse_into_k() {
        let g = two_paths();
        let stats = exact_stats(&g);
        let t = crate::sim::rare_nets(&g, &stats.iter().map(|s| s.signal()).collect::<Vec<_>>(), 0.3);
        let names: Vec<&str> = t.iter().map(|&n| g.net_name(n)).collect();
        assert_eq!(names, ["a", "b", "o", "n", "K"]);
        let f = functional_prune(&g, &t, &stats, Duration::from_secs(2));
        assert_eq!(f.kept, vec![g.lookup("K").unwrap()]);
        assert_eq!(f.groups.len(), 1);
        assert_eq!(f.groups[0].pruned.len(), 4);
        assert!(f.unactivatable.is_empty());
    }

    #[test]
    fn stuck_net_is_dropped_not_representative() {
        // z = AND(a, NOT a) never reaches 1
        let g = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\nna = NOT(a)\nz = AND(a, na)\nw = AND(z, b)\ny = OR(w, b)\n").unwrap();
        let mut stats = exact_stats(&g);
        let z = g.lookup("z").unwrap();
        let w = g.lookup("w").unwrap();
        stats[z.index()].rv = 1;
        stats[w.index()].rv = 1;
        let f = functional_prune(&g, &[z, w], &stats, Duration::from_secs(2));
        assert!(f.kept.is_empty());
        assert_eq!(f.unactivatable, vec![w, z]);
    }

    #[test]
    fn mirrored_copies_group_structurally() {
        let g = parse_bench(
            "INPUT(a)\nINPUT(b)\nINPUT(c)\nINPUT(d)\nOUTPUT(y)\n\
             x1 = AND(a, b)\nx2 = AND(c, d)\nx3 = OR(a, c)\ny = XOR(x1, x2, x3)\n",
        )
        .unwrap();
        let stats = exact_stats(&g);
        let ids: Vec<NetId> = ["x1", "x2", "x3"].iter().map(|n| g.lookup(n).unwrap()).collect();
        let s = structural_prune(&g, &ids, &stats);
        assert_eq!(s.kept, vec![ids[0], ids[2]]);
        assert_eq!(s.groups, vec![PruneGroup { representative: ids[0], pruned: vec![ids[1]] }]);
    }

    #[test]
    fn selection_is_seeded_and_sorted() {
        let g = crate::netlist::parse_bench(&chain_text(30)).unwrap();
        let stats = crate::sim::analyze_nets(&g, 4096, 0);
        let pool: Vec<NetId> = g.nets().filter(|&n| !g.is_input(n) && !g.is_output(n)).collect();
        let a = select_candidates(&g, &pool, &pool, &stats, 8, 5).unwrap();
        let b = select_candidates(&g, &pool, &pool, &stats, 8, 5).unwrap();
        assert_eq!(a.set, b.set);
        assert_eq!(a.set.len(), 8);
        assert!(a.set.nets().windows(2).all(|w| w[0] < w[1]));
        let all = select_candidates(&g, &pool[..8], &pool, &stats, 8, 1).unwrap();
        assert_eq!(all.set.nets(), pool[..8].to_vec());
        assert!(select_candidates(&g, &[], &pool, &stats, 8, 1).is_err());
    }

    /// Independent AND pairs over fresh inputs feeding one wide OR.
    fn chain_text(n: usize) -> String {
        let mut s = String::new();
        for i in 0..2 * n {
            s.push_str(&format!("INPUT(i{i})\n"));
        }
        s.push_str("OUTPUT(y)\n");
        for i in 0..n {
            s.push_str(&format!("g{i} = AND(i{}, i{})\n", 2 * i, 2 * i + 1));
        }
        let ins: Vec<String> = (0..n).map(|i| format!("g{i}")).collect();
        s.push_str(&format!("y = OR({})\n", ins.join(", ")));
        s
    }

    #[test]
    fn jaccard_cases() {
        let mut a = PiSet::empty(4);
        let mut b = PiSet::empty(4);
        for i in [0, 1, 2] {
            a.insert(i);
        }
        for i in [1, 2, 3] {
            b.insert(i);
        }
        assert_eq!(jaccard_index(&a, &b), 0.5);
        assert_eq!(jaccard_index(&a, &a), 1.0);
        let g = two_paths();
        let (an, on) = (g.lookup("a").unwrap(), g.lookup("o").unwrap());
        assert_eq!(jaccard_pair(&g, an, on), 0.0);
        assert_eq!(jaccard_pair(&g, an, g.lookup("b").unwrap()), 1.0);
        // pairs (a,b)=1, (a,o)=0, (b,o)=0
        assert!((jaccard_set(&g, &[an, g.lookup("b").unwrap(), on]) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(jaccard_set(&g, &[an]), 0.0);
    }

    fn set_of(g: &CircuitGraph, stats: &[NetStats], names: &[&str]) -> CandidateSet {
        let mut cs = CandidateSet {
            circuit: g.name().into(),
            members: names
                .iter()
                .map(|n| {
                    let net = g.lookup(n).unwrap();
                    Candidate { net, origin: Origin::Rare, rv: stats[net.index()].rv }
                })
                .collect(),
            jsi_set: 0.0,
            seed: 0,
        };
        cs.normalize(g);
        cs
    }

    #[test]
    fn identical_cones_lose_one_member() {
        let g = parse_bench(
            "INPUT(a)\nINPUT(b)\nINPUT(c)\nINPUT(d)\nINPUT(e)\nINPUT(f)\nOUTPUT(y)\n\
             p = AND(a, b)\nq = NOR(a, b)\nr = AND(c, d)\ns = OR(e, f)\nu = AND(p, r)\ny = XOR(q, u, s)\n",
        )
        .unwrap();
        let stats = exact_stats(&g);
        let cs = set_of(&g, &stats, &["p", "q", "r"]);
        let t = cs.nets();
        let d = diversify_candidates(&g, &cs, &t, &stats, 1.0, 3).unwrap();
        assert_eq!(d.removed, vec![g.lookup("q").unwrap()]);
        assert_eq!(d.added, vec![g.lookup("s").unwrap()]);
        assert_eq!(d.set.len(), 3);
        let cones = pi_cones(&g);
        for m in d.set.nets().iter().filter(|&&n| n != d.added[0]) {
            assert!(cones[m.index()].is_disjoint(&cones[d.added[0].index()]));
        }
        assert!(d.jsi_after < d.jsi_before);
    }

    #[test]
    fn diverse_set_is_left_alone() {
        let g = crate::netlist::parse_bench(&chain_text(6)).unwrap();
        let stats = crate::sim::analyze_nets(&g, 4096, 0);
        let cs = set_of(&g, &stats, &["g0", "g1", "g2"]);
        let d = diversify_candidates(&g, &cs, &cs.nets(), &stats, 0.8, 0).unwrap();
        assert_eq!(d.set, cs);
        assert!(d.removed.is_empty());
        assert!(diversify_candidates(&g, &cs, &cs.nets(), &stats, 0.0, 0).is_err());
    }

    #[test]
    fn candidate_file_round_trip() {
        let g = two_paths();
        let stats = exact_stats(&g);
        let cs = set_of(&g, &stats, &["K", "a"]);
        let back = CandidateSet::from_file(&g, &cs.to_file(&g)).unwrap();
        assert_eq!(back, cs);
    }
}
