//! Test-vector detectors and their Q-coverage over a candidate set.
//!
//! A detector is a set of test vectors. Before training, every vector is
//! simulated once and each k-subset of candidates it drives to their rare
//! values is recorded. A detection query during training is then a hash
//! lookup instead of a re-simulation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::CircuitGraph;
use crate::pruning::CandidateSet;
use crate::sim::{pack_vectors, random_block, simulate_words, unpack_block, SimError, SimVector};

/// Trigger width used throughout: five nets per trigger.
pub const TRIGGER_ARITY: usize = 5;
/// Largest candidate set a trigger mask can index.
pub const MAX_CANDIDATES: usize = 64;
/// Default size of the harness's random detector.
pub const DEFAULT_RANDOM_VECTORS: usize = 10_000;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: expected {expected} bits, found {got}")]
    WidthMismatch {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: invalid character {ch:?}")]
    BadCharacter { line: usize, ch: char },
    #[error("trigger index {index} out of range for {m} candidates")]
    IndexOutOfRange { index: usize, m: usize },
    #[error("trigger needs {expected} distinct indices, got {got}")]
    BadArity { expected: usize, got: usize },
    #[error("candidate set of {0} nets exceeds the supported maximum of 64")]
    TooManyCandidates(usize),
    #[error("profile does not match the candidate set")]
    CandidateMismatch,
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum VectorSource {
    File { path: PathBuf },
    Random { count: usize, seed: u64 },
    Combined { parts: Vec<String> },
}

/// A named detector: a list of input vectors for one circuit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestVectorSet {
    pub name: String,
    pub vectors: Vec<SimVector>,
    pub source: VectorSource,
}

impl TestVectorSet {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// One vector per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for v in &self.vectors {
            s.push_str(&v.to_string());
            s.push('\n');
        }
        s
    }

    /// Concatenation of several sets, in order.
    pub fn combined(name: impl Into<String>, sets: &[&TestVectorSet]) -> Self {
        TestVectorSet {
            name: name.into(),
            vectors: sets.iter().flat_map(|s| s.vectors.iter().cloned()).collect(),
            source: VectorSource::Combined {
                parts: sets.iter().map(|s| s.name.clone()).collect(),
            },
        }
    }
}

/// Parse vector text: one `0`/`1` string per line, bit `i` for the `i`-th
/// declared input. Blank lines and `#` comments are skipped.
pub fn parse_vectors(
    text: &str,
    width: usize,
    name: &str,
    source: VectorSource,
) -> Result<TestVectorSet, DetectorError> {
    let mut vectors = Vec::new();
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
        if let Some(ch) = l.chars().find(|&c| c != '0' && c != '1') {
            return Err(DetectorError::BadCharacter { line, ch });
        }
        if l.len() != width {
            return Err(DetectorError::WidthMismatch {
                line,
                expected: width,
                got: l.len(),
            });
        }
        vectors.push(l.parse().expect("checked characters"));
    }
    Ok(TestVectorSet {
        name: name.to_string(),
        vectors,
        source,
    })
}

/// Load a vector file for circuit `g`; the detector is named after the
/// file stem.
pub fn load_vectors(path: &Path, g: &CircuitGraph) -> Result<TestVectorSet, DetectorError> {
    let text = std::fs::read_to_string(path).map_err(|source| DetectorError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "EXT".into());
    parse_vectors(
        &text,
        g.primary_inputs().len(),
        &name,
        VectorSource::File {
            path: path.to_path_buf(),
        },
    )
}

/// `n` uniform random vectors, reproducible from `seed`; `n = 0` gives an
/// empty set.
pub fn gen_random_vectors(g: &CircuitGraph, n: usize, seed: u64) -> TestVectorSet {
    let width = g.primary_inputs().len();
    let vectors = (0..n.div_ceil(64))
        .flat_map(|k| unpack_block(&random_block(width, seed, k as u64, (n - k * 64).min(64))))
        .collect();
    TestVectorSet {
        name: "RANDOM".into(),
        vectors,
        source: VectorSource::Random { count: n, seed },
    }
}

/// A set of trigger-candidate indices, stored as a bit mask over `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QuinTrigger(u64);

impl QuinTrigger {
    pub fn from_indices(indices: &[usize], m: usize, arity: usize) -> Result<Self, DetectorError> {
        let mut mask = 0u64;
        for &i in indices {
            if i >= m || i >= MAX_CANDIDATES {
                return Err(DetectorError::IndexOutOfRange { index: i, m });
            }
            mask |= 1 << i;
        }
        if mask.count_ones() as usize != arity || indices.len() != arity {
            return Err(DetectorError::BadArity {
                expected: arity,
                got: mask.count_ones() as usize,
            });
        }
        Ok(QuinTrigger(mask))
    }

    pub fn from_mask(mask: u64) -> Self {
        QuinTrigger(mask)
    }

    pub fn mask(self) -> u64 {
        self.0
    }

    pub fn arity(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Strictly increasing member indices.
    pub fn indices(self) -> Vec<usize> {
        (0..64).filter(|b| self.0 >> b & 1 == 1).collect()
    }
}

impl fmt::Display for QuinTrigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.indices())
    }
}

/// Call `f` with every `k`-bit sub-mask of `mask`.
pub fn for_each_subset(mask: u64, k: usize, mut f: impl FnMut(u64)) {
    let bits: Vec<u32> = (0..64).filter(|b| mask >> b & 1 == 1).collect();
    let n = bits.len();
    if k > n {
        return;
    }
    if k == 0 {
        f(0);
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(idx.iter().fold(0u64, |m, &i| m | 1 << bits[i]));
        // advance to the next combination in lexicographic order
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Binomial coefficient.
pub fn choose(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

/// Precomputed Q-coverage of one detector over one candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorProfile {
    pub detector: String,
    pub circuit: String,
    /// Candidate nets, by name, in member order.
    pub m_ref: Vec<String>,
    pub arity: usize,
    pub vector_count: usize,
    /// Each covered trigger with the index of the first vector firing it;
    /// `None` only for synthetic profiles.
    coverage: HashMap<QuinTrigger, Option<u32>>,
}

impl DetectorProfile {
    pub fn q_count(&self) -> usize {
        self.coverage.len()
    }

    pub fn m(&self) -> usize {
        self.m_ref.len()
    }

    pub fn contains(&self, qt: QuinTrigger) -> bool {
        self.coverage.contains_key(&qt)
    }

    pub fn witness(&self, qt: QuinTrigger) -> Option<u32> {
        self.coverage.get(&qt).copied().flatten()
    }

    /// Covered triggers in ascending mask order.
    pub fn quins(&self) -> Vec<QuinTrigger> {
        let mut v: Vec<_> = self.coverage.keys().copied().collect();
        v.sort();
        v
    }

    /// Profile covering every `arity`-subset of the candidates, with no
    /// witnesses. Models a detector that catches every trigger.
    pub fn all_covering(name: &str, g: &CircuitGraph, cs: &CandidateSet, arity: usize) -> Self {
        let m = cs.len();
        let full = if m == 64 { !0 } else { (1u64 << m) - 1 };
        let mut coverage = HashMap::new();
        for_each_subset(full, arity, |q| {
            coverage.insert(QuinTrigger(q), None);
        });
        DetectorProfile {
            detector: name.to_string(),
            circuit: cs.circuit.clone(),
            m_ref: member_names(g, cs),
            arity,
            vector_count: 0,
            coverage,
        }
    }

    /// Union of profiles over the same candidate set. Witness indices are
    /// offset as if the underlying vector sets were concatenated in order.
    pub fn merged(name: &str, parts: &[&DetectorProfile]) -> Result<Self, DetectorError> {
        let first = parts.first().ok_or(DetectorError::CandidateMismatch)?;
        let mut coverage: HashMap<QuinTrigger, Option<u32>> = HashMap::new();
        let mut offset = 0u32;
        for p in parts {
            if p.m_ref != first.m_ref || p.arity != first.arity {
                return Err(DetectorError::CandidateMismatch);
            }
            for (&q, &w) in &p.coverage {
                let w = w.map(|i| i + offset);
                coverage
                    .entry(q)
                    .and_modify(|e| {
                        if let (Some(a), Some(b)) = (*e, w) {
                            *e = Some(a.min(b));
                        }
                    })
                    .or_insert(w);
            }
            offset += p.vector_count as u32;
        }
        Ok(DetectorProfile {
            detector: name.to_string(),
            circuit: first.circuit.clone(),
            m_ref: first.m_ref.clone(),
            arity: first.arity,
            vector_count: offset as usize,
            coverage,
        })
    }

    pub fn to_file(&self) -> DetectorProfileFile {
        let quins = self.quins();
        DetectorProfileFile {
            detector: self.detector.clone(),
            circuit: self.circuit.clone(),
            m_ref: self.m_ref.clone(),
            arity: self.arity,
            vector_count: self.vector_count,
            witnesses: quins.iter().map(|q| self.coverage[q]).collect(),
            quins: quins.iter().map(|q| q.indices()).collect(),
        }
    }

    pub fn from_file(f: &DetectorProfileFile) -> Result<Self, DetectorError> {
        let m = f.m_ref.len();
        if f.witnesses.len() != f.quins.len() {
            return Err(DetectorError::CandidateMismatch);
        }
        let mut coverage = HashMap::with_capacity(f.quins.len());
        for (q, w) in f.quins.iter().zip(&f.witnesses) {
            coverage.insert(QuinTrigger::from_indices(q, m, f.arity)?, *w);
        }
        Ok(DetectorProfile {
            detector: f.detector.clone(),
            circuit: f.circuit.clone(),
            m_ref: f.m_ref.clone(),
            arity: f.arity,
            vector_count: f.vector_count,
            coverage,
        })
    }
}

/// On-disk form of a [`DetectorProfile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorProfileFile {
    pub detector: String,
    pub circuit: String,
    pub m_ref: Vec<String>,
    pub arity: usize,
    pub vector_count: usize,
    pub quins: Vec<Vec<usize>>,
    pub witnesses: Vec<Option<u32>>,
}

fn member_names(g: &CircuitGraph, cs: &CandidateSet) -> Vec<String> {
    cs.members.iter().map(|c| g.net_name(c.net).to_string()).collect()
}

/// Per vector, the candidates it drives to their rare values, as a mask.
pub fn activation_masks(
    g: &CircuitGraph,
    vectors: &[SimVector],
    cs: &CandidateSet,
) -> Result<Vec<u64>, DetectorError> {
    if cs.len() > MAX_CANDIDATES {
        return Err(DetectorError::TooManyCandidates(cs.len()));
    }
    let blocks = pack_vectors(g.primary_inputs().len(), vectors)?;
    Ok(blocks
        .par_iter()
        .flat_map_iter(|b| {
            let vals = simulate_words(g, &b.inputs);
            let rare: Vec<u64> = cs
                .members
                .iter()
                .map(|c| {
                    let w = vals[c.net.index()];
                    if c.rv == 1 {
                        w
                    } else {
                        !w
                    }
                })
                .collect();
            (0..b.len()).map(move |j| {
                rare.iter()
                    .enumerate()
                    .fold(0u64, |m, (i, w)| m | ((w >> j) & 1) << i)
            })
        })
        .collect())
}

/// Q-coverage of `tvs` over `cs`: every `arity`-subset of candidates some
/// vector drives to rare values at once, with its first witness.
pub fn build_qcoverage(
    g: &CircuitGraph,
    tvs: &TestVectorSet,
    cs: &CandidateSet,
    arity: usize,
) -> Result<DetectorProfile, DetectorError> {
    let masks = if tvs.is_empty() {
        Vec::new()
    } else {
        activation_masks(g, &tvs.vectors, cs)?
    };
    // first vector for each distinct activation pattern
    let mut first: BTreeMap<u64, u32> = BTreeMap::new();
    for (i, &a) in masks.iter().enumerate() {
        if a.count_ones() as usize >= arity {
            first.entry(a).or_insert(i as u32);
        }
    }
    let coverage = first
        .into_par_iter()
        .fold(HashMap::new, |mut acc: HashMap<QuinTrigger, Option<u32>>, (a, idx)| {
            for_each_subset(a, arity, |q| {
                acc.entry(QuinTrigger(q))
                    .and_modify(|w| *w = Some(w.unwrap().min(idx)))
                    .or_insert(Some(idx));
            });
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (q, w) in b {
                a.entry(q)
                    .and_modify(|x| *x = Some(x.unwrap().min(w.unwrap())))
                    .or_insert(w);
            }
            a
        });
    Ok(DetectorProfile {
        detector: tvs.name.clone(),
        circuit: cs.circuit.clone(),
        m_ref: member_names(g, cs),
        arity,
        vector_count: tvs.len(),
        coverage,
    })
}

/// Whether `profile` catches trigger `qt`.
pub fn detects(profile: &DetectorProfile, qt: QuinTrigger) -> Result<bool, DetectorError> {
    let m = profile.m();
    if let Some(&bad) = qt.indices().iter().find(|&&i| i >= m) {
        return Err(DetectorError::IndexOutOfRange { index: bad, m });
    }
    if qt.arity() != profile.arity {
        return Err(DetectorError::BadArity {
            expected: profile.arity,
            got: qt.arity(),
        });
    }
    Ok(profile.contains(qt))
}

/// Q-coverage counts, one row per circuit, one column per detector;
/// `None` renders as `N/A`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QCoverageTable {
    pub detectors: Vec<String>,
    pub rows: Vec<(String, Vec<Option<usize>>)>,
}

impl QCoverageTable {
    pub fn new(detectors: Vec<String>) -> Self {
        QCoverageTable {
            detectors,
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("circuit");
        for d in &self.detectors {
            s.push(',');
            s.push_str(d);
        }
        s.push('\n');
        for (c, cells) in &self.rows {
            s.push_str(c);
            for cell in cells {
                s.push(',');
                match cell {
                    Some(n) => s.push_str(&n.to_string()),
                    None => s.push_str("N/A"),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// One table row from detectors of a single circuit; a missing profile is
/// an unavailable detector.
pub fn qcoverage_report(circuit: &str, cells: &[(String, Option<&DetectorProfile>)]) -> QCoverageTable {
    let mut t = QCoverageTable::new(cells.iter().map(|(n, _)| n.clone()).collect());
    t.rows.push((
        circuit.to_string(),
        cells.iter().map(|(_, p)| p.map(|p| p.q_count())).collect(),
    ));
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_enumerate_binomially() {
        let mut n = 0;
        for_each_subset(0b11_1111, 5, |_| n += 1);
        assert_eq!(n, 6);
        let mut all = Vec::new();
        for_each_subset(0b1011, 2, |m| all.push(m));
        assert_eq!(all, [0b0011, 0b1001, 0b1010]);
        let mut none = 0;
        for_each_subset(0b11, 5, |_| none += 1);
        assert_eq!(none, 0);
        assert_eq!(choose(20, 5), 15_504);
        assert_eq!(choose(8, 5), 56);
    }

    #[test]
    fn quin_indices() {
        let q = QuinTrigger::from_indices(&[7, 1, 3, 0, 19], 20, 5).unwrap();
        assert_eq!(q.indices(), [0, 1, 3, 7, 19]);
        assert!(matches!(
            QuinTrigger::from_indices(&[1, 2, 3, 4, 20], 20, 5),
            Err(DetectorError::IndexOutOfRange { index: 20, m: 20 })
        ));
        assert!(matches!(
            QuinTrigger::from_indices(&[1, 1, 3, 4, 5], 20, 5),
            Err(DetectorError::BadArity { .. })
        ));
    }

    #[test]
    fn vector_file_errors() {
        let src = VectorSource::Combined { parts: vec![] };
        let t = parse_vectors("# c17\n00000\n\n11111\n", 5, "x", src.clone()).unwrap();
        assert_eq!(t.len(), 2);
        assert!(matches!(
            parse_vectors("00000\n0000\n", 5, "x", src.clone()),
            Err(DetectorError::WidthMismatch { line: 2, expected: 5, got: 4 })
        ));
        assert!(matches!(
            parse_vectors("0a000\n", 5, "x", src),
            Err(DetectorError::BadCharacter { line: 1, ch: 'a' })
        ));
    }

    #[test]
    fn csv_marks_missing() {
        let t = qcoverage_report("c880", &[("RANDOM".into(), None)]);
        assert_eq!(t.to_csv(), "circuit,RANDOM\nc880,N/A\n");
    }
}
