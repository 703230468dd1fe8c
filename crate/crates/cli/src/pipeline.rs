//! The six commands. Each one looks for fresh upstream artifacts in the
//! output directory and recomputes whatever is missing or stale.

use std::cell::OnceCell;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use htins_core::detectors::{
    build_qcoverage, gen_random_vectors, load_vectors, qcoverage_report, DetectorProfileFile,
};
use htins_core::insertion::{emit_infected, same_structure, strip_ht, HtSidecar};
use htins_core::netlist::{parse_bench_named, validate_acyclic};
use htins_core::pruning::{jaccard_set, prune_pipeline, CandidateSetFile, PruneConfig, PruneOutcome, PruneReport};
use htins_core::rl::{classify_stall, evaluate_asp, generate, train, AspCell, AspTable, RewardCase, StallKind, POLICY_VERSION};
use htins_core::sim::{analyze_nets, rare_nets};
use htins_core::{CandidateSet, CircuitGraph, DetectorProfile, Env, HtInstance, NetStats, PolicyParams, TestVectorSet};

use crate::artifacts::{fingerprint, read_fresh, write_csv, write_json, Invariant, Provenance};
use crate::config::{DetectorSpec, Loaded, ALL_DETECTOR};

pub const STATS_SUFFIX: &str = ".stats.csv";
pub const JSI_SUMMARY: &str = "jsi_summary.csv";
pub const CANDIDATES: &str = "candidates.json";
pub const PRUNE_REPORT: &str = "prune_report.json";
pub const QCOV: &str = "qcov.csv";
pub const PROFILES_DIR: &str = "profiles";
pub const POLICY: &str = "policy.json";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const TRAIN_SUMMARY: &str = "train_summary.json";
pub const INSTANCES_DIR: &str = "instances";
pub const INSTANCES: &str = "instances.json";
pub const ASP_CSV: &str = "asp.csv";
pub const ASP_JSON: &str = "asp.json";

fn load_circuit(path: &Path) -> Result<CircuitGraph> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_bench_named(&text, &name).with_context(|| format!("parsing {}", path.display()))
}

/// Per-net statistics and the JSI of the rare set, for every configured
/// circuit. Returns `(circuit, |T|, JSI)` ranked by JSI.
pub fn cmd_analyze(run: &Loaded) -> Result<Vec<(String, usize, f64)>> {
    let prov = Provenance::new(run);
    let mut summary = Vec::new();
    for path in &run.circuits {
        let g = load_circuit(path)?;
        let stats = analyze_nets(&g, run.cfg.n_sim_vectors, run.cfg.seeds.sim);
        let signal: Vec<_> = stats.iter().map(|s| s.signal()).collect();
        let t = rare_nets(&g, &signal, run.cfg.th_sw);
        let mut in_t = vec![false; g.net_count()];
        for n in &t {
            in_t[n.index()] = true;
        }
        let mut csv = String::from("net,level,p1,rv,sw,cc0,cc1,hts,rare\n");
        for s in &stats {
            csv.push_str(&format!(
                "{},{},{:.6},{},{:.6},{},{},{:.6},{}\n",
                g.net_name(s.net),
                s.level,
                s.p1,
                s.rv,
                s.sw,
                s.cc0,
                s.cc1,
                s.hts,
                in_t[s.net.index()] as u8
            ));
        }
        write_csv(&run.out.join(format!("{}{STATS_SUFFIX}", g.name())), &prov, &csv)?;
        let jsi = if t.len() >= 2 { jaccard_set(&g, &t) } else { 0.0 };
        log::info!("{}: {} nets, |T| = {}, JSI(T) = {jsi:.3}", g.name(), g.net_count(), t.len());
        summary.push((g.name().to_string(), t.len(), jsi));
    }
    summary.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    let mut csv = String::from("rank,circuit,t_count,jsi_t\n");
    for (k, (c, n, j)) in summary.iter().enumerate() {
        csv.push_str(&format!("{},{c},{n},{j:.6}\n", k + 1));
    }
    write_csv(&run.out.join(JSI_SUMMARY), &prov, &csv)?;
    Ok(summary)
}

#[derive(Debug, Serialize, Deserialize)]
struct CandidatesBody {
    diversified: bool,
    candidates: CandidateSetFile,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportBody {
    report: PruneReport,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileBody {
    profile: DetectorProfileFile,
}

#[derive(Debug, Serialize, Deserialize)]
struct PolicyBody {
    policy: PolicyParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub circuit: String,
    pub detector: String,
    pub timesteps: usize,
    pub episodes: usize,
    pub first_decile_mean: Option<f64>,
    pub final_decile_mean: Option<f64>,
    pub non_functional: usize,
    pub detected: usize,
    pub undetected: usize,
    pub stall: Option<StallKind>,
    pub stopped_on_stall: bool,
    pub restarts: usize,
    pub solver_timeouts: usize,
    pub wall_secs: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct InstancesBody {
    circuit: String,
    detector: String,
    instances: Vec<HtSidecar>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AspBody {
    circuit: String,
    held_out: Option<String>,
    table: AspTable,
    cells: Vec<AspCell>,
}

/// Shared state for the single-circuit commands.
pub struct Pipeline<'r> {
    pub run: &'r Loaded,
    pub g: CircuitGraph,
    stats: OnceCell<Vec<NetStats>>,
    sets: OnceCell<Vec<(String, Option<TestVectorSet>)>>,
}

impl<'r> Pipeline<'r> {
    pub fn new(run: &'r Loaded) -> Result<Self> {
        Ok(Pipeline {
            g: load_circuit(run.circuit()?)?,
            run,
            stats: OnceCell::new(),
            sets: OnceCell::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.run.out.join(name)
    }

    fn prov(&self) -> Provenance {
        Provenance::new(self.run)
    }

    fn stats(&self) -> &[NetStats] {
        self.stats
            .get_or_init(|| analyze_nets(&self.g, self.run.cfg.n_sim_vectors, self.run.cfg.seeds.sim))
    }

    fn prune_config(&self) -> PruneConfig {
        let c = &self.run.cfg;
        PruneConfig {
            th_sw: c.th_sw,
            m: c.m_size,
            jsi_th: c.jsi_th,
            timeout: std::time::Duration::from_millis(c.timeout_ms),
            seed: c.seeds.prune,
        }
    }

    fn fresh_prune(&self) -> Result<PruneOutcome> {
        let out = prune_pipeline(&self.g, self.stats(), &self.prune_config())
            .with_context(|| format!("pruning {}", self.g.name()))?;
        if !out.report.chain_inclusion {
            return Err(Invariant("pruned sets are not nested inside the rare set".into()).into());
        }
        Ok(out)
    }

    fn member_names(&self, cs: &CandidateSet) -> Vec<String> {
        cs.members.iter().map(|c| self.g.net_name(c.net).to_string()).collect()
    }

    pub fn candidates_fp(&self, cs: &CandidateSet) -> String {
        fingerprint(&self.member_names(cs))
    }

    fn save_candidates(&self, out: &PruneOutcome, diversified: bool) -> Result<()> {
        let prov = self.prov();
        let body = CandidatesBody {
            diversified,
            candidates: out.candidates.to_file(&self.g),
        };
        write_json(&self.path(CANDIDATES), &prov, &body)?;
        write_json(&self.path(PRUNE_REPORT), &prov, &ReportBody { report: out.report.clone() })
    }

    /// Run pruning (and diversification when asked) and write the results.
    pub fn cmd_prune(&self, diversify: bool) -> Result<PruneReport> {
        let mut out = self.fresh_prune()?;
        if diversify || self.run.cfg.diversify {
            let d = out.diversify(&self.g, self.stats(), self.run.cfg.jsi_th, self.run.cfg.seeds.diversify)?;
            log::info!(
                "diversified: JSI {:.3} -> {:.3}, {} replaced, {} short",
                d.jsi_before,
                d.jsi_after,
                d.removed.len(),
                d.shortfall
            );
        }
        self.save_candidates(&out, diversify || self.run.cfg.diversify)?;
        Ok(out.report)
    }

    /// Candidate set from the output directory, or a fresh pruning run.
    pub fn candidates(&self) -> Result<CandidateSet> {
        if let Some(b) = read_fresh::<CandidatesBody>(&self.path(CANDIDATES), self.run, None) {
            match CandidateSet::from_file(&self.g, &b.candidates) {
                Ok(cs) => return Ok(cs),
                Err(e) => log::warn!("stored candidate set unusable ({e}), recomputing"),
            }
        }
        self.cmd_prune(false)?;
        let b = read_fresh::<CandidatesBody>(&self.path(CANDIDATES), self.run, None)
            .ok_or_else(|| Invariant("candidate set just written is unreadable".into()))?;
        Ok(CandidateSet::from_file(&self.g, &b.candidates)?)
    }

    /// Vector sets by configured name; a missing file yields `None`.
    pub fn detector_sets(&self) -> Result<&[(String, Option<TestVectorSet>)]> {
        if let Some(s) = self.sets.get() {
            return Ok(s);
        }
        let mut out = Vec::new();
        for (name, spec) in &self.run.detectors {
            let set = match spec {
                DetectorSpec::Random { count, seed } => Some(gen_random_vectors(&self.g, *count, *seed)),
                DetectorSpec::File(p) if !p.exists() => {
                    log::warn!("detector {name}: {} not found, reported as N/A", p.display());
                    None
                }
                DetectorSpec::File(p) => {
                    Some(load_vectors(p, &self.g).with_context(|| format!("detector {name}"))?)
                }
            };
            out.push((
                name.clone(),
                set.map(|mut s| {
                    s.name = name.clone();
                    s
                }),
            ));
        }
        Ok(self.sets.get_or_init(|| out))
    }

    /// Every configured detector's profile, then `ALL` over the available
    /// ones.
    pub fn profiles(&self, cs: &CandidateSet) -> Result<Vec<(String, Option<DetectorProfile>)>> {
        let mut out = Vec::new();
        for (name, set) in self.detector_sets()? {
            let p = match set {
                Some(s) => Some(build_qcoverage(&self.g, s, cs, self.run.cfg.arity)?),
                None => None,
            };
            out.push((name.clone(), p));
        }
        let avail: Vec<&DetectorProfile> = out.iter().filter_map(|(_, p)| p.as_ref()).collect();
        let all = if avail.is_empty() {
            None
        } else {
            Some(DetectorProfile::merged(ALL_DETECTOR, &avail)?)
        };
        out.push((ALL_DETECTOR.to_string(), all));
        Ok(out)
    }

    fn train_profile(&self, cs: &CandidateSet) -> Result<DetectorProfile> {
        let want = &self.run.cfg.train_detector;
        self.profiles(cs)?
            .into_iter()
            .find(|(n, _)| n == want)
            .and_then(|(_, p)| p)
            .with_context(|| format!("training detector {want} is unavailable"))
    }

    /// Q-coverage of every detector over the candidate set.
    pub fn cmd_qcov(&self) -> Result<String> {
        let cs = self.candidates()?;
        let prov = self.prov().with_candidates(self.candidates_fp(&cs));
        let profiles = self.profiles(&cs)?;
        for (name, p) in &profiles {
            if let Some(p) = p {
                let body = ProfileBody { profile: p.to_file() };
                write_json(&self.path(PROFILES_DIR).join(format!("{name}.json")), &prov, &body)?;
            }
        }
        let cells: Vec<(String, Option<&DetectorProfile>)> =
            profiles.iter().map(|(n, p)| (n.clone(), p.as_ref())).collect();
        let csv = qcoverage_report(self.g.name(), &cells).to_csv();
        write_csv(&self.path(QCOV), &prov, &csv)?;
        Ok(csv)
    }

    /// Train against the configured detector. A stalled run diversifies
    /// the candidate set and starts over, up to `max_restarts` times.
    pub fn cmd_train(&self) -> Result<(CandidateSet, PolicyParams, TrainSummary)> {
        let cfg = &self.run.cfg;
        let mut cs = self.candidates()?;
        let mut restarts = 0;
        loop {
            let profile = self.train_profile(&cs)?;
            let mut env = Env::new(&self.g, &cs, &profile, self.run.env_config())?;
            let mut hyper = cfg.ppo.clone();
            let may_restart = restarts < cfg.max_restarts;
            hyper.stop_on_stall |= may_restart;
            log::info!(
                "training on {} against {} (|M| = {}, Q = {}, {} steps)",
                self.g.name(),
                profile.detector,
                cs.len(),
                profile.q_count(),
                cfg.timesteps
            );
            let (policy, log) = train(&mut env, cfg.timesteps, hyper.clone(), cfg.seeds.train)?;
            let stall = classify_stall(&log, hyper.stall_window, hyper.stall_neg_threshold);
            if log.stopped_on_stall && may_restart {
                log::warn!("training stalled ({stall:?}); diversifying candidates and restarting");
                let mut out = self.fresh_prune()?;
                out.candidates = cs.clone();
                let seed = cfg.seeds.diversify.wrapping_add(restarts as u64);
                let d = out.diversify(&self.g, self.stats(), cfg.jsi_th, seed)?;
                restarts += 1;
                if d.set.members == cs.members {
                    log::warn!("diversification left the set unchanged");
                    continue;
                }
                self.save_candidates(&out, true)?;
                cs = d.set;
                continue;
            }
            let mut counts = [0usize; 3];
            for s in &log.steps {
                counts[s.case as usize] += 1;
            }
            let deciles = log.decile_means();
            let summary = TrainSummary {
                circuit: self.g.name().to_string(),
                detector: profile.detector.clone(),
                timesteps: log.timesteps(),
                episodes: log.episode_means.len(),
                first_decile_mean: deciles.map(|d| d.0),
                final_decile_mean: deciles.map(|d| d.1),
                non_functional: counts[RewardCase::NonFunctional as usize],
                detected: counts[RewardCase::Detected as usize],
                undetected: counts[RewardCase::Undetected as usize],
                stall,
                stopped_on_stall: log.stopped_on_stall,
                restarts,
                solver_timeouts: env.solver_timeouts(),
                wall_secs: log.wall_secs,
            };
            let prov = self.prov().with_candidates(self.candidates_fp(&cs));
            write_json(&self.path(POLICY), &prov, &PolicyBody { policy: policy.clone() })?;
            write_csv(&self.path(TRAIN_LOG), &prov, &log.to_csv())?;
            write_json(&self.path(TRAIN_SUMMARY), &prov, &summary)?;
            return Ok((cs, policy, summary));
        }
    }

    fn policy(&self) -> Result<(CandidateSet, PolicyParams)> {
        let cs = self.candidates()?;
        let fp = self.candidates_fp(&cs);
        if let Some(b) = read_fresh::<PolicyBody>(&self.path(POLICY), self.run, Some(&fp)) {
            if b.policy.version == POLICY_VERSION && b.policy.m == cs.len() {
                return Ok((cs, b.policy));
            }
            log::warn!("stored policy does not fit the candidate set, retraining");
        }
        let (cs, policy, _) = self.cmd_train()?;
        Ok((cs, policy))
    }

    /// Sample Trojans from the trained policy and write them out.
    pub fn cmd_generate(&self) -> Result<Vec<HtSidecar>> {
        let cfg = &self.run.cfg;
        let (cs, policy) = self.policy()?;
        let profile = self.train_profile(&cs)?;
        let mut env = Env::new(&self.g, &cs, &profile, self.run.env_config())?;
        let made = generate(&policy, &mut env, cfg.n_instances, cfg.max_attempts, cfg.seeds.generate)?;
        let prov = self.prov().with_candidates(self.candidates_fp(&cs));
        let dir = self.path(INSTANCES_DIR);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        let profiles = self.profiles(&cs)?;
        let mut sidecars = Vec::new();
        for (k, inf) in made.iter().enumerate() {
            let text = emit_infected(inf);
            self.check_instance(&text, inf.graph.net_name(inf.payload_out), self.g.net_name(inf.ht.payload))?;
            let stem = format!("{}_ht{k:03}", self.g.name());
            let comment = prov.comment();
            crate::artifacts::write_text(&dir.join(format!("{stem}.bench")), &(comment + &text))?;
            let mut side = inf.ht.sidecar(&self.g, &cs);
            side.detected_by = detected_by(&profiles, &inf.ht);
            write_json(&dir.join(format!("{stem}.json")), &prov, &side)?;
            sidecars.push(side);
        }
        let body = InstancesBody {
            circuit: self.g.name().to_string(),
            detector: profile.detector.clone(),
            instances: sidecars.clone(),
        };
        write_json(&self.path(INSTANCES), &prov, &body)?;
        Ok(sidecars)
    }

    /// The emitted netlist must load, stay acyclic, and reduce to the
    /// golden circuit once the Trojan gates are removed.
    fn check_instance(&self, text: &str, payload_out: &str, payload: &str) -> Result<()> {
        let back = parse_bench_named(text, self.g.name())
            .map_err(|e| Invariant(format!("emitted instance does not parse: {e}")))?;
        validate_acyclic(&back).map_err(|e| Invariant(format!("emitted instance is cyclic: {e}")))?;
        if back.net_id(payload_out).is_none() {
            return Err(Invariant("payload XOR missing from emitted instance".into()).into());
        }
        let stripped = strip_ht(&back, payload).map_err(|e| Invariant(format!("cannot strip Trojan: {e}")))?;
        if !same_structure(&stripped, &self.g) {
            return Err(Invariant("stripped instance differs from the golden circuit".into()).into());
        }
        Ok(())
    }

    fn instances(&self) -> Result<(CandidateSet, Vec<HtInstance>)> {
        let cs = self.candidates()?;
        let fp = self.candidates_fp(&cs);
        let sides = match read_fresh::<InstancesBody>(&self.path(INSTANCES), self.run, Some(&fp)) {
            Some(b) => b.instances,
            None => self.cmd_generate()?,
        };
        // generation may have retrained on a diversified set
        let cs = self.candidates()?;
        let mut out = Vec::with_capacity(sides.len());
        for s in sides {
            let payload = self.g.lookup(&s.payload)?;
            if s.trigger_indices.iter().any(|&i| i >= cs.len()) {
                bail!("instance trigger index out of range for the candidate set");
            }
            let mut ht = HtInstance::new(&s.trigger_indices, payload);
            ht.functional = s.functional;
            ht.propagates = s.propagates;
            ht.detected_by = s.detected_by;
            out.push(ht);
        }
        Ok((cs, out))
    }

    /// Attack success of the generated Trojans against every detector.
    pub fn cmd_evaluate(&self, hold_out: bool) -> Result<String> {
        let (cs, inst) = self.instances()?;
        let profiles = self.profiles(&cs)?;
        let trained = self.run.cfg.train_detector.clone();
        let held = hold_out.then(|| trained.clone());
        let avail: Vec<&DetectorProfile> = profiles
            .iter()
            .filter(|(n, _)| held.as_deref() != Some(n.as_str()))
            .filter_map(|(_, p)| p.as_ref())
            .collect();
        let cells = evaluate_asp(&inst, &avail);
        let mut table = AspTable::new(profiles.iter().map(|(n, _)| n.clone()).collect());
        let note = held.as_ref().map_or(String::new(), |h| format!("held out {h}"));
        table.push(&trained, &note, &cells);
        let prov = self.prov().with_candidates(self.candidates_fp(&cs));
        let csv = table.to_csv();
        write_csv(&self.path(ASP_CSV), &prov, &csv)?;
        let body = AspBody {
            circuit: self.g.name().to_string(),
            held_out: held,
            table,
            cells,
        };
        write_json(&self.path(ASP_JSON), &prov, &body)?;
        Ok(csv)
    }
}

/// Detectors whose coverage includes the instance's trigger.
fn detected_by(profiles: &[(String, Option<DetectorProfile>)], ht: &HtInstance) -> Vec<String> {
    let q = htins_core::QuinTrigger::from_mask(ht.trigger_mask());
    profiles
        .iter()
        .filter(|(_, p)| p.as_ref().is_some_and(|p| p.contains(q)))
        .map(|(n, _)| n.clone())
        .collect()
}
