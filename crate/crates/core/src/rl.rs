//! Adversarial insertion loop: an episodic environment in which an agent
//! picks trigger tuples from the candidate set and is paid against a
//! detector profile, a clipped-surrogate policy-gradient learner, and the
//! post-training generation and attack-success evaluation.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::time::{Duration, Instant};

use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::{detects, DetectorError, DetectorProfile, QuinTrigger, TRIGGER_ARITY};
use crate::insertion::{
    check_propagation, eligible_payloads, insert_ht, select_payload, trigger_requirements, verify_functional,
    InfectedNetlist, InsertError,
};
use crate::justify::{justify, Justification};
use crate::netlist::{CircuitGraph, NetId};
use crate::pruning::CandidateSet;

/// Checkpoint format version.
pub const POLICY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("{m} candidates cannot fill a {arity}-net trigger")]
    TooFewCandidates { m: usize, arity: usize },
    #[error("detector profile `{0}` was built over a different candidate set")]
    ProfileMismatch(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("action has {got} entries, expected {expected}")]
    BadAction { expected: usize, got: usize },
    #[error("action index {index} out of range for {m} candidates")]
    ActionOutOfRange { index: usize, m: usize },
    #[error("policy diverged (non-finite value) during update {update}")]
    DivergedPolicy { update: usize },
    #[error("found {found} of {wanted} undetected Trojans within {attempts} attempts")]
    GenerationExhausted { found: usize, wanted: usize, attempts: usize },
    #[error("checkpoint version {0} is not supported")]
    BadCheckpoint(u32),
    #[error(transparent)]
    Insert(#[from] InsertError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

/// Environment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub episode_len: usize,
    pub r_negative: f64,
    pub r_positive: f64,
    pub arity: usize,
    /// Seeds payload draws, initial states and duplicate replacement.
    pub seed: u64,
    /// Per-query justification budget.
    pub timeout_ms: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            episode_len: 25,
            r_negative: -1.0,
            r_positive: 100.0,
            arity: TRIGGER_ARITY,
            seed: 0,
            timeout_ms: 2_000,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if !(self.r_positive > 0.0 && self.r_negative < 0.0) {
            return Err(RlError::BadConfig("need r_positive > 0 > r_negative".into()));
        }
        if self.episode_len == 0 {
            return Err(RlError::BadConfig("episode_len must be at least 1".into()));
        }
        if !(2..=8).contains(&self.arity) {
            return Err(RlError::BadConfig(format!("trigger arity {} not in 2..=8", self.arity)));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

/// Sorted trigger indices, the payload for this episode and the step count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvState {
    pub s: Vec<usize>,
    pub payload: NetId,
    pub step: usize,
}

/// Which of the three reward cases a step fell into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardCase {
    /// The trigger can never fire.
    NonFunctional,
    /// Fires, but the detector's vectors already activate it.
    Detected,
    /// Fires and slips past the detector.
    Undetected,
}

impl RewardCase {
    pub fn from_verdict(functional: bool, detected: bool) -> Self {
        match (functional, detected) {
            (false, _) => RewardCase::NonFunctional,
            (true, true) => RewardCase::Detected,
            (true, false) => RewardCase::Undetected,
        }
    }

    pub fn reward(self, cfg: &EnvConfig) -> f64 {
        match self {
            RewardCase::NonFunctional => cfg.r_negative,
            RewardCase::Detected => 0.0,
            RewardCase::Undetected => cfg.r_positive,
        }
    }
}

impl fmt::Display for RewardCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardCase::NonFunctional => "non_functional",
            RewardCase::Detected => "detected",
            RewardCase::Undetected => "undetected",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub case: RewardCase,
    pub trigger: QuinTrigger,
    pub functional: bool,
    pub detected: bool,
}

/// One environment; single-threaded, deterministic per seed.
pub struct Env<'a> {
    g: &'a CircuitGraph,
    cs: &'a CandidateSet,
    profile: &'a DetectorProfile,
    cfg: EnvConfig,
    rng: ChaCha8Rng,
    verdicts: HashMap<u64, bool>,
    /// Payloads sitting above every candidate, valid for any trigger.
    safe_payloads: Vec<NetId>,
    state: EnvState,
    solver_timeouts: usize,
}

impl<'a> Env<'a> {
    pub fn new(
        g: &'a CircuitGraph,
        cs: &'a CandidateSet,
        profile: &'a DetectorProfile,
        cfg: EnvConfig,
    ) -> Result<Self, RlError> {
        cfg.validate()?;
        if cs.len() < cfg.arity {
            return Err(RlError::TooFewCandidates {
                m: cs.len(),
                arity: cfg.arity,
            });
        }
        let names: Vec<&str> = cs.members.iter().map(|c| g.net_name(c.net)).collect();
        if profile.arity != cfg.arity || profile.m_ref.iter().map(String::as_str).ne(names.iter().copied()) {
            return Err(RlError::ProfileMismatch(profile.detector.clone()));
        }
        let all: Vec<usize> = (0..cs.len()).collect();
        let safe_payloads = eligible_payloads(g, cs, &all);
        let mut env = Env {
            g,
            cs,
            profile,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            verdicts: HashMap::new(),
            safe_payloads,
            state: EnvState {
                s: Vec::new(),
                payload: NetId(0),
                step: 0,
            },
            solver_timeouts: 0,
        };
        env.reset()?;
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn m(&self) -> usize {
        self.cs.len()
    }

    pub fn graph(&self) -> &'a CircuitGraph {
        self.g
    }

    pub fn candidates(&self) -> &'a CandidateSet {
        self.cs
    }

    pub fn profile(&self) -> &'a DetectorProfile {
        self.profile
    }

    /// Justification queries that ran out of time; counted as non-functional.
    pub fn solver_timeouts(&self) -> usize {
        self.solver_timeouts
    }

    /// Fresh uniform state and a fresh payload.
    pub fn reset(&mut self) -> Result<&EnvState, RlError> {
        let mut s = (0..self.cs.len()).choose_multiple(&mut self.rng, self.cfg.arity);
        s.sort_unstable();
        let payload = self.draw_payload(&s)?;
        self.state = EnvState { s, payload, step: 0 };
        Ok(&self.state)
    }

    fn draw_payload(&mut self, s: &[usize]) -> Result<NetId, RlError> {
        if self.safe_payloads.is_empty() {
            Ok(select_payload(self.g, self.cs, s, &mut self.rng)?)
        } else {
            Ok(*self.safe_payloads.choose(&mut self.rng).expect("non-empty"))
        }
    }

    /// Replace repeated indices with random unused ones, then sort.
    pub fn legalize(&mut self, action: &[usize]) -> Result<Vec<usize>, RlError> {
        let m = self.cs.len();
        if action.len() != self.cfg.arity {
            return Err(RlError::BadAction {
                expected: self.cfg.arity,
                got: action.len(),
            });
        }
        if let Some(&index) = action.iter().find(|&&a| a >= m) {
            return Err(RlError::ActionOutOfRange { index, m });
        }
        let mut seen = 0u64;
        let mut out = Vec::with_capacity(action.len());
        for &a in action {
            let a = if seen & 1 << a == 0 {
                a
            } else {
                (0..m)
                    .filter(|&i| seen & 1 << i == 0)
                    .choose(&mut self.rng)
                    .expect("m >= arity leaves a free index")
            };
            seen |= 1 << a;
            out.push(a);
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Cached trigger satisfiability on the golden circuit.
    pub fn is_functional(&mut self, s: &[usize]) -> bool {
        let mask = s.iter().fold(0u64, |m, &i| m | 1 << i);
        if let Some(&f) = self.verdicts.get(&mask) {
            return f;
        }
        let req = trigger_requirements(self.g, self.cs, s);
        let f = match justify(self.g, &req, self.cfg.timeout()) {
            Justification::Sat(_) => true,
            Justification::Unsat => false,
            Justification::Timeout => {
                self.solver_timeouts += 1;
                false
            }
        };
        self.verdicts.insert(mask, f);
        f
    }

    pub fn step(&mut self, action: &[usize]) -> Result<StepOutcome, RlError> {
        let s = self.legalize(action)?;
        if !eligible_payloads(self.g, self.cs, &s).contains(&self.state.payload) {
            // only reachable when no payload clears every candidate
            self.state.payload = self.draw_payload(&s)?;
        }
        let functional = self.is_functional(&s);
        let trigger = QuinTrigger::from_indices(&s, self.cs.len(), self.cfg.arity)?;
        let detected = detects(self.profile, trigger)?;
        let case = RewardCase::from_verdict(functional, detected);
        self.state.s = s;
        self.state.step += 1;
        Ok(StepOutcome {
            reward: case.reward(&self.cfg),
            done: self.state.step >= self.cfg.episode_len,
            case,
            trigger,
            functional,
            detected,
        })
    }
}

/// PPO hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub lr: f64,
    /// Rollout length between updates.
    pub n_steps: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    pub hidden: usize,
    pub stall_window: usize,
    pub stall_neg_threshold: f64,
    /// End training at the first update boundary where a stall shows.
    pub stop_on_stall: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            lr: 3e-4,
            n_steps: 2048,
            epochs: 10,
            minibatch: 64,
            ent_coef: 0.01,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            hidden: 64,
            stall_window: 2048,
            stall_neg_threshold: 0.9,
            stop_on_stall: false,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::BadConfig(m.into()));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if !(self.lr > 0.0) || self.n_steps == 0 || self.epochs == 0 || self.minibatch == 0 || self.hidden == 0 {
            return bad("lr, n_steps, epochs, minibatch and hidden must be positive");
        }
        if self.stall_window == 0 {
            return bad("stall_window must be positive");
        }
        Ok(())
    }
}

/// Fully connected network, tanh on hidden layers, linear output.
/// Parameters are flat: per layer the row-major weights then the biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

impl Mlp {
    /// Uniform fan-in init with unit variance; `out_gain` scales the last
    /// layer so a small gain starts the policy near uniform.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], out_gain: f64, rng: &mut R) -> Self {
        let mut params = Vec::new();
        for (l, w) in sizes.windows(2).enumerate() {
            let (i, o) = (w[0], w[1]);
            let gain = if l + 2 == sizes.len() { out_gain } else { 1.0 };
            let a = gain * (3.0 / i as f64).sqrt();
            params.extend((0..i * o).map(|_| rng.gen_range(-a..=a)));
            params.extend(std::iter::repeat_n(0.0, o));
        }
        Mlp {
            sizes: sizes.to_vec(),
            params,
        }
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = 0;
        self.sizes.windows(2).map(move |w| {
            let start = off;
            off += w[0] * w[1] + w[1];
            (start, w[0], w[1])
        })
    }

    /// Activations of every layer, input first, output last.
    pub fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n = self.sizes.len() - 1;
        let mut acts = vec![x.to_vec()];
        for (l, (off, i, o)) in self.layers().enumerate() {
            let w = &self.params[off..off + i * o];
            let b = &self.params[off + i * o..off + i * o + o];
            let a = &acts[l];
            let mut out: Vec<f64> = (0..o)
                .map(|r| b[r] + w[r * i..(r + 1) * i].iter().zip(a).map(|(x, y)| x * y).sum::<f64>())
                .collect();
            if l + 1 < n {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
        acts
    }

    /// Accumulate into `grad` the parameter gradient for output gradient
    /// `dout`, given the activations from [`Mlp::forward`].
    pub fn backward(&self, acts: &[Vec<f64>], dout: &[f64], grad: &mut [f64]) {
        let layers: Vec<_> = self.layers().collect();
        let mut delta = dout.to_vec();
        for (l, &(off, i, o)) in layers.iter().enumerate().rev() {
            let a = &acts[l];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (gv, x) in grad[off + r * i..off + (r + 1) * i].iter_mut().zip(a) {
                    *gv += d * x;
                }
                grad[off + i * o + r] += d;
            }
            if l > 0 {
                let w = &self.params[off..off + i * o];
                let mut prev = vec![0.0; i];
                for (r, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wv) in prev.iter_mut().zip(&w[r * i..(r + 1) * i]) {
                        *p += d * wv;
                    }
                }
                for (p, av) in prev.iter_mut().zip(a) {
                    *p *= 1.0 - av * av;
                }
                delta = prev;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / b1t) / ((*v / b2t).sqrt() + self.eps);
        }
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Actor with one categorical head per trigger slot, critic with a scalar
/// head, both over the multi-hot encoding of the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub version: u32,
    pub m: usize,
    pub arity: usize,
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub hyper: PpoConfig,
    pub seed: u64,
}

impl PolicyParams {
    pub fn new(m: usize, arity: usize, hyper: PpoConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = hyper.hidden;
        let actor = Mlp::new(&[m, h, h, arity * m], 0.01, &mut rng);
        let critic = Mlp::new(&[m, h, h, 1], 1.0, &mut rng);
        PolicyParams {
            version: POLICY_VERSION,
            m,
            arity,
            actor_opt: Adam::new(actor.params.len(), hyper.lr),
            critic_opt: Adam::new(critic.params.len(), hyper.lr),
            actor,
            critic,
            hyper,
            seed,
        }
    }

    pub fn encode(&self, s: &[usize]) -> Vec<f64> {
        let mut x = vec![0.0; self.m];
        for &i in s {
            x[i] = 1.0;
        }
        x
    }

    /// Per-head action probabilities.
    pub fn head_probs(&self, s: &[usize]) -> Vec<Vec<f64>> {
        let logits = self.actor.forward(&self.encode(s)).pop().expect("output layer");
        logits.chunks(self.m).map(softmax).collect()
    }

    pub fn value(&self, s: &[usize]) -> f64 {
        self.critic.forward(&self.encode(s)).pop().expect("output layer")[0]
    }

    /// Sample one index per head; returns the action and its log-probability.
    pub fn sample<R: Rng + ?Sized>(&self, s: &[usize], rng: &mut R) -> (Vec<usize>, f64) {
        let mut logp = 0.0;
        let action = self
            .head_probs(s)
            .iter()
            .map(|p| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = p.len() - 1;
                for (j, &pj) in p.iter().enumerate() {
                    acc += pj;
                    if u < acc {
                        pick = j;
                        break;
                    }
                }
                logp += p[pick].ln();
                pick
            })
            .collect();
        (action, logp)
    }

    /// Most likely index per head.
    pub fn greedy(&self, s: &[usize]) -> Vec<usize> {
        self.head_probs(s)
            .iter()
            .map(|p| {
                p.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b })
                    .0
            })
            .collect()
    }

    fn is_finite(&self) -> bool {
        self.actor.params.iter().chain(&self.critic.params).all(|v| v.is_finite())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RlError> {
        let p: PolicyParams =
            serde_json::from_str(text).map_err(|e| RlError::BadConfig(format!("checkpoint: {e}")))?;
        if p.version != POLICY_VERSION {
            return Err(RlError::BadCheckpoint(p.version));
        }
        Ok(p)
    }
}

/// One logged environment step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub timestep: usize,
    pub episode: usize,
    pub reward: f64,
    pub case: RewardCase,
}

/// Summary of one policy update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub timestep: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Append-only training record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    /// Mean per-step reward of each finished episode.
    pub episode_means: Vec<f64>,
    pub updates: Vec<UpdateStats>,
    pub wall_secs: f64,
    pub stopped_on_stall: bool,
}

impl TrainLog {
    pub fn timesteps(&self) -> usize {
        self.steps.len()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.reward)
    }

    /// Mean episode reward of the first and of the last tenth of episodes
    /// (at least one episode each).
    pub fn decile_means(&self) -> Option<(f64, f64)> {
        let n = self.episode_means.len();
        if n == 0 {
            return None;
        }
        let k = (n / 10).max(1);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Some((mean(&self.episode_means[..k]), mean(&self.episode_means[n - k..])))
    }

    /// `timestep,episode,reward,case` plus running case counts.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestep,episode,reward,case,n_non_functional,n_detected,n_undetected\n");
        let mut counts = [0usize; 3];
        for r in &self.steps {
            counts[r.case as usize] += 1;
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.timestep, r.episode, r.reward, r.case, counts[0], counts[1], counts[2]
            ));
        }
        out
    }
}

/// Why training went nowhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StallKind {
    /// Mostly non-functional picks: the candidates rarely co-activate.
    Incompatible,
    /// Functional picks, but the detector catches every one of them.
    Saturated,
}

/// Stall test over the last `window` steps (all of them if fewer): fires
/// when no step earned the positive reward.
pub fn stall_detector(log: &TrainLog, window: usize) -> bool {
    classify_stall(log, window, 0.9).is_some()
}

/// Like [`stall_detector`], and says which way the window is stuck:
/// negative share above `neg_threshold` is `Incompatible`.
pub fn classify_stall(log: &TrainLog, window: usize, neg_threshold: f64) -> Option<StallKind> {
    let tail = &log.steps[log.steps.len().saturating_sub(window.max(1))..];
    if tail.is_empty() || tail.iter().any(|s| s.case == RewardCase::Undetected) {
        return None;
    }
    let neg = tail.iter().filter(|s| s.case == RewardCase::NonFunctional).count();
    Some(if neg as f64 / tail.len() as f64 > neg_threshold {
        StallKind::Incompatible
    } else {
        StallKind::Saturated
    })
}

struct Rollout {
    states: Vec<Vec<usize>>,
    actions: Vec<Vec<usize>>,
    logp: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
}

impl Rollout {
    fn new() -> Self {
        Rollout {
            states: Vec::new(),
            actions: Vec::new(),
            logp: Vec::new(),
            values: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.rewards.len()
    }
}

/// Generalized advantage estimates and returns; `last_value` bootstraps
/// the step after the final one unless it ended an episode.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut last = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let next = if t + 1 == n { last_value } else { values[t + 1] };
        let delta = rewards[t] + gamma * next * live - values[t];
        last = delta + gamma * lambda * live * last;
        adv[t] = last;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Loss gradients of one minibatch sample, accumulated into the buffers.
/// Returns (policy loss, value loss, entropy, ratio).
#[allow(clippy::too_many_arguments)]
fn sample_grad(
    p: &PolicyParams,
    s: &[usize],
    action: &[usize],
    old_logp: f64,
    adv: f64,
    ret: f64,
    scale: f64,
    ga: &mut [f64],
    gc: &mut [f64],
) -> (f64, f64, f64, f64) {
    let h = &p.hyper;
    let x = p.encode(s);
    let acts = p.actor.forward(&x);
    let logits = acts.last().expect("output layer");
    let probs: Vec<Vec<f64>> = logits.chunks(p.m).map(softmax).collect();
    let logp: f64 = probs.iter().zip(action).map(|(q, &a)| q[a].ln()).sum();
    let ratio = (logp - old_logp).exp();
    let clipped = ratio.clamp(1.0 - h.clip, 1.0 + h.clip);
    let surrogate = (ratio * adv).min(clipped * adv);
    let active = !((adv > 0.0 && ratio > 1.0 + h.clip) || (adv < 0.0 && ratio < 1.0 - h.clip));
    let coef = if active { -ratio * adv * scale } else { 0.0 };
    let mut dlogits = vec![0.0; logits.len()];
    let mut ent = 0.0;
    for (k, q) in probs.iter().enumerate() {
        let hk = entropy(q);
        ent += hk;
        for (j, &pj) in q.iter().enumerate() {
            let onehot = if j == action[k] { 1.0 } else { 0.0 };
            let lp = if pj > 0.0 { pj.ln() } else { 0.0 };
            dlogits[k * p.m + j] = coef * (onehot - pj) + h.ent_coef * scale * pj * (lp + hk);
        }
    }
    p.actor.backward(&acts, &dlogits, ga);
    let cacts = p.critic.forward(&x);
    let v = cacts.last().expect("output layer")[0];
    p.critic.backward(&cacts, &[h.vf_coef * 2.0 * (v - ret) * scale], gc);
    (-surrogate, (v - ret) * (v - ret), ent, ratio)
}

fn clip_norm(g: &mut [f64], max: f64) {
    let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > max {
        let k = max / n;
        g.iter_mut().for_each(|v| *v *= k);
    }
}

fn update(p: &mut PolicyParams, buf: &Rollout, adv: &[f64], ret: &[f64], rng: &mut ChaCha8Rng, timestep: usize) -> UpdateStats {
    let h = p.hyper.clone();
    let mut idx: Vec<usize> = (0..buf.len()).collect();
    let (mut pl, mut vl, mut en, mut kl, mut cf, mut count) = (0.0, 0.0, 0.0, 0.0, 0.0, 0usize);
    for _ in 0..h.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(h.minibatch) {
            let b = chunk.len() as f64;
            let mean = chunk.iter().map(|&k| adv[k]).sum::<f64>() / b;
            let var = chunk.iter().map(|&k| (adv[k] - mean).powi(2)).sum::<f64>() / b;
            let std = var.sqrt() + 1e-8;
            let mut ga = vec![0.0; p.actor.params.len()];
            let mut gc = vec![0.0; p.critic.params.len()];
            for &k in chunk {
                let a = if chunk.len() > 1 { (adv[k] - mean) / std } else { adv[k] };
                let (l_pi, l_v, e, ratio) =
                    sample_grad(p, &buf.states[k], &buf.actions[k], buf.logp[k], a, ret[k], 1.0 / b, &mut ga, &mut gc);
                pl += l_pi;
                vl += l_v;
                en += e;
                kl += ratio - 1.0 - ratio.ln();
                cf += if (ratio - 1.0).abs() > h.clip { 1.0 } else { 0.0 };
                count += 1;
            }
            // separate norms keep the large-scale value loss from starving the actor
            clip_norm(&mut ga, h.max_grad_norm);
            clip_norm(&mut gc, h.max_grad_norm);
            p.actor_opt.step(&mut p.actor.params, &ga);
            p.critic_opt.step(&mut p.critic.params, &gc);
        }
    }
    let n = count.max(1) as f64;
    UpdateStats {
        timestep,
        policy_loss: pl / n,
        value_loss: vl / n,
        entropy: en / n,
        approx_kl: kl / n,
        clip_fraction: cf / n,
    }
}

/// Run PPO for `total_timesteps` environment steps.
pub fn train(env: &mut Env, total_timesteps: usize, hyper: PpoConfig, seed: u64) -> Result<(PolicyParams, TrainLog), RlError> {
    let policy = PolicyParams::new(env.m(), env.config().arity, hyper, seed);
    train_from(env, policy, total_timesteps)
}

/// Continue training an existing policy.
pub fn train_from(env: &mut Env, mut policy: PolicyParams, total_timesteps: usize) -> Result<(PolicyParams, TrainLog), RlError> {
    let hyper = policy.hyper.clone();
    hyper.validate()?;
    if total_timesteps < env.config().episode_len {
        return Err(RlError::BadConfig(format!(
            "{total_timesteps} timesteps is shorter than one episode"
        )));
    }
    if policy.m != env.m() || policy.arity != env.config().arity {
        return Err(RlError::BadConfig("policy shape does not match the environment".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    rng.set_stream(1);
    let mut log = TrainLog {
        seed: policy.seed,
        ..TrainLog::default()
    };
    env.reset()?;
    let mut buf = Rollout::new();
    let mut episode = 0;
    let mut ep_sum = 0.0;
    for t in 0..total_timesteps {
        let s = env.state().s.clone();
        let (action, logp) = policy.sample(&s, &mut rng);
        let value = policy.value(&s);
        let out = env.step(&action)?;
        log.steps.push(StepRecord {
            timestep: t,
            episode,
            reward: out.reward,
            case: out.case,
        });
        ep_sum += out.reward;
        buf.states.push(s);
        buf.actions.push(action);
        buf.logp.push(logp);
        buf.values.push(value);
        buf.rewards.push(out.reward);
        buf.dones.push(out.done);
        if out.done {
            log.episode_means.push(ep_sum / env.config().episode_len as f64);
            ep_sum = 0.0;
            episode += 1;
            env.reset()?;
        }
        if buf.len() == hyper.n_steps || t + 1 == total_timesteps {
            let last_value = if out.done { 0.0 } else { policy.value(&env.state().s) };
            let (adv, ret) = gae(&buf.rewards, &buf.values, &buf.dones, last_value, hyper.gamma, hyper.gae_lambda);
            let stats = update(&mut policy, &buf, &adv, &ret, &mut rng, t + 1);
            if !policy.is_finite() || !stats.policy_loss.is_finite() || !stats.value_loss.is_finite() {
                log::error!("non-finite parameters after update {}", log.updates.len());
                return Err(RlError::DivergedPolicy {
                    update: log.updates.len(),
                });
            }
            log::info!(
                "t={} episodes={} last-episode mean={:.3} entropy={:.3} kl={:.4}",
                t + 1,
                episode,
                log.episode_means.last().copied().unwrap_or(f64::NAN),
                stats.entropy,
                stats.approx_kl
            );
            log.updates.push(stats);
            buf = Rollout::new();
            if hyper.stop_on_stall && log.timesteps() >= hyper.stall_window && stall_detector(&log, hyper.stall_window) {
                log::warn!("training stalled at t={}", t + 1);
                log.stopped_on_stall = true;
                break;
            }
        }
    }
    log.wall_secs = start.elapsed().as_secs_f64();
    Ok((policy, log))
}

/// Roll the policy (sampling) and keep the first `n` distinct triggers
/// that fire and evade the environment's detector, each spliced into a
/// fresh payload and re-verified.
pub fn generate(
    policy: &PolicyParams,
    env: &mut Env,
    n: usize,
    max_attempts: usize,
    seed: u64,
) -> Result<Vec<InfectedNetlist>, RlError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (g, cs) = (env.graph(), env.candidates());
    let timeout = env.config().timeout();
    let mut seen: HashSet<(u64, NetId)> = HashSet::new();
    let mut out = Vec::new();
    env.reset()?;
    let mut attempts = 0;
    while out.len() < n && attempts < max_attempts {
        attempts += 1;
        let (action, _) = policy.sample(&env.state().s.clone(), &mut rng);
        let step = env.step(&action)?;
        let s = env.state().s.clone();
        if step.done {
            env.reset()?;
        }
        if step.case != RewardCase::Undetected {
            continue;
        }
        let payload = select_payload(g, cs, &s, &mut rng)?;
        if !seen.insert((step.trigger.mask(), payload)) {
            continue;
        }
        let mut inf = insert_ht(g, cs, &s, payload)?;
        let mut ht = verify_functional(g, cs, &inf, timeout);
        if !ht.functional {
            // solver budget ran out on the re-check; do not keep it
            continue;
        }
        ht.propagates = ht.trigger_vector.as_ref().map(|v| check_propagation(g, &inf, v));
        inf.ht = ht;
        out.push(inf);
    }
    if out.len() < n {
        return Err(RlError::GenerationExhausted {
            found: out.len(),
            wanted: n,
            attempts,
        });
    }
    Ok(out)
}

/// Attack success against one profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspCell {
    pub detector: String,
    pub undetected: usize,
    pub total: usize,
    /// `None` for an empty instance set.
    pub asp: Option<f64>,
}

/// Percentage of instances whose trigger each profile fails to cover.
pub fn evaluate_asp(instances: &[crate::insertion::HtInstance], profiles: &[&DetectorProfile]) -> Vec<AspCell> {
    profiles
        .iter()
        .map(|p| {
            let undetected = instances
                .iter()
                .filter(|ht| !p.contains(QuinTrigger::from_mask(ht.trigger_mask())))
                .count();
            let total = instances.len();
            AspCell {
                detector: p.detector.clone(),
                undetected,
                total,
                asp: (total > 0).then(|| 100.0 * undetected as f64 / total as f64),
            }
        })
        .collect()
}

/// One row per training detector, one column per evaluation detector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AspTable {
    pub columns: Vec<String>,
    pub rows: Vec<AspRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspRow {
    pub trained_on: String,
    pub note: String,
    pub cells: Vec<Option<f64>>,
}

impl AspTable {
    pub fn new(columns: Vec<String>) -> Self {
        AspTable { columns, rows: Vec::new() }
    }

    /// Cells are matched to columns by detector name; missing ones are N/A.
    pub fn push(&mut self, trained_on: &str, note: &str, cells: &[AspCell]) {
        let row = self
            .columns
            .iter()
            .map(|c| cells.iter().find(|x| &x.detector == c).and_then(|x| x.asp))
            .collect();
        self.rows.push(AspRow {
            trained_on: trained_on.to_string(),
            note: note.to_string(),
            cells: row,
        });
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("trained_on,note,{}\n", self.columns.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r
                .cells
                .iter()
                .map(|c| c.map_or("N/A".to_string(), |v| format!("{v:.2}")))
                .collect();
            out.push_str(&format!("{},{},{}\n", r.trained_on, r.note, cells.join(",")));
        }
        out
    }
}
