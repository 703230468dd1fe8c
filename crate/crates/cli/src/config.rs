//! Run configuration: one TOML or JSON file, with command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use htins_core::detectors::TRIGGER_ARITY;
use htins_core::justify::DEFAULT_TIMEOUT;
use htins_core::pruning::{DEFAULT_JSI_TH, DEFAULT_M};
use htins_core::sim::{DEFAULT_SIM_VECTORS, DEFAULT_TH_SW};
use htins_core::PpoConfig;

/// Name of the detector formed by merging every available detector.
pub const ALL_DETECTOR: &str = "ALL";

/// One circuit path or several; only `analyze` accepts several.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Circuits {
    One(PathBuf),
    Many(Vec<PathBuf>),
}

impl Circuits {
    pub fn paths(&self) -> Vec<&Path> {
        match self {
            Circuits::One(p) => vec![p.as_path()],
            Circuits::Many(v) => v.iter().map(PathBuf::as_path).collect(),
        }
    }
}

/// Named seeds; every random draw in a run comes from one of these.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub sim: u64,
    pub prune: u64,
    pub diversify: u64,
    pub env: u64,
    pub train: u64,
    pub generate: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Seeds {
            sim: seed,
            prune: seed,
            diversify: seed,
            env: seed,
            train: seed,
            generate: seed,
        }
    }
}

/// Reward and episode settings; the seed, arity and solver budget come
/// from the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub episode_len: usize,
    pub r_negative: f64,
    pub r_positive: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        let d = htins_core::EnvConfig::default();
        EnvSection {
            episode_len: d.episode_len,
            r_negative: d.r_negative,
            r_positive: d.r_positive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub circuit: Circuits,
    /// Output directory; not part of the config hash.
    pub out: PathBuf,
    pub n_sim_vectors: usize,
    pub th_sw: f64,
    pub m_size: usize,
    pub jsi_th: f64,
    /// Diversify the candidate set right after pruning.
    pub diversify: bool,
    pub arity: usize,
    /// Justification budget per query.
    pub timeout_ms: u64,
    /// Detector name to `random:<count>:<seed>` or a vector file path.
    pub detectors: BTreeMap<String, String>,
    /// Detector the agent trains against; a name above or `ALL`.
    pub train_detector: String,
    pub timesteps: usize,
    /// Diversify-and-restart rounds allowed when training stalls.
    pub max_restarts: usize,
    pub n_instances: usize,
    pub max_attempts: usize,
    /// Leave the training detector out of the ASP evaluation.
    pub hold_out: bool,
    pub seeds: Seeds,
    pub env: EnvSection,
    pub ppo: PpoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            circuit: Circuits::Many(Vec::new()),
            out: PathBuf::from("tf_out"),
            n_sim_vectors: DEFAULT_SIM_VECTORS,
            th_sw: DEFAULT_TH_SW,
            m_size: DEFAULT_M,
            jsi_th: DEFAULT_JSI_TH,
            diversify: false,
            arity: TRIGGER_ARITY,
            timeout_ms: DEFAULT_TIMEOUT.as_millis() as u64,
            detectors: BTreeMap::from([("RANDOM".to_string(), "random:10000:1".to_string())]),
            train_detector: "RANDOM".into(),
            timesteps: 300_000,
            max_restarts: 1,
            n_instances: 100,
            max_attempts: 200_000,
            hold_out: true,
            seeds: Seeds::default(),
            env: EnvSection::default(),
            ppo: PpoConfig::default(),
        }
    }
}

/// Where a detector's vectors come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DetectorSpec {
    Random { count: usize, seed: u64 },
    File(PathBuf),
}

impl DetectorSpec {
    pub fn parse(spec: &str, base: &Path) -> Result<Self> {
        if let Some(rest) = spec.strip_prefix("random:") {
            let (n, seed) = rest
                .split_once(':')
                .with_context(|| format!("detector `{spec}`: expected random:<count>:<seed>"))?;
            return Ok(DetectorSpec::Random {
                count: n.parse().with_context(|| format!("detector `{spec}`: bad count"))?,
                seed: seed.parse().with_context(|| format!("detector `{spec}`: bad seed"))?,
            });
        }
        Ok(DetectorSpec::File(resolve(base, Path::new(spec))))
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// A validated config with paths resolved against the config file.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub cfg: RunConfig,
    pub circuits: Vec<PathBuf>,
    pub out: PathBuf,
    pub detectors: Vec<(String, DetectorSpec)>,
    pub hash: String,
}

impl Loaded {
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        if let Some(s) = ov.seed {
            cfg.seeds = Seeds::all(s);
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let out = match &ov.out {
            Some(o) => o.clone(),
            None => resolve(&base, &cfg.out),
        };
        Self::from_config(cfg, base, out)
    }

    pub fn from_config(cfg: RunConfig, base: PathBuf, out: PathBuf) -> Result<Self> {
        validate(&cfg)?;
        let circuits: Vec<PathBuf> = cfg.circuit.paths().iter().map(|p| resolve(&base, p)).collect();
        for c in &circuits {
            if !c.is_file() {
                bail!("circuit file {} does not exist", c.display());
            }
        }
        let detectors = cfg
            .detectors
            .iter()
            .map(|(n, s)| Ok((n.clone(), DetectorSpec::parse(s, &base)?)))
            .collect::<Result<Vec<_>>>()?;
        let hash = config_hash(&cfg, &circuits)?;
        Ok(Loaded {
            cfg,
            circuits,
            out,
            detectors,
            hash,
        })
    }

    /// The single circuit every command but `analyze` works on.
    pub fn circuit(&self) -> Result<&Path> {
        match self.circuits.as_slice() {
            [one] => Ok(one),
            _ => bail!("this command needs exactly one circuit, config lists {}", self.circuits.len()),
        }
    }

    pub fn env_config(&self) -> htins_core::EnvConfig {
        htins_core::EnvConfig {
            episode_len: self.cfg.env.episode_len,
            r_negative: self.cfg.env.r_negative,
            r_positive: self.cfg.env.r_positive,
            arity: self.cfg.arity,
            seed: self.cfg.seeds.env,
            timeout_ms: self.cfg.timeout_ms,
        }
    }
}

fn validate(cfg: &RunConfig) -> Result<()> {
    if cfg.circuit.paths().is_empty() {
        bail!("config names no circuit");
    }
    if !(0.0..=0.5).contains(&cfg.th_sw) {
        bail!("th_sw {} outside [0, 0.5]", cfg.th_sw);
    }
    if !(cfg.jsi_th > 0.0 && cfg.jsi_th <= 1.0) {
        bail!("jsi_th {} outside (0, 1]", cfg.jsi_th);
    }
    if cfg.n_sim_vectors == 0 {
        bail!("n_sim_vectors must be at least 1");
    }
    if !(2..=8).contains(&cfg.arity) {
        bail!("arity {} not in 2..=8", cfg.arity);
    }
    if cfg.m_size < cfg.arity || cfg.m_size > 64 {
        bail!("m_size {} must lie in {}..=64", cfg.m_size, cfg.arity);
    }
    if cfg.timeout_ms == 0 {
        bail!("timeout_ms must be positive");
    }
    if cfg.detectors.contains_key(ALL_DETECTOR) {
        bail!("detector name `{ALL_DETECTOR}` is reserved");
    }
    if cfg.train_detector != ALL_DETECTOR && !cfg.detectors.contains_key(&cfg.train_detector) {
        bail!("train_detector `{}` is not among the detectors", cfg.train_detector);
    }
    if cfg.n_instances == 0 {
        bail!("n_instances must be at least 1");
    }
    cfg.ppo.validate()?;
    let env = htins_core::EnvConfig {
        episode_len: cfg.env.episode_len,
        r_negative: cfg.env.r_negative,
        r_positive: cfg.env.r_positive,
        arity: cfg.arity,
        ..Default::default()
    };
    env.validate()?;
    if cfg.timesteps < cfg.env.episode_len {
        bail!("timesteps {} shorter than one episode", cfg.timesteps);
    }
    Ok(())
}

/// SHA-256 over the config (output directory blanked) and the circuit
/// texts, as 16 hex digits.
fn config_hash(cfg: &RunConfig, circuits: &[PathBuf]) -> Result<String> {
    let mut c = cfg.clone();
    c.out = PathBuf::new();
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&c)?);
    for p in circuits {
        h.update(std::fs::read(p).with_context(|| format!("reading {}", p.display()))?);
    }
    Ok(h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detector_specs_parse() {
        let base = Path::new("/x");
        assert_eq!(
            DetectorSpec::parse("random:100:7", base).unwrap(),
            DetectorSpec::Random { count: 100, seed: 7 }
        );
        assert_eq!(
            DetectorSpec::parse("v/d1.txt", base).unwrap(),
            DetectorSpec::File(PathBuf::from("/x/v/d1.txt"))
        );
        assert!(DetectorSpec::parse("random:ten:7", base).is_err());
        assert!(DetectorSpec::parse("random:10", base).is_err());
    }

    #[test]
    fn minimal_toml_takes_defaults() {
        let cfg: RunConfig = toml::from_str("circuit = \"c17.bench\"\n[ppo]\nn_steps = 64\n").unwrap();
        assert_eq!(cfg.m_size, 20);
        assert_eq!(cfg.ppo.n_steps, 64);
        assert_eq!(cfg.ppo.epochs, 10);
        assert!(toml::from_str::<RunConfig>("circuit = \"a\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn bad_thresholds_are_rejected() {
        let mut cfg = RunConfig {
            circuit: Circuits::One("x".into()),
            ..Default::default()
        };
        cfg.jsi_th = 0.0;
        assert!(validate(&cfg).is_err());
        cfg.jsi_th = 0.8;
        cfg.th_sw = 0.7;
        assert!(validate(&cfg).is_err());
        cfg.th_sw = 0.1;
        cfg.train_detector = "D9".into();
        assert!(validate(&cfg).is_err());
    }
}
