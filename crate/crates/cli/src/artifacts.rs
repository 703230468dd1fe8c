//! Output files. Every artifact carries the config hash and seeds that
//! produced it, so a later command can tell whether it is reusable.

use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Loaded, Seeds};

/// A broken internal invariant; exits with code 2.
#[derive(Debug)]
pub struct Invariant(pub String);

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "internal invariant violated: {}", self.0)
    }
}

impl std::error::Error for Invariant {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub config_hash: String,
    pub seeds: Seeds,
    /// Fingerprint of the candidate set the artifact depends on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<String>,
}

impl Provenance {
    pub fn new(run: &Loaded) -> Self {
        Provenance {
            tool: concat!("tf ", env!("CARGO_PKG_VERSION")).into(),
            config_hash: run.hash.clone(),
            seeds: run.cfg.seeds.clone(),
            candidates: None,
        }
    }

    pub fn with_candidates(mut self, fp: String) -> Self {
        self.candidates = Some(fp);
        self
    }

    /// One-line form for CSV and bench comment headers.
    pub fn comment(&self) -> String {
        let s = &self.seeds;
        let mut line = format!(
            "# {} config_hash={} seeds=sim:{},prune:{},diversify:{},env:{},train:{},generate:{}",
            self.tool, self.config_hash, s.sim, s.prune, s.diversify, s.env, s.train, s.generate
        );
        if let Some(c) = &self.candidates {
            line.push_str(&format!(" candidates={c}"));
        }
        line.push('\n');
        line
    }
}

/// Short hash of the member nets, in order.
pub fn fingerprint(names: &[String]) -> String {
    let mut h = Sha256::new();
    for n in names {
        h.update(n.as_bytes());
        h.update([0]);
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// JSON artifact: provenance plus a payload.
#[derive(Debug, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub body: T,
}

pub fn write_json<T: Serialize>(path: &Path, provenance: &Provenance, body: &T) -> Result<()> {
    let a = Artifact {
        provenance: provenance.clone(),
        body,
    };
    write_text(path, &(serde_json::to_string_pretty(&a)? + "\n"))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// CSV with a provenance comment line on top.
pub fn write_csv(path: &Path, provenance: &Provenance, csv: &str) -> Result<()> {
    write_text(path, &(provenance.comment() + csv))
}

/// Load an artifact if it exists and was made under the same config hash
/// (and, when given, the same candidate set). Anything else means stale.
pub fn read_fresh<T: DeserializeOwned>(path: &Path, run: &Loaded, candidates: Option<&str>) -> Option<T> {
    let text = std::fs::read_to_string(path).ok()?;
    let a: Artifact<T> = match serde_json::from_str(&text) {
        Ok(a) => a,
        Err(e) => {
            log::warn!("ignoring unreadable {}: {e}", path.display());
            return None;
        }
    };
    if a.provenance.config_hash != run.hash {
        log::info!("{} is from another config, recomputing", path.display());
        return None;
    }
    if candidates.is_some() && a.provenance.candidates.as_deref() != candidates {
        log::info!("{} is from another candidate set, recomputing", path.display());
        return None;
    }
    log::info!("reusing {}", path.display());
    Some(a.body)
}
