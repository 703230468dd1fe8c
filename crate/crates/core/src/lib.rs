//! Hardware Trojan insertion toolkit: netlist handling, bit-parallel
//! simulation, candidate pruning, justification, detector coverage,
//! Trojan insertion and a PPO agent that searches for hard triggers.

pub mod detectors;
pub mod insertion;
pub mod justify;
pub mod netlist;
pub mod pruning;
pub mod rl;
pub mod sim;

pub use detectors::{DetectorProfile, QuinTrigger, TestVectorSet};
pub use insertion::{HtInstance, InfectedNetlist};
pub use justify::{Assignment, Implication, Justification};
pub use netlist::{CircuitGraph, GateKind, NetId};
pub use pruning::{Candidate, CandidateSet, Origin};
pub use rl::{Env, EnvConfig, PolicyParams, PpoConfig, TrainLog};
pub use sim::{NetStats, SignalStats, SimVector};
