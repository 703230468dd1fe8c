//! `tf`: analyze, prune, qcov, train, generate and evaluate from one config.
//!
//! Exit codes: 0 success, 1 user or config error, 2 internal invariant
//! violation. Verbosity comes from `TF_LOG` (default `warn`).

mod artifacts;
mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use artifacts::Invariant;
use config::{Loaded, Overrides};
use htins_core::rl::RlError;
use pipeline::Pipeline;

#[derive(Parser, Debug)]
#[command(name = "tf", version, about = "Hardware Trojan insertion toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML or JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override every named seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: `out` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Per-net statistics and the JSI of the rare-net set.
    Analyze(Common),
    /// Build the trigger-candidate set.
    Prune {
        #[command(flatten)]
        common: Common,
        /// Break up candidates with overlapping input cones.
        #[arg(long)]
        diversify: bool,
    },
    /// Q-coverage of every configured detector.
    Qcov(Common),
    /// Train the agent against the configured detector.
    Train(Common),
    /// Sample Trojans from the trained agent.
    Generate(Common),
    /// Attack success rate of the generated Trojans.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Also score against the detector the agent trained on.
        #[arg(long)]
        include_trained: bool,
    },
}

impl Cmd {
    fn common(&self) -> &Common {
        match self {
            Cmd::Analyze(c) | Cmd::Qcov(c) | Cmd::Train(c) | Cmd::Generate(c) => c,
            Cmd::Prune { common, .. } | Cmd::Evaluate { common, .. } => common,
        }
    }
}

fn run(cmd: &Cmd) -> anyhow::Result<()> {
    let common = cmd.common();
    if let Some(n) = common.workers {
        anyhow::ensure!(n >= 1, "--workers must be at least 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let ov = Overrides {
        seed: common.seed,
        out: common.out.clone(),
    };
    let loaded = Loaded::load(&common.config, &ov)?;
    std::fs::create_dir_all(&loaded.out)?;
    log::info!("config hash {}, output in {}", loaded.hash, loaded.out.display());
    match cmd {
        Cmd::Analyze(_) => {
            println!("rank,circuit,t_count,jsi_t");
            for (k, (c, n, j)) in pipeline::cmd_analyze(&loaded)?.iter().enumerate() {
                println!("{},{c},{n},{j:.4}", k + 1);
            }
        }
        Cmd::Prune { diversify, .. } => {
            let r = Pipeline::new(&loaded)?.cmd_prune(*diversify)?;
            println!(
                "{}: |T| = {}, |F| = {}, |S| = {}, JSI(T) = {:.3}, JSI(M) = {:.3}{}",
                r.circuit,
                r.t_count,
                r.f_pruned_count,
                r.s_pruned_count,
                r.jsi_t,
                r.jsi_before,
                r.jsi_after.map_or(String::new(), |j| format!(" -> {j:.3} ({} replaced)", r.replaced.len()))
            );
        }
        Cmd::Qcov(_) => print!("{}", Pipeline::new(&loaded)?.cmd_qcov()?),
        Cmd::Train(_) => {
            let (_, _, s) = Pipeline::new(&loaded)?.cmd_train()?;
            println!(
                "{} vs {}: {} steps, {} episodes, decile means {} -> {}, restarts {}, stall {:?}",
                s.circuit,
                s.detector,
                s.timesteps,
                s.episodes,
                s.first_decile_mean.map_or("n/a".into(), |v| format!("{v:.2}")),
                s.final_decile_mean.map_or("n/a".into(), |v| format!("{v:.2}")),
                s.restarts,
                s.stall
            );
        }
        Cmd::Generate(_) => {
            let made = Pipeline::new(&loaded)?.cmd_generate()?;
            let propagating = made.iter().filter(|s| s.propagates == Some(true)).count();
            println!("{} instances written, {propagating} propagate on their trigger vector", made.len());
        }
        Cmd::Evaluate { include_trained, .. } => {
            let hold_out = loaded.cfg.hold_out && !include_trained;
            print!("{}", Pipeline::new(&loaded)?.cmd_evaluate(hold_out)?);
        }
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let internal = e.chain().any(|c| {
        c.is::<Invariant>() || matches!(c.downcast_ref::<RlError>(), Some(RlError::DivergedPolicy { .. }))
    });
    if internal {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TF_LOG", "warn")).init();
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| run(&cli.cmd)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(2),
    }
}
