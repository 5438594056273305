//! `gaussphys` command-line tool.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 simulation
//! abort.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gaussphys::mpm::SimProfile;

#[derive(Parser)]
#[command(name = "gaussphys", version, about = "MPM + Gaussian splatting simulation and preference-based parameter identification")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "GAUSSPHYS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ProfileArg {
    Paper,
    Desk,
}

impl From<ProfileArg> for SimProfile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Paper => SimProfile::Paper,
            ProfileArg::Desk => SimProfile::Desk,
        }
    }
}

/// Simulation timing: a named profile plus optional overrides.
#[derive(Args, Clone, Debug)]
pub struct SimArgs {
    #[arg(long, value_enum, default_value = "paper")]
    pub profile: ProfileArg,
    /// Number of frames.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Grid cells per axis.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Sub-steps per frame.
    #[arg(long)]
    pub substeps: Option<usize>,
    /// Sub-step size in seconds.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Resolve the configuration and write the manifest without running.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scene: rollout binary, per-frame renders and a manifest.
    Simulate {
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
        /// Overrides the procedural placement seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Skip PNG rendering.
        #[arg(long)]
        no_render: bool,
    },
    /// Project a rollout's tracked particles through the scene camera.
    Track {
        rollout: PathBuf,
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank candidate tracks by distance to reference tracks.
    Rank {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long = "candidate", required = true)]
        candidates: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Identify physical parameters by preference optimization.
    Identify {
        scene: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Initial policy (defaults to one centered on the scene material).
        #[arg(long)]
        policy: Option<PathBuf>,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Fit a policy to supervision parameters by NLL minimization.
    Pretrain {
        scene: PathBuf,
        #[arg(long)]
        supervision: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        /// Image compared against the rest-state render as a diagnostic.
        #[arg(long)]
        reference_image: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Simulate {
            scene,
            out,
            sim,
            seed,
            no_render,
        } => commands::simulate(&scene, &out, &sim, seed, !no_render),
        Command::Track {
            rollout,
            scene,
            out,
        } => commands::track(&rollout, &scene, &out),
        Command::Rank {
            reference,
            candidates,
            out,
        } => commands::rank(&reference, &candidates, &out),
        Command::Identify {
            scene,
            reference,
            config,
            out,
            policy,
            sim,
        } => commands::identify(&scene, &reference, &config, &out, policy.as_deref(), &sim),
        Command::Pretrain {
            scene,
            supervision,
            out,
            policy,
            steps,
            lr,
            reference_image,
        } => commands::pretrain(
            &scene,
            &supervision,
            &out,
            policy.as_deref(),
            steps,
            lr,
            reference_image.as_deref(),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
