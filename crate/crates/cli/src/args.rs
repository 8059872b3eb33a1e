use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cv2x", version, about = "C-V2X Mode 4 AoI/energy simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run episodes under a fixed policy and record per-episode metrics.
    Simulate(SimulateArgs),
    /// Train an MPDQN agent.
    Train(TrainArgs),
    /// Compare policies on the same evaluation seeds.
    Evaluate(EvaluateArgs),
    /// Simulate once per value of one config axis.
    Sweep(SweepArgs),
    /// Compare the closed-form collision probability with resource draws.
    ValidateCollision(ValidateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario file (`key=value` lines); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the number of episodes.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Overrides the number of slots per episode.
    #[arg(long)]
    pub slots: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Random,
    Ga,
    Mpdqn,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Ga => "ga",
            Self::Mpdqn => "mpdqn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "random")]
    pub policy: PolicyKind,
    /// MPDQN checkpoint, required with `--policy mpdqn`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated run seeds; defaults to the scenario seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated policies to compare.
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "mpdqn,ga,random"
    )]
    pub policies: Vec<PolicyKind>,
    /// MPDQN checkpoint; when omitted an agent is trained first.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated evaluation seeds.
    #[arg(long, value_delimiter = ',', default_value = "1001,1002,1003")]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Axis {
    NVehicles,
    MessageSizeBits,
    Omega1,
    RriFixed,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Self::NVehicles => "n_vehicles",
            Self::MessageSizeBits => "message_size_bits",
            Self::Omega1 => "omega1",
            Self::RriFixed => "rri_fixed",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long, value_enum, default_value = "random")]
    pub policy: PolicyKind,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Overrides successive interference cancellation at the receivers.
    #[arg(long, value_enum)]
    pub noma: Option<Toggle>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "nv", value_delimiter = ',', default_value = "1,5,10,20")]
    pub n_vehicles: Vec<u64>,
    #[arg(long = "rri", value_delimiter = ',', default_value = "20,50,100")]
    pub rris: Vec<u64>,
    #[arg(long = "prk", value_delimiter = ',', default_value = "0,0.8,1")]
    pub p_rk: Vec<f64>,
    /// Per-slot probability that a vehicle reaches a reselection.
    #[arg(long, default_value_t = 0.009)]
    pub pi: f64,
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
}
