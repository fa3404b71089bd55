//! `evfl`: key generation, federated training runs, gradient-inversion
//! attacks and model evaluation from the command line.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 run aborted.

mod attack;
mod common;
mod eval;
mod keygen;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "evfl", version, about = "Federated learning with encrypted patch and position embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a secret key file and print its key id.
    Keygen(KeygenArgs),
    /// Write the round-0 global model, encrypted when the run is in encrypted mode.
    InitModel(InitModelArgs),
    /// Run federated training.
    Train(TrainArgs),
    /// Reconstruct a training image from its single-sample gradients.
    Attack(AttackArgs),
    /// Print the test accuracy of a model file.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct KeygenArgs {
    /// Decimal u64 or 64 hex digits (256 bits).
    #[arg(long)]
    pub seed: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Model shape to size the key for: a model table or a run config with a `[model]` table.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
}

#[derive(Args)]
pub struct InitModelArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub key: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Plain,
    Encrypted,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum TransportArg {
    Loopback,
    Socket,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Role {
    /// Server and all clients in this process.
    All,
    Server,
    Client,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub transport: Option<TransportArg>,
    #[arg(long)]
    pub key: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Role::All)]
    pub role: Role,
    /// Required with `--role client`.
    #[arg(long)]
    pub client_id: Option<u32>,
    /// Round-0 model from `init-model`; required for an encrypted server.
    #[arg(long)]
    pub initial_model: Option<PathBuf>,
    /// Listen address (server) or server address (client).
    #[arg(long)]
    pub addr: Option<String>,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["gradients_from_run", "live"])))]
pub struct AttackArgs {
    /// Attack gradients computed on the model in this FVW1 file.
    #[arg(long)]
    pub gradients_from_run: Option<PathBuf>,
    /// Attack gradients of the run config's initial model.
    #[arg(long)]
    pub live: bool,
    /// Run config naming the data; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Index into the training set.
    #[arg(long, default_value_t = 0)]
    pub sample_index: usize,
    /// Secret key; without it an ephemeral key is drawn from the run seed.
    #[arg(long)]
    pub key: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// A run config (its test set is used) or CIFAR-10 binary batch files.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Decrypts an encrypted model before evaluating.
    #[arg(long)]
    pub key: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Keygen(a) => keygen::run(&a),
        Command::InitModel(a) => keygen::init_model(&a),
        Command::Train(a) => train::run(&a),
        Command::Attack(a) => attack::run(&a),
        Command::Eval(a) => eval::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
