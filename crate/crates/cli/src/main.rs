//! `advcap` command-line driver.
//!
//! Exit codes: 0 success, 2 usage error, 3 gate violation, 4 runtime
//! failure.

use advcap_cli::commands::{self, AttackParams, BaselineParams, GenDataParams, TrainParams};
use advcap_cli::exit;
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "advcap",
    about = "Targeted adversarial examples against a toy image captioner",
    version
)]
struct Cli {
    /// JSON config file with per-command sections; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic scene dataset (PPM images + manifest).
    GenData(GenDataArgs),
    /// Train a captioner checkpoint on a generated dataset.
    Train(TrainArgs),
    /// Run a batch of targeted caption/keyword attacks.
    Attack(AttackArgs),
    /// Classifier-only baseline attacks (I-FGSM / margin-loss L2).
    Baseline(BaselineArgs),
    /// Transfer adversarial examples from model A to model B.
    Transfer(TransferArgs),
    /// Score a predictions file against a references file.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory from gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Model variant: plain | attention.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    /// Checkpoint path.
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// caption-logits | caption-logprob | keyword-logits | keyword-logprob.
    #[arg(long)]
    mode: Option<String>,
    /// Target source: from-other-images | self | <json file>.
    #[arg(long)]
    targets: Option<String>,
    /// Number of images to attack.
    #[arg(long)]
    n: Option<usize>,
    /// Starting loss weight c.
    #[arg(long)]
    c0: Option<f64>,
    /// Confidence margin epsilon.
    #[arg(long)]
    eps: Option<f64>,
    /// ADAM iterations per run.
    #[arg(long)]
    iters: Option<usize>,
    /// Total attack runs in the c search.
    #[arg(long)]
    binary_steps: Option<usize>,
    /// Keyword count M for keyword modes.
    #[arg(long)]
    keywords: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the batch.
    #[arg(long)]
    jobs: Option<usize>,
    /// Keep per-iteration traces in the run records.
    #[arg(long)]
    record_trace: bool,
    /// Debug: attack a checkpoint that failed the training gate.
    #[arg(long)]
    allow_ungated: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// ifgsm | cw.
    #[arg(long)]
    attack: Option<String>,
    #[arg(long)]
    eps_inf: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Loss weight C of the margin-loss baseline.
    #[arg(long = "C")]
    big_c: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Skip the captioner 1-keyword comparison runs.
    #[arg(long)]
    no_keyword_comparison: bool,
    #[arg(long)]
    allow_ungated: bool,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long)]
    model_a: PathBuf,
    #[arg(long)]
    model_b: PathBuf,
    /// Directory of run_*.json records from `attack`.
    #[arg(long)]
    adv_dir: PathBuf,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Predictions, one caption per line.
    #[arg(long)]
    pred: PathBuf,
    /// References, one caption per line.
    #[arg(long)]
    refs: PathBuf,
    /// Output JSON path (a CSV lands next to it).
    #[arg(long)]
    out: PathBuf,
}

/// Loads a per-command section from the config file, if any.
fn config_section<P: DeserializeOwned + Default>(
    config: &Option<PathBuf>,
    section: &str,
) -> Result<P> {
    let Some(path) = config else {
        return Ok(P::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    match value.get(section) {
        Some(v) => Ok(serde_json::from_value(v.clone())?),
        None => Ok(P::default()),
    }
}

macro_rules! override_if_set {
    ($params:expr, $($field:ident <- $flag:expr),+ $(,)?) => {
        $(if let Some(v) = $flag { $params.$field = v; })+
    };
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let mut p: GenDataParams = config_section(&cli.config, "gen-data")?;
            override_if_set!(p, seed <- a.seed, n_train <- a.n_train, n_val <- a.n_val);
            commands::cmd_gen_data(&p, &a.out)
        }
        Command::Train(a) => {
            let mut p: TrainParams = config_section(&cli.config, "train")?;
            override_if_set!(p, variant <- a.variant, epochs <- a.epochs, lr <- a.lr, seed <- a.seed);
            commands::cmd_train(&p, &a.data, &a.out)
        }
        Command::Attack(a) => {
            let mut p: AttackParams = config_section(&cli.config, "attack")?;
            if let Some(mode) = a.mode {
                p.mode = serde_json::from_value(serde_json::Value::String(mode)).context(
                    "mode must be caption-logits|caption-logprob|keyword-logits|keyword-logprob",
                )?;
            }
            override_if_set!(
                p,
                targets <- a.targets,
                n <- a.n,
                c0 <- a.c0,
                eps <- a.eps,
                iters <- a.iters,
                binary_steps <- a.binary_steps,
                keywords <- a.keywords,
                seed <- a.seed,
                jobs <- a.jobs,
            );
            p.record_trace |= a.record_trace;
            p.allow_ungated |= a.allow_ungated;
            commands::cmd_attack(&p, &a.model, &a.data, &a.out)
        }
        Command::Baseline(a) => {
            let mut p: BaselineParams = config_section(&cli.config, "baseline")?;
            override_if_set!(
                p,
                attack <- a.attack,
                eps_inf <- a.eps_inf,
                kappa <- a.kappa,
                big_c <- a.big_c,
                n <- a.n,
                seed <- a.seed,
            );
            p.allow_ungated |= a.allow_ungated;
            if a.no_keyword_comparison {
                p.with_keyword_comparison = false;
            }
            commands::cmd_baseline(&p, &a.model, &a.data, &a.out)
        }
        Command::Transfer(a) => commands::cmd_transfer(&a.model_a, &a.model_b, &a.adv_dir, &a.out),
        Command::Eval(a) => commands::cmd_eval(&a.pred, &a.refs, &a.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = if err.downcast_ref::<commands::GateRefused>().is_some() {
                exit::GATE
            } else {
                exit::RUNTIME
            };
            ExitCode::from(code as u8)
        }
    }
}
