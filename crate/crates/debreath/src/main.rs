use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use debreath::cli::{
    cmd_eval, cmd_infer, cmd_stft_dump, cmd_synth, cmd_train, SplitSelection,
};
use debreath::config::RunConfig;
use debreath::error::Result;

#[derive(Parser)]
#[command(
    name = "debreath",
    version,
    about = "Breath-sound removal for studio vocal recordings"
)]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed (overrides the config file; see also train.seed / synth.seed).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Single key override, repeatable. Highest precedence.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired corpus with manifest and labels.
    Synth {
        /// Output directory for WAV pairs, manifest.csv and labels.csv.
        out_dir: PathBuf,
        /// Number of pairs to generate.
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Train a model on a manifest's train/validation splits.
    Train {
        manifest: PathBuf,
        model_out: PathBuf,
        /// History CSV path (default: model path with .history.csv).
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Remove breath sounds from a WAV file.
    Infer {
        model: PathBuf,
        input_wav: PathBuf,
        output_wav: PathBuf,
    },
    /// Score a model on one split of a manifest.
    Eval {
        model: PathBuf,
        manifest: PathBuf,
        /// Report CSV output path.
        #[arg(long, default_value = "eval_report.csv")]
        report: PathBuf,
        /// Split to evaluate: train, validation, test or all.
        #[arg(long, default_value = "test")]
        split: String,
        /// Bypass the model with an all-ones mask (debug).
        #[arg(long)]
        identity_mask: bool,
    },
    /// Write a magnitude spectrogram as CSV for plotting.
    StftDump {
        input_wav: PathBuf,
        output_csv: PathBuf,
    },
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &cli.config {
        config.apply_file(path)?;
    }
    if let Some(seed) = cli.seed {
        config.set("seed", &seed.to_string())?;
    }
    for assignment in &cli.sets {
        config.apply_set_flag(assignment)?;
    }
    config.finalize()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let config = build_config(&cli)?;
    match &cli.command {
        Command::Synth { out_dir, count } => {
            cmd_synth(&config, out_dir, *count)?;
        }
        Command::Train {
            manifest,
            model_out,
            history,
        } => cmd_train(&config, manifest, model_out, history.as_deref())?,
        Command::Infer {
            model,
            input_wav,
            output_wav,
        } => cmd_infer(&config, model, input_wav, output_wav)?,
        Command::Eval {
            model,
            manifest,
            report,
            split,
            identity_mask,
        } => {
            let selection = SplitSelection::parse(split)?;
            cmd_eval(&config, model, manifest, report, selection, *identity_mask)?;
        }
        Command::StftDump {
            input_wav,
            output_csv,
        } => cmd_stft_dump(&config, input_wav, output_csv)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
