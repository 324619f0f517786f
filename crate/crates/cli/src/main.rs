use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deepstat::pipeline::{self, Layout, PipelineConfig, Stage};
use deepstat::synthetic::SyntheticSpec;
use deepstat::{Error, Result};

/// Two-level text anomaly detection: GAN discriminator statistics scored by an LSTM autoencoder.
#[derive(Parser)]
#[command(name = "deepstat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run directory; overrides `out_dir` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the semi-supervised GAN on the baseline corpus.
    TrainGan(StageArgs),
    /// Capture and standardize discriminator statistics for every split.
    ExtractStats(StageArgs),
    /// Train the autoencoder on baseline training statistics.
    TrainAe(StageArgs),
    /// Learn the reconstruction-error threshold on baseline validation statistics.
    Calibrate(StageArgs),
    /// Score documents (one per line) and print one JSON verdict per line.
    Detect {
        #[command(flatten)]
        stage: StageArgs,
        /// Input file; standard input when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Compute metrics on baseline test and novel statistics.
    Evaluate(StageArgs),
    /// Run train-gan, extract-stats, train-ae, calibrate and evaluate in order.
    All(StageArgs),
    /// Write a synthetic baseline/novel corpus pair and a matching configuration.
    Synth {
        /// Directory to create the files in.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SyntheticSpec::default().seed)]
        seed: u64,
    },
}

fn load_config(args: &StageArgs) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn run(command: Command) -> Result<()> {
    let stage = |s: Stage, args: &StageArgs| pipeline::run_stage(s, &load_config(args)?);
    match command {
        Command::TrainGan(a) => stage(Stage::TrainGan, &a),
        Command::ExtractStats(a) => stage(Stage::ExtractStats, &a),
        Command::TrainAe(a) => stage(Stage::TrainAe, &a),
        Command::Calibrate(a) => stage(Stage::Calibrate, &a),
        Command::Evaluate(a) => {
            let config = load_config(&a)?;
            let (summary, _) = pipeline::evaluate_stage(&config, &Layout::new(&config.out_dir))?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::All(a) => {
            let config = load_config(&a)?;
            pipeline::run_all(&config)?;
            let summary = std::fs::read_to_string(Layout::new(&config.out_dir).eval_dir().join("summary.json"))
                .map_err(|e| Error::Io { path: config.out_dir.clone(), source: e })?;
            print!("{summary}");
            Ok(())
        }
        Command::Detect { stage, input } => {
            let config = load_config(&stage)?;
            let layout = Layout::new(&config.out_dir);
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            let failures = match input {
                Some(path) => {
                    let file = std::fs::File::open(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                    pipeline::detect_stage(&layout, &mut BufReader::new(file), &mut out)?
                }
                None => pipeline::detect_stage(&layout, &mut std::io::stdin().lock(), &mut out)?,
            };
            out.flush().ok();
            if failures > 0 {
                return Err(Error::InvalidInput(format!("{failures} document(s) could not be scored")));
            }
            Ok(())
        }
        Command::Synth { out, seed } => {
            let spec = SyntheticSpec { seed, ..SyntheticSpec::default() };
            let config = deepstat::synthetic::write_demo(&out, &spec)?;
            println!("{}", config.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
