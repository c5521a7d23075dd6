use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use g2g_cli::{CliError, Pipeline, Preset, RunConfig};

#[derive(Parser)]
#[command(name = "g2g", version, about = "Blind denoiser trained from noisy images only")]
struct Cli {
    /// JSON config overlaid on the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Default: the config file's preset, else `paper`.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Work directory holding every artifact.
    #[arg(long, global = true)]
    work: Option<PathBuf>,
    /// Rerun stages whose outputs are already current.
    #[arg(long, global = true)]
    force: bool,
    /// Print the resolved config and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the noisy corpus (builtin toy images unless --clean-dir).
    Synthesize {
        /// Noise spec, e.g. gauss:25, mixA:30, corr:25:k=16:eta=0.7.
        #[arg(long)]
        noise: Option<String>,
        #[arg(long)]
        clean_dir: Option<PathBuf>,
    },
    /// Cut smooth patches from the noisy images and remove their means.
    Extract,
    TrainWgan,
    /// Train on generated pairs, then run the refinement rounds.
    TrainDenoiser,
    Denoise {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    Evaluate {
        #[arg(long)]
        clean: Option<PathBuf>,
        #[arg(long)]
        denoised: Option<PathBuf>,
    },
    /// Every stage in order.
    Run,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), cli.preset)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.work {
        cfg.paths.work_dir = w;
    }
    if let Command::Synthesize { noise, clean_dir } = &cli.cmd {
        if let Some(n) = noise {
            cfg.data.noise = n.clone();
        }
        if let Some(d) = clean_dir {
            cfg.paths.clean_dir = Some(d.clone());
        }
    }
    cfg.validate()?;
    if cli.print_config {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    let mut p = Pipeline::new(cfg);
    p.force = cli.force;
    match cli.cmd {
        Command::Synthesize { .. } => p.synthesize().map(drop),
        Command::Extract => p.extract().map(drop),
        Command::TrainWgan => p.train_wgan().map(drop),
        Command::TrainDenoiser => p.train_denoiser().map(drop),
        Command::Denoise { input, output } => p.denoise(input.as_deref(), output.as_deref()).map(drop),
        Command::Evaluate { clean, denoised } => {
            let r = p.evaluate(clean.as_deref(), denoised.as_deref())?;
            print!("{}", r.render_table());
            Ok(())
        }
        Command::Run => {
            let r = p.run_all()?;
            print!("{}", r.render_table());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
